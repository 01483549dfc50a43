//! Canonical table JSON: `{"rowTree": Node, "colTree": Node, "values": [[num|null, ...], ...]}`.

use serde::{Deserialize, Serialize};

use super::grid::{Cell, CellGrid, CellId};
use super::tree::{HeadingTree, Side};
use super::{TableError, TableState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub label: String,
    #[serde(default)]
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn leaf(label: impl Into<String>) -> Self {
        NodeSpec { label: label.into(), children: Vec::new() }
    }

    pub fn branch(label: impl Into<String>, children: Vec<NodeSpec>) -> Self {
        NodeSpec { label: label.into(), children }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TableDocument {
    pub row_tree: NodeSpec,
    pub col_tree: NodeSpec,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Parses canonical JSON bytes into a fresh state with the markers on the top-left entries.
pub fn parse_table(bytes: &[u8]) -> Result<TableState, TableError> {
    let doc = decode_document(bytes)?;
    TableState::from_document(&doc)
}

pub fn decode_document(bytes: &[u8]) -> Result<TableDocument, TableError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| TableError::Schema { path: e.path().to_string(), message: e.inner().to_string() })
}

pub fn serialize_table(state: &TableState) -> Vec<u8> {
    serde_json::to_vec(&state.to_document()).expect("table documents always serialize")
}

impl TableState {
    pub fn from_document(doc: &TableDocument) -> Result<Self, TableError> {
        let row_tree = HeadingTree::from_spec(Side::Row, &doc.row_tree)?;
        let col_tree = HeadingTree::from_spec(Side::Col, &doc.col_tree)?;
        let width = doc.values.first().map(Vec::len).unwrap_or(0);
        if let Some((row, values)) = doc.values.iter().enumerate().find(|(_, v)| v.len() != width) {
            return Err(TableError::RaggedMatrix { row, expected: width, found: values.len() });
        }
        if row_tree.leaf_count() != doc.values.len() {
            return Err(TableError::LeafCountMismatch {
                side: Side::Row,
                leaves: row_tree.leaf_count(),
                dimension: doc.values.len(),
            });
        }
        if col_tree.leaf_count() != width {
            return Err(TableError::LeafCountMismatch {
                side: Side::Col,
                leaves: col_tree.leaf_count(),
                dimension: width,
            });
        }
        let mut cells = Vec::with_capacity(doc.values.len() * width);
        for (r, row) in doc.values.iter().enumerate() {
            for (c, value) in row.iter().enumerate() {
                if let Some(v) = value {
                    if !v.is_finite() {
                        return Err(TableError::Schema {
                            path: format!("values[{r}][{c}]"),
                            message: "non-finite number".into(),
                        });
                    }
                }
                cells.push(Cell { value: *value, id: Some(CellId::original((r * width + c) as u32)), viz: None });
            }
        }
        let next = cells.len() as u32;
        TableState::new(row_tree, col_tree, CellGrid::from_cells(doc.values.len(), width, cells), next)
    }

    pub fn to_document(&self) -> TableDocument {
        TableDocument {
            row_tree: self.row_tree().to_spec(),
            col_tree: self.col_tree().to_spec(),
            values: self.grid().values(),
        }
    }
}
