//! Hierarchical table data model: heading trees, the cell grid and blocks.

mod document;
mod grid;
mod tree;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{decode_document, parse_table, serialize_table, NodeSpec, TableDocument};
pub use grid::{Cell, CellGrid, CellId, RecordId};
pub use tree::{HeadingNode, HeadingTree, LabelPath, NodeId, Selection, Side, TreeMove};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("ragged value matrix: row {row} has {found} entries, expected {expected}")]
    RaggedMatrix { row: usize, expected: usize, found: usize },
    #[error("{side} tree has {leaves} leaves but the value matrix has {dimension}")]
    LeafCountMismatch { side: Side, leaves: usize, dimension: usize },
    #[error("duplicate sibling label `{label}` in {side} tree")]
    DuplicateLabel { side: Side, label: String },
    #[error("{side} tree has leaves at different depths")]
    UnbalancedTree { side: Side },
    #[error("{side} tree has no entries")]
    EmptyTree { side: Side },
    #[error("unknown {side} node {id}")]
    UnknownNode { side: Side, id: NodeId },
    #[error("block contains only missing cells")]
    EmptyBlock,
}

/// MDP state: both heading trees plus the cell grid with its visualization mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TableState {
    row_tree: HeadingTree,
    col_tree: HeadingTree,
    grid: CellGrid,
    step: usize,
    next_cell_index: u32,
}

impl TableState {
    pub fn new(
        row_tree: HeadingTree,
        col_tree: HeadingTree,
        grid: CellGrid,
        next_cell_index: u32,
    ) -> Result<Self, TableError> {
        if row_tree.leaf_count() != grid.rows() {
            return Err(TableError::LeafCountMismatch {
                side: Side::Row,
                leaves: row_tree.leaf_count(),
                dimension: grid.rows(),
            });
        }
        if col_tree.leaf_count() != grid.cols() {
            return Err(TableError::LeafCountMismatch {
                side: Side::Col,
                leaves: col_tree.leaf_count(),
                dimension: grid.cols(),
            });
        }
        Ok(TableState { row_tree, col_tree, grid, step: 0, next_cell_index })
    }

    pub fn row_tree(&self) -> &HeadingTree {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &HeadingTree {
        &self.col_tree
    }

    pub fn tree(&self, side: Side) -> &HeadingTree {
        match side {
            Side::Row => &self.row_tree,
            Side::Col => &self.col_tree,
        }
    }

    pub(crate) fn tree_mut(&mut self, side: Side) -> &mut HeadingTree {
        match side {
            Side::Row => &mut self.row_tree,
            Side::Col => &mut self.col_tree,
        }
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub(crate) fn grid_mut(&mut self) -> &mut CellGrid {
        &mut self.grid
    }

    /// Writes `id` into the visualization mask of every cell of `block`.
    pub fn mark(&mut self, block: &Block, id: Option<RecordId>) {
        for (r, c) in block.cells() {
            self.grid.get_mut(r, c).viz = id;
        }
    }

    pub fn clear_marks(&mut self) {
        self.grid.clear_viz();
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub(crate) fn next_cell_index(&self) -> u32 {
        self.next_cell_index
    }

    pub(crate) fn into_parts(self) -> (HeadingTree, HeadingTree, CellGrid, usize, u32) {
        (self.row_tree, self.col_tree, self.grid, self.step, self.next_cell_index)
    }

    pub(crate) fn from_parts(
        row_tree: HeadingTree,
        col_tree: HeadingTree,
        grid: CellGrid,
        step: usize,
        next_cell_index: u32,
    ) -> Self {
        debug_assert_eq!(row_tree.leaf_count(), grid.rows());
        debug_assert_eq!(col_tree.leaf_count(), grid.cols());
        TableState { row_tree, col_tree, grid, step, next_cell_index }
    }

    /// Places both markers, validating the node ids.
    pub fn with_selection(mut self, row: NodeId, col: NodeId) -> Result<Self, TableError> {
        self.row_tree.select(row)?;
        self.col_tree.select(col)?;
        Ok(self)
    }

    /// Block for an arbitrary pair of entries.
    pub fn block(&self, row_entry: NodeId, col_entry: NodeId) -> Result<Block, TableError> {
        let row = self.row_tree.get(row_entry).ok_or(TableError::UnknownNode { side: Side::Row, id: row_entry })?;
        let col = self.col_tree.get(col_entry).ok_or(TableError::UnknownNode { side: Side::Col, id: col_entry })?;
        Ok(Block { row_entry, col_entry, rows: row.leaves.clone(), cols: col.leaves.clone() })
    }

    pub fn original_cell_ids(&self) -> Vec<CellId> {
        let mut ids: Vec<CellId> = self.grid.cells().iter().filter_map(|c| c.id).filter(|id| !id.derived).collect();
        ids.sort();
        ids
    }
}

/// Rectangular cell region spanned by one row entry and one column entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Block {
    pub row_entry: NodeId,
    pub col_entry: NodeId,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Block {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rows.contains(&r) && self.cols.contains(&c)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.clone().flat_map(move |r| self.cols.clone().map(move |c| (r, c)))
    }

    pub fn intersects(&self, other: &Block) -> bool {
        self.rows.start < other.rows.end
            && other.rows.start < self.rows.end
            && self.cols.start < other.cols.end
            && other.cols.start < self.cols.end
    }
}

/// Block under the two selection markers.
pub fn resolve_block(state: &TableState) -> Block {
    state
        .block(state.row_tree.selected(), state.col_tree.selected())
        .expect("selection markers always reference existing nodes")
}

/// Row-major values of a block; `None` marks a missing cell.
pub fn block_values(state: &TableState, block: &Block) -> Result<Vec<Vec<Option<f64>>>, TableError> {
    let values: Vec<Vec<Option<f64>>> =
        block.rows.clone().map(|r| block.cols.clone().map(|c| state.grid.get(r, c).value).collect()).collect();
    if values.iter().flatten().all(Option::is_none) {
        return Err(TableError::EmptyBlock);
    }
    Ok(values)
}

pub fn overlaps_mask(state: &TableState, block: &Block) -> bool {
    block.cells().any(|(r, c)| state.grid.get(r, c).viz.is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_by_two_levels() -> TableState {
        let row = NodeSpec::branch(
            "rows",
            vec![
                NodeSpec::branch("A", vec![NodeSpec::leaf("a1"), NodeSpec::leaf("a2")]),
                NodeSpec::branch(
                    "B",
                    vec![NodeSpec::leaf("b1"), NodeSpec::leaf("b2"), NodeSpec::leaf("b3"), NodeSpec::leaf("b4")],
                ),
            ],
        );
        let col = NodeSpec::branch(
            "cols",
            vec![
                NodeSpec::branch("X", vec![NodeSpec::leaf("x1"), NodeSpec::leaf("x2")]),
                NodeSpec::branch("Y", vec![NodeSpec::leaf("y1")]),
            ],
        );
        let values = (0..6).map(|r| (0..3).map(|c| Some((r * 3 + c) as f64)).collect()).collect();
        TableState::from_document(&TableDocument { row_tree: row, col_tree: col, values }).unwrap()
    }

    #[test]
    fn internal_row_entry_and_leaf_column() {
        let state = two_by_two_levels();
        let a = state.row_tree().find_path(&["A"]).unwrap();
        let x1 = state.col_tree().find_path(&["X", "x1"]).unwrap();
        let block = state.block(a, x1).unwrap();
        assert_eq!(block.shape(), (2, 1));
    }

    #[test]
    fn leaf_by_leaf_is_one_cell() {
        let state = two_by_two_levels();
        for i in 0..state.grid().rows() {
            for j in 0..state.grid().cols() {
                let block = state.block(state.row_tree().leaf_order()[i], state.col_tree().leaf_order()[j]).unwrap();
                assert_eq!(block.cells().collect::<Vec<_>>(), vec![(i, j)]);
            }
        }
    }

    #[test]
    fn internal_by_internal_matches_enumeration() {
        let state = two_by_two_levels();
        let b = state.row_tree().find_path(&["B"]).unwrap();
        let x = state.col_tree().find_path(&["X"]).unwrap();
        let block = state.block(b, x).unwrap();
        // brute force: leaves whose path starts with the entry label
        let rows: Vec<usize> = (0..state.grid().rows()).filter(|i| state.row_tree().leaf_path(*i)[0] == "B").collect();
        let cols: Vec<usize> = (0..state.grid().cols()).filter(|j| state.col_tree().leaf_path(*j)[0] == "X").collect();
        assert_eq!(rows, vec![2, 3, 4, 5]);
        assert_eq!(cols, vec![0, 1]);
        let expected: Vec<_> = rows.iter().flat_map(|r| cols.iter().map(move |c| (*r, *c))).collect();
        assert_eq!(block.cells().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn block_values_and_missing() {
        let doc = br#"{"rowTree":{"label":"r","children":[{"label":"a"},{"label":"b"}]},
            "colTree":{"label":"c","children":[{"label":"x"},{"label":"y"}]},
            "values":[[1,2],[3,null]]}"#;
        let state = parse_table(doc).unwrap();
        let all = state.block(NodeId(0), NodeId(0)).unwrap();
        assert_eq!(block_values(&state, &all).unwrap(), vec![vec![Some(1.0)]]);
        let whole = Block { row_entry: NodeId(0), col_entry: NodeId(0), rows: 0..2, cols: 0..2 };
        assert_eq!(block_values(&state, &whole).unwrap(), vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), None]]);
        let missing = state.block(NodeId(1), NodeId(1)).unwrap();
        assert_eq!(block_values(&state, &missing), Err(TableError::EmptyBlock));
    }

    #[test]
    fn corner_overlap_detected() {
        let mut state = two_by_two_levels();
        let fresh = resolve_block(&state);
        assert!(!overlaps_mask(&state, &fresh));
        state.grid_mut().get_mut(1, 1).viz = Some(RecordId(1));
        let corner = Block { row_entry: NodeId(0), col_entry: NodeId(0), rows: 1..3, cols: 1..3 };
        let cells: Vec<_> = corner.cells().filter(|&(r, c)| r == 1 && c == 1).collect();
        assert_eq!(cells.len(), 1);
        assert!(overlaps_mask(&state, &corner));
    }
}
