use serde::{Deserialize, Serialize};

use crate::insight::{InsightKind, InsightRecord};
use crate::table::{HeadingTree, RecordId, Selection, Side, TableState};
use crate::transform::{ActionMask, Stage};

pub const OBSERVATION_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeClass {
    RowParentChild,
    ColParentChild,
    RootLink,
}

impl EdgeClass {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GraphNode {
    pub label: String,
    /// `None` for the three virtual roots.
    pub side: Option<Side>,
    pub depth: usize,
    /// 2 selected in the row tree, 1 selected in the column tree, -1 otherwise.
    pub selection: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GraphEdge {
    pub parent: usize,
    pub child: usize,
    pub class: EdgeClass,
}

/// Agent-facing snapshot of the environment, also written to replay files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Observation {
    pub version: u32,
    pub step: usize,
    pub stage: Stage,
    pub mask: ActionMask,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Kind embedded over each cell, if any.
    pub viz: Vec<Vec<Option<InsightKind>>>,
    /// Original cell index, or `None` for fill and derived cells.
    pub cell_ids: Vec<Vec<Option<u32>>>,
}

fn push_tree(tree: &HeadingTree, root: usize, nodes: &mut Vec<GraphNode>, edges: &mut Vec<GraphEdge>) {
    let base = nodes.len();
    let (class, code) = match tree.side() {
        Side::Row => (EdgeClass::RowParentChild, 2),
        Side::Col => (EdgeClass::ColParentChild, 1),
    };
    for node in tree.nodes() {
        let selected = tree.selection_of(node.id) != Selection::Unselected;
        nodes.push(GraphNode {
            label: node.label.clone(),
            side: Some(tree.side()),
            depth: node.depth + 1,
            selection: if selected { code } else { -1 },
        });
        let parent = node.parent.map_or(root, |p| base + p.index());
        edges.push(GraphEdge { parent, child: base + node.id.index(), class });
    }
}

pub fn observe(state: &TableState, ledger: &[InsightRecord], stage: Stage, mask: ActionMask) -> Observation {
    let mut nodes = vec![GraphNode { label: String::new(), side: None, depth: 0, selection: -1 }];
    let mut edges = Vec::new();
    for tree in [state.row_tree(), state.col_tree()] {
        let root = nodes.len();
        nodes.push(GraphNode { label: tree.root_label().to_string(), side: None, depth: 0, selection: -1 });
        edges.push(GraphEdge { parent: 0, child: root, class: EdgeClass::RootLink });
        push_tree(tree, root, &mut nodes, &mut edges);
    }
    let kind_of = |id: RecordId| ledger.iter().find(|r| r.id == id).map(|r| r.kind);
    let grid = state.grid();
    let mut viz = Vec::with_capacity(grid.rows());
    let mut cell_ids = Vec::with_capacity(grid.rows());
    for r in 0..grid.rows() {
        viz.push((0..grid.cols()).map(|c| grid.get(r, c).viz.and_then(kind_of)).collect());
        cell_ids
            .push((0..grid.cols()).map(|c| grid.get(r, c).id.filter(|id| !id.derived).map(|id| id.index)).collect());
    }
    Observation {
        version: OBSERVATION_VERSION,
        step: state.step(),
        stage,
        mask,
        nodes,
        edges,
        values: grid.values(),
        viz,
        cell_ids,
    }
}
