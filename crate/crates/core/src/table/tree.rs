use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::document::NodeSpec;
use super::TableError;

/// Full label path from the outermost level down to a node.
pub type LabelPath = Vec<String>;

/// Preorder index of a node within its heading tree (the virtual root is not counted).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Row,
    Col,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Row => Side::Col,
            Side::Col => Side::Row,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Row => "row",
            Side::Col => "col",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Unselected,
    SelectedRow,
    SelectedCol,
}

/// Marker movement on a heading tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeMove {
    /// Previous node at the same depth, depth-first across subtrees.
    Up,
    /// Next node at the same depth, depth-first across subtrees.
    Down,
    /// Parent (never the virtual root).
    Left,
    /// First child.
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadingNode {
    pub id: NodeId,
    pub label: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// 0 = outermost level.
    pub depth: usize,
    /// Span of leaf positions covered by this node in the current leaf order.
    pub leaves: Range<usize>,
}

impl HeadingNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A multi-level heading with a virtual root and exactly one selected entry.
///
/// Trees are balanced: every leaf sits at depth `levels - 1`. Node ids are
/// preorder positions, so the first top-level entry is always `NodeId(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadingTree {
    side: Side,
    root_label: String,
    nodes: Vec<HeadingNode>,
    top: Vec<NodeId>,
    leaf_order: Vec<NodeId>,
    by_depth: Vec<Vec<NodeId>>,
    levels: usize,
    selected: NodeId,
}

#[derive(Debug)]
struct Trie {
    label: String,
    children: Vec<Trie>,
}

impl Trie {
    fn child_mut(&mut self, label: &str) -> Option<&mut Trie> {
        self.children.iter_mut().find(|c| c.label == label)
    }
}

impl HeadingTree {
    /// Builds a tree from leaf label paths. Paths sharing a prefix are grouped under one
    /// node; sibling order follows first appearance.
    pub fn from_paths(side: Side, root_label: &str, paths: &[LabelPath]) -> Result<Self, TableError> {
        let depth = paths.first().map(|p| p.len()).ok_or(TableError::EmptyTree { side })?;
        if depth == 0 {
            return Err(TableError::EmptyTree { side });
        }
        let mut root = Trie { label: root_label.to_string(), children: Vec::new() };
        for path in paths {
            if path.len() != depth {
                return Err(TableError::UnbalancedTree { side });
            }
            let mut cursor = &mut root;
            for (level, label) in path.iter().enumerate() {
                let last = level + 1 == depth;
                if cursor.child_mut(label).is_none() {
                    cursor.children.push(Trie { label: label.clone(), children: Vec::new() });
                } else if last {
                    return Err(TableError::DuplicateLabel { side, label: label.clone() });
                }
                cursor = cursor.child_mut(label).expect("inserted above");
            }
        }
        Ok(Self::flatten(side, root))
    }

    /// Builds a tree from the document form, validating sibling uniqueness and balance.
    pub fn from_spec(side: Side, spec: &NodeSpec) -> Result<Self, TableError> {
        fn convert(side: Side, spec: &NodeSpec) -> Result<Trie, TableError> {
            for (i, child) in spec.children.iter().enumerate() {
                if spec.children[..i].iter().any(|c| c.label == child.label) {
                    return Err(TableError::DuplicateLabel { side, label: child.label.clone() });
                }
            }
            let children = spec.children.iter().map(|c| convert(side, c)).collect::<Result<_, _>>()?;
            Ok(Trie { label: spec.label.clone(), children })
        }
        if spec.children.is_empty() {
            return Err(TableError::EmptyTree { side });
        }
        let root = convert(side, spec)?;
        let tree = Self::flatten(side, root);
        let leaf_depth = tree.levels - 1;
        if tree.leaf_order.iter().any(|id| tree.node(*id).depth != leaf_depth) {
            return Err(TableError::UnbalancedTree { side });
        }
        Ok(tree)
    }

    fn flatten(side: Side, root: Trie) -> Self {
        fn walk(
            trie: Trie,
            parent: Option<NodeId>,
            depth: usize,
            nodes: &mut Vec<HeadingNode>,
            leaf_order: &mut Vec<NodeId>,
        ) -> NodeId {
            let id = NodeId(nodes.len() as u32);
            let start = leaf_order.len();
            nodes.push(HeadingNode {
                id,
                label: trie.label,
                parent,
                children: Vec::new(),
                depth,
                leaves: start..start,
            });
            if trie.children.is_empty() {
                leaf_order.push(id);
            }
            let mut children = Vec::with_capacity(trie.children.len());
            for child in trie.children {
                children.push(walk(child, Some(id), depth + 1, nodes, leaf_order));
            }
            let node = &mut nodes[id.index()];
            node.children = children;
            node.leaves = start..leaf_order.len();
            id
        }

        let mut nodes = Vec::new();
        let mut leaf_order = Vec::new();
        let mut top = Vec::with_capacity(root.children.len());
        for child in root.children {
            top.push(walk(child, None, 0, &mut nodes, &mut leaf_order));
        }
        let levels = nodes.iter().map(|n| n.depth + 1).max().unwrap_or(0);
        let mut by_depth = vec![Vec::new(); levels];
        for node in &nodes {
            by_depth[node.depth].push(node.id);
        }
        HeadingTree { side, root_label: root.label, nodes, selected: top[0], top, leaf_order, by_depth, levels }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub(crate) fn set_side(&mut self, side: Side) {
        self.side = side;
    }

    pub fn root_label(&self) -> &str {
        &self.root_label
    }

    pub fn nodes(&self) -> &[HeadingNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &HeadingNode {
        &self.nodes[id.index()]
    }

    pub fn get(&self, id: NodeId) -> Option<&HeadingNode> {
        self.nodes.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of heading levels (leaf depth + 1).
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn top_level(&self) -> &[NodeId] {
        &self.top
    }

    pub fn leaf_order(&self) -> &[NodeId] {
        &self.leaf_order
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_order.len()
    }

    pub fn nodes_at_depth(&self, depth: usize) -> &[NodeId] {
        self.by_depth.get(depth).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn selected(&self) -> NodeId {
        self.selected
    }

    pub fn selection_of(&self, id: NodeId) -> Selection {
        if id != self.selected {
            Selection::Unselected
        } else {
            match self.side {
                Side::Row => Selection::SelectedRow,
                Side::Col => Selection::SelectedCol,
            }
        }
    }

    pub fn select(&mut self, id: NodeId) -> Result<(), TableError> {
        if id.index() >= self.nodes.len() {
            return Err(TableError::UnknownNode { side: self.side, id });
        }
        self.selected = id;
        Ok(())
    }

    /// Puts the marker back on the top-left (first top-level) entry.
    pub fn reset_selection(&mut self) {
        self.selected = self.top[0];
    }

    pub fn path(&self, id: NodeId) -> Vec<&str> {
        let mut path = Vec::with_capacity(self.node(id).depth + 1);
        let mut cursor = Some(id);
        while let Some(c) = cursor {
            let node = self.node(c);
            path.push(node.label.as_str());
            cursor = node.parent;
        }
        path.reverse();
        path
    }

    pub fn leaf_path(&self, leaf: usize) -> LabelPath {
        self.path(self.leaf_order[leaf]).into_iter().map(str::to_string).collect()
    }

    pub fn leaf_paths(&self) -> Vec<LabelPath> {
        (0..self.leaf_count()).map(|i| self.leaf_path(i)).collect()
    }

    pub fn find_path<S: AsRef<str>>(&self, path: &[S]) -> Option<NodeId> {
        let mut level: &[NodeId] = &self.top;
        let mut found = None;
        for label in path {
            let id = *level.iter().find(|id| self.node(**id).label == label.as_ref())?;
            found = Some(id);
            level = &self.node(id).children;
        }
        found
    }

    /// Where `mv` would take the marker from `from`, or `None` when it would leave the tree.
    pub fn move_target(&self, from: NodeId, mv: TreeMove) -> Option<NodeId> {
        let node = self.node(from);
        match mv {
            TreeMove::Left => node.parent,
            TreeMove::Right => node.children.first().copied(),
            TreeMove::Up | TreeMove::Down => {
                let row = &self.by_depth[node.depth];
                let pos = row.iter().position(|id| *id == from)?;
                if mv == TreeMove::Up {
                    pos.checked_sub(1).map(|p| row[p])
                } else {
                    row.get(pos + 1).copied()
                }
            }
        }
    }

    pub fn to_spec(&self) -> NodeSpec {
        fn build(tree: &HeadingTree, id: NodeId) -> NodeSpec {
            let node = tree.node(id);
            NodeSpec { label: node.label.clone(), children: node.children.iter().map(|c| build(tree, *c)).collect() }
        }
        NodeSpec { label: self.root_label.clone(), children: self.top.iter().map(|id| build(self, *id)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(raw: &[&[&str]]) -> Vec<LabelPath> {
        raw.iter().map(|p| p.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn groups_paths_by_first_appearance() {
        let tree = HeadingTree::from_paths(
            Side::Row,
            "rows",
            &paths(&[&["b1", "a1"], &["b2", "a1"], &["b1", "a2"], &["b2", "a2"]]),
        )
        .unwrap();
        assert_eq!(tree.levels(), 2);
        assert_eq!(tree.leaf_paths(), paths(&[&["b1", "a1"], &["b1", "a2"], &["b2", "a1"], &["b2", "a2"]]));
        assert_eq!(tree.node(NodeId(0)).leaves, 0..2);
    }

    #[test]
    fn duplicate_leaf_path_is_rejected() {
        let err = HeadingTree::from_paths(Side::Col, "cols", &paths(&[&["x"], &["x"]])).unwrap_err();
        assert!(matches!(err, TableError::DuplicateLabel { .. }));
    }

    #[test]
    fn same_depth_moves_cross_subtrees() {
        let tree =
            HeadingTree::from_paths(Side::Row, "rows", &paths(&[&["A", "a1"], &["A", "a2"], &["B", "b1"]])).unwrap();
        let a2 = tree.find_path(&["A", "a2"]).unwrap();
        let b1 = tree.find_path(&["B", "b1"]).unwrap();
        assert_eq!(tree.move_target(a2, TreeMove::Down), Some(b1));
        assert_eq!(tree.move_target(b1, TreeMove::Down), None);
        assert_eq!(tree.move_target(NodeId(0), TreeMove::Left), None);
        assert_eq!(tree.move_target(NodeId(0), TreeMove::Right), tree.find_path(&["A", "a1"]));
    }
}
