//! Related blocks and the patterns formed by their insights.

use serde::{Deserialize, Serialize};

use super::record::{DetectError, InsightKind};
use crate::table::{Block, HeadingTree, NodeId, Side, TableState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    NameBased,
    TopologyBased,
}

/// Blocks sharing one entry with `anchor` whose other entry is related by name or topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockRelation {
    pub mechanism: Mechanism,
    pub anchor: Block,
    pub related: Vec<Block>,
    pub shared_side: Side,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiPattern {
    /// Every related block carries the same kind.
    Shared,
    /// Exactly one block lacks a kind all the others carry.
    Differing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MultiBlockInsight {
    pub pattern: MultiPattern,
    pub kind: InsightKind,
    pub mechanism: Mechanism,
    pub blocks: Vec<Block>,
    /// Position in `blocks` of the block that differs.
    pub differing: Option<usize>,
}

fn block_for(state: &TableState, varying: Side, node: NodeId, fixed: NodeId) -> Block {
    let (row, col) = match varying {
        Side::Row => (node, fixed),
        Side::Col => (fixed, node),
    };
    state.block(row, col).expect("nodes come from the current trees")
}

fn siblings(tree: &HeadingTree, node: NodeId) -> Vec<NodeId> {
    match tree.node(node).parent {
        Some(p) => tree.node(p).children.clone(),
        None => tree.top_level().to_vec(),
    }
}

fn relation(
    state: &TableState,
    mechanism: Mechanism,
    anchor: &Block,
    varying: Side,
    fixed: NodeId,
    nodes: &[NodeId],
) -> Option<BlockRelation> {
    let blocks: Vec<Block> = nodes.iter().map(|n| block_for(state, varying, *n, fixed)).collect();
    let shape = blocks.first()?.shape();
    let related: Vec<Block> = blocks.into_iter().filter(|b| b.shape() == shape).collect();
    (related.len() >= 2).then(|| BlockRelation {
        mechanism,
        anchor: anchor.clone(),
        related,
        shared_side: varying.opposite(),
    })
}

/// Name-based (same label at the same depth), sibling and parent-to-children relations,
/// varying each side of the anchor in turn. Blocks in a relation all share one shape.
pub fn recommend_blocks(state: &TableState, anchor: &Block) -> Vec<BlockRelation> {
    let mut out = Vec::new();
    for varying in [Side::Row, Side::Col] {
        let tree = state.tree(varying);
        let (entry, fixed) = match varying {
            Side::Row => (anchor.row_entry, anchor.col_entry),
            Side::Col => (anchor.col_entry, anchor.row_entry),
        };
        let node = tree.node(entry);

        let mut same_name = vec![entry];
        same_name.extend(
            tree.nodes_at_depth(node.depth)
                .iter()
                .copied()
                .filter(|n| *n != entry && tree.node(*n).label == node.label),
        );
        out.extend(relation(state, Mechanism::NameBased, anchor, varying, fixed, &same_name));

        let sibs = siblings(tree, entry);
        let mut ordered = vec![entry];
        ordered.extend(sibs.into_iter().filter(|n| *n != entry));
        out.extend(relation(state, Mechanism::TopologyBased, anchor, varying, fixed, &ordered));

        if !node.children.is_empty() {
            out.extend(relation(state, Mechanism::TopologyBased, anchor, varying, fixed, &node.children));
        }
    }
    out
}

/// Checks a relation's per-block insight kinds for the shared or the differing pattern.
/// Shared wins over differing; differing needs at least three blocks.
pub fn compose_multiblock(
    relation: &BlockRelation,
    per_block: &[Vec<InsightKind>],
) -> Result<Option<MultiBlockInsight>, DetectError> {
    let blocks = &relation.related;
    if blocks.len() < 2 || per_block.len() != blocks.len() {
        return Err(DetectError::TooFewBlocks);
    }
    let shape = blocks[0].shape();
    if blocks.iter().any(|b| b.shape() != shape) {
        return Err(DetectError::ShapeMismatch);
    }
    let n = blocks.len();
    let count = |k: InsightKind| per_block.iter().filter(|kinds| kinds.contains(&k)).count();
    let make = |pattern, kind, differing| MultiBlockInsight {
        pattern,
        kind,
        mechanism: relation.mechanism,
        blocks: blocks.clone(),
        differing,
    };
    if let Some(kind) = InsightKind::ALL.into_iter().find(|k| count(*k) == n) {
        return Ok(Some(make(MultiPattern::Shared, kind, None)));
    }
    if n >= 3 {
        if let Some(kind) = InsightKind::ALL.into_iter().find(|k| count(*k) == n - 1) {
            let odd = per_block.iter().position(|kinds| !kinds.contains(&kind));
            return Ok(Some(make(MultiPattern::Differing, kind, odd)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{NodeSpec, TableDocument};

    fn sales() -> TableState {
        let q = || vec![NodeSpec::leaf("Q1"), NodeSpec::leaf("Q2")];
        let doc = TableDocument {
            row_tree: NodeSpec::branch("Region", vec![NodeSpec::leaf("N"), NodeSpec::leaf("S")]),
            col_tree: NodeSpec::branch("Time", vec![NodeSpec::branch("2015", q()), NodeSpec::branch("2016", q())]),
            values: vec![vec![Some(1.0); 4], vec![Some(2.0); 4]],
        };
        TableState::from_document(&doc).unwrap()
    }

    #[test]
    fn name_based_quarter_under_other_year() {
        let s = sales();
        let n = s.row_tree().find_path(&["N"]).unwrap();
        let q1 = s.col_tree().find_path(&["2015", "Q1"]).unwrap();
        let anchor = s.block(n, q1).unwrap();
        let rels = recommend_blocks(&s, &anchor);
        let named: Vec<_> = rels.iter().filter(|r| r.mechanism == Mechanism::NameBased).collect();
        assert_eq!(named.len(), 1);
        let other = s.col_tree().find_path(&["2016", "Q1"]).unwrap();
        assert_eq!(named[0].related, vec![anchor.clone(), s.block(n, other).unwrap()]);
        assert_eq!(named[0].shared_side, Side::Row);
        // oracle: every column leaf labelled Q1
        let q1_cols = (0..s.grid().cols()).filter(|j| s.col_tree().leaf_path(*j)[1] == "Q1").count();
        assert_eq!(named[0].related.len(), q1_cols);
    }

    #[test]
    fn lone_unique_entry_has_no_relations() {
        let doc = TableDocument {
            row_tree: NodeSpec::branch("r", vec![NodeSpec::branch("only", vec![NodeSpec::leaf("x")])]),
            col_tree: NodeSpec::branch("c", vec![NodeSpec::branch("solo", vec![NodeSpec::leaf("y")])]),
            values: vec![vec![Some(1.0)]],
        };
        let s = TableState::from_document(&doc).unwrap();
        let x = s.row_tree().find_path(&["only", "x"]).unwrap();
        let y = s.col_tree().find_path(&["solo", "y"]).unwrap();
        assert!(recommend_blocks(&s, &s.block(x, y).unwrap()).is_empty());
    }

    #[test]
    fn siblings_make_topology_relation() {
        let s = sales();
        let n = s.row_tree().find_path(&["N"]).unwrap();
        let y15 = s.col_tree().find_path(&["2015"]).unwrap();
        let rels = recommend_blocks(&s, &s.block(n, y15).unwrap());
        let sib = rels
            .iter()
            .find(|r| r.mechanism == Mechanism::TopologyBased && r.shared_side == Side::Row && r.related.len() == 2)
            .unwrap();
        assert_eq!(sib.related[1].col_entry, s.col_tree().find_path(&["2016"]).unwrap());
    }

    fn rel(n: usize) -> BlockRelation {
        let s = sales();
        let blocks: Vec<Block> = (0..n).map(|_| s.block(NodeId(0), NodeId(0)).unwrap()).collect();
        BlockRelation {
            mechanism: Mechanism::NameBased,
            anchor: blocks[0].clone(),
            related: blocks,
            shared_side: Side::Row,
        }
    }

    #[test]
    fn shared_and_differing_patterns() {
        use InsightKind::*;
        let m = compose_multiblock(&rel(3), &[vec![Outlier], vec![Outlier, Trend], vec![Outlier]]).unwrap().unwrap();
        assert_eq!((m.pattern, m.kind), (MultiPattern::Shared, Outlier));
        let d =
            compose_multiblock(&rel(4), &[vec![Skewness], vec![], vec![Skewness], vec![Skewness]]).unwrap().unwrap();
        assert_eq!((d.pattern, d.kind, d.differing), (MultiPattern::Differing, Skewness, Some(1)));
        assert_eq!(compose_multiblock(&rel(2), &[vec![Trend], vec![Evenness]]).unwrap(), None);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let s = sales();
        let mut r = rel(2);
        r.related[1] = s.block(NodeId(0), NodeId(1)).unwrap();
        assert_eq!(compose_multiblock(&r, &[vec![], vec![]]), Err(DetectError::ShapeMismatch));
    }
}
