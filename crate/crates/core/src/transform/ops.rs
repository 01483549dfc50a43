use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ActionKind, ActionMask, Stage, TransformError};
use crate::table::{overlaps_mask, Cell, CellGrid, CellId, HeadingTree, LabelPath, Side, TableState};

pub const DERIVED_MEAN_LABEL: &str = "__avg__";
pub const DERIVED_SUM_LABEL: &str = "__sum__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFn {
    Mean,
    Sum,
}

impl AggregateFn {
    pub fn label(self) -> &'static str {
        match self {
            AggregateFn::Mean => DERIVED_MEAN_LABEL,
            AggregateFn::Sum => DERIVED_SUM_LABEL,
        }
    }
}

type CellKey = (LabelPath, LabelPath);

/// Rebuilds a state from leaf path lists and a path-keyed cell map. Positions without
/// an entry become fill cells; markers land on the top-left entries.
fn rebuild(
    base: &TableState,
    row_paths: &[LabelPath],
    col_paths: &[LabelPath],
    mut cells: HashMap<CellKey, Cell>,
    next_cell_index: u32,
) -> TableState {
    let row_tree = HeadingTree::from_paths(Side::Row, base.row_tree().root_label(), row_paths)
        .expect("transformations produce unique, balanced row paths");
    let col_tree = HeadingTree::from_paths(Side::Col, base.col_tree().root_label(), col_paths)
        .expect("transformations produce unique, balanced col paths");
    let rows = row_tree.leaf_paths();
    let cols = col_tree.leaf_paths();
    let mut grid = Vec::with_capacity(rows.len() * cols.len());
    for r in &rows {
        for c in &cols {
            let cell = cells.remove(&(r.clone(), c.clone())).unwrap_or_default();
            grid.push(Cell { viz: None, ..cell });
        }
    }
    TableState::from_parts(
        row_tree,
        col_tree,
        CellGrid::from_cells(rows.len(), cols.len(), grid),
        base.step(),
        next_cell_index,
    )
}

fn push_unique(list: &mut Vec<LabelPath>, seen: &mut HashSet<LabelPath>, path: LabelPath) {
    if seen.insert(path.clone()) {
        list.push(path);
    }
}

/// Exchanges row and column headings. Markers travel with their trees.
pub fn transpose(state: &TableState) -> TableState {
    let (mut row_tree, mut col_tree, grid, step, next) = state.clone().into_parts();
    row_tree.set_side(Side::Col);
    col_tree.set_side(Side::Row);
    let mut grid = grid.transposed();
    grid.clear_viz();
    TableState::from_parts(col_tree, row_tree, grid, step, next)
}

/// Moves the innermost level of `from` to become the innermost level of the other side.
fn move_innermost(state: &TableState, from: Side, action: ActionKind) -> Result<TableState, TransformError> {
    let source = state.tree(from);
    if source.levels() < 2 {
        return Err(TransformError::TooFewLevels { action, side: from });
    }
    let target = state.tree(from.opposite());
    let from_paths = source.leaf_paths();
    let to_paths = target.leaf_paths();

    let mut inner_labels: Vec<String> = Vec::new();
    for path in &from_paths {
        let label = path.last().expect("levels >= 2");
        if !inner_labels.contains(label) {
            inner_labels.push(label.clone());
        }
    }

    let mut cells = HashMap::new();
    let mut landed_to = HashSet::new();
    let mut landed_from = HashSet::new();
    for (i, from_path) in from_paths.iter().enumerate() {
        let (inner, prefix) = from_path.split_last().expect("levels >= 2");
        for (j, to_path) in to_paths.iter().enumerate() {
            let cell = match from {
                Side::Row => *state.grid().get(i, j),
                Side::Col => *state.grid().get(j, i),
            };
            // fill cells are regenerated wherever a real cell is absent
            if cell.id.is_none() {
                continue;
            }
            let mut extended = to_path.clone();
            extended.push(inner.clone());
            let prefix = prefix.to_vec();
            landed_to.insert(extended.clone());
            landed_from.insert(prefix.clone());
            let key = match from {
                Side::Row => (prefix, extended),
                Side::Col => (extended, prefix),
            };
            cells.insert(key, cell);
        }
    }

    let mut new_to = Vec::new();
    for to_path in &to_paths {
        for label in &inner_labels {
            let mut extended = to_path.clone();
            extended.push(label.clone());
            if landed_to.contains(&extended) {
                new_to.push(extended);
            }
        }
    }
    let mut new_from = Vec::new();
    let mut seen = HashSet::new();
    for path in &from_paths {
        let prefix = path[..path.len() - 1].to_vec();
        if landed_from.contains(&prefix) {
            push_unique(&mut new_from, &mut seen, prefix);
        }
    }

    let next = state.next_cell_index();
    Ok(match from {
        Side::Row => rebuild(state, &new_from, &new_to, cells, next),
        Side::Col => rebuild(state, &new_to, &new_from, cells, next),
    })
}

/// Innermost column level becomes the innermost row level.
pub fn stack(state: &TableState) -> Result<TableState, TransformError> {
    move_innermost(state, Side::Col, ActionKind::Stack)
}

/// Innermost row level becomes the innermost column level.
pub fn unstack(state: &TableState) -> Result<TableState, TransformError> {
    move_innermost(state, Side::Row, ActionKind::Unstack)
}

/// Exchanges the two innermost levels of one side.
pub fn swap(state: &TableState, side: Side) -> Result<TableState, TransformError> {
    let action = match side {
        Side::Row => ActionKind::SwapRow,
        Side::Col => ActionKind::SwapCol,
    };
    let tree = state.tree(side);
    if tree.levels() < 2 {
        return Err(TransformError::TooFewLevels { action, side });
    }
    let swapped: Vec<LabelPath> = tree
        .leaf_paths()
        .into_iter()
        .map(|mut p| {
            let n = p.len();
            p.swap(n - 1, n - 2);
            p
        })
        .collect();
    let other = state.tree(side.opposite()).leaf_paths();
    let mut cells = HashMap::new();
    for (i, path) in swapped.iter().enumerate() {
        for (j, other_path) in other.iter().enumerate() {
            let (r, c, key) = match side {
                Side::Row => (i, j, (path.clone(), other_path.clone())),
                Side::Col => (j, i, (other_path.clone(), path.clone())),
            };
            cells.insert(key, *state.grid().get(r, c));
        }
    }
    let next = state.next_cell_index();
    Ok(match side {
        Side::Row => rebuild(state, &swapped, &other, cells, next),
        Side::Col => rebuild(state, &other, &swapped, cells, next),
    })
}

/// Agent-mode aggregate: arithmetic mean along rows.
pub fn aggregate(state: &TableState) -> TableState {
    aggregate_with(state, AggregateFn::Mean)
}

/// Gives every parent of row leaves one derived child holding the mean (or sum) of its
/// children per column. With a single row level the virtual root is that parent.
/// Parents that already carry the derived child are left alone.
pub fn aggregate_with(state: &TableState, func: AggregateFn) -> TableState {
    let label = func.label();
    let row_paths = state.row_tree().leaf_paths();
    let col_paths = state.col_tree().leaf_paths();
    let cols = col_paths.len();

    // groups in leaf order; leaves of one parent are contiguous
    let mut groups: Vec<(LabelPath, Vec<usize>)> = Vec::new();
    for (i, path) in row_paths.iter().enumerate() {
        let prefix = path[..path.len() - 1].to_vec();
        match groups.last_mut() {
            Some((p, members)) if *p == prefix => members.push(i),
            _ => groups.push((prefix, vec![i])),
        }
    }

    let mut cells = HashMap::new();
    for (i, path) in row_paths.iter().enumerate() {
        for (j, col) in col_paths.iter().enumerate() {
            cells.insert((path.clone(), col.clone()), *state.grid().get(i, j));
        }
    }

    let mut next = state.next_cell_index();
    let mut new_rows = Vec::with_capacity(row_paths.len() + groups.len());
    for (prefix, members) in &groups {
        new_rows.extend(members.iter().map(|i| row_paths[*i].clone()));
        if members.iter().any(|i| row_paths[*i].last().map(String::as_str) == Some(label)) {
            continue;
        }
        let mut derived_path = prefix.clone();
        derived_path.push(label.to_string());
        for (j, col) in col_paths.iter().enumerate().take(cols) {
            let present: Vec<f64> = members.iter().filter_map(|i| state.grid().get(*i, j).value).collect();
            let cell = if present.is_empty() {
                Cell::fill()
            } else {
                let sum: f64 = present.iter().sum();
                let value = match func {
                    AggregateFn::Sum => sum,
                    AggregateFn::Mean => sum / present.len() as f64,
                };
                let id = CellId { index: next, derived: true };
                next += 1;
                Cell { value: Some(value), id: Some(id), viz: None }
            };
            cells.insert((derived_path.clone(), col.clone()), cell);
        }
        new_rows.push(derived_path);
    }
    rebuild(state, &new_rows, &col_paths, cells, next)
}

/// Moves one marker. Only leaving the tree is an error here; overlap masking is
/// handled by [`legal_actions`].
pub fn move_selection(state: &TableState, action: ActionKind) -> Result<TableState, TransformError> {
    let (side, mv) = action.as_move().ok_or(TransformError::IllegalMove(action))?;
    let tree = state.tree(side);
    let target = tree.move_target(tree.selected(), mv).ok_or(TransformError::IllegalMove(action))?;
    let mut next = state.clone();
    next.tree_mut(side).select(target).expect("move targets are existing nodes");
    Ok(next)
}

/// Applies any of the fourteen actions.
pub fn apply(state: &TableState, action: ActionKind) -> Result<TableState, TransformError> {
    match action {
        ActionKind::Transpose => Ok(transpose(state)),
        ActionKind::Aggregate => Ok(aggregate(state)),
        ActionKind::Stack => stack(state),
        ActionKind::Unstack => unstack(state),
        ActionKind::SwapRow => swap(state, Side::Row),
        ActionKind::SwapCol => swap(state, Side::Col),
        _ => move_selection(state, action),
    }
}

/// Stage-gated legality. In the select stage a move is also illegal when the block it
/// lands on overlaps an embedded visualization.
pub fn legal_actions(state: &TableState, stage: Stage) -> ActionMask {
    let mut mask = ActionMask::none();
    match stage {
        Stage::Transform => {
            let rows = state.row_tree().levels();
            let cols = state.col_tree().levels();
            mask.set(ActionKind::Transpose, true);
            mask.set(ActionKind::Aggregate, true);
            mask.set(ActionKind::Stack, cols >= 2);
            mask.set(ActionKind::Unstack, rows >= 2);
            mask.set(ActionKind::SwapRow, rows >= 2);
            mask.set(ActionKind::SwapCol, cols >= 2);
        }
        Stage::Select => {
            for action in &ActionKind::ALL[ActionKind::TRANSFORM_COUNT..] {
                let (side, mv) = action.as_move().expect("selection action");
                let tree = state.tree(side);
                let Some(target) = tree.move_target(tree.selected(), mv) else {
                    continue;
                };
                let (row, col) = match side {
                    Side::Row => (target, state.col_tree().selected()),
                    Side::Col => (state.row_tree().selected(), target),
                };
                let block = state.block(row, col).expect("targets exist");
                mask.set(*action, !overlaps_mask(state, &block));
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{parse_table, resolve_block, NodeSpec, RecordId, TableDocument};

    fn table(rows: NodeSpec, cols: NodeSpec, values: Vec<Vec<f64>>) -> TableState {
        let values = values.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        TableState::from_document(&TableDocument { row_tree: rows, col_tree: cols, values }).unwrap()
    }

    fn flat(root: &str, labels: &[&str]) -> NodeSpec {
        NodeSpec::branch(root, labels.iter().map(|l| NodeSpec::leaf(*l)).collect())
    }

    fn nested(root: &str, groups: &[(&str, &[&str])]) -> NodeSpec {
        NodeSpec::branch(root, groups.iter().map(|(g, ls)| flat(g, ls)).collect())
    }

    fn sales() -> TableState {
        table(
            flat("Region", &["N", "S"]),
            nested("Time", &[("2015", &["Q1", "Q2"]), ("2016", &["Q1", "Q2"])]),
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]],
        )
    }

    /// (sorted label set, value) for every non-missing cell.
    fn tuples(state: &TableState) -> Vec<(Vec<String>, u64)> {
        let mut out = Vec::new();
        for i in 0..state.grid().rows() {
            for j in 0..state.grid().cols() {
                if let Some(v) = state.grid().get(i, j).value {
                    let mut labels = state.row_tree().leaf_path(i);
                    labels.extend(state.col_tree().leaf_path(j));
                    labels.sort();
                    out.push((labels, v.to_bits()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn transpose_involution_and_shape() {
        let s = sales();
        let t = transpose(&s);
        assert_eq!((t.grid().rows(), t.grid().cols()), (4, 2));
        assert_eq!(t.grid().get(2, 1).value, s.grid().get(1, 2).value);
        assert_eq!(transpose(&t), s);
    }

    #[test]
    fn transpose_keeps_selected_block_cells() {
        let s = sales().with_selection(crate::table::NodeId(1), crate::table::NodeId(3)).unwrap();
        let ids = |st: &TableState| {
            let mut v: Vec<_> = resolve_block(st).cells().map(|(r, c)| st.grid().get(r, c).id).collect();
            v.sort();
            v
        };
        let t = transpose(&s);
        assert_eq!(ids(&s), ids(&t));
        assert_eq!(t.col_tree().selection_of(t.col_tree().selected()), crate::table::Selection::SelectedCol);
    }

    #[test]
    fn stack_region_by_quarter() {
        let s = sales();
        let st = stack(&s).unwrap();
        assert_eq!(st.grid().rows(), 4);
        assert_eq!(st.grid().cols(), 2);
        assert_eq!(
            st.row_tree().leaf_paths(),
            vec![vec!["N", "Q1"], vec!["N", "Q2"], vec!["S", "Q1"], vec!["S", "Q2"]]
                .into_iter()
                .map(|p| p.into_iter().map(String::from).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        );
        assert_eq!(tuples(&st), tuples(&s));
        assert_eq!(unstack(&st).unwrap(), s);
    }

    #[test]
    fn stack_single_inner_label() {
        let s = table(
            flat("r", &["a", "b", "c"]),
            nested("c", &[("X", &["only"]), ("Y", &["only"])]),
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
        );
        let st = stack(&s).unwrap();
        assert_eq!(st.grid().rows(), 3);
        assert_eq!(st.row_tree().levels(), 2);
    }

    #[test]
    fn stack_creates_missing_for_absent_combinations() {
        let s = table(flat("r", &["a"]), nested("c", &[("X", &["p", "q"]), ("Y", &["q"])]), vec![vec![1.0, 2.0, 3.0]]);
        let st = stack(&s).unwrap();
        // rows a/p, a/q ; cols X, Y ; (a/p, Y) absent
        assert_eq!((st.grid().rows(), st.grid().cols()), (2, 2));
        assert_eq!(st.grid().get(0, 1).value, None);
        assert_eq!(st.grid().get(0, 1).id, None);
        assert_eq!(unstack(&st).unwrap(), s);
    }

    #[test]
    fn swap_rows_preserves_tuples() {
        let s = table(
            nested("r", &[("a1", &["b1", "b2"]), ("a2", &["b1", "b2"])]),
            flat("c", &["x", "y"]),
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]],
        );
        let sw = swap(&s, Side::Row).unwrap();
        assert_eq!(sw.row_tree().leaf_path(1), vec!["b1".to_string(), "a2".to_string()]);
        assert_eq!(sw.grid().get(1, 0).value, Some(5.0));
        assert_eq!(tuples(&sw), tuples(&s));
        assert_eq!(swap(&sw, Side::Row).unwrap(), s);
        assert!(matches!(swap(&s, Side::Col), Err(TransformError::TooFewLevels { .. })));
    }

    #[test]
    fn aggregate_mean_and_idempotence() {
        let doc = br#"{"rowTree":{"label":"r","children":[
                {"label":"A","children":[{"label":"a1"},{"label":"a2"},{"label":"a3"}]},
                {"label":"B","children":[{"label":"b1"},{"label":"b2"}]}]},
            "colTree":{"label":"c","children":[{"label":"x"}]},
            "values":[[1],[2],[3],[4],[null]]}"#;
        let s = parse_table(doc).unwrap();
        let agg = aggregate(&s);
        assert_eq!(agg.grid().rows(), 7);
        assert_eq!(agg.row_tree().leaf_path(3), vec!["A".to_string(), DERIVED_MEAN_LABEL.to_string()]);
        assert_eq!(agg.grid().get(3, 0).value, Some(2.0));
        assert_eq!(agg.grid().get(6, 0).value, Some(4.0));
        assert!(agg.grid().get(3, 0).id.unwrap().derived);
        assert_eq!(aggregate(&agg).grid().rows(), 7);
        assert_eq!(agg.original_cell_ids(), s.original_cell_ids());
    }

    #[test]
    fn transformations_clear_mask() {
        let mut s = sales();
        s.grid_mut().get_mut(0, 0).viz = Some(RecordId(3));
        for action in &ActionKind::ALL[..6] {
            if let Ok(next) = apply(&s, *action) {
                assert_eq!(next.grid().visualized_count(), 0, "{action}");
            }
        }
    }

    #[test]
    fn flat_table_transform_stage_mask() {
        let s = table(flat("r", &["a", "b"]), flat("c", &["x", "y"]), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mask = legal_actions(&s, Stage::Transform);
        let legal: Vec<_> = mask.legal().collect();
        assert_eq!(legal, vec![ActionKind::Transpose, ActionKind::Aggregate]);
    }

    #[test]
    fn row_left_masked_at_top_level() {
        let s = table(flat("r", &["a", "b"]), flat("c", &["x", "y"]), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mask = legal_actions(&s, Stage::Select);
        assert!(!mask.allows(ActionKind::RowLeft));
        assert!(!mask.allows(ActionKind::RowUp));
        assert!(mask.allows(ActionKind::RowDown));
        assert!(!mask.transform_head().iter().any(|b| *b));
    }

    #[test]
    fn fully_visualized_masks_every_move() {
        let mut s = sales();
        for r in 0..s.grid().rows() {
            for c in 0..s.grid().cols() {
                s.grid_mut().get_mut(r, c).viz = Some(RecordId(1));
            }
        }
        assert!(legal_actions(&s, Stage::Select).is_empty());
    }

    #[test]
    fn right_down_left_replay() {
        let s = sales();
        // col marker starts on 2015; right -> 2015/Q1, down -> 2015/Q2, left -> 2015
        let s1 = move_selection(&s, ActionKind::ColRight).unwrap();
        let q1 = s1.col_tree().selected();
        assert_eq!(s1.col_tree().path(q1), vec!["2015", "Q1"]);
        let s2 = move_selection(&s1, ActionKind::ColDown).unwrap();
        assert_eq!(s2.col_tree().path(s2.col_tree().selected()), vec!["2015", "Q2"]);
        let s3 = move_selection(&s2, ActionKind::ColLeft).unwrap();
        let parent = s2.col_tree().node(s2.col_tree().selected()).parent.unwrap();
        assert_eq!(s3.col_tree().selected(), parent);
        // last same-depth node cannot move down
        let last = move_selection(&move_selection(&s2, ActionKind::ColDown).unwrap(), ActionKind::ColDown).unwrap();
        assert_eq!(last.col_tree().path(last.col_tree().selected()), vec!["2016", "Q2"]);
        assert_eq!(move_selection(&last, ActionKind::ColDown), Err(TransformError::IllegalMove(ActionKind::ColDown)));
    }

    #[test]
    fn action_names_round_trip() {
        for a in ActionKind::ALL {
            assert_eq!(a.name().parse::<ActionKind>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
    }
}
