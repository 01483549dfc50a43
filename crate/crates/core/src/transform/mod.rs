//! The fourteen agent actions: six table transformations and eight marker moves.
//!
//! Every transformation returns a new [`TableState`] with the visualization mask
//! cleared. Cells are re-indexed through their full label paths, so the
//! `(row path, col path) -> value` mapping survives reordering.

mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{
    aggregate, aggregate_with, apply, legal_actions, move_selection, stack, swap, transpose, unstack, AggregateFn,
    DERIVED_MEAN_LABEL, DERIVED_SUM_LABEL,
};

use crate::table::{Side, TreeMove};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Transpose,
    Aggregate,
    Stack,
    Unstack,
    SwapRow,
    SwapCol,
    RowUp,
    RowDown,
    RowLeft,
    RowRight,
    ColUp,
    ColDown,
    ColLeft,
    ColRight,
}

impl ActionKind {
    pub const COUNT: usize = 14;
    pub const TRANSFORM_COUNT: usize = 6;
    pub const SELECT_COUNT: usize = 8;

    pub const ALL: [ActionKind; 14] = [
        ActionKind::Transpose,
        ActionKind::Aggregate,
        ActionKind::Stack,
        ActionKind::Unstack,
        ActionKind::SwapRow,
        ActionKind::SwapCol,
        ActionKind::RowUp,
        ActionKind::RowDown,
        ActionKind::RowLeft,
        ActionKind::RowRight,
        ActionKind::ColUp,
        ActionKind::ColDown,
        ActionKind::ColLeft,
        ActionKind::ColRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<ActionKind> {
        Self::ALL.get(index).copied()
    }

    pub fn is_transformation(self) -> bool {
        self.index() < Self::TRANSFORM_COUNT
    }

    pub fn stage(self) -> Stage {
        if self.is_transformation() {
            Stage::Transform
        } else {
            Stage::Select
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Transpose => "transpose",
            ActionKind::Aggregate => "aggregate",
            ActionKind::Stack => "stack",
            ActionKind::Unstack => "unstack",
            ActionKind::SwapRow => "swap_row",
            ActionKind::SwapCol => "swap_col",
            ActionKind::RowUp => "row_up",
            ActionKind::RowDown => "row_down",
            ActionKind::RowLeft => "row_left",
            ActionKind::RowRight => "row_right",
            ActionKind::ColUp => "col_up",
            ActionKind::ColDown => "col_down",
            ActionKind::ColLeft => "col_left",
            ActionKind::ColRight => "col_right",
        }
    }

    /// Side and direction of a selection action.
    pub fn as_move(self) -> Option<(Side, TreeMove)> {
        let mv = match self {
            ActionKind::RowUp => (Side::Row, TreeMove::Up),
            ActionKind::RowDown => (Side::Row, TreeMove::Down),
            ActionKind::RowLeft => (Side::Row, TreeMove::Left),
            ActionKind::RowRight => (Side::Row, TreeMove::Right),
            ActionKind::ColUp => (Side::Col, TreeMove::Up),
            ActionKind::ColDown => (Side::Col, TreeMove::Down),
            ActionKind::ColLeft => (Side::Col, TreeMove::Left),
            ActionKind::ColRight => (Side::Col, TreeMove::Right),
            _ => return None,
        };
        Some(mv)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| TransformError::UnknownAction(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Transform,
    Select,
}

/// Legality of each [`ActionKind`], indexed by [`ActionKind::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionMask([bool; 14]);

impl ActionMask {
    pub fn none() -> Self {
        ActionMask([false; 14])
    }

    pub fn from_array(bits: [bool; 14]) -> Self {
        ActionMask(bits)
    }

    pub fn allows(&self, action: ActionKind) -> bool {
        self.0[action.index()]
    }

    pub fn set(&mut self, action: ActionKind, legal: bool) {
        self.0[action.index()] = legal;
    }

    pub fn legal(&self) -> impl Iterator<Item = ActionKind> + '_ {
        ActionKind::ALL.iter().copied().filter(|a| self.allows(*a))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn as_array(&self) -> &[bool; 14] {
        &self.0
    }

    pub fn transform_head(&self) -> &[bool] {
        &self.0[..ActionKind::TRANSFORM_COUNT]
    }

    pub fn select_head(&self) -> &[bool] {
        &self.0[ActionKind::TRANSFORM_COUNT..]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("{action} requires at least two {side} levels")]
    TooFewLevels { action: ActionKind, side: Side },
    #[error("{0} would move the marker outside the heading tree")]
    IllegalMove(ActionKind),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}
