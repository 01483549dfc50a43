use ndarray::Array2;

use crate::env::{EdgeClass, Observation};
use crate::insight::InsightKind;
use crate::transform::{ActionMask, Stage};

use super::autodiff::Tensor;
use super::nn::embed_text;

/// Side length of the resampled grid used as the content curiosity input.
pub const RND_GRID: usize = 8;
/// Channels per resampled cell: value, mask flag, missing flag.
pub const RND_CHANNELS: usize = 3;
/// Cell feature width: standardized value, mask flag, kind code, positional code.
pub const CELL_FEATURES: usize = 4;

/// Numeric view of an observation, ready for the encoders.
#[derive(Clone, Debug)]
pub struct Features {
    pub stage: Stage,
    pub mask: ActionMask,
    /// `n × (d+1)`: text embedding then selection code.
    pub nodes: Tensor,
    /// Symmetric adjacency per edge class.
    pub adjacency: [Tensor; EdgeClass::COUNT],
    /// Step `t` holds column `t` of every row (`R × CELL_FEATURES`).
    pub row_steps: Vec<Tensor>,
    /// Step `t` holds row `t` of every column (`C × CELL_FEATURES`).
    pub col_steps: Vec<Tensor>,
    pub rnd_heading: Tensor,
    pub rnd_content: Tensor,
}

impl Features {
    pub fn text_dim(&self) -> usize {
        self.nodes.ncols() - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.nrows()
    }
}

pub fn node_feature_dim(text_dim: usize) -> usize {
    text_dim + 1
}

pub fn rnd_heading_dim(text_dim: usize) -> usize {
    2 * text_dim + 7
}

pub fn rnd_content_dim() -> usize {
    RND_GRID * RND_GRID * RND_CHANNELS
}

fn kind_code(kind: Option<InsightKind>) -> f64 {
    kind.map_or(0.0, |k| (k.index() + 1) as f64 / InsightKind::ALL.len() as f64)
}

fn standardized(values: &[Vec<Option<f64>>]) -> (f64, f64) {
    let present: Vec<f64> = values.iter().flatten().flatten().copied().collect();
    if present.is_empty() {
        return (0.0, 1.0);
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

fn cell_matrix(obs: &Observation) -> Vec<Vec<[f64; CELL_FEATURES]>> {
    let (mean, sd) = standardized(&obs.values);
    let max_id = obs.cell_ids.iter().flatten().flatten().copied().max().unwrap_or(0).max(1) as f64;
    obs.values
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, v)| {
                    let kind = obs.viz[r][c];
                    [
                        v.map_or(0.0, |v| (v - mean) / sd),
                        if kind.is_some() { 1.0 } else { 0.0 },
                        kind_code(kind),
                        obs.cell_ids[r][c].map_or(-1.0, |id| f64::from(id) / max_id),
                    ]
                })
                .collect()
        })
        .collect()
}

fn heading_summary(obs: &Observation, text_dim: usize) -> Tensor {
    let mut parent = vec![None; obs.nodes.len()];
    for e in &obs.edges {
        parent[e.child] = Some(e.parent);
    }
    let path_of = |mut i: usize| {
        let mut labels = Vec::new();
        while obs.nodes[i].side.is_some() {
            labels.push(obs.nodes[i].label.as_str());
            match parent[i] {
                Some(p) => i = p,
                None => break,
            }
        }
        labels.reverse();
        labels.join("/")
    };
    let mut out = Vec::with_capacity(rnd_heading_dim(text_dim));
    let mut depths = [0.0; 2];
    let mut levels = [0usize; 2];
    for (slot, code) in [2i8, 1].into_iter().enumerate() {
        let chosen = obs.nodes.iter().position(|n| n.selection == code && n.side.is_some());
        match chosen {
            Some(i) => {
                out.extend(embed_text(&path_of(i), text_dim));
                depths[slot] = obs.nodes[i].depth as f64;
            }
            None => out.extend(std::iter::repeat_n(0.0, text_dim)),
        }
        let side = if slot == 0 { crate::table::Side::Row } else { crate::table::Side::Col };
        levels[slot] = obs.nodes.iter().filter(|n| n.side == Some(side)).map(|n| n.depth).max().unwrap_or(0);
    }
    let rows = obs.values.len() as f64;
    let cols = obs.values.first().map_or(0, |r| r.len()) as f64;
    out.extend([
        depths[0] / 4.0,
        depths[1] / 4.0,
        levels[0] as f64 / 4.0,
        levels[1] as f64 / 4.0,
        rows / 16.0,
        cols / 16.0,
        if obs.stage == Stage::Select { 1.0 } else { 0.0 },
    ]);
    Array2::from_shape_vec((1, out.len()), out).expect("heading summary shape")
}

fn content_summary(obs: &Observation, cells: &[Vec<[f64; CELL_FEATURES]>]) -> Tensor {
    let rows = cells.len();
    let cols = cells.first().map_or(0, |r| r.len());
    let mut out = Vec::with_capacity(rnd_content_dim());
    for i in 0..RND_GRID {
        for j in 0..RND_GRID {
            if rows == 0 || cols == 0 {
                out.extend([0.0; RND_CHANNELS]);
                continue;
            }
            let r = i * rows / RND_GRID;
            let c = j * cols / RND_GRID;
            let cell = &cells[r][c];
            let missing = if obs.values[r][c].is_none() { 1.0 } else { 0.0 };
            out.extend([cell[0], cell[1], missing]);
        }
    }
    Array2::from_shape_vec((1, out.len()), out).expect("content summary shape")
}

pub fn featurize(obs: &Observation, text_dim: usize) -> Features {
    let n = obs.nodes.len();
    let mut nodes = Array2::zeros((n, node_feature_dim(text_dim)));
    for (i, node) in obs.nodes.iter().enumerate() {
        for (j, v) in embed_text(&node.label, text_dim).into_iter().enumerate() {
            nodes[[i, j]] = v;
        }
        nodes[[i, text_dim]] = f64::from(node.selection);
    }
    let mut adjacency: [Tensor; EdgeClass::COUNT] = std::array::from_fn(|_| Array2::zeros((n, n)));
    for e in &obs.edges {
        let a = &mut adjacency[e.class.index()];
        a[[e.parent, e.child]] = 1.0;
        a[[e.child, e.parent]] = 1.0;
    }
    let cells = cell_matrix(obs);
    let rows = cells.len();
    let cols = cells.first().map_or(0, |r| r.len());
    let row_steps = (0..cols).map(|t| Array2::from_shape_fn((rows, CELL_FEATURES), |(r, k)| cells[r][t][k])).collect();
    let col_steps = (0..rows).map(|t| Array2::from_shape_fn((cols, CELL_FEATURES), |(c, k)| cells[t][c][k])).collect();
    Features {
        stage: obs.stage,
        mask: obs.mask,
        nodes,
        adjacency,
        row_steps,
        col_steps,
        rnd_heading: heading_summary(obs, text_dim),
        rnd_content: content_summary(obs, &cells),
    }
}
