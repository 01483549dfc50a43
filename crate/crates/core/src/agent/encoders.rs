use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EdgeClass;

use super::autodiff::{Graph, Var};
use super::features::{node_feature_dim, Features, CELL_FEATURES};
use super::nn::{BiLstm, Linear};
use super::params::{ParamId, Params};

/// Heading-graph encoder: `h⁰ = ReLU(W c)`, then per layer
/// `hˡ = ReLU(Wˡ(hˡ⁻¹ + Σ_c θ_c A_c hˡ⁻¹) + bˡ)`, mean readout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gcn {
    pub input: Linear,
    pub layers: Vec<Linear>,
    /// `1 × 3` weight per edge class.
    pub edge_weights: ParamId,
    pub hidden: usize,
}

impl Gcn {
    pub fn new(params: &mut Params, text_dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        Gcn {
            input: Linear::new(params, "gcn.in", node_feature_dim(text_dim), hidden, rng),
            layers: (0..layers).map(|l| Linear::new(params, &format!("gcn.{l}"), hidden, hidden, rng)).collect(),
            edge_weights: params.add("gcn.edge", Array2::ones((1, EdgeClass::COUNT))),
            hidden,
        }
    }

    /// Node states after the last layer (`n × hidden`).
    pub fn node_states(&self, g: &mut Graph, p: &Params, f: &Features) -> Var {
        let x = g.constant(f.nodes.clone());
        let h0 = self.input.forward(g, p, x);
        let mut h = g.relu(h0);
        let theta = g.param(p, self.edge_weights);
        let adj: Vec<Var> = f.adjacency.iter().map(|a| g.constant(a.clone())).collect();
        for layer in &self.layers {
            let mut agg = h;
            for (c, a) in adj.iter().enumerate() {
                let msg = g.matmul(*a, h);
                let w = g.slice_cols(theta, c, c + 1);
                let weighted = g.mul(msg, w);
                agg = g.add(agg, weighted);
            }
            let z = layer.forward(g, p, agg);
            h = g.relu(z);
        }
        h
    }

    /// `1 × hidden` mean readout.
    pub fn forward(&self, g: &mut Graph, p: &Params, f: &Features) -> Var {
        let h = self.node_states(g, p, f);
        g.mean_rows(h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentMode {
    #[default]
    Lstm,
    MeanPool,
}

/// Grid encoder: a recurrent pass along every row and every column, each pooled,
/// concatenated and projected.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentEncoder {
    pub mode: ContentMode,
    pub rows: BiLstm,
    pub cols: BiLstm,
    pub pool: Linear,
    pub out: Linear,
    pub hidden: usize,
}

impl ContentEncoder {
    pub fn new(params: &mut Params, hidden: usize, output: usize, mode: ContentMode, rng: &mut impl Rng) -> Self {
        ContentEncoder {
            mode,
            rows: BiLstm::new(params, "content.rows", CELL_FEATURES, hidden, rng),
            cols: BiLstm::new(params, "content.cols", CELL_FEATURES, hidden, rng),
            pool: Linear::new(params, "content.pool", CELL_FEATURES, 2 * hidden, rng),
            out: Linear::new(params, "content.out", 4 * hidden, output, rng),
            hidden,
        }
    }

    fn summarize(&self, g: &mut Graph, p: &Params, net: &BiLstm, steps: &[ndarray::Array2<f64>]) -> Var {
        let vars: Vec<Var> = steps.iter().map(|s| g.constant(s.clone())).collect();
        match self.mode {
            ContentMode::Lstm => {
                let h = net.run(g, p, &vars);
                g.mean_rows(h)
            }
            ContentMode::MeanPool => {
                let all = g.concat_rows(&vars);
                let z = self.pool.forward(g, p, all);
                let z = g.tanh(z);
                g.mean_rows(z)
            }
        }
    }

    /// `1 × 4·hidden`: row summary half, then column summary half.
    pub fn pre_mlp(&self, g: &mut Graph, p: &Params, f: &Features) -> Var {
        let r = self.summarize(g, p, &self.rows, &f.row_steps);
        let c = self.summarize(g, p, &self.cols, &f.col_steps);
        g.concat_cols(&[r, c])
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, f: &Features) -> Var {
        let pre = self.pre_mlp(g, p, f);
        let z = self.out.forward(g, p, pre);
        g.relu(z)
    }
}
