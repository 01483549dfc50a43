use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Graph, Var};
use super::features::{rnd_content_dim, rnd_heading_dim, Features};
use super::nn::Mlp;
use super::params::{ParamId, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RndConfig {
    pub hidden: usize,
    pub output: usize,
}

impl Default for RndConfig {
    fn default() -> Self {
        RndConfig { hidden: 64, output: 16 }
    }
}

/// Frozen random targets and trainable predictors for the heading and content inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Rnd {
    pub heading_target: Mlp,
    pub heading_predictor: Mlp,
    pub content_target: Mlp,
    pub content_predictor: Mlp,
}

fn mse(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.mean_all(sq)
}

impl Rnd {
    pub fn new(params: &mut Params, text_dim: usize, cfg: &RndConfig, rng: &mut impl Rng) -> Self {
        let h = [rnd_heading_dim(text_dim), cfg.hidden, cfg.output];
        let c = [rnd_content_dim(), cfg.hidden, cfg.output];
        Rnd {
            heading_target: Mlp::new(params, "rnd.heading.target", &h, rng),
            heading_predictor: Mlp::new(params, "rnd.heading.pred", &h, rng),
            content_target: Mlp::new(params, "rnd.content.target", &c, rng),
            content_predictor: Mlp::new(params, "rnd.content.pred", &c, rng),
        }
    }

    pub fn target_ids(&self) -> Vec<ParamId> {
        self.heading_target.layers.iter().chain(&self.content_target.layers).flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn target_fingerprint(&self, p: &Params) -> u64 {
        let ids = self.target_ids();
        let subset = Params::from_parts(
            ids.iter().map(|id| p.name(*id).to_string()).collect(),
            ids.iter().map(|id| p.get(*id).clone()).collect(),
        );
        subset.fingerprint()
    }

    pub fn copy_targets_into_predictors(&self, p: &mut Params) {
        let pairs = self
            .heading_target
            .layers
            .iter()
            .zip(&self.heading_predictor.layers)
            .chain(self.content_target.layers.iter().zip(&self.content_predictor.layers));
        for (t, q) in pairs {
            *p.get_mut(q.w) = p.get(t.w).clone();
            *p.get_mut(q.b) = p.get(t.b).clone();
        }
    }

    /// `(heading, content)` prediction errors as tape nodes.
    pub fn errors(&self, g: &mut Graph, p: &Params, f: &Features) -> (Var, Var) {
        let xh = g.constant(f.rnd_heading.clone());
        let xc = g.constant(f.rnd_content.clone());
        let th = self.heading_target.forward(g, p, xh);
        let ph = self.heading_predictor.forward(g, p, xh);
        let tc = self.content_target.forward(g, p, xc);
        let pc = self.content_predictor.forward(g, p, xc);
        (mse(g, ph, th), mse(g, pc, tc))
    }

    /// Raw intrinsic rewards `(r_H, r_D)`.
    pub fn intrinsic(&self, p: &Params, f: &Features) -> (f64, f64) {
        let mut g = Graph::new();
        let (h, c) = self.errors(&mut g, p, f);
        (g.scalar(h), g.scalar(c))
    }

    /// Predictor loss; gradients reach only predictor parameters.
    pub fn loss(&self, g: &mut Graph, p: &Params, f: &Features) -> Var {
        let (h, c) = self.errors(g, p, f);
        g.add(h, c)
    }
}

/// Running standard deviation (Welford) used to normalize intrinsic rewards.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStd {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStd {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        let s = (self.m2 / self.count as f64).sqrt();
        if s > 1e-8 {
            s
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        x / self.std()
    }
}
