use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::transform::{ActionKind, ActionMask, Stage};

use super::autodiff::{Graph, Var};
use super::encoders::{ContentEncoder, ContentMode, Gcn};
use super::features::Features;
use super::nn::Linear;
use super::params::Params;

pub const TRANSFORM_ACTIONS: usize = ActionKind::TRANSFORM_COUNT;
pub const SELECT_ACTIONS: usize = ActionKind::COUNT - ActionKind::TRANSFORM_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub text_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub content_hidden: usize,
    pub content_dim: usize,
    pub trunk: usize,
    pub content_mode: ContentMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            text_dim: 16,
            gcn_layers: 3,
            gcn_hidden: 32,
            content_hidden: 8,
            content_dim: 32,
            trunk: 64,
            content_mode: ContentMode::Lstm,
        }
    }
}

/// Actor-critic over `h_T = [h_H, h_D]` with one head per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub config: NetConfig,
    pub gcn: Gcn,
    pub content: ContentEncoder,
    pub trunk: Linear,
    pub transform_head: Linear,
    pub select_head: Linear,
    pub value_head: Linear,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub transform_logits: Var,
    pub select_logits: Var,
    pub value: Var,
}

impl PolicyVars {
    pub fn active(&self, stage: Stage) -> Var {
        match stage {
            Stage::Transform => self.transform_logits,
            Stage::Select => self.select_logits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyOutput {
    pub transform_logits: [f64; TRANSFORM_ACTIONS],
    pub select_logits: [f64; SELECT_ACTIONS],
    pub value: f64,
    pub stage: Stage,
}

impl PolicyOutput {
    /// Probabilities over all 14 actions; the inactive head and masked entries are 0.
    pub fn probabilities(&self, mask: ActionMask) -> Result<[f64; ActionKind::COUNT], PolicyError> {
        let (logits, offset): (&[f64], usize) = match self.stage {
            Stage::Transform => (&self.transform_logits, 0),
            Stage::Select => (&self.select_logits, TRANSFORM_ACTIONS),
        };
        masked_softmax(logits, &mask.as_array()[offset..offset + logits.len()]).map(|p| {
            let mut all = [0.0; ActionKind::COUNT];
            all[offset..offset + p.len()].copy_from_slice(&p);
            all
        })
    }

    pub fn sample(&self, mask: ActionMask, rng: &mut impl Rng) -> Result<(ActionKind, f64), PolicyError> {
        let probs = self.probabilities(mask)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = None;
        for (i, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last = Some(i);
                if u < acc {
                    return Ok((ActionKind::from_index(i).expect("index"), p.ln()));
                }
            }
        }
        let i = last.ok_or(PolicyError::AllMasked)?;
        Ok((ActionKind::from_index(i).expect("index"), probs[i].ln()))
    }

    /// Most probable legal action; ties go to the lowest index.
    pub fn argmax(&self, mask: ActionMask) -> Result<(ActionKind, f64), PolicyError> {
        let probs = self.probabilities(mask)?;
        let (i, p) = probs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.as_array()[*i])
            .fold((usize::MAX, -1.0), |best, (i, p)| if *p > best.1 { (i, *p) } else { best });
        Ok((ActionKind::from_index(i).expect("index"), p.ln()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("every action of the active head is masked")]
    AllMasked,
}

pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, PolicyError> {
    let max = logits.iter().zip(mask).filter(|(_, m)| **m).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(PolicyError::AllMasked);
    }
    let exps: Vec<f64> = logits.iter().zip(mask).map(|(l, m)| if *m { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

impl PolicyNet {
    pub fn new(params: &mut Params, config: NetConfig, rng: &mut impl Rng) -> Self {
        let gcn = Gcn::new(params, config.text_dim, config.gcn_hidden, config.gcn_layers, rng);
        let content = ContentEncoder::new(params, config.content_hidden, config.content_dim, config.content_mode, rng);
        let joint = config.gcn_hidden + config.content_dim;
        let trunk = Linear::new(params, "trunk", joint, config.trunk, rng);
        let transform_head = Linear::new(params, "head.transform", config.trunk, TRANSFORM_ACTIONS, rng);
        let select_head = Linear::new(params, "head.select", config.trunk, SELECT_ACTIONS, rng);
        let value_head = Linear::new(params, "head.value", config.trunk, 1, rng);
        for head in [transform_head, select_head] {
            params.get_mut(head.w).mapv_inplace(|w| w * 0.01);
        }
        PolicyNet { config, gcn, content, trunk, transform_head, select_head, value_head }
    }

    pub fn forward_vars(&self, g: &mut Graph, p: &Params, f: &Features) -> PolicyVars {
        let hh = self.gcn.forward(g, p, f);
        let hd = self.content.forward(g, p, f);
        let ht = g.concat_cols(&[hh, hd]);
        let z = self.trunk.forward(g, p, ht);
        let z = g.tanh(z);
        PolicyVars {
            transform_logits: self.transform_head.forward(g, p, z),
            select_logits: self.select_head.forward(g, p, z),
            value: self.value_head.forward(g, p, z),
        }
    }

    pub fn forward(&self, p: &Params, f: &Features) -> PolicyOutput {
        let mut g = Graph::new();
        let v = self.forward_vars(&mut g, p, f);
        let row = |var: Var| g.value(var).iter().copied().collect::<Vec<f64>>();
        let mut out = PolicyOutput {
            transform_logits: [0.0; TRANSFORM_ACTIONS],
            select_logits: [0.0; SELECT_ACTIONS],
            value: g.scalar(v.value),
            stage: f.stage,
        };
        out.transform_logits.copy_from_slice(&row(v.transform_logits));
        out.select_logits.copy_from_slice(&row(v.select_logits));
        out
    }
}

/// Mask slice for the head of `stage`.
pub fn head_mask(mask: ActionMask, stage: Stage) -> Vec<bool> {
    let all = mask.as_array();
    match stage {
        Stage::Transform => all[..TRANSFORM_ACTIONS].to_vec(),
        Stage::Select => all[TRANSFORM_ACTIONS..].to_vec(),
    }
}

/// Column of `action` within its stage's head.
pub fn head_index(action: ActionKind) -> usize {
    if action.is_transformation() {
        action.index()
    } else {
        action.index() - TRANSFORM_ACTIONS
    }
}
