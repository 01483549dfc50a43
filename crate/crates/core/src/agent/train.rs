use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EpisodeConfig, Metrics, TableEnv};
use crate::insight::DetectorConfig;
use crate::table::TableState;
use crate::transform::{ActionKind, Stage};

use super::autodiff::{Grads, Graph, Var};
use super::features::{featurize, Features};
use super::params::{clip_grad_norm, Adam, AdamConfig, ParamId, Params};
use super::policy::{head_index, head_mask, NetConfig, PolicyError, PolicyNet, PolicyOutput};
use super::rnd::{Rnd, RndConfig, RunningStd};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicStages {
    #[default]
    Both,
    TransformOnly,
    SelectOnly,
}

impl IntrinsicStages {
    pub fn applies(self, stage: Stage) -> bool {
        match self {
            IntrinsicStages::Both => true,
            IntrinsicStages::TransformOnly => stage == Stage::Transform,
            IntrinsicStages::SelectOnly => stage == Stage::Select,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rnd_learning_rate: f64,
    pub parallel_envs: usize,
    pub rollout_steps: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: u64,
    pub intrinsic_weight: f64,
    pub gamma: f64,
    pub gae: bool,
    pub gae_lambda: f64,
    pub use_rnd: bool,
    pub intrinsic_stages: IntrinsicStages,
    pub eipo: bool,
    pub seed: u64,
    pub net: NetConfig,
    pub rnd: RndConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            rnd_learning_rate: 1e-3,
            parallel_envs: 8,
            rollout_steps: 64,
            minibatch: 64,
            epochs: 4,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_steps: 200_000,
            intrinsic_weight: 0.1,
            gamma: 0.99,
            gae: false,
            gae_lambda: 0.95,
            use_rnd: true,
            intrinsic_stages: IntrinsicStages::Both,
            eipo: false,
            seed: 0,
            net: NetConfig::default(),
            rnd: RndConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no tables to train on")]
    NoTables,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite {what} at iteration {iteration}: {detail}")]
    NonFinite { what: &'static str, iteration: usize, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("rnd_learning_rate", self.rnd_learning_rate),
            ("clip", self.clip),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(TrainError::Config("gamma and gae_lambda must be at most 1".into()));
        }
        if !(self.intrinsic_weight.is_finite() && self.intrinsic_weight >= 0.0)
            || !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0)
        {
            return Err(TrainError::Config("intrinsic_weight and entropy_coef must be non-negative".into()));
        }
        let counts = [
            ("parallel_envs", self.parallel_envs),
            ("rollout_steps", self.rollout_steps),
            ("minibatch", self.minibatch),
            ("epochs", self.epochs),
            ("net.text_dim", self.net.text_dim),
            ("net.gcn_layers", self.net.gcn_layers),
            ("net.gcn_hidden", self.net.gcn_hidden),
            ("net.content_hidden", self.net.content_hidden),
            ("net.content_dim", self.net.content_dim),
            ("net.trunk", self.net.trunk),
            ("rnd.hidden", self.rnd.hidden),
            ("rnd.output", self.rnd.output),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Policy network plus curiosity networks with their parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub net: PolicyNet,
    pub params: Params,
    pub rnd: Rnd,
    pub rnd_params: Params,
}

impl Agent {
    /// Deterministic construction from `(net, rnd, seed)`.
    pub fn new(net: &NetConfig, rnd: &RndConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        let policy = PolicyNet::new(&mut params, net.clone(), &mut rng);
        let mut rnd_params = Params::default();
        let curiosity = Rnd::new(&mut rnd_params, net.text_dim, rnd, &mut rng);
        Agent { net: policy, params, rnd: curiosity, rnd_params }
    }

    pub fn features(&self, obs: &crate::env::Observation) -> Features {
        featurize(obs, self.net.config.text_dim)
    }

    pub fn policy(&self, f: &Features) -> PolicyOutput {
        self.net.forward(&self.params, f)
    }

    pub fn intrinsic(&self, f: &Features) -> (f64, f64) {
        self.rnd.intrinsic(&self.rnd_params, f)
    }

    /// Samples (or takes the most probable of) the legal actions in `env`.
    pub fn act(&self, env: &TableEnv, rng: &mut impl Rng, greedy: bool) -> Result<ActionKind, PolicyError> {
        let f = self.features(&env.observation());
        let out = self.policy(&f);
        let (a, _) = if greedy { out.argmax(f.mask)? } else { out.sample(f.mask, rng)? };
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub features: Features,
    pub action: ActionKind,
    pub logp: f64,
    pub value: f64,
    pub r_ext: f64,
    pub r_int_heading: f64,
    pub r_int_content: f64,
    pub r_int: f64,
    pub done: bool,
    pub next_rnd: Features,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub extrinsic: f64,
    pub intrinsic: f64,
    pub length: usize,
    pub ar: f64,
    pub ir: f64,
    pub er: f64,
}

struct Worker {
    env: TableEnv,
    tables: Vec<TableState>,
    rng: ChaCha8Rng,
    features: Features,
    episodes: usize,
    ext: f64,
    int: f64,
    len: usize,
}

impl Worker {
    fn new(
        index: usize,
        tables: &[TableState],
        episode: &EpisodeConfig,
        det: &DetectorConfig,
        agent: &Agent,
        seed: u64,
    ) -> Self {
        let table = tables[index % tables.len()].clone();
        let env = TableEnv::new(table, episode.clone(), det.clone());
        let features = agent.features(&env.observation());
        Worker {
            env,
            tables: tables.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))),
            features,
            episodes: index,
            ext: 0.0,
            int: 0.0,
            len: 0,
        }
    }

    fn collect(
        &mut self,
        agent: &Agent,
        steps: usize,
        use_rnd: bool,
    ) -> Result<(Vec<Transition>, Vec<EpisodeSummary>), TrainError> {
        let mut out = Vec::with_capacity(steps);
        let mut finished = Vec::new();
        for _ in 0..steps {
            let policy = agent.policy(&self.features);
            let (action, logp) = policy.sample(self.features.mask, &mut self.rng)?;
            let step = self.env.step(action)?;
            let next_obs = self.env.observation();
            let next = agent.features(&next_obs);
            let (rh, rd) = if use_rnd { agent.intrinsic(&next) } else { (0.0, 0.0) };
            self.ext += step.reward.r_ext;
            self.int += rh + rd;
            self.len += 1;
            let features = std::mem::replace(&mut self.features, next.clone());
            out.push(Transition {
                features,
                action,
                logp,
                value: policy.value,
                r_ext: step.reward.r_ext,
                r_int_heading: rh,
                r_int_content: rd,
                r_int: 0.0,
                done: step.done,
                next_rnd: next,
            });
            if step.done {
                let m: &Metrics = self.env.metrics();
                finished.push(EpisodeSummary {
                    extrinsic: self.ext,
                    intrinsic: self.int,
                    length: self.len,
                    ar: m.ar,
                    ir: m.ir,
                    er: m.er,
                });
                self.ext = 0.0;
                self.int = 0.0;
                self.len = 0;
                self.episodes += 1;
                let table = self.tables[self.episodes % self.tables.len()].clone();
                let cfg = self.env.config().clone();
                let det = self.env.detectors().clone();
                self.env = TableEnv::new(table, cfg, det);
                self.features = agent.features(&self.env.observation());
            }
        }
        Ok((out, finished))
    }

    fn bootstrap(&self, agent: &Agent) -> f64 {
        agent.policy(&self.features).value
    }
}

/// Discounted returns and advantages for one worker's transitions.
pub fn advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    gae: Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut returns = vec![0.0; n];
    let mut adv = vec![0.0; n];
    match gae {
        None => {
            let mut g = bootstrap;
            for t in (0..n).rev() {
                g = rewards[t] + if dones[t] { 0.0 } else { gamma * g };
                returns[t] = g;
                adv[t] = g - values[t];
            }
        }
        Some(lambda) => {
            let mut a = 0.0;
            for t in (0..n).rev() {
                let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
                let live = if dones[t] { 0.0 } else { 1.0 };
                let delta = rewards[t] + gamma * next_v * live - values[t];
                a = delta + gamma * lambda * live * a;
                adv[t] = a;
                returns[t] = a + values[t];
            }
        }
    }
    (returns, adv)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub rnd: f64,
    pub grad_norm: f64,
}

/// One sample of a PPO batch.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    pub features: &'a Features,
    pub action: ActionKind,
    pub old_logp: f64,
    pub advantage: f64,
    pub target: f64,
}

/// Per-sample loss `clip + c_v (v − R)² − c_e H` with its gradient.
/// Builds the per-sample PPO objective on `g`: clipped surrogate, weighted value error
/// and entropy bonus. Returns the total and `[surrogate, squared value error, entropy]`.
pub fn sample_objective(
    g: &mut Graph,
    net: &PolicyNet,
    params: &Params,
    s: &Sample<'_>,
    cfg: &TrainConfig,
) -> (Var, [Var; 3]) {
    let v = net.forward_vars(g, params, s.features);
    let stage = s.action.stage();
    let mask = head_mask(s.features.mask, stage);
    let logits = v.active(stage);
    let logp = g.masked_log_softmax(logits, &mask);
    let chosen = g.pick(logp, 0, head_index(s.action));
    let surrogate = g.ppo_clip(chosen, s.old_logp, s.advantage, cfg.clip);
    let diff = g.add_const(v.value, -s.target);
    let sq = g.square(diff);
    let value_loss = g.scale(sq, cfg.value_coef);
    let entropy = g.masked_entropy(logits, &mask);
    let ent_term = g.scale(entropy, -cfg.entropy_coef);
    let total = g.add(surrogate, value_loss);
    let total = g.add(total, ent_term);
    (total, [surrogate, sq, entropy])
}

pub fn sample_loss(net: &PolicyNet, params: &Params, s: &Sample<'_>, cfg: &TrainConfig) -> (Grads, [f64; 3]) {
    let mut g = Graph::new();
    let (total, parts) = sample_objective(&mut g, net, params, s, cfg);
    let stats = parts.map(|v| g.scalar(v));
    (g.backward(total, params.len()), stats)
}

fn sum_grads(parts: Vec<Grads>, n_params: usize) -> Grads {
    let mut total = Grads(vec![None; n_params]);
    for p in &parts {
        total.accumulate(p);
    }
    total
}

/// PPO epochs over `samples`; returns mean losses and the last gradient norm.
pub fn ppo_update(
    net: &PolicyNet,
    params: &mut Params,
    opt: &mut Adam,
    samples: &[Sample<'_>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<LossReport, TrainError> {
    let mut report = LossReport::default();
    let mut count = 0.0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for chunk in order.chunks(cfg.minibatch) {
            let snapshot: &Params = params;
            let parts: Vec<(Grads, [f64; 3])> =
                chunk.par_iter().map(|i| sample_loss(net, snapshot, &samples[*i], cfg)).collect();
            let mut stats = [0.0; 3];
            let mut grads_list = Vec::with_capacity(parts.len());
            for (g, s) in parts {
                for k in 0..3 {
                    stats[k] += s[k];
                }
                grads_list.push(g);
            }
            let mut grads = sum_grads(grads_list, params.len());
            grads.scale(1.0 / chunk.len() as f64);
            if !grads.is_finite() || stats.iter().any(|s| !s.is_finite()) {
                return Err(TrainError::NonFinite {
                    what: "policy loss",
                    iteration,
                    detail: format!("surrogate {} value {} entropy {}", stats[0], stats[1], stats[2]),
                });
            }
            report.grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(params, &grads, &[]);
            report.policy += stats[0];
            report.value += stats[1];
            report.entropy += stats[2];
            count += chunk.len() as f64;
        }
    }
    if count > 0.0 {
        report.policy /= count;
        report.value /= count;
        report.entropy /= count;
    }
    Ok(report)
}

/// Predictor epochs over the next-state inputs; target parameters stay frozen.
pub fn rnd_update(
    agent: &mut Agent,
    opt: &mut Adam,
    inputs: &[&Features],
    minibatch: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<f64, TrainError> {
    let frozen: Vec<ParamId> = agent.rnd.target_ids();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut total = 0.0;
    let mut count = 0.0;
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for chunk in order.chunks(minibatch) {
            let rnd = &agent.rnd;
            let p = &agent.rnd_params;
            let parts: Vec<(Grads, f64)> = chunk
                .par_iter()
                .map(|i| {
                    let mut g = Graph::new();
                    let l = rnd.loss(&mut g, p, inputs[*i]);
                    (g.backward(l, p.len()), g.scalar(l))
                })
                .collect();
            let mut losses = 0.0;
            let mut list = Vec::with_capacity(parts.len());
            for (g, l) in parts {
                losses += l;
                list.push(g);
            }
            let mut grads = sum_grads(list, agent.rnd_params.len());
            grads.scale(1.0 / chunk.len() as f64);
            if !grads.is_finite() || !losses.is_finite() {
                return Err(TrainError::NonFinite { what: "rnd loss", iteration, detail: format!("{losses}") });
            }
            opt.step(&mut agent.rnd_params, &grads, &frozen);
            total += losses;
            count += chunk.len() as f64;
        }
    }
    Ok(if count > 0.0 { total / count } else { 0.0 })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub steps: u64,
    pub episodes: usize,
    pub extrinsic_mean: f64,
    pub ar: f64,
    pub ir: f64,
    pub er: f64,
    pub intrinsic_mean: f64,
    pub loss: LossReport,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str =
        "iteration,steps,episodes,r_ext_mean,ar,ir,er,intrinsic_mean,policy_loss,value_loss,entropy,rnd_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.steps,
            self.episodes,
            self.extrinsic_mean,
            self.ar,
            self.ir,
            self.er,
            self.intrinsic_mean,
            self.loss.policy,
            self.loss.value,
            self.loss.entropy,
            self.loss.rnd
        )
    }
}

pub fn write_curves(path: &Path, curves: &[IterationMetrics]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", IterationMetrics::CSV_HEADER)?;
    for row in curves {
        writeln!(f, "{}", row.csv_row())?;
    }
    f.flush()
}

/// One worker's transitions, finished episodes and summed intrinsic reward.
type Rollout = (Vec<Transition>, Vec<EpisodeSummary>, f64);

/// Complete state of a training run; checkpoints serialize it.
pub struct Trainer {
    pub config: TrainConfig,
    pub episode: EpisodeConfig,
    pub detectors: DetectorConfig,
    pub agent: Agent,
    /// Pure-extrinsic policy used by the alternation flag.
    pub extrinsic_agent: Option<Agent>,
    pub stats: [RunningStd; 2],
    pub rng: ChaCha8Rng,
    pub rnd_rng: ChaCha8Rng,
    pub steps: u64,
    pub iteration: usize,
    pub curves: Vec<IterationMetrics>,
    opt: Adam,
    extrinsic_opt: Option<Adam>,
    rnd_opt: Adam,
    workers: Vec<Worker>,
    extrinsic_workers: Vec<Worker>,
    returns: [Option<f64>; 2],
}

impl Trainer {
    pub fn new(
        tables: &[TableState],
        config: TrainConfig,
        episode: EpisodeConfig,
        detectors: DetectorConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if tables.is_empty() {
            return Err(TrainError::NoTables);
        }
        let agent = Agent::new(&config.net, &config.rnd, config.seed);
        let adam = |lr: f64, p: &Params| Adam::new(p, AdamConfig { lr, ..AdamConfig::default() });
        let opt = adam(config.learning_rate, &agent.params);
        let rnd_opt = adam(config.rnd_learning_rate, &agent.rnd_params);
        let make_workers = |a: &Agent, salt: u64| {
            (0..config.parallel_envs)
                .map(|i| Worker::new(i, tables, &episode, &detectors, a, config.seed.wrapping_add(salt)))
                .collect::<Vec<_>>()
        };
        let workers = make_workers(&agent, 0);
        let (extrinsic_agent, extrinsic_opt, extrinsic_workers) = if config.eipo {
            let mut e = agent.clone();
            e.rnd_params = Params::default();
            let o = adam(config.learning_rate, &e.params);
            let w = make_workers(&e, 0x5EED);
            (Some(e), Some(o), w)
        } else {
            (None, None, Vec::new())
        };
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            rnd_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            config,
            episode,
            detectors,
            agent,
            extrinsic_agent,
            stats: [RunningStd::default(), RunningStd::default()],
            steps: 0,
            iteration: 0,
            curves: Vec::new(),
            opt,
            extrinsic_opt,
            rnd_opt,
            workers,
            extrinsic_workers,
            returns: [None, None],
        })
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.config.parallel_envs * self.config.rollout_steps) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.steps + self.steps_per_iteration() > self.config.total_steps
    }

    /// Collects one rollout per worker and applies the PPO and curiosity updates.
    pub fn iteration(&mut self) -> Result<IterationMetrics, TrainError> {
        let extrinsic_turn = self.config.eipo && self.iteration % 2 == 1;
        let cfg = self.config.clone();
        let use_rnd = cfg.use_rnd && !extrinsic_turn;
        let (agent, workers) = if extrinsic_turn {
            (self.extrinsic_agent.as_ref().expect("alternation agent"), &mut self.extrinsic_workers)
        } else {
            (&self.agent, &mut self.workers)
        };
        let collected: Vec<Result<Rollout, TrainError>> = workers
            .par_iter_mut()
            .map(|w| {
                let (t, e) = w.collect(agent, cfg.rollout_steps, use_rnd)?;
                Ok((t, e, w.bootstrap(agent)))
            })
            .collect();
        let mut rollouts = Vec::with_capacity(collected.len());
        for c in collected {
            rollouts.push(c?);
        }

        if use_rnd {
            for (ts, _, _) in &rollouts {
                for t in ts {
                    self.stats[0].push(t.r_int_heading);
                    self.stats[1].push(t.r_int_content);
                }
            }
        }
        let lambda = if extrinsic_turn { 0.0 } else { cfg.intrinsic_weight };
        let mut intrinsic_total = 0.0;
        let mut n = 0.0;
        let mut flat_adv = Vec::new();
        let mut flat_ret = Vec::new();
        for (ts, _, boot) in rollouts.iter_mut() {
            let mut rewards = Vec::with_capacity(ts.len());
            for t in ts.iter_mut() {
                t.r_int = if use_rnd && cfg.intrinsic_stages.applies(t.action.stage()) {
                    self.stats[0].normalize(t.r_int_heading) + self.stats[1].normalize(t.r_int_content)
                } else {
                    0.0
                };
                intrinsic_total += t.r_int;
                n += 1.0;
                rewards.push(t.r_ext + lambda * t.r_int);
            }
            let values: Vec<f64> = ts.iter().map(|t| t.value).collect();
            let dones: Vec<bool> = ts.iter().map(|t| t.done).collect();
            let gae = cfg.gae.then_some(cfg.gae_lambda);
            let (ret, adv) = advantages(&rewards, &values, &dones, *boot, cfg.gamma, gae);
            flat_ret.extend(ret);
            flat_adv.extend(adv);
        }
        let mean = flat_adv.iter().sum::<f64>() / flat_adv.len().max(1) as f64;
        let sd = (flat_adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / flat_adv.len().max(1) as f64).sqrt();
        if sd > 1e-8 {
            flat_adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        } else {
            flat_adv.iter_mut().for_each(|a| *a = 0.0);
        }

        let all: Vec<&Transition> = rollouts.iter().flat_map(|r| r.0.iter()).collect();
        let samples: Vec<Sample<'_>> = all
            .iter()
            .zip(flat_adv.iter().zip(&flat_ret))
            .map(|(t, (a, r))| Sample {
                features: &t.features,
                action: t.action,
                old_logp: t.logp,
                advantage: *a,
                target: *r,
            })
            .collect();
        let mut loss = if extrinsic_turn {
            let agent = self.extrinsic_agent.as_mut().expect("alternation agent");
            let opt = self.extrinsic_opt.as_mut().expect("alternation optimizer");
            let net = agent.net.clone();
            ppo_update(&net, &mut agent.params, opt, &samples, &cfg, &mut self.rng, self.iteration)?
        } else {
            let net = self.agent.net.clone();
            ppo_update(&net, &mut self.agent.params, &mut self.opt, &samples, &cfg, &mut self.rng, self.iteration)?
        };
        if use_rnd {
            let inputs: Vec<&Features> = all.iter().map(|t| &t.next_rnd).collect();
            loss.rnd = rnd_update(
                &mut self.agent,
                &mut self.rnd_opt,
                &inputs,
                cfg.minibatch,
                cfg.epochs,
                &mut self.rnd_rng,
                self.iteration,
            )?;
        }
        drop(samples);

        let episodes: Vec<&EpisodeSummary> = rollouts.iter().flat_map(|r| r.1.iter()).collect();
        let k = episodes.len();
        let avg = |f: &dyn Fn(&EpisodeSummary) -> f64| {
            if k == 0 {
                f64::NAN
            } else {
                episodes.iter().map(|e| f(e)).sum::<f64>() / k as f64
            }
        };
        let metrics = IterationMetrics {
            iteration: self.iteration,
            steps: self.steps + self.steps_per_iteration(),
            episodes: k,
            extrinsic_mean: avg(&|e| e.extrinsic),
            ar: avg(&|e| e.ar),
            ir: avg(&|e| e.ir),
            er: avg(&|e| e.er),
            intrinsic_mean: if n > 0.0 { intrinsic_total / n } else { 0.0 },
            loss,
        };
        if self.config.eipo && k > 0 {
            let slot = usize::from(extrinsic_turn);
            let prev = self.returns[slot];
            self.returns[slot] = Some(prev.map_or(metrics.extrinsic_mean, |p| 0.9 * p + 0.1 * metrics.extrinsic_mean));
            if let (true, Some(mixed), Some(ext)) = (extrinsic_turn, self.returns[0], self.returns[1]) {
                if ext > mixed {
                    let e = self.extrinsic_agent.as_ref().expect("alternation agent");
                    self.agent.params = e.params.clone();
                    self.opt = Adam::new(&self.agent.params, self.opt.config.clone());
                    self.returns[0] = Some(ext);
                }
            }
        }
        self.steps += self.steps_per_iteration();
        self.iteration += 1;
        self.curves.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs iterations until the step budget is spent.
    pub fn run(&mut self, mut on_iteration: impl FnMut(&IterationMetrics)) -> Result<(), TrainError> {
        while !self.is_finished() {
            let m = self.iteration()?;
            on_iteration(&m);
        }
        Ok(())
    }
}

/// Trains on `tables` and returns the trainer holding the final agent and curves.
pub fn train(
    tables: &[TableState],
    config: TrainConfig,
    episode: EpisodeConfig,
    detectors: DetectorConfig,
) -> Result<Trainer, TrainError> {
    let mut trainer = Trainer::new(tables, config, episode, detectors)?;
    trainer.run(|m| {
        log::info!(
            "iter {} steps {} episodes {} r_ext {:.4} ar {:.3} ir {:.3} er {:.3}",
            m.iteration,
            m.steps,
            m.episodes,
            m.extrinsic_mean,
            m.ar,
            m.ir,
            m.er
        )
    })?;
    Ok(trainer)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_extrinsic: f64,
    pub returns: Vec<f64>,
    pub mean_ar: f64,
    pub mean_ir: f64,
    pub mean_er: f64,
}

/// Runs `episodes` episodes seeded `seed, seed+1, …` with the agent's policy.
pub fn evaluate(
    agent: &Agent,
    table: &TableState,
    episode: &EpisodeConfig,
    detectors: &DetectorConfig,
    episodes: usize,
    greedy: bool,
) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport { episodes, ..Default::default() };
    for i in 0..episodes {
        let cfg = EpisodeConfig { seed: episode.seed + i as u64, ..episode.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env = TableEnv::new(table.clone(), cfg, detectors.clone());
        let mut policy_error = None;
        let trace = super::baselines::run_episode(&mut env, |e| {
            agent.act(e, &mut rng, greedy).map_err(|err| {
                policy_error = Some(err);
                EnvError::Finished
            })
        });
        if let Some(err) = policy_error {
            return Err(err.into());
        }
        let trace = trace?;
        report.returns.push(trace.total_extrinsic);
        report.mean_ar += trace.metrics.ar;
        report.mean_ir += trace.metrics.ir;
        report.mean_er += trace.metrics.er;
    }
    let n = episodes.max(1) as f64;
    report.mean_extrinsic = report.returns.iter().sum::<f64>() / n;
    report.mean_ar /= n;
    report.mean_ir /= n;
    report.mean_er /= n;
    Ok(report)
}
