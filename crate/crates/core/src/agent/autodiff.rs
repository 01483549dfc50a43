//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] records every operation of one forward pass. [`Graph::backward`] walks the
//! tape in reverse and returns gradients for the parameters that were read into it.
//! Binary element-wise ops broadcast a `1×n` row or a `1×1` scalar operand.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, Params};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type Backward = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    backward: Option<Backward>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients indexed like the parameter store; `None` for untouched parameters.
#[derive(Clone, Debug)]
pub struct Grads(pub Vec<Option<Tensor>>);

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads(vec![None; params.len()])
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0[id.0].as_ref()
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|v| v * c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

fn shape(t: &Tensor) -> (usize, usize) {
    t.dim()
}

/// Sums a gradient down to a broadcast operand's shape.
fn reduce_to(grad: &Tensor, target: (usize, usize)) -> Tensor {
    let mut g = grad.clone();
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (ra, ca) = shape(a);
    let (rb, cb) = shape(b);
    let rows = ra.max(rb);
    let cols = ca.max(cb);
    assert!(
        (ra == rows || ra == 1) && (rb == rows || rb == 1) && (ca == cols || ca == 1) && (cb == cols || cb == 1),
        "incompatible shapes {:?} and {:?}",
        (ra, ca),
        (rb, cb)
    );
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        f(
            a[[if ra == 1 { 0 } else { i }, if ca == 1 { 0 } else { j }]],
            b[[if rb == 1 { 0 } else { i }, if cb == 1 { 0 } else { j }]],
        )
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lstm_forward(z: &Tensor, c: &Tensor) -> Tensor {
    let k = c.ncols();
    let mut out = Array2::zeros((c.nrows(), 2 * k));
    for r in 0..c.nrows() {
        for j in 0..k {
            let i = sigmoid(z[[r, j]]);
            let f = sigmoid(z[[r, k + j]]);
            let cand = z[[r, 2 * k + j]].tanh();
            let o = sigmoid(z[[r, 3 * k + j]]);
            let cn = f * c[[r, j]] + i * cand;
            out[[r, k + j]] = cn;
            out[[r, j]] = o * cn.tanh();
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Tensor, inputs: Vec<usize>, backward: Option<Backward>) -> Var {
        self.nodes.push(Node { value, inputs, backward, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Reads a parameter; repeated reads share one tape node.
    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(params.get(id).clone(), Vec::new(), None);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Var {
        let value = self.nodes[a.0].value.mapv(f);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, ins, out| {
                vec![Array2::from_shape_fn(g.dim(), |ij| g[ij] * df(ins[0][ij], out[ij]))]
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, ins, _| vec![reduce_to(g, ins[0].dim()), reduce_to(g, ins[1].dim())])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, ins, _| vec![reduce_to(g, ins[0].dim()), reduce_to(&g.mapv(|v| -v), ins[1].dim())])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, ins, _| {
                let ga = broadcast(g, ins[1], |x, y| x * y);
                let gb = broadcast(g, ins[0], |x, y| x * y);
                vec![reduce_to(&ga, ins[0].dim()), reduce_to(&gb, ins[1].dim())]
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, vec![a.0, b.0], Some(Box::new(|g, ins, _| vec![g.dot(&ins[1].t()), ins[0].t().dot(g)])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| c * x, move |_, _| c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, |_, _| 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, vec![a.0], Some(Box::new(|g, ins, _| vec![Array2::from_elem(ins[0].dim(), g[[0, 0]])])))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a).nrows() as f64;
        let value = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, ins, _| {
                let rows = ins[0].nrows();
                vec![Array2::from_shape_fn((rows, g.ncols()), |(_, j)| g[[0, j]] / m)]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("equal row counts");
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).ncols()).collect();
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut start = 0;
                widths
                    .iter()
                    .map(|w| {
                        let part = g.slice(s![.., start..start + w]).to_owned();
                        start += w;
                        part
                    })
                    .collect()
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("equal column counts");
        let heights: Vec<usize> = parts.iter().map(|p| self.value(*p).nrows()).collect();
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut start = 0;
                heights
                    .iter()
                    .map(|h| {
                        let part = g.slice(s![start..start + h, ..]).to_owned();
                        start += h;
                        part
                    })
                    .collect()
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, ins, _| {
                let mut full = Array2::zeros(ins[0].dim());
                full.slice_mut(s![.., start..end]).assign(g);
                vec![full]
            })),
        )
    }

    /// Log-softmax restricted to legal entries. Illegal entries hold −∞ and get no gradient.
    pub fn masked_log_softmax(&mut self, logits: Var, mask: &[bool]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), (1, mask.len()), "logits must be 1×k");
        assert!(mask.iter().any(|m| *m), "all actions masked");
        let max = x.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| (v - max).exp()).sum::<f64>().ln();
        let value = Array2::from_shape_fn(x.dim(), |(_, j)| if mask[j] { x[[0, j]] - lse } else { f64::NEG_INFINITY });
        let mask = mask.to_vec();
        self.push(
            value,
            vec![logits.0],
            Some(Box::new(move |g, _, out| {
                let total: f64 = (0..mask.len()).filter(|j| mask[*j]).map(|j| g[[0, j]]).sum();
                vec![Array2::from_shape_fn(
                    g.dim(),
                    |(_, j)| {
                        if mask[j] {
                            g[[0, j]] - out[[0, j]].exp() * total
                        } else {
                            0.0
                        }
                    },
                )]
            })),
        )
    }

    pub fn pick(&mut self, a: Var, i: usize, j: usize) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a)[[i, j]]);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, ins, _| {
                let mut full = Array2::zeros(ins[0].dim());
                full[[i, j]] = g[[0, 0]];
                vec![full]
            })),
        )
    }

    /// One LSTM cell update from pre-activations `z = [i f g o]` (`b×4k`) and cell state
    /// `c` (`b×k`); returns `[h', c']` as `b×2k`.
    pub fn lstm_gates(&mut self, z: Var, c: Var) -> Var {
        let k = self.value(c).ncols();
        assert_eq!(self.value(z).ncols(), 4 * k, "gate width must be 4k");
        let value = lstm_forward(self.value(z), self.value(c));
        self.push(
            value,
            vec![z.0, c.0],
            Some(Box::new(move |g, ins, out| {
                let (z, c) = (ins[0], ins[1]);
                let mut dz = Array2::zeros(z.dim());
                let mut dc = Array2::zeros(c.dim());
                for r in 0..c.nrows() {
                    for j in 0..k {
                        let i = sigmoid(z[[r, j]]);
                        let f = sigmoid(z[[r, k + j]]);
                        let cand = z[[r, 2 * k + j]].tanh();
                        let o = sigmoid(z[[r, 3 * k + j]]);
                        let tc = out[[r, k + j]].tanh();
                        let gh = g[[r, j]];
                        let dnew = g[[r, k + j]] + gh * o * (1.0 - tc * tc);
                        dz[[r, j]] = dnew * cand * i * (1.0 - i);
                        dz[[r, k + j]] = dnew * c[[r, j]] * f * (1.0 - f);
                        dz[[r, 2 * k + j]] = dnew * i * (1.0 - cand * cand);
                        dz[[r, 3 * k + j]] = gh * tc * o * (1.0 - o);
                        dc[[r, j]] = dnew * f;
                    }
                }
                vec![dz, dc]
            })),
        )
    }

    /// Entropy of the masked softmax of `1×k` logits.
    pub fn masked_entropy(&mut self, logits: Var, mask: &[bool]) -> Var {
        let logp = self.masked_log_softmax(logits, mask);
        let lp = self.value(logp).clone();
        let value = Array2::from_elem(
            (1, 1),
            -lp.iter().zip(mask.iter()).filter(|(_, m)| **m).map(|(l, _)| l.exp() * l).sum::<f64>(),
        );
        let mask = mask.to_vec();
        self.push(
            value,
            vec![logp.0],
            Some(Box::new(move |g, ins, _| {
                vec![Array2::from_shape_fn(ins[0].dim(), |(_, j)| {
                    if mask[j] {
                        let l = ins[0][[0, j]];
                        -g[[0, 0]] * l.exp() * (l + 1.0)
                    } else {
                        0.0
                    }
                })]
            })),
        )
    }

    /// Negated clipped surrogate −min(ρA, clip(ρ, 1−ε, 1+ε)A) with ρ = exp(logp − old).
    pub fn ppo_clip(&mut self, logp: Var, old_logp: f64, advantage: f64, eps: f64) -> Var {
        let ratio = (self.scalar(logp) - old_logp).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
        let active = unclipped <= clipped;
        let value = Array2::from_elem((1, 1), -unclipped.min(clipped));
        self.push(
            value,
            vec![logp.0],
            Some(Box::new(move |g, _, _| {
                let d = if active { -ratio * advantage } else { 0.0 };
                vec![Array2::from_elem((1, 1), g[[0, 0]] * d)]
            })),
        )
    }

    /// Gradients of a `1×1` output with respect to every parameter read into the graph.
    pub fn backward(&self, out: Var, n_params: usize) -> Grads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones(self.nodes[out.0].value.dim()));
        let mut result = vec![None; n_params];
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(pid) = node.param {
                result[pid.0] = Some(g);
                continue;
            }
            let Some(back) = &node.backward else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[*i].value).collect();
            let parts = back(&g, &inputs, &node.value);
            for (input, part) in node.inputs.iter().zip(parts) {
                match &mut grads[*input] {
                    Some(acc) => *acc += &part,
                    slot => *slot = Some(part),
                }
            }
        }
        Grads(result)
    }
}

/// Max relative error between analytic gradients and central differences (h = 1e-5)
/// over every scalar of every parameter.
pub fn gradient_check(params: &mut Params, f: &dyn Fn(&mut Graph, &Params) -> Var) -> f64 {
    let mut g = Graph::new();
    let out = f(&mut g, params);
    let grads = g.backward(out, params.len());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for pid in 0..params.len() {
        let id = ParamId(pid);
        let dims = params.get(id).dim();
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let orig = params.get(id)[[i, j]];
                params.get_mut(id)[[i, j]] = orig + h;
                let mut gp = Graph::new();
                let vp = f(&mut gp, params);
                let up = gp.scalar(vp);
                params.get_mut(id)[[i, j]] = orig - h;
                let mut gm = Graph::new();
                let vm = f(&mut gm, params);
                let down = gm.scalar(vm);
                params.get_mut(id)[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |t| t[[i, j]]);
                let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    worst
}
