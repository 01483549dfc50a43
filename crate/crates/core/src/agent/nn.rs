use rand::Rng;

use super::autodiff::{Graph, Var};
use super::params::{ParamId, Params};
use ndarray::Array2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut Params, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: params.add_uniform(&format!("{name}.w"), (input, output), 1.0, rng),
            b: params.add_zeros(&format!("{name}.b"), (1, output)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let xw = g.matmul(x, w);
        g.add(xw, b)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(params: &mut Params, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Params, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x);
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        x
    }
}

/// LSTM cell with explicit gates, gate order (input, forget, candidate, output).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Lstm {
            wx: params.add_uniform(&format!("{name}.wx"), (input, 4 * hidden), 1.0, rng),
            wh: params.add_uniform(&format!("{name}.wh"), (hidden, 4 * hidden), 1.0, rng),
            b: params.add_zeros(&format!("{name}.b"), (1, 4 * hidden)),
            hidden,
        }
    }

    /// Runs over `steps` (each `batch×input`) and returns the final hidden state.
    pub fn run(&self, g: &mut Graph, p: &Params, steps: &[Var], reverse: bool) -> Var {
        let batch = g.value(steps[0]).nrows();
        let k = self.hidden;
        let wx = g.param(p, self.wx);
        let wh = g.param(p, self.wh);
        let b = g.param(p, self.b);
        let mut h = g.constant(Array2::zeros((batch, k)));
        let mut c = g.constant(Array2::zeros((batch, k)));
        let order: Vec<usize> = if reverse { (0..steps.len()).rev().collect() } else { (0..steps.len()).collect() };
        for t in order {
            let xw = g.matmul(steps[t], wx);
            let hw = g.matmul(h, wh);
            let z = g.add(xw, hw);
            let z = g.add(z, b);
            let hc = g.lstm_gates(z, c);
            h = g.slice_cols(hc, 0, k);
            c = g.slice_cols(hc, k, 2 * k);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(params, &format!("{name}.fwd"), input, hidden, rng),
            backward: Lstm::new(params, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// `batch × 2·hidden`: final forward state beside final backward state.
    pub fn run(&self, g: &mut Graph, p: &Params, steps: &[Var]) -> Var {
        let f = self.forward.run(g, p, steps, false);
        let b = self.backward.run(g, p, steps, true);
        g.concat_cols(&[f, b])
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of character 1- to 3-grams of `⟨label⟩`, unit L2 norm.
/// The empty label maps to the zero vector.
pub fn embed_text(label: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if label.is_empty() || dim == 0 {
        return v;
    }
    let chars: Vec<char> = std::iter::once('\u{2}').chain(label.chars()).chain(std::iter::once('\u{3}')).collect();
    for n in 1..=3 {
        for gram in chars.windows(n) {
            let s: String = gram.iter().collect();
            let h = fnv1a(s.as_bytes());
            let idx = (h % dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::autodiff::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let a = embed_text("2015", 32);
        assert_eq!(a, embed_text("2015", 32));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let b = embed_text("2016", 32);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos < 1.0);
        // oracle: recompute the 3-gram "016" bucket that only the second label contains
        let h = fnv1a("016".as_bytes());
        assert!(b[(h % 32) as usize] != 0.0 || cos < 1.0);
        assert!(embed_text("", 8).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bilstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Params::default();
        let lstm = BiLstm::new(&mut p, "l", 3, 2, &mut rng);
        let head = Linear::new(&mut p, "h", 4, 1, &mut rng);
        let xs: Vec<Array2<f64>> =
            (0..3).map(|t| Array2::from_shape_fn((2, 3), |(i, j)| (t + i + 2 * j) as f64 * 0.3 - 0.5)).collect();
        let f = move |g: &mut Graph, p: &Params| {
            let steps: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let h = lstm.run(g, p, &steps);
            let pooled = g.mean_rows(h);
            let y = head.forward(g, p, pooled);
            g.sum_all(y)
        };
        assert!(gradient_check(&mut p, &f) < 1e-4);
    }

    #[test]
    fn mlp_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = Params::default();
        let mlp = Mlp::new(&mut p, "m", &[3, 4, 2], &mut rng);
        let f = move |g: &mut Graph, p: &Params| {
            let x = g.constant(Array2::from_shape_fn((2, 3), |(i, j)| (i as f64) - 0.4 * j as f64 + 0.1));
            let y = mlp.forward(g, p, x);
            let y = g.square(y);
            g.sum_all(y)
        };
        assert!(gradient_check(&mut p, &f) < 1e-4);
    }
}
