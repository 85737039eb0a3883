//! Finite-difference gradient checks shared by the integration suites.
#![allow(dead_code)]

use gammaquant::autograd::{surrogate_partials, Graph, Var};
use gammaquant::{BitDepth, QuantizerSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely; central differences
/// cannot resolve relative error far below `1e-16 / FD_STEP`.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckStats {
    pub trials: usize,
    pub comparisons: usize,
    pub worst_rel: f64,
}

impl CheckStats {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
        let rel = (analytic - numeric).abs() / scale;
        self.comparisons += 1;
        if rel.is_nan() || rel > self.worst_rel {
            self.worst_rel = rel;
        }
    }

    pub fn passed(&self) -> bool {
        self.worst_rel <= MAX_REL_ERR
    }
}

fn central(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    (f(at + FD_STEP) - f(at - FD_STEP)) / (2.0 * FD_STEP)
}

/// Signed surrogate written out independently of the library.
pub fn signed_surrogate(x: f64, gamma: f64, mu: f64, eps: f64) -> f64 {
    let d = x - mu;
    let s = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    s * (d.abs() + eps).powf(gamma)
}

pub fn unsigned_surrogate(x: f64, gamma: f64) -> f64 {
    x.powf(gamma)
}

pub fn log_surrogate(x: f64, eps: f64) -> f64 {
    ((x + eps).ln() - eps.ln()) / ((1.0 + eps).ln() - eps.ln())
}

/// Partial derivatives of the signed surrogate against central differences.
pub fn check_signed(trials: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = CheckStats::default();
    let bits = BitDepth::new(4).unwrap();
    while st.trials < trials {
        let gamma = rng.gen_range(0.1..2.0);
        let mu = rng.gen_range(-0.9..0.9);
        let eps = rng.gen_range(1e-4..1e-2);
        let x: f64 = rng.gen_range(-0.999..0.999);
        // keep the central stencil on one side of the kink at mu
        if (x - mu).abs() < 1e-2 {
            continue;
        }
        st.trials += 1;
        let spec = QuantizerSpec::gamma_signed(gamma, mu, eps, bits).unwrap();
        let p = surrogate_partials(&spec, x);
        st.record(p.dx, central(|v| signed_surrogate(v, gamma, mu, eps), x));
        st.record(
            p.dgamma,
            central(|g| signed_surrogate(x, g, mu, eps), gamma),
        );
        st.record(p.dmu, central(|m| signed_surrogate(x, gamma, m, eps), mu));
    }
    st
}

pub fn check_unsigned(trials: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = CheckStats::default();
    let bits = BitDepth::new(4).unwrap();
    for _ in 0..trials {
        let gamma = rng.gen_range(0.1..2.0);
        let x = rng.gen_range(1e-2..0.999);
        st.trials += 1;
        let spec = QuantizerSpec::gamma_unsigned(gamma, bits).unwrap();
        let p = surrogate_partials(&spec, x);
        st.record(p.dx, central(|v| unsigned_surrogate(v, gamma), x));
        st.record(p.dgamma, central(|g| unsigned_surrogate(x, g), gamma));
        st.record(p.dmu, 0.0);
    }
    st
}

pub fn check_log(trials: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = CheckStats::default();
    let bits = BitDepth::new(4).unwrap();
    for _ in 0..trials {
        let eps = 10f64.powf(rng.gen_range(-4.0..0.0));
        let x = rng.gen_range(1e-3..0.999);
        st.trials += 1;
        let spec = QuantizerSpec::log(eps, bits).unwrap();
        let p = surrogate_partials(&spec, x);
        st.record(p.dx, central(|v| log_surrogate(v, eps), x));
    }
    st
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// A random small network exercising every differentiable op; returns the
/// scalar output.
fn build(g: &mut Graph, leaves: &[Var], labels: &[usize], weights: &[f64], pool: usize) -> Var {
    let (x, w1, b1, w2, b2, aux) = (
        leaves[0], leaves[1], leaves[2], leaves[3], leaves[4], leaves[5],
    );
    let h = g.conv1d(x, w1, b1).unwrap();
    let h = g.relu(h);
    let h = g.max_pool1d(h, pool).unwrap();
    let h = g.tanh(h);
    let h = g.global_avg_pool(h).unwrap();
    let logits = g.matmul(h, w2).unwrap();
    let logits = g.add_bias(logits, b2).unwrap();
    let ce = g.cross_entropy(logits, labels, weights).unwrap();
    let probs = g.softmax(logits).unwrap();
    let sp = g.softplus(aux);
    let prod = g.mul(probs, sp).unwrap();
    let shifted = g.affine(prod, 0.7, 0.1);
    let both = g.add(shifted, prod).unwrap();
    let s = g.sum(both);
    let s = g.scale(s, 0.3);
    g.add(ce, s).unwrap()
}

/// Gradients of random small graphs against central differences on a few
/// random coordinates of every leaf.
pub fn check_network(trials: usize, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = CheckStats::default();
    for _ in 0..trials {
        let batch = rng.gen_range(1..4);
        let c_in = rng.gen_range(1..4);
        let c_hid = rng.gen_range(1..5);
        let k = rng.gen_range(1..4);
        let len = rng.gen_range(k + 3..14);
        let pool = rng.gen_range(1..3);
        let classes = rng.gen_range(2..5);
        let leaves = vec![
            rand_tensor(&mut rng, &[batch, c_in, len], 1.0),
            rand_tensor(&mut rng, &[c_hid, c_in, k], 1.0),
            rand_tensor(&mut rng, &[c_hid], 0.5),
            rand_tensor(&mut rng, &[c_hid, classes], 1.0),
            rand_tensor(&mut rng, &[classes], 0.5),
            rand_tensor(&mut rng, &[batch, classes], 1.0),
        ];
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let weights: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.5..2.0)).collect();

        let eval = |vals: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let vs: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
            let out = build(&mut g, &vs, &labels, &weights, pool);
            g.value(out).item()
        };
        let mut g = Graph::new();
        let vs: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vs, &labels, &weights, pool);
        g.backward(out).unwrap();
        st.trials += 1;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = g.grad_tensor(vs[li]);
            for _ in 0..3 {
                let j = rng.gen_range(0..leaf.len());
                let numeric = central(
                    |v| {
                        let mut vals = leaves.clone();
                        vals[li].data_mut()[j] = v;
                        eval(&vals)
                    },
                    leaf.data()[j],
                );
                st.record(analytic.data()[j], numeric);
            }
        }
    }
    st
}
