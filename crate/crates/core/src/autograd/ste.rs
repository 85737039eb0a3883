//! Straight-through estimator for the quantizers.
//!
//! The forward value of a quantized element is `dequantize(quantize(x))`.
//! Its backward pass uses the continuous surrogate obtained by dropping the
//! rounding step: the transfer curve followed by the affine map back onto
//! the input domain. For the signed power law the two affine maps cancel
//! and the surrogate is `g(x) = sign(x - mu) * (|x - mu| + eps)^gamma`
//! itself; for the unsigned one it is `x^gamma`.

use crate::error::{Error, Result};
use crate::quant::{log_range, QuantCode, QuantizerSpec, Transfer};
use crate::tensor::Tensor;

/// Partial derivatives of the surrogate at one input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Partials {
    pub dx: f64,
    pub dgamma: f64,
    pub dmu: f64,
}

/// Surrogate derivatives for a single input value.
///
/// Inputs outside the domain are clamped, so `dx` is zero there. `sign(0)`
/// is taken as zero, which makes `dgamma` vanish at `x == mu`; the unsigned
/// curve uses `dgamma = 0` at `x == 0` (the limit of `x^g ln x`).
pub fn surrogate_partials(spec: &QuantizerSpec, x: f64) -> Partials {
    let (lo, hi) = spec.domain().bounds();
    let inside = (lo..=hi).contains(&x);
    let xc = x.clamp(lo, hi);
    let mut p = match spec.transfer() {
        Transfer::Linear => Partials {
            dx: 1.0,
            ..Partials::default()
        },
        Transfer::Log { eps_log } => {
            let (rmin, rmax) = log_range(eps_log);
            Partials {
                dx: 1.0 / ((xc + eps_log) * (rmax - rmin)),
                ..Partials::default()
            }
        }
        Transfer::GammaUnsigned { gamma } => {
            if xc > 0.0 {
                let pw = xc.powf(gamma);
                Partials {
                    dx: gamma * xc.powf(gamma - 1.0),
                    dgamma: pw * xc.ln(),
                    dmu: 0.0,
                }
            } else {
                Partials {
                    dx: if gamma == 1.0 { 1.0 } else { 0.0 },
                    ..Partials::default()
                }
            }
        }
        Transfer::GammaSigned {
            gamma,
            mu,
            eps_stab,
        } => {
            let d = xc - mu;
            let a = d.abs() + eps_stab;
            let slope = if a > 0.0 {
                gamma * a.powf(gamma - 1.0)
            } else if gamma >= 1.0 {
                if gamma == 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let dgamma = if d == 0.0 || a <= 0.0 {
                0.0
            } else {
                d.signum() * a.powf(gamma) * a.ln()
            };
            Partials {
                dx: slope,
                dgamma,
                dmu: -slope,
            }
        }
    };
    if !inside {
        p.dx = 0.0;
    }
    p
}

pub(crate) fn forward_units(
    x: &Tensor,
    units: &[QuantizerSpec],
    unit_len: usize,
) -> Result<Tensor> {
    let nu = units.len();
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite quantizer input at {i}")));
        }
        let spec = &units[(i / unit_len) % nu];
        out.push(spec.dequantize(QuantCode(spec.code_of(v))));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Elementwise `dequantize(quantize(x))` with a single spec.
pub fn ste_forward(x: &Tensor, spec: &QuantizerSpec) -> Result<Tensor> {
    forward_units(x, std::slice::from_ref(spec), x.len().max(1))
}

/// Gradients of `sum(upstream * surrogate(x))` with respect to gamma and mu.
pub fn grad_gamma_mu(x: &Tensor, spec: &QuantizerSpec, upstream: &Tensor) -> Result<(f64, f64)> {
    if !spec.kind().has_learnable_params() {
        return Err(Error::Config(format!(
            "{} quantizer has no learnable parameters",
            spec.kind().as_str()
        )));
    }
    if x.shape() != upstream.shape() {
        return Err(Error::Shape {
            op: "grad_gamma_mu",
            lhs: x.shape().to_vec(),
            rhs: upstream.shape().to_vec(),
        });
    }
    let mut dg = 0.0;
    let mut dm = 0.0;
    for (&xi, &u) in x.data().iter().zip(upstream.data()) {
        let p = surrogate_partials(spec, xi);
        dg += u * p.dgamma;
        dm += u * p.dmu;
    }
    Ok((dg, dm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::quant::BitDepth;

    fn bd(n: u32) -> BitDepth {
        BitDepth::new(n).unwrap()
    }

    #[test]
    fn forward_examples() {
        let lin = QuantizerSpec::linear(bd(2));
        let y = ste_forward(&Tensor::from_vec(vec![0.5]), &lin).unwrap();
        assert_eq!(y.data(), &[1.0 / 3.0]);

        let sg = QuantizerSpec::gamma_signed(0.4, 0.0, 1e-3, bd(2)).unwrap();
        let y = ste_forward(&Tensor::from_vec(vec![0.0]), &sg).unwrap();
        assert_eq!(y.data(), &[2.0 * 2.0 / 3.0 - 1.0]);
    }

    #[test]
    fn gamma_gradient_vanishes_at_offset() {
        let spec = QuantizerSpec::gamma_signed(0.4, 0.2, 1e-3, bd(4)).unwrap();
        let p = surrogate_partials(&spec, 0.2);
        assert_eq!(p.dgamma, 0.0);
    }

    #[test]
    fn unsigned_gamma_gradient_closed_form() {
        let spec = QuantizerSpec::gamma_unsigned(0.5, bd(4)).unwrap();
        let (dg, dm) = grad_gamma_mu(
            &Tensor::from_vec(vec![0.25]),
            &spec,
            &Tensor::from_vec(vec![1.0]),
        )
        .unwrap();
        // 0.25^0.5 * ln(0.25)
        assert!((dg - 0.5 * 0.25f64.ln()).abs() < 1e-15);
        assert!((dg + std::f64::consts::LN_2).abs() < 1e-4);
        assert_eq!(dm, 0.0);
        let zero = surrogate_partials(&spec, 0.0);
        assert_eq!(zero.dgamma, 0.0);
    }

    #[test]
    fn linear_and_log_have_no_params() {
        let x = Tensor::from_vec(vec![0.3]);
        let u = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            grad_gamma_mu(&x, &QuantizerSpec::linear(bd(4)), &u),
            Err(Error::Config(_))
        ));
        assert!(grad_gamma_mu(&x, &QuantizerSpec::log(1.0, bd(4)).unwrap(), &u).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = QuantizerSpec::gamma_signed(0.6, -0.3, 1e-3, bd(2)).unwrap();
        let x = Tensor::from_vec((0..50).map(|i| -1.0 + i as f64 * 0.04).collect());
        let (dg, dm) = grad_gamma_mu(&x, &spec, &Tensor::zeros(&[50])).unwrap();
        assert_eq!((dg, dm), (0.0, 0.0));
    }

    #[test]
    fn graph_node_matches_standalone_functions() {
        let spec = QuantizerSpec::gamma_signed(0.4, 0.1, 1e-3, bd(2)).unwrap();
        let xs = Tensor::new(vec![1, 1, 5], vec![-0.9, -0.2, 0.1, 0.35, 0.8]).unwrap();
        let mut g = Graph::new();
        let x = g.param(xs.clone());
        let gm = g.param(Tensor::from_vec(vec![0.4]));
        let mu = g.param(Tensor::from_vec(vec![0.1]));
        let y = g.quantize(x, &spec, Some(gm), Some(mu)).unwrap();
        assert_eq!(g.value(y), &ste_forward(&xs, &spec).unwrap());
        let s = g.sum(y);
        g.backward(s).unwrap();
        let (dg, dm) = grad_gamma_mu(&xs, &spec, &Tensor::full(&[1, 1, 5], 1.0)).unwrap();
        assert_eq!(g.grad(gm).unwrap()[0], dg);
        assert_eq!(g.grad(mu).unwrap()[0], dm);
    }

    #[test]
    fn per_channel_params_route_by_channel() {
        let spec = QuantizerSpec::gamma_signed(0.4, 0.0, 1e-3, bd(2)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 2, 3], vec![0.2; 12]).unwrap());
        let gm = g.param(Tensor::from_vec(vec![0.4, 0.4]));
        let mu = g.param(Tensor::from_vec(vec![0.0, 0.5]));
        let y = g.quantize(x, &spec, Some(gm), Some(mu)).unwrap();
        let v = g.value(y).data().to_vec();
        // channel 0: mu=0 -> above mid; channel 1: mu=0.5 -> below mid
        assert!(v[0] > 0.0 && v[3] < 0.0 && v[6] > 0.0 && v[9] < 0.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let dmu = g.grad(mu).unwrap();
        assert!(dmu[0] < 0.0 && dmu[1] < 0.0);

        let bad = g.param(Tensor::from_vec(vec![0.4, 0.4, 0.4]));
        assert!(g.quantize(x, &spec, Some(bad), None).is_err());
    }
}
