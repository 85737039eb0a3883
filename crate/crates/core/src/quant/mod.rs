//! Scalar ADC transfer functions.
//!
//! Every quantizer maps an analog value from its input domain onto an
//! integer code in `0..=2^bits - 1`. Four transfer curves are provided:
//!
//! * linear: `floor(x * (2^n - 1))` on `[0, 1]`, or the rounded affine map
//!   `round((x + 1) / 2 * (2^n - 1))` on `[-1, 1]`;
//! * logarithmic: `log(x + eps)` rescaled to the range it spans on `[0, 1]`;
//! * power law on `[0, 1]`: `floor(x^gamma * (2^n - 1))`;
//! * signed power law with offset on `[-1, 1]`:
//!   `round((sign(x - mu) * (|x - mu| + eps)^gamma + 1) / 2 * (2^n - 1))`.
//!
//! Inputs are clamped to the declared domain and codes are clamped to the
//! valid range, so the top code is always reachable. All arithmetic is `f64`.

mod lut;

pub use lut::{materialize_lut, Lut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default stabilizer added to `|x - mu|` in the signed power law.
pub const DEFAULT_EPS_STAB: f64 = 1e-3;

/// Target depth of the simulated ADC, between 1 and 16 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct BitDepth(u8);

impl BitDepth {
    pub const MAX: u32 = 16;

    pub fn new(bits: u32) -> Result<Self> {
        if (1..=Self::MAX).contains(&bits) {
            Ok(BitDepth(bits as u8))
        } else {
            Err(Error::Config(format!(
                "bit depth must be within 1..=16, got {bits}"
            )))
        }
    }

    pub fn bits(self) -> u32 {
        self.0 as u32
    }

    /// Largest output code, `2^bits - 1`.
    pub fn levels(self) -> u32 {
        (1u32 << self.0) - 1
    }

    pub(crate) fn scale(self) -> f64 {
        self.levels() as f64
    }
}

impl TryFrom<u32> for BitDepth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        BitDepth::new(bits)
    }
}

impl From<BitDepth> for u32 {
    fn from(b: BitDepth) -> u32 {
        b.bits()
    }
}

impl std::fmt::Display for BitDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A digital output value of a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantCode(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDomain {
    /// `[0, 1]`
    #[serde(alias = "unit_interval")]
    Unit,
    /// `[-1, 1]`
    #[serde(alias = "signed_unit")]
    Signed,
}

impl InputDomain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            InputDomain::Unit => (0.0, 1.0),
            InputDomain::Signed => (-1.0, 1.0),
        }
    }

    pub fn clamp(self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        x.clamp(lo, hi)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputDomain::Unit => "unit",
            InputDomain::Signed => "signed",
        }
    }

    /// The `i`-th of `count` evenly spaced points covering the domain.
    pub fn grid_point(self, i: usize, count: usize) -> f64 {
        let t = if count <= 1 {
            0.0
        } else {
            i as f64 / (count - 1) as f64
        };
        match self {
            InputDomain::Unit => t,
            InputDomain::Signed => 2.0 * t - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    Linear,
    Log,
    GammaUnsigned,
    GammaSigned,
}

impl QuantizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantizerKind::Linear => "linear",
            QuantizerKind::Log => "log",
            QuantizerKind::GammaUnsigned => "gamma_unsigned",
            QuantizerKind::GammaSigned => "gamma_signed",
        }
    }

    pub fn has_learnable_params(self) -> bool {
        matches!(
            self,
            QuantizerKind::GammaUnsigned | QuantizerKind::GammaSigned
        )
    }
}

impl std::str::FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(QuantizerKind::Linear),
            "log" => Ok(QuantizerKind::Log),
            "gamma_unsigned" => Ok(QuantizerKind::GammaUnsigned),
            "gamma_signed" => Ok(QuantizerKind::GammaSigned),
            other => Err(Error::Config(format!("unknown quantizer kind `{other}`"))),
        }
    }
}

/// Shape of the transfer curve and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transfer {
    Linear,
    Log { eps_log: f64 },
    GammaUnsigned { gamma: f64 },
    GammaSigned { gamma: f64, mu: f64, eps_stab: f64 },
}

/// A fully specified quantizer. Construct through the helpers or
/// [`QuantizerSpec::new`]; deserialization runs the same validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct QuantizerSpec {
    transfer: Transfer,
    bit_depth: BitDepth,
    domain: InputDomain,
}

impl QuantizerSpec {
    pub fn new(transfer: Transfer, bit_depth: BitDepth, domain: InputDomain) -> Result<Self> {
        let spec = QuantizerSpec {
            transfer,
            bit_depth,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(bit_depth: BitDepth) -> Self {
        QuantizerSpec {
            transfer: Transfer::Linear,
            bit_depth,
            domain: InputDomain::Unit,
        }
    }

    pub fn linear_signed(bit_depth: BitDepth) -> Self {
        QuantizerSpec {
            transfer: Transfer::Linear,
            bit_depth,
            domain: InputDomain::Signed,
        }
    }

    pub fn log(eps_log: f64, bit_depth: BitDepth) -> Result<Self> {
        Self::new(Transfer::Log { eps_log }, bit_depth, InputDomain::Unit)
    }

    pub fn gamma_unsigned(gamma: f64, bit_depth: BitDepth) -> Result<Self> {
        Self::new(
            Transfer::GammaUnsigned { gamma },
            bit_depth,
            InputDomain::Unit,
        )
    }

    pub fn gamma_signed(gamma: f64, mu: f64, eps_stab: f64, bit_depth: BitDepth) -> Result<Self> {
        Self::new(
            Transfer::GammaSigned {
                gamma,
                mu,
                eps_stab,
            },
            bit_depth,
            InputDomain::Signed,
        )
    }

    fn validate(&self) -> Result<()> {
        match self.transfer {
            Transfer::Linear => Ok(()),
            Transfer::Log { eps_log } => {
                if !(eps_log.is_finite() && eps_log > 0.0) {
                    return Err(Error::Config(format!("eps_log must be > 0, got {eps_log}")));
                }
                if self.domain != InputDomain::Unit {
                    return Err(Error::Config(
                        "log quantization requires the unit input domain".into(),
                    ));
                }
                Ok(())
            }
            Transfer::GammaUnsigned { gamma } => {
                check_gamma(gamma)?;
                if self.domain != InputDomain::Unit {
                    return Err(Error::Config(
                        "gamma_unsigned requires the unit input domain".into(),
                    ));
                }
                Ok(())
            }
            Transfer::GammaSigned {
                gamma,
                mu,
                eps_stab,
            } => {
                check_gamma(gamma)?;
                check_mu(mu)?;
                if !(eps_stab.is_finite() && eps_stab >= 0.0) {
                    return Err(Error::Config(format!(
                        "eps_stab must be >= 0, got {eps_stab}"
                    )));
                }
                if self.domain != InputDomain::Signed {
                    return Err(Error::Config(
                        "gamma_signed requires the signed input domain".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn transfer(&self) -> Transfer {
        self.transfer
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn domain(&self) -> InputDomain {
        self.domain
    }

    pub fn kind(&self) -> QuantizerKind {
        match self.transfer {
            Transfer::Linear => QuantizerKind::Linear,
            Transfer::Log { .. } => QuantizerKind::Log,
            Transfer::GammaUnsigned { .. } => QuantizerKind::GammaUnsigned,
            Transfer::GammaSigned { .. } => QuantizerKind::GammaSigned,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.transfer {
            Transfer::GammaUnsigned { gamma } | Transfer::GammaSigned { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match self.transfer {
            Transfer::GammaSigned { mu, .. } => Some(mu),
            _ => None,
        }
    }

    /// Same curve at a different bit depth.
    pub fn with_bit_depth(&self, bit_depth: BitDepth) -> Self {
        QuantizerSpec { bit_depth, ..*self }
    }

    /// Replaces the learnable parameters; `mu` is ignored for the unsigned curve.
    pub fn with_params(&self, gamma: f64, mu: f64) -> Result<Self> {
        let transfer = match self.transfer {
            Transfer::GammaUnsigned { .. } => Transfer::GammaUnsigned { gamma },
            Transfer::GammaSigned { eps_stab, .. } => Transfer::GammaSigned {
                gamma,
                mu,
                eps_stab,
            },
            _ => {
                return Err(Error::Config(format!(
                    "{} quantizer has no learnable parameters",
                    self.kind().as_str()
                )))
            }
        };
        QuantizerSpec::new(transfer, self.bit_depth, self.domain)
    }

    /// Continuous value in code units before rounding, for an input already
    /// clamped to the domain.
    fn pre_round_clamped(&self, x: f64) -> f64 {
        let scale = self.bit_depth.scale();
        match (self.transfer, self.domain) {
            (Transfer::Linear, InputDomain::Unit) => x * scale,
            (Transfer::Linear, InputDomain::Signed) => (x + 1.0) / 2.0 * scale,
            (Transfer::Log { eps_log }, _) => {
                let (lo, hi) = log_range(eps_log);
                ((x + eps_log).ln() - lo) / (hi - lo) * scale
            }
            (Transfer::GammaUnsigned { gamma }, _) => unsigned_power(x, gamma) * scale,
            (
                Transfer::GammaSigned {
                    gamma,
                    mu,
                    eps_stab,
                },
                _,
            ) => (signed_power(x, gamma, mu, eps_stab) + 1.0) / 2.0 * scale,
        }
    }

    /// Continuous pre-rounding value in code units (input is clamped first).
    pub fn pre_round(&self, x: f64) -> f64 {
        self.pre_round_clamped(self.domain.clamp(x))
    }

    fn rounds_to_nearest(&self) -> bool {
        matches!(
            (self.transfer, self.domain),
            (Transfer::GammaSigned { .. }, _) | (Transfer::Linear, InputDomain::Signed)
        )
    }

    /// Code for a finite input. NaN is not checked here.
    #[inline]
    pub(crate) fn code_of(&self, x: f64) -> u32 {
        let v = self.pre_round(x);
        let r = if self.rounds_to_nearest() {
            v.round()
        } else {
            v.floor()
        };
        r.clamp(0.0, self.bit_depth.scale()) as u32
    }

    pub fn quantize(&self, x: f64) -> Result<QuantCode> {
        check_finite(x)?;
        Ok(QuantCode(self.code_of(x)))
    }

    /// Dequantized value, i.e. the code mapped affinely back onto the domain.
    pub fn dequantize(&self, code: QuantCode) -> f64 {
        dequantize(code, self)
    }

    /// Analog value representative of `code`: the midpoint of the input
    /// interval the quantizer maps onto that code. Re-quantizing it returns
    /// `code` whenever the code is reachable.
    pub fn reconstruct(&self, code: QuantCode) -> f64 {
        let (a, b) = self.domain.bounds();
        let k = code.0;
        let first_at_least = |target: u32| -> Option<f64> {
            if self.code_of(a) >= target {
                return Some(a);
            }
            if self.code_of(b) < target {
                return None;
            }
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.code_of(mid) >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(hi)
        };
        let Some(start) = first_at_least(k) else {
            return b;
        };
        let candidate = match first_at_least(k + 1) {
            Some(end) => 0.5 * (start + end),
            None => 0.5 * (start + b),
        };
        if self.code_of(candidate) == k {
            candidate
        } else {
            start
        }
    }
}

/// `x^gamma` with `0^gamma = 0`.
#[inline]
pub(crate) fn unsigned_power(x: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(gamma)
    }
}

/// `sign(x - mu) * (|x - mu| + eps)^gamma`, with `sign(0) = 0`.
#[inline]
pub(crate) fn signed_power(x: f64, gamma: f64, mu: f64, eps: f64) -> f64 {
    let d = x - mu;
    if d == 0.0 {
        0.0
    } else {
        d.signum() * (d.abs() + eps).powf(gamma)
    }
}

/// Range of `log(x + eps)` over `[0, 1]`.
pub fn log_range(eps_log: f64) -> (f64, f64) {
    (eps_log.ln(), (1.0 + eps_log).ln())
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("input must be finite, got {x}")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be > 0, got {gamma}")))
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("mu must lie in (-1, 1), got {mu}")))
    }
}

pub fn quantize_linear(x: f64, n: BitDepth) -> Result<QuantCode> {
    QuantizerSpec::linear(n).quantize(x)
}

/// Rounded affine map of `[-1, 1]` onto the codes.
pub fn quantize_linear_signed(x: f64, n: BitDepth) -> Result<QuantCode> {
    QuantizerSpec::linear_signed(n).quantize(x)
}

/// Log quantization against an explicit `[range_min, range_max]` of `log(x + eps)`.
pub fn quantize_log(
    x: f64,
    eps_log: f64,
    n: BitDepth,
    range_min: f64,
    range_max: f64,
) -> Result<QuantCode> {
    check_finite(x)?;
    if !(eps_log.is_finite() && eps_log > 0.0) {
        return Err(Error::Config(format!("eps_log must be > 0, got {eps_log}")));
    }
    if !(range_max > range_min) {
        return Err(Error::Config(format!(
            "log range is empty: [{range_min}, {range_max}]"
        )));
    }
    let scale = n.scale();
    let v = ((x.clamp(0.0, 1.0) + eps_log).ln() - range_min) / (range_max - range_min) * scale;
    Ok(QuantCode(v.floor().clamp(0.0, scale) as u32))
}

pub fn quantize_gamma_unsigned(x: f64, gamma: f64, n: BitDepth) -> Result<QuantCode> {
    QuantizerSpec::gamma_unsigned(gamma, n)?.quantize(x)
}

pub fn quantize_gamma_signed(
    x: f64,
    gamma: f64,
    mu: f64,
    eps_stab: f64,
    n: BitDepth,
) -> Result<QuantCode> {
    QuantizerSpec::gamma_signed(gamma, mu, eps_stab, n)?.quantize(x)
}

pub fn dequantize(code: QuantCode, spec: &QuantizerSpec) -> f64 {
    let scale = spec.bit_depth.scale();
    match spec.domain {
        InputDomain::Unit => code.0 as f64 / scale,
        InputDomain::Signed => 2.0 * code.0 as f64 / scale - 1.0,
    }
}

/// Serialized form: `{"kind": "...", "bits": n, ...params}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    kind: QuantizerKind,
    bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<InputDomain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_log: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_stab: Option<f64>,
}

impl TryFrom<SpecRepr> for QuantizerSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let bits = BitDepth::new(r.bits)?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{} quantizer needs `{name}`", r.kind.as_str())))
        };
        let (transfer, natural) = match r.kind {
            QuantizerKind::Linear => (Transfer::Linear, InputDomain::Unit),
            QuantizerKind::Log => (
                Transfer::Log {
                    eps_log: need(r.eps_log, "eps_log")?,
                },
                InputDomain::Unit,
            ),
            QuantizerKind::GammaUnsigned => (
                Transfer::GammaUnsigned {
                    gamma: need(r.gamma, "gamma")?,
                },
                InputDomain::Unit,
            ),
            QuantizerKind::GammaSigned => (
                Transfer::GammaSigned {
                    gamma: need(r.gamma, "gamma")?,
                    mu: r.mu.unwrap_or(0.0),
                    eps_stab: r.eps_stab.unwrap_or(DEFAULT_EPS_STAB),
                },
                InputDomain::Signed,
            ),
        };
        QuantizerSpec::new(transfer, bits, r.domain.unwrap_or(natural))
    }
}

impl From<QuantizerSpec> for SpecRepr {
    fn from(s: QuantizerSpec) -> Self {
        let mut r = SpecRepr {
            kind: s.kind(),
            bits: s.bit_depth.bits(),
            domain: Some(s.domain),
            gamma: None,
            mu: None,
            eps_log: None,
            eps_stab: None,
        };
        match s.transfer {
            Transfer::Linear => {}
            Transfer::Log { eps_log } => r.eps_log = Some(eps_log),
            Transfer::GammaUnsigned { gamma } => r.gamma = Some(gamma),
            Transfer::GammaSigned {
                gamma,
                mu,
                eps_stab,
            } => {
                r.gamma = Some(gamma);
                r.mu = Some(mu);
                r.eps_stab = Some(eps_stab);
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bd(n: u32) -> BitDepth {
        BitDepth::new(n).unwrap()
    }

    #[test]
    fn bit_depth_bounds() {
        assert!(BitDepth::new(0).is_err());
        assert!(BitDepth::new(17).is_err());
        assert_eq!(bd(1).levels(), 1);
        assert_eq!(bd(16).levels(), 65535);
    }

    #[test]
    fn linear_examples() {
        assert_eq!(quantize_linear(0.0, bd(4)).unwrap(), QuantCode(0));
        assert_eq!(quantize_linear(1.0, bd(4)).unwrap(), QuantCode(15));
        assert_eq!(quantize_linear(0.5, bd(2)).unwrap(), QuantCode(1));
        assert_eq!(quantize_linear(1.7, bd(4)).unwrap(), QuantCode(15));
        assert_eq!(quantize_linear(-0.2, bd(4)).unwrap(), QuantCode(0));
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        assert!(matches!(
            quantize_linear(f64::NAN, bd(4)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            quantize_gamma_signed(f64::INFINITY, 0.4, 0.0, 1e-3, bd(2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn log_examples() {
        let (lo, hi) = log_range(1.0);
        assert_eq!(quantize_log(0.0, 1.0, bd(4), lo, hi).unwrap(), QuantCode(0));
        assert_eq!(
            quantize_log(1.0, 1.0, bd(4), lo, hi).unwrap(),
            QuantCode(15)
        );
        // (ln(0.25 + eps) - ln eps) / (ln(1 + eps) - ln eps) * 15 = 12.5014
        let eps = 0.00024414;
        let (lo, hi) = log_range(eps);
        assert_eq!(
            quantize_log(0.25, eps, bd(4), lo, hi).unwrap(),
            QuantCode(12)
        );
        assert_eq!(
            QuantizerSpec::log(eps, bd(4))
                .unwrap()
                .quantize(0.25)
                .unwrap(),
            QuantCode(12)
        );
        assert!(matches!(
            quantize_log(0.5, 1.0, bd(4), 1.0, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gamma_unsigned_examples() {
        assert_eq!(
            quantize_gamma_unsigned(0.25, 0.5, bd(4)).unwrap(),
            QuantCode(7)
        );
        // 0.5^0.294 * 15 = 12.2346
        assert_eq!(
            quantize_gamma_unsigned(0.5, 0.294, bd(4)).unwrap(),
            QuantCode(12)
        );
        assert_eq!(
            quantize_gamma_unsigned(0.0, 0.3, bd(4)).unwrap(),
            QuantCode(0)
        );
        assert!(matches!(
            quantize_gamma_unsigned(0.5, 0.0, bd(4)),
            Err(Error::Config(_))
        ));
        assert!(quantize_gamma_unsigned(0.5, -1.0, bd(4)).is_err());
    }

    #[test]
    fn gamma_signed_examples() {
        assert_eq!(
            quantize_gamma_signed(0.0, 1.0, 0.0, 0.0, bd(2)).unwrap(),
            QuantCode(2)
        );
        assert_eq!(
            quantize_gamma_signed(-1.0, 1.0, 0.0, 0.0, bd(4)).unwrap(),
            QuantCode(0)
        );
        assert_eq!(
            quantize_gamma_signed(-0.5, 0.5, 0.0, 0.0, bd(2)).unwrap(),
            QuantCode(0)
        );
        assert!(quantize_gamma_signed(0.0, 0.4, 1.0, 0.0, bd(2)).is_err());
        assert!(quantize_gamma_signed(0.0, 0.4, -1.2, 0.0, bd(2)).is_err());
        assert!(quantize_gamma_signed(0.0, 0.0, 0.0, 0.0, bd(2)).is_err());
    }

    #[test]
    fn domain_mismatch_is_rejected() {
        let g = Transfer::GammaSigned {
            gamma: 0.4,
            mu: 0.0,
            eps_stab: 1e-3,
        };
        assert!(QuantizerSpec::new(g, bd(2), InputDomain::Unit).is_err());
        let u = Transfer::GammaUnsigned { gamma: 0.4 };
        assert!(QuantizerSpec::new(u, bd(2), InputDomain::Signed).is_err());
        let l = Transfer::Log { eps_log: 1.0 };
        assert!(QuantizerSpec::new(l, bd(2), InputDomain::Signed).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(QuantizerSpec::linear(bd(4)).dequantize(QuantCode(15)), 1.0);
        assert_eq!(
            QuantizerSpec::linear_signed(bd(2)).dequantize(QuantCode(0)),
            -1.0
        );
    }

    #[test]
    fn linear_round_trip_on_12_bit_grid() {
        for n in 1..=16 {
            let spec = QuantizerSpec::linear(bd(n));
            let step = 1.0 / spec.bit_depth().levels() as f64;
            for i in 0..4096 {
                let x = i as f64 / 4095.0;
                let back = spec.dequantize(spec.quantize(x).unwrap());
                assert!((back - x).abs() <= step + 1e-15, "n={n} x={x} back={back}");
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let spec = QuantizerSpec::gamma_signed(0.4, -0.1, 1e-3, bd(2)).unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        let back: QuantizerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);

        let d: QuantizerSpec =
            serde_json::from_str(r#"{"kind":"gamma_signed","bits":4,"gamma":0.5}"#).unwrap();
        assert_eq!(d.mu(), Some(0.0));
        assert_eq!(d.domain(), InputDomain::Signed);
        assert!(serde_json::from_str::<QuantizerSpec>(
            r#"{"kind":"gamma_signed","bits":4,"gamma":-1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<QuantizerSpec>(r#"{"kind":"log","bits":4}"#).is_err());
        assert!(serde_json::from_str::<QuantizerSpec>(r#"{"kind":"linear","bits":40}"#).is_err());
    }

    #[test]
    fn reconstruct_lands_inside_the_bin() {
        let spec = QuantizerSpec::gamma_signed(0.4, 0.3, 1e-3, bd(5)).unwrap();
        for i in 0..4096 {
            let x = InputDomain::Signed.grid_point(i, 4096);
            let c = spec.quantize(x).unwrap();
            assert_eq!(spec.quantize(spec.reconstruct(c)).unwrap(), c);
        }
    }

    fn any_spec() -> impl Strategy<Value = QuantizerSpec> {
        let bits = 1u32..=16;
        prop_oneof![
            bits.clone().prop_map(|n| QuantizerSpec::linear(bd(n))),
            bits.clone()
                .prop_map(|n| QuantizerSpec::linear_signed(bd(n))),
            (bits.clone(), 1e-6f64..10.0).prop_map(|(n, e)| QuantizerSpec::log(e, bd(n)).unwrap()),
            (bits.clone(), 0.05f64..3.0)
                .prop_map(|(n, g)| QuantizerSpec::gamma_unsigned(g, bd(n)).unwrap()),
            (bits, 0.05f64..3.0, -0.95f64..0.95, 0.0f64..0.01)
                .prop_map(|(n, g, m, e)| { QuantizerSpec::gamma_signed(g, m, e, bd(n)).unwrap() }),
        ]
    }

    proptest! {
        #[test]
        fn codes_in_range_and_monotone(spec in any_spec()) {
            let top = spec.bit_depth().levels();
            let mut prev = 0u32;
            for i in 0..4096 {
                let x = spec.domain().grid_point(i, 4096);
                let c = spec.quantize(x).unwrap().0;
                prop_assert!(c <= top);
                prop_assert!(c >= prev, "not monotone at x={}", x);
                prev = c;
            }
        }

        #[test]
        fn requantizing_the_representative_is_a_fixed_point(spec in any_spec(), t in 0.0f64..=1.0) {
            let (a, b) = spec.domain().bounds();
            let x = a + t * (b - a);
            let c = spec.quantize(x).unwrap();
            prop_assert_eq!(spec.quantize(spec.reconstruct(c)).unwrap(), c);
        }

        #[test]
        fn dequantized_linear_codes_are_fixed_points(n in 1u32..=16, t in 0.0f64..=1.0, signed in any::<bool>()) {
            let spec = if signed { QuantizerSpec::linear_signed(bd(n)) } else { QuantizerSpec::linear(bd(n)) };
            let (a, b) = spec.domain().bounds();
            let c = spec.quantize(a + t * (b - a)).unwrap();
            prop_assert_eq!(spec.quantize(spec.dequantize(c)).unwrap(), c);
        }

        #[test]
        fn signed_pre_round_is_symmetric_about_mu(g in 0.05f64..3.0, mu in -0.9f64..0.9, u in 0.0f64..1.0, n in 1u32..=16) {
            let spec = QuantizerSpec::gamma_signed(g, mu, 0.0, bd(n)).unwrap();
            let d = u * (1.0 - mu.abs());
            let sum = spec.pre_round(mu + d) + spec.pre_round(mu - d);
            let top = spec.bit_depth().levels() as f64;
            prop_assert!((sum - top).abs() <= 1e-12 * top, "sum={} top={}", sum, top);
        }
    }
}
