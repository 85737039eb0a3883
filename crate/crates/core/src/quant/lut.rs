use std::fmt::Write as _;
use std::path::Path;

use super::{BitDepth, InputDomain, QuantCode, QuantizerKind, QuantizerSpec, Transfer};
use crate::error::{Error, Result};

/// Exhaustive input-code to output-code table for a quantizer, as it would
/// be loaded into a sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    pub spec: QuantizerSpec,
    pub input_bits: u32,
    pub codes: Vec<QuantCode>,
}

/// Evaluates `spec` on every point of the `input_bits` grid over its domain.
pub fn materialize_lut(spec: &QuantizerSpec, input_bits: u32) -> Result<Lut> {
    let in_depth = BitDepth::new(input_bits)?;
    let count = in_depth.levels() as usize + 1;
    let domain = spec.domain();
    let codes = (0..count)
        .map(|i| QuantCode(spec.code_of(domain.grid_point(i, count))))
        .collect();
    Ok(Lut {
        spec: *spec,
        input_bits,
        codes,
    })
}

impl Lut {
    pub fn lookup(&self, input_code: u32) -> Option<QuantCode> {
        self.codes.get(input_code as usize).copied()
    }

    /// Header line. The `eps` and `domain` tokens follow the fixed
    /// `lut v1 in_bits out_bits kind gamma mu` prefix.
    pub fn header(&self) -> String {
        let s = &self.spec;
        let mut h = format!(
            "lut v1 in_bits={} out_bits={} kind={} gamma={} mu={}",
            self.input_bits,
            s.bit_depth().bits(),
            s.kind().as_str(),
            s.gamma().unwrap_or(1.0),
            s.mu().unwrap_or(0.0),
        );
        match s.transfer() {
            Transfer::Log { eps_log } => write!(h, " eps={eps_log}").unwrap(),
            Transfer::GammaSigned { eps_stab, .. } => write!(h, " eps={eps_stab}").unwrap(),
            _ => {}
        }
        write!(h, " domain={}", s.domain().as_str()).unwrap();
        h
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for c in &self.codes {
            writeln!(out, "{}", c.0).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty LUT file"))?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("lut") || tokens.next() != Some("v1") {
            return Err(Error::parse(origin, 1, "expected `lut v1` header"));
        }
        let mut in_bits = None;
        let mut out_bits = None;
        let mut kind = None;
        let mut gamma = 1.0;
        let mut mu = 0.0;
        let mut eps = None;
        let mut domain = None;
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, 1, format!("malformed token `{tok}`")))?;
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(origin, 1, format!("bad number for `{k}`: {v}")))
            };
            match k {
                "in_bits" => in_bits = Some(num(v)? as u32),
                "out_bits" => out_bits = Some(num(v)? as u32),
                "kind" => {
                    kind = Some(
                        v.parse::<QuantizerKind>()
                            .map_err(|e| Error::parse(origin, 1, e.to_string()))?,
                    )
                }
                "gamma" => gamma = num(v)?,
                "mu" => mu = num(v)?,
                "eps" => eps = Some(num(v)?),
                "domain" => {
                    domain = Some(match v {
                        "unit" => InputDomain::Unit,
                        "signed" => InputDomain::Signed,
                        _ => return Err(Error::parse(origin, 1, format!("bad domain `{v}`"))),
                    })
                }
                _ => return Err(Error::parse(origin, 1, format!("unknown header key `{k}`"))),
            }
        }
        let missing = |name: &str| Error::parse(origin, 1, format!("header lacks `{name}`"));
        let in_bits = in_bits.ok_or_else(|| missing("in_bits"))?;
        let out_bits = BitDepth::new(out_bits.ok_or_else(|| missing("out_bits"))?)
            .map_err(|e| Error::parse(origin, 1, e.to_string()))?;
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let transfer = match kind {
            QuantizerKind::Linear => Transfer::Linear,
            QuantizerKind::Log => Transfer::Log {
                eps_log: eps.ok_or_else(|| missing("eps"))?,
            },
            QuantizerKind::GammaUnsigned => Transfer::GammaUnsigned { gamma },
            QuantizerKind::GammaSigned => Transfer::GammaSigned {
                gamma,
                mu,
                eps_stab: eps.unwrap_or(super::DEFAULT_EPS_STAB),
            },
        };
        let domain = domain.unwrap_or(match kind {
            QuantizerKind::GammaSigned => InputDomain::Signed,
            _ => InputDomain::Unit,
        });
        let spec = QuantizerSpec::new(transfer, out_bits, domain)
            .map_err(|e| Error::parse(origin, 1, e.to_string()))?;

        let expected = 1usize << in_bits;
        let top = out_bits.levels();
        let mut codes = Vec::with_capacity(expected);
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let c: u32 = line
                .parse()
                .map_err(|_| Error::parse(origin, i + 2, format!("bad code `{line}`")))?;
            if c > top {
                return Err(Error::parse(
                    origin,
                    i + 2,
                    format!("code {c} exceeds {top}"),
                ));
            }
            codes.push(QuantCode(c));
        }
        if codes.len() != expected {
            return Err(Error::parse(
                origin,
                codes.len() + 1,
                format!("expected {expected} entries, found {}", codes.len()),
            ));
        }
        Ok(Lut {
            spec,
            input_bits: in_bits,
            codes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bd(n: u32) -> BitDepth {
        BitDepth::new(n).unwrap()
    }

    #[test]
    fn linear_same_depth_is_identity() {
        let lut = materialize_lut(&QuantizerSpec::linear(bd(4)), 4).unwrap();
        let codes: Vec<u32> = lut.codes.iter().map(|c| c.0).collect();
        assert_eq!(codes, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn unit_gamma_table_equals_linear_table() {
        let a = materialize_lut(&QuantizerSpec::gamma_unsigned(1.0, bd(4)).unwrap(), 12).unwrap();
        let b = materialize_lut(&QuantizerSpec::linear(bd(4)), 12).unwrap();
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn signed_table_matches_scalar_formula() {
        let spec = QuantizerSpec::gamma_signed(0.4, 0.0, 0.0, bd(2)).unwrap();
        let lut = materialize_lut(&spec, 12).unwrap();
        for (i, c) in lut.codes.iter().enumerate() {
            let x = 2.0 * i as f64 / 4095.0 - 1.0;
            let g = if x == 0.0 {
                0.0
            } else {
                x.signum() * x.abs().powf(0.4)
            };
            let want = ((g + 1.0) / 2.0 * 3.0).round().clamp(0.0, 3.0) as u32;
            assert_eq!(c.0, want, "entry {i}");
        }
    }

    #[test]
    fn text_round_trip() {
        let spec = QuantizerSpec::gamma_signed(0.37, -0.2, 1e-3, bd(3)).unwrap();
        let lut = materialize_lut(&spec, 6).unwrap();
        let text = lut.to_text();
        assert!(
            text.starts_with("lut v1 in_bits=6 out_bits=3 kind=gamma_signed gamma=0.37 mu=-0.2")
        );
        let back = Lut::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, lut);
    }

    #[test]
    fn parse_rejects_short_tables_and_large_codes() {
        let p = Path::new("t.lut");
        let e = Lut::parse(
            "lut v1 in_bits=1 out_bits=1 kind=linear gamma=1 mu=0\n0\n",
            p,
        );
        assert!(matches!(e, Err(Error::Parse { .. })));
        let e = Lut::parse(
            "lut v1 in_bits=1 out_bits=1 kind=linear gamma=1 mu=0\n0\n2\n",
            p,
        );
        assert!(matches!(e, Err(Error::Parse { line: 3, .. })));
        assert!(Lut::parse("", p).is_err());
    }
}
