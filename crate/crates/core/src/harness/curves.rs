use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::quant::{log_range, QuantizerSpec};

use super::TrainedRun;

/// Samples every spec on a shared grid of its input domain. Columns are `x`
/// followed by `<label>_pre` (continuous value in code units) and
/// `<label>_code` for each spec.
pub fn export_curves(specs: &[QuantizerSpec], samples: usize) -> Result<String> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Config("no quantizer specs given".into()))?;
    let domain = first.domain();
    if let Some(s) = specs.iter().find(|s| s.domain() != domain) {
        return Err(Error::Config(format!(
            "curves need one input domain; got {} and {}",
            domain.as_str(),
            s.domain().as_str()
        )));
    }
    if samples < 2 {
        return Err(Error::Config("curves need at least 2 samples".into()));
    }
    let mut out = String::from("x");
    for (i, s) in specs.iter().enumerate() {
        let label = curve_label(i, s);
        write!(out, ",{label}_pre,{label}_code").unwrap();
    }
    out.push('\n');
    for i in 0..samples {
        let x = domain.grid_point(i, samples);
        write!(out, "{x}").unwrap();
        for s in specs {
            write!(out, ",{},{}", s.pre_round(x), s.code_of(x)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn curve_label(i: usize, s: &QuantizerSpec) -> String {
    let mut l = format!("s{i}_{}_{}b", s.kind().as_str(), s.bit_depth().bits());
    if let Some(g) = s.gamma() {
        write!(l, "_g{g}").unwrap();
    }
    if let Some(m) = s.mu() {
        write!(l, "_mu{m}").unwrap();
    }
    l
}

/// Normalized log curve `(ln(x + eps) - ln eps) / (ln(1 + eps) - ln eps)`.
pub fn log_curve(eps_log: f64, x: f64) -> f64 {
    let (lo, hi) = log_range(eps_log);
    ((x + eps_log).ln() - lo) / (hi - lo)
}

/// Largest absolute gap between the normalized log curve and `x^gamma` on
/// `grid` evenly spaced points of `[0, 1]`. Both curves run from 0 to 1, so
/// the bit depth does not enter.
pub fn compare_log_gamma(eps_log: f64, gamma: f64, grid: usize) -> Result<f64> {
    if !(eps_log > 0.0 && eps_log.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!(
            "need eps_log > 0 and gamma > 0, got {eps_log} and {gamma}"
        )));
    }
    if grid < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..grid {
        let x = i as f64 / (grid - 1) as f64;
        let g = if x == 0.0 { 0.0 } else { x.powf(gamma) };
        worst = worst.max((log_curve(eps_log, x) - g).abs());
    }
    Ok(worst)
}

/// The gamma in `[lo, hi]` minimizing [`compare_log_gamma`], found by a
/// coarse scan refined with golden-section search. Returns `(gamma, gap)`.
pub fn best_gamma_for_log(eps_log: f64, lo: f64, hi: f64, grid: usize) -> Result<(f64, f64)> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("bad gamma bracket [{lo}, {hi}]")));
    }
    let f = |g: f64| compare_log_gamma(eps_log, g, grid);
    let steps = 200;
    let h = (hi - lo) / steps as f64;
    let mut best = (lo, f(lo)?);
    for i in 1..=steps {
        let g = lo + h * i as f64;
        let d = f(g)?;
        if d < best.1 {
            best = (g, d);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-9 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
    }
    let g = (a + b) / 2.0;
    let dg = f(g)?;
    Ok(if dg < best.1 { (g, dg) } else { best })
}

/// `epoch,unit,gamma,mu` rows for one run.
pub fn trajectory_csv(run: &TrainedRun) -> String {
    let mut out = String::from("epoch,unit,gamma,mu\n");
    for p in &run.record.trajectory {
        for u in 0..p.gamma.len().max(p.mu.len()) {
            let g = p.gamma.get(u).map(|v| v.to_string()).unwrap_or_default();
            let m = p.mu.get(u).map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{u},{g},{m}", p.epoch).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::BitDepth;

    fn bd(n: u32) -> BitDepth {
        BitDepth::new(n).unwrap()
    }

    fn columns(csv: &str) -> Vec<Vec<f64>> {
        let mut lines = csv.lines();
        let n = lines.next().unwrap().split(',').count();
        let mut cols = vec![Vec::new(); n];
        for l in lines {
            for (c, v) in l.split(',').enumerate() {
                cols[c].push(v.parse().unwrap());
            }
        }
        cols
    }

    #[test]
    fn linear_curve_is_an_even_staircase() {
        let csv = export_curves(&[QuantizerSpec::linear(bd(2))], 4096).unwrap();
        let cols = columns(&csv);
        assert_eq!(cols.len(), 3);
        for (x, p) in cols[0].iter().zip(&cols[1]) {
            assert!((p - 3.0 * x).abs() < 1e-12);
        }
        let mut widths = [0usize; 4];
        for &c in &cols[2] {
            widths[c as usize] += 1;
        }
        // floor leaves the top code only for x = 1
        assert_eq!(widths[3], 1);
        assert!(widths[..3].iter().all(|&w| (1365..=1366).contains(&w)));
    }

    #[test]
    fn learned_gamma_curve_is_concave_and_monotone() {
        let spec = QuantizerSpec::gamma_unsigned(0.294, bd(4)).unwrap();
        let cols = columns(&export_curves(&[spec], 4096).unwrap());
        for c in [&cols[1], &cols[2]] {
            assert!(c.windows(2).all(|w| w[1] >= w[0]));
        }
        let mid = 2048;
        let chord = (cols[1][0] + cols[1][4095]) / 2.0;
        assert!(cols[1][mid] > chord);
    }

    #[test]
    fn signed_curve_crosses_mid_code_at_offset() {
        let spec = QuantizerSpec::gamma_signed(0.5, -0.2, 0.0, bd(4)).unwrap();
        assert_eq!(spec.pre_round(-0.2), 7.5);
        let csv = export_curves(&[spec], 11).unwrap();
        assert!(csv.starts_with("x,s0_gamma_signed_4b_g0.5_mu-0.2_pre,"));
    }

    #[test]
    fn mixed_domains_are_rejected() {
        let specs = [
            QuantizerSpec::linear(bd(2)),
            QuantizerSpec::linear_signed(bd(2)),
        ];
        assert!(export_curves(&specs, 16).is_err());
    }

    #[test]
    fn log_vs_gamma_limits() {
        assert!(compare_log_gamma(1e6, 1.0, 4096).unwrap() < 1e-6);
        assert_eq!(compare_log_gamma(0.5, 1.0, 2).unwrap(), 0.0);
        assert!(compare_log_gamma(0.0, 1.0, 16).is_err());
    }

    #[test]
    fn twelve_bit_log_against_fixed_gamma() {
        // eps = 1 code on a 12-bit scale; reference value from an independent numpy scan
        let d = compare_log_gamma(1.0 / 4095.0, 0.136, 4096).unwrap();
        assert!((d - 0.2393).abs() < 2e-3, "{d}");
    }

    #[test]
    fn best_fit_search_finds_the_scan_minimum() {
        let (g, d) = best_gamma_for_log(1.0 / 4096.0, 0.1, 0.5, 1024).unwrap();
        for i in 0..=40 {
            let other = 0.1 + 0.01 * i as f64;
            assert!(d <= compare_log_gamma(1.0 / 4096.0, other, 1024).unwrap() + 1e-12);
        }
        assert!((0.1..=0.5).contains(&g));
    }
}
