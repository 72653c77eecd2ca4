//! Normalizing constants: Monte Carlo estimation of the median crossing
//! distance, exponent fits and scaling-ratio terms.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::Region;
use crate::error::{precondition, Error, Result};
use crate::gff::{heat_mollify, heat_truncation, sample_gff};
use crate::grid::{GridField, GridSpec};
use crate::lfpp::build_graph;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{bootstrap_median_stderr, linear_fit, median};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub eps: f64,
    pub a_hat: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub xi: f64,
    /// Sorted by decreasing `eps`.
    pub entries: Vec<ScalingEntry>,
    pub q_hat: Option<f64>,
}

/// Options for [`estimate_a_eps`].
#[derive(Clone, Copy, Debug)]
pub struct CrossingOptions {
    pub torus_factor: f64,
    /// When false the field is identically zero (degenerate check).
    pub variance: bool,
    /// Constant added to every sampled field.
    pub shift: f64,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        Self { torus_factor: 2.0, variance: true, shift: 0.0 }
    }
}

/// Window covering `[0,1]^2` plus the heat-kernel margin, aligned so that
/// the lines `x = 0`, `x = 1` are lattice columns.
pub fn crossing_window(eps: f64, spacing: f64) -> Result<(GridSpec, usize, usize)> {
    let n = (1.0 / spacing).round() as usize;
    if ((n as f64) * spacing - 1.0).abs() > 1e-9 {
        return precondition(format!("spacing {spacing} must divide the unit square"));
    }
    let k = (heat_truncation(eps) / spacing).floor() as usize + 1;
    let spec = GridSpec::new(n + 2 * k + 1, n + 2 * k + 1, spacing, Complex64::new(-(k as f64) * spacing, -(k as f64) * spacing))?;
    Ok((spec, k, n))
}

/// Left-right crossing distance of `[0,1]^2` for one mollified field.
pub fn crossing_distance(mollified: &GridField, xi: f64) -> Result<f64> {
    let g = build_graph(mollified, &Region::rect(-1e-9, -1e-9, 1.0 + 1e-9, 1.0 + 1e-9), xi)?;
    let left = g.mask(&Region::rect(-1e-9, -1e-9, 1e-9, 1.0 + 1e-9));
    let right = g.mask(&Region::rect(1.0 - 1e-9, -1e-9, 1.0 + 1e-9, 1.0 + 1e-9));
    Ok(g.set_distance_masked(&left, &right, &g.active)?.raw.unwrap())
}

/// Crossing distances of `n_samples` independent replicas.
pub fn crossing_samples(eps: f64, xi: f64, spacing: f64, n_samples: usize, seed: u64, opts: CrossingOptions) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return precondition("n_samples must be at least 1");
    }
    if eps < 2.0 * spacing {
        return precondition(format!("spacing {spacing} too coarse for eps = {eps}"));
    }
    let (spec, _, _) = crossing_window(eps, spacing)?;
    (0..n_samples)
        .into_par_iter()
        .map(|r| {
            let field = if opts.variance {
                sample_gff(&spec, opts.torus_factor, derive_seed(seed, &[r as u64]))?
            } else {
                GridField::constant(spec, 0.0)
            };
            let field = if opts.shift != 0.0 { crate::gff::add_scalar(&field, opts.shift) } else { field };
            let m = heat_mollify(&field, eps)?;
            crossing_distance(&m, xi)
        })
        .collect()
}

/// Median crossing distance with a bootstrap standard error.
pub fn estimate_a_eps(eps: f64, xi: f64, spacing: f64, n_samples: usize, seed: u64, opts: CrossingOptions) -> Result<ScalingEntry> {
    let xs = crossing_samples(eps, xi, spacing, n_samples, seed, opts)?;
    Ok(ScalingEntry {
        eps,
        a_hat: median(&xs),
        stderr: bootstrap_median_stderr(&xs, BOOTSTRAP_RESAMPLES, derive_seed(seed, &[u64::MAX])),
        n_samples,
        spacing,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub q_hat: f64,
    pub residuals: Vec<f64>,
    /// 95% residual-bootstrap interval for `q_hat`.
    pub q_ci: (f64, f64),
}

impl ScalingTable {
    pub fn new(xi: f64, mut entries: Vec<ScalingEntry>) -> Result<Self> {
        if entries.is_empty() {
            return precondition("scaling table needs at least one entry");
        }
        entries.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        for w in entries.windows(2) {
            if w[0].eps == w[1].eps {
                return precondition(format!("duplicate eps {} in table", w[0].eps));
            }
        }
        for e in &entries {
            if !(e.eps > 0.0 && e.a_hat > 0.0 && e.n_samples >= 1) {
                return precondition("table entries need eps > 0, a_hat > 0, n_samples >= 1");
            }
        }
        Ok(Self { xi, entries, q_hat: None })
    }

    /// Exact power law `a_eps = c * eps^{1 - xi q}`.
    pub fn power_law(xi: f64, q: f64, c: f64, eps: &[f64]) -> Result<Self> {
        let entries = eps
            .iter()
            .map(|e| ScalingEntry { eps: *e, a_hat: c * e.powf(1.0 - xi * q), stderr: 0.0, n_samples: 1, spacing: 0.0 })
            .collect();
        let mut t = Self::new(xi, entries)?;
        t.q_hat = Some(q);
        Ok(t)
    }

    pub fn q(&self) -> Result<f64> {
        self.q_hat.ok_or_else(|| Error::Precondition("table has no fitted q".into()))
    }

    pub fn eps_range(&self) -> (f64, f64) {
        (self.entries.last().expect("nonempty").eps, self.entries[0].eps)
    }

    /// `a_hat(eps)` and its stderr by log-linear interpolation.
    pub fn lookup(&self, eps: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.eps_range();
        let tol = 1e-12;
        if !(eps >= lo * (1.0 - tol) && eps <= hi * (1.0 + tol)) {
            return Err(Error::TableRange(format!("eps = {eps} outside table range [{lo}, {hi}]")));
        }
        if let Some(e) = self.entries.iter().find(|e| (e.eps - eps).abs() <= tol * e.eps) {
            return Ok((e.a_hat, e.stderr));
        }
        let k = self.entries.iter().position(|e| e.eps < eps).expect("eps inside range");
        let (a, b) = (&self.entries[k - 1], &self.entries[k]);
        let t = (eps.ln() - a.eps.ln()) / (b.eps.ln() - a.eps.ln());
        let v = ((1.0 - t) * a.a_hat.ln() + t * b.a_hat.ln()).exp();
        let rel = (1.0 - t) * a.stderr / a.a_hat + t * b.stderr / b.a_hat;
        Ok((v, rel * v))
    }

    pub fn a(&self, eps: f64) -> Result<f64> {
        Ok(self.lookup(eps)?.0)
    }

    /// Fit `log a = s log eps + c`; `q_hat = (1 - s) / xi`.
    pub fn fit_exponent(&self, seed: u64) -> Result<ExponentFit> {
        let (lo, hi) = self.eps_range();
        if self.entries.len() < 3 || (hi / lo).log2() < 2.0 - 1e-9 {
            return precondition("fit needs at least 3 entries spanning 2 dyadic octaves");
        }
        let x: Vec<f64> = self.entries.iter().map(|e| e.eps.ln()).collect();
        let y: Vec<f64> = self.entries.iter().map(|e| e.a_hat.ln()).collect();
        let fit = linear_fit(&x, &y);
        let q_hat = (1.0 - fit.slope) / self.xi;
        let mut rng = rng_from_seed(seed);
        let mut qs: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let yb: Vec<f64> = x
                    .iter()
                    .map(|xi| fit.slope * xi + fit.intercept + fit.residuals[rng.random_range(0..fit.residuals.len())])
                    .collect();
                (1.0 - linear_fit(&x, &yb).slope) / self.xi
            })
            .collect();
        qs.sort_by(|a, b| a.total_cmp(b));
        let q_ci = (qs[(0.025 * qs.len() as f64) as usize], qs[((0.975 * qs.len() as f64) as usize).min(qs.len() - 1)]);
        Ok(ExponentFit { slope: fit.slope, intercept: fit.intercept, q_hat, residuals: fit.residuals, q_ci })
    }

    /// Fit and store `q_hat`.
    pub fn with_fit(mut self, seed: u64) -> Result<(Self, ExponentFit)> {
        let fit = self.fit_exponent(seed)?;
        self.q_hat = Some(fit.q_hat);
        Ok((self, fit))
    }

    /// `r a(eps t / r) / (r^{xi q} a(eps t))`.
    pub fn scaling_ratio(&self, r: f64, eps: f64, t: f64) -> Result<f64> {
        if !(r > 0.0) {
            return precondition(format!("scaling ratio needs r > 0, got {r}"));
        }
        let q = self.q()?;
        let num = self.a(eps * t / r)?;
        let den = self.a(eps * t)?;
        Ok(r * num / (r.powf(self.xi * q) * den))
    }

    /// Per-entry deviation `|log(a(C eps)/a(eps)) - (1 - xi q) log C|`.
    pub fn regular_variation_check(&self, c: f64) -> Result<RegularVariationReport> {
        let q = self.q()?;
        let mut rows = Vec::new();
        for e in &self.entries {
            let Ok((ac, sc)) = self.lookup(c * e.eps) else { continue };
            let dev = ((ac / e.a_hat).ln() - (1.0 - self.xi * q) * c.ln()).abs();
            let se = ((sc / ac).powi(2) + (e.stderr / e.a_hat).powi(2)).sqrt();
            rows.push(RegularVariationRow { eps: e.eps, deviation: dev, stderr: se });
        }
        if rows.len() < 2 && c != 1.0 {
            return precondition(format!("C = {c} leaves fewer than two table points"));
        }
        let trend = trend_of(&rows.iter().map(|r| r.deviation).collect::<Vec<_>>());
        Ok(RegularVariationReport { c, rows, trend })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["eps", "a_hat", "stderr", "n_samples", "spacing", "xi"])?;
        for e in &self.entries {
            w.write_record([
                format!("{:.17e}", e.eps),
                format!("{:.17e}", e.a_hat),
                format!("{:.17e}", e.stderr),
                e.n_samples.to_string(),
                format!("{:.17e}", e.spacing),
                format!("{:.17e}", self.xi),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let expected = ["eps", "a_hat", "stderr", "n_samples", "spacing", "xi"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!("scaling table header must be {}", expected.join(","))));
        }
        let mut entries = Vec::new();
        let mut xi = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: column {}: {e}", line + 2, expected[k])))
            };
            let x = num(5)?;
            if xi.is_some_and(|v: f64| v != x) {
                return Err(Error::Format(format!("line {}: mixed xi values", line + 2)));
            }
            xi = Some(x);
            entries.push(ScalingEntry {
                eps: num(0)?,
                a_hat: num(1)?,
                stderr: num(2)?,
                n_samples: num(3)? as usize,
                spacing: num(4)?,
            });
        }
        Self::new(xi.ok_or_else(|| Error::Format("empty scaling table".into()))?, entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Decreasing,
    Flat,
    Increasing,
    Mixed,
}

/// Trend of a sequence listed in the order of decreasing eps.
pub fn trend_of(xs: &[f64]) -> Trend {
    if xs.len() < 2 {
        return Trend::Flat;
    }
    let tol = 1e-12 * xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let diffs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|d| d.abs() <= tol) {
        Trend::Flat
    } else if diffs.iter().all(|d| *d <= tol) {
        Trend::Decreasing
    } else if diffs.iter().all(|d| *d >= -tol) {
        Trend::Increasing
    } else {
        Trend::Mixed
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularVariationRow {
    pub eps: f64,
    pub deviation: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularVariationReport {
    pub c: f64,
    pub rows: Vec<RegularVariationRow>,
    pub trend: Trend,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_field_crosses_at_unit_length() {
        let opts = CrossingOptions { variance: false, ..Default::default() };
        let e = estimate_a_eps(0.1, 0.2, 1.0 / 64.0, 3, 1, opts).unwrap();
        assert_eq!(e.a_hat, 1.0);
    }

    #[test]
    fn estimation_is_reproducible() {
        let opts = CrossingOptions::default();
        let a = estimate_a_eps(0.1, 0.2, 1.0 / 32.0, 5, 9, opts).unwrap();
        let b = estimate_a_eps(0.1, 0.2, 1.0 / 32.0, 5, 9, opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_shift_scales_the_median_exactly() {
        let c = 0.37;
        let xi = 0.2;
        let base = crossing_samples(0.1, xi, 1.0 / 32.0, 5, 4, CrossingOptions::default()).unwrap();
        let shifted = crossing_samples(0.1, xi, 1.0 / 32.0, 5, 4, CrossingOptions { shift: c, ..Default::default() }).unwrap();
        let f = (xi * c).exp();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((b - f * a).abs() <= 1e-12 * b);
        }
        assert!((median(&shifted) - f * median(&base)).abs() <= 1e-12 * median(&shifted));
    }

    #[test]
    fn exact_power_law_fit() {
        let t = ScalingTable::power_law(0.2, 2.0, 1.0, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        let fit = t.fit_exponent(0).unwrap();
        assert!((fit.slope - 0.6).abs() < 1e-12);
        assert!((fit.q_hat - 2.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        let t2 = ScalingTable::power_law(0.2, 3.0, 7.5, &[0.2, 0.1, 0.05]).unwrap();
        let f2 = t2.fit_exponent(0).unwrap();
        assert!((f2.slope - 0.4).abs() < 1e-12);
        assert!((f2.intercept - 7.5f64.ln()).abs() < 1e-12);
        let short = ScalingTable::power_law(0.2, 3.0, 1.0, &[0.1, 0.07, 0.05]).unwrap();
        assert!(short.fit_exponent(0).is_err());
    }

    #[test]
    fn scaling_ratio_identities() {
        let t = ScalingTable::power_law(0.2, 4.0, 1.3, &[0.2, 0.1, 0.05, 0.025, 0.0125]).unwrap();
        assert_eq!(t.scaling_ratio(1.0, 0.05, 1.0).unwrap(), 1.0);
        for (r, eps, tt) in [(0.5, 0.02, 1.0), (0.25, 0.02, 0.9), (0.8, 0.05, 1.5)] {
            let v = t.scaling_ratio(r, eps, tt).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
        assert!(t.scaling_ratio(0.01, 0.05, 1.0).is_err());
        let rv = t.regular_variation_check(0.5).unwrap();
        assert!(rv.rows.iter().all(|r| r.deviation < 1e-12));
        let rv1 = t.regular_variation_check(1.0).unwrap();
        assert!(rv1.rows.iter().all(|r| r.deviation == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = ScalingTable::power_law(0.2, 4.0, 1.0, &[0.1, 0.05, 0.025]).unwrap();
        t.write_csv(&p).unwrap();
        let back = ScalingTable::read_csv(&p).unwrap();
        assert_eq!(back.entries, t.entries);
        assert_eq!(back.xi, t.xi);
    }

    #[test]
    fn trend_classification() {
        assert_eq!(trend_of(&[3.0, 2.0, 1.0]), Trend::Decreasing);
        assert_eq!(trend_of(&[1.0, 1.0]), Trend::Flat);
        assert_eq!(trend_of(&[1.0, 2.0]), Trend::Increasing);
        assert_eq!(trend_of(&[1.0, 2.0, 0.5]), Trend::Mixed);
    }
}
