use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pullback::{pulled_back_graph, replica_field};
use super::report::{Estimator, ExperimentReport};
use crate::conformal::{MapFamily, Region};
use crate::error::{precondition, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernels::support_radius;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scaling::ScalingTable;
use crate::stats::wilson_interval;

const WILSON_Z: f64 = 1.959_963_984_540_054;
const PAIRS: usize = 12;

/// Normalized distances `[level][map][pair]` for one replica.
pub type LevelDistances = Vec<Vec<Vec<f64>>>;

/// Cross-map spread `sup_{phi, psi, pair} |D^phi - D^psi|` at one level.
pub fn cross_map_spread(level: &[Vec<f64>]) -> f64 {
    let mut sup = 0.0f64;
    for i in 0..level.len() {
        for j in i + 1..level.len() {
            for (a, b) in level[i].iter().zip(&level[j]) {
                sup = sup.max((a - b).abs());
            }
        }
    }
    sup
}

/// `sup_pair |D^eps - D^{eps/2}|` for each map between consecutive levels.
pub fn level_differences(levels: &LevelDistances) -> Vec<Vec<f64>> {
    levels
        .windows(2)
        .map(|w| {
            w[0].iter().zip(&w[1]).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)).collect()
        })
        .collect()
}

fn check_schedule(eps: &[f64]) -> Result<()> {
    if eps.len() < 3 {
        return precondition(format!("convergence needs at least 3 dyadic levels, got {}", eps.len()));
    }
    for w in eps.windows(2) {
        if (w[0] / w[1] - 2.0).abs() > 1e-9 {
            return precondition(format!("schedule is not dyadic: {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

/// Coarse and fine lattices sharing an origin, so that every coarser level is
/// a stride subsample of the fine one. Returns `(fine spec, strides)`.
fn nested_window(center: Complex64, half: f64, spacings: &[f64]) -> Result<(GridSpec, Vec<usize>)> {
    let fine = spacings.iter().copied().fold(f64::INFINITY, f64::min);
    let coarse = spacings.iter().copied().fold(0.0, f64::max);
    let mut strides = Vec::with_capacity(spacings.len());
    for s in spacings {
        let k = (s / fine).round();
        if (s / fine - k).abs() > 1e-9 {
            return precondition(format!("spacing {s} is not a multiple of the finest spacing {fine}"));
        }
        strides.push(k as usize);
    }
    let top = (coarse / fine).round() as usize;
    if strides.iter().any(|k| !top.is_multiple_of(*k)) {
        return precondition("level spacings do not nest".to_string());
    }
    let c = GridSpec::covering(center, half, coarse)?;
    let spec = GridSpec::new((c.nx - 1) * top + 1, (c.ny - 1) * top + 1, fine, c.origin)?;
    Ok((spec, strides))
}

/// Query pairs of `W` at Euclidean distance at most `rho`, snapped to the
/// lattice `origin + spacing Z^2`.
pub fn near_diagonal_pairs(w: &Region, rho: f64, origin: Complex64, spacing: f64, n: usize, seed: u64) -> Result<Vec<(Complex64, Complex64)>> {
    let (x0, y0, x1, y1) = w.bbox();
    let mut rng = rng_from_seed(seed);
    let snap = |z: Complex64| {
        let d = z - origin;
        origin + Complex64::new((d.re / spacing).round() * spacing, (d.im / spacing).round() * spacing)
    };
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::EmptyRegion(format!("no lattice pairs within {rho} in {}", w.label())));
        }
        let z = snap(Complex64::new(rng.random_range(x0..x1), rng.random_range(y0..y1)));
        let v = Complex64::from_polar(rho * rng.random_range(0.0..1.0), rng.random_range(0.0..std::f64::consts::TAU));
        let wz = snap(z + v);
        if w.contains(z) && w.contains(wz) && wz != z && (wz - z).norm() <= rho {
            out.push((z, wz));
        }
    }
    Ok(out)
}

/// Normalized `D^eps_{h^phi}(phi z, phi w; phi V)` for each level and map.
#[allow(clippy::too_many_arguments)]
pub fn level_distances(
    h: &GridField,
    strides: &[usize],
    eps: &[f64],
    family: &MapFamily,
    table: &ScalingTable,
    xi: f64,
    pairs: &[(Complex64, Complex64)],
) -> Result<LevelDistances> {
    let q = table.q()?;
    eps.iter()
        .zip(strides)
        .map(|(&e, &stride)| {
            let field = if stride == 1 { h.clone() } else { h.subsample(stride)? };
            let a = table.a(e)?;
            family
                .maps
                .iter()
                .map(|m| {
                    let g = pulled_back_graph(&field, m, q, xi, e, &family.v)?;
                    pairs
                        .iter()
                        .map(|(z, w)| {
                            g.distance(*z, *w)?.raw.value().map(|d| d / a).ok_or_else(|| {
                                Error::InvalidNodes(format!("{z} and {w} are disconnected in V for {}", m.label()))
                            })
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Every pulled-back kernel at the coarsest scale must stay inside U for
/// nodes of V.
fn check_support(family: &MapFamily, eps: f64) -> Result<()> {
    let r = support_radius(eps)?;
    for m in &family.maps {
        for z in family.v.closure_samples(0.05) {
            let reach = m.preimage_radius(z, r).map_err(|e| Error::Precondition(format!("kernel support at eps = {eps} about {z} is not invertible for {}: {e}", m.label())))?;
            if family.u.inside_distance(z) <= reach {
                return Err(Error::Precondition(format!("kernel support at eps = {eps} about {z} leaves U for {}", m.label())));
            }
        }
    }
    Ok(())
}

/// Dyadic-eps convergence diagnostic over a given family.
pub fn convergence_for_family(cfg: &ExperimentConfig, family: &MapFamily) -> Result<ExperimentReport> {
    let mut eps = cfg.schedule.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    check_schedule(&eps)?;
    check_support(family, eps[0])?;
    let regions = cfg.regions(family)?;
    let table = cfg.scaling_table()?;
    let xi = cfg.params.xi;
    let spacings: Vec<f64> = eps.iter().map(|e| cfg.spacing_for(*e)).collect();
    let (x0, y0, x1, y1) = family.v.bbox();
    let center = Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let coarse = spacings.iter().copied().fold(0.0, f64::max);
    let half = 0.5 * (x1 - x0).max(y1 - y0) + family.tau * support_radius(eps[0])? + 6.0 * coarse;
    let (spec, strides) = nested_window(center, half, &spacings)?;
    let pairs = near_diagonal_pairs(&regions.w, cfg.thresholds.rho, spec.origin, coarse, PAIRS, derive_seed(cfg.experiment.seed, &[2]))?;

    let replicas = cfg.experiment.replicas;
    let runs: Vec<LevelDistances> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| level_distances(&replica_field(cfg, &spec, k, 0)?, &strides, &eps, family, &table, xi, &pairs))
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("convergence_diagnostic", cfg);
    rep.provenance.reference = Some("cross-map spread of pulled-back localized LFPP; no limit metric is used".into());
    let mut good = 0;
    for (i, run) in runs.iter().enumerate() {
        let spreads: Vec<f64> = run.iter().map(|l| cross_map_spread(l)).collect();
        for (e, s) in eps.iter().zip(&spreads) {
            rep.metric("cross_map_spread", Some(*e), None, *s, Estimator::MonteCarlo);
        }
        for (li, diffs) in level_differences(run).iter().enumerate() {
            for (m, d) in family.maps.iter().zip(diffs) {
                rep.metric("level_difference", Some(eps[li]), Some(m.label()), *d, Estimator::MonteCarlo);
            }
        }
        let ok = spreads.windows(2).all(|w| w[1] <= w[0]);
        good += ok as usize;
        rep.indicator("spread_nonincreasing", Some(i), ok, None);
    }
    let frac = good as f64 / replicas as f64;
    rep.metric("fraction_nonincreasing", None, None, frac, Estimator::MonteCarlo).ci = Some(wilson_interval(good, replicas, WILSON_Z));
    let need = cfg.thresholds.fraction;
    rep.check("spread_nonincreasing", frac >= need, format!("{good}/{replicas} seeds, need fraction {need}"));
    rep.provenance.seeds = (0..replicas as u64).map(|k| derive_seed(cfg.experiment.seed, &[0, k])).collect();
    Ok(rep)
}

/// Dyadic-eps convergence diagnostic over the configured family.
pub fn convergence_diagnostic(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    convergence_for_family(cfg, &cfg.family()?)
}
