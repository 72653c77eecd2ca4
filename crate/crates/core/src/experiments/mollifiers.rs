use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pullback::replica_field;
use super::report::{Estimator, ExperimentReport};
use crate::conformal::{ConformalMap, Region};
use crate::error::{precondition, Error, Result};
use crate::gff::{heat_mollify, heat_truncation, localized_mollify_masked};
use crate::grid::{GridField, GridSpec};
use crate::kernels::{localized_profile, support_radius, z_eps};
use crate::quad::integrate;
use crate::rng::derive_seed;
use crate::stats::mean;

const ANGLES: usize = 64;

/// `<f, Psi^{phi,z}_eps>` computed in the image coordinates, where the
/// kernel is radial about `phi(z)`: adaptive radial quadrature against an
/// angular trapezoid rule, pulling `f` back through `phi^{-1}`.
pub fn mapped_pairing(map: &ConformalMap, z: Complex64, eps: f64, f: impl Fn(Complex64) -> f64) -> Result<f64> {
    let r_big = support_radius(eps)?;
    let zinv = 1.0 / z_eps(eps)?.z;
    let phi_z = map.eval(z);
    let dz = map.deriv(z);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let angular = |rho: f64| -> f64 {
        let mut acc = 0.0;
        for k in 0..ANGLES {
            let e = Complex64::from_polar(rho, 2.0 * PI * k as f64 / ANGLES as f64);
            match map.inverse_from(phi_z + e, Some(z + e / dz)) {
                Ok(w) => acc += f(w),
                Err(err) => {
                    failure.borrow_mut().get_or_insert(err);
                }
            }
        }
        acc * 2.0 * PI / ANGLES as f64
    };
    let q = integrate(|rho| rho * localized_profile(rho * rho, r_big, eps, zinv) * angular(rho), 0.0, r_big, 0.0, 1e-13, 4000);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(q.value)
}

/// Probe grid of pitch `radius / 4` inside a disk region.
fn disk_probes(region: &Region) -> Result<Vec<Complex64>> {
    let Region::Disk { center, radius } = region else {
        return precondition("probe grids need a disk region");
    };
    let pitch = radius / 4.0;
    let mut out = Vec::new();
    for j in -4i32..=4 {
        for i in -4i32..=4 {
            let z = center + Complex64::new(i as f64 * pitch, j as f64 * pitch);
            if region.inside_distance(z) > 0.0 {
                out.push(z);
            }
        }
    }
    Ok(out)
}

/// Log-mollification error `|<-log|phi'|, Psi^{phi,z}_eps> + log|phi'(z)||`
/// over a probe grid in `V` and the family, per scheduled `eps`.
pub fn log_mollification(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let family = cfg.family()?;
    let regions = cfg.regions(&family)?;
    let probes = disk_probes(&regions.v)?;
    let mut rep = ExperimentReport::new("log_mollification", cfg);
    // errors[map][level]
    let mut errors = vec![Vec::new(); family.maps.len()];
    for &eps in &cfg.schedule.eps {
        let r_big = support_radius(eps)?;
        for (mi, map) in family.maps.iter().enumerate() {
            let per: Vec<f64> = probes
                .par_iter()
                .map(|z| {
                    let reach = map.preimage_radius(*z, r_big)?;
                    if regions.u.inside_distance(*z) <= reach {
                        return precondition(format!("kernel support about {z} exits U for {}", map.label()));
                    }
                    let v = mapped_pairing(map, *z, eps, |w| -map.deriv(w).norm().ln())?;
                    Ok((v + map.deriv(*z).norm().ln()).abs())
                })
                .collect::<Result<_>>()?;
            let sup = per.iter().copied().fold(0.0, f64::max);
            rep.metric("sup_error", Some(eps), Some(map.label()), sup, Estimator::Quadrature);
            errors[mi].push(sup);
        }
    }
    for (map, errs) in family.maps.iter().zip(&errors) {
        if map.as_affine().is_some() {
            let worst = errs.iter().copied().fold(0.0, f64::max);
            rep.check(&format!("affine_exact:{}", map.label()), worst <= 1e-8, format!("max error {worst:.3e}"));
        } else {
            let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
            for (i, r) in ratios.iter().enumerate() {
                rep.metric("halving_ratio", Some(cfg.schedule.eps[i + 1]), Some(map.label()), *r, Estimator::Quadrature);
            }
            let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
            let in_band = !ratios.is_empty() && ratios.iter().all(|r| (0.4..=0.7).contains(r));
            rep.check(
                &format!("trend:{}", map.label()),
                decreasing && in_band,
                format!("errors {errs:?}, per-halving ratios {ratios:?}"),
            );
        }
    }
    Ok(rep)
}

/// Parent field shared across levels: sampled at the finest spacing, coarser
/// levels read every `stride`-th node.
fn coupled_levels(finest: f64, spacings: &[f64]) -> Result<Vec<usize>> {
    spacings
        .iter()
        .map(|s| {
            let k = s / finest;
            let stride = k.round();
            if stride < 1.0 || (k - stride).abs() > 1e-9 {
                return precondition(format!("spacing {s} is not a multiple of the finest spacing {finest}"));
            }
            Ok(stride as usize)
        })
        .collect()
}

/// Drift of the localized mollification in its scale:
/// `sup_K |hat h_{eps t} - hat h_{eps s}|` over admissible pairs with
/// `|t / s - 1| <= C eps^{1-zeta}` and `s, t in [1/tau, tau]`.
pub fn mollifier_drift(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let family = cfg.family()?;
    let tau = family.tau;
    let k_region = cfg.regions(&family)?.w;
    let (c, zeta) = (cfg.thresholds.big_c, cfg.thresholds.zeta);
    let eps_list = cfg.schedule.eps.clone();
    let spacings: Vec<f64> = eps_list.iter().map(|e| cfg.spacing_for(*e) / 2.0).collect();
    let finest = spacings.iter().copied().fold(f64::INFINITY, f64::min);
    let strides = coupled_levels(finest, &spacings)?;
    let (x0, y0, x1, y1) = k_region.bbox();
    let center = Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let half = 0.5 * (x1 - x0).max(y1 - y0);
    let max_eps = eps_list.iter().copied().fold(0.0, f64::max);
    let reach = support_radius(tau * max_eps)?;
    let spec = GridSpec::covering(center, half + reach + 4.0 * spacings.iter().copied().fold(0.0, f64::max), finest)?;

    let s_grid: Vec<f64> = (0..5).map(|i| tau.powf(-1.0 + 0.5 * i as f64)).collect();
    let pairs: Vec<Vec<(f64, f64)>> = eps_list
        .iter()
        .map(|&eps| {
            let w = c * eps.powf(1.0 - zeta);
            let mut out = Vec::new();
            for &s in &s_grid {
                for t in [s * (1.0 + w), s * (1.0 - w)] {
                    if t >= 1.0 / tau - 1e-12 && t <= tau + 1e-12 && t > 0.0 {
                        out.push((t.clamp(1.0 / tau, tau), s));
                    }
                }
            }
            out
        })
        .collect();

    let replicas = cfg.experiment.replicas;
    let sups: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let h = replica_field(cfg, &spec, r, 0)?;
            eps_list
                .iter()
                .enumerate()
                .map(|(li, &eps)| {
                    let field = if strides[li] == 1 { h.clone() } else { h.subsample(strides[li])? };
                    let keep: Vec<bool> = (0..field.spec.len()).map(|k| k_region.contains(field.spec.node_at(k))).collect();
                    let mut cache: Vec<(f64, GridField)> = Vec::new();
                    let mut get = |scale: f64| -> Result<GridField> {
                        if let Some((_, f)) = cache.iter().find(|(s, _)| *s == scale) {
                            return Ok(f.clone());
                        }
                        let m = localized_mollify_masked(&field, eps * scale, &keep)?;
                        cache.push((scale, m.clone()));
                        Ok(m)
                    };
                    let mut best: f64 = 0.0;
                    for &(t, s) in &pairs[li] {
                        let (a, b) = (get(t)?, get(s)?);
                        for k in 0..keep.len() {
                            if keep[k] {
                                if !(a.valid[k] && b.valid[k]) {
                                    return Err(Error::InvalidNodes("probe set K lacks mollifier support".into()));
                                }
                                best = best.max((a.values[k] - b.values[k]).abs());
                            }
                        }
                    }
                    Ok(best)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("mollifier_drift", cfg);
    let est = if cfg.experiment.constant_field.is_some() { Estimator::Exact } else { Estimator::MonteCarlo };
    let mut means = Vec::new();
    for (li, &eps) in eps_list.iter().enumerate() {
        let vals: Vec<f64> = sups.iter().map(|r| r[li]).collect();
        let m = mean(&vals);
        rep.metric("mean_sup_drift", Some(eps), None, m, est).stderr =
            Some((crate::stats::variance(&vals) / vals.len() as f64).sqrt());
        means.push(m);
    }
    let all_zero = means.iter().all(|m| *m == 0.0);
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    rep.check("drift_decreasing", decreasing || all_zero, format!("{means:?}"));
    rep.provenance.seeds = (0..replicas as u64).map(|r| derive_seed(cfg.experiment.seed, &[0, r])).collect();
    Ok(rep)
}

/// Heat against localized mollification: `sup_K |h*_eps - hat h*_eps|` for
/// each scheduled `eps`, on one field per replica shared by all scales.
pub fn mollifier_comparison(cfg: &ExperimentConfig, k_region: &Region) -> Result<ExperimentReport> {
    cfg.validate()?;
    let eps_list = cfg.schedule.eps.clone();
    let min_eps = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let max_eps = eps_list.iter().copied().fold(0.0, f64::max);
    let s = cfg.spacing_for(min_eps);
    let (x0, y0, x1, y1) = k_region.bbox();
    let center = Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let half = 0.5 * (x1 - x0).max(y1 - y0);
    let reach = heat_truncation(max_eps).max(support_radius(max_eps)?);
    let spec = GridSpec::covering(center, half + reach + 4.0 * s, s)?;
    let keep: Vec<bool> = (0..spec.len()).map(|k| k_region.contains(spec.node_at(k))).collect();
    let replicas = cfg.experiment.replicas;

    let sups: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let h = replica_field(cfg, &spec, r, 0)?;
            eps_list
                .iter()
                .map(|&eps| {
                    let heat = heat_mollify(&h, eps)?;
                    let loc = localized_mollify_masked(&h, eps, &keep)?;
                    let mut best: f64 = 0.0;
                    for k in 0..keep.len() {
                        if keep[k] {
                            if !(heat.valid[k] && loc.valid[k]) {
                                return Err(Error::InvalidNodes("probe set K lacks mollifier support".into()));
                            }
                            best = best.max((heat.values[k] - loc.values[k]).abs());
                        }
                    }
                    Ok(best)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("mollifier_comparison", cfg);
    let est = if cfg.experiment.constant_field.is_some() { Estimator::Exact } else { Estimator::MonteCarlo };
    let mut means = Vec::new();
    for (li, &eps) in eps_list.iter().enumerate() {
        let vals: Vec<f64> = sups.iter().map(|r| r[li]).collect();
        let m = mean(&vals);
        rep.metric("mean_sup_difference", Some(eps), None, m, est).stderr =
            Some((crate::stats::variance(&vals) / vals.len() as f64).sqrt());
        means.push(m);
    }
    let per_replica = sups.iter().filter(|r| r.windows(2).all(|w| w[1] < w[0])).count();
    rep.metric("replicas_strictly_decreasing", None, None, per_replica as f64 / replicas as f64, est);
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    rep.check("strictly_decreasing", decreasing, format!("mean sups {means:?}"));
    rep.provenance.seeds = (0..replicas as u64).map(|r| derive_seed(cfg.experiment.seed, &[0, r])).collect();
    Ok(rep)
}
