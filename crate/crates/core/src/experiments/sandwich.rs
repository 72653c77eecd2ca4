use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pullback::{pulled_back_graph, replica_field};
use super::report::{Estimator, ExperimentReport};
use crate::conformal::{ConformalMap, MapFamily, Region};
use crate::error::{precondition, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernels::{support_radius, DistortedKernel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scaling::ScalingTable;
use crate::stats::{linear_fit, wilson_interval};

const WILSON_Z: f64 = 1.959_963_984_540_054;
const GEODESIC_PAIRS: usize = 4;
const SEGMENTS: usize = 4;

/// Radius `2 eps^{1 - zeta}` of the small ball about `z0`.
pub fn small_ball_radius(eps: f64, zeta: f64) -> f64 {
    2.0 * eps.powf(1.0 - zeta)
}

/// Probe points: `z0` and eight points on each of the circles of radius
/// `rho / 2` and `rho`.
pub fn probe_points(z0: Complex64, rho: f64) -> Vec<Complex64> {
    let mut out = vec![z0];
    for r in [0.5 * rho, rho] {
        for k in 0..8 {
            out.push(z0 + Complex64::from_polar(r, std::f64::consts::PI * k as f64 / 4.0));
        }
    }
    out
}

/// `|phi'(z0)|` for each family member.
fn scale_factors(family: &MapFamily, z0: Complex64) -> Vec<f64> {
    family.maps.iter().map(|m| m.deriv(z0).norm()).collect()
}

/// Shared preconditions: family in `Lambda_tau`, small balls inside `W`,
/// and `eps / |phi'(z0)|` mollifiable.
fn check_small_scale(cfg: &ExperimentConfig, family: &MapFamily, z0: Complex64) -> Result<()> {
    family.validate(1.0 / 64.0)?;
    let regions = cfg.regions(family)?;
    for &eps in &cfg.schedule.eps {
        let rho = small_ball_radius(eps, cfg.thresholds.zeta);
        if !Region::disk(z0, rho).compactly_inside(&regions.w, 0.0, rho / 16.0) {
            return precondition(format!("B_{rho:.4}({z0}) is not inside W at eps = {eps}"));
        }
        for k in scale_factors(family, z0) {
            support_radius(eps / k).map_err(|_| Error::Precondition(format!("eps / |phi'(z0)| = {} is not mollifiable", eps / k)))?;
        }
    }
    Ok(())
}

/// Field window around `z0` wide enough for every kernel used at every
/// scheduled scale.
fn small_scale_window(cfg: &ExperimentConfig, family: &MapFamily, z0: Complex64, spacing: f64) -> Result<GridSpec> {
    let mut reach: f64 = 0.0;
    for &eps in &cfg.schedule.eps {
        let rho = small_ball_radius(eps, cfg.thresholds.zeta);
        for k in scale_factors(family, z0) {
            let r = (family.tau * support_radius(eps)?).max(support_radius(eps / k)?);
            reach = reach.max(rho + r);
        }
    }
    GridSpec::covering(z0, reach + 4.0 * spacing, spacing)
}

/// `(<h, Psi>, <log|phi'|, Psi>)` by the kernel's tensor quadrature.
fn pair_with_log(kernel: &DistortedKernel, h: &GridField, pts: usize) -> Result<(f64, f64)> {
    let (mut a, mut b) = (0.0, 0.0);
    for (w, k) in kernel.quadrature_nodes(pts) {
        let v = h
            .bilinear(w)
            .ok_or_else(|| Error::Precondition(format!("kernel support at {w} exits the field window")))?;
        a += v * k;
        b += kernel.map.deriv(w).norm().ln() * k;
    }
    Ok((a, b))
}

fn trapezoid(points: &[Complex64], weights: &[f64]) -> f64 {
    points.windows(2).zip(weights.windows(2)).map(|(p, w)| (p[1] - p[0]).norm() * 0.5 * (w[0] + w[1])).sum()
}

/// Unnormalized path lengths `Len(phi o P; D^eps_{h^phi})` and
/// `Len(P; D^{eps/k}_h)` by trapezoid sums over the path's sample points.
#[allow(clippy::too_many_arguments)]
pub fn path_lengths(
    points: &[Complex64],
    h: &GridField,
    map: &ConformalMap,
    k: f64,
    eps: f64,
    q: f64,
    xi: f64,
    pts: usize,
) -> Result<(f64, f64)> {
    let id = ConformalMap::identity();
    let mut wn = Vec::with_capacity(points.len());
    let mut wd = Vec::with_capacity(points.len());
    for p in points {
        let kn = DistortedKernel::new(map, *p, eps)?;
        let (hp, lp) = pair_with_log(&kn, h, pts)?;
        wn.push((xi * (hp - q * lp)).exp() * map.deriv(*p).norm());
        let kd = DistortedKernel::new(&id, *p, eps / k)?;
        let (hd, _) = pair_with_log(&kd, h, pts)?;
        wd.push((xi * hd).exp());
    }
    Ok((trapezoid(points, &wn), trapezoid(points, &wd)))
}

/// Normalized length ratio `(a_{eps/k} / a_eps) Len_num / Len_den`.
fn length_ratio(table: &ScalingTable, eps: f64, k: f64, num: f64, den: f64) -> Result<f64> {
    Ok(table.a(eps / k)? / table.a(eps)? * num / den)
}

/// Test paths in `B_rho(z0)`: lattice geodesics of the identity localized
/// metric between random pairs, and straight diameters.
fn path_battery(h: &GridField, z0: Complex64, rho: f64, eps: f64, q: f64, xi: f64, seed: u64) -> Result<Vec<Vec<Complex64>>> {
    let s = h.spec.spacing;
    let ball = Region::disk(z0, rho);
    let graph = pulled_back_graph(h, &ConformalMap::identity(), q, xi, eps, &ball)?;
    let mut rng = rng_from_seed(seed);
    let mut draw = || loop {
        let p = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (0.9 * rho);
        if p.norm() < 0.9 * rho {
            return z0 + p;
        }
    };
    let mut paths = Vec::new();
    while paths.len() < GEODESIC_PAIRS {
        let (a, b) = (draw(), draw());
        if (a - b).norm() < 0.5 * rho {
            continue;
        }
        let res = graph.distance(a, b)?;
        if res.geodesic.len() >= 2 {
            paths.push(graph.points(&res.geodesic));
        }
    }
    for j in 0..SEGMENTS {
        let dir = Complex64::from_polar(0.9 * rho, std::f64::consts::PI * j as f64 / SEGMENTS as f64);
        let n = ((2.0 * dir.norm() / s).ceil() as usize).max(2);
        paths.push((0..=n).map(|i| z0 - dir + dir * (2.0 * i as f64 / n as f64)).collect());
    }
    Ok(paths)
}

/// Small-scale sandwich: for every scheduled `eps`, family member and test
/// path in `B_{2 eps^{1-zeta}}(z0)`, the ratio of the coordinate-changed
/// localized length of `phi o P` to the localized length of `P` at
/// `eps / |phi'(z0)|`, both normalized by the scaling table.
pub fn small_scale_sandwich(cfg: &ExperimentConfig, z0: Complex64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let family = cfg.family()?;
    check_small_scale(cfg, &family, z0)?;
    let table = cfg.scaling_table()?;
    let q = table.q()?;
    let xi = cfg.params.xi;
    let pts = cfg.params.pts_per_eps;
    let delta = cfg.thresholds.delta;
    let (lo, hi) = (1.0 / (1.0 + delta), 1.0 + delta);
    let ks = scale_factors(&family, z0);
    let min_eps = cfg.schedule.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let spec = small_scale_window(cfg, &family, z0, cfg.spacing_for(min_eps))?;
    let n_eps = cfg.schedule.eps.len();
    let replicas = cfg.experiment.replicas;

    // ratios[replica][level][map] = (min, max) over paths.
    let per_replica: Vec<Vec<Vec<(f64, f64)>>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let h = replica_field(cfg, &spec, r, 0)?;
            cfg.schedule
                .eps
                .iter()
                .enumerate()
                .map(|(li, &eps)| {
                    let rho = small_ball_radius(eps, cfg.thresholds.zeta);
                    let paths = path_battery(&h, z0, rho, eps, q, xi, derive_seed(cfg.experiment.seed, &[2, r, li as u64]))?;
                    family
                        .maps
                        .iter()
                        .zip(&ks)
                        .map(|(map, &k)| {
                            let mut mm = (f64::INFINITY, f64::NEG_INFINITY);
                            for p in &paths {
                                let (num, den) = path_lengths(p, &h, map, k, eps, q, xi, pts)?;
                                let ratio = length_ratio(&table, eps, k, num, den)?;
                                mm = (mm.0.min(ratio), mm.1.max(ratio));
                            }
                            Ok(mm)
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("small_scale_sandwich", cfg);
    let est = if cfg.experiment.constant_field.is_some() { Estimator::Quadrature } else { Estimator::MonteCarlo };
    let mut fractions = Vec::with_capacity(n_eps);
    for (li, &eps) in cfg.schedule.eps.iter().enumerate() {
        for (mi, map) in family.maps.iter().enumerate() {
            let worst = per_replica
                .iter()
                .map(|r| (r[li][mi].0 - 1.0).abs().max((r[li][mi].1 - 1.0).abs()))
                .fold(0.0, f64::max);
            rep.metric("worst_deviation", Some(eps), Some(map.label()), worst, est);
        }
        let mut successes = 0;
        for (ri, r) in per_replica.iter().enumerate() {
            let lo_all = r[li].iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
            let hi_all = r[li].iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
            let ok = lo_all >= lo && hi_all <= hi;
            successes += ok as usize;
            rep.indicator(&format!("inside@eps={eps}"), Some(ri), ok, Some((lo_all.ln() - lo.ln()).min(hi.ln() - hi_all.ln())));
        }
        let frac = successes as f64 / replicas as f64;
        rep.metric("success_fraction", Some(eps), None, frac, est).ci = Some(wilson_interval(successes, replicas, WILSON_Z));
        fractions.push(frac);
    }
    let nondecreasing = fractions.windows(2).all(|w| w[1] >= w[0]);
    rep.check("fraction_nondecreasing", nondecreasing, format!("{fractions:?}"));
    let finest = *fractions.last().expect("schedule is nonempty");
    let need = cfg.thresholds.success;
    rep.check("finest_fraction", finest >= need, format!("{finest:.3} against {need}"));
    rep.provenance.seeds = (0..replicas as u64).map(|r| derive_seed(cfg.experiment.seed, &[0, r])).collect();
    Ok(rep)
}

/// Sup and L2 data of `Psi^{phi,z}_eps - Psi^{id,z}_{eps/k}` on a fine
/// tensor grid covering both supports.
#[derive(Clone, Copy, Debug, Default)]
pub struct KernelDifference {
    pub sup: f64,
    pub grad_sup: f64,
    pub l2_sq: f64,
    pub grad_l2_sq: f64,
}

pub fn kernel_difference(map: &ConformalMap, z: Complex64, eps: f64, k: f64, pts: usize) -> Result<KernelDifference> {
    let a = DistortedKernel::new(map, z, eps)?;
    let b = DistortedKernel::new(&ConformalMap::identity(), z, eps / k)?;
    let step = a.effective_eps().min(b.effective_eps()).min(eps) / (2 * pts.max(1)) as f64;
    let half = a.support.max(b.support);
    let n = (half / step).ceil() as i64;
    let mut out = KernelDifference::default();
    for j in -n..=n {
        for i in -n..=n {
            let w = z + Complex64::new(i as f64 * step, j as f64 * step);
            let d = a.eval(w) - b.eval(w);
            let (ax, ay) = a.gradient(w);
            let (bx, by) = b.gradient(w);
            let g2 = (ax - bx).powi(2) + (ay - by).powi(2);
            out.sup = out.sup.max(d.abs());
            out.grad_sup = out.grad_sup.max(g2.sqrt());
            out.l2_sq += d * d * step * step;
            out.grad_l2_sq += g2 * step * step;
        }
    }
    Ok(out)
}

/// Slope of `log y` against `log eps`, or `None` when some `y` vanishes.
fn log_log_slope(eps: &[f64], y: &[f64]) -> Option<f64> {
    if eps.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Some(linear_fit(&lx, &ly).slope)
}

/// Growth of the distorted-kernel difference as `eps -> 0`: per `eps`, the
/// sup over probes in `B_{2 eps^{1-zeta}}(z0)` and family members of the
/// sup norm and gradient sup norm of `Psi^{phi,z}_eps - Psi^{id,z}_{eps/|phi'(z0)|}`.
pub fn kernel_difference_growth(cfg: &ExperimentConfig, z0: Complex64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let family = cfg.family()?;
    check_small_scale(cfg, &family, z0)?;
    let zeta = cfg.thresholds.zeta;
    let pts = cfg.params.pts_per_eps;
    let ks = scale_factors(&family, z0);
    let mut rep = ExperimentReport::new("kernel_difference_growth", cfg);
    let mut sups = Vec::new();
    let mut grads = Vec::new();
    for &eps in &cfg.schedule.eps {
        let probes = probe_points(z0, small_ball_radius(eps, zeta));
        let (mut s_all, mut g_all) = (0.0f64, 0.0f64);
        for (map, &k) in family.maps.iter().zip(&ks) {
            let (mut s, mut g) = (0.0f64, 0.0f64);
            for z in &probes {
                let d = kernel_difference(map, *z, eps, k, pts)?;
                s = s.max(d.sup);
                g = g.max(d.grad_sup);
            }
            rep.metric("sup_difference", Some(eps), Some(map.label()), s, Estimator::Quadrature);
            rep.metric("grad_sup_difference", Some(eps), Some(map.label()), g, Estimator::Quadrature);
            s_all = s_all.max(s);
            g_all = g_all.max(g);
        }
        sups.push(s_all);
        grads.push(g_all);
    }
    let eps = &cfg.schedule.eps;
    match (log_log_slope(eps, &sups), log_log_slope(eps, &grads)) {
        (Some(s0), Some(s1)) => {
            let (g0, g1) = (-s0, -s1);
            rep.metric("growth_exponent", None, None, g0, Estimator::Quadrature);
            rep.metric("grad_growth_exponent", None, None, g1, Estimator::Quadrature);
            rep.check("growth", g0 <= 1.0 + zeta + 0.1, format!("sup grows like eps^-{g0:.3}; bound {:.3}", 1.0 + zeta + 0.1));
            rep.check("grad_growth", g1 <= 2.0 + zeta + 0.1, format!("gradient grows like eps^-{g1:.3}; bound {:.3}", 2.0 + zeta + 0.1));
        }
        _ => {
            let zero = sups.iter().chain(&grads).all(|v| *v == 0.0);
            rep.check("growth", zero, "differences vanish identically");
        }
    }
    Ok(rep)
}

/// `eps^{2(1-zeta)} sqrt(eps^{-2(1-zeta)} ||d||^2 + ||grad d||^2)`.
pub fn rescaled_h1(d: &KernelDifference, eps: f64, zeta: f64) -> f64 {
    let w = eps.powf(2.0 * (1.0 - zeta));
    w * (d.l2_sq / w + d.grad_l2_sq).sqrt()
}

/// Probability that `sup_z sup_phi |<h, Psi^{phi,z}_eps - Psi^{id,z}_{eps/|phi'(z0)|}>|`
/// exceeds `delta`, and the decay of the rescaled H^1 norm of the kernel
/// difference.
pub fn field_pairing_deviation(cfg: &ExperimentConfig, z0: Complex64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let family = cfg.family()?;
    check_small_scale(cfg, &family, z0)?;
    let zeta = cfg.thresholds.zeta;
    let delta = cfg.thresholds.delta;
    let pts = cfg.params.pts_per_eps;
    let ks = scale_factors(&family, z0);
    let min_eps = cfg.schedule.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let spec = small_scale_window(cfg, &family, z0, cfg.spacing_for(min_eps))?;
    let replicas = cfg.experiment.replicas;
    let id = ConformalMap::identity();

    let sups: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let h = replica_field(cfg, &spec, r, 0)?;
            cfg.schedule
                .eps
                .iter()
                .map(|&eps| {
                    let mut best: f64 = 0.0;
                    for z in probe_points(z0, small_ball_radius(eps, zeta)) {
                        for (map, &k) in family.maps.iter().zip(&ks) {
                            let a = DistortedKernel::new(map, z, eps)?.pair(&h, pts)?;
                            let b = DistortedKernel::new(&id, z, eps / k)?.pair(&h, pts)?;
                            best = best.max((a - b).abs());
                        }
                    }
                    Ok(best)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("field_pairing_deviation", cfg);
    let mut probs = Vec::new();
    for (li, &eps) in cfg.schedule.eps.iter().enumerate() {
        let mut hits = 0;
        for (ri, s) in sups.iter().enumerate() {
            let over = s[li] > delta;
            hits += over as usize;
            rep.indicator(&format!("exceeds@eps={eps}"), Some(ri), over, Some(delta - s[li]));
        }
        let p = hits as f64 / replicas as f64;
        rep.metric("exceed_probability", Some(eps), None, p, Estimator::MonteCarlo).ci = Some(wilson_interval(hits, replicas, WILSON_Z));
        probs.push(p);
    }
    rep.check("probability_nonincreasing", probs.windows(2).all(|w| w[1] <= w[0]), format!("{probs:?}"));

    if zeta < 1.0 / 3.0 {
        let mut norms = Vec::new();
        for &eps in &cfg.schedule.eps {
            let mut best: f64 = 0.0;
            for z in probe_points(z0, small_ball_radius(eps, zeta)) {
                for (map, &k) in family.maps.iter().zip(&ks) {
                    best = best.max(rescaled_h1(&kernel_difference(map, z, eps, k, pts)?, eps, zeta));
                }
            }
            rep.metric("rescaled_h1", Some(eps), None, best, Estimator::Quadrature);
            norms.push(best);
        }
        match log_log_slope(&cfg.schedule.eps, &norms) {
            Some(slope) => {
                rep.metric("h1_exponent", None, None, slope, Estimator::Quadrature);
                let bound = 1.0 - 3.0 * zeta;
                rep.check("h1_decay", slope >= bound - 0.1, format!("norm decays like eps^{slope:.3}; reference exponent {bound:.3}"));
            }
            None => rep.check("h1_decay", norms.iter().all(|n| *n == 0.0), "kernel differences vanish identically"),
        }
    }
    rep.provenance.seeds = (0..replicas as u64).map(|r| derive_seed(cfg.experiment.seed, &[0, r])).collect();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::PROFILE_ID;

    fn c(x: f64, y: f64) -> Complex64 {
        Complex64::new(x, y)
    }

    fn small_cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "[experiment]\nreplicas = 2\n[schedule]\neps = [0.05, 0.025]\n[scaling]\npower_law_q = 2.5\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn identity_family_ratios_are_one() {
        let cfg = small_cfg("[family]\nname = \"identity\"\n");
        let rep = small_scale_sandwich(&cfg, cfg.z0()).unwrap();
        for v in rep.values("worst_deviation") {
            assert_eq!(v, 0.0);
        }
        assert_eq!(rep.values("success_fraction"), vec![1.0, 1.0]);
        assert_eq!(rep.provenance.kernel_profile, PROFILE_ID);
    }

    #[test]
    fn unit_rotation_ratio_matches_direct_quadrature() {
        // Constant field: both lengths reduce to Euclidean integrals with
        // known weights, so the ratio is a closed-form quadrature.
        let spec = GridSpec::covering(c(0.7, 0.0), 0.5, 1.0 / 128.0).unwrap();
        let h = GridField::constant(spec, 0.4);
        let map = ConformalMap::affine(c(0.0, 1.0), c(1.0, 0.0)).unwrap();
        let pts: Vec<Complex64> = (0..=20).map(|i| c(0.65 + 0.005 * i as f64, 0.01)).collect();
        let (num, den) = path_lengths(&pts, &h, &map, 1.0, 0.05, 3.0, 0.2, 4).unwrap();
        assert!((num / den - 1.0).abs() < 1e-9, "{}", num / den);
    }

    #[test]
    fn constant_field_dilation_ratio_is_a_power_of_the_derivative() {
        let spec = GridSpec::covering(c(0.7, 0.0), 0.5, 1.0 / 128.0).unwrap();
        let h = GridField::constant(spec, -0.3);
        let map = ConformalMap::affine(c(1.5, 0.0), c(0.0, 0.0)).unwrap();
        let (xi, q) = (0.2, 3.0);
        let pts: Vec<Complex64> = (0..=10).map(|i| c(0.7, -0.02 + 0.004 * i as f64)).collect();
        let (num, den) = path_lengths(&pts, &h, &map, 1.5, 0.05, q, xi, 4).unwrap();
        let table = ScalingTable::power_law(xi, q, 1.0, &[1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625]).unwrap();
        let ratio = length_ratio(&table, 0.05, 1.5, num, den).unwrap();
        // Mass of the quadrature kernel enters through e^{xi h} only at order 1e-6.
        assert!((ratio - 1.0).abs() < 1e-5, "{ratio}");
    }

    #[test]
    fn identity_kernel_difference_vanishes() {
        let d = kernel_difference(&ConformalMap::identity(), c(0.7, 0.0), 0.05, 1.0, 4).unwrap();
        assert_eq!(d.sup, 0.0);
        assert_eq!(d.grad_l2_sq, 0.0);
    }

    #[test]
    fn zero_field_pairing_vanishes_and_identity_probability_is_zero() {
        let mut cfg2 = small_cfg("");
        cfg2.experiment.constant_field = Some(0.0);
        let rep = field_pairing_deviation(&cfg2, cfg2.z0()).unwrap();
        assert_eq!(rep.values("exceed_probability"), vec![0.0, 0.0]);
        let cfg3 = small_cfg("[family]\nname = \"identity\"\n");
        let rep = field_pairing_deviation(&cfg3, cfg3.z0()).unwrap();
        assert!(rep.indicators.iter().all(|i| !i.value && i.slack == Some(cfg3.thresholds.delta)));
        assert!(rep.find_check("h1_decay").unwrap().passed);
    }
}
