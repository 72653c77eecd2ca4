use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pullback::replica_field;
use super::report::{Estimator, ExperimentReport};
use crate::conformal::Region;
use crate::error::{precondition, Error, Result};
use crate::gff::{add_scalar, heat_mollify, heat_truncation};
use crate::grid::{GridField, GridSpec};
use crate::lfpp::build_graph;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scaling::ScalingTable;
use crate::stats::median;

/// Both sides of the affine scaling identity for one parent field.
#[derive(Clone, Debug)]
pub struct AffineSides {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl AffineSides {
    pub fn discrepancies(&self) -> Vec<f64> {
        self.left.iter().zip(&self.right).map(|(l, r)| (l - r).abs() / l.abs()).collect()
    }
}

/// Whether `z -> a z + b` maps the lattice `s Z^2` into itself.
fn nests(a: Complex64, b: Complex64, s: f64) -> bool {
    let int = |x: f64| (x - x.round()).abs() < 1e-9;
    int(a.re) && int(a.im) && int(b.re / s) && int(b.im / s)
}

/// Parent window needed for the identity on the disk `B_radius(center)`.
pub fn affine_window(center: Complex64, radius: f64, a: Complex64, b: Complex64, eps: f64, spacing: f64) -> Result<GridSpec> {
    let m = a.norm();
    let reach = heat_truncation(eps).max(m * (heat_truncation(eps / m) + 5.0 * spacing)) + 3.0 * spacing;
    GridSpec::covering(a * center + b, m * radius + reach, spacing)
}

/// Lattice query pairs inside `B_radius(center)`, reproducible from `seed`.
pub fn affine_pairs(center: Complex64, radius: f64, spacing: f64, n: usize, seed: u64) -> Vec<(Complex64, Complex64)> {
    let mut rng = rng_from_seed(seed);
    let snap = |z: Complex64| Complex64::new((z.re / spacing).round() * spacing, (z.im / spacing).round() * spacing);
    let mut draw = || loop {
        let p = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * radius;
        if p.norm() < 0.9 * radius {
            return snap(center + p);
        }
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (z, w) = (draw(), draw());
        if (z - w).norm() > 4.0 * spacing {
            out.push((z, w));
        }
    }
    out
}

/// Evaluate `a_eps^{-1} D^eps_h(az+b, aw+b)` and
/// `|a|^{1 - xi Q} a_eps^{-1} D^{eps/|a|}_{h(a.+b) + Q log|a|}(z, w)` written in
/// the scaling-ratio form, for a parent field `h` covering the image disk.
#[allow(clippy::too_many_arguments)]
pub fn affine_sides(
    h: &GridField,
    table: &ScalingTable,
    xi: f64,
    a: Complex64,
    b: Complex64,
    eps: f64,
    center: Complex64,
    radius: f64,
    pairs: &[(Complex64, Complex64)],
    allow_interpolation: bool,
) -> Result<AffineSides> {
    let s = h.spec.spacing;
    let m = a.norm();
    if !(m > 0.0) {
        return precondition("affine identity needs a != 0");
    }
    let exact = nests(a, b, s);
    if !exact && !allow_interpolation {
        return precondition(format!(
            "z -> ({a}) z + ({b}) does not nest the lattice of spacing {s}; set affine.allow_interpolation"
        ));
    }
    let q = table.q()?;
    let a_eps = table.a(eps)?;
    let a_small = table.a(eps / m)?;

    // Left: LFPP of h on the image disk.
    let left_graph = build_graph(&heat_mollify(h, eps)?, &Region::closed_disk(a * center + b, m * radius), xi)?;
    // Right: LFPP of the pulled-back field at eps / |a|.
    let zspec = GridSpec::covering(center, radius + heat_truncation(eps / m) + 3.0 * s, s)?;
    let mut values = Vec::with_capacity(zspec.len());
    for k in 0..zspec.len() {
        let w = a * zspec.node_at(k) + b;
        let v = if exact {
            let (i, j) = h.spec.nearest(w).ok_or_else(|| Error::Precondition(format!("pullback node {w} outside the parent window")))?;
            h.at(i, j)
        } else {
            h.bilinear(w).ok_or_else(|| Error::Precondition(format!("pullback node {w} outside the parent window")))?
        };
        values.push(v);
    }
    let g = add_scalar(&GridField::new(zspec, values, h.kind.clone())?, q * m.ln());
    let right_graph = build_graph(&heat_mollify(&g, eps / m)?, &Region::closed_disk(center, radius), xi)?;

    let factor = m * (1.0 / a_eps) / (m.powf(xi * q) * (1.0 / a_small));
    let mut left = Vec::with_capacity(pairs.len());
    let mut right = Vec::with_capacity(pairs.len());
    for (z, w) in pairs {
        let l = left_graph.distance(a * z + b, a * w + b)?.raw.unwrap() / a_eps;
        let r = factor * right_graph.distance(*z, *w)?.raw.unwrap() / a_small;
        left.push(l);
        right.push(r);
    }
    Ok(AffineSides { left, right })
}

/// Affine coordinate-change identity for heat-kernel LFPP. With
/// `affine.refine` the parent field is sampled at half the configured
/// spacing and the coarse level is its every-other-node subsample, so the two
/// levels see the same field.
pub fn affine_identity(cfg: &ExperimentConfig, a: Complex64, b: Complex64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut rep = ExperimentReport::new("affine_identity", cfg);
    let table = cfg.scaling_table()?;
    let xi = cfg.params.xi;
    let center = Complex64::new(cfg.affine.center[0], cfg.affine.center[1]);
    let radius = cfg.affine.radius;
    let replicas = cfg.experiment.replicas;
    for &eps in &cfg.schedule.eps {
        let s = cfg.spacing_for(eps);
        let levels: Vec<(f64, usize)> = if cfg.affine.refine { vec![(s, 2), (s / 2.0, 1)] } else { vec![(s, 1)] };
        let parent_spacing = levels.last().expect("one level").0;
        let spec = affine_window(center, radius, a, b, eps, parent_spacing)?;
        let per_replica: Vec<Vec<Vec<f64>>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let h = replica_field(cfg, &spec, r, 0)?;
                let pairs = affine_pairs(center, radius, s, cfg.affine.pairs, derive_seed(cfg.experiment.seed, &[1, r]));
                levels
                    .iter()
                    .map(|(_, stride)| {
                        let field = if *stride == 1 { h.clone() } else { h.subsample(*stride)? };
                        let sides = affine_sides(&field, &table, xi, a, b, eps, center, radius, &pairs, cfg.affine.allow_interpolation)?;
                        Ok(sides.discrepancies())
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let est = if cfg.experiment.constant_field.is_some() { Estimator::Exact } else { Estimator::MonteCarlo };
        let mut medians = Vec::new();
        for (li, (spacing, _)) in levels.iter().enumerate() {
            let all: Vec<f64> = per_replica.iter().flat_map(|r| r[li].iter().copied()).collect();
            let med = median(&all);
            let max = all.iter().copied().fold(0.0, f64::max);
            rep.metric(&format!("median_rel_discrepancy@{spacing}"), Some(eps), None, med, est);
            rep.metric(&format!("max_rel_discrepancy@{spacing}"), Some(eps), None, max, est);
            medians.push(med);
        }
        if cfg.experiment.constant_field.is_some() || (a - 1.0).norm() == 0.0 && b.norm() == 0.0 {
            let worst = rep.values(&format!("max_rel_discrepancy@{}", levels[0].0)).last().copied().unwrap_or(0.0);
            rep.check(&format!("exact@eps={eps}"), worst <= 1e-12, format!("max relative discrepancy {worst:.3e}"));
        } else {
            let fine = *medians.last().expect("one level");
            rep.check(&format!("median@eps={eps}"), fine <= 0.02, format!("median relative discrepancy {fine:.4e}"));
            if medians.len() == 2 {
                let ratio = medians[1] / medians[0];
                rep.metric("refinement_ratio", Some(eps), None, ratio, Estimator::MonteCarlo);
                rep.check(&format!("halving@eps={eps}"), (0.35..=0.65).contains(&ratio), format!("fine/coarse = {ratio:.4}"));
            }
        }
    }
    rep.provenance.seeds = (0..replicas as u64).map(|r| derive_seed(cfg.experiment.seed, &[0, r])).collect();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_gff;

    fn c(x: f64, y: f64) -> Complex64 {
        Complex64::new(x, y)
    }

    fn table() -> ScalingTable {
        let eps: Vec<f64> = (0..12).map(|k| 2f64.powi(-k)).collect();
        ScalingTable::power_law(0.2, 3.7, 1.0, &eps).unwrap()
    }

    #[test]
    fn unit_map_is_exact_for_a_sampled_field() {
        let s = 1.0 / 64.0;
        let (a, b) = (c(1.0, 0.0), c(0.0, 0.0));
        let spec = affine_window(c(0.0, 0.0), 0.2, a, b, 0.1, s).unwrap();
        let h = sample_gff(&spec, 2.0, 4).unwrap();
        let pairs = affine_pairs(c(0.0, 0.0), 0.2, s, 6, 1);
        let sides = affine_sides(&h, &table(), 0.2, a, b, 0.1, c(0.0, 0.0), 0.2, &pairs, false).unwrap();
        assert_eq!(sides.left, sides.right);
    }

    #[test]
    fn constant_field_is_exact_for_any_q() {
        let s = 1.0 / 64.0;
        let (a, b) = (c(2.0, 0.0), c(4.0 * s, -2.0 * s));
        let spec = affine_window(c(0.0, 0.0), 0.2, a, b, 0.1, s).unwrap();
        let h = GridField::constant(spec, 0.37);
        let pairs = affine_pairs(c(0.0, 0.0), 0.2, s, 6, 2);
        for q in [0.5, 3.7, 9.0] {
            let mut t = table();
            t.q_hat = Some(q);
            let sides = affine_sides(&h, &t, 0.2, a, b, 0.1, c(0.0, 0.0), 0.2, &pairs, false).unwrap();
            assert!(sides.discrepancies().iter().all(|d| *d < 1e-12), "{:?}", sides.discrepancies());
        }
    }

    #[test]
    fn non_nesting_map_needs_consent() {
        let s = 1.0 / 64.0;
        let (a, b) = (c(1.5, 0.0), c(0.0, 0.0));
        let spec = affine_window(c(0.0, 0.0), 0.2, a, b, 0.1, s).unwrap();
        let h = GridField::constant(spec, 0.0);
        let pairs = affine_pairs(c(0.0, 0.0), 0.2, s, 2, 2);
        assert!(affine_sides(&h, &table(), 0.2, a, b, 0.1, c(0.0, 0.0), 0.2, &pairs, false).is_err());
        assert!(affine_sides(&h, &table(), 0.2, a, b, 0.1, c(0.0, 0.0), 0.2, &pairs, true).is_ok());
    }
}
