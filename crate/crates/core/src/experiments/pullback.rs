use num_complex::Complex64;

use super::config::ExperimentConfig;
use crate::conformal::{coordinate_change_field, ConformalMap, Region};
use crate::error::{Error, Result};
use crate::gff::{localized_mollify_masked, sample_gff};
use crate::grid::{GridField, GridSpec};
use crate::kernels::support_radius;
use crate::lfpp::MetricGraph;
use crate::rng::derive_seed;

/// Raw field for one replica: a GFF sample, or the configured constant.
pub fn replica_field(cfg: &ExperimentConfig, spec: &GridSpec, replica: u64, stream: u64) -> Result<GridField> {
    match cfg.experiment.constant_field {
        Some(v) => Ok(GridField::constant(*spec, v)),
        None => sample_gff(spec, cfg.params.torus_factor, derive_seed(cfg.experiment.seed, &[stream, replica])),
    }
}

/// Localized-LFPP graph of `h^phi = h o phi^{-1} + q log|(phi^{-1})'|` at
/// scale `eps`, pulled back to the lattice of `h`: node `z` carries the
/// potential `exp(xi hat h^phi_eps(phi(z))) |phi'(z)|`, so that lattice paths
/// `P` in `region` get the length of `phi o P`.
///
/// For non-identity maps `h^phi` is resampled onto a lattice of the same
/// spacing covering `phi(region)`, mollified there and read back at `phi(z)`
/// by bilinear interpolation.
pub fn pulled_back_graph(h: &GridField, map: &ConformalMap, q: f64, xi: f64, eps: f64, region: &Region) -> Result<MetricGraph> {
    let spec = h.spec;
    let active: Vec<bool> = (0..spec.len()).map(|k| region.contains(spec.node_at(k))).collect();
    if !active.iter().any(|a| *a) {
        return Err(Error::EmptyRegion(region.label()));
    }
    let kernel = format!("localized:{}", map.label());
    let mut potential = vec![0.0; spec.len()];
    if map.is_identity() {
        let m = localized_mollify_masked(h, eps, &active)?;
        for k in 0..spec.len() {
            if active[k] {
                if !m.valid[k] {
                    return Err(Error::InvalidNodes(format!("node {:?} lacks localized support", spec.coords(k))));
                }
                potential[k] = (xi * m.values[k]).exp();
            }
        }
        return MetricGraph::from_potential(spec, potential, active, xi, &kernel, Some(eps));
    }
    let s = spec.spacing;
    let images: Vec<(usize, Complex64)> = (0..spec.len()).filter(|k| active[*k]).map(|k| (k, map.eval(spec.node_at(k)))).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, w) in &images {
        x0 = x0.min(w.re);
        x1 = x1.max(w.re);
        y0 = y0.min(w.im);
        y1 = y1.max(w.im);
    }
    let r_big = support_radius(eps)?;
    let half = 0.5 * (x1 - x0).max(y1 - y0) + r_big + 3.0 * s;
    let target = GridSpec::covering(Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)), half, s)?;
    let mut keep = vec![false; target.len()];
    for (_, w) in &images {
        let (x, y) = target.lattice_coords(*w);
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            if i + di < target.nx && j + dj < target.ny {
                keep[target.index(i + di, j + dj)] = true;
            }
        }
    }
    let hphi = coordinate_change_field(h, map, q, &target)?;
    let m = localized_mollify_masked(&hphi, eps, &keep)?;
    for (k, w) in images {
        let v = m.bilinear(w).ok_or_else(|| {
            Error::InvalidNodes(format!("{}: mollified field unavailable at phi({})", map.label(), spec.node_at(k)))
        })?;
        potential[k] = (xi * v).exp() * map.deriv(spec.node_at(k)).norm();
    }
    MetricGraph::from_potential(spec, potential, active, xi, &kernel, Some(eps))
}
