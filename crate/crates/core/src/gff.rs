//! Whole-plane GFF sampling by spectral synthesis on a periodic torus, and
//! the field-level transforms built on it.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::conformal::Region;
use crate::error::{precondition, Error, Result};
use crate::grid::{FieldKind, GridField, GridSpec};
use crate::kernels::{psi, support_radius};
use crate::rng::rng_from_seed;

const MAX_TORUS_NODES: usize = 1 << 25;

/// In-place 2-D FFT of a row-major `nx * ny` array (unnormalized).
pub(crate) fn fft2(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row = if inverse { planner.plan_fft_inverse(nx) } else { planner.plan_fft_forward(nx) };
    row.process(data);
    let col = if inverse { planner.plan_fft_inverse(ny) } else { planner.plan_fft_forward(ny) };
    let mut buf = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            buf[j] = data[j * nx + i];
        }
        col.process(&mut buf);
        for j in 0..ny {
            data[j * nx + i] = buf[j];
        }
    }
}

fn smooth_size(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Signed angular frequency of FFT bin `k` on a period of `n` samples.
#[inline]
fn freq(k: usize, n: usize, period: f64) -> f64 {
    let s = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * s / period
}

/// A GFF sample on the full synthesis torus.
#[derive(Clone, Debug)]
pub struct TorusSample {
    /// Torus nodes, sharing origin and spacing with the requested window.
    pub field: GridField,
    /// Constant subtracted by the circle-average normalization.
    pub shift: f64,
}

/// Side length in nodes of the torus used for a window.
pub fn torus_size(spec: &GridSpec, torus_factor: f64) -> Result<usize> {
    if !(torus_factor >= 2.0) {
        return precondition(format!("torus_factor must be >= 2, got {torus_factor}"));
    }
    // The unit normalization circle must fit on the torus as well.
    let side = (torus_factor * spec.diameter()).max(2.5);
    let m = smooth_size((side / spec.spacing).ceil() as usize);
    if m < spec.nx.max(spec.ny) {
        return Err(Error::InvalidGrid("window larger than torus".into()));
    }
    if m * m > MAX_TORUS_NODES {
        return precondition(format!("torus of {m}x{m} nodes exceeds the memory budget"));
    }
    Ok(m)
}

fn circle_average_periodic(values: &[f64], m: usize, spacing: f64, origin: Complex64, z: Complex64, r: f64) -> f64 {
    let n = circle_points(r, spacing);
    let mf = m as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let p = z + Complex64::from_polar(r, 2.0 * PI * k as f64 / n as f64);
        let x = ((p.re - origin.re) / spacing).rem_euclid(mf);
        let y = ((p.im - origin.im) / spacing).rem_euclid(mf);
        let i = (x.floor() as usize).min(m - 1);
        let j = (y.floor() as usize).min(m - 1);
        let tx = x - i as f64;
        let ty = y - j as f64;
        let i1 = (i + 1) % m;
        let j1 = (j + 1) % m;
        let v = (1.0 - ty) * ((1.0 - tx) * values[j * m + i] + tx * values[j * m + i1])
            + ty * ((1.0 - tx) * values[j1 * m + i] + tx * values[j1 * m + i1]);
        acc += v;
    }
    acc / n as f64
}

impl TorusSample {
    /// Periodic radius-1 circle average about `z`; zero about the window
    /// center up to rounding.
    pub fn unit_circle_average(&self, z: Complex64) -> f64 {
        let s = &self.field.spec;
        circle_average_periodic(&self.field.values, s.nx, s.spacing, s.origin, z, 1.0)
    }
}

/// Sample the torus field whose upper-left block is the requested window.
pub fn sample_torus(spec: &GridSpec, torus_factor: f64, seed: u64) -> Result<TorusSample> {
    let m = torus_size(spec, torus_factor)?;
    let s = spec.spacing;
    let mut rng = rng_from_seed(seed);
    let mut data: Vec<Complex64> = (0..m * m)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    fft2(&mut data, m, m, false);
    let period = m as f64 * s;
    // Covariance -log|x - y| has spectral density 2 pi / |k|^2; with
    // unnormalized transforms the multiplier is sqrt(2 pi) / (s |k|).
    let amp = (2.0 * PI).sqrt() / s;
    for j in 0..m {
        let ky = freq(j, m, period);
        for i in 0..m {
            let kx = freq(i, m, period);
            let k2 = kx * kx + ky * ky;
            let idx = j * m + i;
            data[idx] = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { data[idx] * (amp / k2.sqrt()) };
        }
    }
    fft2(&mut data, m, m, true);
    let norm = 1.0 / (m * m) as f64;
    let mut values: Vec<f64> = data.iter().map(|c| c.re * norm).collect();
    let shift = circle_average_periodic(&values, m, s, spec.origin, spec.center(), 1.0);
    for v in values.iter_mut() {
        *v -= shift;
    }
    let tspec = GridSpec::new(m, m, s, spec.origin)?;
    Ok(TorusSample { field: GridField::new(tspec, values, FieldKind::RawGff)?, shift })
}

/// Approximate whole-plane GFF on `spec`, normalized so that the radius-1
/// circle average about the window center vanishes.
pub fn sample_gff(spec: &GridSpec, torus_factor: f64, seed: u64) -> Result<GridField> {
    let t = sample_torus(spec, torus_factor, seed)?;
    let m = t.field.spec.nx;
    let mut values = Vec::with_capacity(spec.len());
    for j in 0..spec.ny {
        values.extend_from_slice(&t.field.values[j * m..j * m + spec.nx]);
    }
    GridField::new(*spec, values, FieldKind::RawGff)
}

fn check_mollifiable(field: &GridField, eps: f64) -> Result<()> {
    match field.kind {
        FieldKind::RawGff | FieldKind::Deterministic | FieldKind::CoordinateChanged { .. } => {}
        ref k => return precondition(format!("cannot mollify a field of kind {}", k.label())),
    }
    if !(eps >= 2.0 * field.spec.spacing) {
        return precondition(format!(
            "eps = {eps} is below twice the spacing {}",
            field.spec.spacing
        ));
    }
    Ok(())
}

/// Marks nodes whose `(2k+1)^2` neighbourhood lies inside the grid and is
/// entirely valid in `valid`.
fn box_valid(spec: &GridSpec, valid: &[bool], k: usize) -> Vec<bool> {
    let (nx, ny) = (spec.nx, spec.ny);
    let w = nx + 1;
    let mut pre = vec![0u32; (nx + 1) * (ny + 1)];
    for j in 0..ny {
        for i in 0..nx {
            let bad = u32::from(!valid[j * nx + i]);
            pre[(j + 1) * w + i + 1] = bad + pre[j * w + i + 1] + pre[(j + 1) * w + i] - pre[j * w + i];
        }
    }
    let mut out = vec![false; nx * ny];
    if nx <= 2 * k || ny <= 2 * k {
        return out;
    }
    for j in k..ny - k {
        for i in k..nx - k {
            let (i0, i1, j0, j1) = (i - k, i + k + 1, j - k, j + k + 1);
            let bad = pre[j1 * w + i1] + pre[j0 * w + i0] - pre[j0 * w + i1] - pre[j1 * w + i0];
            out[j * nx + i] = bad == 0;
        }
    }
    out
}

/// Truncation half-width used by [`heat_mollify`].
pub fn heat_truncation(eps: f64) -> f64 {
    let l = if eps < 1.0 { eps * (1.0 / eps).ln() } else { 0.0 };
    l.max(6.0 * eps)
}

/// Convolution with the heat kernel `p_{eps^2/2}`.
///
/// The kernel is separable, so it is applied as two 1-D passes over a square
/// truncation of half-width [`heat_truncation`]; the 1-D weights are
/// normalized to unit sum, which makes the 2-D mass exactly one.
pub fn heat_mollify(field: &GridField, eps: f64) -> Result<GridField> {
    check_mollifiable(field, eps)?;
    let spec = field.spec;
    let s = spec.spacing;
    let k = (heat_truncation(eps) / s).floor() as usize;
    let mut w: Vec<f64> = (0..=k).map(|a| (-(a as f64 * s).powi(2) / (eps * eps)).exp()).collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    for x in w.iter_mut() {
        *x /= total;
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let valid = box_valid(&spec, &field.valid, k);
    if !valid.iter().any(|v| *v) {
        return precondition("insufficient margin: no node keeps its kernel support inside the window");
    }
    let f = &field.values;
    let mut tmp = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in k..nx - k {
            let c = j * nx + i;
            let mut acc = w[0] * f[c];
            for a in 1..=k {
                acc += w[a] * (f[c - a] + f[c + a]);
            }
            tmp[c] = acc;
        }
    }
    let mut out = vec![0.0; nx * ny];
    for j in k..ny - k {
        for i in k..nx - k {
            let c = j * nx + i;
            if !valid[c] {
                continue;
            }
            let mut acc = w[0] * tmp[c];
            for a in 1..=k {
                acc += w[a] * (tmp[c - a * nx] + tmp[c + a * nx]);
            }
            out[c] = acc;
        }
    }
    Ok(field.derived(spec, out, valid, FieldKind::HeatMollified { eps }))
}

/// Discrete taps of the localized mollifier on a lattice of spacing `s`,
/// grouped by symmetry class and normalized to unit total mass.
pub(crate) struct LocalizedTaps {
    pub center: f64,
    /// `(a, w)`: offsets `(±a, 0)` and `(0, ±a)`.
    pub axis: Vec<(usize, f64)>,
    /// `(a, b, w)` with `a, b >= 1`: offsets `(±a, ±b)`.
    pub quad: Vec<(usize, usize, f64)>,
    pub reach: usize,
}

pub(crate) fn localized_taps(eps: f64, s: f64) -> Result<LocalizedTaps> {
    let r_big = support_radius(eps)?;
    let k = (r_big / s).ceil() as usize;
    let weight = |a: usize, b: usize| -> f64 {
        let r = s * ((a * a + b * b) as f64).sqrt();
        if r < r_big {
            psi(r / r_big) * (-r * r / (eps * eps)).exp()
        } else {
            0.0
        }
    };
    let center = weight(0, 0);
    let mut axis = Vec::new();
    let mut quad = Vec::new();
    for a in 1..=k {
        let w = weight(a, 0);
        if w > 0.0 {
            axis.push((a, w));
        }
    }
    for b in 1..=k {
        for a in 1..=k {
            let w = weight(a, b);
            if w > 0.0 {
                quad.push((a, b, w));
            }
        }
    }
    let total = center + 4.0 * axis.iter().map(|t| t.1).sum::<f64>() + 4.0 * quad.iter().map(|t| t.2).sum::<f64>();
    let reach = axis.iter().map(|t| t.0).chain(quad.iter().map(|t| t.0.max(t.1))).max().unwrap_or(0);
    Ok(LocalizedTaps {
        center: center / total,
        axis: axis.into_iter().map(|(a, w)| (a, w / total)).collect(),
        quad: quad.into_iter().map(|(a, b, w)| (a, b, w / total)).collect(),
        reach,
    })
}

impl LocalizedTaps {
    #[cfg(test)]
    pub fn mass(&self) -> f64 {
        self.center + 4.0 * self.axis.iter().map(|t| t.1).sum::<f64>() + 4.0 * self.quad.iter().map(|t| t.2).sum::<f64>()
    }

    /// Apply at flat index `c` of a row-major array of width `nx`.
    #[inline]
    pub fn apply(&self, f: &[f64], c: usize, nx: usize) -> f64 {
        let mut acc = self.center * f[c];
        for &(a, w) in &self.axis {
            let dy = a * nx;
            acc += w * ((f[c + a] + f[c - a]) + (f[c + dy] + f[c - dy]));
        }
        for &(a, b, w) in &self.quad {
            let d1 = b * nx + a;
            let d2 = b * nx - a;
            acc += w * ((f[c + d1] + f[c - d1]) + (f[c + d2] + f[c - d2]));
        }
        acc
    }
}

/// Convolution with the compactly supported mollifier
/// `Z^{-1} psi_eps p_{eps^2/2}`, using only lattice offsets strictly inside
/// radius `eps log(1/eps)`.
pub fn localized_mollify(field: &GridField, eps: f64) -> Result<GridField> {
    check_mollifiable(field, eps)?;
    let spec = field.spec;
    let taps = localized_taps(eps, spec.spacing)?;
    let valid = box_valid(&spec, &field.valid, taps.reach);
    if !valid.iter().any(|v| *v) {
        return precondition("insufficient margin: no node keeps its kernel support inside the window");
    }
    let nx = spec.nx;
    let mut out = vec![0.0; spec.len()];
    for (c, ok) in valid.iter().enumerate() {
        if *ok {
            out[c] = taps.apply(&field.values, c, nx);
        }
    }
    Ok(field.derived(spec, out, valid, FieldKind::LocalizedMollified { eps }))
}

/// [`localized_mollify`] evaluated only at nodes with `keep[k]`; every other
/// node is flagged invalid.
pub fn localized_mollify_masked(field: &GridField, eps: f64, keep: &[bool]) -> Result<GridField> {
    check_mollifiable(field, eps)?;
    let spec = field.spec;
    if keep.len() != spec.len() {
        return Err(Error::SpecMismatch);
    }
    let taps = localized_taps(eps, spec.spacing)?;
    let mut valid = box_valid(&spec, &field.valid, taps.reach);
    for (v, k) in valid.iter_mut().zip(keep) {
        *v &= *k;
    }
    let nx = spec.nx;
    let mut out = vec![0.0; spec.len()];
    for (c, ok) in valid.iter().enumerate() {
        if *ok {
            out[c] = taps.apply(&field.values, c, nx);
        }
    }
    Ok(field.derived(spec, out, valid, FieldKind::LocalizedMollified { eps }))
}

/// Number of quadrature points used on a circle of radius `r`.
pub fn circle_points(r: f64, spacing: f64) -> usize {
    (16 * (2.0 * PI * r / spacing).ceil() as usize).max(64)
}

/// Mean of the bilinear interpolant over equally spaced points of the circle,
/// sixteen per lattice spacing of arc so the kinks of the interpolant average out.
pub fn circle_average(field: &GridField, z: Complex64, r: f64) -> Result<f64> {
    circle_average_n(field, z, r, circle_points(r, field.spec.spacing))
}

/// [`circle_average`] with an explicit number of points.
pub fn circle_average_n(field: &GridField, z: Complex64, r: f64, n: usize) -> Result<f64> {
    if !(r >= 2.0 * field.spec.spacing) {
        return precondition(format!("radius {r} below twice the spacing"));
    }
    let mut acc = 0.0;
    for k in 0..n {
        let p = z + Complex64::from_polar(r, 2.0 * PI * k as f64 / n as f64);
        acc += field
            .bilinear(p)
            .ok_or_else(|| Error::Precondition(format!("circle of radius {r} about {z} exits the window")))?;
    }
    Ok(acc / n as f64)
}

pub fn add_scalar(field: &GridField, c: f64) -> GridField {
    let mut out = field.clone();
    for (v, ok) in out.values.iter_mut().zip(&out.valid) {
        if *ok {
            *v += c;
        }
    }
    out
}

pub fn add_field(field: &GridField, f: &GridField) -> Result<GridField> {
    if field.spec != f.spec {
        return Err(Error::SpecMismatch);
    }
    let mut out = field.clone();
    for k in 0..out.values.len() {
        out.valid[k] = field.valid[k] && f.valid[k];
        out.values[k] = if out.valid[k] { field.values[k] + f.values[k] } else { 0.0 };
    }
    Ok(out)
}

/// `H(z) = h(z + b)` on the same window, by an exact index shift. Nodes whose
/// shifted position leaves the window become invalid.
pub fn translate(field: &GridField, b: Complex64) -> Result<GridField> {
    let s = field.spec.spacing;
    let (bx, by) = (b.re / s, b.im / s);
    let (di, dj) = (bx.round(), by.round());
    if (bx - di).abs() > 1e-9 || (by - dj).abs() > 1e-9 {
        return precondition(format!("shift {b} is not a lattice vector"));
    }
    let (di, dj) = (di as i64, dj as i64);
    let (nx, ny) = (field.spec.nx as i64, field.spec.ny as i64);
    if di.abs() >= nx || dj.abs() >= ny {
        return precondition(format!("shift {b} exceeds the window"));
    }
    let mut values = vec![0.0; field.values.len()];
    let mut valid = vec![false; field.values.len()];
    for j in 0..ny {
        let sj = j + dj;
        if sj < 0 || sj >= ny {
            continue;
        }
        for i in 0..nx {
            let si = i + di;
            if si < 0 || si >= nx {
                continue;
            }
            let dst = (j * nx + i) as usize;
            let src = (sj * nx + si) as usize;
            values[dst] = field.values[src];
            valid[dst] = field.valid[src];
        }
    }
    Ok(GridField { spec: field.spec, values, valid, kind: field.kind.clone(), history: field.history.clone() })
}

/// `eps^{gamma^2/2} sum_{nodes in region} e^{gamma h*_eps} spacing^2`.
pub fn gmc_mass(field: &GridField, eps: f64, gamma: f64, region: &Region) -> Result<f64> {
    let m = heat_mollify(field, eps)?;
    let s2 = field.spec.spacing * field.spec.spacing;
    let mut acc = 0.0;
    let mut n = 0usize;
    for k in 0..m.values.len() {
        if region.contains(m.spec.node_at(k)) {
            if !m.valid[k] {
                return Err(Error::InvalidNodes("region exits the margin-safe node set".into()));
            }
            acc += (gamma * m.values[k]).exp();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion("gmc region contains no nodes".into()));
    }
    Ok(eps.powf(gamma * gamma / 2.0) * acc * s2)
}

/// `(||f||^2 + ||grad f||^2)^{1/2}` over region nodes where central
/// differences are available.
pub fn h1_norm(field: &GridField, region: &Region) -> Result<f64> {
    let spec = field.spec;
    let s = spec.spacing;
    let nx = spec.nx;
    let mut acc = 0.0;
    let mut n = 0usize;
    for j in 1..spec.ny - 1 {
        for i in 1..nx - 1 {
            let c = j * nx + i;
            if !region.contains(spec.node(i, j)) {
                continue;
            }
            let nb = [c, c - 1, c + 1, c - nx, c + nx];
            if nb.iter().any(|k| !field.valid[*k]) {
                continue;
            }
            let f = field.values[c];
            let gx = (field.values[c + 1] - field.values[c - 1]) / (2.0 * s);
            let gy = (field.values[c + nx] - field.values[c - nx]) / (2.0 * s);
            acc += f * f + gx * gx + gy * gy;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion("no interior nodes for the H1 norm".into()));
    }
    Ok((acc * s * s).sqrt())
}

/// `H^{-1}` norm of a field treated as periodic over its whole grid:
/// `(area * sum_{k != 0} |c_k|^2 / |k|^2)^{1/2}` with `c_k` the Fourier
/// coefficients.
pub fn spectral_hminus1_norm(field: &GridField) -> Result<f64> {
    let spec = field.spec;
    if field.valid.iter().any(|v| !v) {
        return Err(Error::InvalidNodes("torus field must be fully valid".into()));
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let mut data: Vec<Complex64> = field.values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2(&mut data, nx, ny, false);
    let (lx, ly) = (nx as f64 * spec.spacing, ny as f64 * spec.spacing);
    let n = (nx * ny) as f64;
    let mut acc = 0.0;
    for j in 0..ny {
        let ky = freq(j, ny, ly);
        for i in 0..nx {
            let kx = freq(i, nx, lx);
            let k2 = kx * kx + ky * ky;
            if k2 > 0.0 {
                acc += (data[j * nx + i] / n).norm_sqr() / k2;
            }
        }
    }
    Ok((lx * ly * acc).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn spec(n: usize, s: f64) -> GridSpec {
        GridSpec::new(n, n, s, Complex64::new(-0.5 * (n - 1) as f64 * s, -0.5 * (n - 1) as f64 * s)).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_normalized() {
        let sp = spec(72, 1.0 / 32.0);
        let a = sample_gff(&sp, 2.0, 11).unwrap();
        let b = sample_gff(&sp, 2.0, 11).unwrap();
        assert_eq!(a.values, b.values);
        let c = sample_gff(&sp, 2.0, 12).unwrap();
        assert_ne!(a.values, c.values);
        let avg = circle_average(&a, sp.center(), 1.0).unwrap();
        assert!(avg.abs() < 1e-8, "{avg}");
    }

    #[test]
    fn rejects_small_torus_factor() {
        assert!(sample_gff(&spec(16, 0.1), 1.5, 0).is_err());
    }

    #[test]
    fn heat_mollify_preserves_constants_and_linear_fields() {
        let sp = spec(64, 1.0 / 64.0);
        let c = heat_mollify(&GridField::constant(sp, 2.5), 0.05).unwrap();
        for k in 0..sp.len() {
            if c.valid[k] {
                assert!((c.values[k] - 2.5).abs() < 1e-12);
            }
        }
        let lin = GridField::from_fn(sp, |z| z.re);
        let m = heat_mollify(&lin, 0.05).unwrap();
        assert!(m.valid_count() > 0);
        for k in 0..sp.len() {
            if m.valid[k] {
                assert!((m.values[k] - lin.values[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heat_mollify_matches_direct_quadrature_on_gaussian_bump() {
        let s = 1.0 / 128.0;
        let sp = spec(129, s);
        let b = 0.08;
        let bump = |z: Complex64| (-z.norm_sqr() / (b * b)).exp();
        let f = GridField::from_fn(sp, bump);
        let eps = 0.04;
        let m = heat_mollify(&f, eps).unwrap();
        // Continuum convolution of two Gaussians: closed form.
        let exact = |z: Complex64| {
            let v = b * b + eps * eps;
            b * b / v * (-z.norm_sqr() / v).exp()
        };
        for (i, j) in [(64, 64), (70, 60), (50, 75), (80, 80), (64, 40)] {
            let z = sp.node(i, j);
            let got = m.at(i, j);
            // Cross-check the closed form against 1-D adaptive quadrature of
            // the separable integral.
            let gx = |x0: f64| {
                quad::integrate(
                    |t| (-(t * t) / (b * b)).exp() * (-(x0 - t).powi(2) / (eps * eps)).exp() / (PI.sqrt() * eps),
                    x0 - 1.0,
                    x0 + 1.0,
                    1e-15,
                    1e-13,
                    200,
                )
                .value
            };
            let oracle = gx(z.re) * gx(z.im);
            assert!((oracle - exact(z)).abs() < 1e-10);
            assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        }
    }

    #[test]
    fn localized_taps_have_unit_mass() {
        for (eps, s) in [(0.1, 1.0 / 64.0), (0.05, 1.0 / 128.0), (0.025, 1.0 / 256.0)] {
            let t = localized_taps(eps, s).unwrap();
            assert!((t.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn localized_mollify_preserves_constants() {
        let sp = spec(64, 1.0 / 64.0);
        let m = localized_mollify(&GridField::constant(sp, -1.25), 0.05).unwrap();
        for k in 0..sp.len() {
            if m.valid[k] {
                assert!((m.values[k] + 1.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mollifiers_commute_with_scalar_addition() {
        let sp = spec(64, 1.0 / 64.0);
        let h = sample_gff(&sp, 2.0, 4).unwrap();
        let c = 0.731;
        for moll in [heat_mollify, localized_mollify] {
            let a = moll(&add_scalar(&h, c), 0.05).unwrap();
            let b = add_scalar(&moll(&h, 0.05).unwrap(), c);
            for k in 0..sp.len() {
                if a.valid[k] {
                    assert!((a.values[k] - b.values[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mollifiers_preserve_even_symmetry_exactly() {
        let sp = spec(65, 1.0 / 64.0);
        let ctr = sp.center();
        let f = GridField::from_fn(sp, |z| {
            let d = z - ctr;
            (3.0 * d.re).cos() * (5.0 * d.im * d.im).sin() + d.norm()
        });
        for moll in [heat_mollify, localized_mollify] {
            let m = moll(&f, 0.05).unwrap();
            for j in 0..sp.ny {
                for i in 0..sp.nx {
                    if m.is_valid(i, j) {
                        let (mi, mj) = (sp.nx - 1 - i, sp.ny - 1 - j);
                        assert_eq!(m.at(i, j), m.at(mi, j));
                        assert_eq!(m.at(i, j), m.at(i, mj));
                        assert_eq!(m.at(i, j), m.at(mi, mj));
                    }
                }
            }
        }
    }

    #[test]
    fn circle_average_contracts() {
        let sp = spec(129, 1.0 / 64.0);
        let c = GridField::constant(sp, 3.0);
        assert!((circle_average(&c, sp.center(), 0.5).unwrap() - 3.0).abs() < 1e-12);
        let x = GridField::from_fn(sp, |z| z.re);
        assert!(circle_average(&x, Complex64::new(0.0, 0.0), 0.5).unwrap().abs() < 1e-12);
        assert!(circle_average(&x, Complex64::new(0.0, 0.0), 5.0).is_err());
    }

    #[test]
    fn circle_average_angular_refinement() {
        let sp = spec(129, 1.0 / 64.0);
        let h = heat_mollify(&sample_gff(&sp, 2.0, 9).unwrap(), 0.06).unwrap();
        let z = Complex64::new(0.05, -0.03);
        let r = 0.4;
        let n = circle_points(r, sp.spacing);
        let a = circle_average_n(&h, z, r, n).unwrap();
        let b = circle_average_n(&h, z, r, 4 * n).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn add_and_translate_contracts() {
        let sp = spec(32, 0.1);
        let h = sample_gff(&sp, 2.0, 1).unwrap();
        assert_eq!(add_scalar(&h, 0.0).values, h.values);
        let neg = GridField::new(sp, h.values.iter().map(|v| -v).collect(), FieldKind::Deterministic).unwrap();
        assert!(add_field(&h, &neg).unwrap().values.iter().all(|v| *v == 0.0));
        assert_eq!(translate(&h, Complex64::new(0.0, 0.0)).unwrap(), h);
        let b = Complex64::new(0.3, -0.2);
        let t = translate(&h, b).unwrap();
        let back = translate(&t, -b).unwrap();
        for k in 0..sp.len() {
            if back.valid[k] {
                assert_eq!(back.values[k], h.values[k]);
            }
        }
        let (i, j) = (5, 10);
        assert_eq!(t.at(i, j), h.at(i + 3, j - 2));
        assert!(translate(&h, Complex64::new(0.05, 0.0)).is_err());
        assert!(translate(&h, Complex64::new(3.2, 0.0)).is_err());
    }

    #[test]
    fn gmc_mass_degenerate_cases() {
        let sp = spec(80, 1.0 / 32.0);
        let region = Region::Disk { center: Complex64::new(0.0, 0.0), radius: 0.5 };
        let z = GridField::constant(sp, 0.0);
        let n = (0..sp.len()).filter(|k| region.contains(sp.node_at(*k))).count();
        let area = n as f64 * sp.spacing * sp.spacing;
        let m0 = gmc_mass(&z, 0.1, 0.0, &region).unwrap();
        assert!((m0 - area).abs() < 1e-12);
        let c = GridField::constant(sp, 0.4);
        let m = gmc_mass(&c, 0.1, 0.5, &region).unwrap();
        let expect = 0.1f64.powf(0.125) * (0.5f64 * 0.4).exp() * area;
        assert!((m - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn sobolev_norms() {
        let sp = spec(40, 0.05);
        let region = Region::Disk { center: Complex64::new(0.0, 0.0), radius: 0.6 };
        assert_eq!(h1_norm(&GridField::constant(sp, 0.0), &region).unwrap(), 0.0);
        let c = 1.7;
        let n = (0..sp.len()).filter(|k| region.contains(sp.node_at(*k))).count();
        let area = n as f64 * sp.spacing * sp.spacing;
        let v = h1_norm(&GridField::constant(sp, c), &region).unwrap();
        assert!((v - c * area.sqrt()).abs() < 1e-9);

        // Real plane wave A cos(k.x) on a 64x48 torus.
        let tor = GridSpec::new(64, 48, 0.1, Complex64::new(0.0, 0.0)).unwrap();
        let (lx, ly) = (6.4, 4.8);
        let kv = (2.0 * PI * 3.0 / lx, 2.0 * PI * 2.0 / ly);
        let amp = 0.8;
        let wave = GridField::from_fn(tor, |z| amp * (kv.0 * z.re + kv.1 * z.im).cos());
        let kn = (kv.0 * kv.0 + kv.1 * kv.1).sqrt();
        let expect = amp * (lx * ly / 2.0).sqrt() / kn;
        let got = spectral_hminus1_norm(&wave).unwrap();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        assert_eq!(spectral_hminus1_norm(&GridField::constant(tor, 0.0)).unwrap(), 0.0);
    }
}
