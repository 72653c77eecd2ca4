//! Conformal maps with derivatives, planar regions, map families and the
//! distortion checks used to certify them.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::gff::fft2;
use crate::grid::{FieldKind, GridField, GridSpec};

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

// ---------------------------------------------------------------- regions

/// Planar regions. Disks and annuli are open; rectangles are closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Plane,
    Disk { center: C, radius: f64 },
    Annulus { center: C, r1: f64, r2: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Union { parts: Vec<Region> },
    Mask { spec: GridSpec, mask: Vec<bool> },
}

impl Region {
    pub fn disk(center: C, radius: f64) -> Self {
        Region::Disk { center, radius }
    }

    pub fn annulus(center: C, r1: f64, r2: f64) -> Result<Self> {
        if !(0.0 < r1 && r1 < r2) {
            return precondition(format!("annulus needs 0 < r1 < r2, got {r1}, {r2}"));
        }
        Ok(Region::Annulus { center, r1, r2 })
    }

    /// Annulus including both boundary circles (up to a relative 1e-12).
    pub fn closed_annulus(center: C, r1: f64, r2: f64) -> Result<Self> {
        Self::annulus(center, r1 * (1.0 - 1e-12), r2 * (1.0 + 1e-12))
    }

    pub fn closed_disk(center: C, radius: f64) -> Self {
        Region::Disk { center, radius: radius * (1.0 + 1e-12) }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Region::Rect { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    /// Mask region from a node predicate.
    pub fn mask_from(spec: GridSpec, pred: impl Fn(C) -> bool) -> Self {
        let mask = (0..spec.len()).map(|k| pred(spec.node_at(k))).collect();
        Region::Mask { spec, mask }
    }

    pub fn contains(&self, z: C) -> bool {
        match self {
            Region::Plane => true,
            Region::Disk { center, radius } => (z - center).norm() < *radius,
            Region::Annulus { center, r1, r2 } => {
                let d = (z - center).norm();
                *r1 < d && d < *r2
            }
            Region::Rect { x0, y0, x1, y1 } => z.re >= *x0 && z.re <= *x1 && z.im >= *y0 && z.im <= *y1,
            Region::Union { parts } => parts.iter().any(|p| p.contains(z)),
            Region::Mask { spec, mask } => spec.nearest(z).map(|(i, j)| mask[spec.index(i, j)]).unwrap_or(false),
        }
    }

    /// Signed distance to the boundary, positive inside. For unions this is
    /// a lower bound; for masks it is accurate to half a spacing.
    pub fn inside_distance(&self, z: C) -> f64 {
        match self {
            Region::Plane => f64::INFINITY,
            Region::Disk { center, radius } => radius - (z - center).norm(),
            Region::Annulus { center, r1, r2 } => {
                let d = (z - center).norm();
                (d - r1).min(r2 - d)
            }
            Region::Rect { x0, y0, x1, y1 } => (z.re - x0).min(x1 - z.re).min(z.im - y0).min(y1 - z.im),
            Region::Union { parts } => parts.iter().map(|p| p.inside_distance(z)).fold(f64::NEG_INFINITY, f64::max),
            Region::Mask { spec, .. } => {
                let h = 0.5 * spec.spacing;
                if self.contains(z) {
                    h
                } else {
                    -h
                }
            }
        }
    }

    /// `(xmin, ymin, xmax, ymax)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        match self {
            Region::Plane => (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY),
            Region::Disk { center, radius } => {
                (center.re - radius, center.im - radius, center.re + radius, center.im + radius)
            }
            Region::Annulus { center, r2, .. } => (center.re - r2, center.im - r2, center.re + r2, center.im + r2),
            Region::Rect { x0, y0, x1, y1 } => (*x0, *y0, *x1, *y1),
            Region::Union { parts } => parts.iter().map(|p| p.bbox()).fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
            ),
            Region::Mask { spec, mask } => {
                let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (k, m) in mask.iter().enumerate() {
                    if *m {
                        let z = spec.node_at(k);
                        bb = (bb.0.min(z.re), bb.1.min(z.im), bb.2.max(z.re), bb.3.max(z.im));
                    }
                }
                bb
            }
        }
    }

    fn boundary_samples(&self, pitch: f64, out: &mut Vec<C>) {
        let circle = |center: C, r: f64, out: &mut Vec<C>| {
            let n = ((2.0 * PI * r / pitch).ceil() as usize).max(64);
            for k in 0..n {
                out.push(center + C::from_polar(r, 2.0 * PI * k as f64 / n as f64));
            }
        };
        match self {
            Region::Disk { center, radius } => circle(*center, *radius, out),
            Region::Annulus { center, r1, r2 } => {
                circle(*center, *r1, out);
                circle(*center, *r2, out);
            }
            Region::Rect { x0, y0, x1, y1 } => {
                let nx = ((x1 - x0) / pitch).ceil().max(1.0) as usize;
                let ny = ((y1 - y0) / pitch).ceil().max(1.0) as usize;
                for k in 0..=nx {
                    let x = x0 + (x1 - x0) * k as f64 / nx as f64;
                    out.push(c(x, *y0));
                    out.push(c(x, *y1));
                }
                for k in 0..=ny {
                    let y = y0 + (y1 - y0) * k as f64 / ny as f64;
                    out.push(c(*x0, y));
                    out.push(c(*x1, y));
                }
            }
            Region::Union { parts } => {
                for p in parts {
                    p.boundary_samples(pitch, out);
                }
            }
            Region::Plane | Region::Mask { .. } => {}
        }
    }

    /// Points of the closure: a grid of pitch `pitch` inside plus boundary
    /// samples.
    pub fn closure_samples(&self, pitch: f64) -> Vec<C> {
        let mut out = Vec::new();
        let (x0, y0, x1, y1) = self.bbox();
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return out;
        }
        let nx = ((x1 - x0) / pitch).ceil() as usize;
        let ny = ((y1 - y0) / pitch).ceil() as usize;
        for j in 0..=ny {
            for i in 0..=nx {
                let z = c(x0 + i as f64 * pitch, y0 + j as f64 * pitch);
                if self.contains(z) {
                    out.push(z);
                }
            }
        }
        self.boundary_samples(pitch, &mut out);
        out
    }

    /// `self` is compactly contained in `other` with distance at least
    /// `margin` from its boundary (checked on closure samples).
    pub fn compactly_inside(&self, other: &Region, margin: f64, pitch: f64) -> bool {
        let pts = self.closure_samples(pitch);
        !pts.is_empty() && pts.iter().all(|p| other.inside_distance(*p) > margin)
    }

    pub fn label(&self) -> String {
        match self {
            Region::Plane => "plane".into(),
            Region::Disk { center, radius } => format!("disk({center},{radius})"),
            Region::Annulus { center, r1, r2 } => format!("annulus({center},{r1},{r2})"),
            Region::Rect { x0, y0, x1, y1 } => format!("rect({x0},{y0},{x1},{y1})"),
            Region::Union { parts } => format!("union[{}]", parts.len()),
            Region::Mask { .. } => "mask".into(),
        }
    }
}

// ---------------------------------------------------------------- maps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapKind {
    Affine { a: C, b: C },
    Moebius { a: C, b: C, c: C, d: C },
    /// `sum_n coeffs[n] (z - center)^n` on the disk of the given radius.
    PowerSeries { center: C, radius: f64, coeffs: Vec<C> },
    /// Applied first to last.
    Composition { maps: Vec<ConformalMap> },
}

/// A holomorphic map together with its declared domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalMap {
    pub kind: MapKind,
    /// Declared domain, intersected with the natural domain of `kind`.
    pub domain: Option<Region>,
    pub name: String,
    /// Whether global injectivity on the domain was certified.
    pub certified: bool,
}

const NEWTON_TOL: f64 = 1e-13;

impl ConformalMap {
    pub fn identity() -> Self {
        Self {
            kind: MapKind::Affine { a: c(1.0, 0.0), b: c(0.0, 0.0) },
            domain: None,
            name: "identity".into(),
            certified: true,
        }
    }

    pub fn affine(a: C, b: C) -> Result<Self> {
        if a.norm() == 0.0 || !a.is_finite() || !b.is_finite() {
            return precondition("affine map needs finite a != 0");
        }
        Ok(Self { kind: MapKind::Affine { a, b }, domain: None, name: format!("affine(a={a}, b={b})"), certified: true })
    }

    pub fn moebius(a: C, b: C, cc: C, d: C) -> Result<Self> {
        if (a * d - b * cc).norm() == 0.0 {
            return precondition("moebius map needs ad - bc != 0");
        }
        Ok(Self {
            kind: MapKind::Moebius { a, b, c: cc, d },
            domain: None,
            name: format!("moebius({a},{b},{cc},{d})"),
            certified: true,
        })
    }

    /// Power series on `B_radius(center)`, certified injective by a winding
    /// check of the derivative and a self-intersection check of the boundary
    /// image. Fails if either check fails.
    pub fn power_series(center: C, radius: f64, coeffs: Vec<C>) -> Result<Self> {
        let m = Self::power_series_uncertified(center, radius, coeffs)?;
        m.certify_injective()?;
        Ok(Self { certified: true, ..m })
    }

    /// Power series without the global injectivity certificate; only the
    /// derivative is evaluated at construction.
    pub fn power_series_uncertified(center: C, radius: f64, coeffs: Vec<C>) -> Result<Self> {
        if !(radius > 0.0) || coeffs.len() < 2 || coeffs.iter().any(|a| !a.is_finite()) {
            return precondition("power series needs radius > 0 and at least two finite coefficients");
        }
        Ok(Self {
            kind: MapKind::PowerSeries { center, radius, coeffs },
            domain: None,
            name: "power-series".into(),
            certified: false,
        })
    }

    /// `z -> z^2 + 2` re-expanded about `center`.
    pub fn square_plus_two(center: C, radius: f64) -> Result<Self> {
        let coeffs = vec![center * center + 2.0, 2.0 * center, c(1.0, 0.0)];
        let mut m = Self::power_series(center, radius, coeffs)?;
        m.name = format!("z^2+2@{center}");
        Ok(m)
    }

    pub fn compose(maps: Vec<ConformalMap>) -> Result<Self> {
        if maps.is_empty() {
            return precondition("empty composition");
        }
        let certified = maps.iter().all(|m| m.certified);
        let name = maps.iter().map(|m| m.name.clone()).collect::<Vec<_>>().join(" then ");
        Ok(Self { kind: MapKind::Composition { maps }, domain: None, name, certified })
    }

    pub fn with_domain(mut self, domain: Region) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.name
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, MapKind::Affine { a, b } if a == c(1.0, 0.0) && b == c(0.0, 0.0))
    }

    /// Affine coefficients, if the map is affine.
    pub fn as_affine(&self) -> Option<(C, C)> {
        match self.kind {
            MapKind::Affine { a, b } => Some((a, b)),
            _ => None,
        }
    }

    fn natural_domain(&self, z: C) -> bool {
        match &self.kind {
            MapKind::Affine { .. } => true,
            MapKind::Moebius { c: cc, d, .. } => (cc * z + d).norm() > 1e-300,
            MapKind::PowerSeries { center, radius, .. } => (z - center).norm() < *radius,
            MapKind::Composition { maps } => {
                let mut w = z;
                for m in maps {
                    if !m.in_domain(w) {
                        return false;
                    }
                    w = m.eval(w);
                }
                true
            }
        }
    }

    pub fn in_domain(&self, z: C) -> bool {
        self.natural_domain(z) && self.domain.as_ref().is_none_or(|d| d.contains(z))
    }

    /// Domain as a region (the declared one if present, else the natural one).
    pub fn domain_region(&self) -> Region {
        if let Some(d) = &self.domain {
            return d.clone();
        }
        match &self.kind {
            MapKind::PowerSeries { center, radius, .. } => Region::disk(*center, *radius),
            MapKind::Composition { maps } => maps[0].domain_region(),
            _ => Region::Plane,
        }
    }

    /// Value, first and second derivative.
    pub fn eval3(&self, z: C) -> (C, C, C) {
        match &self.kind {
            MapKind::Affine { a, b } => (a * z + b, *a, c(0.0, 0.0)),
            MapKind::Moebius { a, b, c: cc, d } => {
                let den = cc * z + d;
                let det = a * d - b * cc;
                ((a * z + b) / den, det / (den * den), -2.0 * cc * det / (den * den * den))
            }
            MapKind::PowerSeries { center, coeffs, .. } => {
                let u = z - center;
                let mut f = c(0.0, 0.0);
                let mut f1 = c(0.0, 0.0);
                let mut f2 = c(0.0, 0.0);
                for a in coeffs.iter().rev() {
                    f2 = f2 * u + 2.0 * f1;
                    f1 = f1 * u + f;
                    f = f * u + a;
                }
                (f, f1, f2)
            }
            MapKind::Composition { maps } => {
                let (mut w, mut d1, mut d2) = (z, c(1.0, 0.0), c(0.0, 0.0));
                for m in maps {
                    let (g, g1, g2) = m.eval3(w);
                    // (g o f)'' = g''(f) f'^2 + g'(f) f''
                    d2 = g2 * d1 * d1 + g1 * d2;
                    d1 = g1 * d1;
                    w = g;
                }
                (w, d1, d2)
            }
        }
    }

    #[inline]
    pub fn eval(&self, z: C) -> C {
        self.eval3(z).0
    }

    #[inline]
    pub fn deriv(&self, z: C) -> C {
        self.eval3(z).1
    }

    #[inline]
    pub fn deriv2(&self, z: C) -> C {
        self.eval3(z).2
    }

    /// Inverse image of `w`, starting Newton from `guess` when given.
    pub fn inverse_from(&self, w: C, guess: Option<C>) -> Result<C> {
        let z = match &self.kind {
            MapKind::Affine { a, b } => (w - b) / a,
            MapKind::Moebius { a, b, c: cc, d } => (d * w - b) / (a - cc * w),
            MapKind::PowerSeries { center, coeffs, .. } => {
                let z0 = guess.unwrap_or(center + (w - coeffs[0]) / coeffs[1]);
                self.newton(w, z0)?
            }
            MapKind::Composition { maps } => {
                let mut guesses = Vec::with_capacity(maps.len());
                if let Some(g) = guess {
                    let mut p = g;
                    for m in maps {
                        guesses.push(Some(p));
                        p = m.eval(p);
                    }
                } else {
                    guesses = vec![None; maps.len()];
                }
                let mut v = w;
                for (m, g) in maps.iter().zip(guesses).rev() {
                    v = m.inverse_from(v, g)?;
                }
                v
            }
        };
        if !z.is_finite() {
            return Err(Error::Inversion(format!("{} at {w}", self.name)));
        }
        if !self.in_domain(z) {
            return Err(Error::Domain(format!("preimage of {w} under {} leaves the domain", self.name)));
        }
        Ok(z)
    }

    pub fn inverse(&self, w: C) -> Result<C> {
        self.inverse_from(w, None)
    }

    fn newton(&self, w: C, z0: C) -> Result<C> {
        let scale = 1.0 + w.norm();
        let mut z = z0;
        let (mut f, mut d, _) = self.eval3(z);
        let mut res = (f - w).norm();
        for _ in 0..80 {
            if res <= NEWTON_TOL * scale {
                return Ok(z);
            }
            if d.norm() == 0.0 {
                break;
            }
            let step = (f - w) / d;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let zn = z - step * t;
                let (fn_, dn, _) = self.eval3(zn);
                let rn = (fn_ - w).norm();
                if rn < res || rn <= NEWTON_TOL * scale {
                    z = zn;
                    f = fn_;
                    d = dn;
                    res = rn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if res <= 1e-11 * scale {
            return Ok(z);
        }
        Err(Error::Inversion(format!("Newton did not converge for w = {w} (residual {res:e})")))
    }

    /// Radius of a disk about `z` containing the component of
    /// `{w : |phi(w) - phi(z)| < r}` that contains `z`.
    pub fn preimage_radius(&self, z: C, r: f64) -> Result<f64> {
        if let Some((a, _)) = self.as_affine() {
            return Ok(r / a.norm() * (1.0 + 1e-12));
        }
        let fz = self.eval(z);
        let dz = self.deriv(z);
        let n = 256;
        let mut guess = z + r / dz;
        let mut best: f64 = 0.0;
        // Walk outwards along the ray first so Newton stays on the right branch.
        let steps = 8;
        for s in 1..=steps {
            let w = fz + r * s as f64 / steps as f64;
            guess = self.inverse_from(w, Some(guess))?;
        }
        for k in 0..=n {
            let w = fz + C::from_polar(r, 2.0 * PI * k as f64 / n as f64);
            guess = self.inverse_from(w, Some(guess))?;
            best = best.max((guess - z).norm());
        }
        Ok(best * 1.02)
    }

    /// Winding number of `phi'` around 0 along the circle `|z - center| = rho`,
    /// or `None` if `phi'` gets too close to 0 on it.
    pub fn derivative_winding(&self, center: C, rho: f64, n: usize) -> Option<i64> {
        let mut total = 0.0;
        let mut prev = self.deriv(center + rho);
        for k in 1..=n {
            let d = self.deriv(center + C::from_polar(rho, 2.0 * PI * k as f64 / n as f64));
            if d.norm() < 1e-12 {
                return None;
            }
            total += (d / prev).arg();
            prev = d;
        }
        Some((total / (2.0 * PI)).round() as i64)
    }

    /// Certify injectivity on a power-series disk: `phi'` has no zeros
    /// (winding 0) and the boundary image is a simple closed polygon.
    pub fn certify_injective(&self) -> Result<()> {
        let (center, radius) = match &self.kind {
            MapKind::PowerSeries { center, radius, .. } => (*center, *radius),
            _ => return Ok(()),
        };
        let rho = radius * (1.0 - 1e-9);
        match self.derivative_winding(center, rho, 2048) {
            Some(0) => {}
            other => {
                return precondition(format!("derivative winding {other:?} != 0: map is not locally univalent"));
            }
        }
        let n = 720;
        let pts: Vec<C> = (0..n).map(|k| self.eval(center + C::from_polar(rho, 2.0 * PI * k as f64 / n as f64))).collect();
        if polygon_self_intersects(&pts) {
            return precondition("boundary image self-intersects: map is not injective");
        }
        Ok(())
    }
}

fn segments_cross(p1: C, p2: C, q1: C, q2: C) -> bool {
    let cross = |a: C, b: C, c: C| (b - a).re * (c - a).im - (b - a).im * (c - a).re;
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

/// Whether the closed polygon through `pts` has two non-adjacent crossing edges.
pub fn polygon_self_intersects(pts: &[C]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, pts[j], pts[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Winding number of the closed polygon `pts` about `p`.
pub fn winding_number(pts: &[C], p: C) -> i64 {
    let n = pts.len();
    let mut total = 0.0;
    for k in 0..n {
        total += ((pts[(k + 1) % n] - p) / (pts[k] - p)).arg();
    }
    (total / (2.0 * PI)).round() as i64
}

/// Safety margin applied to the derivative bounds of Lambda_tau.
pub const LAMBDA_MARGIN: f64 = 1.01;

/// Membership of `map` in Lambda_tau(V, U): `tau^{-1} <= |phi'| <= tau` on a
/// probe grid of the closure of V, with the bounds tightened by 1%.
pub fn in_lambda_tau(map: &ConformalMap, v: &Region, u: &Region, tau: f64, pitch: f64) -> Result<bool> {
    if !v.compactly_inside(u, 0.5 * pitch, pitch) {
        return precondition(format!("{} is not compactly contained in {}", v.label(), u.label()));
    }
    let shrink = |p: C| -> C {
        // Pull boundary samples of U slightly inwards: U is open.
        match u {
            Region::Disk { center, .. } | Region::Annulus { center, .. } => center + (p - center) * (1.0 - 1e-9),
            _ => p,
        }
    };
    if u.closure_samples(pitch).iter().any(|p| !map.in_domain(shrink(*p))) {
        return precondition(format!("domain of {} does not contain {}", map.label(), u.label()));
    }
    let lo = LAMBDA_MARGIN / tau;
    let hi = tau / LAMBDA_MARGIN;
    Ok(v.closure_samples(pitch).iter().all(|p| {
        let d = map.deriv(*p).norm();
        lo <= d && d <= hi
    }))
}

/// Disk `B_{r |phi'(z)| / 4}(phi(z))`, guaranteed inside `phi(B_r(z))`.
pub fn koebe_containment(map: &ConformalMap, z: C, r: f64) -> Result<Region> {
    for k in 0..64 {
        let p = z + C::from_polar(r * (1.0 - 1e-12), 2.0 * PI * k as f64 / 64.0);
        if !map.in_domain(p) {
            return Err(Error::Domain(format!("B_{r}({z}) leaves the domain of {}", map.label())));
        }
    }
    Ok(Region::disk(map.eval(z), r * map.deriv(z).norm() / 4.0))
}

/// Check a certified disk against `n` samples of the boundary image: the
/// image curve winds once around the disk center and stays outside the disk.
pub fn koebe_check(map: &ConformalMap, z: C, r: f64, n: usize) -> Result<bool> {
    let disk = koebe_containment(map, z, r)?;
    let (center, radius) = match disk {
        Region::Disk { center, radius } => (center, radius),
        _ => unreachable!(),
    };
    let pts: Vec<C> = (0..n).map(|k| map.eval(z + C::from_polar(r, 2.0 * PI * k as f64 / n as f64))).collect();
    let clear = pts.iter().all(|p| (p - center).norm() >= radius);
    Ok(clear && winding_number(&pts, center) == 1)
}

#[derive(Clone, Debug, Serialize)]
pub struct DeBrangesReport {
    /// `a_0 .. a_{n_max}` of the normalized map; `a_0 = 0`, `a_1 = 1`.
    pub coeffs: Vec<C>,
    pub max_ratio: f64,
}

/// Taylor coefficients of `w -> (phi(z + r w) - phi(z)) / (r phi'(z))` from
/// an FFT of boundary samples, with `max_n |a_n| / n`.
pub fn debranges_check(map: &ConformalMap, z: C, r: f64, n_max: usize) -> Result<DeBrangesReport> {
    let n = (8 * n_max).next_power_of_two().max(256);
    let dz = map.deriv(z);
    let fz = map.eval(z);
    let mut data = Vec::with_capacity(n);
    for k in 0..n {
        let p = z + C::from_polar(r, 2.0 * PI * k as f64 / n as f64);
        if !map.in_domain(p) {
            return Err(Error::Domain(format!("B_{r}({z}) leaves the domain of {}", map.label())));
        }
        data.push((map.eval(p) - fz) / (r * dz));
    }
    // Coefficient a_m is the m-th DFT bin divided by n (forward transform).
    fft2(&mut data, n, 1, false);
    let coeffs: Vec<C> = (0..=n_max).map(|m| data[m] / n as f64).collect();
    // Aliasing check: the top half of the spectrum must be negligible.
    let tail = (n / 2..n).map(|m| data[m].norm() / n as f64).fold(0.0, f64::max);
    if tail > 1e-8 {
        return Err(Error::Precondition(format!(
            "series divergence detected: high-order coefficients {tail:e} not negligible"
        )));
    }
    let max_ratio = coeffs.iter().enumerate().skip(1).map(|(k, a)| a.norm() / k as f64).fold(0.0, f64::max);
    Ok(DeBrangesReport { coeffs, max_ratio })
}

/// `[(1 - s)/(1 + s)^3, (1 + s)/(1 - s)^3]`.
pub fn distortion_interval(s: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&s) {
        return precondition(format!("distortion parameter must lie in [0, 1), got {s}"));
    }
    Ok(((1.0 - s) / (1.0 + s).powi(3), (1.0 + s) / (1.0 - s).powi(3)))
}

/// `h^phi(w) = h(phi^{-1}(w)) - q log|phi'(phi^{-1}(w))|` on `target`.
///
/// Target nodes whose preimage leaves the map domain or the valid part of
/// `h` are flagged invalid; the call fails only if no node survives.
pub fn coordinate_change_field(h: &GridField, map: &ConformalMap, q: f64, target: &GridSpec) -> Result<GridField> {
    let kind = FieldKind::CoordinateChanged { map: map.label().to_string(), q };
    if map.is_identity() && *target == h.spec {
        return Ok(h.derived(h.spec, h.values.clone(), h.valid.clone(), kind));
    }
    let mut values = vec![0.0; target.len()];
    let mut valid = vec![false; target.len()];
    let mut guess: Option<C> = None;
    for k in 0..target.len() {
        let w = target.node_at(k);
        // Row-wise continuation keeps Newton on the branch of the previous node.
        if k % target.nx == 0 {
            guess = None;
        }
        let z = match map.inverse_from(w, guess) {
            Ok(z) => z,
            Err(Error::Inversion(_)) | Err(Error::Domain(_)) => {
                guess = None;
                continue;
            }
            Err(e) => return Err(e),
        };
        guess = Some(z);
        if let Some(v) = h.bilinear(z) {
            values[k] = v - q * map.deriv(z).norm().ln();
            valid[k] = true;
        }
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::Domain(format!("target window exits the image of {}", map.label())));
    }
    Ok(h.derived(*target, values, valid, kind))
}

// ---------------------------------------------------------------- families

/// Finite stand-in for Lambda_tau(V, U).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapFamily {
    pub name: String,
    pub tau: f64,
    pub v: Region,
    pub u: Region,
    pub maps: Vec<ConformalMap>,
}

impl MapFamily {
    /// Identity, a real dilation by 1.5, and `z^2 + 2` about 0.7, on
    /// `V = B_0.29(0.7)`, `U = B_0.6(0.7)`, `tau = 2`.
    pub fn default_family() -> Self {
        let center = c(0.7, 0.0);
        Self {
            name: "default".into(),
            tau: 2.0,
            v: Region::disk(center, 0.29),
            u: Region::disk(center, 0.6),
            maps: vec![
                ConformalMap::identity(),
                ConformalMap::affine(c(1.5, 0.0), c(0.0, 0.0)).expect("valid affine").with_name("dilation-1.5"),
                ConformalMap::square_plus_two(center, 0.6).expect("z^2+2 is injective on Re z > 0").with_name("z^2+2"),
            ],
        }
    }

    pub fn identity_only(v: Region, u: Region, tau: f64) -> Self {
        Self { name: "identity".into(), tau, v, u, maps: vec![ConformalMap::identity()] }
    }

    /// Every member must lie in Lambda_tau(V, U) and be certified injective.
    pub fn validate(&self, pitch: f64) -> Result<()> {
        for m in &self.maps {
            if !m.certified {
                return precondition(format!("family member {} is not certified injective", m.label()));
            }
            if !in_lambda_tau(m, &self.v, &self.u, self.tau, pitch)? {
                return precondition(format!("family member {} is not in Lambda_{}", m.label(), self.tau));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { msg, .. } => Error::Config { path: path.display().to_string(), msg },
            other => other,
        })
    }

    /// Parse a map family file:
    ///
    /// ```toml
    /// name = "demo"
    /// tau = 2.0
    /// v = { kind = "disk", center = [0.7, 0.0], radius = 0.29 }
    /// u = { kind = "disk", center = [0.7, 0.0], radius = 0.6 }
    /// [[map]]
    /// kind = "affine"
    /// a = [1.5, 0.0]
    /// b = [0.0, 0.0]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: FamilyFile = toml::from_str(text).map_err(|e| Error::Config { path: "<family>".into(), msg: e.to_string() })?;
        let maps = file.map.into_iter().map(MapRecord::build).collect::<Result<Vec<_>>>()?;
        let fam = Self { name: file.name, tau: file.tau, v: file.v.build()?, u: file.u.build()?, maps };
        Ok(fam)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    name: String,
    tau: f64,
    v: RegionRecord,
    u: RegionRecord,
    #[serde(default)]
    map: Vec<MapRecord>,
}

/// Region description used by config files.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegionRecord {
    Disk { center: [f64; 2], radius: f64 },
    Annulus { center: [f64; 2], r1: f64, r2: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl RegionRecord {
    pub fn build(self) -> Result<Region> {
        Ok(match self {
            RegionRecord::Disk { center, radius } => Region::disk(c(center[0], center[1]), radius),
            RegionRecord::Annulus { center, r1, r2 } => Region::annulus(c(center[0], center[1]), r1, r2)?,
            RegionRecord::Rect { x0, y0, x1, y1 } => Region::rect(x0, y0, x1, y1),
        })
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum MapRecord {
    Identity,
    Affine { a: [f64; 2], b: [f64; 2], name: Option<String> },
    Moebius { a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2], name: Option<String> },
    PowerSeries { center: [f64; 2], radius: f64, coeffs: Vec<[f64; 2]>, name: Option<String> },
}

impl MapRecord {
    fn build(self) -> Result<ConformalMap> {
        let z = |p: [f64; 2]| c(p[0], p[1]);
        let (m, name) = match self {
            MapRecord::Identity => (ConformalMap::identity(), None),
            MapRecord::Affine { a, b, name } => (ConformalMap::affine(z(a), z(b))?, name),
            MapRecord::Moebius { a, b, c: cc, d, name } => (ConformalMap::moebius(z(a), z(b), z(cc), z(d))?, name),
            MapRecord::PowerSeries { center, radius, coeffs, name } => {
                (ConformalMap::power_series(z(center), radius, coeffs.into_iter().map(z).collect())?, name)
            }
        };
        Ok(match name {
            Some(n) => m.with_name(n),
            None => m,
        })
    }
}
