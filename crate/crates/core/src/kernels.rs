//! Analytic kernels: heat kernel, the bump profile, its normalizing constant
//! and the distorted kernels pulled back through a conformal map.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::conformal::ConformalMap;
use crate::error::{precondition, Error, Result};
use crate::grid::GridField;
use crate::quad;

/// Identifier of the bump profile, recorded in report metadata.
pub const PROFILE_ID: &str = "smoothstep-exp-v1";

/// `p_t(z) = exp(-|z|^2 / 2t) / (2 pi t)`.
pub fn heat_kernel(z: Complex64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return precondition(format!("heat kernel time must be positive, got {t}"));
    }
    Ok((-z.norm_sqr() / (2.0 * t)).exp() / (2.0 * PI * t))
}

#[inline]
fn bump_f(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

/// Radial profile: 1 on `[0, 1/2]`, 0 on `[1, inf)`, smooth and decreasing
/// in between.
#[inline]
pub fn psi(t: f64) -> f64 {
    if t <= 0.5 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let u = 2.0 - 2.0 * t;
        let a = bump_f(u);
        let b = bump_f(1.0 - u);
        a / (a + b)
    }
}

/// Derivative of [`psi`].
#[inline]
pub fn psi_prime(t: f64) -> f64 {
    if t <= 0.5 || t >= 1.0 {
        return 0.0;
    }
    let u = 2.0 - 2.0 * t;
    let a = bump_f(u);
    let b = bump_f(1.0 - u);
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let da = a / (u * u);
    let db = b / ((1.0 - u) * (1.0 - u));
    let s = a + b;
    // dS/du = (a' b + a b') / (a + b)^2 and du/dt = -2.
    -2.0 * (da * b + a * db) / (s * s)
}

/// Support radius `eps * log(1/eps)` of the localized mollifier.
pub fn support_radius(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < (-1.0f64).exp()) {
        return precondition(format!("eps must lie in (0, 1/e), got {eps}"));
    }
    Ok(eps * (1.0 / eps).ln())
}

/// `psi(|z| / (eps log(1/eps)))`.
pub fn psi_eps(z: Complex64, eps: f64) -> Result<f64> {
    Ok(psi(z.norm() / support_radius(eps)?))
}

/// Normalizing constant of the localized mollifier.
#[derive(Clone, Copy, Debug)]
pub struct ZEps {
    pub z: f64,
    /// `1 - Z_eps`, computed directly so it keeps full relative precision.
    pub deficit: f64,
    pub quad_error: f64,
}

/// `Z_eps = int psi_eps p_{eps^2/2} dA`, by adaptive radial quadrature.
pub fn z_eps(eps: f64) -> Result<ZEps> {
    let r_big = support_radius(eps)?;
    let e2 = eps * eps;
    // 1 - Z = (2/eps^2) int_{R/2}^{R} r (1 - psi(r/R)) e^{-r^2/eps^2} dr + e^{-R^2/eps^2}
    let q = quad::integrate(
        |r| r * (1.0 - psi(r / r_big)) * (-r * r / e2).exp(),
        0.5 * r_big,
        r_big,
        0.0,
        1e-13,
        2000,
    );
    let tail = (-r_big * r_big / e2).exp();
    let deficit = 2.0 / e2 * q.value + tail;
    Ok(ZEps { z: 1.0 - deficit, deficit, quad_error: 2.0 / e2 * q.error })
}

/// Localized mollifier `Z^{-1} psi_eps p_{eps^2/2}` as a function of the
/// offset, given precomputed `R` and `Z`.
#[inline]
pub(crate) fn localized_profile(rho2: f64, r_big: f64, eps: f64, zinv: f64) -> f64 {
    let rho = rho2.sqrt();
    if rho >= r_big {
        return 0.0;
    }
    zinv * psi(rho / r_big) * (-rho2 / (eps * eps)).exp() / (PI * eps * eps)
}

/// `Z^{-1} psi_eps(w) p_{eps^2/2}(w)`.
pub fn localized_kernel(w: Complex64, eps: f64) -> Result<f64> {
    let r_big = support_radius(eps)?;
    let z = z_eps(eps)?;
    Ok(localized_profile(w.norm_sqr(), r_big, eps, 1.0 / z.z))
}

/// The kernel `w -> |phi'(w)|^2 Z^{-1} psi_eps(phi(w) - phi(z)) p_{eps^2/2}(phi(w) - phi(z))`.
#[derive(Clone, Debug)]
pub struct DistortedKernel {
    pub map: ConformalMap,
    pub z: Complex64,
    pub eps: f64,
    pub r_big: f64,
    pub zinv: f64,
    pub phi_z: Complex64,
    pub dphi_z: Complex64,
    /// Radius of a disk about `z` outside which the kernel vanishes.
    pub support: f64,
}

impl DistortedKernel {
    pub fn new(map: &ConformalMap, z: Complex64, eps: f64) -> Result<Self> {
        let r_big = support_radius(eps)?;
        let zc = z_eps(eps)?;
        if !map.in_domain(z) {
            return Err(Error::Domain(format!("kernel center {z} outside {}", map.label())));
        }
        let phi_z = map.eval(z);
        let dphi_z = map.deriv(z);
        let support = map.preimage_radius(z, r_big)?;
        Ok(Self { map: map.clone(), z, eps, r_big, zinv: 1.0 / zc.z, phi_z, dphi_z, support })
    }

    /// Effective mollification scale in the source coordinates.
    pub fn effective_eps(&self) -> f64 {
        self.eps / self.dphi_z.norm()
    }

    /// Kernel value from the defining formula, without the support shortcut.
    pub fn eval_formula(&self, w: Complex64) -> f64 {
        let u = self.map.eval(w) - self.phi_z;
        let g = self.map.deriv(w);
        g.norm_sqr() * localized_profile(u.norm_sqr(), self.r_big, self.eps, self.zinv)
    }

    #[inline]
    pub fn eval(&self, w: Complex64) -> f64 {
        if (w - self.z).norm() >= self.support {
            return 0.0;
        }
        self.eval_formula(w)
    }

    /// Analytic gradient `(d/dx, d/dy)` of the kernel at `w`.
    pub fn gradient(&self, w: Complex64) -> (f64, f64) {
        if (w - self.z).norm() >= self.support {
            return (0.0, 0.0);
        }
        let u = self.map.eval(w) - self.phi_z;
        let rho = u.norm();
        if rho >= self.r_big {
            return (0.0, 0.0);
        }
        let g = self.map.deriv(w);
        let g2 = self.map.deriv2(w);
        let e2 = self.eps * self.eps;
        let gauss = (-rho * rho / e2).exp() / (PI * e2);
        let t = rho / self.r_big;
        let big_g = self.zinv * psi(t) * gauss;
        // Radial part of grad_u G, expressed as a complex number.
        let radial = if rho > 0.0 {
            self.zinv * (psi_prime(t) / (self.r_big * rho) - 2.0 * psi(t) / e2) * gauss
        } else {
            0.0
        };
        let grad_u = u * radial;
        // Chain rule through phi: d/dx u = g, d/dy u = i g.
        let gx = (grad_u.conj() * g).re;
        let gy = (grad_u.conj() * (Complex64::i() * g)).re;
        // |g|^2 derivatives: d/dx = 2 Re(conj(g) g'), d/dy = -2 Im(conj(g) g').
        let cg = g.conj() * g2;
        let dx_mod = 2.0 * cg.re;
        let dy_mod = -2.0 * cg.im;
        let m = g.norm_sqr();
        (dx_mod * big_g + m * gx, dy_mod * big_g + m * gy)
    }

    /// Tensor quadrature nodes `(w, weight)` covering the support with at
    /// least `pts_per_eps` points per effective mollification scale.
    pub fn quadrature_nodes(&self, pts_per_eps: usize) -> Vec<(Complex64, f64)> {
        let h = self.effective_eps().min(self.eps) / pts_per_eps.max(1) as f64;
        let n = (self.support / h).ceil() as i64;
        let mut out = Vec::new();
        for j in -n..=n {
            for i in -n..=n {
                let w = self.z + Complex64::new(i as f64 * h, j as f64 * h);
                let k = self.eval(w);
                if k > 0.0 {
                    out.push((w, k * h * h));
                }
            }
        }
        out
    }

    /// `sum f(w) Psi(w) dA` over the quadrature nodes.
    pub fn pair_fn(&self, f: impl Fn(Complex64) -> f64, pts_per_eps: usize) -> f64 {
        self.quadrature_nodes(pts_per_eps).iter().map(|(w, k)| f(*w) * k).sum()
    }

    /// Pairing with a lattice field through bilinear interpolation.
    pub fn pair(&self, field: &GridField, pts_per_eps: usize) -> Result<f64> {
        let mut acc = 0.0;
        for (w, k) in self.quadrature_nodes(pts_per_eps) {
            let v = field.bilinear(w).ok_or_else(|| {
                Error::Precondition(format!("kernel support at {w} exits the valid field window"))
            })?;
            acc += v * k;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_kernel_values() {
        let v = heat_kernel(Complex64::new(0.0, 0.0), 0.5).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-15);
        assert!(heat_kernel(Complex64::new(0.0, 0.0), 0.0).is_err());
        let t = 0.3;
        let r = 0.4;
        let base = heat_kernel(Complex64::new(r, 0.0), t).unwrap();
        for k in 0..16 {
            let th = 2.0 * PI * k as f64 / 16.0;
            let v = heat_kernel(Complex64::from_polar(r, th), t).unwrap();
            assert!((v - base).abs() <= 1e-15 * base);
        }
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        let t: f64 = 0.02;
        let rmax = 8.0 * t.sqrt();
        let q = quad::integrate(
            |r| 2.0 * PI * r * heat_kernel(Complex64::new(r, 0.0), t).unwrap(),
            0.0,
            rmax,
            1e-15,
            1e-14,
            100,
        );
        // Mass beyond 8 sqrt(t) is e^{-32}.
        assert!((q.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn psi_profile_contract() {
        assert_eq!(psi(0.3), 1.0);
        assert_eq!(psi(1.2), 0.0);
        let m = psi(0.75);
        assert!(m > 0.0 && m < 1.0);
        let mut prev = 1.0;
        for k in 0..100 {
            let t = 0.5 + 0.5 * (k as f64 + 0.5) / 100.0;
            let v = psi(t);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        assert!(psi_eps(Complex64::new(0.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        for k in 1..40 {
            let t = 0.5 + k as f64 / 80.0;
            let h = 1e-6;
            let fd = (psi(t + h) - psi(t - h)) / (2.0 * h);
            assert!((psi_prime(t) - fd).abs() < 1e-6 * (1.0 + fd.abs()), "t={t}");
        }
    }

    #[test]
    fn z_eps_obeys_bound() {
        for eps in [0.3, 0.1, 0.03] {
            let z = z_eps(eps).unwrap();
            let l = (1.0 / eps).ln();
            assert!(z.deficit >= 0.0);
            assert!(z.deficit <= (-l * l / 4.0).exp());
            assert!(z.z <= 1.0);
            assert!(z.quad_error <= 1e-10 * z.z);
        }
    }

    #[test]
    fn z_eps_matches_cartesian_quadrature() {
        // Independent 2-D midpoint rule on a fine Cartesian grid.
        let eps = 0.1;
        let r_big = support_radius(eps).unwrap();
        let n = 1600;
        let h = 2.0 * r_big / n as f64;
        let mut acc = 0.0;
        for j in 0..n {
            let y = -r_big + (j as f64 + 0.5) * h;
            for i in 0..n {
                let x = -r_big + (i as f64 + 0.5) * h;
                let w = Complex64::new(x, y);
                acc += psi_eps(w, eps).unwrap() * heat_kernel(w, eps * eps / 2.0).unwrap();
            }
        }
        acc *= h * h;
        let z = z_eps(eps).unwrap();
        assert!((acc - z.z).abs() < 1e-8, "{acc} vs {}", z.z);
    }

    #[test]
    fn identity_kernel_reduces_to_localized_mollifier() {
        let id = ConformalMap::identity();
        let z = Complex64::new(0.2, -0.1);
        let eps = 0.05;
        let k = DistortedKernel::new(&id, z, eps).unwrap();
        for s in 0..20 {
            let w = z + Complex64::from_polar(0.01 * s as f64, 0.7 * s as f64);
            let a = k.eval(w);
            let b = localized_kernel(w - z, eps).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} {b}");
        }
    }
}
