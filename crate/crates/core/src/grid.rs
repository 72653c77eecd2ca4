//! Regular lattice windows and the field container shared by every module.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    pub origin: Complex64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, spacing: f64, origin: Complex64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("need nx, ny >= 2, got {nx}x{ny}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if !(origin.re.is_finite() && origin.im.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, spacing, origin })
    }

    /// Smallest grid with the given spacing whose nodes cover the square
    /// `[cx - half, cx + half] x [cy - half, cy + half]`, with nodes aligned to
    /// the lattice `spacing * Z^2`.
    pub fn covering(center: Complex64, half: f64, spacing: f64) -> Result<Self> {
        let i0 = ((center.re - half) / spacing).floor() as i64;
        let i1 = ((center.re + half) / spacing).ceil() as i64;
        let j0 = ((center.im - half) / spacing).floor() as i64;
        let j1 = ((center.im + half) / spacing).ceil() as i64;
        Self::new(
            (i1 - i0 + 1) as usize,
            (j1 - j0 + 1) as usize,
            spacing,
            Complex64::new(i0 as f64 * spacing, j0 as f64 * spacing),
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(
            self.origin.re + i as f64 * self.spacing,
            self.origin.im + j as f64 * self.spacing,
        )
    }

    #[inline]
    pub fn node_at(&self, idx: usize) -> Complex64 {
        let (i, j) = self.coords(idx);
        self.node(i, j)
    }

    /// Continuous lattice coordinates of `z`.
    #[inline]
    pub fn lattice_coords(&self, z: Complex64) -> (f64, f64) {
        (
            (z.re - self.origin.re) / self.spacing,
            (z.im - self.origin.im) / self.spacing,
        )
    }

    /// Nearest node to `z`, if `z` lies within half a spacing of the window.
    pub fn nearest(&self, z: Complex64) -> Option<(usize, usize)> {
        let (x, y) = self.lattice_coords(z);
        let i = x.round();
        let j = y.round();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn x_max(&self) -> f64 {
        self.origin.re + (self.nx - 1) as f64 * self.spacing
    }

    pub fn y_max(&self) -> f64 {
        self.origin.im + (self.ny - 1) as f64 * self.spacing
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(
            self.origin.re + 0.5 * (self.nx - 1) as f64 * self.spacing,
            self.origin.im + 0.5 * (self.ny - 1) as f64 * self.spacing,
        )
    }

    pub fn diameter(&self) -> f64 {
        self.spacing * (((self.nx - 1).pow(2) + (self.ny - 1).pow(2)) as f64).sqrt()
    }

    /// True if `z` lies in the closed window.
    pub fn contains(&self, z: Complex64) -> bool {
        let (x, y) = self.lattice_coords(z);
        let tol = 1e-9;
        x >= -tol && y >= -tol && x <= (self.nx - 1) as f64 + tol && y <= (self.ny - 1) as f64 + tol
    }

    /// Distance from `z` to the window border (negative outside).
    pub fn margin(&self, z: Complex64) -> f64 {
        let dx = (z.re - self.origin.re).min(self.x_max() - z.re);
        let dy = (z.im - self.origin.im).min(self.y_max() - z.im);
        dx.min(dy)
    }
}

/// Provenance of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldKind {
    RawGff,
    HeatMollified { eps: f64 },
    LocalizedMollified { eps: f64 },
    CoordinateChanged { map: String, q: f64 },
    Deterministic,
}

impl FieldKind {
    pub fn tag(&self) -> u8 {
        match self {
            FieldKind::RawGff => 0,
            FieldKind::HeatMollified { .. } => 1,
            FieldKind::LocalizedMollified { .. } => 2,
            FieldKind::CoordinateChanged { .. } => 3,
            FieldKind::Deterministic => 4,
        }
    }

    pub fn param(&self) -> f64 {
        match self {
            FieldKind::HeatMollified { eps } | FieldKind::LocalizedMollified { eps } => *eps,
            FieldKind::CoordinateChanged { q, .. } => *q,
            _ => 0.0,
        }
    }

    fn from_tag(tag: u8, param: f64) -> Result<Self> {
        Ok(match tag {
            0 => FieldKind::RawGff,
            1 => FieldKind::HeatMollified { eps: param },
            2 => FieldKind::LocalizedMollified { eps: param },
            3 => FieldKind::CoordinateChanged { map: "unknown".into(), q: param },
            4 => FieldKind::Deterministic,
            t => return Err(Error::Format(format!("unknown kind tag {t}"))),
        })
    }

    pub fn is_mollified(&self) -> bool {
        matches!(self, FieldKind::HeatMollified { .. } | FieldKind::LocalizedMollified { .. })
    }

    pub fn label(&self) -> String {
        match self {
            FieldKind::RawGff => "raw-gff".into(),
            FieldKind::HeatMollified { eps } => format!("heat-mollified({eps})"),
            FieldKind::LocalizedMollified { eps } => format!("localized-mollified({eps})"),
            FieldKind::CoordinateChanged { map, q } => format!("coordinate-changed({map},{q})"),
            FieldKind::Deterministic => "deterministic".into(),
        }
    }
}

/// Samples of a field on a lattice window.
///
/// Nodes flagged invalid (kernel support left the window, preimage outside a
/// map domain) hold the value 0 and must not be read as data.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub kind: FieldKind,
    /// Transforms applied so far, oldest first; the last entry equals `kind`.
    pub history: Vec<FieldKind>,
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("field values must be finite".into()));
        }
        Ok(Self {
            valid: vec![true; spec.len()],
            values,
            history: vec![kind.clone()],
            kind,
            spec,
        })
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self::from_fn(spec, |_| c)
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(Complex64) -> f64) -> Self {
        let values = (0..spec.len()).map(|k| f(spec.node_at(k))).collect();
        Self {
            spec,
            values,
            valid: vec![true; spec.len()],
            kind: FieldKind::Deterministic,
            history: vec![FieldKind::Deterministic],
        }
    }

    pub(crate) fn derived(&self, spec: GridSpec, values: Vec<f64>, valid: Vec<bool>, kind: FieldKind) -> Self {
        let mut history = self.history.clone();
        history.push(kind.clone());
        Self { spec, values, valid, kind, history }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.spec.index(i, j)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Bilinear interpolation; `None` outside the window or if any of the
    /// four surrounding nodes is invalid.
    pub fn bilinear(&self, z: Complex64) -> Option<f64> {
        let (x, y) = self.spec.lattice_coords(z);
        let nx = self.spec.nx;
        let ny = self.spec.ny;
        let tol = 1e-9;
        if !(x >= -tol && y >= -tol && x <= (nx - 1) as f64 + tol && y <= (ny - 1) as f64 + tol) {
            return None;
        }
        let i = (x.floor().max(0.0) as usize).min(nx - 2);
        let j = (y.floor().max(0.0) as usize).min(ny - 2);
        let tx = (x - i as f64).clamp(0.0, 1.0);
        let ty = (y - j as f64).clamp(0.0, 1.0);
        let k = self.spec.index(i, j);
        if !(self.valid[k] && self.valid[k + 1] && self.valid[k + nx] && self.valid[k + nx + 1]) {
            // Exactly on a valid node the neighbours do not matter.
            if tx == 0.0 && ty == 0.0 && self.valid[k] {
                return Some(self.values[k]);
            }
            return None;
        }
        let v00 = self.values[k];
        let v10 = self.values[k + 1];
        let v01 = self.values[k + nx];
        let v11 = self.values[k + nx + 1];
        Some((1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11))
    }

    /// Values on `spec`, whose nodes must be nodes of this window.
    pub fn restrict(&self, spec: &GridSpec) -> Result<GridField> {
        let s = self.spec.spacing;
        let step = spec.spacing / s;
        let stride = step.round() as usize;
        let (x0, y0) = self.spec.lattice_coords(spec.origin);
        let (i0, j0) = (x0.round(), y0.round());
        if stride == 0 || (step - stride as f64).abs() > 1e-9 || (x0 - i0).abs() > 1e-6 || (y0 - j0).abs() > 1e-6 {
            return Err(Error::InvalidGrid("target nodes are not nodes of the source window".into()));
        }
        let (i0, j0) = (i0 as i64, j0 as i64);
        let last_i = i0 + ((spec.nx - 1) * stride) as i64;
        let last_j = j0 + ((spec.ny - 1) * stride) as i64;
        if i0 < 0 || j0 < 0 || last_i >= self.spec.nx as i64 || last_j >= self.spec.ny as i64 {
            return Err(Error::InvalidGrid("target window exceeds the source window".into()));
        }
        let mut values = Vec::with_capacity(spec.len());
        let mut valid = Vec::with_capacity(spec.len());
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let k = self.spec.index(i0 as usize + i * stride, j0 as usize + j * stride);
                values.push(self.values[k]);
                valid.push(self.valid[k]);
            }
        }
        Ok(GridField { spec: *spec, values, valid, kind: self.kind.clone(), history: self.history.clone() })
    }

    /// Every `stride`-th node in each direction, starting from the origin.
    pub fn subsample(&self, stride: usize) -> Result<GridField> {
        if stride == 0 {
            return Err(Error::InvalidGrid("stride must be positive".into()));
        }
        let spec = GridSpec::new(
            (self.spec.nx - 1) / stride + 1,
            (self.spec.ny - 1) / stride + 1,
            self.spec.spacing * stride as f64,
            self.spec.origin,
        )?;
        self.restrict(&spec)
    }

    /// Summary over valid nodes: (min, max, mean).
    pub fn summary(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, ok) in self.values.iter().zip(&self.valid) {
            if *ok {
                lo = lo.min(*v);
                hi = hi.max(*v);
                sum += v;
                n += 1;
            }
        }
        (lo, hi, if n > 0 { sum / n as f64 } else { f64::NAN })
    }

    /// Write the `LFP1` snapshot. Invalid nodes are stored as NaN.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"LFP1")?;
        w.write_all(&(self.spec.nx as u32).to_le_bytes())?;
        w.write_all(&(self.spec.ny as u32).to_le_bytes())?;
        w.write_all(&self.spec.spacing.to_le_bytes())?;
        w.write_all(&self.spec.origin.re.to_le_bytes())?;
        w.write_all(&self.spec.origin.im.to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        w.write_all(&self.kind.param().to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for (v, ok) in self.values.iter().zip(&self.valid) {
            let x = if *ok { *v } else { f64::NAN };
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LFP1" {
            return Err(Error::Format("bad magic, expected LFP1".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let nx = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let ny = u32::from_le_bytes(b4) as usize;
        let mut f = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let spacing = f(&mut r)?;
        let ox = f(&mut r)?;
        let oy = f(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let param = f(&mut r)?;
        let spec = GridSpec::new(nx, ny, spacing, Complex64::new(ox, oy))?;
        let kind = FieldKind::from_tag(tag[0], param)?;
        let mut raw = vec![0u8; 8 * spec.len()];
        r.read_exact(&mut raw)?;
        let mut values = Vec::with_capacity(spec.len());
        let mut valid = Vec::with_capacity(spec.len());
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            if v.is_nan() {
                values.push(0.0);
                valid.push(false);
            } else if v.is_finite() {
                values.push(v);
                valid.push(true);
            } else {
                return Err(Error::Format("infinite value in snapshot".into()));
            }
        }
        Ok(Self { spec, values, valid, history: vec![kind.clone()], kind })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_snapshot(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(file))
    }
}
