use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conformal::{MapFamily, Region, RegionRecord};
use crate::error::{precondition, Error, Result};
use crate::scaling::ScalingTable;

fn c(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// Experiment configuration, read from a sectioned TOML file. Every section
/// and key is optional except where an experiment needs it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub regions: Option<RegionsSection>,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub affine: AffineSection,
    #[serde(default)]
    pub events: EventSection,
    /// Directory used to resolve relative paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: Option<String>,
    pub seed: u64,
    pub replicas: usize,
    /// Replace the sampled field by this constant.
    pub constant_field: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { name: None, seed: 1, replicas: 20, constant_field: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub xi: f64,
    /// Overrides the exponent taken from the scaling table.
    pub q: Option<f64>,
    pub torus_factor: f64,
    /// Probe point for the small-scale experiments.
    pub z0: [f64; 2],
    /// Tensor quadrature points per effective mollification scale.
    pub pts_per_eps: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self { xi: 0.2, q: None, torus_factor: 2.0, z0: [0.7, 0.0], pts_per_eps: 4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Fixed lattice spacing; when absent the spacing is `eps / spacing_per_eps`.
    pub spacing: Option<f64>,
    pub spacing_per_eps: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { spacing: None, spacing_per_eps: 4.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    pub w: RegionRecord,
    pub w_tilde: RegionRecord,
    pub v: RegionRecord,
    pub u: RegionRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    /// `default` or `identity`, ignored when `path` is set.
    pub name: String,
    pub path: Option<PathBuf>,
}

impl Default for FamilySection {
    fn default() -> Self {
        Self { name: "default".into(), path: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub eps: Vec<f64>,
    pub eps_ref: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { eps: vec![0.1, 0.05, 0.025], eps_ref: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub zeta: f64,
    pub zeta_minus: f64,
    pub delta: f64,
    pub alpha: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub rho: f64,
    /// Pass level for trend fractions.
    pub fraction: f64,
    /// Pass level for the sandwich success fraction at the finest scale.
    pub success: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { zeta: 0.1, zeta_minus: 0.05, delta: 0.25, alpha: 0.9, big_a: 4.0, big_c: 4.0, rho: 0.3, fraction: 0.7, success: 0.8 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    /// Scaling table CSV.
    pub table: Option<PathBuf>,
    /// Use the exact power law `a_eps = eps^{1 - xi q}` instead of a table.
    pub power_law_q: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineSection {
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Centre and radius of the query disk in source coordinates.
    pub center: [f64; 2],
    pub radius: f64,
    pub pairs: usize,
    /// Permit bilinear resampling when the maps do not nest the lattice.
    pub allow_interpolation: bool,
    /// Also run at twice the resolution from one parent field.
    pub refine: bool,
}

impl Default for AffineSection {
    fn default() -> Self {
        Self {
            a: [2.0, 0.0],
            b: [0.0, 0.0],
            center: [0.0, 0.0],
            radius: 0.2,
            pairs: 10,
            allow_interpolation: false,
            refine: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSection {
    pub x: [f64; 2],
    pub r: f64,
    pub eps: f64,
    /// Angular samples on each boundary circle.
    pub boundary_points: usize,
    /// Values of C for the monotonicity sweep.
    pub c_grid: Vec<f64>,
    /// Splice a fresh field outside the annulus (locality test) or only in
    /// the far corner of the window.
    pub far_corner_only: bool,
}

impl Default for EventSection {
    fn default() -> Self {
        Self {
            x: [0.7, 0.0],
            r: 0.16,
            eps: 0.004,
            boundary_points: 8,
            c_grid: vec![1.5, 3.0, 6.0],
            far_corner_only: false,
        }
    }
}

/// The four nested regions of an experiment.
#[derive(Clone, Debug)]
pub struct RegionChain {
    pub w: Region,
    pub w_tilde: Region,
    pub v: Region,
    pub u: Region,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config { path: "<inline>".into(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config { path: path.display().to_string(), msg: e.to_string() })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn family(&self) -> Result<MapFamily> {
        if let Some(p) = &self.family.path {
            return MapFamily::load(&self.resolve(p));
        }
        match self.family.name.as_str() {
            "default" => Ok(MapFamily::default_family()),
            "identity" => {
                let f = MapFamily::default_family();
                Ok(MapFamily::identity_only(f.v, f.u, f.tau))
            }
            other => Err(Error::Config { path: "family.name".into(), msg: format!("unknown family `{other}`") }),
        }
    }

    /// Regions from the config, or `W`, `W~` as disks about the centre of
    /// the family's `V`.
    pub fn regions(&self, family: &MapFamily) -> Result<RegionChain> {
        if let Some(r) = &self.regions {
            return Ok(RegionChain {
                w: r.w.clone().build()?,
                w_tilde: r.w_tilde.clone().build()?,
                v: r.v.clone().build()?,
                u: r.u.clone().build()?,
            });
        }
        let (center, radius) = match &family.v {
            Region::Disk { center, radius } => (*center, *radius),
            _ => return Err(Error::MissingKey("regions".into())),
        };
        Ok(RegionChain {
            w: Region::disk(center, 0.9 * radius),
            w_tilde: Region::disk(center, 0.95 * radius),
            v: family.v.clone(),
            u: family.u.clone(),
        })
    }

    pub fn z0(&self) -> Complex64 {
        c(self.params.z0)
    }

    pub fn spacing_for(&self, eps: f64) -> f64 {
        self.grid.spacing.unwrap_or(eps / self.grid.spacing_per_eps)
    }

    pub fn eps_ref(&self) -> f64 {
        self.schedule.eps_ref.unwrap_or_else(|| self.schedule.eps.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Scaling table from `scaling.table` or `scaling.power_law_q`, with
    /// `q_hat` fitted unless `params.q` overrides it.
    pub fn scaling_table(&self) -> Result<ScalingTable> {
        if let Some(q) = self.scaling.power_law_q {
            let eps: Vec<f64> = (0..=24).map(|k| 2f64.powi(-k)).collect();
            let mut t = ScalingTable::power_law(self.params.xi, q, 1.0, &eps)?;
            if let Some(q) = self.params.q {
                t.q_hat = Some(q);
            }
            return Ok(t);
        }
        let Some(p) = &self.scaling.table else {
            return Err(Error::MissingKey("scaling.table".into()));
        };
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Error::Config {
                path: "scaling.table".into(),
                msg: format!("scaling table {} does not exist", path.display()),
            });
        }
        let mut t = ScalingTable::read_csv(&path)?;
        if (t.xi - self.params.xi).abs() > 1e-12 {
            return precondition(format!("scaling table has xi = {}, config has {}", t.xi, self.params.xi));
        }
        t.q_hat = match self.params.q {
            Some(q) => Some(q),
            None => Some(t.fit_exponent(self.experiment.seed)?.q_hat),
        };
        Ok(t)
    }

    /// Structural checks shared by every experiment.
    pub fn validate(&self) -> Result<()> {
        let eps = &self.schedule.eps;
        if eps.is_empty() {
            return Err(Error::MissingKey("schedule.eps".into()));
        }
        if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return precondition("schedule.eps values must lie in (0, 1)");
        }
        if eps.windows(2).any(|w| !(w[1] < w[0])) {
            return precondition("schedule.eps must be strictly decreasing");
        }
        let min = eps.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(r) = self.schedule.eps_ref {
            if !(r > 0.0 && r <= min) {
                return precondition(format!("eps_ref = {r} must be positive and at most min(schedule) = {min}"));
            }
        }
        if !(self.params.xi > 0.0) {
            return precondition("params.xi must be positive");
        }
        if self.experiment.replicas == 0 {
            return precondition("experiment.replicas must be at least 1");
        }
        let family = self.family()?;
        let r = self.regions(&family)?;
        let pitch = 1.0 / 128.0;
        for (inner, outer, names) in
            [(&r.w, &r.w_tilde, "W in W~"), (&r.w_tilde, &r.v, "W~ in V"), (&r.v, &r.u, "V in U")]
        {
            if !inner.compactly_inside(outer, 1e-6, pitch) {
                return precondition(format!("regions are not compactly nested: {names}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.eps_ref(), 0.025);
    }

    #[test]
    fn missing_table_names_the_key() {
        let cfg = ExperimentConfig::default();
        let err = cfg.scaling_table().unwrap_err();
        assert!(err.to_string().contains("scaling.table"), "{err}");
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml("[params]\nxi = 0.2\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains('3'), "{msg}");
    }

    #[test]
    fn schedule_and_nesting_are_checked() {
        let mut cfg = ExperimentConfig::default();
        cfg.schedule.eps = vec![0.05, 0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.schedule.eps_ref = Some(0.05);
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml(
            r#"
[regions]
w = { kind = "disk", center = [0.7, 0.0], radius = 0.3 }
w_tilde = { kind = "disk", center = [0.7, 0.0], radius = 0.2 }
v = { kind = "disk", center = [0.7, 0.0], radius = 0.29 }
u = { kind = "disk", center = [0.7, 0.0], radius = 0.6 }
"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_law_source() {
        let cfg = ExperimentConfig::from_toml("[scaling]\npower_law_q = 4.0\n").unwrap();
        let t = cfg.scaling_table().unwrap();
        assert_eq!(t.q_hat, Some(4.0));
        assert!((t.a(0.01).unwrap() - 0.01f64.powf(0.2)).abs() < 1e-12);
    }
}
