use num_complex::Complex64;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pullback::{pulled_back_graph, replica_field};
use super::report::{Estimator, ExperimentReport};
use crate::conformal::{ConformalMap, MapFamily, Region};
use crate::error::{precondition, Error, Result};
use crate::gff::{add_scalar, circle_average};
use crate::grid::{GridField, GridSpec};
use crate::kernels::support_radius;
use crate::lfpp::MetricGraph;
use crate::rng::derive_seed;
use crate::scaling::ScalingTable;
use crate::stats::wilson_interval;

const WILSON_Z: f64 = 1.959_963_984_540_054;
const T_GRID: usize = 9;

/// Everything an event evaluation needs besides the field.
#[derive(Clone, Debug)]
pub struct EventContext {
    pub family: MapFamily,
    pub table: ScalingTable,
    pub xi: f64,
    pub x: Complex64,
    pub r: f64,
    pub eps: f64,
    /// Scale of the localized-LFPP stand-in for the limiting metric.
    pub eps_ref: f64,
}

impl EventContext {
    pub fn from_config(cfg: &ExperimentConfig, x: Complex64, r: f64, eps: f64) -> Result<Self> {
        let eps_ref = cfg.schedule.eps_ref.unwrap_or(eps);
        if !(eps_ref > 0.0 && eps_ref <= eps) {
            return precondition(format!("reference scale {eps_ref} must lie in (0, eps = {eps}]"));
        }
        Ok(Self { family: cfg.family()?, table: cfg.scaling_table()?, xi: cfg.params.xi, x, r, eps, eps_ref })
    }

    fn q(&self) -> Result<f64> {
        self.table.q()
    }

    /// `sup_t ratios[eps t]` and `sup_t 1 / ratios[eps t]` over a geometric
    /// grid of `t` in `[1/tau, tau]`.
    pub fn ratio_bounds(&self) -> Result<(f64, f64)> {
        let tau = self.family.tau;
        let (mut sup, mut inv) = (0.0f64, 0.0f64);
        for i in 0..T_GRID {
            let t = tau.powf(-1.0 + 2.0 * i as f64 / (T_GRID - 1) as f64);
            let v = self.table.scaling_ratio(self.r, self.eps, t)?;
            sup = sup.max(v);
            inv = inv.max(1.0 / v);
        }
        Ok((sup, inv))
    }

    /// Largest kernel reach in source coordinates.
    pub fn reach(&self) -> Result<f64> {
        Ok(self.family.tau * support_radius(self.eps)?.max(support_radius(self.eps_ref)?))
    }

    /// Normalized family graphs and the normalized reference graph on `region`.
    pub fn graphs(&self, h: &GridField, region: &Region) -> Result<(Vec<MetricGraph>, MetricGraph)> {
        let q = self.q()?;
        let a = self.table.a(self.eps)?;
        let fam = self
            .family
            .maps
            .iter()
            .map(|m| Ok(pulled_back_graph(h, m, q, self.xi, self.eps, region)?.with_normalization(a)))
            .collect::<Result<Vec<_>>>()?;
        let proxy = match self.family.maps.iter().position(ConformalMap::is_identity) {
            Some(i) if self.eps_ref == self.eps => fam[i].clone(),
            _ => pulled_back_graph(h, &ConformalMap::identity(), q, self.xi, self.eps_ref, region)?
                .with_normalization(self.table.a(self.eps_ref)?),
        };
        Ok((fam, proxy))
    }
}

fn normalized(g: &MetricGraph, raw: crate::lfpp::Distance, what: &str) -> Result<f64> {
    match raw.value() {
        Some(v) => Ok(v / g.normalization.unwrap_or(1.0)),
        None => Err(Error::InvalidNodes(format!("{what} is disconnected in the {} metric", g.kernel))),
    }
}

/// Normalized distance between `partial B_{r_in}(x)` and `partial B_{r_out}(x)`:
/// sources `|z - x| <= r_in`, sinks `|z - x| >= r_out`, paths in the band
/// `[r_in - 1.5 s, r_out + 1.5 s]`.
pub fn across(g: &MetricGraph, x: Complex64, r_in: f64, r_out: f64) -> Result<f64> {
    let s = g.spec.spacing;
    let n = g.spec.len();
    let d: Vec<f64> = (0..n).map(|k| (g.spec.node_at(k) - x).norm()).collect();
    let mask: Vec<bool> = (0..n).map(|k| g.active[k] && d[k] >= r_in - 1.5 * s && d[k] <= r_out + 1.5 * s).collect();
    let a: Vec<bool> = d.iter().map(|v| *v <= r_in).collect();
    let b: Vec<bool> = d.iter().map(|v| *v >= r_out).collect();
    let res = g.set_distance_masked(&a, &b, &mask)?;
    normalized(g, res.raw, "distance across the annulus")
}

/// Normalized distance around the closed annulus `A_{r1,r2}(x)`.
pub fn around(g: &MetricGraph, x: Complex64, r1: f64, r2: f64) -> Result<f64> {
    let res = g.distance_around_annulus(x, r1, r2)?;
    normalized(g, res.raw, "loop around the annulus")
}

/// Evaluated inequalities of the initial Lipschitz event.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialEvent {
    pub around_family: Vec<f64>,
    pub across_family: Vec<f64>,
    pub around_ref: f64,
    pub across_ref: f64,
    pub ratio_sup: f64,
    pub invratio_sup: f64,
    /// Smallest `C` for which the event holds.
    pub c_min: f64,
}

impl InitialEvent {
    pub fn holds(&self, c: f64) -> bool {
        self.c_min <= c
    }

    /// Signed margins `C * rhs - lhs` of the two inequalities.
    pub fn slacks(&self, c: f64) -> (f64, f64) {
        let sup_around = self.around_family.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inf_across = self.across_family.iter().copied().fold(f64::INFINITY, f64::min);
        (c * self.ratio_sup * self.across_ref - sup_around, c * self.invratio_sup * inf_across - self.around_ref)
    }
}

/// Graph region for the initial event: the closed annulus `A_{3r/4, 7r/4}(x)`
/// padded by two lattice spacings.
fn initial_region(ctx: &EventContext, s: f64) -> Result<Region> {
    Region::closed_annulus(ctx.x, 0.75 * ctx.r - 2.0 * s, 1.75 * ctx.r + 2.0 * s)
}

/// Evaluate the initial event on a field whose window covers the kernels of
/// the padded annulus.
pub fn evaluate_initial(h: &GridField, ctx: &EventContext) -> Result<InitialEvent> {
    let (x, r) = (ctx.x, ctx.r);
    let region = initial_region(ctx, h.spec.spacing)?;
    let (fam, proxy) = ctx.graphs(h, &region)?;
    let mut around_family = Vec::with_capacity(fam.len());
    let mut across_family = Vec::with_capacity(fam.len());
    for g in &fam {
        around_family.push(around(g, x, 0.75 * r, 1.75 * r)?);
        across_family.push(across(g, x, 0.75 * r, r)?);
    }
    let around_ref = around(&proxy, x, 0.75 * r, 1.75 * r)?;
    let across_ref = across(&proxy, x, 0.75 * r, r)?;
    let (ratio_sup, invratio_sup) = ctx.ratio_bounds()?;
    let sup_around = around_family.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf_across = across_family.iter().copied().fold(f64::INFINITY, f64::min);
    let c_min = (sup_around / (ratio_sup * across_ref)).max(around_ref / (invratio_sup * inf_across));
    Ok(InitialEvent { around_family, across_family, around_ref, across_ref, ratio_sup, invratio_sup, c_min })
}

/// `eps log(1/eps) < r / 4`: localized kernels about the event annulus stay
/// inside `A_{r/2, 2r}(x)`.
pub fn kernel_support_admissible(eps: f64, r: f64) -> bool {
    support_radius(eps).map(|v| v < 0.25 * r).unwrap_or(false)
}

fn check_initial_geometry(ctx: &EventContext, v: &Region, u: &Region) -> Result<()> {
    let (x, r) = (ctx.x, ctx.r);
    let ann = Region::annulus(x, 0.75 * r, 1.75 * r)?;
    if !ann.compactly_inside(v, 0.0, r / 64.0) {
        return precondition(format!("A_(3r/4, 7r/4)({x}) with r = {r} is not inside V"));
    }
    if !Region::disk(x, 2.0 * r).compactly_inside(u, 0.0, r / 64.0) {
        return precondition(format!("B_2r({x}) with r = {r} is not inside U"));
    }
    Ok(())
}

/// Window about `x` for the initial event, at least `min_half` wide.
fn event_window(ctx: &EventContext, s: f64, outer: f64, min_half: f64) -> Result<GridSpec> {
    GridSpec::covering(ctx.x, (outer + 2.0 * s + ctx.reach()? + 8.0 * s).max(min_half), s)
}

/// Initial Lipschitz event `E_{r,eps}(x; C)` over the configured replicas,
/// with the limiting metric replaced by the reference proxy.
pub fn event_initial(cfg: &ExperimentConfig, x: Complex64, r: f64, eps: f64, c: f64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ctx = EventContext::from_config(cfg, x, r, eps)?;
    let regions = cfg.regions(&ctx.family)?;
    check_initial_geometry(&ctx, &regions.v, &regions.u)?;
    if !kernel_support_admissible(eps, r) {
        return precondition(format!("eps log(1/eps) = {:.4} is not below r / 4 = {:.4}", support_radius(eps)?, r / 4.0));
    }
    let s = cfg.spacing_for(eps);
    let spec = event_window(&ctx, s, 1.75 * r, 0.0)?;
    let replicas = cfg.experiment.replicas;
    let events: Vec<InitialEvent> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| evaluate_initial(&replica_field(cfg, &spec, k, 0)?, &ctx))
        .collect::<Result<_>>()?;

    let mut rep = ExperimentReport::new("event_initial", cfg);
    rep.provenance.reference = Some(format!("reference proxy: localized LFPP at eps_ref = {}", ctx.eps_ref));
    for (i, e) in events.iter().enumerate() {
        let (s1, s2) = e.slacks(c);
        rep.indicator("E_initial", Some(i), e.holds(c), Some(s1.min(s2)));
        rep.metric("c_min", Some(eps), None, e.c_min, Estimator::MonteCarlo);
    }
    let mut grid = cfg.events.c_grid.clone();
    if !grid.contains(&c) {
        grid.push(c);
    }
    grid.sort_by(f64::total_cmp);
    let mut freqs = Vec::new();
    for &cc in &grid {
        let k = events.iter().filter(|e| e.holds(cc)).count();
        let m = rep.metric(&format!("frequency@C={cc}"), Some(eps), None, k as f64 / replicas as f64, Estimator::MonteCarlo);
        m.ci = Some(wilson_interval(k, replicas, WILSON_Z));
        freqs.push(k);
    }
    rep.check("monotone_in_C", freqs.windows(2).all(|w| w[0] <= w[1]), format!("counts {freqs:?} on C grid {grid:?}"));
    rep.provenance.seeds = (0..replicas as u64).map(|k| derive_seed(cfg.experiment.seed, &[0, k])).collect();
    Ok(rep)
}

/// Result of the improving-event evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovingEvent {
    pub conditions: [bool; 4],
    /// Smallest log-margin over the checked inequalities of each condition
    /// (`+inf` when nothing was triggered).
    pub slacks: [f64; 4],
}

impl ImprovingEvent {
    pub fn holds(&self) -> bool {
        self.conditions.iter().all(|c| *c)
    }
}

/// Thresholds of the improving event.
#[derive(Clone, Copy, Debug)]
pub struct ImprovingParams {
    pub alpha: f64,
    pub delta: f64,
    pub big_a: f64,
    pub zeta_minus: f64,
    pub boundary_points: usize,
}

/// Single-source shortest paths restricted to `mask`.
struct Sssp {
    dist: Vec<f64>,
    pred: crate::lfpp::ShortestPaths,
}

fn sssp(g: &MetricGraph, src: usize, mask: &[bool]) -> Sssp {
    let (sp, _) = g.dijkstra(&[src], mask, |_| false);
    Sssp { dist: sp.dist.clone(), pred: sp }
}

fn and_active(g: &MetricGraph, pred: impl Fn(f64) -> bool, x: Complex64) -> Vec<bool> {
    (0..g.spec.len()).map(|k| g.active[k] && pred((g.spec.node_at(k) - x).norm())).collect()
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Evaluate conditions 1-4 of the improving event. Boundary points are
/// sampled at `boundary_points` angles on each circle.
pub fn evaluate_improving(h: &GridField, ctx: &EventContext, p: &ImprovingParams) -> Result<ImprovingEvent> {
    let (x, r, s) = (ctx.x, ctx.r, h.spec.spacing);
    let region = Region::closed_annulus(x, 0.75 * r - 2.0 * s, 1.25 * r + 2.0 * s)?;
    let (fam, proxy) = ctx.graphs(h, &region)?;
    let (rho_sup, inv_sup) = ctx.ratio_bounds()?;
    let a = p.alpha * r;
    let tol = s;
    let m_a = and_active(&proxy, |d| d > 0.75 * r && d < 1.25 * r, x);
    let m_thin = and_active(&proxy, |d| d >= a - tol && d <= r + tol, x);
    let m_band = and_active(&proxy, |d| d >= 0.75 * r - 1.5 * s && d <= 1.25 * r + 1.5 * s, x);
    let outside: Vec<bool> = (0..proxy.spec.len())
        .map(|k| {
            let d = (proxy.spec.node_at(k) - x).norm();
            m_band[k] && (d <= 0.75 * r || d >= 1.25 * r)
        })
        .collect();
    let in_thin = |path: &[usize]| path.iter().all(|k| m_thin[*k]);
    let n = p.boundary_points.max(1);
    let circle = |rad: f64, off: f64| -> Result<Vec<usize>> {
        (0..n)
            .map(|i| {
                let z = x + Complex64::from_polar(rad, 2.0 * std::f64::consts::PI * (i as f64 + off) / n as f64);
                proxy.node_of(z, &m_thin)
            })
            .collect()
    };
    let us = circle(a, 0.0)?;
    let vs = circle(r, 0.5)?;
    let to_boundary = |sp: &Sssp| (0..outside.len()).filter(|k| outside[*k]).map(|k| sp.dist[k]).fold(f64::INFINITY, f64::min);

    let mut cond = [true; 4];
    let mut slack = [f64::INFINITY; 4];
    let mut note = |i: usize, lhs: f64, rhs: f64, strict: bool| {
        slack[i] = slack[i].min((rhs / lhs).ln());
        if !(lhs < rhs || !strict && lhs <= rhs) {
            cond[i] = false;
        }
    };
    let a_ref = proxy.normalization.unwrap_or(1.0);
    let a_eps = ctx.table.a(ctx.eps)?;

    // Per source u: proxy paths in A, in the thin annulus and in the band.
    for &u in &us {
        let pa = sssp(&proxy, u, &m_a);
        let pt = sssp(&proxy, u, &m_thin);
        let pb = sssp(&proxy, u, &m_band);
        let pb_exit = to_boundary(&pb);
        let fam_paths: Vec<(Sssp, Sssp)> = fam.iter().map(|g| (sssp(g, u, &m_a), sssp(g, u, &m_thin))).collect();
        for &v in &vs {
            let d_a = pa.dist[v] / a_ref;
            let d_thin = pt.dist[v] / a_ref;
            let proxy_contained = in_thin(&pa.pred.trace(v));
            let mut some_phi_confined = false;
            for (fa, ft) in &fam_paths {
                let f_a = fa.dist[v] / a_eps;
                let f_thin = ft.dist[v] / a_eps;
                // Condition 1.
                if proxy_contained {
                    note(0, f_a, rho_sup * (1.0 + p.delta) * d_thin, false);
                }
                if in_thin(&fa.pred.trace(v)) {
                    note(0, d_a, inv_sup * (1.0 + p.delta) * f_thin, false);
                }
                some_phi_confined |= same(f_thin, f_a);
            }
            // Condition 2, second bullet.
            if some_phi_confined {
                note(1, pb.dist[v], pb_exit, true);
            }
            // Condition 2, first bullet: localized metrics of h at eps t.
            if same(d_thin, d_a) {
                let tau = ctx.family.tau;
                for i in 0..5 {
                    let t = tau.powf(-1.0 + 0.5 * i as f64);
                    let g = pulled_back_graph(h, &ConformalMap::identity(), ctx.q()?, ctx.xi, ctx.eps * t, &region)?;
                    let sp = sssp(&g, u, &m_band);
                    let exit = to_boundary(&sp);
                    note(1, sp.dist[v], exit, true);
                }
            }
        }
    }

    // Condition 3.
    let d_across = across(&proxy, x, a, r)?;
    note(2, around(&proxy, x, a, r)?, p.big_a * d_across, false);
    let mut fam_across = Vec::with_capacity(fam.len());
    for g in &fam {
        let f_across = across(g, x, a, r)?;
        note(2, around(g, x, a, r)?, p.big_a * f_across, false);
        fam_across.push(f_across);
    }

    // Condition 4.
    let rad = 4.0 * ctx.eps.powf(1.0 - p.zeta_minus);
    let mut starts = Vec::new();
    for rr in [a, 0.5 * (a + r), r] {
        for i in 0..n {
            starts.push(x + Complex64::from_polar(rr, 2.0 * std::f64::consts::PI * i as f64 / n as f64));
        }
    }
    for z in starts {
        let u = proxy.node_of(z, &m_a)?;
        let uz = proxy.spec.node_at(u);
        let targets: Vec<usize> = (0..8)
            .map(|i| proxy.node_of(uz + Complex64::from_polar(rad, std::f64::consts::PI * i as f64 / 4.0), &m_a))
            .collect::<Result<_>>()?;
        let pa = sssp(&proxy, u, &m_a);
        for (g, f_across) in fam.iter().zip(&fam_across) {
            let fa = sssp(g, u, &m_a);
            for &v in &targets {
                note(3, fa.dist[v] / a_eps, p.delta * rho_sup * d_across, false);
                note(3, pa.dist[v] / a_ref, p.delta * inv_sup * f_across, false);
            }
        }
    }
    Ok(ImprovingEvent { conditions: cond, slacks: slack })
}

fn check_improving_geometry(ctx: &EventContext, p: &ImprovingParams, v: &Region) -> Result<()> {
    let (x, r) = (ctx.x, ctx.r);
    if !(p.alpha > 0.875 && p.alpha < 1.0) {
        return precondition(format!("alpha = {} must lie in (7/8, 1)", p.alpha));
    }
    let lower = 4.0 * ctx.eps.powf(1.0 - p.zeta_minus) / (p.alpha - 0.75);
    if !(r > lower) {
        return precondition(format!("r = {r} must exceed 4 eps^(1 - zeta_minus) / (alpha - 3/4) = {lower:.4}"));
    }
    if !Region::annulus(x, 0.75 * r, 1.25 * r)?.compactly_inside(v, 0.0, r / 64.0) {
        return precondition(format!("A_(3r/4, 5r/4)({x}) with r = {r} is not inside V"));
    }
    Ok(())
}

/// Improving-the-Lipschitz-constant events: four condition indicators and
/// their conjunction per replica.
#[allow(clippy::too_many_arguments)]
pub fn event_improving(
    cfg: &ExperimentConfig,
    x: Complex64,
    r: f64,
    eps: f64,
    alpha: f64,
    delta: f64,
    big_a: f64,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ctx = EventContext::from_config(cfg, x, r, eps)?;
    let regions = cfg.regions(&ctx.family)?;
    let p = ImprovingParams { alpha, delta, big_a, zeta_minus: cfg.thresholds.zeta_minus, boundary_points: cfg.events.boundary_points };
    check_improving_geometry(&ctx, &p, &regions.v)?;
    let s = cfg.spacing_for(eps);
    let spec = event_window(&ctx, s, 1.25 * r, 0.0)?;
    let replicas = cfg.experiment.replicas;
    let events: Vec<ImprovingEvent> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| evaluate_improving(&replica_field(cfg, &spec, k, 0)?, &ctx, &p))
        .collect::<Result<_>>()?;
    let mut rep = ExperimentReport::new("event_improving", cfg);
    rep.provenance.reference = Some(format!("reference proxy: localized LFPP at eps_ref = {}", ctx.eps_ref));
    for (i, e) in events.iter().enumerate() {
        for c in 0..4 {
            rep.indicator(&format!("E{}", c + 1), Some(i), e.conditions[c], Some(e.slacks[c]));
        }
        rep.indicator("E", Some(i), e.holds(), None);
    }
    for c in 0..5 {
        let k = events.iter().filter(|e| if c < 4 { e.conditions[c] } else { e.holds() }).count();
        let name = if c < 4 { format!("frequency:E{}", c + 1) } else { "frequency:E".to_string() };
        rep.metric(&name, Some(eps), None, k as f64 / replicas as f64, Estimator::MonteCarlo).ci =
            Some(wilson_interval(k, replicas, WILSON_Z));
    }
    rep.provenance.seeds = (0..replicas as u64).map(|k| derive_seed(cfg.experiment.seed, &[0, k])).collect();
    Ok(rep)
}

/// `h` pinned so that its circle average on `partial B_{4r}(x)` vanishes.
pub fn pin(h: &GridField, x: Complex64, r: f64) -> Result<GridField> {
    Ok(add_scalar(h, -circle_average(h, x, 4.0 * r)?))
}

/// Keep `g` on `keep` nodes and take `f` elsewhere.
pub fn splice(g: &GridField, f: &GridField, keep: impl Fn(Complex64) -> bool) -> Result<GridField> {
    if g.spec != f.spec {
        return Err(Error::SpecMismatch);
    }
    let mut out = g.clone();
    for k in 0..g.spec.len() {
        if !keep(g.spec.node_at(k)) {
            out.values[k] = f.values[k];
            out.valid[k] = f.valid[k];
        }
    }
    Ok(out)
}

/// Locality of the initial event: evaluate it on `h - h_{4r}(x)`, replace
/// the field outside `A_{r/2, 2r}(x)` by an independent pinned sample (or
/// only a far corner of the window), and compare.
pub fn event_locality_test(cfg: &ExperimentConfig, x: Complex64, r: f64, eps: f64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ctx = EventContext::from_config(cfg, x, r, eps)?;
    let regions = cfg.regions(&ctx.family)?;
    check_initial_geometry(&ctx, &regions.v, &regions.u)?;
    let admissible = kernel_support_admissible(eps, r) && kernel_support_admissible(ctx.eps_ref, r);
    let s = cfg.spacing_for(eps);
    let spec = event_window(&ctx, s, 1.75 * r, 4.0 * r + 4.0 * s)?;
    let crop = event_window(&ctx, s, 1.75 * r, 0.0)?;
    let far_corner = cfg.events.far_corner_only;
    let replicas = cfg.experiment.replicas;
    let pairs: Vec<(InitialEvent, InitialEvent)> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| {
            let g = pin(&replica_field(cfg, &spec, k, 0)?, x, r)?;
            let f = pin(&replica_field(cfg, &spec, k, 1)?, x, r)?;
            let spliced = if far_corner {
                splice(&g, &f, |z| !(z.re - x.re > 3.0 * r && z.im - x.im > 3.0 * r))?
            } else {
                splice(&g, &f, |z| {
                    let d = (z - x).norm();
                    d >= 0.5 * r && d <= 2.0 * r
                })?
            };
            let a = evaluate_initial(&g.restrict(&crop)?, &ctx)?;
            let b = evaluate_initial(&spliced.restrict(&crop)?, &ctx)?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;

    let c = cfg.thresholds.big_c;
    let mut rep = ExperimentReport::new("event_locality_test", cfg);
    rep.provenance.reference = Some(format!("reference proxy: localized LFPP at eps_ref = {}", ctx.eps_ref));
    let mut matches = 0;
    let mut identical = 0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let same_ind = a.holds(c) == b.holds(c);
        matches += same_ind as usize;
        identical += (a == b) as usize;
        rep.indicator("E_initial", Some(i), a.holds(c), Some(a.slacks(c).0.min(a.slacks(c).1)));
        rep.indicator("E_initial_resampled", Some(i), b.holds(c), Some(b.slacks(c).0.min(b.slacks(c).1)));
        rep.indicator("match", Some(i), same_ind, None);
    }
    rep.metric("match_fraction", Some(eps), None, matches as f64 / replicas as f64, Estimator::MonteCarlo).ci =
        Some(wilson_interval(matches, replicas, WILSON_Z));
    rep.metric("identical_inputs_fraction", Some(eps), None, identical as f64 / replicas as f64, Estimator::MonteCarlo);
    rep.check(
        "kernel_support_inside_annulus",
        admissible,
        format!("eps log(1/eps) = {:.5}, r / 4 = {:.5}", support_radius(eps)?, r / 4.0),
    );
    rep.check("indicator_invariance", matches == replicas, format!("{matches}/{replicas} indicators unchanged"));
    rep.provenance.seeds = (0..replicas as u64).flat_map(|k| [derive_seed(cfg.experiment.seed, &[0, k]), derive_seed(cfg.experiment.seed, &[1, k])]).collect();
    Ok(rep)
}
