//! LFPP metrics on 8-connected lattice graphs: point and set distances,
//! internal metrics, loops around annuli, Weyl scaling and geodesic checks.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conformal::Region;
use crate::error::{precondition, Error, Result};
use crate::grid::{FieldKind, GridField, GridSpec};

/// A path length that may be infinite (disconnected endpoints).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Distance {
    Finite(f64),
    Infinite,
}

impl Distance {
    pub fn is_finite(&self) -> bool {
        matches!(self, Distance::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Distance::Finite(v) => Some(*v),
            Distance::Infinite => None,
        }
    }

    /// The finite value; panics on the infinite marker.
    pub fn unwrap(&self) -> f64 {
        self.value().expect("distance is infinite")
    }

    /// Comparison treating the marker as larger than any finite value.
    pub fn le(&self, other: &Distance) -> bool {
        match (self, other) {
            (_, Distance::Infinite) => true,
            (Distance::Infinite, Distance::Finite(_)) => false,
            (Distance::Finite(a), Distance::Finite(b)) => a <= b,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathResult {
    pub raw: Distance,
    /// `raw / a_eps` when the graph carries a normalization.
    pub normalized: Option<f64>,
    /// Node indices from the first to the last point of the path.
    pub geodesic: Vec<usize>,
    pub eps: Option<f64>,
    pub kernel: String,
}

/// The eight lattice neighbours in increasing index order.
const NEIGHBOURS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Weighted 8-connected lattice graph. Edge `(u, v)` weighs
/// `|u - v| (P(u) + P(v)) / 2` with node potential `P = e^{xi f}`, possibly
/// times a conformal factor.
#[derive(Clone, Debug)]
pub struct MetricGraph {
    pub spec: GridSpec,
    pub xi: f64,
    pub potential: Vec<f64>,
    pub active: Vec<bool>,
    pub eps: Option<f64>,
    pub kernel: String,
    /// `a_eps`, used for normalized distances.
    pub normalization: Option<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so BinaryHeap pops the smallest (dist, node).
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NO_PRED: usize = usize::MAX;

/// Output of a Dijkstra run.
pub struct ShortestPaths {
    pub dist: Vec<f64>,
    pub pred: Vec<usize>,
}

impl ShortestPaths {
    pub fn trace(&self, target: usize) -> Vec<usize> {
        let mut path = vec![target];
        let mut cur = target;
        while self.pred[cur] != NO_PRED {
            cur = self.pred[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }
}

/// Build the graph of a mollified field over the nodes of `region`.
pub fn build_graph(field: &GridField, region: &Region, xi: f64) -> Result<MetricGraph> {
    graph_on(field, xi, region.label(), |z, valid| {
        if !region.contains(z) {
            Ok(false)
        } else if valid {
            Ok(true)
        } else {
            Err(Error::InvalidNodes(format!("node {z} of {} is not margin-safe", region.label())))
        }
    })
}

/// Graph on every margin-safe node of the window.
pub fn build_graph_valid(field: &GridField, xi: f64) -> Result<MetricGraph> {
    graph_on(field, xi, "valid nodes".into(), |_, valid| Ok(valid))
}

fn graph_on(field: &GridField, xi: f64, label: String, mut take: impl FnMut(Complex64, bool) -> Result<bool>) -> Result<MetricGraph> {
    let (eps, kernel) = match &field.kind {
        FieldKind::HeatMollified { eps } => (Some(*eps), "heat".to_string()),
        FieldKind::LocalizedMollified { eps } => (Some(*eps), "localized".to_string()),
        FieldKind::Deterministic => (None, "deterministic".to_string()),
        k => return precondition(format!("cannot build a graph from a {} field", k.label())),
    };
    if !(xi.is_finite() && xi > 0.0) {
        return precondition(format!("xi must be positive, got {xi}"));
    }
    let spec = field.spec;
    let mut active = vec![false; spec.len()];
    let mut potential = vec![0.0; spec.len()];
    let mut n = 0usize;
    for k in 0..spec.len() {
        if take(spec.node_at(k), field.valid[k])? {
            active[k] = true;
            potential[k] = (xi * field.values[k]).exp();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion(label));
    }
    Ok(MetricGraph { spec, xi, potential, active, eps, kernel, normalization: None })
}

impl MetricGraph {
    /// Graph from explicit node potentials.
    pub fn from_potential(spec: GridSpec, potential: Vec<f64>, active: Vec<bool>, xi: f64, kernel: &str, eps: Option<f64>) -> Result<Self> {
        if potential.len() != spec.len() || active.len() != spec.len() {
            return Err(Error::SpecMismatch);
        }
        for (p, a) in potential.iter().zip(&active) {
            if *a && !(p.is_finite() && *p > 0.0) {
                return precondition("node potentials must be positive and finite");
            }
        }
        if !active.iter().any(|a| *a) {
            return Err(Error::EmptyRegion("no active nodes".into()));
        }
        Ok(Self { spec, xi, potential, active, eps, kernel: kernel.to_string(), normalization: None })
    }

    pub fn with_normalization(mut self, a_eps: f64) -> Self {
        self.normalization = Some(a_eps);
        self
    }

    pub fn node_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    #[inline]
    fn neighbour(&self, u: usize, d: usize) -> Option<(usize, f64)> {
        let (i, j) = self.spec.coords(u);
        let (di, dj) = NEIGHBOURS[d];
        let (ni, nj) = (i as i64 + di, j as i64 + dj);
        if ni < 0 || nj < 0 || ni >= self.spec.nx as i64 || nj >= self.spec.ny as i64 {
            return None;
        }
        let len = if di != 0 && dj != 0 { SQRT_2 * self.spec.spacing } else { self.spec.spacing };
        Some((self.spec.index(ni as usize, nj as usize), len))
    }

    #[inline]
    pub fn edge_weight(&self, u: usize, v: usize, len: f64) -> f64 {
        len * (0.5 * (self.potential[u] + self.potential[v]))
    }

    /// All edges `(u, v, weight)` with `u < v` between active nodes.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for u in 0..self.spec.len() {
            if !self.active[u] {
                continue;
            }
            for d in 0..8 {
                if let Some((v, len)) = self.neighbour(u, d) {
                    if v > u && self.active[v] {
                        out.push((u, v, self.edge_weight(u, v, len)));
                    }
                }
            }
        }
        out
    }

    /// Active nodes inside `region`.
    pub fn mask(&self, region: &Region) -> Vec<bool> {
        (0..self.spec.len()).map(|k| self.active[k] && region.contains(self.spec.node_at(k))).collect()
    }

    /// Node nearest to `z`; it must be allowed by `mask`.
    pub fn node_of(&self, z: Complex64, mask: &[bool]) -> Result<usize> {
        let (i, j) = self
            .spec
            .nearest(z)
            .ok_or_else(|| Error::Precondition(format!("point {z} outside the graph window")))?;
        let k = self.spec.index(i, j);
        if !mask[k] {
            return precondition(format!("point {z} is not in the query region"));
        }
        Ok(k)
    }

    /// Dijkstra from `sources` over `mask`, stopping once `stop` accepts a
    /// settled node (which is returned).
    pub fn dijkstra(&self, sources: &[usize], mask: &[bool], mut stop: impl FnMut(usize) -> bool) -> (ShortestPaths, Option<usize>) {
        let n = self.spec.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![NO_PRED; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            if mask[s] && dist[s] > 0.0 {
                dist[s] = 0.0;
                heap.push(HeapItem { dist: 0.0, node: s });
            }
        }
        let mut hit = None;
        while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if stop(u) {
                hit = Some(u);
                break;
            }
            for dir in 0..8 {
                if let Some((v, len)) = self.neighbour(u, dir) {
                    if !mask[v] || done[v] {
                        continue;
                    }
                    let nd = d + self.edge_weight(u, v, len);
                    if nd < dist[v] {
                        dist[v] = nd;
                        pred[v] = u;
                        heap.push(HeapItem { dist: nd, node: v });
                    }
                }
            }
        }
        (ShortestPaths { dist, pred }, hit)
    }

    fn result(&self, raw: Distance, geodesic: Vec<usize>) -> PathResult {
        let normalized = match (raw, self.normalization) {
            (Distance::Finite(v), Some(a)) => Some(v / a),
            _ => None,
        };
        PathResult { raw, normalized, geodesic, eps: self.eps, kernel: self.kernel.clone() }
    }

    /// Shortest path between the nodes nearest `z` and `w` within `mask`.
    pub fn distance_masked(&self, z: Complex64, w: Complex64, mask: &[bool]) -> Result<PathResult> {
        let s = self.node_of(z, mask)?;
        let t = self.node_of(w, mask)?;
        let (sp, hit) = self.dijkstra(&[s], mask, |u| u == t);
        Ok(match hit {
            Some(t) => self.result(Distance::Finite(sp.dist[t]), sp.trace(t)),
            None => self.result(Distance::Infinite, Vec::new()),
        })
    }

    pub fn distance(&self, z: Complex64, w: Complex64) -> Result<PathResult> {
        self.distance_masked(z, w, &self.active)
    }

    /// Internal distance: paths restricted to the nodes of `y`.
    pub fn internal_distance(&self, z: Complex64, w: Complex64, y: &Region) -> Result<PathResult> {
        self.distance_masked(z, w, &self.mask(y))
    }

    /// Distances from `z` to each of `targets` within `mask`.
    pub fn distances_from(&self, z: Complex64, targets: &[Complex64], mask: &[bool]) -> Result<Vec<Distance>> {
        let s = self.node_of(z, mask)?;
        let ts = targets.iter().map(|t| self.node_of(*t, mask)).collect::<Result<Vec<_>>>()?;
        let mut remaining: std::collections::HashSet<usize> = ts.iter().copied().collect();
        let (sp, _) = self.dijkstra(&[s], mask, |u| {
            remaining.remove(&u);
            remaining.is_empty()
        });
        Ok(ts.iter().map(|t| if sp.dist[*t].is_finite() { Distance::Finite(sp.dist[*t]) } else { Distance::Infinite }).collect())
    }

    /// Multi-source/multi-sink distance between node sets within `mask`.
    pub fn set_distance_masked(&self, a: &[bool], b: &[bool], mask: &[bool]) -> Result<PathResult> {
        let sources: Vec<usize> = (0..self.spec.len()).filter(|k| a[*k] && mask[*k]).collect();
        if sources.is_empty() || !(0..self.spec.len()).any(|k| b[k] && mask[k]) {
            return Err(Error::EmptyRegion("set distance needs nonempty node sets".into()));
        }
        let (sp, hit) = self.dijkstra(&sources, mask, |u| b[u]);
        Ok(match hit {
            Some(t) => self.result(Distance::Finite(sp.dist[t]), sp.trace(t)),
            None => self.result(Distance::Infinite, Vec::new()),
        })
    }

    pub fn set_distance(&self, a: &Region, b: &Region) -> Result<PathResult> {
        let ma = self.mask(a);
        let mb = self.mask(b);
        self.set_distance_masked(&ma, &mb, &self.active)
    }

    /// Minimal loop in `mask` separating `x` from infinity, found on the
    /// double cover cut along the ray from `x` in the positive real direction.
    pub fn distance_around_masked(&self, x: Complex64, mask: &[bool]) -> Result<PathResult> {
        let n = self.spec.len();
        let rel: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let z = self.spec.node_at(k) - x;
                (z.re, z.im)
            })
            .collect();
        let upper = |k: usize| rel[k].1 >= 0.0;
        let crosses = |u: usize, v: usize| rel[u].0 > 0.0 && rel[v].0 > 0.0 && upper(u) != upper(v);
        // Start nodes: upper endpoints of slit-crossing edges.
        let mut starts = Vec::new();
        for u in 0..n {
            if !mask[u] || !upper(u) || rel[u].0 <= 0.0 {
                continue;
            }
            if (0..8).any(|d| matches!(self.neighbour(u, d), Some((v, _)) if mask[v] && crosses(u, v))) {
                starts.push(u);
            }
        }
        let mut best = f64::INFINITY;
        let mut best_loop: Vec<usize> = Vec::new();
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut pred = vec![NO_PRED; 2 * n];
        let mut touched: Vec<usize> = Vec::new();
        for &s in &starts {
            for &t in &touched {
                dist[t] = f64::INFINITY;
                pred[t] = NO_PRED;
            }
            touched.clear();
            let src = 2 * s;
            let dst = 2 * s + 1;
            dist[src] = 0.0;
            touched.push(src);
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem { dist: 0.0, node: src });
            while let Some(HeapItem { dist: d, node: st }) = heap.pop() {
                if d > dist[st] {
                    continue;
                }
                if d >= best {
                    break;
                }
                if st == dst {
                    best = d;
                    let mut path = vec![st / 2];
                    let mut cur = st;
                    while pred[cur] != NO_PRED {
                        cur = pred[cur];
                        path.push(cur / 2);
                    }
                    path.reverse();
                    best_loop = path;
                    break;
                }
                let (u, layer) = (st / 2, st % 2);
                for dir in 0..8 {
                    if let Some((v, len)) = self.neighbour(u, dir) {
                        if !mask[v] {
                            continue;
                        }
                        let nl = if crosses(u, v) { 1 - layer } else { layer };
                        let sv = 2 * v + nl;
                        let nd = d + self.edge_weight(u, v, len);
                        if nd < dist[sv] {
                            if dist[sv].is_infinite() {
                                touched.push(sv);
                            }
                            dist[sv] = nd;
                            pred[sv] = st;
                            heap.push(HeapItem { dist: nd, node: sv });
                        }
                    }
                }
            }
        }
        Ok(if best.is_finite() {
            self.result(Distance::Finite(best), best_loop)
        } else {
            self.result(Distance::Infinite, Vec::new())
        })
    }

    /// Distance around the closed annulus `A_{r1,r2}(x)`.
    pub fn distance_around_annulus(&self, x: Complex64, r1: f64, r2: f64) -> Result<PathResult> {
        if r2 - r1 < 3.0 * self.spec.spacing {
            return precondition(format!("annulus ({r1}, {r2}) is thinner than three lattice spacings"));
        }
        let ann = Region::closed_annulus(x, r1, r2)?;
        let mut mask = vec![false; self.spec.len()];
        let mut count = 0usize;
        for k in 0..self.spec.len() {
            if ann.contains(self.spec.node_at(k)) {
                if !self.active[k] {
                    return Err(Error::InvalidNodes(format!("annulus node {:?} is outside the graph region", self.spec.coords(k))));
                }
                mask[k] = true;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyRegion("annulus contains no nodes".into()));
        }
        self.distance_around_masked(x, &mask)
    }

    /// Multiply every node potential by `e^{xi f}`.
    pub fn weyl_scale(&self, f: &GridField) -> Result<MetricGraph> {
        if f.spec != self.spec {
            return Err(Error::SpecMismatch);
        }
        let mut g = self.clone();
        for k in 0..self.spec.len() {
            if self.active[k] {
                if !f.valid[k] {
                    return Err(Error::InvalidNodes("Weyl factor invalid on an active node".into()));
                }
                g.potential[k] = self.potential[k] * (self.xi * f.values[k]).exp();
            }
        }
        Ok(g)
    }

    /// Sum of edge weights along a node path.
    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2)
            .map(|w| {
                let (a, b) = (self.spec.coords(w[0]), self.spec.coords(w[1]));
                let diag = a.0 != b.0 && a.1 != b.1;
                let len = if diag { SQRT_2 * self.spec.spacing } else { self.spec.spacing };
                self.edge_weight(w[0], w[1], len)
            })
            .sum()
    }

    pub fn points(&self, path: &[usize]) -> Vec<Complex64> {
        path.iter().map(|k| self.spec.node_at(*k)).collect()
    }
}

/// Whether every node of the result's path lies in `y`.
pub fn geodesic_in_region(result: &PathResult, spec: &GridSpec, y: &Region) -> bool {
    result.geodesic.iter().all(|k| y.contains(spec.node_at(*k)))
}

/// Exhaustive search over simple paths between the nodes nearest `z` and
/// `w`. With `prune`, partial paths already longer than the best complete
/// path are abandoned (exact for positive weights). Limited to 25 nodes.
pub fn enumerate_shortest(graph: &MetricGraph, z: Complex64, w: Complex64, prune: bool) -> Result<(Distance, u64)> {
    if graph.node_count() > 25 {
        return precondition("path enumeration is limited to 25 active nodes");
    }
    let s = graph.node_of(z, &graph.active)?;
    let t = graph.node_of(w, &graph.active)?;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); graph.spec.len()];
    for (u, v, wt) in graph.edges() {
        adj[u].push((v, wt));
        adj[v].push((u, wt));
    }
    struct Search<'a> {
        adj: &'a [Vec<(usize, f64)>],
        on: Vec<bool>,
        best: f64,
        paths: u64,
        prune: bool,
        target: usize,
    }
    fn go(st: &mut Search, u: usize, len: f64) {
        if u == st.target {
            st.paths += 1;
            if len < st.best {
                st.best = len;
            }
            return;
        }
        if st.prune && len >= st.best {
            return;
        }
        for k in 0..st.adj[u].len() {
            let (v, wt) = st.adj[u][k];
            if !st.on[v] {
                st.on[v] = true;
                go(st, v, len + wt);
                st.on[v] = false;
            }
        }
    }
    if s == t {
        return Ok((Distance::Finite(0.0), 1));
    }
    let mut st = Search { adj: &adj, on: vec![false; graph.spec.len()], best: f64::INFINITY, paths: 0, prune, target: t };
    st.on[s] = true;
    go(&mut st, s, 0.0);
    Ok((if st.best.is_finite() { Distance::Finite(st.best) } else { Distance::Infinite }, st.paths))
}

/// Metadata written next to a distance-matrix CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceSidecar {
    pub eps: Option<f64>,
    pub xi: f64,
    pub kernel: String,
    pub seed: Option<u64>,
    pub normalization: Option<f64>,
}

/// Write a labelled distance matrix (`inf` for the infinite marker) and its
/// JSON sidecar at `<path>.json`.
pub fn write_distance_matrix(path: &Path, labels: &[String], rows: &[Vec<Distance>], meta: &DistanceSidecar) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["query".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(rows) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|d| match d {
            Distance::Finite(v) => format!("{v:.17e}"),
            Distance::Infinite => "inf".to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut side = std::fs::File::create(path.with_extension("json"))?;
    side.write_all(serde_json::to_string_pretty(meta)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::{add_scalar, heat_mollify, sample_gff};
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn zero_graph(n: usize, s: f64) -> MetricGraph {
        let spec = GridSpec::new(n, n, s, c(0.0, 0.0)).unwrap();
        build_graph(&GridField::constant(spec, 0.0), &Region::Plane, 0.3).unwrap()
    }

    #[test]
    fn zero_field_edge_weights() {
        let g = zero_graph(3, 0.5);
        let edges = g.edges();
        assert_eq!(edges.len(), 20);
        for (u, v, w) in edges {
            let d = (g.spec.node_at(u) - g.spec.node_at(v)).norm();
            assert!((w - d).abs() < 1e-15);
        }
    }

    #[test]
    fn king_metric_closed_form() {
        let g = zero_graph(8, 1.0);
        let r = g.distance(c(0.0, 0.0), c(3.0, 4.0)).unwrap();
        assert!((r.raw.unwrap() - (1.0 + 3.0 * SQRT_2)).abs() < 1e-12);
        assert_eq!(r.geodesic.first(), Some(&0));
        assert_eq!(r.geodesic.last(), Some(&g.spec.index(3, 4)));
        assert!((g.path_length(&r.geodesic) - r.raw.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn random_three_by_three_weights_match_formula() {
        let spec = GridSpec::new(3, 3, 0.25, c(0.0, 0.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let f = GridField::new(spec, vals.clone(), FieldKind::Deterministic).unwrap();
        let xi = 0.4;
        let g = build_graph(&f, &Region::Plane, xi).unwrap();
        let edges = g.edges();
        assert_eq!(edges.len(), 20);
        for (u, v, w) in edges {
            let d = (spec.node_at(u) - spec.node_at(v)).norm();
            let hand = d * ((xi * vals[u]).exp() + (xi * vals[v]).exp()) / 2.0;
            assert!((w - hand).abs() < 1e-15);
        }
    }

    #[test]
    fn disconnected_query_gives_marker() {
        let g = zero_graph(6, 1.0);
        let wall = Region::Union {
            parts: vec![Region::rect(-1.0, -1.0, 1.5, 6.0), Region::rect(3.5, -1.0, 6.0, 6.0)],
        };
        let r = g.internal_distance(c(0.0, 0.0), c(5.0, 5.0), &wall).unwrap();
        assert_eq!(r.raw, Distance::Infinite);
        assert!(r.geodesic.is_empty());
    }

    #[test]
    fn brute_force_agrees_on_small_grids() {
        let spec = GridSpec::new(3, 3, 1.0, c(0.0, 0.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let vals: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let g = build_graph(&GridField::new(spec, vals, FieldKind::Deterministic).unwrap(), &Region::Plane, 1.0).unwrap();
            let (full, n_full) = enumerate_shortest(&g, c(0.0, 0.0), c(2.0, 2.0), false).unwrap();
            let (pruned, _) = enumerate_shortest(&g, c(0.0, 0.0), c(2.0, 2.0), true).unwrap();
            assert!(n_full > 100);
            let d = g.distance(c(0.0, 0.0), c(2.0, 2.0)).unwrap().raw;
            assert_eq!(full, pruned);
            assert!((full.unwrap() - d.unwrap()).abs() <= 1e-12 * d.unwrap());
        }
    }

    #[test]
    fn weyl_scaling_with_field() {
        let spec = GridSpec::new(64, 64, 1.0 / 32.0, c(-1.0, -1.0)).unwrap();
        let h = heat_mollify(&sample_gff(&spec, 2.0, 5).unwrap(), 0.1).unwrap();
        let bump = GridField::from_fn(spec, |z| 0.8 * (-z.norm_sqr() / 0.05).exp());
        let region = Region::disk(c(0.0, 0.0), 0.3);
        let g = build_graph(&h, &region, 0.5).unwrap();
        let scaled = g.weyl_scale(&bump).unwrap();
        let sum = crate::gff::add_field(&h, &bump).unwrap();
        let rebuilt = build_graph(&GridField { kind: h.kind.clone(), ..sum }, &region, 0.5).unwrap();
        for (z, w) in [(c(-0.2, 0.0), c(0.2, 0.1)), (c(0.0, -0.25), c(0.1, 0.2))] {
            let a = scaled.distance(z, w).unwrap().raw.unwrap();
            let b = rebuilt.distance(z, w).unwrap().raw.unwrap();
            assert!((a - b).abs() <= 1e-9 * b);
        }
        let zero = GridField::constant(spec, 0.0);
        assert_eq!(g.weyl_scale(&zero).unwrap().potential, g.potential);
        let cst = GridField::constant(spec, 0.7);
        let gc = g.weyl_scale(&cst).unwrap();
        let base = g.distance(c(-0.2, 0.0), c(0.2, 0.1)).unwrap().raw.unwrap();
        let sc = gc.distance(c(-0.2, 0.0), c(0.2, 0.1)).unwrap().raw.unwrap();
        assert!((sc - (0.35f64).exp() * base).abs() <= 1e-12 * sc);
        let _ = add_scalar;
    }

    #[test]
    fn around_annulus_on_constant_field() {
        // Minimal king-metric loop around the unit circle is close to the
        // circumscribed regular octagon, 8 * 2 tan(pi/8) per unit radius.
        let s = 1.0 / 32.0;
        let spec = GridSpec::new(161, 161, s, c(-2.5, -2.5)).unwrap();
        let g = build_graph(&GridField::constant(spec, 0.0), &Region::Plane, 0.5).unwrap();
        let r = g.distance_around_annulus(c(0.0, 0.0), 1.0, 2.0).unwrap();
        let len = r.raw.unwrap();
        let octagon = 16.0 * (std::f64::consts::PI / 8.0).tan();
        assert!(len >= 2.0 * std::f64::consts::PI);
        assert!((len - octagon).abs() < 0.02 * octagon, "{len} vs {octagon}");
        assert_eq!(r.geodesic.first(), r.geodesic.last());
        assert!((g.path_length(&r.geodesic) - len).abs() < 1e-12);
        assert!(g.distance_around_annulus(c(0.0, 0.0), 1.0, 1.05).is_err());
    }
}
