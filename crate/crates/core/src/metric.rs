//! Lattice LFPP: shortest paths for the edge weights
//! `len(u, v) * (e^{xi h(u)} + e^{xi h(v)}) / 2` over a masked grid.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::gff::MollifiedField;
use crate::lattice::{vertices_in_annulus, Annulus, GridSpec, VertexSet};
use crate::params::LqgParams;

const NO_PRED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScheme {
    Axis4,
    #[default]
    King8,
}

impl NeighborScheme {
    /// Lattice offsets with their length in units of the spacing.
    fn offsets(self) -> &'static [(isize, isize, f64)] {
        const S2: f64 = std::f64::consts::SQRT_2;
        const AXIS: [(isize, isize, f64); 4] = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0)];
        const KING: [(isize, isize, f64); 8] = [
            (1, 0, 1.0),
            (-1, 0, 1.0),
            (0, 1, 1.0),
            (0, -1, 1.0),
            (1, 1, S2),
            (-1, 1, S2),
            (1, -1, S2),
            (-1, -1, S2),
        ];
        match self {
            NeighborScheme::Axis4 => &AXIS,
            NeighborScheme::King8 => &KING,
        }
    }
}

/// An ordered chain of adjacent vertices with its LFPP length.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub vertices: Vec<usize>,
    pub weighted_length: f64,
}

impl LatticePath {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.len() > 2 && self.vertices.first() == self.vertices.last()
    }

    /// Writes `step,i,j,x,y` rows.
    pub fn write_csv<W: Write>(&self, grid: &GridSpec, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(["step", "i", "j", "x", "y"]).map_err(io)?;
        for (step, &v) in self.vertices.iter().enumerate() {
            let (i, j) = grid.coords(v);
            let p = grid.position(v);
            out.write_record(&[
                step.to_string(),
                i.to_string(),
                j.to_string(),
                format!("{:.9}", p.x),
                format!("{:.9}", p.y),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub value: f64,
    pub geodesic: Option<LatticePath>,
}

impl DistanceResult {
    fn unreachable() -> Self {
        DistanceResult {
            value: f64::INFINITY,
            geodesic: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Labels of one label-setting search.
#[derive(Debug, Clone)]
pub struct SearchTree {
    dist: Vec<f64>,
    pred: Vec<u32>,
}

impl SearchTree {
    pub fn distance_to(&self, v: usize) -> f64 {
        self.dist[v]
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    /// Path from the nearest source to `v`; `None` when `v` was not reached.
    pub fn path_to(&self, v: usize) -> Option<Vec<usize>> {
        if !self.dist[v].is_finite() {
            return None;
        }
        let mut path = vec![v];
        let mut cur = v;
        while self.pred[cur] != NO_PRED {
            cur = self.pred[cur] as usize;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    /// Minimum label over `set`, ties broken by lowest vertex index.
    pub fn nearest_in(&self, set: &VertexSet) -> Option<(usize, f64)> {
        set.iter()
            .filter(|&v| self.dist[v].is_finite())
            .fold(None, |best: Option<(usize, f64)>, v| match best {
                Some((_, d)) if d <= self.dist[v] => best,
                _ => Some((v, self.dist[v])),
            })
    }
}

/// The LFPP metric on a fixed field: immutable, shareable across threads.
#[derive(Debug, Clone)]
pub struct MetricOracle {
    field: Field,
    params: LqgParams,
    mask: VertexSet,
    scheme: NeighborScheme,
    weight: Vec<f64>,
}

impl MetricOracle {
    pub fn new(field: Field, params: LqgParams, mask: VertexSet, scheme: NeighborScheme) -> Result<Self> {
        if mask.grid() != field.grid() {
            return Err(Error::GridMismatch("mask and field grids differ".into()));
        }
        let xi = params.xi();
        let weight: Vec<f64> = field.values().iter().map(|&h| (xi * h).exp()).collect();
        if weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::NonFinite("edge weights"));
        }
        Ok(MetricOracle {
            field,
            params,
            mask,
            scheme,
            weight,
        })
    }

    /// Metric of a mollified field, living on its valid sub-window.
    pub fn from_mollified(m: &MollifiedField, params: LqgParams, scheme: NeighborScheme) -> Result<Self> {
        let mask = VertexSet::window(m.field().grid(), m.valid())?;
        MetricOracle::new(m.field().clone(), params, mask, scheme)
    }

    pub fn with_mask(&self, mask: VertexSet) -> Result<Self> {
        if mask.grid() != self.field.grid() {
            return Err(Error::GridMismatch("mask and field grids differ".into()));
        }
        Ok(MetricOracle {
            mask,
            ..self.clone()
        })
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn params(&self) -> &LqgParams {
        &self.params
    }

    pub fn mask(&self) -> &VertexSet {
        &self.mask
    }

    pub fn scheme(&self) -> NeighborScheme {
        self.scheme
    }

    /// `e^{xi h(v)}`.
    pub fn vertex_weight(&self, v: usize) -> f64 {
        self.weight[v]
    }

    #[inline]
    fn for_each_neighbor(&self, u: usize, mut f: impl FnMut(usize, f64)) {
        let grid = self.field.grid();
        let (i, j) = grid.coords(u);
        let s = grid.spacing;
        for &(di, dj, len) in self.scheme.offsets() {
            let (ii, jj) = (i as isize + di, j as isize + dj);
            if ii < 0 || jj < 0 || ii as usize >= grid.nx || jj as usize >= grid.ny {
                continue;
            }
            let v = grid.index(ii as usize, jj as usize);
            f(v, len * s * 0.5 * (self.weight[u] + self.weight[v]));
        }
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        let grid = self.field.grid();
        let (i, j) = grid.coords(u);
        let (k, l) = grid.coords(v);
        let (di, dj) = (k as isize - i as isize, l as isize - j as isize);
        self.scheme
            .offsets()
            .iter()
            .any(|&(a, b, _)| a == di && b == dj)
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Result<f64> {
        let n = self.grid().len();
        if u >= n || !self.mask.contains(u) {
            return Err(Error::Masked(u));
        }
        if v >= n || !self.mask.contains(v) {
            return Err(Error::Masked(v));
        }
        if !self.are_adjacent(u, v) {
            return Err(Error::NotAdjacent { u, v });
        }
        let (i, j) = self.grid().coords(u);
        let (k, l) = self.grid().coords(v);
        let len = if i != k && j != l {
            std::f64::consts::SQRT_2
        } else {
            1.0
        };
        Ok(len * self.grid().spacing * 0.5 * (self.weight[u] + self.weight[v]))
    }

    /// Recomputes the LFPP length of a vertex chain, checking adjacency and the mask.
    pub fn path_length(&self, vertices: &[usize]) -> Result<f64> {
        if let [only] = vertices {
            if !self.mask.contains(*only) {
                return Err(Error::Masked(*only));
            }
        }
        vertices
            .windows(2)
            .map(|w| self.edge_weight(w[0], w[1]))
            .sum()
    }

    /// Label-setting search from `sources` over `mask ∩ allowed`, stopping at the
    /// first settled vertex of `targets` when given. Ties pop lowest vertex index first.
    pub fn search(
        &self,
        sources: &[usize],
        allowed: Option<&VertexSet>,
        targets: Option<&VertexSet>,
    ) -> (SearchTree, Option<usize>) {
        let n = self.grid().len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![NO_PRED; n];
        let mut heap = BinaryHeap::new();
        let usable = |v: usize| self.mask.contains(v) && allowed.is_none_or(|a| a.contains(v));
        for &s in sources {
            if usable(s) && dist[s] != 0.0 {
                dist[s] = 0.0;
                heap.push(Reverse((0f64.to_bits(), s as u32)));
            }
        }
        let mut hit = None;
        while let Some(Reverse((bits, u))) = heap.pop() {
            let u = u as usize;
            let d = f64::from_bits(bits);
            if d > dist[u] {
                continue;
            }
            if targets.is_some_and(|t| t.contains(u)) {
                hit = Some(u);
                break;
            }
            self.for_each_neighbor(u, |v, w| {
                if !usable(v) {
                    return;
                }
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = u as u32;
                    // non-negative floats order like their bit patterns
                    heap.push(Reverse((nd.to_bits(), v as u32)));
                }
            });
        }
        (SearchTree { dist, pred }, hit)
    }

    fn check_endpoints(&self, set: &VertexSet, what: &'static str) -> Result<()> {
        if set.grid() != self.grid() {
            return Err(Error::GridMismatch(format!("{what} set lives on another grid")));
        }
        if set.is_empty() {
            return Err(Error::EmptySet(what));
        }
        if let Some(v) = set.iter().find(|&v| !self.mask.contains(v)) {
            return Err(Error::Masked(v));
        }
        Ok(())
    }

    fn query(&self, allowed: Option<&VertexSet>, from: &VertexSet, to: &VertexSet) -> DistanceResult {
        let sources = from.to_vec();
        let (tree, hit) = self.search(&sources, allowed, Some(to));
        match hit {
            None => DistanceResult::unreachable(),
            Some(t) => {
                let vertices = tree.path_to(t).expect("settled vertex has a path");
                DistanceResult {
                    value: tree.distance_to(t),
                    geodesic: Some(LatticePath {
                        vertices,
                        weighted_length: tree.distance_to(t),
                    }),
                }
            }
        }
    }

    /// Set-to-set LFPP distance with a geodesic.
    pub fn distance(&self, from: &VertexSet, to: &VertexSet) -> Result<DistanceResult> {
        self.check_endpoints(from, "source")?;
        self.check_endpoints(to, "target")?;
        Ok(self.query(None, from, to))
    }

    pub fn distance_between(&self, u: usize, v: usize) -> Result<DistanceResult> {
        let grid = self.grid();
        self.distance(&VertexSet::from_indices(grid, [u]), &VertexSet::from_indices(grid, [v]))
    }

    /// Internal metric: shortest paths constrained to `sub`.
    pub fn internal_distance(&self, sub: &VertexSet, from: &VertexSet, to: &VertexSet) -> Result<DistanceResult> {
        self.check_endpoints(from, "source")?;
        self.check_endpoints(to, "target")?;
        if sub.grid() != self.grid() {
            return Err(Error::GridMismatch("sub-domain lives on another grid".into()));
        }
        if !from.is_subset(sub) || !to.is_subset(sub) {
            return Err(Error::NotSubset("endpoints must lie in the sub-domain"));
        }
        Ok(self.query(Some(sub), from, to))
    }

    /// One-to-all labels from `from`, optionally confined to `sub`.
    pub fn distances_from(&self, from: &VertexSet, sub: Option<&VertexSet>) -> Result<SearchTree> {
        self.check_endpoints(from, "source")?;
        Ok(self.search(&from.to_vec(), sub, None).0)
    }

    /// Metric of `h + f`.
    pub fn weyl_scale(&self, f: &Field) -> Result<MetricOracle> {
        let field = self.field.add(f)?;
        MetricOracle::new(field, self.params, self.mask.clone(), self.scheme)
    }

    pub fn weyl_shift(&self, c: f64) -> Result<MetricOracle> {
        MetricOracle::new(self.field.add_constant(c), self.params, self.mask.clone(), self.scheme)
    }

    /// Minimum-weight closed path in the annulus separating its two boundaries.
    ///
    /// Cuts the ring along the ray from the center in the `+x` direction and
    /// searches the two-sheeted cover in which crossing the cut flips the sheet:
    /// closed walks ending on the other sheet wind an odd number of times.
    pub fn disconnecting_circuit(&self, a: &Annulus) -> Result<LatticePath> {
        let grid = *self.grid();
        let ring = vertices_in_annulus(&grid, a).intersection(&self.mask)?;
        let members = ring.to_vec();
        if members.is_empty() {
            return Err(Error::AnnulusRingDisconnected);
        }
        let local: std::collections::HashMap<usize, usize> =
            members.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let c = a.center;
        let above = |v: usize| grid.position(v).y >= c.y;
        let crosses = |u: usize, v: usize| {
            if above(u) == above(v) {
                return false;
            }
            let (pu, pv) = (grid.position(u), grid.position(v));
            let x = pu.x + (c.y - pu.y) * (pv.x - pu.x) / (pv.y - pu.y);
            x > c.x
        };

        // local adjacency: (neighbour, weight, flips sheet)
        let mut adj: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); members.len()];
        for (k, &u) in members.iter().enumerate() {
            self.for_each_neighbor(u, |v, w| {
                if let Some(&l) = local.get(&v) {
                    adj[k].push((l, w, crosses(u, v)));
                }
            });
        }

        // connectivity of the ring itself
        let mut seen = vec![false; members.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for &(l, _, _) in &adj[k] {
                if !seen[l] {
                    seen[l] = true;
                    queue.push_back(l);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::AnnulusRingDisconnected);
        }

        // every odd-winding cycle uses a cut edge, hence its lower endpoint
        let mut starts: Vec<usize> = Vec::new();
        for (k, &u) in members.iter().enumerate() {
            if !above(u) && adj[k].iter().any(|e| e.2) {
                starts.push(k);
            }
        }

        let m = members.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut dist = vec![f64::INFINITY; 2 * m];
        let mut pred = vec![NO_PRED; 2 * m];
        for &s in &starts {
            dist.iter_mut().for_each(|d| *d = f64::INFINITY);
            pred.iter_mut().for_each(|p| *p = NO_PRED);
            let bound = best.as_ref().map_or(f64::INFINITY, |b| b.0);
            let goal = 2 * s + 1;
            dist[2 * s] = 0.0;
            let mut heap = BinaryHeap::from([Reverse((0f64.to_bits(), (2 * s) as u32))]);
            let mut reached = false;
            while let Some(Reverse((bits, node))) = heap.pop() {
                let node = node as usize;
                let d = f64::from_bits(bits);
                if d > dist[node] {
                    continue;
                }
                if d >= bound {
                    break;
                }
                if node == goal {
                    reached = true;
                    break;
                }
                let (k, sheet) = (node / 2, node % 2);
                for &(l, w, flip) in &adj[k] {
                    let next = 2 * l + (sheet ^ flip as usize);
                    let nd = d + w;
                    if nd < dist[next] {
                        dist[next] = nd;
                        pred[next] = node as u32;
                        heap.push(Reverse((nd.to_bits(), next as u32)));
                    }
                }
            }
            if reached {
                let mut cycle = vec![members[s]];
                let mut cur = goal;
                while pred[cur] != NO_PRED {
                    cur = pred[cur] as usize;
                    cycle.push(members[cur / 2]);
                }
                cycle.reverse();
                best = Some((dist[goal], cycle));
            }
        }
        let (_, vertices) = best.ok_or(Error::AnnulusRingDisconnected)?;
        let weighted_length = self.path_length(&vertices)?;
        Ok(LatticePath {
            vertices,
            weighted_length,
        })
    }
}

/// Maximal index intervals `(entry, exit)` during which the path is inside the closed annulus.
pub fn geodesic_crossing_times(path: &LatticePath, grid: &GridSpec, a: &Annulus) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, &v) in path.vertices.iter().enumerate() {
        let inside = a.contains_closed(grid.position(v));
        match (inside, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, path.vertices.len() - 1));
    }
    out
}

/// Whether two lattice paths meet: a shared vertex, or two diagonals of the same cell crossing.
pub fn paths_intersect(a: &[usize], b: &[usize], grid: &GridSpec) -> bool {
    let verts: HashSet<usize> = a.iter().copied().collect();
    if b.iter().any(|v| verts.contains(v)) {
        return true;
    }
    // diagonal edges keyed by (lower-left cell corner, slope sign)
    let diag = |u: usize, v: usize| -> Option<(usize, usize, bool)> {
        let (i, j) = grid.coords(u);
        let (k, l) = grid.coords(v);
        if i == k || j == l {
            return None;
        }
        Some((i.min(k), j.min(l), (k > i) == (l > j)))
    };
    let da: HashSet<(usize, usize, bool)> = a.windows(2).filter_map(|w| diag(w[0], w[1])).collect();
    b.windows(2)
        .filter_map(|w| diag(w[0], w[1]))
        .any(|(i, j, s)| da.contains(&(i, j, !s)))
}

/// Distance matrix between labelled vertices as CSV (`row` label column, then one column per target).
pub fn write_distance_matrix_csv<W: Write>(labels: &[String], matrix: &[Vec<f64>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["row".to_string()];
    header.extend(labels.iter().cloned());
    out.write_record(&header).map_err(io)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|d| format!("{d:.12e}")));
        out.write_record(&rec).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
