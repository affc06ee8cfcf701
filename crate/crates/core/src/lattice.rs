//! Grid geometry shared by every other module.
//!
//! Everything is expressed in continuum plane coordinates (`origin + index * spacing`)
//! so that an experiment can be rerun on a finer mesh without moving its points.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when comparing lattice coordinates against continuum bounds.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ComplexPoint {
    pub x: f64,
    pub y: f64,
}

impl ComplexPoint {
    pub const ORIGIN: ComplexPoint = ComplexPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        ComplexPoint { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: ComplexPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        ComplexPoint::new(self.x + dx, self.y + dy)
    }
}

impl From<Complex64> for ComplexPoint {
    fn from(z: Complex64) -> Self {
        ComplexPoint::new(z.re, z.im)
    }
}

impl From<ComplexPoint> for Complex64 {
    fn from(p: ComplexPoint) -> Self {
        Complex64::new(p.x, p.y)
    }
}

impl From<[f64; 2]> for ComplexPoint {
    fn from(p: [f64; 2]) -> Self {
        ComplexPoint::new(p[0], p[1])
    }
}

impl From<ComplexPoint> for [f64; 2] {
    fn from(p: ComplexPoint) -> Self {
        [p.x, p.y]
    }
}

/// A square lattice window: `nx * ny` vertices at `origin + (i, j) * spacing`.
///
/// Vertices are indexed row-major, `index = j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: ComplexPoint,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: ComplexPoint, spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        let grid = GridSpec {
            origin,
            spacing,
            nx,
            ny,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of `n x n` vertices centered on `center`.
    pub fn centered(center: ComplexPoint, spacing: f64, n: usize) -> Result<Self> {
        let half = (n - 1) as f64 * spacing / 2.0;
        GridSpec::new(center.translate(-half, -half), spacing, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 vertices per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
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
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn position_ij(&self, i: usize, j: usize) -> ComplexPoint {
        ComplexPoint::new(
            self.origin.x + i as f64 * self.spacing,
            self.origin.y + j as f64 * self.spacing,
        )
    }

    #[inline]
    pub fn position(&self, idx: usize) -> ComplexPoint {
        let (i, j) = self.coords(idx);
        self.position_ij(i, j)
    }

    pub fn x_max(&self) -> f64 {
        self.origin.x + (self.nx - 1) as f64 * self.spacing
    }

    pub fn y_max(&self) -> f64 {
        self.origin.y + (self.ny - 1) as f64 * self.spacing
    }

    pub fn center(&self) -> ComplexPoint {
        ComplexPoint::new(
            (self.origin.x + self.x_max()) / 2.0,
            (self.origin.y + self.y_max()) / 2.0,
        )
    }

    /// Fractional lattice coordinates of a plane point.
    #[inline]
    pub fn to_lattice(&self, p: ComplexPoint) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.spacing,
            (p.y - self.origin.y) / self.spacing,
        )
    }

    /// Whether `p` lies in the closed window rectangle.
    pub fn contains_point(&self, p: ComplexPoint) -> bool {
        let tol = GEOM_EPS * self.spacing;
        p.x >= self.origin.x - tol
            && p.x <= self.x_max() + tol
            && p.y >= self.origin.y - tol
            && p.y <= self.y_max() + tol
    }

    /// Whether the closed disk `B_radius(center)` fits in the window.
    pub fn contains_disk(&self, center: ComplexPoint, radius: f64) -> bool {
        let tol = GEOM_EPS * self.spacing;
        center.x - radius >= self.origin.x - tol
            && center.x + radius <= self.x_max() + tol
            && center.y - radius >= self.origin.y - tol
            && center.y + radius <= self.y_max() + tol
    }

    /// Vertex nearest to `p`, with the snap distance. `None` outside the window.
    pub fn nearest_vertex(&self, p: ComplexPoint) -> Option<(usize, f64)> {
        if !self.contains_point(p) {
            return None;
        }
        let (fx, fy) = self.to_lattice(p);
        let i = (fx.round().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.round().max(0.0) as usize).min(self.ny - 1);
        let idx = self.index(i, j);
        Some((idx, self.position(idx).dist(p)))
    }

    /// Index range of vertices whose coordinate lies in `[lo, hi]` along one axis.
    fn axis_range(origin: f64, spacing: f64, n: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let a = ((lo - origin) / spacing - GEOM_EPS).ceil();
        let b = ((hi - origin) / spacing + GEOM_EPS).floor();
        let a = a.max(0.0);
        let b = b.min((n - 1) as f64);
        if a > b {
            None
        } else {
            Some((a as usize, b as usize))
        }
    }

    /// Inclusive index bounding box of the vertices inside the square `center ± half`.
    pub fn index_box(&self, center: ComplexPoint, half: f64) -> Option<((usize, usize), (usize, usize))> {
        let xr = Self::axis_range(
            self.origin.x,
            self.spacing,
            self.nx,
            center.x - half,
            center.x + half,
        )?;
        let yr = Self::axis_range(
            self.origin.y,
            self.spacing,
            self.ny,
            center.y - half,
            center.y + half,
        )?;
        Some((xr, yr))
    }

    /// Sub-grid of vertices `i0..=i1`, `j0..=j1` sharing this grid's lattice.
    pub fn subgrid(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Result<GridSpec> {
        if i1 >= self.nx || j1 >= self.ny || i0 >= i1 || j0 >= j1 {
            return Err(Error::InvalidGrid(format!(
                "sub-grid [{i0},{i1}]x[{j0},{j1}] not inside {}x{}",
                self.nx, self.ny
            )));
        }
        GridSpec::new(
            self.position_ij(i0, j0),
            self.spacing,
            i1 - i0 + 1,
            j1 - j0 + 1,
        )
    }

    /// Integer offset of `sub`'s origin inside this grid, if `sub` is aligned with this lattice.
    pub fn offset_of(&self, sub: &GridSpec) -> Option<(usize, usize)> {
        if (sub.spacing - self.spacing).abs() > GEOM_EPS * self.spacing {
            return None;
        }
        let (fx, fy) = self.to_lattice(sub.origin);
        let (ri, rj) = (fx.round(), fy.round());
        if (fx - ri).abs() > 1e-6 || (fy - rj).abs() > 1e-6 || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (i0, j0) = (ri as usize, rj as usize);
        if i0 + sub.nx > self.nx || j0 + sub.ny > self.ny {
            return None;
        }
        Some((i0, j0))
    }

    /// Whether two grids describe the same lattice window.
    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.offset_of(other) == Some((0, 0))
    }
}

/// Open annulus `{ inner_radius < |w - center| < outer_radius }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: ComplexPoint,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl Annulus {
    pub fn new(center: ComplexPoint, inner_radius: f64, outer_radius: f64) -> Result<Self> {
        if !(inner_radius > 0.0 && outer_radius > inner_radius && outer_radius.is_finite()) {
            return Err(Error::InvalidAnnulus {
                inner: inner_radius,
                outer: outer_radius,
            });
        }
        Ok(Annulus {
            center,
            inner_radius,
            outer_radius,
        })
    }

    pub fn contains_open(&self, p: ComplexPoint) -> bool {
        let d = self.center.dist(p);
        d > self.inner_radius && d < self.outer_radius
    }

    pub fn contains_closed(&self, p: ComplexPoint) -> bool {
        let d = self.center.dist(p);
        d >= self.inner_radius && d <= self.outer_radius
    }
}

/// A subset of the vertices of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    grid: GridSpec,
    membership: Vec<bool>,
}

impl VertexSet {
    pub fn empty(grid: &GridSpec) -> Self {
        VertexSet {
            grid: *grid,
            membership: vec![false; grid.len()],
        }
    }

    pub fn full(grid: &GridSpec) -> Self {
        VertexSet {
            grid: *grid,
            membership: vec![true; grid.len()],
        }
    }

    pub fn from_indices(grid: &GridSpec, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = VertexSet::empty(grid);
        for idx in indices {
            set.insert(idx);
        }
        set
    }

    pub fn from_predicate(grid: &GridSpec, mut pred: impl FnMut(ComplexPoint) -> bool) -> Self {
        let membership = (0..grid.len()).map(|idx| pred(grid.position(idx))).collect();
        VertexSet {
            grid: *grid,
            membership,
        }
    }

    /// Vertices of `grid` lying in the (aligned) sub-window `window`.
    pub fn window(grid: &GridSpec, window: &GridSpec) -> Result<Self> {
        let (i0, j0) = grid
            .offset_of(window)
            .ok_or_else(|| Error::GridMismatch("window is not aligned with the grid".into()))?;
        let mut set = VertexSet::empty(grid);
        for j in j0..j0 + window.ny {
            for i in i0..i0 + window.nx {
                set.membership[grid.index(i, j)] = true;
            }
        }
        Ok(set)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.membership[idx]
    }

    pub fn insert(&mut self, idx: usize) {
        self.membership[idx] = true;
    }

    pub fn remove(&mut self, idx: usize) {
        self.membership[idx] = false;
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.membership.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.membership
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    fn check_grid(&self, other: &VertexSet) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("vertex sets live on different grids".into()));
        }
        Ok(())
    }

    pub fn intersection(&self, other: &VertexSet) -> Result<VertexSet> {
        self.check_grid(other)?;
        let membership = self
            .membership
            .iter()
            .zip(&other.membership)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(VertexSet {
            grid: self.grid,
            membership,
        })
    }

    pub fn union(&self, other: &VertexSet) -> Result<VertexSet> {
        self.check_grid(other)?;
        let membership = self
            .membership
            .iter()
            .zip(&other.membership)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(VertexSet {
            grid: self.grid,
            membership,
        })
    }

    pub fn is_subset(&self, other: &VertexSet) -> bool {
        self.grid == other.grid
            && self
                .membership
                .iter()
                .zip(&other.membership)
                .all(|(&a, &b)| !a || b)
    }

    /// Positions of the member vertices relative to `center`.
    pub fn offsets_from(&self, center: ComplexPoint) -> Vec<(f64, f64)> {
        self.iter()
            .map(|idx| {
                let p = self.grid.position(idx);
                (p.x - center.x, p.y - center.y)
            })
            .collect()
    }
}

/// Discrete circle: vertices within `spacing / sqrt(2)` of `∂B_radius(center)`.
///
/// The band width makes the ring connected in the 8-neighbour graph.
pub fn vertices_on_circle(grid: &GridSpec, center: ComplexPoint, radius: f64) -> Result<VertexSet> {
    if radius < 2.0 * grid.spacing * (1.0 - GEOM_EPS) {
        return Err(Error::RadiusTooSmall {
            radius,
            spacing: grid.spacing,
        });
    }
    if !grid.contains_disk(center, radius) {
        return Err(Error::CircleOutsideWindow {
            x: center.x,
            y: center.y,
            radius,
        });
    }
    let band = grid.spacing / std::f64::consts::SQRT_2;
    let mut set = VertexSet::empty(grid);
    if let Some(((i0, i1), (j0, j1))) = grid.index_box(center, radius + band) {
        for j in j0..=j1 {
            for i in i0..=i1 {
                let d = grid.position_ij(i, j).dist(center);
                if (d - radius).abs() <= band {
                    set.insert(grid.index(i, j));
                }
            }
        }
    }
    debug_assert!(!set.is_empty());
    Ok(set)
}

/// Vertices strictly inside the open annulus. May be empty.
pub fn vertices_in_annulus(grid: &GridSpec, a: &Annulus) -> VertexSet {
    let mut set = VertexSet::empty(grid);
    if let Some(((i0, i1), (j0, j1))) = grid.index_box(a.center, a.outer_radius) {
        for j in j0..=j1 {
            for i in i0..=i1 {
                if a.contains_open(grid.position_ij(i, j)) {
                    set.insert(grid.index(i, j));
                }
            }
        }
    }
    set
}

/// Vertices of the closed disk `|w - center| <= radius`.
pub fn vertices_in_disk(grid: &GridSpec, center: ComplexPoint, radius: f64) -> VertexSet {
    let mut set = VertexSet::empty(grid);
    let tol = GEOM_EPS * grid.spacing;
    if let Some(((i0, i1), (j0, j1))) = grid.index_box(center, radius) {
        for j in j0..=j1 {
            for i in i0..=i1 {
                if grid.position_ij(i, j).dist(center) <= radius + tol {
                    set.insert(grid.index(i, j));
                }
            }
        }
    }
    set
}

/// Central sub-window of vertices at distance at least `margin` from the window boundary.
pub fn shrink_window(grid: &GridSpec, margin: f64) -> Result<GridSpec> {
    if !(margin >= 0.0) {
        return Err(Error::EmptyWindow { margin });
    }
    let k = (margin / grid.spacing - GEOM_EPS).ceil().max(0.0) as usize;
    if 2 * k + 2 > grid.nx || 2 * k + 2 > grid.ny {
        return Err(Error::EmptyWindow { margin });
    }
    if k == 0 {
        return Ok(*grid);
    }
    grid.subgrid(k, grid.nx - 1 - k, k, grid.ny - 1 - k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec::new(ComplexPoint::ORIGIN, 1.0, n, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(ComplexPoint::ORIGIN, 0.0, 4, 4).is_err());
        assert!(GridSpec::new(ComplexPoint::ORIGIN, 1.0, 1, 4).is_err());
        let g = unit_grid(5);
        assert_eq!(g.index(3, 2), 13);
        assert_eq!(g.coords(13), (3, 2));
        assert_eq!(g.position(13), ComplexPoint::new(3.0, 2.0));
    }

    #[test]
    fn circle_on_5x5_matches_enumeration() {
        let g = unit_grid(5);
        let c = ComplexPoint::new(2.0, 2.0);
        let set = vertices_on_circle(&g, c, 2.0).unwrap();
        let band = 1.0 / 2f64.sqrt();
        let expected: Vec<usize> = (0..g.len())
            .filter(|&v| (g.position(v).dist(c) - 2.0).abs() <= band)
            .collect();
        assert_eq!(set.to_vec(), expected);
        // distances sqrt(2), 2 and sqrt(5) fall inside [2 - 1/sqrt2, 2 + 1/sqrt2]
        assert_eq!(expected.len(), 16);
    }

    #[test]
    fn circle_errors() {
        let g = unit_grid(20);
        assert!(matches!(
            vertices_on_circle(&g, ComplexPoint::new(10.0, 10.0), 1.5),
            Err(Error::RadiusTooSmall { .. })
        ));
        assert!(matches!(
            vertices_on_circle(&g, ComplexPoint::new(3.0, 10.0), 5.0),
            Err(Error::CircleOutsideWindow { .. })
        ));
    }

    #[test]
    fn circle_has_lattice_rotation_symmetry() {
        let g = unit_grid(41);
        let c = ComplexPoint::new(20.0, 20.0);
        let set = vertices_on_circle(&g, c, 13.0).unwrap();
        for idx in set.iter() {
            let (i, j) = g.coords(idx);
            let (di, dj) = (i as i64 - 20, j as i64 - 20);
            let rotated = g.index((20 - dj) as usize, (20 + di) as usize);
            assert!(set.contains(rotated));
        }
    }

    #[test]
    fn annulus_small_case() {
        let g = unit_grid(5);
        let a = Annulus::new(ComplexPoint::new(2.0, 2.0), 0.5, 2.0).unwrap();
        let set = vertices_in_annulus(&g, &a);
        let c = a.center;
        for v in 0..g.len() {
            let d = g.position(v).dist(c);
            let expect = (d - 1.0).abs() < 1e-12 || (d - 2f64.sqrt()).abs() < 1e-12;
            assert_eq!(set.contains(v), expect, "vertex {v} at distance {d}");
        }
        assert_eq!(set.count(), 8);
    }

    #[test]
    fn annulus_invalid_and_disjoint() {
        assert!(Annulus::new(ComplexPoint::ORIGIN, 2.0, 2.0).is_err());
        assert!(Annulus::new(ComplexPoint::ORIGIN, 3.0, 2.0).is_err());
        let g = unit_grid(5);
        let far = Annulus::new(ComplexPoint::new(100.0, 100.0), 1.0, 2.0).unwrap();
        assert!(vertices_in_annulus(&g, &far).is_empty());
    }

    #[test]
    fn shrink_cases() {
        let g = unit_grid(10);
        assert_eq!(shrink_window(&g, 0.0).unwrap(), g);
        let s = shrink_window(&g, 2.0).unwrap();
        assert_eq!((s.nx, s.ny), (6, 6));
        assert_eq!(s.origin, ComplexPoint::new(2.0, 2.0));
        assert!(matches!(shrink_window(&g, 5.0), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn window_set_and_offsets() {
        let g = unit_grid(10);
        let s = shrink_window(&g, 3.0).unwrap();
        assert_eq!(g.offset_of(&s), Some((3, 3)));
        let set = VertexSet::window(&g, &s).unwrap();
        assert_eq!(set.count(), 16);
        assert!(g.nearest_vertex(ComplexPoint::new(20.0, 0.0)).is_none());
        let (idx, snap) = g.nearest_vertex(ComplexPoint::new(2.4, 3.6)).unwrap();
        assert_eq!(g.coords(idx), (2, 4));
        assert!((snap - (0.16f64 + 0.16).sqrt()).abs() < 1e-12);
    }
}
