//! Regularized LQG area measure `ε^{γ²/2} e^{γ h_ε(z)} dz`, its coordinate
//! change, and metric-ball volume growth.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conformal::{pullback_field_partial, target_grid_for, EpsilonPolicy, MapDescriptor};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::gff::{circle_average_field, HeatKernel, MollifiedField};
use crate::lattice::{ComplexPoint, GridSpec, VertexSet};
use crate::metric::MetricOracle;
use crate::params::LqgParams;

/// Regularization used before exponentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMollifier {
    #[default]
    Heat,
    CircleAverage,
}

impl MeasureMollifier {
    pub fn mollify(&self, field: &Field, epsilon: f64) -> Result<MollifiedField> {
        match self {
            MeasureMollifier::Heat => HeatKernel::default().mollify(field, epsilon),
            MeasureMollifier::CircleAverage => circle_average_field(field, epsilon),
        }
    }

    /// Margin the mollifier needs around a vertex.
    pub fn reach(&self, epsilon: f64) -> f64 {
        match self {
            MeasureMollifier::Heat => HeatKernel::default().truncation_radius(epsilon),
            MeasureMollifier::CircleAverage => epsilon,
        }
    }
}

/// Cell masses `ε^{γ²/2} e^{γ h_ε(v)} s²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureField {
    grid: GridSpec,
    cell_mass: Vec<f64>,
    epsilon: f64,
    gamma: f64,
}

/// Builds the measure from an already mollified field.
pub fn build_measure(h_mollified: &Field, epsilon: f64, gamma: f64) -> Result<MeasureField> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::InvalidParams(format!("gamma must lie in (0, 2), got {gamma}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    let grid = *h_mollified.grid();
    let pre = epsilon.powf(gamma * gamma / 2.0) * grid.spacing * grid.spacing;
    let cell_mass: Vec<f64> = h_mollified.values().iter().map(|&h| pre * (gamma * h).exp()).collect();
    if cell_mass.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("cell masses"));
    }
    Ok(MeasureField {
        grid,
        cell_mass,
        epsilon,
        gamma,
    })
}

impl MeasureField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cell_mass(&self) -> &[f64] {
        &self.cell_mass
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn total(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    pub fn measure_of(&self, region: &VertexSet) -> f64 {
        debug_assert!(region.grid().same_as(&self.grid));
        region.iter().map(|v| self.cell_mass[v]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureOptions {
    pub policy: EpsilonPolicy,
    pub mollifier: MeasureMollifier,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            policy: EpsilonPolicy::LocalScale,
            mollifier: MeasureMollifier::Heat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureRatio {
    pub ratio: f64,
    pub source_mass: f64,
    pub target_mass: f64,
    pub source_cells: usize,
    pub target_cells: usize,
    pub epsilon_target: f64,
}

/// `μ_{h^φ}(φ(A)) / μ_h(A)`. A target vertex belongs to `φ(A)` when the source cell
/// containing its preimage belongs to `A`. The policy anchor is the centroid of `A`.
pub fn measure_coordinate_change_ratio(
    h: &Field,
    map: &MapDescriptor,
    region: &VertexSet,
    epsilon: f64,
    params: &LqgParams,
    options: &MeasureOptions,
) -> Result<MeasureRatio> {
    let grid = *h.grid();
    if region.is_empty() {
        return Err(Error::EmptySet("region"));
    }
    if !region.grid().same_as(&grid) {
        return Err(Error::GridMismatch("region lives on another grid".into()));
    }
    let gamma = params.gamma();
    let src = options.mollifier.mollify(h, epsilon)?;
    let valid = VertexSet::window(&grid, src.valid())?;
    if let Some(v) = region.iter().find(|&v| !valid.contains(v)) {
        let p = grid.position(v);
        return Err(Error::OutOfWindow { x: p.x, y: p.y });
    }
    let source = build_measure(src.field(), epsilon, gamma)?;
    let source_mass = source.measure_of(region);

    let n = region.count() as f64;
    let (sx, sy) = region.iter().map(|v| grid.position(v)).fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let anchor = ComplexPoint::new(sx / n, sy / n);
    let eps_t = options.policy.target_epsilon(epsilon, map, anchor)?;

    // image bounding box from the region's cells, padded for the mollifier
    let half = grid.spacing / 2.0;
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for v in region.iter() {
        let p = grid.position(v);
        for (dx, dy) in [(-half, -half), (half, -half), (-half, half), (half, half), (0.0, 0.0)] {
            let w = map.evaluate(p.translate(dx, dy))?;
            lo = (lo.0.min(w.x), lo.1.min(w.y));
            hi = (hi.0.max(w.x), hi.1.max(w.y));
        }
    }
    let pad = options.mollifier.reach(eps_t) + 2.0 * grid.spacing;
    let box_center = ComplexPoint::new((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let box_half = ((hi.0 - lo.0).max(hi.1 - lo.1)) / 2.0;
    let tgrid = target_grid_for(&MapDescriptor::identity(), box_center, box_half * std::f64::consts::SQRT_2, grid.spacing, pad)?;

    let pullback = pullback_field_partial(h, map, &tgrid, params)?;
    let tgt = options.mollifier.mollify(pullback.values(), eps_t)?;
    let target = build_measure(tgt.field(), eps_t, gamma)?;
    let tvalid = VertexSet::window(&tgrid, tgt.valid())?;
    let reach = options.mollifier.reach(eps_t);

    let mut image = VertexSet::empty(&tgrid);
    for w_idx in 0..tgrid.len() {
        let w = tgrid.position(w_idx);
        let Ok(z) = map.inverse(w) else { continue };
        let (fx, fy) = grid.to_lattice(z);
        let (i, j) = ((fx + 0.5).floor(), (fy + 0.5).floor());
        if i < 0.0 || j < 0.0 || i >= grid.nx as f64 || j >= grid.ny as f64 {
            continue;
        }
        if region.contains(grid.index(i as usize, j as usize)) {
            if !tvalid.contains(w_idx) || !stencil_defined(pullback.defined(), w_idx, reach) {
                return Err(Error::PreimageEscapes { x: w.x, y: w.y });
            }
            image.insert(w_idx);
        }
    }
    let target_mass = target.measure_of(&image);
    Ok(MeasureRatio {
        ratio: target_mass / source_mass,
        source_mass,
        target_mass,
        source_cells: region.count(),
        target_cells: image.count(),
        epsilon_target: eps_t,
    })
}

fn stencil_defined(defined: &VertexSet, v: usize, reach: f64) -> bool {
    if defined.count() == defined.grid().len() {
        return true;
    }
    let grid = defined.grid();
    let c = grid.position(v);
    match grid.index_box(c, reach) {
        Some(((i0, i1), (j0, j1))) => (j0..=j1).all(|j| {
            (i0..=i1).all(|i| {
                let idx = grid.index(i, j);
                grid.position(idx).dist(c) > reach || defined.contains(idx)
            })
        }),
        None => false,
    }
}

/// `(s, μ({v : D(center, v) <= s}))` for each metric radius `s`.
///
/// Fails with [`Error::BallEscapesWindow`] when a ball reaches the edge of the
/// oracle's usable region.
pub fn ball_volume_profile(
    oracle: &MetricOracle,
    measure: &MeasureField,
    center: ComplexPoint,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let grid = *oracle.grid();
    if !grid.same_as(measure.grid()) {
        return Err(Error::GridMismatch("metric and measure grids differ".into()));
    }
    let (c, _) = grid
        .nearest_vertex(center)
        .ok_or(Error::OutOfWindow { x: center.x, y: center.y })?;
    if !oracle.mask().contains(c) {
        return Err(Error::Masked(c));
    }
    let tree = oracle.distances_from(&VertexSet::from_indices(&grid, [c]), None)?;
    let reach = escape_distance(oracle, tree.distances());
    let mut by_dist: Vec<(f64, usize)> = oracle
        .mask()
        .iter()
        .filter(|&v| tree.distance_to(v).is_finite())
        .map(|v| (tree.distance_to(v), v))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(radii.len());
    for &s in radii {
        if s >= reach {
            return Err(Error::BallEscapesWindow { radius: s });
        }
        let k = by_dist.partition_point(|&(d, _)| d <= s);
        let mass: f64 = by_dist[..k].iter().map(|&(_, v)| measure.cell_mass()[v]).sum();
        out.push((s, mass));
    }
    Ok(out)
}

/// Metric distance from the vertex nearest `center` to the edge of the oracle's usable region;
/// balls of smaller radius are valid inputs to [`ball_volume_profile`].
pub fn ball_escape_distance(oracle: &MetricOracle, center: ComplexPoint) -> Result<f64> {
    let grid = *oracle.grid();
    let (c, _) = grid
        .nearest_vertex(center)
        .ok_or(Error::OutOfWindow { x: center.x, y: center.y })?;
    if !oracle.mask().contains(c) {
        return Err(Error::Masked(c));
    }
    let tree = oracle.distances_from(&VertexSet::from_indices(&grid, [c]), None)?;
    Ok(escape_distance(oracle, tree.distances()))
}

/// Distance from the source to the nearest usable vertex touching unusable ground.
fn escape_distance(oracle: &MetricOracle, dist: &[f64]) -> f64 {
    let grid = oracle.grid();
    let mask = oracle.mask();
    let mut best = f64::INFINITY;
    for v in mask.iter() {
        let (i, j) = grid.coords(v);
        let edge = i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.ny;
        let touches = edge
            || [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|&(di, dj)| {
                let (ii, jj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                !mask.contains(grid.index(ii, jj))
            });
        if touches {
            best = best.min(dist[v]);
        }
    }
    best
}

/// Least-squares slope of `log mass` against `log s`.
pub fn log_log_slope(profile: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|(s, m)| *s > 0.0 && *m > 0.0)
        .map(|(s, m)| (s.ln(), m.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Writes `radius,mass` rows.
pub fn write_profile_csv<W: Write>(profile: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(["radius", "mass"]).map_err(io)?;
    for (s, m) in profile {
        out.write_record(&[format!("{s:.12e}"), format!("{m:.12e}")]).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
