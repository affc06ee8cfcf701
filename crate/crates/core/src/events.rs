//! Annulus events as measurable predicates on a sampled field: conditions 1-3 of
//! `E_r(z)`, the bi-Lipschitz hypothesis estimate and the narrow-annulus length event.
//!
//! Universally quantified conditions are checked over seeded vertex pairs; a larger
//! `pair_budget` extends the pair list of a smaller one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::CoordinateChange;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::gff::circle_average;
use crate::lattice::{vertices_in_annulus, vertices_on_circle, Annulus, ComplexPoint, GridSpec, VertexSet};
use crate::metric::{LatticePath, MetricOracle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusEventParams {
    pub alpha: f64,
    pub big_a: f64,
    pub delta: f64,
    pub pair_budget: usize,
    #[serde(default)]
    pub pair_seed: u64,
    #[serde(default)]
    pub crossing: CrossingSets,
}

impl Default for AnnulusEventParams {
    fn default() -> Self {
        AnnulusEventParams {
            alpha: 0.75,
            big_a: 40.0,
            delta: 0.5,
            pair_budget: 16,
            pair_seed: 0,
            crossing: CrossingSets::default(),
        }
    }
}

impl AnnulusEventParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(Error::config("alpha", format!("must lie in (1/2, 1), got {}", self.alpha)));
        }
        if !(self.big_a > 1.0) {
            return Err(Error::config("big_a", format!("must exceed 1, got {}", self.big_a)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if self.pair_budget == 0 {
            return Err(Error::config("pair_budget", "must be at least 1"));
        }
        Ok(())
    }
}

/// Which vertex sets stand for `∂B_{αr}(z)` and `∂B_r(z)` in the crossing distance of condition 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingSets {
    /// Closed inner disk to the complement of the open outer disk.
    #[default]
    DiskToComplement,
    /// The two discrete circles (band of half-width `spacing / sqrt(2)`).
    DiscreteCircles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A pair violating the condition, with the two compared quantities.
    Pair { u: usize, v: usize, lhs: f64, rhs: f64 },
    Circuit { vertices: Vec<usize>, length: f64, crossing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionOutcome {
    pub holds: bool,
    /// Pairs drawn.
    pub sampled: usize,
    /// Pairs for which the hypothesis of the condition applied.
    pub considered: usize,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventReport {
    pub condition1: ConditionOutcome,
    pub condition2: ConditionOutcome,
    pub condition3: ConditionOutcome,
}

impl EventReport {
    pub fn holds(&self) -> bool {
        self.condition1.holds && self.condition2.holds && self.condition3.holds
    }
}

/// Seeded pairs `(a[i], b[j])`; prefixes are stable under a larger budget.
pub fn sample_vertex_pairs(a: &[usize], b: &[usize], budget: usize, seed: u64) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget)
        .map(|_| (a[rng.random_range(0..a.len())], b[rng.random_range(0..b.len())]))
        .collect()
}

fn circle_in(grid: &GridSpec, mask: &VertexSet, z: ComplexPoint, rho: f64) -> Result<VertexSet> {
    vertices_on_circle(grid, z, rho)?.intersection(mask)
}

/// Vertices with `lo <= |v - z| <= hi`.
fn closed_annulus(grid: &GridSpec, z: ComplexPoint, lo: f64, hi: f64) -> VertexSet {
    let mut set = VertexSet::empty(grid);
    if let Some(((i0, i1), (j0, j1))) = grid.index_box(z, hi) {
        for j in j0..=j1 {
            for i in i0..=i1 {
                let d = grid.position_ij(i, j).dist(z);
                if d >= lo && d <= hi {
                    set.insert(grid.index(i, j));
                }
            }
        }
    }
    set
}

fn require_region(cc: &CoordinateChange, r: f64, factor: f64) -> Result<()> {
    if cc.outer_radius() < factor * r {
        return Err(Error::config(
            "reach",
            format!("comparison region of radius {} does not contain B_{factor}r", cc.outer_radius()),
        ));
    }
    Ok(())
}

/// Condition 1: for sampled `u ∈ ∂B_{αr}(z)`, `v ∈ ∂B_r(z)` whose geodesic stays in the
/// closed annulus, `D_h^φ(u, v) <= (1 + δ) D_h(u, v)`.
pub fn check_condition1(cc: &CoordinateChange, ep: &AnnulusEventParams) -> Result<ConditionOutcome> {
    ep.validate()?;
    let (z, r) = (cc.center(), cc.radius());
    require_region(cc, r, 1.0)?;
    let oracle = cc.source();
    let grid = *oracle.grid();
    let band = grid.spacing / std::f64::consts::SQRT_2;
    let inner = circle_in(&grid, oracle.mask(), z, ep.alpha * r)?.to_vec();
    let outer = circle_in(&grid, oracle.mask(), z, r)?.to_vec();
    let annulus = closed_annulus(&grid, z, ep.alpha * r - band, r + band);
    let pairs = sample_vertex_pairs(&inner, &outer, ep.pair_budget, ep.pair_seed);
    let mut considered = 0;
    for &(u, v) in &pairs {
        let res = oracle.distance_between(u, v)?;
        let Some(path) = res.geodesic else { continue };
        if !path.vertices.iter().all(|&x| annulus.contains(x)) {
            continue;
        }
        considered += 1;
        let dphi = oracle_target_distance(cc, grid.position(u), grid.position(v))?;
        if dphi > (1.0 + ep.delta) * res.value {
            return Ok(ConditionOutcome {
                holds: false,
                sampled: pairs.len(),
                considered,
                witness: Some(Witness::Pair { u, v, lhs: dphi, rhs: (1.0 + ep.delta) * res.value }),
            });
        }
    }
    Ok(ConditionOutcome {
        holds: true,
        sampled: pairs.len(),
        considered,
        witness: None,
    })
}

fn oracle_target_distance(cc: &CoordinateChange, u: ComplexPoint, v: ComplexPoint) -> Result<f64> {
    Ok(cc.target().distance(u, v)?.value)
}

/// Condition 2: for sampled pairs far apart relative to `∂A_{r/2,2r}(z)` under `D_h` or
/// `D_h^φ`, the internal distance in the closed narrow annulus strictly exceeds the
/// internal distance in `A_{r/2,2r}(z)`.
pub fn check_condition2(cc: &CoordinateChange, ep: &AnnulusEventParams) -> Result<ConditionOutcome> {
    ep.validate()?;
    let (z, r) = (cc.center(), cc.radius());
    require_region(cc, r, 2.0)?;
    let oracle = cc.source();
    let grid = *oracle.grid();
    let band = grid.spacing / std::f64::consts::SQRT_2;
    let mask = oracle.mask();
    let inner = circle_in(&grid, mask, z, ep.alpha * r)?.to_vec();
    let outer = circle_in(&grid, mask, z, r)?.to_vec();
    let boundary = circle_in(&grid, mask, z, r / 2.0)?.union(&circle_in(&grid, mask, z, 2.0 * r)?)?;
    let narrow = closed_annulus(&grid, z, ep.alpha * r - band, r + band).intersection(mask)?;
    let wide = vertices_in_annulus(&grid, &Annulus::new(z, r / 2.0, 2.0 * r)?).intersection(mask)?;
    let target_boundary = cc.target_circle(r / 2.0).union(&cc.target_circle(2.0 * r))?;
    let tgrid = *cc.target().oracle().grid();

    let pairs = sample_vertex_pairs(&inner, &outer, ep.pair_budget, ep.pair_seed);
    let mut considered = 0;
    for &(u, v) in &pairs {
        let one = |x: usize| VertexSet::from_indices(&grid, [x]);
        let d_uv = oracle.distance(&one(u), &one(v))?.value;
        let d_ub = oracle.distance(&one(u), &boundary)?.value;
        let mut triggered = d_uv > d_ub;
        if !triggered {
            let (pu, pv) = (grid.position(u), grid.position(v));
            let tu = VertexSet::from_indices(&tgrid, [cc.target_vertex(pu)?]);
            let tv = VertexSet::from_indices(&tgrid, [cc.target_vertex(pv)?]);
            let t = cc.target().oracle();
            triggered = t.distance(&tu, &tv)?.value > t.distance(&tu, &target_boundary)?.value;
        }
        if !triggered {
            continue;
        }
        considered += 1;
        let lhs = oracle.internal_distance(&narrow, &one(u), &one(v))?.value;
        let rhs = oracle.internal_distance(&wide, &one(u), &one(v))?.value;
        if lhs <= rhs {
            return Ok(ConditionOutcome {
                holds: false,
                sampled: pairs.len(),
                considered,
                witness: Some(Witness::Pair { u, v, lhs, rhs }),
            });
        }
    }
    Ok(ConditionOutcome {
        holds: true,
        sampled: pairs.len(),
        considered,
        witness: None,
    })
}

/// `D_h(∂B_{αr}(z), ∂B_r(z))` on the oracle's usable vertices.
pub fn crossing_distance(oracle: &MetricOracle, z: ComplexPoint, inner: f64, outer: f64, sets: CrossingSets) -> Result<f64> {
    let grid = *oracle.grid();
    let mask = oracle.mask();
    let (from, to) = match sets {
        CrossingSets::DiscreteCircles => (circle_in(&grid, mask, z, inner)?, circle_in(&grid, mask, z, outer)?),
        CrossingSets::DiskToComplement => {
            if !grid.contains_disk(z, outer + grid.spacing) {
                return Err(Error::CircleOutsideWindow { x: z.x, y: z.y, radius: outer });
            }
            let tol = 1e-9 * grid.spacing;
            let disk = closed_annulus(&grid, z, 0.0, inner + tol).intersection(mask)?;
            let shell = closed_annulus(&grid, z, outer - tol, outer + 2.0 * grid.spacing).intersection(mask)?;
            (disk, shell)
        }
    };
    Ok(oracle.distance(&from, &to)?.value)
}

/// Condition 3: the minimal disconnecting circuit of `A_{αr,r}(z)` is at most
/// `A · D_h(∂B_{αr}(z), ∂B_r(z))`.
pub fn check_condition3(
    oracle: &MetricOracle,
    z: ComplexPoint,
    r: f64,
    ep: &AnnulusEventParams,
) -> Result<(ConditionOutcome, LatticePath)> {
    ep.validate()?;
    let circuit = oracle.disconnecting_circuit(&Annulus::new(z, ep.alpha * r, r)?)?;
    let crossing = crossing_distance(oracle, z, ep.alpha * r, r, ep.crossing)?;
    let holds = circuit.weighted_length <= ep.big_a * crossing;
    let outcome = ConditionOutcome {
        holds,
        sampled: 0,
        considered: 0,
        witness: Some(Witness::Circuit {
            vertices: circuit.vertices.clone(),
            length: circuit.weighted_length,
            crossing,
        }),
    };
    Ok((outcome, circuit))
}

/// All three conditions of `E_r(z)` for the comparison built around `B_r(z)`.
pub fn evaluate_event(cc: &CoordinateChange, ep: &AnnulusEventParams) -> Result<EventReport> {
    Ok(EventReport {
        condition1: check_condition1(cc, ep)?,
        condition2: check_condition2(cc, ep)?,
        condition3: check_condition3(cc.source(), cc.center(), cc.radius(), ep)?.0,
    })
}

/// `sup_{u,v} D_h^φ(u, v; A_{r/2,2r}(z)) / D_h(∂B_{r/2}(z), ∂B_r(z))` over sampled pairs of `∂B_r(z)`.
pub fn bilip_ratio(cc: &CoordinateChange, pair_budget: usize, pair_seed: u64) -> Result<f64> {
    let (z, r) = (cc.center(), cc.radius());
    require_region(cc, r, 2.0)?;
    let oracle = cc.source();
    let grid = *oracle.grid();
    let circle = circle_in(&grid, oracle.mask(), z, r)?.to_vec();
    let denom = crossing_distance(oracle, z, r / 2.0, r, CrossingSets::DiscreteCircles)?;
    let region = cc.target_region(|p| {
        let d = p.dist(z);
        d > r / 2.0 && d < 2.0 * r
    });
    let t = cc.target().oracle();
    let tgrid = *t.grid();
    let mut worst: f64 = 0.0;
    for (u, v) in sample_vertex_pairs(&circle, &circle, pair_budget, pair_seed) {
        let tu = cc.target_vertex(grid.position(u))?;
        let tv = cc.target_vertex(grid.position(v))?;
        if !(region.contains(tu) && region.contains(tv)) {
            return Err(Error::OutOfWindow { x: grid.position(u).x, y: grid.position(u).y });
        }
        let d = t
            .internal_distance(
                &region,
                &VertexSet::from_indices(&tgrid, [tu]),
                &VertexSet::from_indices(&tgrid, [tv]),
            )?
            .value;
        worst = worst.max(d);
    }
    Ok(worst / denom)
}

/// Fraction of ensemble members whose [`bilip_ratio`] is at most `c`.
pub fn bilip_hypothesis_probability(ratios: &[f64], c: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|&&x| x <= c).count() as f64 / ratios.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NarrowAnnulusOutcome {
    pub holds: bool,
    pub sampled: usize,
    pub considered: usize,
    /// `r^{ξQ} e^{ξ h_r(z)}` with the circle average of the raw field.
    pub normalizer: f64,
    /// Smallest normalized internal distance among considered pairs.
    pub min_internal: Option<f64>,
}

/// Over sampled pairs of `A_{αr,r}(z)` with `D_h(u, v) >= s·N`, whether the internal
/// distance in the annulus is at least `S·N`, `N = r^{ξQ} e^{ξ h_r(z)}`.
#[allow(clippy::too_many_arguments)]
pub fn narrow_annulus_length_event(
    h: &Field,
    oracle: &MetricOracle,
    z: ComplexPoint,
    r: f64,
    alpha: f64,
    s: f64,
    big_s: f64,
    pair_budget: usize,
    pair_seed: u64,
) -> Result<NarrowAnnulusOutcome> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (1/2, 1), got {alpha}")));
    }
    let params = oracle.params();
    let hr = circle_average(h, z, r)?;
    let normalizer = r.powf(params.xi() * params.q()) * (params.xi() * hr).exp();
    let grid = *oracle.grid();
    let ring = vertices_in_annulus(&grid, &Annulus::new(z, alpha * r, r)?).intersection(oracle.mask())?;
    let members = ring.to_vec();
    let pairs = sample_vertex_pairs(&members, &members, pair_budget, pair_seed);
    let mut considered = 0;
    let mut min_internal: Option<f64> = None;
    for (u, v) in pairs.iter().copied() {
        if u == v {
            continue;
        }
        let one = |x: usize| VertexSet::from_indices(&grid, [x]);
        if oracle.distance(&one(u), &one(v))?.value < s * normalizer {
            continue;
        }
        considered += 1;
        let internal = oracle.internal_distance(&ring, &one(u), &one(v))?.value / normalizer;
        min_internal = Some(min_internal.map_or(internal, |m| m.min(internal)));
    }
    Ok(NarrowAnnulusOutcome {
        holds: min_internal.is_none_or(|m| m >= big_s),
        sampled: pairs.len(),
        considered,
        normalizer,
        min_internal,
    })
}
