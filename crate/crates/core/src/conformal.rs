//! Closed-form conformal maps, pullback fields `h ∘ φ⁻¹ + Q log|(φ⁻¹)'|`
//! and the pulled-back metric `D_{h^φ}(φ(z), φ(w))`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::gff::{heat_mollify, smoothed_average, BumpKernel, HeatKernel};
use crate::lattice::{vertices_in_disk, ComplexPoint, GridSpec, VertexSet};
use crate::metric::{MetricOracle, NeighborScheme};
use crate::params::LqgParams;

/// Tolerance for "on the branch cut" and "at the pole" decisions.
const DOMAIN_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapDescriptor {
    /// `z ↦ a z + b`.
    Affine {
        a: Complex64,
        #[serde(default)]
        b: Complex64,
    },
    /// `z ↦ (a z + b) / (c z + d)` away from the pole.
    Moebius {
        a: Complex64,
        b: Complex64,
        c: Complex64,
        d: Complex64,
    },
    /// `z ↦ z²` on the right half-plane, onto the plane slit along `(-∞, 0]`.
    Power2,
    /// `z ↦ e^z` on the strip `|Im z| < π`, onto the slit plane.
    ExpStrip,
    /// `w ↦ (φ(scale·w + center) - center) / scale`.
    Rescaled {
        map: Box<MapDescriptor>,
        scale: f64,
        center: Complex64,
    },
    /// `then ∘ first`.
    Composed {
        first: Box<MapDescriptor>,
        then: Box<MapDescriptor>,
    },
}

fn out_of_domain(z: Complex64) -> Error {
    Error::OutOfDomain { x: z.re, y: z.im }
}

fn on_slit(w: Complex64) -> bool {
    w.im.abs() <= DOMAIN_EPS * w.norm().max(1.0) && w.re <= 0.0
}

impl MapDescriptor {
    pub fn identity() -> Self {
        MapDescriptor::Affine {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 0.0),
        }
    }

    pub fn affine(a: Complex64, b: Complex64) -> Self {
        MapDescriptor::Affine { a, b }
    }

    pub fn rescaled(self, scale: f64, center: ComplexPoint) -> Self {
        MapDescriptor::Rescaled {
            map: Box::new(self),
            scale,
            center: center.to_complex(),
        }
    }

    pub fn then(self, next: MapDescriptor) -> Self {
        MapDescriptor::Composed {
            first: Box::new(self),
            then: Box::new(next),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
        match self {
            MapDescriptor::Affine { a, b } => {
                if !(finite(a) && finite(b)) || a.norm() == 0.0 {
                    return Err(Error::InvalidMap("affine map needs finite a != 0".into()));
                }
            }
            MapDescriptor::Moebius { a, b, c, d } => {
                if ![a, b, c, d].iter().all(|z| finite(z)) {
                    return Err(Error::InvalidMap("non-finite Moebius coefficient".into()));
                }
                if (a * d - b * c).norm() == 0.0 {
                    return Err(Error::InvalidMap("Moebius map needs ad - bc != 0".into()));
                }
            }
            MapDescriptor::Power2 | MapDescriptor::ExpStrip => {}
            MapDescriptor::Rescaled { map, scale, center } => {
                if !(scale.is_finite() && *scale > 0.0) || !finite(center) {
                    return Err(Error::InvalidMap("rescaling needs a positive finite scale".into()));
                }
                map.validate()?;
            }
            MapDescriptor::Composed { first, then } => {
                first.validate()?;
                then.validate()?;
            }
        }
        Ok(())
    }

    /// Whether the map is `z ↦ a z + b` (after unfolding rescalings and compositions).
    pub fn as_affine(&self) -> Option<(Complex64, Complex64)> {
        match self {
            MapDescriptor::Affine { a, b } => Some((*a, *b)),
            MapDescriptor::Moebius { a, b, c, d } if c.norm() == 0.0 => Some((a / d, b / d)),
            MapDescriptor::Rescaled { map, scale, center } => {
                let (a, b) = map.as_affine()?;
                Some((a, (a * center + b - center) / scale))
            }
            MapDescriptor::Composed { first, then } => {
                let (a1, b1) = first.as_affine()?;
                let (a2, b2) = then.as_affine()?;
                Some((a2 * a1, a2 * b1 + b2))
            }
            _ => None,
        }
    }

    pub fn eval_c(&self, z: Complex64) -> Result<Complex64> {
        match self {
            MapDescriptor::Affine { a, b } => Ok(a * z + b),
            MapDescriptor::Moebius { a, b, c, d } => {
                let den = c * z + d;
                if den.norm() <= DOMAIN_EPS * (c.norm() * z.norm() + d.norm()) {
                    return Err(out_of_domain(z));
                }
                Ok((a * z + b) / den)
            }
            MapDescriptor::Power2 => {
                if z.norm() == 0.0 {
                    return Err(Error::CriticalPoint { x: 0.0, y: 0.0 });
                }
                if z.re <= 0.0 {
                    return Err(out_of_domain(z));
                }
                Ok(z * z)
            }
            MapDescriptor::ExpStrip => {
                if z.im.abs() >= std::f64::consts::PI {
                    return Err(out_of_domain(z));
                }
                Ok(z.exp())
            }
            MapDescriptor::Rescaled { map, scale, center } => {
                let inner = map.eval_c(z * *scale + center).map_err(|_| out_of_domain(z))?;
                Ok((inner - center) / *scale)
            }
            MapDescriptor::Composed { first, then } => then.eval_c(first.eval_c(z)?),
        }
    }

    pub fn inverse_c(&self, w: Complex64) -> Result<Complex64> {
        match self {
            MapDescriptor::Affine { a, b } => Ok((w - b) / a),
            MapDescriptor::Moebius { a, b, c, d } => {
                let den = a - c * w;
                if den.norm() <= DOMAIN_EPS * (a.norm() + c.norm() * w.norm()) {
                    return Err(out_of_domain(w));
                }
                Ok((d * w - b) / den)
            }
            MapDescriptor::Power2 => {
                if w.norm() == 0.0 {
                    return Err(Error::CriticalPoint { x: 0.0, y: 0.0 });
                }
                if on_slit(w) {
                    return Err(out_of_domain(w));
                }
                Ok(w.sqrt())
            }
            MapDescriptor::ExpStrip => {
                if w.norm() == 0.0 || on_slit(w) {
                    return Err(out_of_domain(w));
                }
                Ok(w.ln())
            }
            MapDescriptor::Rescaled { map, scale, center } => {
                let inner = map.inverse_c(w * *scale + center).map_err(|_| out_of_domain(w))?;
                Ok((inner - center) / *scale)
            }
            MapDescriptor::Composed { first, then } => first.inverse_c(then.inverse_c(w)?),
        }
    }

    /// `φ'(z)`.
    pub fn derivative_c(&self, z: Complex64) -> Result<Complex64> {
        match self {
            MapDescriptor::Affine { a, .. } => Ok(*a),
            MapDescriptor::Moebius { a, b, c, d } => {
                self.eval_c(z)?;
                let den = c * z + d;
                Ok((a * d - b * c) / (den * den))
            }
            MapDescriptor::Power2 => {
                self.eval_c(z)?;
                Ok(2.0 * z)
            }
            MapDescriptor::ExpStrip => self.eval_c(z),
            MapDescriptor::Rescaled { map, scale, center } => {
                map.derivative_c(z * *scale + center).map_err(|_| out_of_domain(z))
            }
            MapDescriptor::Composed { first, then } => {
                Ok(then.derivative_c(first.eval_c(z)?)? * first.derivative_c(z)?)
            }
        }
    }

    /// `log|φ'(z)|`.
    pub fn derivative_log_abs(&self, z: Complex64) -> Result<f64> {
        match self {
            MapDescriptor::Affine { a, .. } => Ok(a.norm().ln()),
            MapDescriptor::Moebius { a, b, c, d } => {
                self.eval_c(z)?;
                Ok((a * d - b * c).norm().ln() - 2.0 * (c * z + d).norm().ln())
            }
            MapDescriptor::Power2 => {
                self.eval_c(z)?;
                Ok(std::f64::consts::LN_2 + z.norm().ln())
            }
            MapDescriptor::ExpStrip => {
                self.eval_c(z)?;
                Ok(z.re)
            }
            MapDescriptor::Rescaled { map, scale, center } => map
                .derivative_log_abs(z * *scale + center)
                .map_err(|_| out_of_domain(z)),
            MapDescriptor::Composed { first, then } => {
                Ok(then.derivative_log_abs(first.eval_c(z)?)? + first.derivative_log_abs(z)?)
            }
        }
    }

    /// `log|(φ⁻¹)'(w)|`, in closed form for every family.
    pub fn inverse_derivative_log_abs_c(&self, w: Complex64) -> Result<f64> {
        match self {
            MapDescriptor::Affine { a, .. } => Ok(-a.norm().ln()),
            MapDescriptor::Moebius { a, b, c, d } => {
                self.inverse_c(w)?;
                Ok((a * d - b * c).norm().ln() - 2.0 * (a - c * w).norm().ln())
            }
            MapDescriptor::Power2 => {
                self.inverse_c(w)?;
                Ok(-std::f64::consts::LN_2 - 0.5 * w.norm().ln())
            }
            MapDescriptor::ExpStrip => {
                self.inverse_c(w)?;
                Ok(-w.norm().ln())
            }
            MapDescriptor::Rescaled { map, scale, center } => map
                .inverse_derivative_log_abs_c(w * *scale + center)
                .map_err(|_| out_of_domain(w)),
            MapDescriptor::Composed { first, then } => {
                let mid = then.inverse_c(w)?;
                Ok(first.inverse_derivative_log_abs_c(mid)? + then.inverse_derivative_log_abs_c(w)?)
            }
        }
    }

    pub fn evaluate(&self, z: ComplexPoint) -> Result<ComplexPoint> {
        self.eval_c(z.to_complex()).map(ComplexPoint::from)
    }

    pub fn inverse(&self, w: ComplexPoint) -> Result<ComplexPoint> {
        self.inverse_c(w.to_complex()).map(ComplexPoint::from)
    }

    pub fn inverse_derivative_log_abs(&self, w: ComplexPoint) -> Result<f64> {
        self.inverse_derivative_log_abs_c(w.to_complex())
    }
}

/// How the pulled-back field is regularized relative to the source scale `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPolicy {
    /// The same `ε` in target coordinates; ratios of unrescaled distances stay unbiased.
    #[default]
    SameEpsilon,
    /// `ε · |φ'(anchor)|`, the image of the source scale.
    LocalScale,
}

impl EpsilonPolicy {
    pub fn target_epsilon(&self, epsilon: f64, map: &MapDescriptor, anchor: ComplexPoint) -> Result<f64> {
        match self {
            EpsilonPolicy::SameEpsilon => Ok(epsilon),
            EpsilonPolicy::LocalScale => Ok(epsilon * map.derivative_c(anchor.to_complex())?.norm()),
        }
    }
}

/// Mesh of the target lattice in a coordinate change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMesh {
    /// The source spacing.
    #[default]
    Source,
    /// The source spacing times `|φ'(z)|` at the comparison center, so the target lattice
    /// pulls back to roughly the source resolution.
    Matched,
}

impl TargetMesh {
    pub fn spacing(&self, source_spacing: f64, map: &MapDescriptor, anchor: ComplexPoint) -> Result<f64> {
        match self {
            TargetMesh::Source => Ok(source_spacing),
            TargetMesh::Matched => Ok(source_spacing * map.derivative_c(anchor.to_complex())?.norm()),
        }
    }
}

/// Samples of `h^φ` on a target grid; `defined` marks vertices whose preimage
/// could be interpolated from the base field.
#[derive(Debug, Clone)]
pub struct PullbackField {
    map: MapDescriptor,
    values: Field,
    defined: VertexSet,
}

impl PullbackField {
    pub fn map(&self) -> &MapDescriptor {
        &self.map
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn target_grid(&self) -> &GridSpec {
        self.values.grid()
    }

    pub fn defined(&self) -> &VertexSet {
        &self.defined
    }

    pub fn is_complete(&self) -> bool {
        self.defined.count() == self.values.grid().len()
    }
}

fn pullback_value(base: &Field, map: &MapDescriptor, q: f64, w: ComplexPoint) -> Result<f64> {
    let z = map.inverse(w)?;
    let v = base
        .bicubic(z)
        .ok_or(Error::PreimageEscapes { x: w.x, y: w.y })?;
    Ok(v + q * map.inverse_derivative_log_abs(w)?)
}

/// `h^φ(w) = h(φ⁻¹(w)) + Q log|(φ⁻¹)'(w)|` at every target vertex (bicubic interpolation).
pub fn pullback_field(
    base: &Field,
    map: &MapDescriptor,
    target_grid: &GridSpec,
    params: &LqgParams,
) -> Result<PullbackField> {
    map.validate()?;
    let q = params.q();
    let mut values = Vec::with_capacity(target_grid.len());
    for idx in 0..target_grid.len() {
        let w = target_grid.position(idx);
        values.push(pullback_value(base, map, q, w).map_err(|e| match e {
            Error::OutOfDomain { .. } | Error::CriticalPoint { .. } => Error::PreimageEscapes { x: w.x, y: w.y },
            other => other,
        })?);
    }
    Ok(PullbackField {
        map: map.clone(),
        values: Field::new(*target_grid, values)?,
        defined: VertexSet::full(target_grid),
    })
}

/// Like [`pullback_field`], but vertices whose preimage is unavailable are left
/// undefined (value 0) instead of failing.
pub fn pullback_field_partial(
    base: &Field,
    map: &MapDescriptor,
    target_grid: &GridSpec,
    params: &LqgParams,
) -> Result<PullbackField> {
    map.validate()?;
    let q = params.q();
    let mut defined = VertexSet::empty(target_grid);
    let mut values = vec![0.0; target_grid.len()];
    for (idx, slot) in values.iter_mut().enumerate() {
        if let Ok(v) = pullback_value(base, map, q, target_grid.position(idx)) {
            *slot = v;
            defined.insert(idx);
        }
    }
    Ok(PullbackField {
        map: map.clone(),
        values: Field::new(*target_grid, values)?,
        defined,
    })
}

/// Vertices whose whole disk of radius `reach` (in lattice units, rounded down) lies in `set`.
fn erode(set: &VertexSet, reach: f64) -> VertexSet {
    let grid = *set.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let r = (reach + 1e-9).floor() as isize;
    // prefix counts of missing vertices per row
    let mut prefix = vec![0u32; ny * (nx + 1)];
    for j in 0..ny {
        for i in 0..nx {
            let miss = !set.contains(grid.index(i, j)) as u32;
            prefix[j * (nx + 1) + i + 1] = prefix[j * (nx + 1) + i] + miss;
        }
    }
    let half: Vec<isize> = (-r..=r)
        .map(|dj| ((reach * reach - (dj * dj) as f64).max(0.0) + 1e-9).sqrt().floor() as isize)
        .collect();
    let mut out = VertexSet::empty(&grid);
    for j in 0..ny as isize {
        'vertex: for i in 0..nx as isize {
            if !set.contains(grid.index(i as usize, j as usize)) {
                continue;
            }
            for (k, dj) in (-r..=r).enumerate() {
                let jj = j + dj;
                let w = half[k];
                if jj < 0 || jj >= ny as isize || i - w < 0 || i + w >= nx as isize {
                    continue 'vertex;
                }
                let row = jj as usize * (nx + 1);
                if prefix[row + (i + w) as usize + 1] != prefix[row + (i - w) as usize] {
                    continue 'vertex;
                }
            }
            out.insert(grid.index(i as usize, j as usize));
        }
    }
    out
}

/// A distance query answered on snapped vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnappedDistance {
    pub value: f64,
    /// Snap distances of the two endpoints.
    pub snap: [f64; 2],
}

/// `D_{h^φ}` on the target grid, regularized at `epsilon_target`.
#[derive(Debug, Clone)]
pub struct PulledBackMetric {
    map: MapDescriptor,
    oracle: MetricOracle,
    epsilon_target: f64,
}

impl PulledBackMetric {
    /// Mollifies the pullback at `epsilon_target`; the metric lives on vertices whose
    /// full mollifier stencil saw defined values.
    pub fn build(
        pullback: &PullbackField,
        epsilon_target: f64,
        params: LqgParams,
        scheme: NeighborScheme,
    ) -> Result<Self> {
        let kernel = HeatKernel::default();
        let m = kernel.mollify(pullback.values(), epsilon_target)?;
        let grid = *pullback.target_grid();
        let valid = VertexSet::window(&grid, m.valid())?;
        let usable = if pullback.is_complete() {
            valid
        } else {
            let reach = kernel.truncation_radius(epsilon_target) / grid.spacing;
            erode(pullback.defined(), reach).intersection(&valid)?
        };
        let oracle = MetricOracle::new(m.into_field(), params, usable, scheme)?;
        Ok(PulledBackMetric {
            map: pullback.map().clone(),
            oracle,
            epsilon_target,
        })
    }

    pub fn restrict(&self, mask: &VertexSet) -> Result<Self> {
        let mask = mask.intersection(self.oracle.mask())?;
        Ok(PulledBackMetric {
            map: self.map.clone(),
            oracle: self.oracle.with_mask(mask)?,
            epsilon_target: self.epsilon_target,
        })
    }

    pub fn oracle(&self) -> &MetricOracle {
        &self.oracle
    }

    pub fn epsilon_target(&self) -> f64 {
        self.epsilon_target
    }

    /// Nearest usable target vertex to `φ(z)`.
    pub fn snap(&self, z: ComplexPoint) -> Result<(usize, f64)> {
        let w = self.map.evaluate(z)?;
        let (v, d) = self
            .oracle
            .grid()
            .nearest_vertex(w)
            .ok_or(Error::OutOfWindow { x: w.x, y: w.y })?;
        if !self.oracle.mask().contains(v) {
            return Err(Error::OutOfWindow { x: w.x, y: w.y });
        }
        Ok((v, d))
    }

    /// `D_h^φ(z, w) = D_{h^φ}(φ(z), φ(w))` between the snapped images.
    pub fn distance(&self, z: ComplexPoint, w: ComplexPoint) -> Result<SnappedDistance> {
        let (a, da) = self.snap(z)?;
        let (b, db) = self.snap(w)?;
        Ok(SnappedDistance {
            value: self.oracle.distance_between(a, b)?.value,
            snap: [da, db],
        })
    }
}

/// One-shot pulled-back distance with the regularization scale set by `policy` at `z`.
#[allow(clippy::too_many_arguments)]
pub fn pulled_back_distance(
    pullback: &PullbackField,
    epsilon: f64,
    policy: EpsilonPolicy,
    params: LqgParams,
    scheme: NeighborScheme,
    z: ComplexPoint,
    w: ComplexPoint,
) -> Result<SnappedDistance> {
    let eps_t = policy.target_epsilon(epsilon, pullback.map(), z)?;
    PulledBackMetric::build(pullback, eps_t, params, scheme)?.distance(z, w)
}

/// Settings shared by the ratio and sup-difference statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonSettings {
    pub epsilon: f64,
    pub policy: EpsilonPolicy,
    pub scheme: NeighborScheme,
    pub kernel: BumpKernel,
    pub target_mesh: TargetMesh,
    /// Both metrics are internal to `B_{reach·r}(z)` and its image.
    pub reach: f64,
    /// Minimum pair separation as a fraction of `r`.
    pub b: f64,
    pub pair_budget: usize,
    pub pair_seed: u64,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        ComparisonSettings {
            epsilon: 0.0,
            policy: EpsilonPolicy::SameEpsilon,
            scheme: NeighborScheme::King8,
            kernel: BumpKernel::Exponential,
            target_mesh: TargetMesh::Source,
            reach: 1.5,
            b: 0.25,
            pair_budget: 16,
            pair_seed: 0,
        }
    }
}

/// Deterministic pairs in `B_r(center)` with `|u - v| >= b r`; a larger budget
/// extends the list of a smaller one.
pub fn sample_pairs(center: ComplexPoint, r: f64, b: f64, budget: usize, seed: u64) -> Vec<(ComplexPoint, ComplexPoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| {
        let rho = r * rng.random::<f64>().sqrt();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        center.translate(rho * theta.cos(), rho * theta.sin())
    };
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let u = point(&mut rng);
        let v = point(&mut rng);
        if u.dist(v) >= b * r {
            out.push((u, v));
        }
    }
    out
}

/// Both sides of the coordinate-change comparison near `B_r(center)`: `D_h` internal
/// to `U = B_{reach·r}(center)` and `D_{h^φ}` internal to `φ(U)`.
#[derive(Debug, Clone)]
pub struct CoordinateChange {
    source: MetricOracle,
    target: PulledBackMetric,
    center: ComplexPoint,
    radius: f64,
    outer: f64,
    normalizer: f64,
}

/// Target grid on the source lattice spacing covering `φ(B_{reach·r}(center))` plus `pad`.
pub fn target_grid_for(
    map: &MapDescriptor,
    center: ComplexPoint,
    radius: f64,
    spacing: f64,
    pad: f64,
) -> Result<GridSpec> {
    let n = ((std::f64::consts::TAU * radius / spacing).ceil() as usize * 4).max(64);
    let (mut lo, mut hi) = (ComplexPoint::new(f64::INFINITY, f64::INFINITY), ComplexPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for k in 0..n {
        let t = std::f64::consts::TAU * k as f64 / n as f64;
        let w = map.evaluate(center.translate(radius * t.cos(), radius * t.sin()))?;
        lo = ComplexPoint::new(lo.x.min(w.x), lo.y.min(w.y));
        hi = ComplexPoint::new(hi.x.max(w.x), hi.y.max(w.y));
    }
    let i0 = ((lo.x - pad) / spacing).floor();
    let j0 = ((lo.y - pad) / spacing).floor();
    let i1 = ((hi.x + pad) / spacing).ceil();
    let j1 = ((hi.y + pad) / spacing).ceil();
    GridSpec::new(
        ComplexPoint::new(i0 * spacing, j0 * spacing),
        spacing,
        (i1 - i0) as usize + 1,
        (j1 - j0) as usize + 1,
    )
}

impl CoordinateChange {
    pub fn build(
        h: &Field,
        map: &MapDescriptor,
        center: ComplexPoint,
        r: f64,
        settings: &ComparisonSettings,
        params: LqgParams,
    ) -> Result<Self> {
        map.validate()?;
        let grid = *h.grid();
        let eps = settings.epsilon;
        let outer = settings.reach * r;
        let source_m = heat_mollify(h, eps)?;
        if !source_m.valid().contains_disk(center, outer) {
            return Err(Error::OutOfWindow { x: center.x, y: center.y });
        }
        let u_set = vertices_in_disk(&grid, center, outer);
        let source = MetricOracle::new(source_m.into_field(), params, u_set, settings.scheme)?;

        let eps_t = settings.policy.target_epsilon(eps, map, center)?;
        let spacing_t = settings.target_mesh.spacing(grid.spacing, map, center)?;
        let pad = HeatKernel::default().truncation_radius(eps_t) + 2.0 * spacing_t;
        let tgrid = target_grid_for(map, center, outer, spacing_t, pad)?;
        let pullback = pullback_field_partial(h, map, &tgrid, &params)?;
        let full = PulledBackMetric::build(&pullback, eps_t, params, settings.scheme)?;
        // φ(U) rasterized by preimages of vertex positions
        let mut image = VertexSet::empty(&tgrid);
        for idx in 0..tgrid.len() {
            if let Ok(z) = map.inverse(tgrid.position(idx)) {
                if z.dist(center) <= outer {
                    image.insert(idx);
                }
            }
        }
        if !image.is_subset(full.oracle().mask()) {
            let bad = image.iter().find(|&v| !full.oracle().mask().contains(v)).unwrap_or(0);
            let z = map.inverse(tgrid.position(bad))?;
            return Err(Error::PreimageEscapes { x: z.x, y: z.y });
        }
        let target = full.restrict(&image)?;
        let hf = smoothed_average(h, &settings.kernel, center, r)?;
        let normalizer = r.powf(params.xi() * params.q()) * (params.xi() * hf).exp();
        Ok(CoordinateChange {
            source,
            target,
            center,
            radius: r,
            outer,
            normalizer,
        })
    }

    pub fn source(&self) -> &MetricOracle {
        &self.source
    }

    pub fn target(&self) -> &PulledBackMetric {
        &self.target
    }

    pub fn center(&self) -> ComplexPoint {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Radius of the comparison region `U`.
    pub fn outer_radius(&self) -> f64 {
        self.outer
    }

    /// Source vertex nearest to `p`, which must lie in `U`.
    pub fn source_vertex(&self, p: ComplexPoint) -> Result<usize> {
        let (idx, _) = self
            .source
            .grid()
            .nearest_vertex(p)
            .ok_or(Error::OutOfWindow { x: p.x, y: p.y })?;
        if !self.source.mask().contains(idx) {
            return Err(Error::OutOfWindow { x: p.x, y: p.y });
        }
        Ok(idx)
    }

    /// Target vertex nearest to `φ(p)`.
    pub fn target_vertex(&self, p: ComplexPoint) -> Result<usize> {
        self.target.snap(p).map(|(v, _)| v)
    }

    /// Usable target vertices whose preimage satisfies `pred`.
    pub fn target_region(&self, pred: impl Fn(ComplexPoint) -> bool) -> VertexSet {
        let oracle = self.target.oracle();
        let grid = *oracle.grid();
        let mut set = VertexSet::empty(&grid);
        for w in oracle.mask().iter() {
            if let Ok(z) = self.target_map().inverse(grid.position(w)) {
                if pred(z) {
                    set.insert(w);
                }
            }
        }
        set
    }

    /// Discrete image of `∂B_rho(center)`: usable target vertices on either side of a
    /// sign change of `|φ⁻¹(w) - center| - rho` along a lattice axis.
    pub fn target_circle(&self, rho: f64) -> VertexSet {
        let oracle = self.target.oracle();
        let grid = *oracle.grid();
        let side: Vec<Option<bool>> = (0..grid.len())
            .map(|w| {
                oracle.mask().contains(w).then(|| {
                    self.target_map()
                        .inverse(grid.position(w))
                        .map(|z| z.dist(self.center) > rho)
                        .ok()
                })?
            })
            .collect();
        let mut set = VertexSet::empty(&grid);
        for w in 0..grid.len() {
            let Some(sw) = side[w] else { continue };
            let (i, j) = grid.coords(w);
            let flips = [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|&(di, dj)| {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii as usize >= grid.nx || jj as usize >= grid.ny {
                    return false;
                }
                side[grid.index(ii as usize, jj as usize)].is_some_and(|s| s != sw)
            });
            if flips {
                set.insert(w);
            }
        }
        set
    }

    fn target_map(&self) -> &MapDescriptor {
        &self.target.map
    }

    /// `r^{ξQ} e^{ξ h_{f,r}(z)}`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `(D_h(u, v), D_h^φ(u, v))` between snapped endpoints.
    pub fn pair(&self, u: ComplexPoint, v: ComplexPoint) -> Result<(f64, f64)> {
        let d = self
            .source
            .distance_between(self.source_vertex(u)?, self.source_vertex(v)?)?
            .value;
        let dphi = self.target.distance(u, v)?.value;
        Ok((d, dphi))
    }

    pub fn pairs(&self, settings: &ComparisonSettings) -> Result<Vec<(f64, f64)>> {
        sample_pairs(self.center, self.radius, settings.b, settings.pair_budget, settings.pair_seed)
            .into_iter()
            .map(|(u, v)| self.pair(u, v))
            .collect()
    }
}

/// `D_h^φ(u, v) / D_h(u, v)` over the sampled pairs.
pub fn covariance_ratio_sample(
    h: &Field,
    map: &MapDescriptor,
    center: ComplexPoint,
    r: f64,
    settings: &ComparisonSettings,
    params: LqgParams,
) -> Result<Vec<f64>> {
    if settings.pair_budget == 0 {
        return Ok(Vec::new());
    }
    let cc = CoordinateChange::build(h, map, center, r, settings, params)?;
    Ok(cc.pairs(settings)?.into_iter().map(|(d, dphi)| dphi / d).collect())
}

/// `max |D_h^φ(u, v) - D_h(u, v)| / (r^{ξQ} e^{ξ h_{f,r}(z)})` over the sampled pairs;
/// the event `F_r(z)` is `{statistic <= δ}`.
pub fn sup_difference_statistic(
    h: &Field,
    map: &MapDescriptor,
    z: ComplexPoint,
    r: f64,
    settings: &ComparisonSettings,
    params: LqgParams,
) -> Result<f64> {
    let cc = CoordinateChange::build(h, map, z, r, settings, params)?;
    let worst = cc
        .pairs(settings)?
        .into_iter()
        .map(|(d, dphi)| (dphi - d).abs())
        .fold(0.0, f64::max);
    Ok(worst / cc.normalizer())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn maps() -> Vec<(MapDescriptor, Box<dyn Fn(&mut ChaCha8Rng) -> Complex64>)> {
        vec![
            (
                MapDescriptor::affine(c(2.0, -1.0), c(0.5, 3.0)),
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0))),
            ),
            (
                MapDescriptor::Moebius { a: c(1.0, 0.2), b: c(0.3, 0.0), c: c(-0.5, 0.1), d: c(1.0, 0.0) },
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))),
            ),
            (
                MapDescriptor::Power2,
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(0.05..3.0), r.random_range(-3.0..3.0))),
            ),
            (
                MapDescriptor::ExpStrip,
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(-3.0..3.0), r.random_range(-3.1..3.1))),
            ),
            (
                MapDescriptor::Power2.rescaled(0.2, ComplexPoint::new(1.0, 0.0)),
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0))),
            ),
            (
                MapDescriptor::ExpStrip.then(MapDescriptor::affine(c(0.0, 1.0), c(1.0, 0.0))),
                Box::new(|r: &mut ChaCha8Rng| c(r.random_range(-1.0..1.0), r.random_range(-3.0..3.0))),
            ),
        ]
    }

    #[test]
    fn closed_form_examples() {
        let aff = MapDescriptor::affine(c(2.0, 0.0), c(0.0, 0.0));
        assert_eq!(aff.eval_c(c(1.0, 0.0)).unwrap(), c(2.0, 0.0));
        assert_eq!(aff.inverse_c(c(2.0, 0.0)).unwrap(), c(1.0, 0.0));
        assert!((aff.inverse_derivative_log_abs_c(c(7.0, -3.0)).unwrap() - 0.5f64.ln()).abs() < 1e-15);

        let id = MapDescriptor::Moebius { a: c(1.0, 0.0), b: c(0.0, 0.0), c: c(0.0, 0.0), d: c(1.0, 0.0) };
        assert_eq!(id.eval_c(c(0.3, -0.7)).unwrap(), c(0.3, -0.7));
        assert_eq!(id.inverse_derivative_log_abs_c(c(0.3, -0.7)).unwrap(), 0.0);

        let p = MapDescriptor::Power2;
        assert!((p.eval_c(c(1.0, 1.0)).unwrap() - c(0.0, 2.0)).norm() < 1e-15);
        assert!((p.inverse_c(c(0.0, 2.0)).unwrap() - c(1.0, 1.0)).norm() < 1e-15);
        let expect = -(2.0 * 2f64.sqrt()).ln();
        assert!((p.inverse_derivative_log_abs_c(c(0.0, 2.0)).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(MapDescriptor::Power2.eval_c(c(-1.0, 0.5)), Err(Error::OutOfDomain { .. })));
        assert!(matches!(MapDescriptor::Power2.eval_c(c(0.0, 0.0)), Err(Error::CriticalPoint { .. })));
        assert!(matches!(MapDescriptor::Power2.inverse_c(c(-2.0, 0.0)), Err(Error::OutOfDomain { .. })));
        assert!(MapDescriptor::ExpStrip.eval_c(c(0.0, 4.0)).is_err());
        let m = MapDescriptor::Moebius { a: c(1.0, 0.0), b: c(0.0, 0.0), c: c(-0.5, 0.0), d: c(1.0, 0.0) };
        assert!(m.eval_c(c(2.0, 0.0)).is_err());
        assert!(m.inverse_c(c(-2.0, 0.0)).is_err());
        assert!(MapDescriptor::affine(c(0.0, 0.0), c(1.0, 0.0)).validate().is_err());
        let degenerate = MapDescriptor::Moebius { a: c(1.0, 0.0), b: c(2.0, 0.0), c: c(1.0, 0.0), d: c(2.0, 0.0) };
        assert!(degenerate.validate().is_err());
    }

    #[test]
    fn inverse_and_chain_rule_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (map, draw) in maps() {
            map.validate().unwrap();
            let mut checked = 0;
            while checked < 100 {
                let z = draw(&mut rng);
                let Ok(w) = map.eval_c(z) else { continue };
                let back = map.inverse_c(w).unwrap();
                assert!((map.eval_c(back).unwrap() - w).norm() <= 1e-10 * w.norm().max(1.0), "{map:?}");
                let sum = map.inverse_derivative_log_abs_c(w).unwrap() + map.derivative_log_abs(z).unwrap();
                assert!(sum.abs() <= 1e-10, "{map:?} at {z}: {sum}");
                let d = map.derivative_c(z).unwrap();
                assert!((d.norm().ln() - map.derivative_log_abs(z).unwrap()).abs() < 1e-10);
                checked += 1;
            }
        }
    }

    #[test]
    fn affine_unfolding() {
        let m = MapDescriptor::affine(c(2.0, 1.0), c(0.5, 0.0))
            .rescaled(0.5, ComplexPoint::new(1.0, -1.0))
            .then(MapDescriptor::affine(c(0.0, 1.0), c(0.0, 0.0)));
        let (a, b) = m.as_affine().unwrap();
        let z = c(0.3, 0.9);
        assert!((a * z + b - m.eval_c(z).unwrap()).norm() < 1e-14);
        assert!(MapDescriptor::Power2.as_affine().is_none());
    }

    #[test]
    fn map_serialization_uses_coordinate_pairs() {
        let m = MapDescriptor::affine(c(2.0, 0.5), c(0.0, -1.0));
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"kind":"affine","a":[2.0,0.5],"b":[0.0,-1.0]}"#);
        let back: MapDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let p: MapDescriptor = serde_json::from_str(r#"{"kind":"power2"}"#).unwrap();
        assert_eq!(p, MapDescriptor::Power2);
    }

    fn smooth_grid() -> (GridSpec, Field) {
        let g = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 101).unwrap();
        let f = Field::from_fn(&g, |p| (2.0 * p.x).sin() * (1.5 * p.y + 0.3).cos() + 0.2 * p.x * p.y);
        (g, f)
    }

    #[test]
    fn pullback_examples() {
        let (g, f) = smooth_grid();
        let params = LqgParams::pure_gravity();
        let inner = g.subgrid(2, 97, 2, 97).unwrap();
        let id = pullback_field(&f, &MapDescriptor::identity(), &inner, &params).unwrap();
        let sub = f.restrict(&inner).unwrap();
        for (a, b) in id.values().values().iter().zip(sub.values()) {
            assert!((a - b).abs() <= 1e-9);
        }

        let zero = Field::constant(&g, 0.0);
        let a = MapDescriptor::affine(c(2.0, 0.0), c(-1.0, 0.0));
        let target = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 151).unwrap();
        let pb = pullback_field(&zero, &a, &target, &params).unwrap();
        let expect = -params.q() * 2f64.ln();
        assert!(pb.values().values().iter().all(|v| (v - expect).abs() < 1e-14));

        let sq = MapDescriptor::Power2;
        let target = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 61).unwrap();
        let pb = pullback_field(&zero, &sq, &target, &params).unwrap();
        for idx in (0..target.len()).step_by(target.len() / 10) {
            let w = target.position(idx).to_complex();
            let closed = -params.q() * (2.0 * w.sqrt().norm()).ln();
            assert!((pb.values().value(idx) - closed).abs() < 1e-12);
        }

        let huge = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 401).unwrap();
        assert!(matches!(
            pullback_field(&zero, &MapDescriptor::identity(), &huge, &params),
            Err(Error::PreimageEscapes { .. })
        ));
        let partial = pullback_field_partial(&zero, &MapDescriptor::identity(), &huge, &params).unwrap();
        assert!(!partial.is_complete() && partial.defined().count() > 0);
    }

    #[test]
    fn pullback_group_consistency() {
        let (_, f) = smooth_grid();
        let params = LqgParams::pure_gravity();
        let phi = MapDescriptor::Moebius { a: c(1.0, 0.0), b: c(0.02, 0.0), c: c(0.05, 0.0), d: c(1.0, 0.0) };
        let psi = MapDescriptor::affine(c(0.9, 0.1), c(0.1, -0.05));
        let mid = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 71).unwrap();
        let step1 = pullback_field(&f, &phi, &mid, &params).unwrap();
        let target = GridSpec::centered(ComplexPoint::new(1.0, 0.0), 0.02, 41).unwrap();
        let twice = pullback_field(step1.values(), &psi, &target, &params).unwrap();
        let once = pullback_field(&f, &phi.clone().then(psi), &target, &params).unwrap();
        let worst = twice
            .values()
            .values()
            .iter()
            .zip(once.values().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2e-5, "{worst}");
    }

    #[test]
    fn erosion_matches_brute_force() {
        let g = GridSpec::new(ComplexPoint::ORIGIN, 1.0, 20, 17).unwrap();
        let set = VertexSet::from_predicate(&g, |p| !(p.x == 7.0 && p.y == 9.0) && p.x + p.y < 30.0);
        let reach = 3.2;
        let fast = erode(&set, reach);
        let slow = VertexSet::from_predicate(&g, |p| {
            (0..g.len()).all(|v| {
                let q = g.position(v);
                q.dist(p) > reach || set.contains(v)
            }) && g.contains_disk(p, reach.floor())
        });
        assert_eq!(fast.to_vec(), slow.to_vec());
    }

    #[test]
    fn pulled_back_distance_examples() {
        let params = LqgParams::pure_gravity();
        let g = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 81).unwrap();
        let zero = Field::constant(&g, 0.0);
        let (z, w) = (ComplexPoint::new(-0.5, 0.0), ComplexPoint::new(0.5, 0.0));
        let inner = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 77).unwrap();
        let pb = pullback_field(&zero, &MapDescriptor::identity(), &inner, &params).unwrap();
        let d = pulled_back_distance(&pb, 0.1, EpsilonPolicy::SameEpsilon, params, NeighborScheme::King8, z, w).unwrap();
        assert!((d.value - 1.0).abs() < 1e-9);

        // affine a = 2: |a|^{1 - xi Q} |z - w|
        let a = MapDescriptor::affine(c(2.0, 0.0), c(0.0, 0.0));
        let target = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 81).unwrap();
        let small = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 61).unwrap();
        let pb = pullback_field(&Field::constant(&small, 0.0), &a, &target, &params).unwrap();
        let (z, w) = (ComplexPoint::new(-0.25, 0.0), ComplexPoint::new(0.25, 0.0));
        let d = pulled_back_distance(&pb, 0.1, EpsilonPolicy::SameEpsilon, params, NeighborScheme::King8, z, w).unwrap();
        let expect = 2f64.powf(1.0 - params.xi() * params.q()) * 0.5;
        assert!((d.value / expect - 1.0).abs() < 1e-9, "{} vs {expect}", d.value);

        let shifted = pullback_field(&Field::constant(&small, 0.7), &a, &target, &params).unwrap();
        let ds = pulled_back_distance(&shifted, 0.1, EpsilonPolicy::SameEpsilon, params, NeighborScheme::King8, z, w).unwrap();
        assert!((ds.value / d.value / (params.xi() * 0.7).exp() - 1.0).abs() < 1e-12);
    }

    fn rough_field(g: &GridSpec, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(*g, vals).unwrap()
    }

    fn settings(eps: f64) -> ComparisonSettings {
        ComparisonSettings { epsilon: eps, pair_budget: 6, pair_seed: 3, ..Default::default() }
    }

    #[test]
    fn identity_ratios_and_statistic() {
        let params = LqgParams::pure_gravity();
        let g = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 81).unwrap();
        let h = rough_field(&g, 1);
        let s = settings(0.1);
        let ratios = covariance_ratio_sample(&h, &MapDescriptor::identity(), ComplexPoint::ORIGIN, 0.6, &s, params).unwrap();
        assert_eq!(ratios.len(), 6);
        assert!(ratios.iter().all(|r| (r - 1.0).abs() < 1e-9), "{ratios:?}");
        let stat = sup_difference_statistic(&h, &MapDescriptor::identity(), ComplexPoint::ORIGIN, 0.6, &s, params).unwrap();
        assert!(stat < 1e-9);
        let none = ComparisonSettings { pair_budget: 0, ..s };
        assert!(covariance_ratio_sample(&h, &MapDescriptor::identity(), ComplexPoint::ORIGIN, 0.6, &none, params)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn constant_shift_invariance() {
        let params = LqgParams::pure_gravity();
        let g = GridSpec::centered(ComplexPoint::ORIGIN, 0.05, 101).unwrap();
        let h = rough_field(&g, 2);
        let map = MapDescriptor::Moebius { a: c(1.0, 0.0), b: c(0.05, 0.0), c: c(-0.3, 0.0), d: c(1.0, 0.0) };
        let s = settings(0.1);
        let r1 = covariance_ratio_sample(&h, &map, ComplexPoint::ORIGIN, 0.5, &s, params).unwrap();
        let r2 = covariance_ratio_sample(&h.add_constant(1.3), &map, ComplexPoint::ORIGIN, 0.5, &s, params).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
        let s1 = sup_difference_statistic(&h, &map, ComplexPoint::ORIGIN, 0.5, &s, params).unwrap();
        let s2 = sup_difference_statistic(&h.add_constant(-0.8), &map, ComplexPoint::ORIGIN, 0.5, &s, params).unwrap();
        assert!((s1 / s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_sampling_is_nested() {
        let a = sample_pairs(ComplexPoint::ORIGIN, 1.0, 0.5, 10, 4);
        let b = sample_pairs(ComplexPoint::ORIGIN, 1.0, 0.5, 25, 4);
        assert_eq!(a[..], b[..10]);
        assert!(b.iter().all(|(u, v)| u.dist(*v) >= 0.5 && u.dist(ComplexPoint::ORIGIN) <= 1.0));
    }
}
