//! Per-sample evaluation for each experiment kind.

use std::collections::BTreeMap;

use num_complex::Complex64;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::conformal::{sample_pairs, ComparisonSettings, CoordinateChange, MapDescriptor};
use crate::error::{Error, Result};
use crate::events::{
    bilip_ratio, evaluate_event, narrow_annulus_length_event, AnnulusEventParams, Witness,
};
use crate::field::Field;
use crate::gff::{circle_average, heat_mollify, sample_field};
use crate::lattice::{vertices_in_disk, ComplexPoint, GridSpec, VertexSet};
use crate::measure::{ball_escape_distance, ball_volume_profile, build_measure, log_log_slope, measure_coordinate_change_ratio};
use crate::metric::MetricOracle;

/// Named vector-valued metrics and boolean events of one cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub metrics: BTreeMap<String, Vec<f64>>,
    pub events: BTreeMap<String, bool>,
}

impl Outcome {
    fn metric(&mut self, name: impl Into<String>, values: Vec<f64>) -> &mut Self {
        self.metrics.insert(name.into(), values);
        self
    }

    fn scalar(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.metric(name, vec![value])
    }

    fn event(&mut self, name: impl Into<String>, value: bool) -> &mut Self {
        self.events.insert(name.into(), value);
        self
    }
}

/// One sampled window and the `(ε, r)` cells evaluated on it.
pub struct Window {
    pub mesh: f64,
    pub field: Result<Field>,
    pub cells: Vec<(f64, f64)>,
}

pub type CellResult = ((f64, f64, f64), Result<Outcome>);

/// Reindexing data for the affine study.
#[derive(Debug, Clone, Copy)]
pub struct AffinePlan {
    pub a: Complex64,
    pub b: Complex64,
    /// `a` is a Gaussian integer and `b` keeps the lattice in place.
    pub exact: bool,
}

const INT_TOL: f64 = 1e-9;

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < INT_TOL
}

impl AffinePlan {
    pub fn new(map: &MapDescriptor, window: &GridSpec) -> Result<Self> {
        let (a, b) = map
            .as_affine()
            .ok_or_else(|| Error::config("map", "affine_covariance needs an affine map"))?;
        let o = window.origin.to_complex();
        let shift = (a * o + b - o) / window.spacing;
        let exact = near_integer(a.re) && near_integer(a.im) && near_integer(shift.re) && near_integer(shift.im);
        Ok(AffinePlan { a, b, exact })
    }

    fn forward(&self, z: ComplexPoint) -> ComplexPoint {
        (self.a * z.to_complex() + self.b).into()
    }

    fn backward(&self, w: ComplexPoint) -> ComplexPoint {
        ((w.to_complex() - self.b) / self.a).into()
    }

    /// Largest odd-sized grid on the window's lattice whose image lies in the window.
    pub fn reindexed_grid(&self, window: &GridSpec) -> Result<GridSpec> {
        let s = window.spacing;
        let margin = if self.exact { 0.0 } else { 1.0 };
        let stretch = self.a.re.abs() + self.a.im.abs();
        let c = self.backward(window.center());
        let (fx, fy) = window.to_lattice(c);
        let c = window.position_ij(0, 0).translate(fx.round() * s, fy.round() * s);
        let mut n = ((window.nx.min(window.ny) - 1) as f64 / stretch).floor() as usize + 1;
        if n % 2 == 0 {
            n -= 1;
        }
        let fits = |g: &GridSpec| {
            [(0, 0), (g.nx - 1, 0), (0, g.ny - 1), (g.nx - 1, g.ny - 1)].iter().all(|&(i, j)| {
                let (x, y) = window.to_lattice(self.forward(g.position_ij(i, j)));
                let (lo_x, hi_x) = (margin, (window.nx - 1) as f64 - margin);
                let (lo_y, hi_y) = (margin, (window.ny - 1) as f64 - margin);
                x >= lo_x - INT_TOL && x <= hi_x + INT_TOL && y >= lo_y - INT_TOL && y <= hi_y + INT_TOL
            })
        };
        while n >= 3 {
            let g = GridSpec::centered(c, s, n)?;
            if fits(&g) {
                return Ok(g);
            }
            n -= 2;
        }
        Err(Error::InvalidGrid("affine image leaves no room for a reindexed window".into()))
    }

    /// `g(x) = h(a x + b) + Q log|a|` on `grid`.
    pub fn reindex(&self, h: &Field, grid: &GridSpec, q: f64) -> Result<Field> {
        let window = h.grid();
        let shift = q * self.a.norm().ln();
        let mut values = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let y = self.forward(grid.position(idx));
            let v = if self.exact {
                let (fx, fy) = window.to_lattice(y);
                h.at(fx.round() as usize, fy.round() as usize)
            } else {
                h.bicubic(y).ok_or(Error::OutOfWindow { x: y.x, y: y.y })?
            };
            values.push(v + shift);
        }
        Field::new(*grid, values)
    }
}

pub struct Study<'a> {
    pub cfg: &'a ExperimentConfig,
    pub affine: Option<AffinePlan>,
}

impl<'a> Study<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let affine = match cfg.kind {
            ExperimentKind::AffineCovariance => {
                let map = cfg.map.as_ref().ok_or_else(|| Error::config("map", "missing"))?;
                Some(AffinePlan::new(map, &cfg.grid.spec()?)?)
            }
            _ => None,
        };
        Ok(Study { cfg, affine })
    }

    pub fn notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if let Some(plan) = &self.affine {
            notes.push(if plan.exact {
                "affine: lattice-exact reindexing".to_string()
            } else {
                "affine: interpolation mode (map does not preserve the lattice)".to_string()
            });
        }
        if self.cfg.options.zoom {
            notes.push("zoom: one base field per sample, rescaled to each r; ε scales with r".into());
        }
        notes
    }

    fn field_on(&self, grid: &GridSpec, seed: u64) -> Result<Field> {
        match self.cfg.options.constant_field {
            Some(c) => Ok(Field::constant(grid, c)),
            None => sample_field(grid, &self.cfg.sampler, seed),
        }
    }

    /// Windows of one sample in schedule order.
    pub fn windows(&self, seed: u64) -> Vec<Window> {
        let cfg = self.cfg;
        let radii: Vec<f64> = if cfg.kind == ExperimentKind::BallVolume {
            vec![cfg.radii[0]]
        } else {
            cfg.radii.clone()
        };
        if cfg.options.zoom {
            let base = cfg.grid.spec().and_then(|g| self.field_on(&g, seed));
            let r0 = cfg.radii[0];
            return radii
                .iter()
                .map(|&r| {
                    let ratio = r / r0;
                    let field = base.as_ref().map_err(Clone::clone).and_then(|f| {
                        let g0 = f.grid();
                        let z = cfg.center;
                        let c = g0.center();
                        let center = z.translate((c.x - z.x) * ratio, (c.y - z.y) * ratio);
                        let g = GridSpec::centered(center, g0.spacing * ratio, g0.nx)?;
                        Field::new(g, f.values().to_vec())
                    });
                    Window {
                        mesh: cfg.grid.spacing * ratio,
                        field,
                        cells: cfg.epsilons.iter().map(|&e| (e * ratio, r)).collect(),
                    }
                })
                .collect();
        }
        cfg.mesh_schedule()
            .into_iter()
            .map(|mesh| {
                let field = if cfg.meshes.is_empty() {
                    cfg.grid.spec()
                } else {
                    cfg.grid.at_mesh(mesh)
                }
                .and_then(|g| self.field_on(&g, seed));
                let cells = cfg.epsilons.iter().flat_map(|&e| radii.iter().map(move |&r| (e, r))).collect();
                Window { mesh, field, cells }
            })
            .collect()
    }

    pub fn evaluate(&self, w: &Window) -> Vec<CellResult> {
        let field = match &w.field {
            Ok(f) => f,
            Err(e) => return w.cells.iter().map(|&(eps, r)| ((eps, r, w.mesh), Err(e.clone()))).collect(),
        };
        if let Some(plan) = &self.affine {
            return self.affine_cells(plan, field, w);
        }
        w.cells
            .iter()
            .map(|&(eps, r)| {
                let out = match self.cfg.kind {
                    ExperimentKind::CovarianceCheck => self.covariance_cell(field, eps, r),
                    ExperimentKind::WeylCheck => self.weyl_cell(field, eps, r),
                    ExperimentKind::ConformalCovariance => self.conformal_cell(field, eps, r),
                    ExperimentKind::MeasureCovariance => self.measure_cell(field, eps, r),
                    ExperimentKind::AnnulusEvents => self.events_cell(field, eps, r),
                    ExperimentKind::BallVolume => self.ball_cell(field, eps),
                    ExperimentKind::AffineCovariance => unreachable!("handled above"),
                };
                ((eps, r, w.mesh), out)
            })
            .collect()
    }

    fn settings(&self, eps: f64, reach: f64) -> ComparisonSettings {
        let o = &self.cfg.options;
        ComparisonSettings {
            epsilon: eps,
            policy: o.policy,
            scheme: o.scheme,
            kernel: o.kernel,
            target_mesh: o.target_mesh,
            reach,
            b: o.min_separation,
            pair_budget: self.cfg.pairs.comparison,
            pair_seed: self.cfg.pairs.seed,
        }
    }

    fn map(&self) -> Result<&MapDescriptor> {
        self.cfg.map.as_ref().ok_or_else(|| Error::config("map", "missing"))
    }

    fn snapped_pairs(&self, oracle: &MetricOracle, center: ComplexPoint, r: f64) -> Result<Vec<(usize, usize)>> {
        let grid = oracle.grid();
        let snap = |p: ComplexPoint| -> Result<usize> {
            let (v, _) = grid.nearest_vertex(p).ok_or(Error::OutOfWindow { x: p.x, y: p.y })?;
            if !oracle.mask().contains(v) {
                return Err(Error::OutOfWindow { x: p.x, y: p.y });
            }
            Ok(v)
        };
        sample_pairs(center, r, self.cfg.options.min_separation, self.cfg.pairs.comparison, self.cfg.pairs.seed)
            .into_iter()
            .map(|(u, v)| Ok((snap(u)?, snap(v)?)))
            .collect()
    }

    fn covariance_cell(&self, h: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let z = self.cfg.center;
        let hr = circle_average(h, z, r)?;
        let hm = heat_mollify(h, eps)?;
        let (v, _) = h.grid().nearest_vertex(z).ok_or(Error::OutOfWindow { x: z.x, y: z.y })?;
        if !hm.valid().contains_point(h.grid().position(v)) {
            return Err(Error::OutOfWindow { x: z.x, y: z.y });
        }
        let he = hm.field().value(v);
        let mut out = Outcome::default();
        out.scalar("circle_average", hr)
            .scalar("circle_average_sq", hr * hr)
            .scalar("mollified_point_sq", he * he);
        Ok(out)
    }

    fn weyl_cell(&self, h: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let p = self.cfg.params;
        let c = self.cfg.options.shift;
        let hm = heat_mollify(h, eps)?;
        let oracle = MetricOracle::from_mollified(&hm, p, self.cfg.options.scheme)?;
        let shifted = oracle.weyl_shift(c)?;
        let scale = (p.xi() * c).exp();
        let mut metric_dev: f64 = 0.0;
        for (u, v) in self.snapped_pairs(&oracle, self.cfg.center, r)? {
            let d = oracle.distance_between(u, v)?.value;
            let ds = shifted.distance_between(u, v)?.value;
            metric_dev = metric_dev.max((ds / (scale * d) - 1.0).abs());
        }
        let m = build_measure(hm.field(), eps, p.gamma())?;
        let ms = build_measure(hm.add_constant(c).field(), eps, p.gamma())?;
        let mscale = (p.gamma() * c).exp();
        let disk = vertices_in_disk(h.grid(), self.cfg.center, r).intersection(oracle.mask())?;
        let measure_dev = disk
            .iter()
            .map(|v| (ms.cell_mass()[v] / (mscale * m.cell_mass()[v]) - 1.0).abs())
            .fold(0.0, f64::max);
        let mut out = Outcome::default();
        out.scalar("metric_rel_dev", metric_dev).scalar("measure_rel_dev", measure_dev);
        Ok(out)
    }

    fn conformal_cell(&self, h: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let p = self.cfg.params;
        let settings = self.settings(eps, self.cfg.options.reach);
        let cc = CoordinateChange::build(h, self.map()?, self.cfg.center, r, &settings, p)?;
        let pairs = cc.pairs(&settings)?;
        let ratios: Vec<f64> = pairs.iter().map(|&(d, dphi)| dphi / d).collect();
        let stat = pairs.iter().map(|&(d, dphi)| (dphi - d).abs()).fold(0.0, f64::max) / cc.normalizer();
        let stat_norm = stat / eps.powf(1.0 - p.xi() * p.q());
        let delta = self.cfg.options.delta;
        let mut out = Outcome::default();
        out.metric("ratio", ratios)
            .scalar("sup_difference", stat)
            .scalar("sup_difference_normalized", stat_norm)
            .event("F", stat <= delta)
            .event("F_normalized", stat_norm <= delta);
        Ok(out)
    }

    fn measure_cell(&self, h: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let region = vertices_in_disk(h.grid(), self.cfg.center, r);
        let m = measure_coordinate_change_ratio(h, self.map()?, &region, eps, &self.cfg.params, &self.cfg.options.measure)?;
        let mut out = Outcome::default();
        out.scalar("ratio", m.ratio)
            .scalar("source_mass", m.source_mass)
            .scalar("target_mass", m.target_mass);
        Ok(out)
    }

    fn events_cell(&self, h: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let cfg = self.cfg;
        let o = &cfg.options;
        let settings = self.settings(eps, o.reach.max(2.25));
        let cc = CoordinateChange::build(h, self.map()?, cfg.center, r, &settings, cfg.params)?;
        let ep: AnnulusEventParams = cfg.event_params(cfg.pairs.events);
        let report = evaluate_event(&cc, &ep)?;
        let mut out = Outcome::default();
        out.event("condition1", report.condition1.holds)
            .event("condition2", report.condition2.holds)
            .event("condition3", report.condition3.holds)
            .event("E", report.holds())
            .scalar("condition1_considered", report.condition1.considered as f64)
            .scalar("condition2_considered", report.condition2.considered as f64);
        if let Some(Witness::Circuit { length, crossing, .. }) = &report.condition3.witness {
            out.scalar("circuit_ratio", length / crossing);
        }
        if cfg.pairs.bilip > 0 {
            let ratio = bilip_ratio(&cc, cfg.pairs.bilip, cfg.pairs.seed)?;
            out.scalar("bilip_ratio", ratio);
            if let Some(c) = o.bilip_c {
                out.event("bilip", ratio <= c);
            }
        }
        for &alpha in &o.narrow_alphas {
            let n = narrow_annulus_length_event(
                h,
                cc.source(),
                cfg.center,
                r,
                alpha,
                o.narrow_s,
                o.narrow_big_s,
                cfg.pairs.narrow,
                cfg.pairs.seed,
            )?;
            out.event(format!("narrow_{alpha}"), n.holds);
            if let Some(m) = n.min_internal {
                out.scalar(format!("narrow_min_internal_{alpha}"), m);
            }
        }
        Ok(out)
    }

    fn ball_cell(&self, h: &Field, eps: f64) -> Result<Outcome> {
        let p = self.cfg.params;
        let hm = heat_mollify(h, eps)?;
        let oracle = MetricOracle::from_mollified(&hm, p, self.cfg.options.scheme)?;
        let measure = build_measure(hm.field(), eps, p.gamma())?;
        let escape = ball_escape_distance(&oracle, self.cfg.center)?;
        let mut radii: Vec<f64> = self.cfg.radii.iter().map(|f| f * escape).collect();
        radii.reverse();
        let profile = ball_volume_profile(&oracle, &measure, self.cfg.center, &radii)?;
        let slope = log_log_slope(&profile).ok_or(Error::NonFinite("ball-volume slope"))?;
        let mut out = Outcome::default();
        out.scalar("slope", slope)
            .scalar("escape_distance", escape)
            .metric("profile_radius", profile.iter().map(|x| x.0).collect())
            .metric("profile_mass", profile.iter().map(|x| x.1).collect());
        Ok(out)
    }

    fn affine_cells(&self, plan: &AffinePlan, h: &Field, w: &Window) -> Vec<CellResult> {
        let prepared = plan
            .reindexed_grid(h.grid())
            .and_then(|g| plan.reindex(h, &g, self.cfg.params.q()));
        w.cells
            .iter()
            .map(|&(eps, r)| {
                let out = prepared.as_ref().map_err(Clone::clone).and_then(|g| self.affine_cell(plan, h, g, eps, r));
                ((eps, r, w.mesh), out)
            })
            .collect()
    }

    /// `D_h(a z + b, a w + b)` against `D_{h(a·+b) + Q log|a|}(z, w)`, each side mollified at ε
    /// in its own coordinates and internal to the image of the reindexed valid window.
    fn affine_cell(&self, plan: &AffinePlan, h: &Field, g: &Field, eps: f64, r: f64) -> Result<Outcome> {
        let p = self.cfg.params;
        let scheme = self.cfg.options.scheme;
        let window = *h.grid();
        let gm = heat_mollify(g, eps)?;
        let hm = heat_mollify(h, eps)?;
        let gvalid = *gm.valid();
        let hvalid = VertexSet::window(&window, hm.valid())?;
        let mut mask = VertexSet::empty(&window);
        for v in hvalid.iter() {
            let (x, y) = gvalid.to_lattice(plan.backward(window.position(v)));
            let inside = |t: f64, n: usize| t >= -INT_TOL && t <= (n - 1) as f64 + INT_TOL;
            if inside(x, gvalid.nx) && inside(y, gvalid.ny) {
                mask.insert(v);
            }
        }
        let lhs = MetricOracle::new(hm.into_field(), p, mask, scheme)?;
        let rhs = MetricOracle::from_mollified(&gm, p, scheme)?;
        let gc = gvalid.center();
        if !gvalid.contains_disk(gc, r) {
            return Err(Error::CircleOutsideWindow { x: gc.x, y: gc.y, radius: r });
        }
        let mut ratios = Vec::new();
        for (u, v) in self.snapped_pairs(&rhs, gc, r)? {
            let image = |x: usize| -> Result<usize> {
                let y = plan.forward(g.grid().position(x));
                let (idx, _) = window.nearest_vertex(y).ok_or(Error::OutOfWindow { x: y.x, y: y.y })?;
                Ok(idx)
            };
            let right = rhs.distance_between(u, v)?.value;
            let left = lhs.distance_between(image(u)?, image(v)?)?.value;
            ratios.push(left / right);
        }
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        let mut out = Outcome::default();
        out.metric("ratio", ratios).scalar("median_ratio", median);
        Ok(out)
    }
}
