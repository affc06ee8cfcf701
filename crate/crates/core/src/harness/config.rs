use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::{EpsilonPolicy, MapDescriptor, TargetMesh};
use crate::error::{Error, Result};
use crate::events::CrossingSets;
use crate::gff::{BumpKernel, Normalization, SamplerKind};
use crate::lattice::{ComplexPoint, GridSpec};
use crate::measure::MeasureOptions;
use crate::metric::NeighborScheme;
use crate::params::LqgParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CovarianceCheck,
    WeylCheck,
    AffineCovariance,
    ConformalCovariance,
    MeasureCovariance,
    AnnulusEvents,
    BallVolume,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CovarianceCheck => "covariance_check",
            ExperimentKind::WeylCheck => "weyl_check",
            ExperimentKind::AffineCovariance => "affine_covariance",
            ExperimentKind::ConformalCovariance => "conformal_covariance",
            ExperimentKind::MeasureCovariance => "measure_covariance",
            ExperimentKind::AnnulusEvents => "annulus_events",
            ExperimentKind::BallVolume => "ball_volume",
        }
    }

    fn needs_map(&self) -> bool {
        matches!(
            self,
            ExperimentKind::AffineCovariance
                | ExperimentKind::ConformalCovariance
                | ExperimentKind::MeasureCovariance
                | ExperimentKind::AnnulusEvents
        )
    }
}

/// Base window: `n × n` vertices of spacing `spacing` centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "origin")]
    pub center: ComplexPoint,
    pub spacing: f64,
    pub n: usize,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::centered(self.center, self.spacing, self.n)
    }

    /// Same extent at another mesh spacing.
    pub fn at_mesh(&self, mesh: f64) -> Result<GridSpec> {
        let extent = (self.n - 1) as f64 * self.spacing;
        let n = (extent / mesh).round() as usize + 1;
        GridSpec::centered(self.center, mesh, n)
    }
}

fn origin() -> ComplexPoint {
    ComplexPoint::ORIGIN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairBudgets {
    pub comparison: usize,
    pub events: usize,
    pub bilip: usize,
    pub narrow: usize,
    pub seed: u64,
}

impl Default for PairBudgets {
    fn default() -> Self {
        PairBudgets {
            comparison: 16,
            events: 16,
            bilip: 8,
            narrow: 32,
            seed: 0,
        }
    }
}

/// Kind-specific knobs; each kind reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    /// Constant added to the field in `weyl_check`.
    pub shift: f64,
    /// Threshold of the event `F_r(z)`.
    pub delta: f64,
    /// Rescale the base window with `r` instead of resampling at every scale.
    pub zoom: bool,
    pub policy: EpsilonPolicy,
    pub scheme: NeighborScheme,
    pub kernel: BumpKernel,
    pub target_mesh: TargetMesh,
    pub reach: f64,
    /// Minimum pair separation as a fraction of `r`.
    pub min_separation: f64,
    pub measure: MeasureOptions,
    pub alpha: f64,
    pub big_a: f64,
    pub event_delta: f64,
    pub crossing: CrossingSets,
    pub bilip_c: Option<f64>,
    pub narrow_alphas: Vec<f64>,
    pub narrow_s: f64,
    pub narrow_big_s: f64,
    /// Use this constant field instead of sampling.
    pub constant_field: Option<f64>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            shift: 1.0,
            delta: 0.5,
            zoom: false,
            policy: EpsilonPolicy::SameEpsilon,
            scheme: NeighborScheme::King8,
            kernel: BumpKernel::default(),
            target_mesh: TargetMesh::default(),
            reach: 1.5,
            min_separation: 0.25,
            measure: MeasureOptions::default(),
            alpha: 0.75,
            big_a: 40.0,
            event_delta: 0.5,
            crossing: CrossingSets::default(),
            bilip_c: None,
            narrow_alphas: vec![0.75, 0.85, 0.95],
            narrow_s: 0.1,
            narrow_big_s: 0.2,
            constant_field: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub name: Option<String>,
}

fn default_sampler() -> SamplerKind {
    SamplerKind::bigbox(Normalization::MeanZero)
}

fn default_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "LqgParams::pure_gravity")]
    pub params: LqgParams,
    pub grid: GridConfig,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub map: Option<MapDescriptor>,
    /// Point `z` the statistics are centered at.
    #[serde(default = "origin")]
    pub center: ComplexPoint,
    pub epsilons: Vec<f64>,
    pub radii: Vec<f64>,
    /// Mesh refinements of the base window; empty means the base spacing only.
    #[serde(default)]
    pub meshes: Vec<f64>,
    #[serde(default = "default_count")]
    pub sample_count: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub pairs: PairBudgets,
    #[serde(default)]
    pub options: StudyOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

fn decreasing(field: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::config(field, "schedule must be nonempty"));
    }
    if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::config(field, format!("entries must be positive and finite, got {x}")));
    }
    if xs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config(field, "schedule must be strictly decreasing"));
    }
    Ok(())
}

/// Dotted key of the TOML line containing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut pos = 0;
    for line in text.lines() {
        let end = pos + line.len();
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if offset <= end {
            let key = t.split('=').next().unwrap_or("").trim();
            return match (table.is_empty(), key.starts_with('[') || key.is_empty()) {
                (_, true) if !table.is_empty() => table,
                (true, _) => key.to_string(),
                (false, _) => format!("{table}.{key}"),
            };
        }
        pos = end + 1;
    }
    "config".into()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| key_at(text, s.start)).unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Mesh spacings in schedule order.
    pub fn mesh_schedule(&self) -> Vec<f64> {
        if self.meshes.is_empty() {
            vec![self.grid.spacing]
        } else {
            self.meshes.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.spec().map_err(|e| Error::config("grid", e.to_string()))?;
        self.sampler.validate().map_err(|e| Error::config("sampler", e.to_string()))?;
        decreasing("epsilons", &self.epsilons)?;
        decreasing("radii", &self.radii)?;
        if !self.meshes.is_empty() {
            decreasing("meshes", &self.meshes)?;
            if self.options.zoom {
                return Err(Error::config("meshes", "zoom mode uses the base window only"));
            }
        }
        if self.sample_count == 0 {
            return Err(Error::config("sample_count", "must be at least 1"));
        }
        // zoom mode rescales ε and the spacing together, so the check at r_0 covers all scales
        let finest = self.mesh_schedule().into_iter().fold(f64::INFINITY, f64::min);
        if let Some(eps) = self.epsilons.iter().find(|&&e| e < finest) {
            return Err(Error::config(
                "epsilons",
                format!("ε = {eps} is below the grid spacing {finest}"),
            ));
        }
        match (&self.map, self.kind.needs_map()) {
            (None, true) => return Err(Error::config("map", format!("required for {}", self.kind.name()))),
            (Some(m), _) => m.validate().map_err(|e| Error::config("map", e.to_string()))?,
            _ => {}
        }
        if self.kind == ExperimentKind::AffineCovariance && self.map.as_ref().and_then(|m| m.as_affine()).is_none() {
            return Err(Error::config("map", "affine_covariance needs an affine map"));
        }
        let o = &self.options;
        if !(o.reach >= 1.0) {
            return Err(Error::config("options.reach", "must be at least 1"));
        }
        if !(o.min_separation >= 0.0 && o.min_separation < 2.0) {
            return Err(Error::config("options.min_separation", "must lie in [0, 2)"));
        }
        if !(o.delta > 0.0) {
            return Err(Error::config("options.delta", "must be positive"));
        }
        if !o.shift.is_finite() {
            return Err(Error::config("options.shift", "must be finite"));
        }
        if self.kind == ExperimentKind::AnnulusEvents {
            self.event_params(self.pairs.events.max(1))
                .validate()
                .map_err(|e| match e {
                    Error::Config { field, message } => Error::config(format!("options.{field}"), message),
                    other => other,
                })?;
            if let Some(a) = o.narrow_alphas.iter().find(|a| !(**a > 0.5 && **a < 1.0)) {
                return Err(Error::config("options.narrow_alphas", format!("{a} is outside (1/2, 1)")));
            }
            if self.pairs.events == 0 {
                return Err(Error::config("pairs.events", "must be at least 1"));
            }
        }
        if self.kind == ExperimentKind::BallVolume && self.radii.iter().any(|&f| f >= 1.0) {
            return Err(Error::config(
                "radii",
                "ball_volume radii are fractions of the escape distance and must be below 1",
            ));
        }
        if matches!(
            self.kind,
            ExperimentKind::WeylCheck | ExperimentKind::AffineCovariance | ExperimentKind::ConformalCovariance
        ) && self.pairs.comparison == 0
        {
            return Err(Error::config("pairs.comparison", "must be at least 1"));
        }
        Ok(())
    }

    pub fn event_params(&self, budget: usize) -> crate::events::AnnulusEventParams {
        crate::events::AnnulusEventParams {
            alpha: self.options.alpha,
            big_a: self.options.big_a,
            delta: self.options.event_delta,
            pair_budget: budget,
            pair_seed: self.pairs.seed,
            crossing: self.options.crossing,
        }
    }

    pub fn report_name(&self) -> String {
        self.output
            .name
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.kind.name(), self.base_seed))
    }
}
