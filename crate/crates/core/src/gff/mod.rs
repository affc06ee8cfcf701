//! Discrete Gaussian free field samplers and field observables.
//!
//! Covariances follow the convention in which the Dirichlet inner product is
//! `(1/2pi) * integral |grad g|^2`: the zero-boundary lattice field has covariance
//! `2pi * L^{-1}` with `L` the combinatorial Dirichlet Laplacian (diagonal 4),
//! so the variance of a circle average grows by `log 2` per halving of the radius.

mod averages;
mod dst;
mod mollify;

pub use averages::{circle_average, circle_average_field, smoothed_average, BumpKernel, PlacedBump};
pub use dst::Dst1;
pub use mollify::{heat_mollify, HeatKernel, MollifiedField};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::{ComplexPoint, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerTag {
    ZeroBoundarySpectral,
    WholePlaneBigbox,
    WholePlaneTorus,
}

/// Additive normalization applied to whole-plane proxies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    CircleAverage {
        #[serde(default = "origin")]
        center: ComplexPoint,
        radius: f64,
    },
    SmoothedAverage {
        #[serde(default = "origin")]
        center: ComplexPoint,
        radius: f64,
    },
    MeanZero,
}

fn origin() -> ComplexPoint {
    ComplexPoint::ORIGIN
}

fn default_expansion() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerKind {
    pub tag: SamplerTag,
    #[serde(default = "default_expansion")]
    pub expansion_factor: f64,
    pub normalization: Normalization,
}

impl SamplerKind {
    pub fn bigbox(normalization: Normalization) -> Self {
        SamplerKind {
            tag: SamplerTag::WholePlaneBigbox,
            expansion_factor: default_expansion(),
            normalization,
        }
    }

    pub fn torus(normalization: Normalization) -> Self {
        SamplerKind {
            tag: SamplerTag::WholePlaneTorus,
            expansion_factor: default_expansion(),
            normalization,
        }
    }

    pub fn zero_boundary() -> Self {
        SamplerKind {
            tag: SamplerTag::ZeroBoundarySpectral,
            expansion_factor: 1.0,
            normalization: Normalization::MeanZero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tag != SamplerTag::ZeroBoundarySpectral
            && !(self.expansion_factor >= 2.0 && self.expansion_factor.is_finite())
        {
            return Err(Error::InvalidSampler(format!(
                "expansion_factor must be at least 2, got {}",
                self.expansion_factor
            )));
        }
        Ok(())
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Zero-boundary GFF on `grid`: boundary vertices are exactly 0 and the interior
/// covariance is `2pi` times the inverse Dirichlet Laplacian.
pub fn sample_zero_boundary(grid: &GridSpec, seed: u64) -> Result<Field> {
    if grid.nx < 3 || grid.ny < 3 {
        return Err(Error::InvalidGrid(format!(
            "zero-boundary sampling needs an interior vertex, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    let values = zero_boundary_rows(grid, seed, 0, grid.ny - 1);
    Field::new(*grid, values)
}

/// Rows `j_lo..=j_hi` of the zero-boundary sample for `(grid, seed)`.
///
/// All spectral coefficients are drawn in a fixed order, so any row range agrees
/// with the corresponding rows of the full sample.
fn zero_boundary_rows(grid: &GridSpec, seed: u64, j_lo: usize, j_hi: usize) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let m = nx - 2;
    let n = ny - 2;
    let mut rng = rng_for(seed);
    let norm = (2.0 / (m + 1) as f64).sqrt() * (2.0 / (n + 1) as f64).sqrt();
    let sx: Vec<f64> = (1..=m)
        .map(|k| 4.0 * (PI * k as f64 / (2.0 * (m + 1) as f64)).sin().powi(2))
        .collect();
    let sy: Vec<f64> = (1..=n)
        .map(|l| 4.0 * (PI * l as f64 / (2.0 * (n + 1) as f64)).sin().powi(2))
        .collect();

    // coefficients stored column-major: coef[k * n + l]
    let mut coef = vec![0.0; m * n];
    for k in 0..m {
        for l in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            coef[k * n + l] = z * norm * (2.0 * PI / (sx[k] + sy[l])).sqrt();
        }
    }

    // interior rows requested (grid row j <-> interior index j - 1)
    let r_lo = j_lo.max(1);
    let r_hi = j_hi.min(ny - 2);
    let rows: Vec<usize> = if r_lo <= r_hi { (r_lo..=r_hi).collect() } else { Vec::new() };
    let mut partial = vec![0.0; rows.len() * m];

    let mut dst_y = Dst1::new(n);
    let mut k = 0;
    while k < m {
        if k + 1 < m {
            let (left, right) = coef.split_at_mut((k + 1) * n);
            let a = &mut left[k * n..];
            let b = &mut right[..n];
            dst_y.transform_pair(a, b);
            for (r, &j) in rows.iter().enumerate() {
                partial[r * m + k] = coef[k * n + j - 1];
                partial[r * m + k + 1] = coef[(k + 1) * n + j - 1];
            }
            k += 2;
        } else {
            dst_y.transform(&mut coef[k * n..(k + 1) * n]);
            for (r, &j) in rows.iter().enumerate() {
                partial[r * m + k] = coef[k * n + j - 1];
            }
            k += 1;
        }
    }

    let mut dst_x = Dst1::new(m);
    let mut chunks = partial.chunks_exact_mut(m);
    loop {
        match (chunks.next(), chunks.next()) {
            (Some(a), Some(b)) => dst_x.transform_pair(a, b),
            (Some(a), None) => {
                dst_x.transform(a);
                break;
            }
            _ => break,
        }
    }

    let mut out = vec![0.0; (j_hi - j_lo + 1) * nx];
    for (r, &j) in rows.iter().enumerate() {
        let dst_row = &mut out[(j - j_lo) * nx..(j - j_lo + 1) * nx];
        dst_row[1..=m].copy_from_slice(&partial[r * m..(r + 1) * m]);
    }
    out
}

/// Smallest `2^p + 1 >= n`, which keeps the sine transforms at power-of-two FFT sizes.
fn fft_friendly(n: usize) -> usize {
    (n.saturating_sub(1)).next_power_of_two() + 1
}

/// Whole-plane GFF proxy on `window`, normalized as requested.
pub fn sample_whole_plane_proxy(window: &GridSpec, kind: &SamplerKind, seed: u64) -> Result<Field> {
    kind.validate()?;
    let raw = match kind.tag {
        SamplerTag::WholePlaneBigbox => sample_bigbox_raw(window, kind.expansion_factor, seed)?,
        SamplerTag::WholePlaneTorus => sample_torus_raw(window, kind.expansion_factor, seed)?,
        SamplerTag::ZeroBoundarySpectral => {
            return Err(Error::InvalidSampler(
                "whole-plane proxy requested with the zero-boundary sampler".into(),
            ))
        }
    };
    normalize(raw, &kind.normalization)
}

/// Dispatches on the sampler tag; zero-boundary samples are returned unnormalized.
pub fn sample_field(window: &GridSpec, kind: &SamplerKind, seed: u64) -> Result<Field> {
    match kind.tag {
        SamplerTag::ZeroBoundarySpectral => sample_zero_boundary(window, seed),
        _ => sample_whole_plane_proxy(window, kind, seed),
    }
}

/// The statistic `normalization` pins to zero, evaluated on `field`.
pub fn normalization_statistic(field: &Field, normalization: &Normalization) -> Result<f64> {
    match *normalization {
        Normalization::CircleAverage { center, radius } => circle_average(field, center, radius),
        Normalization::SmoothedAverage { center, radius } => {
            smoothed_average(field, &BumpKernel::default(), center, radius)
        }
        Normalization::MeanZero => Ok(field.mean()),
    }
}

fn normalize(field: Field, normalization: &Normalization) -> Result<Field> {
    let stat = normalization_statistic(&field, normalization)?;
    Ok(field.add_constant(-stat))
}

fn sample_bigbox_raw(window: &GridSpec, expansion: f64, seed: u64) -> Result<Field> {
    let side = window.nx.max(window.ny) - 1;
    let big = fft_friendly((expansion * side as f64).ceil() as usize + 1);
    let i0 = (big - window.nx) / 2;
    let j0 = (big - window.ny) / 2;
    if i0 == 0 || j0 == 0 {
        return Err(Error::InvalidSampler(
            "window too large relative to the enlarged lattice".into(),
        ));
    }
    let box_grid = GridSpec::new(
        window.origin.translate(-(i0 as f64) * window.spacing, -(j0 as f64) * window.spacing),
        window.spacing,
        big,
        big,
    )?;
    let rows = zero_boundary_rows(&box_grid, seed, j0, j0 + window.ny - 1);
    let mut values = Vec::with_capacity(window.len());
    for r in 0..window.ny {
        values.extend_from_slice(&rows[r * big + i0..r * big + i0 + window.nx]);
    }
    Field::new(*window, values)
}

fn sample_torus_raw(window: &GridSpec, expansion: f64, seed: u64) -> Result<Field> {
    let side = window.nx.max(window.ny);
    let n = ((expansion * side as f64).ceil() as usize).next_power_of_two();
    if n < window.nx.max(window.ny) * 2 {
        return Err(Error::InvalidSampler(
            "window too large relative to the periodic lattice".into(),
        ));
    }
    let mut rng = rng_for(seed);
    let s: Vec<f64> = (0..n)
        .map(|k| 4.0 * (PI * k as f64 / n as f64).sin().powi(2))
        .collect();
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for l in 0..n {
        for k in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let lambda = s[k] + s[l];
            if k == 0 && l == 0 {
                continue;
            }
            let c = (2.0 * PI / (lambda * (n * n) as f64)).sqrt();
            buf[l * n + k] = Complex::new(a * c, b * c);
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    // columns only for the rows and columns the window needs
    let mut col = vec![Complex::new(0.0, 0.0); n];
    let mut values = vec![0.0; window.len()];
    for i in 0..window.nx {
        for l in 0..n {
            col[l] = buf[l * n + i];
        }
        fft.process(&mut col);
        for j in 0..window.ny {
            values[j * window.nx + i] = col[j].re;
        }
    }
    Field::new(*window, values)
}
