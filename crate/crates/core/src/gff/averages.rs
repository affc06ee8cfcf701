use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::gff::MollifiedField;
use crate::lattice::{shrink_window, ComplexPoint, GridSpec};

/// Mean of the bilinearly interpolated field over `max(16, ceil(2 pi r / spacing))`
/// equally spaced points of `∂B_radius(center)`.
pub fn circle_average(field: &Field, center: ComplexPoint, radius: f64) -> Result<f64> {
    let grid = field.grid();
    if radius < 2.0 * grid.spacing * (1.0 - 1e-9) {
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
    Ok(circle_mean_unchecked(field, center, radius))
}

fn circle_points(radius: f64, spacing: f64) -> usize {
    ((2.0 * PI * radius / spacing).ceil() as usize).max(16)
}

fn circle_mean_unchecked(field: &Field, center: ComplexPoint, radius: f64) -> f64 {
    let m = circle_points(radius, field.grid().spacing);
    let mut acc = 0.0;
    for k in 0..m {
        let theta = 2.0 * PI * k as f64 / m as f64;
        let p = center.translate(radius * theta.cos(), radius * theta.sin());
        acc += field
            .bilinear(p)
            .expect("circle checked to lie inside the window");
    }
    acc / m as f64
}

/// Circle-average regularization `h_eps(z)` at every vertex whose circle fits in the window.
///
/// Vertices outside the valid sub-window keep their raw values.
pub fn circle_average_field(field: &Field, epsilon: f64) -> Result<MollifiedField> {
    let grid = field.grid();
    if epsilon < grid.spacing * (1.0 - 1e-9) {
        return Err(Error::EpsilonTooSmall {
            epsilon,
            spacing: grid.spacing,
        });
    }
    let valid = shrink_window(grid, epsilon)?;
    let (i0, j0) = grid.offset_of(&valid).expect("shrunk window is aligned");
    let mut values = field.values().to_vec();
    // radius >= spacing here; the 2-spacing floor of circle_average is a precondition
    // of the single-circle query only
    let m = circle_points(epsilon, grid.spacing);
    let dirs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / m as f64;
            (epsilon * t.cos(), epsilon * t.sin())
        })
        .collect();
    for j in j0..j0 + valid.ny {
        for i in i0..i0 + valid.nx {
            let c = grid.position_ij(i, j);
            let acc: f64 = dirs
                .iter()
                .map(|&(dx, dy)| field.bilinear(c.translate(dx, dy)).unwrap_or_else(|| field.at(i, j)))
                .sum();
            values[grid.index(i, j)] = acc / m as f64;
        }
    }
    Ok(MollifiedField::new(Field::new(*grid, values)?, valid, epsilon))
}

/// Radial bump profile `c * exp(-1 / (1 - |w|^2))` on the unit disk, `c` fixing unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpKernel {
    #[default]
    Exponential,
}

/// Integral of `exp(-1/(1-|w|^2))` over the unit disk: `pi * (e^{-1} - E1(1))`.
const EXP_BUMP_MASS: f64 = PI * 0.148_495_506_775_922_05;

impl BumpKernel {
    /// Continuum profile at radius `rho = |w|`.
    pub fn profile(&self, rho: f64) -> f64 {
        match self {
            BumpKernel::Exponential => {
                if rho >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - rho * rho)).exp() / EXP_BUMP_MASS
                }
            }
        }
    }

    /// Places the kernel at `(center, radius)`; weights renormalized to sum to one.
    pub fn place(&self, grid: &GridSpec, center: ComplexPoint, radius: f64) -> Result<PlacedBump> {
        if !grid.contains_disk(center, radius) {
            return Err(Error::SupportOutsideWindow {
                x: center.x,
                y: center.y,
                radius,
            });
        }
        let mut weights = Vec::new();
        if let Some(((i0, i1), (j0, j1))) = grid.index_box(center, radius) {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let rho = grid.position_ij(i, j).dist(center) / radius;
                    let w = self.profile(rho);
                    if w > 0.0 {
                        weights.push((grid.index(i, j), w));
                    }
                }
            }
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::RadiusTooSmall {
                radius,
                spacing: grid.spacing,
            });
        }
        for (_, w) in &mut weights {
            *w /= total;
        }
        Ok(PlacedBump {
            grid: *grid,
            weights,
        })
    }
}

/// Discrete kernel weights after placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedBump {
    grid: GridSpec,
    weights: Vec<(usize, f64)>,
}

impl PlacedBump {
    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    pub fn apply(&self, field: &Field) -> Result<f64> {
        if !self.grid.same_as(field.grid()) {
            return Err(Error::GridMismatch("kernel placed on another grid".into()));
        }
        Ok(self.weights.iter().map(|&(idx, w)| w * field.value(idx)).sum())
    }
}

/// Smoothed average `h_{f,r}(z)`: the field paired with the bump rescaled to `B_r(z)`.
pub fn smoothed_average(
    field: &Field,
    kernel: &BumpKernel,
    center: ComplexPoint,
    radius: f64,
) -> Result<f64> {
    kernel.place(field.grid(), center, radius)?.apply(field)
}
