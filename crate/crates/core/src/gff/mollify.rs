use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::{shrink_window, GridSpec};

/// A regularized field `h_eps` together with the sub-window on which the
/// regularization used its full, untruncated stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedField {
    field: Field,
    valid: GridSpec,
    epsilon: f64,
}

impl MollifiedField {
    pub fn new(field: Field, valid: GridSpec, epsilon: f64) -> Self {
        MollifiedField {
            field,
            valid,
            epsilon,
        }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn valid(&self) -> &GridSpec {
        &self.valid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    pub fn add_constant(&self, c: f64) -> MollifiedField {
        MollifiedField {
            field: self.field.add_constant(c),
            valid: self.valid,
            epsilon: self.epsilon,
        }
    }
}

/// Gaussian heat kernel `exp(-|w|^2 / (2 sigma^2))` with `sigma^2 = variance_factor * eps^2`.
///
/// The default factor 1/2 gives `p_{eps^2/2}(w) ∝ exp(-|w|^2/eps^2)`. Truncation is at
/// `4 * sqrt(2 sigma^2)`, i.e. `4 eps` by default, and the discrete weights are
/// renormalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernel {
    pub variance_factor: f64,
}

impl Default for HeatKernel {
    fn default() -> Self {
        HeatKernel {
            variance_factor: 0.5,
        }
    }
}

impl HeatKernel {
    pub fn truncation_radius(&self, epsilon: f64) -> f64 {
        4.0 * (2.0 * self.variance_factor).sqrt() * epsilon
    }

    /// Normalized taps `(di, dj, weight)` on a lattice of the given spacing.
    pub fn taps(&self, epsilon: f64, spacing: f64) -> Vec<(isize, isize, f64)> {
        let sigma2 = self.variance_factor * epsilon * epsilon;
        let cutoff = self.truncation_radius(epsilon);
        let reach = (cutoff / spacing + 1e-9).floor() as isize;
        let mut taps = Vec::new();
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let r2 = ((di * di + dj * dj) as f64) * spacing * spacing;
                if r2.sqrt() <= cutoff * (1.0 + 1e-12) {
                    taps.push((di, dj, (-r2 / (2.0 * sigma2)).exp()));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= total;
        }
        taps
    }

    pub fn mollify(&self, field: &Field, epsilon: f64) -> Result<MollifiedField> {
        let grid = field.grid();
        if !(self.variance_factor > 0.0) {
            return Err(Error::InvalidSampler("heat kernel variance must be positive".into()));
        }
        if epsilon < grid.spacing * (1.0 - 1e-9) {
            return Err(Error::EpsilonTooSmall {
                epsilon,
                spacing: grid.spacing,
            });
        }
        let cutoff = self.truncation_radius(epsilon);
        let valid = shrink_window(grid, cutoff)?;
        let taps = self.taps(epsilon, grid.spacing);
        let reach = taps.iter().map(|t| t.0.abs()).max().unwrap_or(0) as usize;
        let (nx, ny) = (grid.nx, grid.ny);
        let src = field.values();
        let flat: Vec<(isize, f64)> = taps
            .iter()
            .map(|&(di, dj, w)| (dj * nx as isize + di, w))
            .collect();
        let mut out = vec![0.0; grid.len()];
        for j in 0..ny {
            let interior_row = j >= reach && j + reach < ny;
            for i in 0..nx {
                let idx = grid.index(i, j);
                if interior_row && i >= reach && i + reach < nx {
                    let mut acc = 0.0;
                    for &(off, w) in &flat {
                        acc += w * src[(idx as isize + off) as usize];
                    }
                    out[idx] = acc;
                } else {
                    // truncated stencil near the boundary, renormalized to unit mass
                    let (mut acc, mut mass) = (0.0, 0.0);
                    for &(di, dj, w) in &taps {
                        let (ii, jj) = (i as isize + di, j as isize + dj);
                        if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                            acc += w * src[grid.index(ii as usize, jj as usize)];
                            mass += w;
                        }
                    }
                    out[idx] = acc / mass;
                }
            }
        }
        Ok(MollifiedField::new(Field::new(*grid, out)?, valid, epsilon))
    }
}

/// Heat-kernel mollification with the default kernel.
pub fn heat_mollify(field: &Field, epsilon: f64) -> Result<MollifiedField> {
    HeatKernel::default().mollify(field, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ComplexPoint;

    fn grid() -> GridSpec {
        GridSpec::centered(ComplexPoint::ORIGIN, 0.125, 65).unwrap()
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let f = Field::constant(&grid(), 0.7);
        let m = heat_mollify(&f, 0.5).unwrap();
        assert!(m.field().values().iter().all(|&v| (v - 0.7).abs() < 1e-14));
        assert_eq!(m.valid().nx, 65 - 2 * 16);
    }

    #[test]
    fn affine_fields_are_preserved_on_valid_window() {
        let g = grid();
        let f = Field::from_fn(&g, |p| 3.0 * p.x - 0.5 * p.y + 1.0);
        let m = heat_mollify(&f, 0.5).unwrap();
        let (i0, j0) = g.offset_of(m.valid()).unwrap();
        for j in j0..j0 + m.valid().ny {
            for i in i0..i0 + m.valid().nx {
                assert!((m.field().at(i, j) - f.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spike_profile_decays_like_the_kernel() {
        let g = GridSpec::centered(ComplexPoint::ORIGIN, 0.125, 129).unwrap();
        let eps = 8.0 * g.spacing;
        let center = g.index(64, 64);
        let f = Field::from_fn(&g, |p| if p.dist(ComplexPoint::ORIGIN) < 1e-9 { 1.0 } else { 0.0 });
        assert_eq!(f.value(center), 1.0);
        let m = heat_mollify(&f, eps).unwrap();
        let ratio = m.field().at(72, 64) / m.field().at(64, 64);
        assert!((ratio / (-1.0f64).exp() - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn epsilon_below_mesh_is_rejected() {
        let f = Field::constant(&grid(), 0.0);
        assert!(matches!(heat_mollify(&f, 0.1), Err(Error::EpsilonTooSmall { .. })));
    }

    #[test]
    fn truncated_tail_mass_is_small() {
        // untruncated mass on a wide stencil vs the 4-eps truncation
        let k = HeatKernel::default();
        let eps = 1.0;
        let h = 0.05;
        let mut inside = 0.0;
        let mut total = 0.0;
        for j in -200i32..=200 {
            for i in -200i32..=200 {
                let r2 = ((i * i + j * j) as f64) * h * h;
                let w = (-r2 / (eps * eps)).exp();
                total += w;
                if r2.sqrt() <= k.truncation_radius(eps) {
                    inside += w;
                }
            }
        }
        assert!(1.0 - inside / total < 1e-6);
    }
}
