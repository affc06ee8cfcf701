//! Real-valued lattice fields, interpolation, and the on-disk container.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! offset  size  content
//!      0     8  magic  b"LQGFLD01"
//!      8     8  nx     u64
//!     16     8  ny     u64
//!     24     8  spacing f64
//!     32     8  origin.x f64
//!     40     8  origin.y f64
//!     48  8*n   values f64, row-major (index = j * nx + i)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lattice::{ComplexPoint, GridSpec};

pub const FIELD_MAGIC: &[u8; 8] = b"LQGFLD01";

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} vertices",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Field {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(ComplexPoint) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.position(idx))).collect();
        Field {
            grid: *grid,
            values,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn add_constant(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("adding fields on different grids".into()));
        }
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Values on an aligned sub-window.
    pub fn restrict(&self, window: &GridSpec) -> Result<Field> {
        let (i0, j0) = self
            .grid
            .offset_of(window)
            .ok_or_else(|| Error::GridMismatch("restriction window is not aligned".into()))?;
        let mut values = Vec::with_capacity(window.len());
        for j in 0..window.ny {
            let row = self.grid.index(i0, j0 + j);
            values.extend_from_slice(&self.values[row..row + window.nx]);
        }
        Ok(Field {
            grid: *window,
            values,
        })
    }

    /// Bilinear interpolation; `None` outside the closed window.
    pub fn bilinear(&self, p: ComplexPoint) -> Option<f64> {
        if !self.grid.contains_point(p) {
            return None;
        }
        let (fx, fy) = self.grid.to_lattice(p);
        let i = (fx.floor().max(0.0) as usize).min(self.grid.nx - 2);
        let j = (fy.floor().max(0.0) as usize).min(self.grid.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Some(
            (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11),
        )
    }

    /// Bicubic (Keys, a = -1/2) interpolation. Needs one extra vertex on the low
    /// side and two on the high side of the containing cell; `None` otherwise.
    pub fn bicubic(&self, p: ComplexPoint) -> Option<f64> {
        let (fx, fy) = self.grid.to_lattice(p);
        if !(fx.is_finite() && fy.is_finite()) {
            return None;
        }
        let (nx, ny) = (self.grid.nx as f64, self.grid.ny as f64);
        // Snap coordinates that sit on a vertex up to rounding noise.
        let snap = |f: f64| {
            let r = f.round();
            if (f - r).abs() < 1e-10 {
                r
            } else {
                f
            }
        };
        let (fx, fy) = (snap(fx), snap(fy));
        if fx < 1.0 || fy < 1.0 || fx > nx - 2.0 || fy > ny - 2.0 {
            return None;
        }
        let i = (fx.floor() as usize).min(self.grid.nx - 3);
        let j = (fy.floor() as usize).min(self.grid.ny - 3);
        let wx = keys_weights(fx - i as f64);
        let wy = keys_weights(fy - j as f64);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let jj = j + b - 1;
            let mut row = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                row += wxa * self.at(i + a - 1, jj);
            }
            acc += wyb * row;
        }
        Some(acc)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u64).to_le_bytes())?;
        w.write_all(&self.grid.spacing.to_le_bytes())?;
        w.write_all(&self.grid.origin.x.to_le_bytes())?;
        w.write_all(&self.grid.origin.y.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let nx = u64::from_le_bytes(next(&mut r)?) as usize;
        let ny = u64::from_le_bytes(next(&mut r)?) as usize;
        let spacing = f64::from_le_bytes(next(&mut r)?);
        let ox = f64::from_le_bytes(next(&mut r)?);
        let oy = f64::from_le_bytes(next(&mut r)?);
        let grid = GridSpec::new(ComplexPoint::new(ox, oy), spacing, nx, ny)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut bytes = vec![0u8; grid.len() * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Field::new(grid, values)
    }

    /// Lossy CSV dump with columns `i,j,x,y,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["i", "j", "x", "y", "value"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for idx in 0..self.grid.len() {
            let (i, j) = self.grid.coords(idx);
            let p = self.grid.position(idx);
            out.write_record(&[
                i.to_string(),
                j.to_string(),
                format!("{:.9}", p.x),
                format!("{:.9}", p.y),
                format!("{:.9}", self.values[idx]),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Keys cubic-convolution weights for taps at offsets -1, 0, 1, 2.
fn keys_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let k_near = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let k_far = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [k_far(1.0 + t), k_near(t), k_near(1.0 - t), k_far(2.0 - t)]
}
