//! Lattice grids shared by the spectrum and measure modules: a Fourier grid on
//! (1/R) Z^dim restricted to a centered box, and a midpoint spatial grid.

use crate::error::{Result, SalemError};

/// The lattice (1/R) Z^dim intersected with the box |xi| <= half/R (max-norm).
/// R is a power of two so FFT oracles and integer frequency shifts land
/// exactly on grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierGrid {
    pub dim: usize,
    /// Samples per unit length along each axis.
    pub r: u32,
    /// Index range per axis: -half ..= half.
    pub half: i64,
}

impl FourierGrid {
    pub fn new(dim: usize, r: u32, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(SalemError::Input("grid dimension must be positive".into()));
        }
        if r == 0 || !r.is_power_of_two() {
            return Err(SalemError::Input(format!(
                "grid resolution R = {r} must be a positive power of two"
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(SalemError::Input(format!(
                "grid radius {radius} must be positive and finite"
            )));
        }
        let half = (radius * r as f64).ceil() as i64;
        Ok(FourierGrid { dim, r, half })
    }

    /// Box radius in frequency units.
    pub fn radius(&self) -> f64 {
        self.half as f64 / self.r as f64
    }

    pub fn axis_len(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.axis_len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index of the lattice index vector (entries in
    /// -half ..= half), or None if outside the box.
    pub fn flat(&self, idx: &[i64]) -> Option<usize> {
        debug_assert_eq!(idx.len(), self.dim);
        let axis = self.axis_len();
        let mut flat = 0usize;
        for &c in idx {
            if c < -self.half || c > self.half {
                return None;
            }
            flat = flat * axis + (c + self.half) as usize;
        }
        Some(flat)
    }

    /// Lattice index vector of a flat index.
    pub fn index(&self, mut flat: usize) -> Vec<i64> {
        let axis = self.axis_len();
        let mut idx = vec![0i64; self.dim];
        for d in (0..self.dim).rev() {
            idx[d] = (flat % axis) as i64 - self.half;
            flat /= axis;
        }
        idx
    }

    /// Frequency coordinates of a flat index.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .into_iter()
            .map(|c| c as f64 / self.r as f64)
            .collect()
    }

    /// Max-norm of the frequency at a flat index.
    pub fn point_norm(&self, flat: usize) -> f64 {
        self.index(flat)
            .into_iter()
            .map(|c| (c as f64 / self.r as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform midpoint grid over [lo, hi]^dim with per_axis cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub dim: usize,
    pub per_axis: usize,
    pub lo: f64,
    pub hi: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, per_axis: usize, lo: f64, hi: f64) -> Result<Self> {
        if dim == 0 || per_axis == 0 {
            return Err(SalemError::Input(
                "spatial grid needs positive dim and cell count".into(),
            ));
        }
        if !(lo < hi) {
            return Err(SalemError::Input(format!(
                "spatial grid needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(SpatialGrid {
            dim,
            per_axis,
            lo,
            hi,
        })
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.step().powi(self.dim as i32)
    }

    /// Midpoint of the cell with the given flat index (row-major).
    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        let h = self.step();
        for d in (0..self.dim).rev() {
            let i = flat % self.per_axis;
            flat /= self.per_axis;
            x[d] = self.lo + (i as f64 + 0.5) * h;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_grid_roundtrip() {
        let g = FourierGrid::new(2, 8, 3.0).unwrap();
        assert_eq!(g.half, 24);
        assert_eq!(g.axis_len(), 49);
        assert_eq!(g.len(), 49 * 49);
        for flat in [0usize, 1, 48, 49, 1200, g.len() - 1] {
            let idx = g.index(flat);
            assert_eq!(g.flat(&idx), Some(flat));
        }
        assert_eq!(g.flat(&[0, 0]), Some(g.len() / 2));
        assert_eq!(g.point(g.len() / 2), vec![0.0, 0.0]);
        assert_eq!(g.flat(&[25, 0]), None);
    }

    #[test]
    fn fourier_grid_spacing_and_norm() {
        let g = FourierGrid::new(1, 4, 2.0).unwrap();
        let center = g.flat(&[0]).unwrap();
        assert_eq!(g.point(center + 1), vec![0.25]);
        assert_eq!(g.point_norm(center + 8), 2.0);
    }

    #[test]
    fn fourier_grid_rejects_bad_resolution() {
        assert!(FourierGrid::new(1, 3, 2.0).is_err());
        assert!(FourierGrid::new(1, 0, 2.0).is_err());
        assert!(FourierGrid::new(0, 4, 2.0).is_err());
        assert!(FourierGrid::new(1, 4, -1.0).is_err());
    }

    #[test]
    fn spatial_grid_midpoints() {
        let g = SpatialGrid::new(1, 4, -1.0, 1.0).unwrap();
        assert_eq!(g.step(), 0.5);
        assert_eq!(g.point(0), vec![-0.75]);
        assert_eq!(g.point(3), vec![0.75]);
        let g2 = SpatialGrid::new(2, 3, 0.0, 1.0).unwrap();
        assert_eq!(g2.len(), 9);
        let p = g2.point(5);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn spatial_grid_cells_tile_the_box() {
        let g = SpatialGrid::new(2, 8, -1.0, 1.0).unwrap();
        let total: f64 = (0..g.len()).map(|_| g.cell_volume()).sum();
        assert!((total - 4.0).abs() < 1e-12);
    }
}
