//! Image grid, pixel basis and the sampled Radon coordinates Θ×T.
//!
//! The image domain is always the square `[-1, 1]^2`, discretized into
//! `n × n` square pixels. Pixel `(i, j)` (1-based, `i` indexing rows from the
//! bottom, `j` columns from the left) covers the half-open box
//! `[-1+(j-1)h, -1+jh) × [-1+(i-1)h, -1+ih)` with `h = 2/n`, and is stored at
//! the lexicographic slot `n(i-1) + (j-1)`.

use crate::{Error, Result};

/// Square pixel grid on `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    n_side: usize,
}

impl GridSpec {
    pub fn new(n_side: usize) -> Result<Self> {
        if n_side == 0 {
            return Err(Error::invalid("grid side must be at least 1"));
        }
        Ok(GridSpec { n_side })
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn n_pixels(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Pixel width `h = 2/n`.
    pub fn pixel_width(&self) -> f64 {
        2.0 / self.n_side as f64
    }

    /// Lexicographic storage slot of pixel `(i, j)`, both 1-based.
    pub fn index_of(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n_side && j >= 1 && j <= self.n_side);
        self.n_side * (i - 1) + (j - 1)
    }

    /// Inverse of [`GridSpec::index_of`]; returns 1-based `(i, j)`.
    pub fn pixel_of(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.n_pixels());
        (index / self.n_side + 1, index % self.n_side + 1)
    }

    /// Center coordinates of pixel `(i, j)`, both 1-based.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.pixel_width();
        (
            -1.0 + (j as f64 - 0.5) * h,
            -1.0 + (i as f64 - 0.5) * h,
        )
    }
}

/// Pixel values in lexicographic order on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: GridSpec,
    data: Vec<f64>,
}

impl Image {
    pub fn new(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_pixels() {
            return Err(Error::invalid(format!(
                "image has {} values but the grid has {} pixels",
                data.len(),
                grid.n_pixels()
            )));
        }
        Ok(Image { grid, data })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Image {
            grid,
            data: vec![0.0; grid.n_pixels()],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// The sampled ray set Θ×T of a parallel-beam scan.
///
/// Ray `i` carries `(θ, t)` in angle-major order (all offsets of the first
/// angle, then the second, and so on); the ray itself is the line through
/// `t·(cos θ, sin θ)` with direction `(-sin θ, cos θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    offsets: Vec<f64>,
}

impl ScanGeometry {
    pub fn new(angles: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if angles.is_empty() || offsets.is_empty() {
            return Err(Error::invalid("geometry needs at least one angle and one offset"));
        }
        if !angles.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("angles must be strictly increasing"));
        }
        if !offsets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("offsets must be strictly increasing"));
        }
        if angles[0] < 0.0 || *angles.last().unwrap() >= std::f64::consts::PI {
            return Err(Error::invalid("angles must lie in [0, pi)"));
        }
        if offsets[0] < -1.0 || *offsets.last().unwrap() > 1.0 {
            return Err(Error::invalid("offsets must lie in [-1, 1]"));
        }
        Ok(ScanGeometry { angles, offsets })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn n_rays(&self) -> usize {
        self.angles.len() * self.offsets.len()
    }

    /// `(θ, t)` of ray `i` in angle-major order.
    pub fn ray(&self, i: usize) -> (f64, f64) {
        let n_off = self.offsets.len();
        (self.angles[i / n_off], self.offsets[i % n_off])
    }

    pub fn rays(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.n_rays()).map(move |i| self.ray(i))
    }
}

/// Builds the geometry with `n_angles` angles `kπ/n_angles` and `n_offsets`
/// offsets equally spaced on `[-1, 1]` inclusive.
pub fn make_geometry(n_angles: usize, n_offsets: usize) -> Result<ScanGeometry> {
    if n_angles == 0 {
        return Err(Error::invalid("n_angles must be at least 1"));
    }
    if n_offsets < 2 {
        return Err(Error::invalid("n_offsets must be at least 2"));
    }
    let angles = (0..n_angles)
        .map(|k| k as f64 * std::f64::consts::PI / n_angles as f64)
        .collect();
    let step = 2.0 / (n_offsets - 1) as f64;
    let offsets = (0..n_offsets)
        .map(|k| {
            if k + 1 == n_offsets {
                1.0
            } else {
                -1.0 + k as f64 * step
            }
        })
        .collect();
    ScanGeometry::new(angles, offsets)
}

/// The full-scale sampling scheme: 512 angles by 2048 offsets.
pub fn make_paper_geometry() -> ScanGeometry {
    make_geometry(512, 2048).expect("fixed counts are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_geometry_shape() {
        let g = make_paper_geometry();
        assert_eq!(g.n_rays(), 512 * 2048);
        assert_eq!(g.n_rays(), 1_048_576);
        assert_eq!(g.offsets()[0], -1.0);
        assert_eq!(*g.offsets().last().unwrap(), 1.0);
        assert_eq!(g.angles()[1], std::f64::consts::PI / 512.0);
        assert_eq!(g.angles()[0], 0.0);
    }

    #[test]
    fn smallest_geometry() {
        let g = make_geometry(1, 2).unwrap();
        let rays: Vec<_> = g.rays().collect();
        assert_eq!(rays, vec![(0.0, -1.0), (0.0, 1.0)]);
    }

    #[test]
    fn two_by_three() {
        let g = make_geometry(2, 3).unwrap();
        assert_eq!(g.n_rays(), 6);
        assert_eq!(g.angles()[1], std::f64::consts::PI / 2.0);
        // Angle-major ordering: the fourth ray is the second angle, first offset.
        assert_eq!(g.ray(3), (std::f64::consts::PI / 2.0, -1.0));
    }

    #[test]
    fn product_count() {
        let g = make_geometry(60, 64).unwrap();
        assert_eq!(g.n_rays(), 3840);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(make_geometry(0, 2).is_err());
        assert!(make_geometry(1, 0).is_err());
        assert!(make_geometry(1, 1).is_err());
    }

    #[test]
    fn offsets_symmetric_for_even_counts() {
        for n in [2usize, 4, 8, 96, 2048] {
            let g = make_geometry(1, n).unwrap();
            let o = g.offsets();
            for k in 0..n {
                assert!(
                    (o[k] + o[n - 1 - k]).abs() < 1e-15,
                    "offset {k} of {n} not symmetric"
                );
            }
        }
    }

    #[test]
    fn grid_requires_positive_side() {
        assert!(GridSpec::new(0).is_err());
        assert_eq!(GridSpec::new(512).unwrap().pixel_width(), 2.0 / 512.0);
    }

    #[test]
    fn image_length_checked() {
        let g = GridSpec::new(3).unwrap();
        assert!(Image::new(g, vec![0.0; 8]).is_err());
        assert!(Image::new(g, vec![0.0; 9]).is_ok());
    }

    proptest! {
        #[test]
        fn pixel_index_roundtrip(n in 1usize..40, seed in 0usize..10_000) {
            let grid = GridSpec::new(n).unwrap();
            let idx = seed % grid.n_pixels();
            let (i, j) = grid.pixel_of(idx);
            prop_assert!(i >= 1 && i <= n && j >= 1 && j <= n);
            prop_assert_eq!(grid.index_of(i, j), idx);
        }

        #[test]
        fn ray_count_is_product(na in 1usize..20, no in 2usize..40) {
            let g = make_geometry(na, no).unwrap();
            prop_assert_eq!(g.n_rays(), na * no);
        }
    }
}
