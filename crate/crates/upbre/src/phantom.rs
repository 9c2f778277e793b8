//! Ellipse phantoms rendered at arbitrary resolution.
//!
//! Data can be simulated on a finer grid than the reconstruction to avoid
//! the inverse crime; rendering samples each ellipse indicator at pixel
//! centers and sums the additive intensities.

use std::path::Path;

use rayon::prelude::*;

use crate::geometry::{GridSpec, Image};
use crate::{Error, Result};

/// One additive ellipse: center, semi-axes, rotation and intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let phi = self.rotation_deg.to_radians();
        let (sin_p, cos_p) = phi.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let xr = dx * cos_p + dy * sin_p;
        let yr = -dx * sin_p + dy * cos_p;
        (xr / self.semi_a).powi(2) + (yr / self.semi_b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsePhantom {
    ellipses: Vec<Ellipse>,
}

impl EllipsePhantom {
    pub fn new(ellipses: Vec<Ellipse>) -> Result<Self> {
        for (k, e) in ellipses.iter().enumerate() {
            if e.semi_a <= 0.0 || e.semi_b <= 0.0 {
                return Err(Error::invalid(format!(
                    "ellipse {k} has non-positive semi-axes"
                )));
            }
        }
        Ok(EllipsePhantom { ellipses })
    }

    pub fn empty() -> Self {
        EllipsePhantom { ellipses: Vec::new() }
    }

    pub fn ellipses(&self) -> &[Ellipse] {
        &self.ellipses
    }

    /// The classic ten-ellipse Shepp-Logan head phantom with the original
    /// (low-contrast) intensities.
    pub fn shepp_logan() -> Self {
        // Columns: intensity, semi_a, semi_b, center_x, center_y, rotation.
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
            (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
            (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
            (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
            (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
            (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
            (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
            (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
            (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
            (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
        ];
        EllipsePhantom {
            ellipses: TABLE
                .iter()
                .map(|&(intensity, semi_a, semi_b, center_x, center_y, rotation_deg)| Ellipse {
                    center_x,
                    center_y,
                    semi_a,
                    semi_b,
                    rotation_deg,
                    intensity,
                })
                .collect(),
        }
    }

    /// Loads ellipse rows from a CSV file with columns
    /// `center_x,center_y,semi_a,semi_b,rotation_deg,intensity`.
    /// Lines starting with `#` are skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut ellipses = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 6 comma-separated fields",
                    path.display(),
                    ln + 1
                )));
            }
            let mut vals = [0.0f64; 6];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| {
                    Error::Format(format!("{}:{}: bad number {f:?}", path.display(), ln + 1))
                })?;
            }
            ellipses.push(Ellipse {
                center_x: vals[0],
                center_y: vals[1],
                semi_a: vals[2],
                semi_b: vals[3],
                rotation_deg: vals[4],
                intensity: vals[5],
            });
        }
        EllipsePhantom::new(ellipses)
    }

    /// Rasterizes the phantom at pixel centers.
    pub fn render(&self, grid: GridSpec) -> Image {
        let n = grid.n_side();
        let data: Vec<f64> = (0..grid.n_pixels())
            .into_par_iter()
            .map(|slot| {
                let (i, j) = (slot / n + 1, slot % n + 1);
                let (x, y) = grid.pixel_center(i, j);
                self.ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.intensity)
                    .sum()
            })
            .collect();
        Image::new(grid, data).expect("length matches grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_phantom_renders_zero() {
        let grid = GridSpec::new(16).unwrap();
        let img = EllipsePhantom::empty().render(grid);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_disk_on_single_pixel() {
        let disk = EllipsePhantom::new(vec![Ellipse {
            center_x: 0.0,
            center_y: 0.0,
            semi_a: 1.0,
            semi_b: 1.0,
            rotation_deg: 0.0,
            intensity: 1.0,
        }])
        .unwrap();
        let grid = GridSpec::new(1).unwrap();
        let img = disk.render(grid);
        assert_eq!(img.data(), &[1.0]);
    }

    #[test]
    fn center_pixel_matches_point_oracle() {
        let p = EllipsePhantom::shepp_logan();
        let grid = GridSpec::new(64).unwrap();
        let img = p.render(grid);
        // 64 is even, so the pixel (33, 33) center sits at (h/2, h/2) near the
        // origin; the rendered value must equal the sum over containing
        // ellipses at exactly that point.
        let (i, j) = (33, 33);
        let (x, y) = grid.pixel_center(i, j);
        let want: f64 = p
            .ellipses()
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        assert_eq!(img.data()[grid.index_of(i, j)], want);
        // Near the origin only the two head ellipses overlap.
        assert!((want - 1.02).abs() < 1e-12);
    }

    #[test]
    fn intensity_range_within_bounds() {
        let p = EllipsePhantom::shepp_logan();
        let img = p.render(GridSpec::new(128).unwrap());
        for &v in img.data() {
            assert!((0.0..=2.0).contains(&v), "value {v} out of range");
        }
    }

    #[test]
    fn block_average_consistency() {
        // Averaging a fine render down to the coarse grid should differ from
        // the coarse render only on ellipse-boundary pixels.
        let p = EllipsePhantom::shepp_logan();
        let fine_n = 512;
        let coarse_n = 128;
        let f = fine_n / coarse_n;
        let fine = p.render(GridSpec::new(fine_n).unwrap());
        let coarse = p.render(GridSpec::new(coarse_n).unwrap());
        let max_intensity = p
            .ellipses()
            .iter()
            .map(|e| e.intensity.abs())
            .fold(0.0, f64::max);
        let mut off = 0usize;
        for ci in 0..coarse_n {
            for cj in 0..coarse_n {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += fine.data()[(ci * f + di) * fine_n + cj * f + dj];
                    }
                }
                let avg = acc / (f * f) as f64;
                if (avg - coarse.data()[ci * coarse_n + cj]).abs() > max_intensity {
                    off += 1;
                }
            }
        }
        assert!(
            (off as f64) <= 0.02 * (coarse_n * coarse_n) as f64,
            "{off} pixels disagree beyond one ellipse intensity"
        );
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ellipses.csv");
        std::fs::write(&path, "# cx,cy,a,b,rot,intensity\n0.1,-0.2,0.5,0.4,30,1.5\n").unwrap();
        let p = EllipsePhantom::from_csv(&path).unwrap();
        assert_eq!(p.ellipses().len(), 1);
        assert_eq!(p.ellipses()[0].rotation_deg, 30.0);
        assert!(EllipsePhantom::from_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn rejects_degenerate_axes() {
        let bad = Ellipse {
            center_x: 0.0,
            center_y: 0.0,
            semi_a: 0.0,
            semi_b: 1.0,
            rotation_deg: 0.0,
            intensity: 1.0,
        };
        assert!(EllipsePhantom::new(vec![bad]).is_err());
    }
}
