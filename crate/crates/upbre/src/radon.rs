//! Matrix-free discrete Radon transform over the square-pixel basis.
//!
//! Each matrix entry is the exact intersection length of a ray with a pixel,
//! obtained by walking the ray through the grid (Siddon-style traversal).
//! Rays that lie exactly on a grid line follow the half-open pixel convention
//! `[left, right) × [bottom, top)`, so such a chord is credited to the pixel
//! on the right (respectively above).

use rayon::prelude::*;

use crate::geometry::{GridSpec, Image, ScanGeometry};
use crate::{Error, Result};

/// Radon data sampled on a [`ScanGeometry`], in line-integral units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: ScanGeometry,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: ScanGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.n_rays() {
            return Err(Error::invalid(format!(
                "sinogram has {} values for {} rays",
                values.len(),
                geometry.n_rays()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("sinogram values must be finite"));
        }
        Ok(Sinogram { geometry, values })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Walks the ray `(θ, t)` through an `n × n` grid on `[-1, 1]^2`, calling
/// `visit(slot, chord)` for every pixel the ray crosses with positive length.
///
/// The ray is parametrized as `p(s) = t(cos θ, sin θ) + s(-sin θ, cos θ)`;
/// the direction has unit norm, so chord lengths are parameter differences.
pub(crate) fn trace_ray(theta: f64, t: f64, n: usize, mut visit: impl FnMut(usize, f64)) {
    let h = 2.0 / n as f64;
    let (sin_t, cos_t) = theta.sin_cos();
    let ox = t * cos_t;
    let oy = t * sin_t;
    let dx = -sin_t;
    let dy = cos_t;

    // Parameter interval where the ray is inside the image square. Axes with
    // zero direction component apply the half-open box rule directly.
    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d == 0.0 {
            if !(-1.0..1.0).contains(&o) {
                return;
            }
        } else {
            let a = (-1.0 - o) / d;
            let b = (1.0 - o) / d;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
    }
    if s_hi <= s_lo {
        return;
    }

    // Grid-line crossing parameters along each axis, in increasing order.
    let crossings = |o: f64, d: f64| -> Vec<f64> {
        if d == 0.0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n + 1);
        let ks: Box<dyn Iterator<Item = usize>> = if d > 0.0 {
            Box::new(0..=n)
        } else {
            Box::new((0..=n).rev())
        };
        for k in ks {
            let s = (-1.0 + k as f64 * h - o) / d;
            if s > s_lo && s < s_hi {
                out.push(s);
            }
        }
        out
    };
    let xs = crossings(ox, dx);
    let ys = crossings(oy, dy);

    // Merge the two sorted crossing lists and emit one chord per segment,
    // classifying each segment by its midpoint.
    let mut prev = s_lo;
    let (mut ix, mut iy) = (0, 0);
    loop {
        let next = match (xs.get(ix), ys.get(iy)) {
            (Some(&a), Some(&b)) => {
                if a <= b {
                    ix += 1;
                    a
                } else {
                    iy += 1;
                    b
                }
            }
            (Some(&a), None) => {
                ix += 1;
                a
            }
            (None, Some(&b)) => {
                iy += 1;
                b
            }
            (None, None) => s_hi,
        };
        let len = next - prev;
        if len > 0.0 {
            let sm = 0.5 * (prev + next);
            let col = ((ox + sm * dx + 1.0) / h).floor();
            let row = ((oy + sm * dy + 1.0) / h).floor();
            if col >= 0.0 && col < n as f64 && row >= 0.0 && row < n as f64 {
                visit(row as usize * n + col as usize, len);
            }
        }
        if next >= s_hi {
            break;
        }
        prev = next;
    }
}

/// Forward projection `Rx`: line integrals of the image over every ray.
pub fn project(x: &Image, g: &ScanGeometry) -> Sinogram {
    let n = x.grid().n_side();
    let data = x.data();
    let values: Vec<f64> = (0..g.n_rays())
        .into_par_iter()
        .map(|i| {
            let (theta, t) = g.ray(i);
            let mut acc = 0.0;
            trace_ray(theta, t, n, |slot, len| acc += data[slot] * len);
            acc
        })
        .collect();
    Sinogram {
        geometry: g.clone(),
        values,
    }
}

// Fixed chunk count keeps the reduction order independent of thread
// scheduling, so backprojection is bit-reproducible.
const BACKPROJECT_CHUNKS: usize = 32;

/// Adjoint `Rᵀs` under the same chord-length weights as [`project`].
pub fn backproject(s: &Sinogram, grid: GridSpec) -> Image {
    let n = grid.n_side();
    let g = s.geometry();
    let n_angles = g.angles().len();
    let n_off = g.offsets().len();
    let chunks = BACKPROJECT_CHUNKS.min(n_angles);
    let per_chunk = n_angles.div_ceil(chunks);

    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut img = vec![0.0; grid.n_pixels()];
            let a_end = ((c + 1) * per_chunk).min(n_angles);
            for a in c * per_chunk..a_end {
                let theta = g.angles()[a];
                for (o, &t) in g.offsets().iter().enumerate() {
                    let v = s.values()[a * n_off + o];
                    if v != 0.0 {
                        trace_ray(theta, t, n, |slot, len| img[slot] += v * len);
                    }
                }
            }
            img
        })
        .collect();

    let mut out = vec![0.0; grid.n_pixels()];
    for part in partials {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    Image::new(grid, out).expect("length matches grid")
}

/// Power-method estimate of `‖R‖²`, the largest eigenvalue of `RᵀR`.
///
/// The Rayleigh quotient is nondecreasing in the iteration count; the
/// starting vector is fixed so the estimate is deterministic.
pub fn lipschitz_estimate(g: &ScanGeometry, grid: GridSpec, iters: usize) -> f64 {
    assert!(iters >= 1, "power method needs at least one iteration");
    let n_pix = grid.n_pixels();
    // Deterministic non-negative start avoids orthogonality to the leading
    // eigenvector of RᵀR, whose entries are all nonnegative.
    let mut v = Image::new(
        grid,
        (0..n_pix).map(|i| 1.0 + (i % 17) as f64 / 17.0).collect(),
    )
    .unwrap();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = backproject(&project(&v, g), grid);
        let vv: f64 = v.data().iter().map(|a| a * a).sum();
        let vw: f64 = v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        if vv == 0.0 || vw == 0.0 {
            return 0.0;
        }
        estimate = vw / vv;
        let norm = w.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut next = w;
        for a in next.data_mut() {
            *a /= norm;
        }
        v = next;
    }
    estimate
}
