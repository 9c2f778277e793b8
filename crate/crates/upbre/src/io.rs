//! On-disk formats: binary sinograms and measurement sets, plot-ready CSV,
//! and image export as 16-bit PGM or raw float64.
//!
//! Binary layout. Both sinograms and measurement sets start with a 16-byte
//! header: the magic `UPBRSINO`, then `n_angles` and `n_offsets` as
//! little-endian u32. A sinogram continues with `n_angles·n_offsets` raw
//! little-endian f64 values in angle-major order. A measurement set
//! continues with three sections, each a single field tag byte (`b`, `f`,
//! `d`) followed by the same number of f64 values. Offsets are understood as
//! equally spaced on `[-1, 1]` and angles as `kπ/n_angles`, matching
//! [`crate::geometry::make_geometry`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::estimator::EstimatorCurve;
use crate::geometry::{make_geometry, GridSpec, Image, ScanGeometry};
use crate::physics::MeasurementSet;
use crate::radon::Sinogram;
use crate::select::SelectionReport;
use crate::{Error, Result};

pub const SINOGRAM_MAGIC: &[u8; 8] = b"UPBRSINO";

fn write_header(w: &mut impl Write, g: &ScanGeometry) -> Result<()> {
    w.write_all(SINOGRAM_MAGIC)?;
    w.write_all(&(g.angles().len() as u32).to_le_bytes())?;
    w.write_all(&(g.offsets().len() as u32).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(u32, u32)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SINOGRAM_MAGIC {
        return Err(Error::Format("bad magic, not an UPBRSINO file".into()));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let n_angles = u32::from_le_bytes(buf);
    r.read_exact(&mut buf)?;
    let n_offsets = u32::from_le_bytes(buf);
    Ok((n_angles, n_offsets))
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, s.geometry())?;
    write_f64s(&mut w, s.values())?;
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let mut r = BufReader::new(File::open(path)?);
    let (n_angles, n_offsets) = read_header(&mut r)?;
    let g = make_geometry(n_angles as usize, n_offsets as usize)?;
    let values = read_f64s(&mut r, g.n_rays())?;
    Sinogram::new(g, values)
}

pub fn write_sinogram_csv(path: &Path, s: &Sinogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "theta,t,value")?;
    for (i, (theta, t)) in s.geometry().rays().enumerate() {
        writeln!(w, "{theta},{t},{}", s.values()[i])?;
    }
    w.flush()?;
    Ok(())
}

const FIELD_TAGS: [u8; 3] = [b'b', b'f', b'd'];

pub fn write_measurements(path: &Path, m: &MeasurementSet, g: &ScanGeometry) -> Result<()> {
    if m.len() != g.n_rays() {
        return Err(Error::invalid("measurement length does not match geometry"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, g)?;
    for (tag, field) in FIELD_TAGS.iter().zip([&m.counts, &m.flat, &m.dark]) {
        w.write_all(std::slice::from_ref(tag))?;
        write_f64s(&mut w, field)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<(MeasurementSet, ScanGeometry)> {
    let mut r = BufReader::new(File::open(path)?);
    let (n_angles, n_offsets) = read_header(&mut r)?;
    let g = make_geometry(n_angles as usize, n_offsets as usize)?;
    let m = g.n_rays();
    let mut fields = Vec::with_capacity(3);
    for want_tag in FIELD_TAGS {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != want_tag {
            return Err(Error::Format(format!(
                "expected field tag {:?}, found {:?}",
                want_tag as char, tag[0] as char
            )));
        }
        fields.push(read_f64s(&mut r, m)?);
    }
    let dark = fields.pop().unwrap();
    let flat = fields.pop().unwrap();
    let counts = fields.pop().unwrap();
    Ok((MeasurementSet::new(counts, flat, dark)?, g))
}

/// 16-bit binary PGM, min-max scaled. Rows are written top to bottom, so the
/// highest image row (largest y) comes first.
pub fn write_image_pgm(path: &Path, img: &Image) -> Result<()> {
    let n = img.grid().n_side();
    let data = img.data();
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{n} {n}\n65535\n")?;
    for i in (0..n).rev() {
        for j in 0..n {
            let v = ((data[i * n + j] - lo) * scale).round().clamp(0.0, 65535.0) as u16;
            w.write_all(&v.to_be_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raw little-endian f64 pixels in lexicographic order, no header.
pub fn write_image_f64(path: &Path, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_f64s(&mut w, img.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_image_f64(path: &Path, grid: GridSpec) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let data = read_f64s(&mut r, grid.n_pixels())?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after image data".into()));
    }
    Image::new(grid, data)
}

pub fn write_curve_csv(path: &Path, curve: &EstimatorCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "gamma,divergence_term,trace_term,total")?;
    for e in &curve.evals {
        writeln!(
            w,
            "{},{},{},{}",
            e.gamma, e.divergence_term, e.trace_term, e.total
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials_csv(path: &Path, reports: &[SelectionReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "trial,gamma_star_est,gamma_star_sq,gamma_star_breg,rel_diff_sq,rel_diff_breg"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (k, r) in reports.iter().enumerate() {
        writeln!(
            w,
            "{k},{},{},{},{},{}",
            r.gamma_star_est,
            opt(r.gamma_star_sq),
            opt(r.gamma_star_breg),
            opt(r.rel_diff_sq),
            opt(r.rel_diff_breg)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Median and quartiles of each per-trial statistic, one row per statistic,
/// ready for boxplot rendering by external tools.
pub fn write_trial_aggregate_csv(path: &Path, reports: &[SelectionReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "statistic,min,q1,median,q3,max,n")?;
    let columns: [(&str, Box<dyn Fn(&SelectionReport) -> Option<f64>>); 5] = [
        ("gamma_star_est", Box::new(|r| Some(r.gamma_star_est))),
        ("gamma_star_sq", Box::new(|r| r.gamma_star_sq)),
        ("gamma_star_breg", Box::new(|r| r.gamma_star_breg)),
        ("rel_diff_sq", Box::new(|r| r.rel_diff_sq)),
        ("rel_diff_breg", Box::new(|r| r.rel_diff_breg)),
    ];
    for (name, get) in columns {
        let mut vals: Vec<f64> = reports.iter().filter_map(&get).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (q1, med, q3) = quartiles(&vals);
        writeln!(
            w,
            "{name},{},{q1},{med},{q3},{},{}",
            vals[0],
            vals[vals.len() - 1],
            vals.len()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Sorted minimizer values, one per row.
pub fn write_minimizers_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "rank,minimizer")?;
    for (k, v) in sorted.iter().enumerate() {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(())
}
