use std::io::{Read, Write};

use super::SignalError;

pub const SCG1_MAGIC: &[u8; 4] = b"SCG1";

/// Time-frequency magnitude map, row-major `[n_scales × n_times]`.
///
/// Row `i` belongs to `scales[i]` (ascending), column `j` to `times[j]`
/// (sample positions, fractional after resizing).
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    values: Vec<f64>,
    scales: Vec<f64>,
    times: Vec<f64>,
}

impl Scalogram {
    pub fn new(values: Vec<f64>, scales: Vec<f64>, times: Vec<f64>) -> Result<Self, SignalError> {
        let (rows, cols) = (scales.len(), times.len());
        if rows == 0 || cols == 0 {
            return Err(SignalError::EmptyMap);
        }
        if values.len() != rows * cols {
            return Err(SignalError::ShapeMismatch { rows, cols });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SignalError::Format(
                "scalogram values must be finite and non-negative".into(),
            ));
        }
        Ok(Scalogram {
            values,
            scales,
            times,
        })
    }

    /// A map whose axes are plain row/column indices.
    pub fn from_grid(values: Vec<f64>, rows: usize, cols: usize) -> Result<Self, SignalError> {
        Scalogram::new(
            values,
            (0..rows).map(|r| r as f64).collect(),
            (0..cols).map(|c| c as f64).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.scales.len()
    }

    pub fn cols(&self) -> usize {
        self.times.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Values as 32-bit floats, the network input precision.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Corner-aligned source coordinates for `out` samples over `len` positions.
fn sample_positions(len: usize, out: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|i| {
            let pos = if out == 1 || len == 1 {
                0.0
            } else {
                i as f64 * (len - 1) as f64 / (out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn lerp_axis(axis: &[f64], positions: &[(usize, usize, f64)]) -> Vec<f64> {
    positions
        .iter()
        .map(|&(lo, hi, f)| axis[lo] + (axis[hi] - axis[lo]) * f)
        .collect()
}

/// Bilinear resampling onto an `out_h × out_w` grid with corners aligned.
pub fn resize_bilinear(
    map: &Scalogram,
    out_h: usize,
    out_w: usize,
) -> Result<Scalogram, SignalError> {
    if out_h == 0 || out_w == 0 {
        return Err(SignalError::InvalidSize(out_h, out_w));
    }
    if map.rows() == out_h && map.cols() == out_w {
        return Ok(map.clone());
    }
    let ys = sample_positions(map.rows(), out_h);
    let xs = sample_positions(map.cols(), out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (map.row(y0), map.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            // convex combination; clamp away roundoff outside [top, bottom]
            let v = top + (bottom - top) * fy;
            values.push(v.clamp(top.min(bottom), top.max(bottom)));
        }
    }
    Scalogram::new(
        values,
        lerp_axis(&map.scales, &ys),
        lerp_axis(&map.times, &xs),
    )
}

/// `(v - min) / (max - min)`; a constant map becomes all zeros.
pub fn normalize_minmax(map: &Scalogram) -> Scalogram {
    let (lo, hi) = map.min_max();
    let range = hi - lo;
    let values = if range > 0.0 {
        map.values
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; map.values.len()]
    };
    Scalogram {
        values,
        scales: map.scales.clone(),
        times: map.times.clone(),
    }
}

/// 8-bit binary PGM with the largest scale in the top row. Values are
/// expected in [0, 1] and clamped.
pub fn write_pgm<W: Write>(map: &Scalogram, mut out: W) -> Result<(), SignalError> {
    write!(out, "P5\n{} {}\n255\n", map.cols(), map.rows())?;
    let mut bytes = Vec::with_capacity(map.values.len());
    for r in (0..map.rows()).rev() {
        bytes.extend(
            map.row(r)
                .iter()
                .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
        );
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Raw dump: `"SCG1"`, u32 n_scales, u32 n_times, u32 reserved (0), then
/// f32 values row-major; all little-endian.
pub fn write_scg1<W: Write>(map: &Scalogram, mut out: W) -> Result<(), SignalError> {
    let mut buf = Vec::with_capacity(16 + 4 * map.values.len());
    buf.extend_from_slice(SCG1_MAGIC);
    buf.extend_from_slice(&(map.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in &map.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads an SCG1 dump. Axes are not stored, so the result has index axes.
pub fn read_scg1<R: Read>(mut input: R) -> Result<Scalogram, SignalError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(SignalError::Format("header shorter than 16 bytes".into()));
    }
    if &bytes[..4] != SCG1_MAGIC {
        return Err(SignalError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SignalError::Format("dimensions overflow".into()))?;
    if bytes.len() - 16 != expected {
        return Err(SignalError::Format(format!(
            "expected {expected} payload bytes, found {}",
            bytes.len() - 16
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Scalogram::from_grid(values, rows, cols)
}
