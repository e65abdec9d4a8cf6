//! Orthonormal 2-D Haar transform.
//!
//! For each 2x2 block `[a b; c d]`:
//!
//! ```text
//! approx     = (a + b + c + d) / 2
//! horizontal = (a + b - c - d) / 2   high-pass down the rows
//! vertical   = (a - b + c - d) / 2   high-pass across the columns
//! diagonal   = (a - b - c + d) / 2
//! ```
//!
//! Vertical stripes (column-constant patterns) land in `vertical`.

use crate::error::{invalid, Result};

/// One level of subbands, each `rows/2 x cols/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarLevel {
    pub rows: usize,
    pub cols: usize,
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
    pub diagonal: Vec<f64>,
}

pub fn haar_forward(data: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, HaarLevel)> {
    if rows % 2 != 0 || cols % 2 != 0 || rows == 0 || cols == 0 || data.len() != rows * cols {
        return Err(invalid!("haar step needs even positive dimensions, got {rows}x{cols}"));
    }
    let (hr, hc) = (rows / 2, cols / 2);
    let n = hr * hc;
    let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..hr {
        for j in 0..hc {
            let a = data[2 * i * cols + 2 * j];
            let b = data[2 * i * cols + 2 * j + 1];
            let c = data[(2 * i + 1) * cols + 2 * j];
            let d = data[(2 * i + 1) * cols + 2 * j + 1];
            let k = i * hc + j;
            ll[k] = 0.5 * (a + b + c + d);
            lh[k] = 0.5 * (a + b - c - d);
            hl[k] = 0.5 * (a - b + c - d);
            hh[k] = 0.5 * (a - b - c + d);
        }
    }
    Ok((
        ll,
        HaarLevel {
            rows: hr,
            cols: hc,
            horizontal: lh,
            vertical: hl,
            diagonal: hh,
        },
    ))
}

pub fn haar_inverse(approx: &[f64], level: &HaarLevel) -> Vec<f64> {
    let (hr, hc) = (level.rows, level.cols);
    let cols = 2 * hc;
    let mut out = vec![0.0; 4 * hr * hc];
    for i in 0..hr {
        for j in 0..hc {
            let k = i * hc + j;
            let (s, h, v, d) = (approx[k], level.horizontal[k], level.vertical[k], level.diagonal[k]);
            out[2 * i * cols + 2 * j] = 0.5 * (s + h + v + d);
            out[2 * i * cols + 2 * j + 1] = 0.5 * (s + h - v - d);
            out[(2 * i + 1) * cols + 2 * j] = 0.5 * (s - h + v - d);
            out[(2 * i + 1) * cols + 2 * j + 1] = 0.5 * (s - h - v + d);
        }
    }
    out
}

/// Multilevel decomposition. Returns the coarsest approximation and the
/// detail levels, finest first.
pub fn haar_decompose(data: &[f64], rows: usize, cols: usize, levels: usize) -> Result<(Vec<f64>, Vec<HaarLevel>)> {
    let mut approx = data.to_vec();
    let (mut r, mut c) = (rows, cols);
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, level) = haar_forward(&approx, r, c)?;
        approx = next;
        r /= 2;
        c /= 2;
        details.push(level);
    }
    Ok((approx, details))
}

pub fn haar_reconstruct(approx: &[f64], details: &[HaarLevel]) -> Vec<f64> {
    details
        .iter()
        .rev()
        .fold(approx.to_vec(), |acc, level| haar_inverse(&acc, level))
}
