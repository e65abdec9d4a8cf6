//! Cartesian <-> polar resampling about the frame center.
//!
//! Polar rows are angles and columns are radii, so a ring of fixed radius
//! becomes a vertical stripe.

use crate::error::{invalid, shape_err, Result};
use crate::image::{clamp01, Image};
use crate::par;
use crate::synth::{frame_center, pixel_angle};

#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    n_theta: usize,
    n_r: usize,
    r_max: f64,
    center: (f64, f64),
    data: Vec<f64>,
}

impl PolarImage {
    pub fn new(n_theta: usize, n_r: usize, r_max: f64, center: (f64, f64), data: Vec<f64>) -> Result<Self> {
        if n_theta < 4 || n_r < 2 {
            return Err(invalid!("polar grid {n_theta}x{n_r} too small (need n_theta >= 4, n_r >= 2)"));
        }
        if data.len() != n_theta * n_r {
            return Err(shape_err!("polar data length {} != {n_theta}*{n_r}", data.len()));
        }
        Ok(PolarImage {
            n_theta,
            n_r,
            r_max,
            center,
            data,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_r + j]
    }

    /// Angle of row `i` in degrees.
    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * 360.0 / self.n_theta as f64
    }

    /// Radius of column `j` in pixels.
    pub fn radius(&self, j: usize) -> f64 {
        j as f64 * self.r_step()
    }

    fn r_step(&self) -> f64 {
        self.r_max / (self.n_r - 1) as f64
    }

    /// Same geometry, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        PolarImage::new(self.n_theta, self.n_r, self.r_max, self.center, data)
    }

    /// View of the grid as an `n_theta x n_r` image.
    pub fn to_image(&self) -> Image {
        Image::gray(self.n_theta, self.n_r, self.data.clone()).expect("valid polar grid")
    }
}

/// Default sampling density: `4 * min(h, w)` angles and `min(h, w)` radii.
pub fn default_sampling(height: usize, width: usize) -> (usize, usize) {
    let m = height.min(width);
    (4 * m, m)
}

/// Bilinear sample with coordinates clamped to the image.
#[inline]
pub(crate) fn bilinear(img: &Image, row: f64, col: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let row = row.clamp(0.0, (h - 1) as f64);
    let col = col.clamp(0.0, (w - 1) as f64);
    let r0 = (row.floor() as usize).min(h.saturating_sub(2));
    let c0 = (col.floor() as usize).min(w.saturating_sub(2));
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let (fr, fc) = (row - r0 as f64, col - c0 as f64);
    let top = img.get(r0, c0) * (1.0 - fc) + img.get(r0, c1) * fc;
    let bottom = img.get(r1, c0) * (1.0 - fc) + img.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

pub fn cart_to_polar(img: &Image, n_theta: usize, n_r: usize) -> Result<PolarImage> {
    img.require_gray()?;
    if n_theta < 4 || n_r < 2 {
        return Err(invalid!("polar grid {n_theta}x{n_r} too small (need n_theta >= 4, n_r >= 2)"));
    }
    let (h, w) = (img.height(), img.width());
    if h.min(w) < 2 {
        return Err(invalid!("image {h}x{w} too small for polar resampling"));
    }
    let center = frame_center(h, w);
    let r_max = (h.min(w) as f64 - 1.0) / 2.0;
    let r_step = r_max / (n_r - 1) as f64;
    let mut data = vec![0.0; n_theta * n_r];
    par::for_each_chunk_mut(&mut data, n_r, |i, row| {
        let theta = (i as f64 * 360.0 / n_theta as f64).to_radians();
        let (s, c) = theta.sin_cos();
        for (j, out) in row.iter_mut().enumerate() {
            let r = j as f64 * r_step;
            *out = clamp01(bilinear(img, center.0 - r * s, center.1 + r * c));
        }
    });
    PolarImage::new(n_theta, n_r, r_max, center, data)
}

/// Resamples the polar grid back onto a `height x width` frame. Pixels
/// outside the sampled disk come from `fallback`, which is required whenever
/// such pixels exist.
pub fn polar_to_cart(p: &PolarImage, height: usize, width: usize, fallback: Option<&Image>) -> Result<Image> {
    let center = frame_center(height, width);
    if center != p.center {
        return Err(shape_err!(
            "polar center {:?} does not match a {height}x{width} frame",
            p.center
        ));
    }
    if p.r_max > (height.min(width) as f64 - 1.0) / 2.0 + 1e-12 {
        return Err(shape_err!("polar radius {} exceeds the {height}x{width} frame", p.r_max));
    }
    if let Some(fb) = fallback {
        fb.require_gray()?;
        if fb.height() != height || fb.width() != width {
            return Err(shape_err!("fallback is {}x{}, frame is {height}x{width}", fb.height(), fb.width()));
        }
    }
    let r_step = p.r_step();
    let n_theta = p.n_theta;
    let deg_per_row = 360.0 / n_theta as f64;
    let mut data = vec![0.0; height * width];
    let mut missing = std::sync::atomic::AtomicBool::new(false);
    par::for_each_chunk_mut(&mut data, width, |r, row| {
        for (c, out) in row.iter_mut().enumerate() {
            let dist = (r as f64 - center.0).hypot(c as f64 - center.1);
            if dist > p.r_max + 1e-9 {
                match fallback {
                    Some(fb) => *out = fb.get(r, c),
                    None => missing.store(true, std::sync::atomic::Ordering::Relaxed),
                }
                continue;
            }
            let t = pixel_angle(r as f64, c as f64, center) / deg_per_row;
            let i0f = t.floor();
            let ft = t - i0f;
            let i0 = (i0f as usize) % n_theta;
            let i1 = (i0 + 1) % n_theta;
            let s = (dist / r_step).clamp(0.0, (p.n_r - 1) as f64);
            let j0 = (s.floor() as usize).min(p.n_r - 2);
            let fs = s - j0 as f64;
            let a = p.get(i0, j0) * (1.0 - fs) + p.get(i0, j0 + 1) * fs;
            let b = p.get(i1, j0) * (1.0 - fs) + p.get(i1, j0 + 1) * fs;
            *out = clamp01(a * (1.0 - ft) + b * ft);
        }
    });
    if *missing.get_mut() {
        return Err(invalid!("frame extends beyond the polar disk and no fallback image was given"));
    }
    Image::gray(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_mask, RingSpec};

    fn radial(h: usize, w: usize, f: impl Fn(f64) -> f64) -> Image {
        let c = frame_center(h, w);
        Image::from_fn(h, w, |r, col| f((r as f64 - c.0).hypot(col as f64 - c.1)))
    }

    #[test]
    fn constant_maps_to_constant() {
        let img = Image::filled(16, 16, 0.37);
        let p = cart_to_polar(&img, 64, 16).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let back = polar_to_cart(&p, 16, 16, Some(&img)).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn radius_zero_column_samples_center() {
        let img = Image::from_fn(9, 9, |r, c| (r * 9 + c) as f64 / 81.0);
        let p = cart_to_polar(&img, 16, 5).unwrap();
        for i in 0..16 {
            assert_eq!(p.get(i, 0), img.get(4, 4));
        }
        // even frame: center between pixels, bilinear average of the four
        let img = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64 / 16.0);
        let p = cart_to_polar(&img, 8, 3).unwrap();
        let expect = (img.get(1, 1) + img.get(1, 2) + img.get(2, 1) + img.get(2, 2)) / 4.0;
        assert!((p.get(3, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn center_pixel_takes_column_zero() {
        let data: Vec<f64> = (0..8 * 4).map(|k| if k % 4 == 0 { 0.25 } else { 0.9 }).collect();
        let p = PolarImage::new(8, 4, 4.0, (4.0, 4.0), data).unwrap();
        let out = polar_to_cart(&p, 9, 9, Some(&Image::filled(9, 9, 0.0))).unwrap();
        assert!((out.get(4, 4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ring_becomes_stripe() {
        let mask = render_mask(&[RingSpec::full(10.0, 2.0, 0.0)], 64, 64);
        let (nt, nr) = default_sampling(64, 64);
        let p = cart_to_polar(&mask, nt, nr).unwrap();
        let col_mean = |j: usize| (0..nt).map(|i| p.get(i, j)).sum::<f64>() / nt as f64;
        let j_star = (10.0 / (p.r_max() / (nr - 1) as f64)).round() as usize;
        assert!(col_mean(j_star) < 0.2, "stripe column mean {}", col_mean(j_star));
        assert!(col_mean(2) > 0.99 && col_mean(nr - 3) > 0.99);
    }

    #[test]
    fn missing_fallback_is_an_error() {
        let img = Image::filled(8, 8, 0.5);
        let p = cart_to_polar(&img, 32, 8).unwrap();
        assert!(polar_to_cart(&p, 8, 8, None).is_err());
        assert!(polar_to_cart(&p, 9, 9, Some(&Image::filled(9, 9, 0.0))).is_err());
    }

    #[test]
    fn round_trip_of_radial_gradient() {
        let n = 64;
        let img = radial(n, n, |d| 0.2 + 0.6 * (d / 32.0).min(1.0));
        let (nt, nr) = default_sampling(n, n);
        let p = cart_to_polar(&img, nt, nr).unwrap();
        let back = polar_to_cart(&p, n, n, Some(&img)).unwrap();
        let c = frame_center(n, n);
        for r in 0..n {
            for col in 0..n {
                if (r as f64 - c.0).hypot(col as f64 - c.1) <= p.r_max() {
                    assert!((back.get(r, col) - img.get(r, col)).abs() <= 0.01);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_shifts_rows() {
        let n = 24;
        let img = Image::from_fn(n, n, |r, c| ((r * 31 + c * 17) % 23) as f64 / 23.0);
        // rotate 90 degrees counter-clockwise
        let rot = Image::from_fn(n, n, |r, c| img.get(c, n - 1 - r));
        let nt = 96;
        let a = cart_to_polar(&img, nt, 12).unwrap();
        let b = cart_to_polar(&rot, nt, 12).unwrap();
        for i in 0..nt {
            for j in 0..12 {
                assert!((b.get((i + nt / 4) % nt, j) - a.get(i, j)).abs() < 1e-6);
            }
        }
    }
}
