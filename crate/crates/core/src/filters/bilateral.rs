use crate::error::{invalid, Result};
use crate::image::Image;
use crate::par;

/// Edge-preserving smoothing over a `(2 radius + 1)^2` window. The window is
/// truncated at the borders.
pub fn bilateral(img: &Image, sigma_s: f64, sigma_r: f64, radius: usize) -> Result<Image> {
    img.require_gray()?;
    if !(sigma_s > 0.0 && sigma_r > 0.0) {
        return Err(invalid!("bilateral sigmas must be positive, got {sigma_s}, {sigma_r}"));
    }
    let (h, w) = (img.height(), img.width());
    let side = 2 * radius + 1;
    let spatial: Vec<f64> = (0..side * side)
        .map(|k| {
            let dy = (k / side) as f64 - radius as f64;
            let dx = (k % side) as f64 - radius as f64;
            (-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)).exp()
        })
        .collect();
    let inv_range = 1.0 / (2.0 * sigma_r * sigma_r);
    let src = img.data();
    let mut out = vec![0.0; h * w];
    par::for_each_chunk_mut(&mut out, w, |r, row| {
        let r_lo = r.saturating_sub(radius);
        let r_hi = (r + radius).min(h - 1);
        for (c, o) in row.iter_mut().enumerate() {
            let center = src[r * w + c];
            let c_lo = c.saturating_sub(radius);
            let c_hi = (c + radius).min(w - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for q_r in r_lo..=r_hi {
                let srow = (q_r + radius - r) * side;
                for q_c in c_lo..=c_hi {
                    let v = src[q_r * w + q_c];
                    let d = v - center;
                    let wgt = spatial[srow + q_c + radius - c] * (-d * d * inv_range).exp();
                    num += wgt * v;
                    den += wgt;
                }
            }
            *o = num / den;
        }
    });
    Image::gray(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_unchanged() {
        let img = Image::filled(10, 12, 0.42);
        let out = bilateral(&img, 3.0, 0.1, 7).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-14));
    }

    #[test]
    fn step_edge_is_preserved() {
        let img = Image::from_fn(12, 20, |_, c| if c < 10 { 0.2 } else { 0.8 });
        let out = bilateral(&img, 3.0, 0.05, 5).unwrap();
        for r in 0..12 {
            for c in 0..20 {
                let expect = img.get(r, c);
                assert!((out.get(r, c) - expect).abs() <= 0.01 * 0.6, "({r},{c}) {}", out.get(r, c));
            }
        }
    }

    #[test]
    fn large_range_sigma_is_gaussian_blur() {
        let (n, radius, sigma_s) = (15, 4, 1.5);
        let img = Image::from_fn(n, n, |r, c| if r == 7 && c == 7 { 1.0 } else { 0.0 });
        let out = bilateral(&img, sigma_s, 1e6, radius).unwrap();
        // normalized truncated Gaussian, evaluated independently
        for r in 0..n {
            for c in 0..n {
                let (dr, dc) = (r as i64 - 7, c as i64 - 7);
                let expect = if dr.abs() as usize <= radius && dc.abs() as usize <= radius {
                    let g = |d: i64| (-(d * d) as f64 / (2.0 * sigma_s * sigma_s)).exp();
                    // full window fits inside the frame for every pixel near the impulse
                    let mut norm = 0.0;
                    for a in -(radius as i64)..=radius as i64 {
                        for b in -(radius as i64)..=radius as i64 {
                            let (qr, qc) = (r as i64 + a, c as i64 + b);
                            if (0..n as i64).contains(&qr) && (0..n as i64).contains(&qc) {
                                norm += g(a) * g(b);
                            }
                        }
                    }
                    g(dr) * g(dc) / norm
                } else {
                    0.0
                };
                assert!((out.get(r, c) - expect).abs() < 1e-9, "({r},{c})");
            }
        }
    }
}
