//! Image and tensor value types.

use crate::error::{invalid, shape_err, Result};

/// A grid of intensities in `[0, 1]`, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every intensity into `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid!("image dimensions must be positive, got {height}x{width}x{channels}"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "image data length {} != {height}*{width}*{channels}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("image intensities must be finite"));
        }
        let data = data.into_iter().map(clamp01).collect();
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Image::new(height, width, 1, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels: 1,
            data: vec![clamp01(value); height * width],
        }
    }

    /// Single-channel image from a function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(clamp01(f(r, c)));
            }
        }
        Image {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Pixel of a single-channel image.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn require_gray(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(invalid!("expected a single-channel image, got {} channels", self.channels));
        }
        Ok(())
    }

    /// Copies the image into a `[1, channels, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * ch];
        for r in 0..h {
            for c in 0..w {
                for k in 0..ch {
                    data[(k * h + r) * w + c] = self.data[(r * w + c) * ch + k];
                }
            }
        }
        Tensor::from_vec(vec![1, ch, h, w], data).expect("consistent shape")
    }

    /// Reads sample `n` of an NCHW tensor back into an image, clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let [batch, ch, h, w] = t.dims4()?;
        if n >= batch {
            return Err(shape_err!("sample {n} out of range for batch {batch}"));
        }
        let plane = t.sample(n);
        let mut data = vec![0.0; h * w * ch];
        for k in 0..ch {
            for r in 0..h {
                for c in 0..w {
                    data[(r * w + c) * ch + k] = plane[(k * h + r) * w + c];
                }
            }
        }
        Image::new(h, w, ch, data)
    }
}

#[inline]
pub fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Dense row-major tensor of up to four axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(shape_err!("tensor rank must be 1..=4, got {}", shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("tensor data length {} != product of {:?}", data.len(), shape));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err!("expected an NCHW tensor, got shape {:?}", self.shape)),
        }
    }

    /// Contiguous slice of sample `n` along the leading axis.
    pub fn sample(&self, n: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Stacks same-shaped NCHW tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| invalid!("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(shape_err!("cannot stack {:?} with {:?}", t.shape, first.shape));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(vec![n, c, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_invariants() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
        let img = Image::new(1, 2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tensor_round_trip_through_image() {
        let img = Image::new(2, 3, 2, (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 2, 2, 3]);
        assert_eq!(t.data()[1], img.data()[2]);
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn tensor_rank_checked() {
        assert!(Tensor::from_vec(vec![], vec![]).is_err());
        assert!(Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
