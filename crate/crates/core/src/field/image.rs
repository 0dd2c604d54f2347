use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

/// Linear RGB image with channels in `[0, 1]`, row-major pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        self.pixels[v * self.width + u]
    }

    pub fn gray(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    /// `[height x width x 3]`
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("image extents are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w, 3] => Self::new(
                *w,
                *h,
                t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            ),
            other => Err(Error::invalid(format!("expected [H, W, 3] image tensor, got {other:?}"))),
        }
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            buf.extend(p.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

/// `10 log10(1 / MSE)` over all channels; [`PSNR_IDENTICAL`] when equal.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid(format!(
            "psnr of {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = (a.pixels.len() * 3) as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).powi(2)))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_give_sentinel() {
        let a = RgbImage::black(2, 2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn mse_of_a_hundredth_is_twenty_db() {
        let a = RgbImage::black(2, 1);
        let b = RgbImage::new(2, 1, vec![[0.1; 3]; 2]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(psnr(&RgbImage::black(2, 2), &RgbImage::black(1, 4)).is_err());
    }

    #[test]
    fn ppm_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        RgbImage::new(2, 1, vec![[1.0, 0.0, 0.5], [0.0; 3]]).unwrap().write_ppm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[11..14], &[255, 0, 128]);
    }
}
