//! PNG/JPEG decoding, PNG encoding, and bilinear resampling on a
//! float image tensor.

use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// H x W x 3 image with values in [0,1], row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width * 3);
        assert!(
            values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "image values must be finite and in [0,1]"
        );
        ImageTensor {
            height,
            width,
            values,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageTensor::new(height, width, vec![value; height * width * 3])
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Decode a PNG or JPEG into [0,1] floats. Grayscale is promoted to three
/// channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

fn from_rgb8(img: &RgbImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    let values = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, values)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn to_rgb8(img: &ImageTensor) -> RgbImage {
    let bytes: Vec<u8> = img.values.iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions")
}

/// Write as 8-bit PNG with round-half-to-even quantization.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// PNG bytes of the quantized image (for in-memory comparisons).
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(to_rgb8(img))
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(out.into_inner())
}

/// Write a single abundance column as a grayscale PNG.
pub fn save_grayscale(
    values: &[f64],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    assert_eq!(values.len(), height * width);
    let path = path.as_ref();
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Downscale so the longer side is at most `max_side`, preserving aspect
/// ratio with bilinear sampling. Images already within the bound pass
/// through untouched.
pub fn resize_max_side(img: &ImageTensor, max_side: usize) -> ImageTensor {
    assert!(max_side >= 1);
    let longest = img.width.max(img.height);
    if longest <= max_side {
        return img.clone();
    }
    let scale = max_side as f64 / longest as f64;
    let new_w = ((img.width as f64 * scale).round() as usize).max(1);
    let new_h = ((img.height as f64 * scale).round() as usize).max(1);
    resize_bilinear(img, new_h, new_w)
}

/// Bilinear resample to the given size. Samples are convex combinations of
/// the four nearest input pixels, so outputs never leave the input range.
pub fn resize_bilinear(img: &ImageTensor, new_h: usize, new_w: usize) -> ImageTensor {
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let mut values = Vec::with_capacity(new_h * new_w * 3);
    for y in 0..new_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..new_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            let p00 = img.pixel(y0, x0);
            let p01 = img.pixel(y0, x1);
            let p10 = img.pixel(y1, x0);
            let p11 = img.pixel(y1, x1);
            for c in 0..3 {
                let top = p00[c] * (1.0 - wx) + p01[c] * wx;
                let bot = p10[c] * (1.0 - wx) + p11[c] * wx;
                values.push(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    ImageTensor::new(new_h, new_w, values)
}
