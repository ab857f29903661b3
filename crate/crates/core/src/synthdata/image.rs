//! In-memory frames and the crop/resample used to build template and search
//! inputs.

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// 8-bit interleaved frame, as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        }
    }
}

/// Interleaved `[0, 1]` image, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Replicates a single-channel image across `channels`.
    pub fn replicate_channels(&self, channels: usize) -> Result<Image> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "cannot expand a {}-channel image to {channels} channels",
                self.channels
            )));
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            channels,
            data: self
                .data
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, channels))
                .collect(),
        })
    }
}

/// Placement of a square crop in frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropGeometry {
    /// Frame coordinates of the crop's top-left corner.
    pub x0: f64,
    pub y0: f64,
    /// Crop side in frame pixels.
    pub side: f64,
    /// Output side in pixels.
    pub out_size: usize,
}

impl CropGeometry {
    pub fn around(bbox: &BBox, factor: f64, out_size: usize) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::invalid(format!("context factor must be positive, got {factor}")));
        }
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::invalid(format!("cannot crop around zero-area box {bbox:?}")));
        }
        if out_size == 0 {
            return Err(Error::invalid("output size must be positive"));
        }
        let side = factor * (bbox.w * bbox.h).sqrt();
        let (cx, cy) = bbox.center();
        Ok(Self {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            side,
            out_size,
        })
    }

    /// Frame pixels per output pixel.
    pub fn scale(&self) -> f64 {
        self.side / self.out_size as f64
    }

    pub fn to_frame(&self, b: &BBox) -> BBox {
        let s = self.scale();
        BBox::new(self.x0 + b.x * s, self.y0 + b.y * s, b.w * s, b.h * s)
    }

    pub fn to_crop(&self, b: &BBox) -> BBox {
        let s = self.scale();
        BBox::new((b.x - self.x0) / s, (b.y - self.y0) / s, b.w / s, b.h / s)
    }
}

/// Square crop of side `factor·sqrt(w·h)` centered on the box, resampled
/// bilinearly to `out_size`. Samples outside the frame read the frame's
/// per-channel mean.
pub fn crop_and_resize(image: &Image, bbox: &BBox, factor: f64, out_size: usize) -> Result<(Image, CropGeometry)> {
    let geom = CropGeometry::around(bbox, factor, out_size)?;
    Ok((resample(image, &geom), geom))
}

pub fn resample(image: &Image, geom: &CropGeometry) -> Image {
    let c = image.channels;
    let fill = image.channel_means();
    let (w, h) = (image.width as isize, image.height as isize);
    let pixel = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            fill[ch]
        } else {
            image.data[((y * w + x) as usize) * c + ch]
        }
    };
    let s = geom.scale();
    let n = geom.out_size;
    let mut data = Vec::with_capacity(n * n * c);
    for v in 0..n {
        let sy = geom.y0 + (v as f64 + 0.5) * s - 0.5;
        let iy = sy.floor();
        let fy = sy - iy;
        let iy = iy as isize;
        for u in 0..n {
            let sx = geom.x0 + (u as f64 + 0.5) * s - 0.5;
            let ix = sx.floor();
            let fx = sx - ix;
            let ix = ix as isize;
            for ch in 0..c {
                let top = pixel(ix, iy, ch) * (1.0 - fx) + pixel(ix + 1, iy, ch) * fx;
                let bottom = pixel(ix, iy + 1, ch) * (1.0 - fx) + pixel(ix + 1, iy + 1, ch) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image {
        width: n,
        height: n,
        channels: c,
        data,
    }
}
