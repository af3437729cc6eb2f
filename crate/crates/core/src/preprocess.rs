//! Attenuation windowing and resizing of slices into three-channel network inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::LabeledSlice;

/// A linear HU window mapped onto `[0, 255]`, clamping outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttenuationWindow {
    pub hu_low: i32,
    pub hu_high: i32,
}

impl AttenuationWindow {
    /// Emphysema-range window.
    pub const LOW: Self = Self { hu_low: -1400, hu_high: -950 };
    /// Whole lung window.
    pub const NORMAL: Self = Self { hu_low: -1400, hu_high: 200 };
    /// Dense-pattern window.
    pub const HIGH: Self = Self { hu_low: -160, hu_high: 240 };

    pub fn new(hu_low: i32, hu_high: i32) -> Result<Self> {
        if hu_low >= hu_high {
            return Err(Error::param("window", format!("need hu_low < hu_high, got ({hu_low}, {hu_high})")));
        }
        Ok(Self { hu_low, hu_high })
    }

    #[inline]
    pub fn apply(&self, hu: f64) -> f64 {
        let t = (hu - self.hu_low as f64) / (self.hu_high - self.hu_low) as f64;
        t.clamp(0.0, 1.0) * 255.0
    }
}

/// The three windows feeding the three input channels, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSet(pub [AttenuationWindow; 3]);

impl Default for WindowSet {
    fn default() -> Self {
        WindowSet([AttenuationWindow::LOW, AttenuationWindow::NORMAL, AttenuationWindow::HIGH])
    }
}

pub fn window_rescale(hu_grid: &[i16], window: AttenuationWindow) -> Vec<f64> {
    hu_grid.iter().map(|&v| window.apply(v as f64)).collect()
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners. Results stay within the input's `[min, max]`.
pub fn resize_bilinear(src: &[f64], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), height * width, "resize source length");
    if (height, width) == (out_h, out_w) {
        return src.to_vec();
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(height, out_h), scale(width, out_w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let fy = oy as f64 * sy;
        let y0 = (fy.floor() as usize).min(height - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ox as f64 * sx;
            let x0 = (fx.floor() as usize).min(width - 1);
            let x1 = (x0 + 1).min(width - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bottom = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Network input: 3 channels of `size × size` values in `[0, 255]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputImage {
    pub size: usize,
    pub data: Vec<f64>,
}

impl InputImage {
    pub const CHANNELS: usize = 3;

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Mirror left-right in place.
    pub fn flip_horizontal(&mut self) {
        let s = self.size;
        for row in self.data.chunks_exact_mut(s) {
            row.reverse();
        }
    }
}

/// Window with the default three windows and resize to `target_size`.
pub fn make_input(slice: &LabeledSlice, target_size: usize) -> Result<InputImage> {
    make_input_with(slice, &WindowSet::default(), target_size)
}

pub fn make_input_with(slice: &LabeledSlice, windows: &WindowSet, target_size: usize) -> Result<InputImage> {
    if target_size < 8 {
        return Err(Error::param("target_size", format!("must be >= 8, got {target_size}")));
    }
    let mut data = Vec::with_capacity(3 * target_size * target_size);
    for w in windows.0 {
        let plane = window_rescale(&slice.hu, w);
        data.extend(resize_bilinear(&plane, slice.height, slice.width, target_size, target_size));
    }
    Ok(InputImage { size: target_size, data })
}

/// Per-channel standardisation fitted on a training fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl ChannelStats {
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a InputImage>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            for (c, (s, q)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                for &v in img.channel(c) {
                    *s += v;
                    *q += v * v;
                }
            }
            n += img.size * img.size;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit channel statistics on zero images".into()));
        }
        let mut stats = Self::default();
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            stats.mean[c] = mean;
            stats.std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(stats)
    }

    pub fn apply(&self, img: &InputImage) -> Vec<f64> {
        let plane = img.size * img.size;
        img.data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }
}
