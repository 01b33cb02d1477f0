//! Resize, scale to `[0, 1]`, and per-channel standardization with
//! statistics taken from training identities only.

use image::RgbImage;

use super::raw::RawDataset;
use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel centers
/// (`src = (dst + 0.5) * in / out - 0.5`, clamped at the borders).
pub fn bilinear_resize(input: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("resize expects [C,H,W], got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    let axis = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, wy) = axis(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, wx) = axis(ox, w, out_w);
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// `[3, H, W]` tensor of an RGB image scaled to `[0, 1]`.
pub fn image_to_unit(img: &RgbImage) -> Tensor<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("image shape")
}

/// Scaled and resized to `resolution`×`resolution`.
pub fn resize_to_unit(img: &RgbImage, resolution: usize) -> Result<Tensor<f64>> {
    let t = image_to_unit(img);
    if img.width() as usize == resolution && img.height() as usize == resolution {
        return Ok(t);
    }
    bilinear_resize(&t, resolution, resolution)
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population statistics over every pixel of every image.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Tensor<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            let c = img.shape()[0];
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::shape("images disagree in channel count"));
            }
            let plane = img.numel() / c;
            for ch in 0..c {
                for &v in &img.data()[ch * plane..(ch + 1) * plane] {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            count += plane;
        }
        if count == 0 {
            return Err(Error::Dataset("no images to compute statistics from".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn standardize<R: Real>(&self, img: &Tensor<f64>) -> Result<Tensor<R>> {
        let c = img.shape()[0];
        if c != self.mean.len() {
            return Err(Error::shape(format!(
                "statistics for {} channels applied to {c}",
                self.mean.len()
            )));
        }
        let plane = img.numel() / c;
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i / plane;
                R::of((v - self.mean[ch]) / self.std[ch].max(STD_FLOOR))
            })
            .collect();
        Tensor::new(img.shape().to_vec(), data)
    }
}

/// Decodes encoded image bytes and applies the full pipeline.
pub fn preprocess<R: Real>(bytes: &[u8], resolution: usize, stats: &ChannelStats) -> Result<Tensor<R>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?
        .to_rgb8();
    stats.standardize(&resize_to_unit(&img, resolution)?)
}

/// Every probe and camera-B tracklet resized and scaled, before
/// standardization. Index `i` is identity `i` of the source dataset.
#[derive(Debug, Clone)]
pub struct UnitDataset {
    pub names: Vec<String>,
    pub probes: Vec<Tensor<f64>>,
    pub tracklets: Vec<Vec<Tensor<f64>>>,
    pub resolution: usize,
}

impl UnitDataset {
    pub fn from_raw(raw: &RawDataset, resolution: usize) -> Result<Self> {
        let mut probes = Vec::with_capacity(raw.len());
        let mut tracklets = Vec::with_capacity(raw.len());
        for id in &raw.identities {
            probes.push(resize_to_unit(&id.probe, resolution)?);
            tracklets.push(
                id.cam_b
                    .iter()
                    .map(|f| resize_to_unit(f, resolution))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(UnitDataset {
            names: raw.identities.iter().map(|i| i.name.clone()).collect(),
            probes,
            tracklets,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Statistics over the probes and tracklets of `identities`.
    pub fn stats(&self, identities: &[usize]) -> Result<ChannelStats> {
        ChannelStats::from_images(
            identities
                .iter()
                .flat_map(|&i| std::iter::once(&self.probes[i]).chain(self.tracklets[i].iter())),
        )
    }

    /// Standardizes every identity with `stats`.
    pub fn standardize<R: Real>(&self, stats: &ChannelStats) -> Result<PreparedData<R>> {
        Ok(PreparedData {
            probes: self.probes.iter().map(|p| stats.standardize(p)).collect::<Result<_>>()?,
            tracklets: self
                .tracklets
                .iter()
                .map(|t| t.iter().map(|f| stats.standardize(f)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
            stats: stats.clone(),
        })
    }
}

/// Network-ready tensors for one split.
#[derive(Debug, Clone)]
pub struct PreparedData<R> {
    pub probes: Vec<Tensor<R>>,
    pub tracklets: Vec<Vec<Tensor<R>>>,
    pub stats: ChannelStats,
}
