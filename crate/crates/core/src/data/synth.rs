//! Synthetic two-camera datasets.
//!
//! Each identity is a solid figure on a plain background. Figure hues are
//! evenly spaced around the color wheel with a seeded offset. Camera A renders the
//! figure in place over a dark background, camera B shifts it by a fixed
//! offset over a lighter background. Every frame then gets independent
//! Gaussian pixel noise.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raw::{RawDataset, RawIdentity};
use crate::error::{Error, Result};
use crate::seed::{derive, Stream};

/// Offset of camera B relative to camera A, `(dx, dy)` in pixels.
pub const CAMERA_B_SHIFT: (i64, i64) = (2, 1);
const CAMERA_A_BACKGROUND: [f64; 3] = [0.30, 0.30, 0.32];
const CAMERA_B_BACKGROUND: [f64; 3] = [0.55, 0.53, 0.50];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub identities: usize,
    pub frames: usize,
    pub resolution: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            identities: 8,
            frames: 6,
            resolution: 32,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::Config(format!("synth.k must be >= 2, got {}", self.identities)));
        }
        if self.frames < 1 {
            return Err(Error::Config("synth.frames must be >= 1".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Config(format!(
                "synthetic resolution must be >= 8, got {}",
                self.resolution
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!("synth.noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Noise-free appearance of one identity, color in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub color: [f64; 3],
}

impl Pattern {
    /// Identity `i` of `k` gets hue `(i + offset) / k`.
    fn spaced(i: usize, k: usize, offset: f64) -> Self {
        Pattern {
            color: hsv((i as f64 + offset) / k as f64, 0.85, 0.9),
        }
    }

    /// Color at pixel `(x, y)` of a `size`×`size` canvas, with the figure
    /// translated by `shift`.
    fn color_at(&self, x: i64, y: i64, size: usize, shift: (i64, i64), background: [f64; 3]) -> [f64; 3] {
        let s = size as f64;
        let fx = (x - shift.0) as f64 + 0.5;
        let fy = (y - shift.1) as f64 + 0.5;
        let (left, right) = (0.25 * s, 0.75 * s);
        let (top, bottom) = (0.1 * s, 0.9 * s);
        if fx < left || fx >= right || fy < top || fy >= bottom {
            background
        } else {
            self.color
        }
    }

    fn render(&self, size: usize, shift: (i64, i64), background: [f64; 3], noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>) -> RgbImage {
        let mut img = RgbImage::new(size as u32, size as u32);
        let mut noise = noise;
        for y in 0..size {
            for x in 0..size {
                let c = self.color_at(x as i64, y as i64, size, shift, background);
                let px = c.map(|v| {
                    let n = match noise.as_mut() {
                        Some((dist, rng)) => dist.sample(*rng),
                        None => 0.0,
                    };
                    ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        img
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6.fract();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6 as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Generates a dataset in memory. Identity `i` is named `id_{i:04}`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<RawDataset> {
    cfg.validate()?;
    let mut identities = Vec::with_capacity(cfg.identities);
    let dist = if cfg.noise > 0.0 {
        Some(Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let offset = ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Synth, u64::MAX)).random_range(0.0..1.0);
    for i in 0..cfg.identities {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Synth, i as u64));
        let pattern = Pattern::spaced(i, cfg.identities, offset);
        let mut render = |shift, background| {
            pattern.render(
                cfg.resolution,
                shift,
                background,
                dist.as_ref().map(|d| (d, &mut rng)),
            )
        };
        let single_shot = render((0, 0), CAMERA_A_BACKGROUND);
        let cam_a = (0..cfg.frames).map(|_| render((0, 0), CAMERA_A_BACKGROUND)).collect();
        let cam_b = (0..cfg.frames)
            .map(|_| render(CAMERA_B_SHIFT, CAMERA_B_BACKGROUND))
            .collect();
        identities.push(RawIdentity {
            name: format!("id_{i:04}"),
            probe: single_shot,
            cam_a,
            cam_b,
            single_shot: true,
        });
    }
    Ok(RawDataset { identities })
}

/// Generates and writes a dataset tree under `root`.
pub fn synth_to_dir(cfg: &SynthConfig, root: &Path) -> Result<RawDataset> {
    let ds = synth_generate(cfg)?;
    ds.emit(root)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            identities: 4,
            frames: 3,
            resolution: 16,
            noise,
            seed,
        }
    }

    #[test]
    fn identities_have_distinct_colors() {
        let ds = synth_generate(&small(0.0, 9)).unwrap();
        let centers: Vec<_> = ds.identities.iter().map(|id| *id.probe.get_pixel(8, 8)).collect();
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                assert_ne!(centers[a], centers[b]);
            }
        }
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&small(0.1, 3)).unwrap();
        let b = synth_generate(&small(0.1, 3)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(0.1, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_frames_match_up_to_camera_shift() {
        let ds = synth_generate(&small(0.0, 5)).unwrap();
        for id in &ds.identities {
            for f in &id.cam_a {
                assert_eq!(f, &id.probe);
            }
            for f in &id.cam_b[1..] {
                assert_eq!(f, &id.cam_b[0]);
            }
            // Undo the shift: every figure pixel of camera B equals camera A.
            let (dx, dy) = CAMERA_B_SHIFT;
            let size = 16i64;
            for y in 0..size {
                for x in 0..size {
                    let a = id.probe.get_pixel(x as u32, y as u32);
                    let (bx, by) = (x + dx, y + dy);
                    if bx >= size || by >= size {
                        continue;
                    }
                    let b = id.cam_b[0].get_pixel(bx as u32, by as u32);
                    let bg_a = CAMERA_A_BACKGROUND.map(|v| (v * 255.0).round() as u8);
                    if a.0 != bg_a {
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(synth_generate(&SynthConfig { identities: 1, ..small(0.0, 0) }).is_err());
        assert!(synth_generate(&SynthConfig { frames: 0, ..small(0.0, 0) }).is_err());
        assert!(synth_generate(&SynthConfig { noise: -1.0, ..small(0.0, 0) }).is_err());
    }
}
