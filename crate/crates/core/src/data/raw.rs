use std::fs;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

pub const CAM_A_DIR: &str = "cam_a";
pub const CAM_B_DIR: &str = "cam_b";
pub const SINGLE_SHOT_DIR: &str = "single_shot";

/// Decoded frames of one identity in both cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct RawIdentity {
    pub name: String,
    /// The probe image: the single-shot image when one exists, otherwise
    /// the first camera-A frame.
    pub probe: RgbImage,
    pub cam_a: Vec<RgbImage>,
    pub cam_b: Vec<RgbImage>,
    /// Whether `probe` came from a single-shot file.
    pub single_shot: bool,
}

/// An in-memory two-camera dataset, identities sorted by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub identities: Vec<RawIdentity>,
}

fn frame_name(i: usize) -> String {
    format!("{i:04}.png")
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    /// Writes `root/cam_a/<id>/<frame>.png`, `root/cam_b/<id>/<frame>.png`
    /// and, for identities with a single-shot probe,
    /// `root/single_shot/<id>.png`.
    pub fn emit(&self, root: &Path) -> Result<()> {
        for id in &self.identities {
            for (cam, frames) in [(CAM_A_DIR, &id.cam_a), (CAM_B_DIR, &id.cam_b)] {
                let dir = root.join(cam).join(&id.name);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (i, f) in frames.iter().enumerate() {
                    save(f, &dir.join(frame_name(i)))?;
                }
            }
            if id.single_shot {
                let dir = root.join(SINGLE_SHOT_DIR);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                save(&id.probe, &dir.join(format!("{}.png", id.name)))?;
            }
        }
        Ok(())
    }
}
