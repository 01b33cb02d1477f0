use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::raw::{RawDataset, RawIdentity, CAM_A_DIR, CAM_B_DIR, SINGLE_SHOT_DIR};
use crate::error::{Error, Result};

/// Directory names of a dataset tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutConfig {
    pub cam_a: String,
    pub cam_b: String,
    pub single_shot: String,
    /// Keep only the first `n` eligible identities in name order.
    pub max_identities: Option<usize>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            cam_a: CAM_A_DIR.into(),
            cam_b: CAM_B_DIR.into(),
            single_shot: SINGLE_SHOT_DIR.into(),
            max_identities: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub name: String,
    pub probe: PathBuf,
    pub single_shot: bool,
    pub cam_a: Vec<PathBuf>,
    pub cam_b: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub warnings: Vec<String>,
}

fn sorted_dirs(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Ok(BTreeSet::new());
    }
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

fn sorted_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

/// Indexes a dataset tree. Identities are matched across cameras by
/// directory name; those missing a view (or with no frames in one) are
/// skipped with a warning.
pub fn ingest(root: &Path, layout: &LayoutConfig) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let cam_a_root = root.join(&layout.cam_a);
    let cam_b_root = root.join(&layout.cam_b);
    let in_a = sorted_dirs(&cam_a_root)?;
    let in_b = sorted_dirs(&cam_b_root)?;
    if in_a.is_empty() && in_b.is_empty() {
        return Err(Error::Dataset(format!(
            "no identities found under {}",
            root.display()
        )));
    }

    let mut warnings = Vec::new();
    let mut entries = Vec::new();
    for name in in_a.union(&in_b) {
        if !in_a.contains(name) || !in_b.contains(name) {
            let missing = if in_a.contains(name) { &layout.cam_b } else { &layout.cam_a };
            warnings.push(format!("identity `{name}` has no `{missing}` view; skipped"));
            continue;
        }
        let cam_a = sorted_frames(&cam_a_root.join(name))?;
        let cam_b = sorted_frames(&cam_b_root.join(name))?;
        if cam_a.is_empty() || cam_b.is_empty() {
            warnings.push(format!("identity `{name}` has an empty camera view; skipped"));
            continue;
        }
        let shot = root.join(&layout.single_shot).join(format!("{name}.png"));
        let (probe, single_shot) = if shot.is_file() {
            (shot, true)
        } else {
            (cam_a[0].clone(), false)
        };
        entries.push(IndexEntry {
            name: name.clone(),
            probe,
            single_shot,
            cam_a,
            cam_b,
        });
    }
    if let Some(n) = layout.max_identities {
        entries.truncate(n);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no identity under {} is observed in both cameras",
            root.display()
        )));
    }
    Ok(DatasetIndex { entries, warnings })
}

pub fn decode(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

impl DatasetIndex {
    pub fn k_total(&self) -> usize {
        self.entries.len()
    }

    /// Decodes every indexed image.
    pub fn load(&self) -> Result<RawDataset> {
        let identities = self
            .entries
            .iter()
            .map(|e| {
                Ok(RawIdentity {
                    name: e.name.clone(),
                    probe: decode(&e.probe)?,
                    cam_a: e.cam_a.iter().map(|p| decode(p)).collect::<Result<_>>()?,
                    cam_b: e.cam_b.iter().map(|p| decode(p)).collect::<Result<_>>()?,
                    single_shot: e.single_shot,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RawDataset { identities })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use image::Rgb;

    fn write(path: &Path, shade: u8) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_pixel(4, 4, Rgb([shade, shade, shade])).save(path).unwrap();
    }

    #[test]
    fn two_identities_two_cameras() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["bob", "alice"] {
            for cam in ["cam_a", "cam_b"] {
                for f in 0..3 {
                    write(&dir.path().join(cam).join(id).join(format!("{f}.png")), 10 * f as u8);
                }
            }
        }
        let idx = ingest(dir.path(), &LayoutConfig::default()).unwrap();
        assert_eq!(idx.k_total(), 2);
        assert_eq!(idx.entries[0].name, "alice");
        assert!(idx.entries.iter().all(|e| e.cam_a.len() == 3 && e.cam_b.len() == 3));
        assert!(!idx.entries[0].single_shot);
        assert_eq!(idx.entries[0].probe, idx.entries[0].cam_a[0]);
        assert!(idx.warnings.is_empty());
    }

    #[test]
    fn single_view_identity_skipped() {
        let dir = tempfile::tempdir().unwrap();
        for cam in ["cam_a", "cam_b"] {
            write(&dir.path().join(cam).join("both/0.png"), 1);
        }
        write(&dir.path().join("cam_a/only_a/0.png"), 1);
        let idx = ingest(dir.path(), &LayoutConfig::default()).unwrap();
        assert_eq!(idx.k_total(), 1);
        assert_eq!(idx.warnings.len(), 1);
        assert!(idx.warnings[0].contains("only_a"));
    }

    #[test]
    fn frames_sorted_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png", "c.png"] {
            write(&dir.path().join("cam_a/p").join(name), 1);
            write(&dir.path().join("cam_b/p").join(name), 1);
        }
        let idx = ingest(dir.path(), &LayoutConfig::default()).unwrap();
        let names: Vec<_> = idx.entries[0]
            .cam_b
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]);
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest(dir.path(), &LayoutConfig::default()), Err(Error::Dataset(_))));
        assert!(matches!(
            ingest(&dir.path().join("missing"), &LayoutConfig::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("cam_a/p/0.png"), 1);
        fs::create_dir_all(dir.path().join("cam_b/p")).unwrap();
        fs::write(dir.path().join("cam_b/p/0.png"), b"not a png").unwrap();
        let idx = ingest(dir.path(), &LayoutConfig::default()).unwrap();
        let err = idx.load().unwrap_err();
        assert!(err.to_string().contains("cam_b/p/0.png"), "{err}");
    }

    #[test]
    fn max_identities_keeps_first() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["c", "a", "b"] {
            write(&dir.path().join("cam_a").join(id).join("0.png"), 1);
            write(&dir.path().join("cam_b").join(id).join("0.png"), 1);
        }
        let layout = LayoutConfig {
            max_identities: Some(2),
            ..LayoutConfig::default()
        };
        let idx = ingest(dir.path(), &layout).unwrap();
        let names: Vec<_> = idx.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn synthetic_tree_round_trips() {
        let cfg = SynthConfig {
            identities: 3,
            frames: 2,
            resolution: 12,
            noise: 0.2,
            seed: 9,
        };
        let ds = synth_generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.emit(dir.path()).unwrap();
        let back = ingest(dir.path(), &LayoutConfig::default()).unwrap().load().unwrap();
        assert_eq!(back, ds);
    }
}
