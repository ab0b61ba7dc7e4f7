//! On-disk dataset handling.
//!
//! A dataset root contains one directory per scene; each scene directory
//! holds 8-bit RGB PNG frames named by zero-padded index (`0000.png`,
//! `0001.png`, ...), contiguous from zero. An optional `manifest.json` at
//! the root pins the train/test scene split:
//!
//! ```json
//! { "train": ["scene_a"], "test": ["scene_b"] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{Clip, Frame};
use crate::error::{Error, Result};

/// Load one PNG as an RGB frame with values in [0, 1].
pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
        img.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
    });
    Frame::new(px)
}

/// Save a frame as an 8-bit RGB PNG (values rounded onto 0..=255).
pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = (frame.h(), frame.w());
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            (frame.pixels[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}

/// Write a clip as `<root>/<scene_id>/<zero-padded index>.png` and return
/// the scene directory. Frame numbering starts at the clip's start index.
pub fn write_scene(root: &Path, clip: &Clip) -> Result<PathBuf> {
    let dir = root.join(&clip.scene_id);
    fs::create_dir_all(&dir)?;
    for (k, frame) in clip.frames.iter().enumerate() {
        let path = dir.join(format!("{:04}.png", clip.start_index + k));
        save_frame(&path, frame)?;
    }
    Ok(dir)
}

/// Train/test split by scene id.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

/// One indexed scene: frame paths in temporal order, plus the common size.
#[derive(Debug, Clone)]
pub struct SceneEntry {
    pub id: String,
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub height: usize,
    pub width: usize,
}

impl SceneEntry {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Load `len` consecutive frames starting at `start`.
    pub fn load_clip(&self, start: usize, len: usize) -> Result<Clip> {
        if len == 0 || start + len > self.frames.len() {
            return Err(Error::Scene {
                scene: self.id.clone(),
                detail: format!(
                    "clip [{start}, {}) out of range, scene has {} frames",
                    start + len,
                    self.frames.len()
                ),
            });
        }
        let frames = self.frames[start..start + len]
            .iter()
            .map(|p| load_frame(p))
            .collect::<Result<Vec<_>>>()?;
        Clip::new(frames, self.id.clone(), start)
    }

    pub fn load_all(&self) -> Result<Clip> {
        self.load_clip(0, self.frames.len())
    }
}

/// Index over a dataset root: validated scenes plus the optional manifest.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub scenes: Vec<SceneEntry>,
    pub manifest: Option<Manifest>,
}

impl DatasetIndex {
    pub fn scene(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id)
    }

    fn select(&self, ids: Option<&[String]>) -> Vec<&SceneEntry> {
        match ids {
            Some(ids) => ids
                .iter()
                .filter_map(|id| self.scene(id))
                .collect(),
            None => self.scenes.iter().collect(),
        }
    }

    /// Scenes in the training split (all scenes when there is no manifest).
    pub fn train_scenes(&self) -> Vec<&SceneEntry> {
        self.select(self.manifest.as_ref().map(|m| m.train.as_slice()))
    }

    /// Scenes in the test split (all scenes when there is no manifest).
    pub fn test_scenes(&self) -> Vec<&SceneEntry> {
        self.select(self.manifest.as_ref().map(|m| m.test.as_slice()))
    }
}

fn index_scene(id: &str, dir: &Path) -> Result<SceneEntry> {
    let scene_err = |detail: String| Error::Scene {
        scene: id.to_string(),
        detail,
    };
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let idx = stem.parse::<usize>().map_err(|_| {
            scene_err(format!("frame file {:?} is not named by index", path.file_name()))
        })?;
        indexed.push((idx, path));
    }
    if indexed.is_empty() {
        return Err(scene_err("no PNG frames".to_string()));
    }
    indexed.sort_by_key(|(i, _)| *i);
    for (want, (got, _)) in indexed.iter().enumerate() {
        if *got != want {
            return Err(scene_err(format!(
                "frame indices not contiguous from 0: expected {want}, found {got}"
            )));
        }
    }
    let (w0, h0) = image::image_dimensions(&indexed[0].1)?;
    for (_, path) in &indexed {
        let (w, h) = image::image_dimensions(path)?;
        if (w, h) != (w0, h0) {
            return Err(scene_err(format!(
                "frame {:?} is {w}x{h} but the scene started at {w0}x{h0}",
                path.file_name()
            )));
        }
    }
    Ok(SceneEntry {
        id: id.to_string(),
        dir: dir.to_path_buf(),
        frames: indexed.into_iter().map(|(_, p)| p).collect(),
        height: h0 as usize,
        width: w0 as usize,
    })
}

/// Index and validate a single scene directory (PNG frames named by index).
pub fn load_scene(dir: &Path) -> Result<SceneEntry> {
    if !dir.is_dir() {
        return Err(Error::config(
            "scene_dir",
            format!("{} is not a directory", dir.display()),
        ));
    }
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    index_scene(&id, dir)
}

/// Index and validate a dataset root.
///
/// Every scene directory must contain same-sized PNG frames with contiguous
/// zero-based indices; a manifest, if present, may only reference scenes
/// that exist.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::config(
            "data_root",
            format!("{} is not a directory", root.display()),
        ));
    }
    let mut scenes = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let id = path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config("data_root", "non-UTF8 scene name"))?
            .to_string();
        scenes.push(index_scene(&id, &path)?);
    }
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    if scenes.is_empty() {
        return Err(Error::config(
            "data_root",
            format!("no scene directories under {}", root.display()),
        ));
    }

    let manifest_path = root.join("manifest.json");
    let manifest = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::config("manifest.json", e.to_string()))?;
        for id in m.train.iter().chain(m.test.iter()) {
            if !scenes.iter().any(|s| &s.id == id) {
                return Err(Error::config(
                    "manifest.json",
                    format!("references unknown scene {id:?}"),
                ));
            }
        }
        Some(m)
    } else {
        None
    };

    Ok(DatasetIndex {
        root: root.to_path_buf(),
        scenes,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_scene, SynthParams};
    use tempfile::TempDir;

    fn demo_clip(seed: u64) -> Clip {
        synth_scene(
            seed,
            &SynthParams {
                num_frames: 4,
                height: 24,
                width: 32,
                num_objects: 2,
                max_speed: 1.0,
                texture_scale: 8.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_preserves_quantized_pixels() {
        let tmp = TempDir::new().unwrap();
        let clip = demo_clip(1);
        write_scene(tmp.path(), &clip).unwrap();
        let idx = load_dataset(tmp.path()).unwrap();
        assert_eq!(idx.scenes.len(), 1);
        let loaded = idx.scenes[0].load_all().unwrap();
        assert_eq!(loaded.len(), clip.len());
        assert_eq!((loaded.h(), loaded.w()), (clip.h(), clip.w()));
        for (lf, of) in loaded.frames.iter().zip(clip.frames.iter()) {
            for (l, o) in lf.pixels.iter().zip(of.pixels.iter()) {
                let q = (o * 255.0).round() / 255.0;
                assert!((l - q).abs() < 1e-12, "{l} vs quantized {q}");
            }
        }
    }

    #[test]
    fn writes_are_byte_identical() {
        let tmp_a = TempDir::new().unwrap();
        let tmp_b = TempDir::new().unwrap();
        let clip = demo_clip(2);
        write_scene(tmp_a.path(), &clip).unwrap();
        write_scene(tmp_b.path(), &clip).unwrap();
        for k in 0..clip.len() {
            let name = format!("{}/{:04}.png", clip.scene_id, k);
            let a = std::fs::read(tmp_a.path().join(&name)).unwrap();
            let b = std::fs::read(tmp_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical writes");
        }
    }

    #[test]
    fn missing_frame_is_reported_with_scene_name() {
        let tmp = TempDir::new().unwrap();
        let clip = demo_clip(3);
        let dir = write_scene(tmp.path(), &clip).unwrap();
        std::fs::remove_file(dir.join("0001.png")).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains(&clip.scene_id), "missing scene id in: {err}");
        assert!(err.contains("contiguous"), "unhelpful message: {err}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let tmp = TempDir::new().unwrap();
        let clip = demo_clip(4);
        let dir = write_scene(tmp.path(), &clip).unwrap();
        let odd = Frame::new(ndarray::Array3::zeros((3, 8, 8))).unwrap();
        save_frame(&dir.join(format!("{:04}.png", clip.len())), &odd).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("8x8"), "unhelpful message: {err}");
    }

    #[test]
    fn unpadded_indices_still_sort_numerically() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("scene");
        std::fs::create_dir(&dir).unwrap();
        // 11 frames, one of them deliberately written without padding:
        // lexicographic order would put "2.png" after "0010.png".
        for k in 0..11usize {
            let name = if k == 2 {
                "2.png".to_string()
            } else {
                format!("{k:04}.png")
            };
            let v = k as f64 / 10.0;
            let f = Frame::new(ndarray::Array3::from_elem((3, 8, 8), v)).unwrap();
            save_frame(&dir.join(name), &f).unwrap();
        }
        let idx = load_dataset(tmp.path()).unwrap();
        let clip = idx.scenes[0].load_all().unwrap();
        for (k, f) in clip.frames.iter().enumerate() {
            let want = (k as f64 / 10.0 * 255.0).round() / 255.0;
            assert!((f.pixels[[0, 0, 0]] - want).abs() < 1e-12, "frame {k} out of order");
        }
    }

    #[test]
    fn manifest_controls_the_split() {
        let tmp = TempDir::new().unwrap();
        for seed in [1u64, 2, 3] {
            let mut clip = demo_clip(seed);
            clip.scene_id = format!("scene_{seed}");
            write_scene(tmp.path(), &clip).unwrap();
        }
        std::fs::write(
            tmp.path().join("manifest.json"),
            r#"{ "train": ["scene_1", "scene_3"], "test": ["scene_2"] }"#,
        )
        .unwrap();
        let idx = load_dataset(tmp.path()).unwrap();
        let train: Vec<_> = idx.train_scenes().iter().map(|s| s.id.clone()).collect();
        let test: Vec<_> = idx.test_scenes().iter().map(|s| s.id.clone()).collect();
        assert_eq!(train, vec!["scene_1", "scene_3"]);
        assert_eq!(test, vec!["scene_2"]);

        std::fs::write(
            tmp.path().join("manifest.json"),
            r#"{ "train": ["ghost"], "test": [] }"#,
        )
        .unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("ghost"), "unhelpful message: {err}");
    }

    #[test]
    fn no_manifest_means_all_scenes_in_both_splits() {
        let tmp = TempDir::new().unwrap();
        let clip = demo_clip(5);
        write_scene(tmp.path(), &clip).unwrap();
        let idx = load_dataset(tmp.path()).unwrap();
        assert!(idx.manifest.is_none());
        assert_eq!(idx.train_scenes().len(), 1);
        assert_eq!(idx.test_scenes().len(), 1);
    }

    #[test]
    fn scene_clip_bounds_are_checked() {
        let tmp = TempDir::new().unwrap();
        let clip = demo_clip(6);
        write_scene(tmp.path(), &clip).unwrap();
        let idx = load_dataset(tmp.path()).unwrap();
        let scene = &idx.scenes[0];
        assert!(scene.load_clip(0, 4).is_ok());
        assert!(scene.load_clip(2, 3).is_err());
        assert!(scene.load_clip(0, 0).is_err());
    }
}
