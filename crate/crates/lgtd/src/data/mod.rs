//! Frame/clip types, bicubic degradation, patch sampling, augmentation,
//! synthetic scene generation, and the on-disk dataset contract.
//!
//! Dataset layout: `<root>/<scene>/<zero-padded index>.png`, 8-bit RGB,
//! frame indices contiguous from zero. An optional `manifest.json` at the
//! root pins train/test scene splits.

pub mod augment;
pub mod dataset;
pub mod degrade;
pub mod synth;

pub use augment::{augment, sample_patch, AugmentFlags};
pub use dataset::{
    load_dataset, load_frame, load_scene, save_frame, write_scene, DatasetIndex, SceneEntry,
};
pub use degrade::{degrade, upsample, upsample_frame};
pub use synth::{synth_scene, synth_scene_with_objects, ObjectTrack, SynthParams};

use ndarray::Array3;

use crate::error::{Error, Result};

/// One RGB frame, channels-first [3, H, W], values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Array3<f64>,
}

impl Frame {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        if pixels.shape()[0] != 3 {
            return Err(Error::shape(
                "frame",
                format!("expected 3 channels, got {}", pixels.shape()[0]),
            ));
        }
        if !pixels.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::shape("frame", "pixel values outside [0,1]"));
        }
        Ok(Frame { pixels })
    }

    /// Clamp into [0,1] instead of rejecting; for model outputs and
    /// resampling results.
    pub fn from_clamped(pixels: Array3<f64>) -> Self {
        assert_eq!(pixels.shape()[0], 3, "frame needs 3 channels");
        Frame {
            pixels: pixels.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn h(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Ordered sequence of frames from one scene, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub scene_id: String,
    pub start_index: usize,
}

impl Clip {
    pub fn new(frames: Vec<Frame>, scene_id: impl Into<String>, start_index: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::shape("clip", "no frames"));
        }
        let (h, w) = (frames[0].h(), frames[0].w());
        if !frames.iter().all(|f| f.h() == h && f.w() == w) {
            return Err(Error::shape("clip", "frames differ in size"));
        }
        Ok(Clip {
            frames,
            scene_id: scene_id.into(),
            start_index,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn h(&self) -> usize {
        self.frames[0].h()
    }

    pub fn w(&self) -> usize {
        self.frames[0].w()
    }

    /// Center frame index; clips fed to the model have odd length.
    pub fn target_index(&self) -> usize {
        self.len() / 2
    }
}

/// LR clip plus the HR ground truth of its center frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub lr: Clip,
    pub hr: Frame,
    pub r: usize,
}

impl PairedSample {
    pub fn new(lr: Clip, hr: Frame, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::config("r", "scale must be >= 1"));
        }
        if hr.h() != r * lr.h() || hr.w() != r * lr.w() {
            return Err(Error::shape(
                "paired_sample",
                format!(
                    "hr {}x{} is not {r}x the lr {}x{}",
                    hr.h(),
                    hr.w(),
                    lr.h(),
                    lr.w()
                ),
            ));
        }
        Ok(PairedSample { lr, hr, r })
    }

    /// Degrade an HR clip and pair it with its center frame.
    pub fn from_hr_clip(hr_clip: &Clip, r: usize) -> Result<Self> {
        let lr = degrade(hr_clip, r)?;
        let hr = hr_clip.frames[hr_clip.target_index()].clone();
        PairedSample::new(lr, hr, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn frame_rejects_out_of_range() {
        let mut px = Array3::zeros((3, 4, 4));
        px[[0, 0, 0]] = 1.5;
        assert!(Frame::new(px).is_err());
        let px = Array3::from_elem((3, 4, 4), 0.5);
        assert!(Frame::new(px).is_ok());
    }

    #[test]
    fn clip_rejects_mixed_sizes() {
        let a = Frame::new(Array3::zeros((3, 4, 4))).unwrap();
        let b = Frame::new(Array3::zeros((3, 8, 8))).unwrap();
        assert!(Clip::new(vec![a.clone(), b], "s", 0).is_err());
        assert!(Clip::new(vec![a.clone(), a], "s", 0).is_ok());
    }

    #[test]
    fn paired_sample_checks_scale() {
        let lr = Clip::new(
            vec![Frame::new(Array3::zeros((3, 4, 4))).unwrap(); 3],
            "s",
            0,
        )
        .unwrap();
        let hr_good = Frame::new(Array3::zeros((3, 16, 16))).unwrap();
        let hr_bad = Frame::new(Array3::zeros((3, 12, 16))).unwrap();
        assert!(PairedSample::new(lr.clone(), hr_good, 4).is_ok());
        assert!(PairedSample::new(lr, hr_bad, 4).is_err());
    }
}
