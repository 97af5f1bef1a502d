use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frame::{Frame, VideoSequence};
use super::manifest::DatasetManifest;
use crate::error::{NvcError, Result};

/// Where a clip was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipOrigin {
    pub sequence: usize,
    pub first_frame: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub origin: ClipOrigin,
}

/// Endless, seeded stream of random spatio-temporal crops.
pub struct ClipSampler {
    sequences: Vec<VideoSequence>,
    eligible: Vec<usize>,
    clip_len: usize,
    patch: usize,
    rng: ChaCha8Rng,
}

impl ClipSampler {
    pub fn new(sequences: Vec<VideoSequence>, clip_len: usize, patch: usize, seed: u64) -> Result<Self> {
        let eligible: Vec<usize> = sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                let (w, h) = s.dims();
                s.len() >= clip_len && w >= patch && h >= patch
            })
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() || clip_len == 0 || patch == 0 {
            return Err(NvcError::EmptyDataset(format!(
                "no sequence holds a {clip_len}-frame clip of {patch}x{patch} patches"
            )));
        }
        Ok(ClipSampler {
            sequences,
            eligible,
            clip_len,
            patch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Loads every sequence of the dataset manifest under `root`.
    pub fn from_dataset(root: impl AsRef<Path>, clip_len: usize, patch: usize, seed: u64) -> Result<Self> {
        let (manifest, dir) = DatasetManifest::load(root)?;
        let sequences = manifest
            .sequences
            .iter()
            .map(|e| e.load_rgb(&dir, None))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sequences, clip_len, patch, seed)
    }

    pub fn sequences(&self) -> &[VideoSequence] {
        &self.sequences
    }

    pub fn next_origin(&mut self) -> ClipOrigin {
        let sequence = self.eligible[self.rng.random_range(0..self.eligible.len())];
        let seq = &self.sequences[sequence];
        let (w, h) = seq.dims();
        ClipOrigin {
            sequence,
            first_frame: self.rng.random_range(0..=seq.len() - self.clip_len),
            x: self.rng.random_range(0..=w - self.patch),
            y: self.rng.random_range(0..=h - self.patch),
        }
    }

    pub fn cut(&self, origin: ClipOrigin) -> Clip {
        let seq = &self.sequences[origin.sequence];
        let frames = seq.frames()[origin.first_frame..origin.first_frame + self.clip_len]
            .iter()
            .map(|f| f.crop_region(origin.x, origin.y, self.patch, self.patch).expect("origin in bounds"))
            .collect();
        Clip { frames, origin }
    }
}

impl Iterator for ClipSampler {
    type Item = Clip;

    fn next(&mut self) -> Option<Clip> {
        let origin = self.next_origin();
        Some(self.cut(origin))
    }
}
