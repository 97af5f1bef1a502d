use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frame::VideoSequence;
use super::io::{ensure_rgb, read_png, read_yuv420};
use crate::error::{NvcError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceFormat {
    Yuv420,
    /// A directory of PNG frames, read in lexicographic order.
    Png,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub format: SequenceFormat,
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub height: usize,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    /// Accepts either the manifest file or the directory containing it.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| NvcError::Manifest(format!("{}: {e}", file.display())))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| NvcError::Manifest(format!("{}: {e}", file.display())))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.as_ref().join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

impl SequenceEntry {
    /// Loads the sequence as RGB frames; `limit` caps the frame count.
    pub fn load_rgb(&self, root: &Path, limit: Option<usize>) -> Result<VideoSequence> {
        let n = limit.map_or(self.frames, |l| l.min(self.frames));
        let path = root.join(&self.path);
        let seq = match self.format {
            SequenceFormat::Yuv420 => read_yuv420(&path, self.width, self.height, n)?,
            SequenceFormat::Png => {
                let mut files: Vec<_> = std::fs::read_dir(&path)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                    .collect();
                files.sort();
                if files.len() < n {
                    return Err(NvcError::Manifest(format!(
                        "`{}` lists {} frames, found {} pngs",
                        self.name,
                        self.frames,
                        files.len()
                    )));
                }
                let frames = files[..n].iter().map(read_png).collect::<Result<Vec<_>>>()?;
                VideoSequence::new(self.name.clone(), self.fps, frames)?
            }
        };
        let mut seq = seq.map_frames(ensure_rgb);
        seq.name = self.name.clone();
        seq.fps = self.fps;
        Ok(seq)
    }
}
