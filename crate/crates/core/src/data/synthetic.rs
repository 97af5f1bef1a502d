//! Procedural toy video: band-limited textured backgrounds with camera pan
//! and moving foreground objects. Textures are analytic, so sub-pixel motion
//! is rendered exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, VideoSequence};
use super::io::write_yuv420;
use super::manifest::{DatasetManifest, SequenceEntry, SequenceFormat};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SceneKind {
    /// Camera pan plus independently moving objects.
    Moving,
    /// Nothing moves.
    Static,
    /// Pure global translation by a fixed per-frame displacement.
    Shift { dx: f32, dy: f32 },
    /// One object crosses the right border, leaves, then comes back.
    Occlusion,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amp: [f32; 3],
}

#[derive(Debug, Clone, Copy)]
struct Object {
    cx: f32,
    cy: f32,
    half_w: f32,
    half_h: f32,
    vx: f32,
    vy: f32,
    color: [f32; 3],
    stripe: f32,
}

#[derive(Debug, Clone)]
pub struct Scene {
    base: [f32; 3],
    waves: Vec<Wave>,
    objects: Vec<Object>,
    pan: (f32, f32),
    kind: SceneKind,
    width: usize,
    height: usize,
}

fn smoothstep(e: f32) -> f32 {
    let t = (e + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Scene {
    pub fn random(kind: SceneKind, width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.random_range(0.25..0.75),
            rng.random_range(0.25..0.75),
            rng.random_range(0.25..0.75),
        ];
        let waves = (0..5)
            .map(|_| {
                let period = rng.random_range(20.0f32..80.0);
                let angle = rng.random_range(0.0f32..std::f32::consts::TAU);
                let f = std::f32::consts::TAU / period;
                Wave {
                    fx: f * angle.cos(),
                    fy: f * angle.sin(),
                    phase: rng.random_range(0.0..std::f32::consts::TAU),
                    amp: [
                        rng.random_range(-0.09..0.09),
                        rng.random_range(-0.09..0.09),
                        rng.random_range(-0.09..0.09),
                    ],
                }
            })
            .collect();
        let (w, h) = (width as f32, height as f32);
        let n_obj = match kind {
            SceneKind::Moving => rng.random_range(1..=3),
            SceneKind::Occlusion => 1,
            _ => 0,
        };
        let objects = (0..n_obj)
            .map(|_| {
                let mut o = Object {
                    cx: rng.random_range(0.2 * w..0.8 * w),
                    cy: rng.random_range(0.2 * h..0.8 * h),
                    half_w: rng.random_range(0.08 * w..0.2 * w),
                    half_h: rng.random_range(0.08 * h..0.2 * h),
                    vx: rng.random_range(-2.5..2.5),
                    vy: rng.random_range(-2.0..2.0),
                    color: [rng.random(), rng.random(), rng.random()],
                    stripe: rng.random_range(10.0..24.0),
                };
                if kind == SceneKind::Occlusion {
                    o.cx = 0.75 * w;
                    o.vx = 0.25 * w;
                    o.vy = 0.0;
                }
                o
            })
            .collect();
        let pan = match kind {
            SceneKind::Moving => (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
            SceneKind::Shift { dx, dy } => (dx, dy),
            _ => (0.0, 0.0),
        };
        Scene {
            base,
            waves,
            objects,
            pan,
            kind,
            width,
            height,
        }
    }

    fn background(&self, c: usize, x: f32, y: f32) -> f32 {
        let mut v = self.base[c];
        for w in &self.waves {
            v += w.amp[c] * (w.fx * x + w.fy * y + w.phase).sin();
        }
        v
    }

    fn object_center(&self, o: &Object, t: usize) -> (f32, f32) {
        if self.kind == SceneKind::Occlusion {
            // out to the right for three frames, then back
            let steps = t as f32;
            let period = 6.0;
            let phase = steps % period;
            let dist = if phase <= period / 2.0 { phase } else { period - phase };
            return (o.cx + o.vx * dist, o.cy);
        }
        (o.cx + o.vx * t as f32, o.cy + o.vy * t as f32)
    }

    pub fn render(&self, t: usize) -> Frame {
        let (px, py) = (self.pan.0 * t as f32, self.pan.1 * t as f32);
        let centers: Vec<_> = self.objects.iter().map(|o| self.object_center(o, t)).collect();
        Frame::from_fn(self.width, self.height, |c, y, x| {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            // backward warp: content at (x, y) came from (x + pan) in frame 0
            let mut v = self.background(c, fx + px, fy + py);
            for (o, &(cx, cy)) in self.objects.iter().zip(&centers) {
                let ex = o.half_w - (fx - cx).abs();
                let ey = o.half_h - (fy - cy).abs();
                let cover = smoothstep(ex) * smoothstep(ey);
                if cover > 0.0 {
                    let stripe = 0.12 * ((fx - cx) * std::f32::consts::TAU / o.stripe).sin();
                    v = v * (1.0 - cover) + (o.color[c] + stripe) * cover;
                }
            }
            v.clamp(0.0, 1.0)
        })
    }
}

pub fn generate_sequence(name: &str, kind: SceneKind, width: usize, height: usize, frames: usize, seed: u64) -> VideoSequence {
    let scene = Scene::random(kind, width, height, seed);
    let frames = (0..frames).map(|t| scene.render(t)).collect();
    VideoSequence::new(name, 30.0, frames).expect("at least two frames requested")
}

/// A mix of scene kinds cycling through moving, shifted, occlusion and static.
pub fn toy_kind(i: usize, rng: &mut impl Rng) -> SceneKind {
    match i % 6 {
        0 | 1 | 2 => SceneKind::Moving,
        3 => SceneKind::Shift {
            dx: rng.random_range(-3i32..=3) as f32,
            dy: rng.random_range(-2i32..=2) as f32,
        },
        4 => SceneKind::Occlusion,
        _ => SceneKind::Static,
    }
}

/// Writes `count` sequences as 4:2:0 files plus a manifest into `dir`.
pub fn write_toy_dataset(dir: impl AsRef<Path>, count: usize, width: usize, height: usize, frames: usize, seed: u64) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::default();
    for i in 0..count {
        let kind = toy_kind(i, &mut rng);
        let name = format!("toy_{i:03}");
        let seq = generate_sequence(&name, kind, width, height, frames, rng.random());
        let file = format!("{name}.yuv");
        write_yuv420(dir.join(&file), seq.frames())?;
        manifest.sequences.push(SequenceEntry {
            name,
            path: file.into(),
            format: SequenceFormat::Yuv420,
            width,
            height,
            frames,
            fps: 30.0,
        });
    }
    manifest.save(dir)?;
    Ok(manifest)
}

/// In-memory variant of [`write_toy_dataset`] (RGB, no 4:2:0 round trip).
pub fn toy_sequences(count: usize, width: usize, height: usize, frames: usize, seed: u64) -> Vec<VideoSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = toy_kind(i, &mut rng);
            generate_sequence(&format!("toy_{i:03}"), kind, width, height, frames, rng.random())
        })
        .collect()
}
