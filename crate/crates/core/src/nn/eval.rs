//! Rate-distortion evaluation over a dataset manifest: one trained model
//! per λ, real bitstreams written to disk, RD tables, BD-rate against an
//! anchor table, channel bitrate reports and static plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, read_meta};
use super::codec::NeuralCodec;
use crate::bitstream::{read_nvc1, write_nvc1, FrameType};
use crate::coder::CoderBackend;
use crate::data::{DatasetManifest, SequenceEntry};
use crate::error::{NvcError, Result};
use crate::metrics::{
    averaged_curve, bd_rate_by_sequence, channel_bitrate_ratio, channel_plot_svg, psnr_rgb, psnr_yuv_compound, rd_plot_svg,
    read_rd_csv, write_rd_csv, BdRateSummary, ChannelBitrateReport, ChannelKind, QualityMetric, RdCurve, RdRow,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub intra_period: usize,
    pub frames: usize,
    pub out_dir: PathBuf,
    /// RD table of the anchor codec for BD-rate.
    pub anchor: Option<PathBuf>,
    pub label: String,
    pub metric: QualityMetric,
    /// Decode every bitstream and require the encoder's reconstructions.
    pub verify_decode: bool,
    /// Threads coding sequences in parallel, each with its own model copy.
    pub workers: usize,
}

impl EvalOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        EvalOptions {
            intra_period: 32,
            frames: 96,
            out_dir: out_dir.into(),
            anchor: None,
            label: "nvc".into(),
            metric: QualityMetric::Rgb,
            verify_decode: true,
            workers: 1,
        }
    }
}

/// Coding result of one sequence at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub row: RdRow,
    pub frames: usize,
    pub bitstream: PathBuf,
    pub estimated_bits: f64,
    pub payload_bits: f64,
    /// Contextual latent bits, `[P-frame][channel]`.
    pub context_bits: Vec<Vec<f64>>,
    /// Motion latent bits, `[P-frame][channel]`.
    pub motion_bits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<RdRow>,
    /// Absent when the averaged points are not monotone in rate and quality.
    pub averaged: Option<RdCurve>,
    pub bd_rate: Option<BdRateSummary>,
    /// Keyed by λ index.
    pub contextual_channels: BTreeMap<usize, ChannelBitrateReport>,
    pub motion_channels: BTreeMap<usize, ChannelBitrateReport>,
    pub sequences: Vec<SequenceResult>,
}

/// Codes every sequence with `codec` and writes one `.nvc1` file each.
pub fn eval_model(codec: &NeuralCodec, lambda_index: usize, entries: &[SequenceEntry], root: &Path, opts: &EvalOptions) -> Result<Vec<SequenceResult>> {
    let dir = opts.out_dir.join("bitstreams");
    std::fs::create_dir_all(&dir)?;
    let mut out = Vec::new();
    for entry in entries {
        let seq = entry.load_rgb(root, Some(opts.frames))?;
        let frames = seq.frames();
        let coded = codec.encode_sequence(frames, opts.intra_period)?;
        let path = dir.join(format!("{}_l{lambda_index}.nvc1", entry.name));
        write_nvc1(&path, &coded.units)?;
        let bytes = std::fs::metadata(&path)?.len();
        let reported: usize = coded.units.iter().map(|u| u.byte_len()).sum();
        if bytes as usize != reported {
            return Err(NvcError::MalformedStream(format!("{} holds {bytes} bytes, encoder reported {reported}", path.display())));
        }
        if opts.verify_decode {
            let decoded = codec.decode_sequence(&read_nvc1(&path)?)?;
            if decoded.iter().zip(&coded.recon).any(|(a, b)| a.data() != b.data()) {
                return Err(NvcError::MalformedStream(format!("{}: decoder output differs from the encoder's", entry.name)));
            }
        }
        let (w, h) = seq.dims();
        let n = frames.len();
        let mut prgb = 0.0;
        let mut pyuv = 0.0;
        for (a, b) in frames.iter().zip(&coded.recon) {
            prgb += psnr_rgb(a, b)?.db;
            pyuv += psnr_yuv_compound(a, b)?.db;
        }
        let inter = || coded.stats.iter().filter(|s| s.frame_type == FrameType::Inter);
        out.push(SequenceResult {
            row: RdRow {
                sequence: entry.name.clone(),
                lambda_index,
                bpp: 8.0 * bytes as f64 / (w * h * n) as f64,
                psnr_rgb: prgb / n as f64,
                psnr_yuv: pyuv / n as f64,
            },
            frames: n,
            bitstream: path,
            estimated_bits: coded.stats.iter().map(|s| s.estimated_bits()).sum(),
            payload_bits: coded.stats.iter().map(|s| s.payload_bits()).sum(),
            context_bits: inter().map(|s| s.latent_channel_bits.clone()).collect(),
            motion_bits: inter().map(|s| s.motion_channel_bits.clone()).collect(),
        });
    }
    Ok(out)
}

/// Evaluates one checkpoint per λ on the dataset under `dataset_root`.
pub fn run_eval(checkpoints: &[PathBuf], dataset_root: &Path, backend: &(dyn CoderBackend + Sync), opts: &EvalOptions) -> Result<EvalReport> {
    if checkpoints.is_empty() {
        return Err(NvcError::MissingCheckpoint(PathBuf::from("<none given>")));
    }
    for c in checkpoints {
        if !c.exists() {
            return Err(NvcError::MissingCheckpoint(c.clone()));
        }
    }
    let (manifest, root) = DatasetManifest::load(dataset_root)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut sequences = Vec::new();
    let mut contextual_channels = BTreeMap::new();
    let mut motion_channels = BTreeMap::new();
    for path in checkpoints {
        let meta = read_meta(path)?;
        log::info!("evaluating {} (lambda index {})", path.display(), meta.lambda_index);
        let mut res = eval_parallel(path, backend, &manifest.sequences, &root, opts)?;
        res.sort_by(|a, b| a.row.sequence.cmp(&b.row.sequence));
        let ctx: Vec<Vec<f64>> = res.iter().flat_map(|r| r.context_bits.iter().cloned()).collect();
        let mot: Vec<Vec<f64>> = res.iter().flat_map(|r| r.motion_bits.iter().cloned()).collect();
        if !ctx.is_empty() {
            contextual_channels.insert(meta.lambda_index, channel_bitrate_ratio(&ctx, ChannelKind::Contextual)?);
            motion_channels.insert(meta.lambda_index, channel_bitrate_ratio(&mot, ChannelKind::Motion)?);
        }
        sequences.extend(res);
    }
    sequences.sort_by(|a, b| a.row.sequence.cmp(&b.row.sequence).then(a.row.lambda_index.cmp(&b.row.lambda_index)));
    let rows: Vec<RdRow> = sequences.iter().map(|s| s.row.clone()).collect();
    let averaged = match averaged_curve(&rows, opts.metric, &opts.label) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("no averaged RD curve: {e}");
            None
        }
    };
    let bd_rate = match &opts.anchor {
        Some(a) => Some(bd_rate_by_sequence(&read_rd_csv(a)?, &rows, opts.metric)?),
        None => None,
    };
    let report = EvalReport { label: opts.label.clone(), rows, averaged, bd_rate, contextual_channels, motion_channels, sequences };
    write_report(&report, opts)?;
    Ok(report)
}

fn eval_parallel(ckpt: &Path, backend: &(dyn CoderBackend + Sync), entries: &[SequenceEntry], root: &Path, opts: &EvalOptions) -> Result<Vec<SequenceResult>> {
    let run = |part: &[SequenceEntry]| -> Result<Vec<SequenceResult>> {
        let (model, meta) = load_checkpoint(ckpt)?;
        let codec = NeuralCodec::new(&model, backend, meta.lambda_index)?;
        eval_model(&codec, meta.lambda_index, part, root, opts)
    };
    let workers = opts.workers.clamp(1, entries.len().max(1));
    if workers == 1 {
        return run(entries);
    }
    let per = entries.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = entries.chunks(per).map(|part| s.spawn(move || run(part))).collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().map_err(|_| NvcError::Checkpoint("evaluation worker panicked".into()))??);
        }
        Ok(out)
    })
}

fn write_report(r: &EvalReport, opts: &EvalOptions) -> Result<()> {
    let dir = &opts.out_dir;
    write_rd_csv(dir.join("rd.csv"), &r.rows)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(r)?)?;
    let label = match opts.metric {
        QualityMetric::Rgb => "PSNR-RGB (dB)",
        QualityMetric::Yuv => "PSNR-YUV (dB)",
    };
    let mut curves: Vec<RdCurve> = r.averaged.iter().cloned().collect();
    if let Some(a) = &opts.anchor {
        curves.push(averaged_curve(&read_rd_csv(a)?, opts.metric, "anchor")?);
    }
    std::fs::write(dir.join("rd.svg"), rd_plot_svg(&curves, label))?;
    for (kind, reports) in [("contextual", &r.contextual_channels), ("motion", &r.motion_channels)] {
        for (l, rep) in reports {
            std::fs::write(dir.join(format!("channels_{kind}_l{l}.csv")), rep.to_csv())?;
            std::fs::write(dir.join(format!("channels_{kind}_l{l}.svg")), channel_plot_svg(rep, 100))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::ReferenceCoder;
    use crate::config::ModelConfig;
    use crate::data::synthetic::write_toy_dataset;
    use crate::nn::checkpoint::{save_checkpoint, CheckpointMeta};
    use crate::nn::model::build_model;

    #[test]
    fn eval_writes_consistent_reports() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_toy_dataset(&data, 2, 64, 64, 3, 5).unwrap();
        let cfg = ModelConfig::toy();
        let mut ckpts = Vec::new();
        for l in [0, 3] {
            let m = build_model(&cfg, 7 + l as u64).unwrap();
            let p = dir.path().join(format!("l{l}.safetensors"));
            save_checkpoint(&m, &p, &CheckpointMeta { config: cfg.clone(), lambda_index: l, stage_cursor: 0, seed: 7 + l as u64 }).unwrap();
            ckpts.push(p);
        }
        let mut opts = EvalOptions::new(dir.path().join("out"));
        opts.intra_period = 2;
        let first = run_eval(&ckpts, &data, &ReferenceCoder, &opts).unwrap();
        assert_eq!(first.rows.len(), 4);
        for s in &first.sequences {
            let bytes = std::fs::metadata(&s.bitstream).unwrap().len() as f64;
            assert_eq!(s.row.bpp, 8.0 * bytes / (64.0 * 64.0 * 3.0));
            assert_eq!(s.context_bits.len(), 1);
        }
        for rep in first.contextual_channels.values().chain(first.motion_channels.values()) {
            assert!((rep.ratios.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for f in ["rd.csv", "report.json", "rd.svg", "channels_contextual_l0.csv", "channels_motion_l3.svg"] {
            assert!(opts.out_dir.join(f).exists(), "{f}");
        }
        opts.out_dir = dir.path().join("out2");
        opts.workers = 2;
        let second = run_eval(&ckpts, &data, &ReferenceCoder, &opts).unwrap();
        assert_eq!(second.rows, first.rows);
        assert_eq!(read_rd_csv(dir.path().join("out").join("rd.csv")).unwrap(), first.rows);
        assert!(matches!(
            run_eval(&[dir.path().join("gone")], &data, &ReferenceCoder, &opts),
            Err(NvcError::MissingCheckpoint(_))
        ));
    }
}
