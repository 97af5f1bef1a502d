//! Bitstream inference: frame and sequence encoding and decoding.
//!
//! The encoder and the decoder drive the same routine and differ only in
//! where symbols come from, so both sides evaluate identical tensor
//! computations on identical inputs. Latent symbols are coded step by step in
//! quadtree order, channel-major within a step.

use std::collections::HashMap;

use candle_core::{Device, Tensor};

use super::entropy::{LatentEntropy, HYPER_RADIUS};
use super::model::{frame_to_tensor, tensor_to_frame, CodecModel, FrameState};
use crate::bitstream::{gop_layout, BitstreamUnit, ChunkId, FrameType};
use crate::coder::{build_cdf, CdfBatch, CodedChunk, CoderBackend, DecodeSession};
use crate::data::{crop_to, pad_to_multiple, Frame};
use crate::entropy::{laplace_pmf_table, QuadtreeSchedule, P_FLOOR};
use crate::error::{NvcError, Result};

/// Frames are padded to a multiple of this before coding.
pub const PAD_MULTIPLE: usize = 64;

/// Estimated and coded size of one chunk, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkStats {
    pub id: ChunkId,
    pub estimated_bits: f64,
    pub payload_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStats {
    pub frame_type: FrameType,
    pub chunks: Vec<ChunkStats>,
    /// Estimated latent bits per channel of the contextual (or intra) latent.
    pub latent_channel_bits: Vec<f64>,
    /// Estimated latent bits per channel of the motion latent; empty for
    /// intra frames.
    pub motion_channel_bits: Vec<f64>,
    /// Whole unit including headers.
    pub unit_bits: f64,
}

impl FrameStats {
    pub fn estimated_bits(&self) -> f64 {
        self.chunks.iter().map(|c| c.estimated_bits).sum()
    }

    pub fn payload_bits(&self) -> f64 {
        self.chunks.iter().map(|c| c.payload_bits).sum()
    }
}

/// One hyper CDF per channel.
struct HyperTables {
    batch: CdfBatch,
    pmf: Vec<Vec<f64>>,
}

impl HyperTables {
    fn new(ent: &LatentEntropy) -> Result<Self> {
        let pmf = ent.prior().pmf_tables()?;
        let mut batch = CdfBatch::new();
        for p in &pmf {
            batch.push(&build_cdf(p, -HYPER_RADIUS)?);
        }
        Ok(HyperTables { batch, pmf })
    }
}

/// Laplace tables keyed by the exact bits of the predicted scale.
#[derive(Default)]
struct LatentTables {
    batch: CdfBatch,
    by_sigma: HashMap<u32, (u32, i32)>,
    pmf: Vec<Vec<f64>>,
}

impl LatentTables {
    fn new() -> Self {
        LatentTables { batch: CdfBatch::new(), ..Default::default() }
    }

    /// Table index and radius for scale `sigma`.
    fn lookup(&mut self, sigma: f32) -> Result<(u32, i32)> {
        if let Some(&v) = self.by_sigma.get(&sigma.to_bits()) {
            return Ok(v);
        }
        if !sigma.is_finite() {
            return Err(NvcError::MalformedStream(format!("predicted scale {sigma}")));
        }
        let (r, pmf) = laplace_pmf_table(sigma as f64);
        let k = self.batch.push(&build_cdf(&pmf, -r)?);
        self.pmf.push(pmf);
        self.by_sigma.insert(sigma.to_bits(), (k, r));
        Ok((k, r))
    }
}

/// Where symbols come from: quantization on the encoder, the range decoder
/// on the decoder.
trait SymbolSource {
    /// Symbols for the flat `positions`, with `mu` the full mean map and
    /// `tables[i]` the `(table, radius)` of `positions[i]`.
    fn take(&mut self, positions: &[usize], mu: &[f32], tables: &[(u32, i32)], batch: &CdfBatch) -> Result<Vec<i32>>;
}

struct Quantizer<'v> {
    values: &'v [f32],
    symbols: Vec<i32>,
    table_index: Vec<u32>,
}

impl<'v> Quantizer<'v> {
    fn new(values: &'v [f32]) -> Self {
        Quantizer { values, symbols: Vec::new(), table_index: Vec::new() }
    }
}

impl SymbolSource for Quantizer<'_> {
    fn take(&mut self, positions: &[usize], mu: &[f32], tables: &[(u32, i32)], _: &CdfBatch) -> Result<Vec<i32>> {
        let out: Vec<i32> = positions
            .iter()
            .zip(tables)
            .map(|(&i, &(_, r))| {
                let q = (self.values[i] - mu[i]).round();
                (if q.is_finite() { q as i32 } else { 0 }).clamp(-r, r)
            })
            .collect();
        self.symbols.extend_from_slice(&out);
        self.table_index.extend(tables.iter().map(|t| t.0));
        Ok(out)
    }
}

struct Decoder<'s>(Box<dyn DecodeSession + 's>);

impl SymbolSource for Decoder<'_> {
    fn take(&mut self, _: &[usize], _: &[f32], tables: &[(u32, i32)], batch: &CdfBatch) -> Result<Vec<i32>> {
        let idx: Vec<u32> = tables.iter().map(|t| t.0).collect();
        self.0.decode(&idx, batch)
    }
}

struct LatentResult {
    y_hat: Tensor,
    hyper_bits: f64,
    latent_bits: f64,
    channel_bits: Vec<f64>,
    latent_tables: CdfBatch,
}

/// Which model parts produce the latent of each chunk pair.
#[derive(Clone, Copy)]
enum Stream {
    Intra,
    Motion,
    Context,
}

/// A trained model bound to a coder backend.
pub struct NeuralCodec<'a> {
    model: &'a CodecModel,
    backend: &'a dyn CoderBackend,
    lambda_index: usize,
    hyper: [HyperTables; 3],
}

impl<'a> NeuralCodec<'a> {
    pub fn new(model: &'a CodecModel, backend: &'a dyn CoderBackend, lambda_index: usize) -> Result<Self> {
        crate::coder::check_backend(backend)?;
        if lambda_index >= crate::LAMBDAS.len() {
            return Err(NvcError::InvalidIndex(format!("lambda index {lambda_index}")));
        }
        let hyper = [
            HyperTables::new(&model.intra_entropy)?,
            HyperTables::new(&model.motion_entropy)?,
            HyperTables::new(&model.ctx_entropy)?,
        ];
        Ok(NeuralCodec { model, backend, lambda_index, hyper })
    }

    fn device(&self) -> &Device {
        self.model.device()
    }

    fn entropy(&self, s: Stream) -> (&LatentEntropy, &HyperTables) {
        match s {
            Stream::Intra => (&self.model.intra_entropy, &self.hyper[0]),
            Stream::Motion => (&self.model.motion_entropy, &self.hyper[1]),
            Stream::Context => (&self.model.ctx_entropy, &self.hyper[2]),
        }
    }

    /// Hyper then latent symbols of one stream. `latent_dims` is
    /// `(C, h, w)` of the latent; the hyper latent is at a quarter of that.
    #[allow(clippy::too_many_arguments)]
    fn run_latent(
        &self,
        stream: Stream,
        latent_dims: (usize, usize, usize),
        hyper_src: &mut dyn SymbolSource,
        latent_src: &mut dyn SymbolSource,
        latent_prior: Option<&Tensor>,
        context: Option<&Tensor>,
    ) -> Result<LatentResult> {
        let (ent, ht) = self.entropy(stream);
        let (c, h, w) = latent_dims;
        let hc = ht.pmf.len();
        let (zh, zw) = (h / 4, w / 4);
        let zn = zh * zw;
        let z_pos: Vec<usize> = (0..hc * zn).collect();
        let z_tables: Vec<(u32, i32)> = (0..hc * zn).map(|i| ((i / zn) as u32, HYPER_RADIUS)).collect();
        let zeros = vec![0f32; hc * zn];
        let qz = hyper_src.take(&z_pos, &zeros, &z_tables, &ht.batch)?;
        let mut hyper_bits = 0.0;
        for (i, &q) in qz.iter().enumerate() {
            hyper_bits -= ht.pmf[i / zn][(q + HYPER_RADIUS) as usize].max(P_FLOOR).log2();
        }
        let z_hat = Tensor::from_vec(qz.iter().map(|&q| q as f32).collect::<Vec<_>>(), (1, hc, zh, zw), self.device())?;
        let priors = ent.priors(&ent.hyper_decode(&z_hat)?, latent_prior, context)?;

        let n = h * w;
        let steps: Vec<Vec<usize>> = if ent.layout().quadtree {
            let sched = QuadtreeSchedule::new(h, w)?;
            (0..sched.steps()).map(|s| sched.indices(s)).collect()
        } else {
            vec![(0..n).collect()]
        };
        let mut tables = LatentTables::new();
        let mut y_hat = vec![0f32; c * n];
        let mut latent_bits = 0.0;
        let mut channel_bits = vec![0.0; c];
        for (step, idx) in steps.iter().enumerate() {
            let known = Tensor::from_vec(y_hat.clone(), (1, c, h, w), self.device())?;
            let (mu, sigma) = ent.step_params(step, &priors, &known)?;
            let mu = mu.flatten_all()?.to_vec1::<f32>()?;
            let sigma = sigma.flatten_all()?.to_vec1::<f32>()?;
            let positions: Vec<usize> = (0..c).flat_map(|ch| idx.iter().map(move |&i| ch * n + i)).collect();
            let tab: Vec<(u32, i32)> = positions.iter().map(|&i| tables.lookup(sigma[i])).collect::<Result<_>>()?;
            let q = latent_src.take(&positions, &mu, &tab, &tables.batch)?;
            for ((&i, &(k, r)), &s) in positions.iter().zip(&tab).zip(&q) {
                if s < -r || s > r {
                    return Err(NvcError::SymbolOutOfRange { symbol: s, min: -r, max: r });
                }
                y_hat[i] = s as f32 + mu[i];
                let b = -tables.pmf[k as usize][(s + r) as usize].max(P_FLOOR).log2();
                latent_bits += b;
                channel_bits[i / n] += b;
            }
        }
        Ok(LatentResult {
            y_hat: Tensor::from_vec(y_hat, (1, c, h, w), self.device())?,
            hyper_bits,
            latent_bits,
            channel_bits,
            latent_tables: tables.batch,
        })
    }

    /// Quantizes and codes `y`, returning the two chunks and the decoded latent.
    fn encode_latent(
        &self,
        stream: Stream,
        y: &Tensor,
        latent_prior: Option<&Tensor>,
        context: Option<&Tensor>,
    ) -> Result<(CodedChunk, CodedChunk, LatentResult)> {
        let (ent, ht) = self.entropy(stream);
        let (_, c, h, w) = y.dims4()?;
        let z = ent.hyper_encode(y)?.flatten_all()?.to_vec1::<f32>()?;
        let yv = y.flatten_all()?.to_vec1::<f32>()?;
        let mut hq = Quantizer::new(&z);
        let mut lq = Quantizer::new(&yv);
        let r = self.run_latent(stream, (c, h, w), &mut hq, &mut lq, latent_prior, context)?;
        let hyper = self.backend.encode(&hq.symbols, &hq.table_index, &ht.batch)?;
        let latent = self.backend.encode(&lq.symbols, &lq.table_index, &r.latent_tables)?;
        Ok((hyper, latent, r))
    }

    fn decode_latent(
        &self,
        stream: Stream,
        chunks: (&CodedChunk, &CodedChunk),
        latent_dims: (usize, usize, usize),
        latent_prior: Option<&Tensor>,
        context: Option<&Tensor>,
    ) -> Result<LatentResult> {
        let (c, h, w) = latent_dims;
        let hc = self.entropy(stream).1.pmf.len();
        let expect = [hc * (h / 4) * (w / 4), c * h * w];
        for (chunk, n) in [chunks.0, chunks.1].into_iter().zip(expect) {
            if chunk.symbol_count as usize != n {
                return Err(NvcError::MalformedStream(format!("chunk holds {} symbols, model expects {n}", chunk.symbol_count)));
            }
        }
        let mut hs = Decoder(self.backend.decode_session(chunks.0)?);
        let mut ls = Decoder(self.backend.decode_session(chunks.1)?);
        let r = self.run_latent(stream, latent_dims, &mut hs, &mut ls, latent_prior, context)?;
        hs.0.finish()?;
        ls.0.finish()?;
        Ok(r)
    }

    fn latent_dims(&self, stream: Stream, h: usize, w: usize) -> (usize, usize, usize) {
        let cfg = self.model.config();
        let c = match stream {
            Stream::Intra => cfg.intra.latent_channels,
            Stream::Motion => cfg.motion_entropy.latent_channels,
            Stream::Context => cfg.contextual_enc_dec.latent_channels,
        };
        (c, h / 16, w / 16)
    }

    /// Codes one padded frame. `state` is required for inter frames.
    pub fn encode_frame(&self, x: &Tensor, frame_type: FrameType, state: Option<&FrameState>, dims: (usize, usize)) -> Result<(BitstreamUnit, FrameState, FrameStats)> {
        let m = self.model;
        let (out, chunks, motion_channel_bits) = match frame_type {
            FrameType::Intra => {
                let y = m.intra_enc.forward(x)?;
                let (hc, lc, r) = self.encode_latent(Stream::Intra, &y, None, None)?;
                let (x_hat, f) = m.intra_dec.forward(&r.y_hat)?;
                let state = m.reset_state(&x_hat.clamp(0f32, 1f32)?, &f)?.detach();
                (state, vec![(ChunkId::IntraHyper, hc, r.hyper_bits), (ChunkId::IntraLatent, lc, r.latent_bits)], (r.channel_bits, vec![]))
            }
            FrameType::Inter => {
                let s = state.ok_or_else(|| NvcError::MalformedStream("inter frame without a reference".into()))?;
                let (vs, vd) = m.flow.estimate(x, &s.frame)?;
                let mv = m.motion_enc.forward(&Tensor::cat(&[&vs, &vd], 1)?)?;
                let (mh, ml, rm) = self.encode_latent(Stream::Motion, &mv, Some(&s.motion_prior), None)?;
                let (ctx, lt) = self.contexts(s, &rm.y_hat)?;
                let y = m.ctx_enc.forward(x, &ctx)?;
                let (ch, cl, ry) = self.encode_latent(Stream::Context, &y, Some(&s.context_prior), Some(&ctx[2]))?;
                let next = self.finish_inter(s, &ctx, lt, rm.y_hat, &ry.y_hat)?;
                let chunks = vec![
                    (ChunkId::MotionHyper, mh, rm.hyper_bits),
                    (ChunkId::MotionLatent, ml, rm.latent_bits),
                    (ChunkId::ContextHyper, ch, ry.hyper_bits),
                    (ChunkId::ContextLatent, cl, ry.latent_bits),
                ];
                (next, chunks, (ry.channel_bits, rm.channel_bits))
            }
        };
        let stats_chunks: Vec<ChunkStats> = chunks
            .iter()
            .map(|(id, c, est)| ChunkStats { id: *id, estimated_bits: *est, payload_bits: 8.0 * c.bytes.len() as f64 })
            .collect();
        let unit = BitstreamUnit::new(frame_type, dims.0, dims.1, self.lambda_index, chunks.into_iter().map(|c| c.1).collect())?;
        let stats = FrameStats {
            frame_type,
            chunks: stats_chunks,
            latent_channel_bits: motion_channel_bits.0,
            motion_channel_bits: motion_channel_bits.1,
            unit_bits: 8.0 * unit.byte_len() as f64,
        };
        Ok((unit, out, stats))
    }

    fn contexts(&self, s: &FrameState, m_hat: &Tensor) -> Result<(Vec<Tensor>, super::tcm::LongTerm)> {
        let (vs, vd) = self.model.motion_dec.forward(m_hat)?;
        self.model.tcm.forward(&s.feature, &s.long_term, &vs, &vd)
    }

    fn finish_inter(&self, s: &FrameState, ctx: &[Tensor], lt: super::tcm::LongTerm, m_hat: Tensor, y_hat: &Tensor) -> Result<FrameState> {
        let (x_hat, f) = self.model.ctx_dec.forward(y_hat, ctx)?;
        Ok(FrameState {
            frame: x_hat.clamp(0f32, 1f32)?,
            feature: f,
            long_term: lt,
            motion_prior: m_hat,
            context_prior: y_hat.clone(),
            next_p_index: s.next_p_index + 1,
        }
        .detach())
    }

    /// Decodes one unit of padded size `(pw, ph)`.
    pub fn decode_frame(&self, unit: &BitstreamUnit, state: Option<&FrameState>, padded: (usize, usize)) -> Result<FrameState> {
        let (pw, ph) = padded;
        let m = self.model;
        let chunk = |id: ChunkId| unit.chunk(id).ok_or_else(|| NvcError::MalformedStream(format!("missing chunk {id:?}")));
        if unit.lambda_index as usize != self.lambda_index {
            return Err(NvcError::InvalidIndex(format!("unit coded at lambda index {}, model is {}", unit.lambda_index, self.lambda_index)));
        }
        match unit.frame_type {
            FrameType::Intra => {
                let dims = self.latent_dims(Stream::Intra, ph, pw);
                let r = self.decode_latent(Stream::Intra, (chunk(ChunkId::IntraHyper)?, chunk(ChunkId::IntraLatent)?), dims, None, None)?;
                let (x_hat, f) = m.intra_dec.forward(&r.y_hat)?;
                Ok(m.reset_state(&x_hat.clamp(0f32, 1f32)?, &f)?.detach())
            }
            FrameType::Inter => {
                let s = state.ok_or_else(|| NvcError::MalformedStream("stream does not start with an intra frame".into()))?;
                let md = self.latent_dims(Stream::Motion, ph, pw);
                let rm = self.decode_latent(Stream::Motion, (chunk(ChunkId::MotionHyper)?, chunk(ChunkId::MotionLatent)?), md, Some(&s.motion_prior), None)?;
                let (ctx, lt) = self.contexts(s, &rm.y_hat)?;
                let cd = self.latent_dims(Stream::Context, ph, pw);
                let ry = self.decode_latent(
                    Stream::Context,
                    (chunk(ChunkId::ContextHyper)?, chunk(ChunkId::ContextLatent)?),
                    cd,
                    Some(&s.context_prior),
                    Some(&ctx[2]),
                )?;
                self.finish_inter(s, &ctx, lt, rm.y_hat, &ry.y_hat)
            }
        }
    }

    /// Codes `frames` with an intra frame every `intra_period` frames.
    pub fn encode_sequence(&self, frames: &[Frame], intra_period: usize) -> Result<SequenceCoding> {
        let mut units = Vec::with_capacity(frames.len());
        let mut recon = Vec::with_capacity(frames.len());
        let mut stats = Vec::with_capacity(frames.len());
        let mut state: Option<FrameState> = None;
        for (f, ft) in frames.iter().zip(gop_layout(frames.len(), intra_period)) {
            let (padded, dims) = pad_to_multiple(f, PAD_MULTIPLE);
            let x = frame_to_tensor(&padded, self.device())?;
            let (unit, next, st) = self.encode_frame(&x, ft, state.as_ref(), dims)?;
            recon.push(crop_to(&tensor_to_frame(&next.frame)?, dims)?);
            units.push(unit);
            stats.push(st);
            state = Some(next);
        }
        Ok(SequenceCoding { units, recon, stats })
    }

    pub fn decode_sequence(&self, units: &[BitstreamUnit]) -> Result<Vec<Frame>> {
        let mut out = Vec::with_capacity(units.len());
        let mut state: Option<FrameState> = None;
        for unit in units {
            let dims = (unit.width as usize, unit.height as usize);
            let padded = (dims.0.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, dims.1.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
            if let Some(s) = &state {
                let (_, _, h, w) = s.frame.dims4()?;
                if unit.frame_type == FrameType::Inter && (w, h) != padded {
                    return Err(NvcError::DimMismatch(format!("inter unit is {}x{}, reference is {w}x{h}", dims.0, dims.1)));
                }
            }
            let next = self.decode_frame(unit, state.as_ref(), padded)?;
            out.push(crop_to(&tensor_to_frame(&next.frame)?, dims)?);
            state = Some(next);
        }
        Ok(out)
    }
}

pub struct SequenceCoding {
    pub units: Vec<BitstreamUnit>,
    /// Encoder-side reconstructions, cropped to the source size.
    pub recon: Vec<Frame>,
    pub stats: Vec<FrameStats>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{parse_stream, serialize_stream};
    use crate::coder::ReferenceCoder;
    use crate::config::ModelConfig;
    use crate::nn::model::build_model;

    fn frames(n: usize, w: usize, h: usize) -> Vec<Frame> {
        (0..n)
            .map(|t| {
                Frame::from_fn(w, h, |c, y, x| {
                    (0.5 + 0.35 * ((x as f32 + 1.5 * t as f32) * 0.21).sin() * ((y as f32 - t as f32) * 0.17).cos() - 0.1 * c as f32)
                        .clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = build_model(&ModelConfig::toy(), 11).unwrap();
        let coder = ReferenceCoder;
        let codec = NeuralCodec::new(&model, &coder, 2).unwrap();
        let src = frames(4, 80, 64);
        let enc = codec.encode_sequence(&src, 3).unwrap();
        let types: Vec<FrameType> = enc.units.iter().map(|u| u.frame_type).collect();
        assert_eq!(types, [FrameType::Intra, FrameType::Inter, FrameType::Inter, FrameType::Intra]);
        assert_eq!(enc.units[0].chunks.len(), 2);
        let ids: Vec<ChunkId> = enc.units[1].chunks.iter().map(|c| c.0).collect();
        assert_eq!(ids, [ChunkId::MotionHyper, ChunkId::MotionLatent, ChunkId::ContextHyper, ChunkId::ContextLatent]);
        let units = parse_stream(&serialize_stream(&enc.units)).unwrap();
        let dec = codec.decode_sequence(&units).unwrap();
        for (a, b) in enc.recon.iter().zip(&dec) {
            assert_eq!(a.dims(), (80, 64));
            assert_eq!(a.data(), b.data());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for s in &enc.stats {
            assert!(s.estimated_bits() > 0.0);
            assert!(s.payload_bits() > 0.0);
        }
    }

    #[test]
    fn gop_boundary_isolates_decoding() {
        let model = build_model(&ModelConfig::toy(), 5).unwrap();
        let coder = ReferenceCoder;
        let codec = NeuralCodec::new(&model, &coder, 0).unwrap();
        let enc = codec.encode_sequence(&frames(4, 64, 64), 2).unwrap();
        let full = codec.decode_sequence(&enc.units).unwrap();
        let tail = codec.decode_sequence(&enc.units[2..]).unwrap();
        assert_eq!(full[2].data(), tail[0].data());
        assert_eq!(full[3].data(), tail[1].data());
    }

    #[test]
    fn decoding_rejects_bad_streams() {
        let model = build_model(&ModelConfig::toy(), 5).unwrap();
        let coder = ReferenceCoder;
        let codec = NeuralCodec::new(&model, &coder, 1).unwrap();
        let enc = codec.encode_sequence(&frames(2, 64, 64), 32).unwrap();
        assert!(codec.decode_sequence(&enc.units[1..]).is_err());
        let other = NeuralCodec::new(&model, &coder, 3).unwrap();
        assert!(matches!(other.decode_sequence(&enc.units), Err(NvcError::InvalidIndex(_))));
        let mut bad = enc.units.clone();
        bad[1].chunks[3].1.symbol_count += 1;
        assert!(codec.decode_sequence(&bad).is_err());
        assert!(NeuralCodec::new(&model, &coder, 4).is_err());
    }
}
