//! Byte-level codecs for the on-disk formats. Everything is little-endian
//! and platform-independent: a magic tag, a u32 JSON header length, the
//! header, then a raw f32 payload. Core stays filesystem-free; the CLI owns
//! actual reads and writes.

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserBundle, DenoiserConfig};
use crate::diffusion::schedule::{make_schedule, DiffusionSchedule};
use crate::dsp::{MusicFeatureSequence, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::kin::{MotionSequence, NormStats, Skeleton};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

pub const MOSEQ_MAGIC: &[u8; 5] = b"MOSQ1";
pub const FEATSEQ_MAGIC: &[u8; 5] = b"FSEQ1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CKPT1";

fn put_block(out: &mut Vec<u8>, magic: &[u8; 5], header: &[u8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
}

fn split_block<'a>(bytes: &'a [u8], magic: &[u8; 5], what: &str) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 9 {
        return Err(Error::FormatError(format!("{what}: truncated before header")));
    }
    if &bytes[..5] != magic {
        return Err(Error::FormatError(format!(
            "{what}: bad magic {:?} (expected {:?})",
            &bytes[..5],
            magic
        )));
    }
    let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    if bytes.len() < 9 + len {
        return Err(Error::FormatError(format!("{what}: truncated header")));
    }
    Ok((&bytes[9..9 + len], &bytes[9 + len..]))
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], n: usize, what: &str) -> Result<Vec<f32>> {
    if bytes.len() < n * 4 {
        return Err(Error::FormatError(format!(
            "{what}: payload holds {} bytes, need {}",
            bytes.len(),
            n * 4
        )));
    }
    Ok(bytes[..n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

// ---------------------------------------------------------------- MoSeq --

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MoSeqHeader {
    pub fps: u32,
    #[serde(rename = "T")]
    pub n_frames: usize,
    #[serde(rename = "J")]
    pub n_joints: usize,
    #[serde(rename = "D")]
    pub frame_dim: usize,
    pub skeleton_name: String,
    pub has_contacts: bool,
    pub norm: String,
}

pub fn encode_moseq(motion: &MotionSequence, skeleton_name: &str) -> Vec<u8> {
    let header = MoSeqHeader {
        fps: motion.fps,
        n_frames: motion.n_frames,
        n_joints: motion.n_joints,
        frame_dim: motion.frame_dim(),
        skeleton_name: skeleton_name.to_string(),
        has_contacts: motion.contacts.is_some(),
        norm: "raw".into(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    put_block(&mut out, MOSEQ_MAGIC, &hjson);
    put_f32s(&mut out, &motion.flatten());
    if let Some(c) = &motion.contacts {
        put_f32s(&mut out, c);
    }
    out
}

pub fn decode_moseq(bytes: &[u8]) -> Result<(MotionSequence, MoSeqHeader)> {
    let (hdr, payload) = split_block(bytes, MOSEQ_MAGIC, "MoSeq")?;
    let header: MoSeqHeader =
        serde_json::from_slice(hdr).map_err(|e| Error::FormatError(format!("MoSeq header: {e}")))?;
    if header.frame_dim != 3 + 6 * header.n_joints {
        return Err(Error::FormatError(format!(
            "MoSeq header D {} != 3 + 6 J ({})",
            header.frame_dim, header.n_joints
        )));
    }
    let n_flat = header.n_frames * header.frame_dim;
    let flat = read_f32s(payload, n_flat, "MoSeq")?;
    let rest = &payload[n_flat * 4..];
    let contacts = if header.has_contacts {
        if rest.is_empty() || rest.len() % (4 * header.n_frames) != 0 {
            return Err(Error::FormatError("MoSeq: contact payload not T x K".into()));
        }
        let k = rest.len() / (4 * header.n_frames);
        Some(read_f32s(rest, header.n_frames * k, "MoSeq contacts")?)
    } else {
        if !rest.is_empty() {
            return Err(Error::FormatError("MoSeq: trailing bytes after payload".into()));
        }
        None
    };
    let motion = MotionSequence::from_flat(&flat, header.n_joints, header.fps, contacts)?;
    Ok((motion, header))
}

// -------------------------------------------------------------- FeatSeq --

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FeatSeqHeader {
    pub fps: u32,
    #[serde(rename = "T")]
    pub n_frames: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub column_layout: Vec<String>,
}

pub fn feature_column_layout() -> Vec<String> {
    let mut cols: Vec<String> = (0..20).map(|i| format!("mfcc_{i:02}")).collect();
    cols.extend((0..12).map(|i| format!("chroma_{i:02}")));
    cols.push("peak".into());
    cols.push("beat".into());
    cols.push("envelope".into());
    cols
}

pub fn encode_featseq(seq: &MusicFeatureSequence) -> Vec<u8> {
    let header = FeatSeqHeader {
        fps: seq.fps,
        n_frames: seq.n_frames,
        dim: FEATURE_DIM,
        column_layout: feature_column_layout(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    put_block(&mut out, FEATSEQ_MAGIC, &hjson);
    put_f32s(&mut out, &seq.frames);
    out
}

pub fn decode_featseq(bytes: &[u8]) -> Result<(MusicFeatureSequence, FeatSeqHeader)> {
    let (hdr, payload) = split_block(bytes, FEATSEQ_MAGIC, "FeatSeq")?;
    let header: FeatSeqHeader =
        serde_json::from_slice(hdr).map_err(|e| Error::FormatError(format!("FeatSeq header: {e}")))?;
    if header.dim != FEATURE_DIM {
        return Err(Error::FormatError(format!("FeatSeq D {} != {FEATURE_DIM}", header.dim)));
    }
    let frames = read_f32s(payload, header.n_frames * FEATURE_DIM, "FeatSeq")?;
    if payload.len() != header.n_frames * FEATURE_DIM * 4 {
        return Err(Error::FormatError("FeatSeq: trailing bytes after payload".into()));
    }
    let mut seq = MusicFeatureSequence::from_frames(frames, header.fps)?;
    seq.resampled = false;
    Ok((seq, header))
}

// ----------------------------------------------------------- Checkpoint --

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: DenoiserConfig,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub norm_stats: NormStats,
    pub skeleton: Skeleton,
    pub step: usize,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub bundle: DenoiserBundle,
    pub ema: ParamSet<f32>,
    pub schedule: DiffusionSchedule,
    pub skeleton: Skeleton,
    pub step: usize,
    pub seed: u64,
}

/// EMA shadow tensors live under this name prefix.
pub const EMA_PREFIX: &str = "ema/";

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    let push = |name: String, t: &Tensor<f32>, tensors: &mut Vec<TensorEntry>, payload: &mut Vec<f32>| {
        tensors.push(TensorEntry {
            name,
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: payload.len() * 4,
        });
        payload.extend_from_slice(t.data());
    };
    for (name, t) in ckpt.bundle.params.iter() {
        push(name.clone(), t, &mut tensors, &mut payload);
    }
    for (name, t) in ckpt.ema.iter() {
        push(format!("{EMA_PREFIX}{name}"), t, &mut tensors, &mut payload);
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.bundle.config.clone(),
        t_steps: ckpt.schedule.t_steps,
        beta_start: ckpt.schedule.beta_start,
        beta_end: ckpt.schedule.beta_end,
        norm_stats: ckpt.bundle.norm_stats.clone(),
        skeleton: ckpt.skeleton.clone(),
        step: ckpt.step,
        seed: ckpt.seed,
        tensors,
    };
    let hjson = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    put_block(&mut out, CHECKPOINT_MAGIC, &hjson);
    put_f32s(&mut out, &payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (hdr, payload) = split_block(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(hdr).map_err(|e| Error::FormatError(format!("checkpoint manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::FormatError(format!(
            "checkpoint format version {} (this build reads {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.skeleton.validate()?;
    let mut params = ParamSet::new();
    let mut ema = ParamSet::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::FormatError(format!("tensor {} has dtype {}", entry.name, entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        if entry.offset % 4 != 0 {
            return Err(Error::FormatError(format!("tensor {} misaligned", entry.name)));
        }
        let data = read_f32s(&payload[entry.offset..], n, &entry.name)?;
        let t = Tensor::from_vec(entry.shape.clone(), data);
        match entry.name.strip_prefix(EMA_PREFIX) {
            Some(name) => ema.insert(name.to_string(), t),
            None => params.insert(entry.name.clone(), t),
        }
    }
    // Every model parameter must be present in both sets.
    let expect: ParamSet<f32> = crate::denoiser::init_params(&manifest.config, 0)?;
    for name in expect.names() {
        params.get(name)?;
        ema.get(name)?;
    }
    let schedule = make_schedule(manifest.t_steps, manifest.beta_start, manifest.beta_end)?;
    Ok(Checkpoint {
        bundle: DenoiserBundle {
            config: manifest.config,
            params,
            norm_stats: manifest.norm_stats,
        },
        ema,
        schedule,
        skeleton: manifest.skeleton,
        step: manifest.step,
        seed: manifest.seed,
    })
}
