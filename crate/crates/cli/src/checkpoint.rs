//! Versioned binary checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  b"KDCK"
//! u32     container version (currently 1)
//! u64     metadata length, then that many bytes of JSON metadata
//! u32     array count, then per array:
//!           u32 name length, then the UTF-8 name
//!           u32 rows, u32 cols
//!           rows*cols f64 values
//! ```
//!
//! The metadata carries the full config as TOML plus its hash, the step
//! counter, optimizer step counts and every random-stream position, so a
//! loaded run continues bit-identically to one that never stopped. Arrays
//! are the generator and discriminator parameters and both optimizers'
//! moment estimates, named `g.*`, `d.*`, `opt_g.m.*`, `opt_g.v.*`,
//! `opt_d.m.*` and `opt_d.v.*`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kd_dlgan_core::config::TrainConfig;
use kd_dlgan_core::data::Dataset;
use kd_dlgan_core::engine::{Adam, EngineState};
use kd_dlgan_core::models::ParamSet;
use kd_dlgan_core::rng::{StreamHub, StreamState};
use kd_dlgan_core::Mat;

pub const MAGIC: &[u8; 4] = b"KDCK";
pub const FORMAT_VERSION: u32 = 1;

/// Everything in the checkpoint besides the numeric arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub master_seed: u64,
    /// Canonical TOML snapshot of the run config.
    pub config_toml: String,
    /// Hex hash of `config_toml`, for resume compatibility checks.
    pub config_hash: String,
    pub streams: Vec<StreamState>,
    pub adam_t_g: u64,
    pub adam_t_d: u64,
}

/// 64-bit FNV-1a over the canonical config text.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// The canonical serialized form every hash and snapshot is computed over.
/// Re-serializing a parsed config normalizes formatting, so two files that
/// parse identically always hash identically.
pub fn config_canonical_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).context("cannot serialize config")
}

pub fn config_hash_hex(canonical_toml: &str) -> String {
    format!("{:016x}", fnv1a64(canonical_toml.as_bytes()))
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_array(out: &mut Vec<u8>, name: &str, m: &Mat) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, m.rows() as u32);
    push_u32(out, m.cols() as u32);
    for &v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the state to `path`, writing to a sibling temp file first so
/// an interrupted save never leaves a truncated checkpoint behind.
pub fn save_checkpoint(path: &Path, state: &EngineState) -> Result<()> {
    let config_toml = config_canonical_toml(&state.config)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        step: state.step,
        master_seed: state.config.master_seed,
        config_hash: config_hash_hex(&config_toml),
        config_toml,
        streams: state.hub.snapshot(),
        adam_t_g: state.adam_g.t(),
        adam_t_d: state.adam_d.t(),
    };
    let meta_json = serde_json::to_vec(&meta).context("cannot serialize checkpoint metadata")?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u64(&mut out, meta_json.len() as u64);
    out.extend_from_slice(&meta_json);

    let g = &state.generator.params;
    let d = &state.discriminator.params;
    let (gm, gv) = state.adam_g.slots();
    let (dm, dv) = state.adam_d.slots();
    let count = 3 * (g.entries().len() + d.entries().len());
    push_u32(&mut out, count as u32);
    for (name, m) in g.entries() {
        push_array(&mut out, &format!("g.{}", name), m);
    }
    for (name, m) in d.entries() {
        push_array(&mut out, &format!("d.{}", name), m);
    }
    for (slot, mats, params) in [("m", gm, g), ("v", gv, g)] {
        for ((name, _), m) in params.entries().iter().zip(mats) {
            push_array(&mut out, &format!("opt_g.{}.{}", slot, name), m);
        }
    }
    for (slot, mats, params) in [("m", dm, d), ("v", dv, d)] {
        for ((name, _), m) in params.entries().iter().zip(mats) {
            push_array(&mut out, &format!("opt_d.{}.{}", slot, name), m);
        }
    }

    let tmp = path.with_extension("kdck.tmp");
    fs::write(&tmp, &out).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move checkpoint into place at {}", path.display()))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            bail!(
                "checkpoint truncated: wanted {} more bytes, have {}",
                n,
                self.bytes.len()
            );
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint file into its metadata and named arrays.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<(String, Mat)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let mut r = Reader { bytes: &bytes };
    if r.take(4)? != MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        bail!(
            "checkpoint version {} is not supported (expected {})",
            version,
            FORMAT_VERSION
        );
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .with_context(|| format!("corrupt metadata in {}", path.display()))?;
    if config_hash_hex(&meta.config_toml) != meta.config_hash {
        bail!(
            "checkpoint {}: stored config does not match its hash",
            path.display()
        );
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .context("corrupt array name")?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Mat::from_vec(rows, cols, data).map_err(|e| anyhow::anyhow!("{}", e))?;
        arrays.push((name, m));
    }
    if !r.bytes.is_empty() {
        bail!(
            "checkpoint {} has {} trailing bytes",
            path.display(),
            r.bytes.len()
        );
    }
    Ok((meta, arrays))
}

fn apply_params(params: &mut ParamSet, prefix: &str, arrays: &BTreeMap<&str, &Mat>) -> Result<()> {
    let names: Vec<String> = params.entries().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let key = format!("{}{}", prefix, name);
        let stored = *arrays
            .get(key.as_str())
            .with_context(|| format!("checkpoint is missing array {}", key))?;
        let current = params.get(&name).expect("listed entry");
        if !stored.same_shape(current) {
            bail!(
                "array {} is {}x{} in the checkpoint but the model wants {}x{}",
                key,
                stored.rows(),
                stored.cols(),
                current.rows(),
                current.cols()
            );
        }
        params.set(&name, stored.clone());
    }
    Ok(())
}

fn rebuild_adam(
    params: &ParamSet,
    prefix: &str,
    t: u64,
    arrays: &BTreeMap<&str, &Mat>,
) -> Result<Adam> {
    let mut moments = [Vec::new(), Vec::new()];
    for (i, slot) in ["m", "v"].iter().enumerate() {
        for (name, theta) in params.entries() {
            let key = format!("{}.{}.{}", prefix, slot, name);
            let stored = *arrays
                .get(key.as_str())
                .with_context(|| format!("checkpoint is missing array {}", key))?;
            if !stored.same_shape(theta) {
                bail!(
                    "optimizer array {} does not match its parameter's shape",
                    key
                );
            }
            moments[i].push(stored.clone());
        }
    }
    let [m, v] = moments;
    Adam::from_parts(params, m, v, t).map_err(|e| anyhow::anyhow!("{}", e))
}

/// The run configuration stored inside a checkpoint.
pub fn config_from_meta(meta: &CheckpointMeta) -> Result<TrainConfig> {
    toml::from_str(&meta.config_toml).context("checkpoint config does not parse")
}

/// Reconstructs a run from checkpoint parts plus the dataset bytes, which
/// are never stored in the checkpoint. The caller re-reads file-backed
/// datasets; synthetic ones are regenerated from the config. The config is
/// passed in (normally [`config_from_meta`]) so evaluation can widen the
/// data fraction without touching the hashed snapshot. Returns the state
/// and any subsetting warnings.
pub fn state_from_checkpoint(
    meta: &CheckpointMeta,
    arrays: &[(String, Mat)],
    config: TrainConfig,
    dataset: Dataset,
    templates: Option<Mat>,
) -> Result<(EngineState, Vec<String>)> {
    if config.master_seed != meta.master_seed {
        bail!(
            "checkpoint master_seed {} disagrees with the config's ({})",
            meta.master_seed,
            config.master_seed
        );
    }
    let (mut state, warnings) = EngineState::new(config, dataset, templates)
        .map_err(|e| anyhow::anyhow!("cannot rebuild run from checkpoint config: {}", e))?;

    let by_name: BTreeMap<&str, &Mat> = arrays.iter().map(|(n, m)| (n.as_str(), m)).collect();
    if by_name.len() != arrays.len() {
        bail!("checkpoint holds duplicate array names");
    }
    apply_params(&mut state.generator.params, "g.", &by_name)?;
    apply_params(&mut state.discriminator.params, "d.", &by_name)?;
    state.adam_g = rebuild_adam(&state.generator.params, "opt_g", meta.adam_t_g, &by_name)?;
    state.adam_d = rebuild_adam(
        &state.discriminator.params,
        "opt_d",
        meta.adam_t_d,
        &by_name,
    )?;
    let expected =
        3 * (state.generator.params.entries().len() + state.discriminator.params.entries().len());
    if arrays.len() != expected {
        bail!(
            "checkpoint holds {} arrays, expected {}",
            arrays.len(),
            expected
        );
    }
    state.hub = StreamHub::restore(meta.master_seed, &meta.streams)
        .map_err(|e| anyhow::anyhow!("cannot restore stream positions: {}", e))?;
    state.step = meta.step;
    Ok((state, warnings))
}
