//! The versioned binary checkpoint format.
//!
//! Layout: magic `CM3M`, format version (u32 LE), config digest (32 bytes,
//! SHA-256 of the embedded config TOML), tensor count (u32 LE), then per
//! tensor: name length (u32 LE) + UTF-8 name + rank (u32 LE) + dims
//! (u32 LE each) + raw f32 LE data; then a length-prefixed JSON metadata
//! block (simulator state, RNG streams, normalizer, training counters), and
//! a trailing SHA-256 checksum of every preceding byte.
//!
//! Parameters and Adam moments are kept on the f32 grid in memory, so the
//! f32 tensor encoding round-trips bit-exactly and resumed runs replay the
//! original trajectory.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::adam::AdamState;
use super::rollout::{EnvRuntime, EnvSnapshot};
use super::trainer::{CurveRow, TrainState};
use crate::config::{digest_of, TrainConfig};
use crate::error::CheckpointError;
use crate::mdp::RunningNormalizer;
use crate::net::{NamedTensor, ParamStore, PolicyParams, ValueParams};
use crate::rng::RngState;
use crate::scenarios::StageId;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CM3M";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything outside the tensor section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_toml: String,
    pub stage: StageId,
    pub iteration: u64,
    pub iters_in_stage: u64,
    pub wall_seconds: f64,
    pub adam_policy_step: u64,
    pub adam_value_step: u64,
    pub update_rng: RngState,
    pub normalizer: RunningNormalizer,
    pub success_window: Vec<f64>,
    pub curve: Vec<CurveRow>,
    pub envs: Vec<EnvSnapshot>,
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn push_tensors(out: &mut Vec<(String, NamedTensor)>, prefix: &str, store: &ParamStore) {
    for t in &store.tensors {
        out.push((format!("{prefix}{}", t.name), t.clone()));
    }
}

fn encode(state: &TrainState) -> Vec<u8> {
    let mut tensors: Vec<(String, NamedTensor)> = Vec::new();
    push_tensors(&mut tensors, "policy.", &state.policy.store);
    push_tensors(&mut tensors, "value.", &state.value.store);
    push_tensors(&mut tensors, "adam_policy.m.", &state.adam_policy.m);
    push_tensors(&mut tensors, "adam_policy.v.", &state.adam_policy.v);
    push_tensors(&mut tensors, "adam_value.m.", &state.adam_value.m);
    push_tensors(&mut tensors, "adam_value.v.", &state.adam_value.v);

    let meta = CheckpointMeta {
        config_toml: state.cfg_toml.clone(),
        stage: state.stage,
        iteration: state.iteration,
        iters_in_stage: state.iters_in_stage,
        wall_seconds: state.wall_seconds,
        adam_policy_step: state.adam_policy.step,
        adam_value_step: state.adam_value.step,
        update_rng: RngState::capture(&state.update_rng),
        normalizer: state.normalizer.clone(),
        success_window: state.success_window.clone(),
        curve: state.curve.clone(),
        envs: state.envs.iter().map(EnvSnapshot::from).collect(),
    };
    let meta_json = serde_json::to_vec(&meta).expect("meta serializes");

    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&digest_of(&state.cfg_toml));
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    let checksum: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&checksum);
    buf
}

/// Write the full training state to a checkpoint file.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, encode(state))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn split_store(
    tensors: &[(String, NamedTensor)],
    prefix: &str,
) -> Result<ParamStore, CheckpointError> {
    let matched: Vec<NamedTensor> = tensors
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|(name, t)| NamedTensor {
            name: name[prefix.len()..].to_string(),
            shape: t.shape.clone(),
            data: t.data.clone(),
        })
        .collect();
    if matched.is_empty() {
        return Err(CheckpointError::Malformed(format!(
            "no tensors with prefix {prefix}"
        )));
    }
    Ok(ParamStore { tensors: matched })
}

/// Load and fully verify a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<TrainState, CheckpointError> {
    let data = std::fs::read(path)?;
    if data.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    if data[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if data.len() < 4 + 4 + 32 + 4 + 8 + 32 {
        return Err(CheckpointError::Truncated);
    }

    // Whole-file checksum first: everything else assumes intact bytes.
    let body = &data[..data.len() - 32];
    let checksum: [u8; 32] = Sha256::digest(body).into();
    if checksum != data[data.len() - 32..] {
        return Err(CheckpointError::ChecksumMismatch);
    }

    let mut r = Reader {
        data: body,
        pos: 4,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();

    let tensor_count = r.u32()? as usize;
    let mut tensors: Vec<(String, NamedTensor)> = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push((
            name.clone(),
            NamedTensor {
                name,
                shape,
                data,
            },
        ));
    }

    let meta_len = r.u64()? as usize;
    let meta_bytes = r.take(meta_len)?;
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(
            "trailing bytes before checksum".into(),
        ));
    }
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| CheckpointError::Malformed(format!("meta: {e}")))?;

    if digest_of(&meta.config_toml) != digest {
        return Err(CheckpointError::DigestMismatch);
    }
    let cfg = TrainConfig::from_toml(&meta.config_toml)
        .map_err(|e| CheckpointError::Malformed(format!("embedded config: {e}")))?;

    let policy = PolicyParams {
        store: split_store(&tensors, "policy.")?,
    };
    let value = ValueParams {
        store: split_store(&tensors, "value.")?,
    };
    let adam_policy = AdamState {
        m: split_store(&tensors, "adam_policy.m.")?,
        v: split_store(&tensors, "adam_policy.v.")?,
        step: meta.adam_policy_step,
    };
    let adam_value = AdamState {
        m: split_store(&tensors, "adam_value.m.")?,
        v: split_store(&tensors, "adam_value.v.")?,
        step: meta.adam_value_step,
    };

    let net = cfg.net_config();
    Ok(TrainState {
        cfg,
        cfg_toml: meta.config_toml,
        net,
        policy,
        value,
        adam_policy,
        adam_value,
        normalizer: meta.normalizer,
        update_rng: meta.update_rng.restore(),
        envs: meta.envs.into_iter().map(EnvRuntime::from).collect(),
        stage: meta.stage,
        iteration: meta.iteration,
        iters_in_stage: meta.iters_in_stage,
        wall_seconds: meta.wall_seconds,
        success_window: meta.success_window,
        curve: meta.curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::trainer::TrainState;

    fn state() -> TrainState {
        let cfg = TrainConfig::desk();
        TrainState::init(&cfg).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.cm3m");
        let p2 = dir.path().join("b.cm3m");
        let s = state();
        save_checkpoint(&s, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn load_restores_exact_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cm3m");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(loaded.policy.store, s.policy.store);
        assert_eq!(loaded.value.store, s.value.store);
        assert_eq!(loaded.normalizer, s.normalizer);
        assert_eq!(loaded.envs, s.envs);
        assert_eq!(
            RngState::capture(&loaded.update_rng),
            RngState::capture(&s.update_rng)
        );
    }

    #[test]
    fn corrupted_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cm3m");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncated_file_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trunc.cm3m");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        // Either the checksum or a read fails; both map to corrupt-file
        // variants, but a clean truncation must not parse.
        match load_checkpoint(&p) {
            Err(CheckpointError::Truncated) | Err(CheckpointError::ChecksumMismatch) => {}
            Err(other) => panic!("expected truncation error, got {other:?}"),
            Ok(_) => panic!("truncated file must not parse"),
        }
    }

    #[test]
    fn flipped_tensor_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flip.cm3m");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(CheckpointError::ChecksumMismatch)
        ));
    }

    #[test]
    fn version_bump_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ver.cm3m");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99;
        // Re-sign the file so only the version differs.
        let body_len = bytes.len() - 32;
        let sum: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
        bytes[body_len..].copy_from_slice(&sum);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(CheckpointError::Version(99))
        ));
    }
}
