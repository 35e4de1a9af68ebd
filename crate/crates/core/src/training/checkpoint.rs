//! Training-state checkpoints on top of the tensor archive.
//!
//! The header echoes the resolved config and every instantiated network's
//! spec; the payload holds parameters and both Adam moments per network.

use std::collections::VecDeque;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LogRecord, NetId, Slot, Structure, TrainState};
use crate::archive;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::networks::{Network, NetworkParams, NetworkSpec};
use crate::optim::Adam;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct NetEntry {
    id: NetId,
    spec: NetworkSpec,
    adam_step: u64,
    tensors: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    content: String,
    checkpoint_version: u32,
    phase: u8,
    iteration: u64,
    structure: Structure,
    rng: RngState,
    data_digest: String,
    networks: Vec<NetEntry>,
    history: VecDeque<LogRecord>,
    config: RunConfig,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex<const N: usize>(s: &str) -> Result<[u8; N]> {
    let bad = || Error::Checkpoint(format!("malformed hex field `{s}`"));
    if s.len() != 2 * N {
        return Err(bad());
    }
    let mut out = [0u8; N];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

/// Atomically writes the full state.
pub fn save_checkpoint(state: &TrainState, cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut networks = Vec::new();
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for id in NetId::ALL {
        let Some(slot) = state.slot(id) else { continue };
        let n = slot.params.tensors.len();
        networks.push(NetEntry {
            id,
            spec: slot.params.spec,
            adam_step: slot.adam.step,
            tensors: n,
        });
        for (group, list) in [("p", &slot.params.tensors), ("m", &slot.adam.m), ("v", &slot.adam.v)] {
            for (i, t) in list.iter().enumerate() {
                tensors.push((format!("{}/{group}/{i}", id.name()), t));
            }
        }
    }
    let meta = Meta {
        content: "train-state".into(),
        checkpoint_version: CHECKPOINT_VERSION,
        phase: state.phase,
        iteration: state.iteration,
        structure: state.structure,
        rng: RngState {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        data_digest: hex(&state.data_digest),
        networks,
        history: state.history.clone(),
        config: cfg.clone(),
    };
    archive::save(path, &serde_json::to_value(&meta)?, &tensors)
}

/// Restores a state and the configuration it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, RunConfig)> {
    let (meta, tensors) = archive::load::<f32>(path)?;
    if meta["content"] != "train-state" {
        return Err(Error::Checkpoint(format!("{} is not a training checkpoint", path.display())));
    }
    let version = meta["checkpoint_version"].as_u64().unwrap_or(0);
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})",
            path.display()
        )));
    }
    let meta: Meta = serde_json::from_value(meta)?;
    let mut rest = tensors.into_iter().map(|(_, t)| t);
    let mut slots: Vec<Option<Slot>> = vec![None; 6];
    for e in &meta.networks {
        let net = Network::build(e.spec)?;
        let mut take = || -> Result<Vec<Tensor<f32>>> {
            let v: Vec<_> = rest.by_ref().take(e.tensors).collect();
            if v.len() != e.tensors {
                return Err(Error::Checkpoint(format!("missing tensors for {}", e.id.name())));
            }
            Ok(v)
        };
        let params = NetworkParams {
            spec: e.spec,
            tensors: take()?,
        };
        net.check_params(&params)?;
        let m = take()?;
        let v = take()?;
        slots[e.id as usize] = Some(Slot {
            params,
            adam: Adam {
                step: e.adam_step,
                m,
                v,
            },
        });
    }
    if rest.next().is_some() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(unhex::<32>(&meta.rng.seed)?);
    rng.set_stream(meta.rng.stream);
    rng.set_word_pos(
        meta.rng
            .word_pos
            .parse::<u128>()
            .map_err(|_| Error::Checkpoint("malformed rng position".into()))?,
    );
    let state = TrainState::from_parts(
        meta.phase,
        meta.iteration,
        meta.structure,
        slots,
        rng,
        meta.history,
        unhex::<32>(&meta.data_digest)?,
    );
    Ok((state, meta.config))
}
