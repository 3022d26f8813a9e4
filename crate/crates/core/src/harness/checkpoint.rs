//! Checkpoint directory layout:
//!
//! ```text
//! meta.json            latest epoch, best epoch, config, history
//! epoch_NNN/params.bin
//! epoch_NNN/optimizer.bin
//! ```
//!
//! Only the best and the latest epoch directories are kept.

use std::fs;
use std::path::{Path, PathBuf};

use adenet_tensor::{io, Adam, ParamStore};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::EpochRecord;
use crate::error::{Error, IoContext, Result};
use crate::model::Adenet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_epoch: usize,
    pub config: RunConfig,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Best,
    Latest,
}

pub fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch_{epoch:03}"))
}

fn meta_path(root: &Path) -> PathBuf {
    root.join("meta.json")
}

/// Writes one epoch and rewrites `meta.json`, pruning stale epochs.
pub fn save(root: &Path, meta: &CheckpointMeta, store: &ParamStore, adam: &Adam) -> Result<()> {
    let dir = epoch_dir(root, meta.epoch);
    fs::create_dir_all(&dir).at(&dir)?;
    let params: Vec<_> = store.named().map(|(n, t)| (n.to_owned(), t.clone())).collect();
    io::save(&dir.join("params.bin"), &params)?;
    io::save(&dir.join("optimizer.bin"), &adam.state(store))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    let tmp = root.join("meta.json.tmp");
    fs::write(&tmp, json).at(&tmp)?;
    fs::rename(&tmp, meta_path(root)).at(meta_path(root))?;
    for entry in fs::read_dir(root).at(root)? {
        let entry = entry.at(root)?;
        let name = entry.file_name();
        let Some(epoch) = name.to_str().and_then(|n| n.strip_prefix("epoch_")).and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if epoch != meta.epoch && epoch != meta.best_epoch {
            fs::remove_dir_all(entry.path()).at(entry.path())?;
        }
    }
    Ok(())
}

pub fn load_meta(root: &Path) -> Result<CheckpointMeta> {
    let p = meta_path(root);
    let text = fs::read_to_string(&p).at(&p)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

/// A restored network with its parameters and optimiser state.
pub struct Restored {
    pub meta: CheckpointMeta,
    pub epoch: usize,
    pub net: Adenet,
    pub store: ParamStore,
    pub adam: Adam,
}

pub fn load(root: &Path, which: Which) -> Result<Restored> {
    let meta = load_meta(root)?;
    let epoch = match which {
        Which::Best => meta.best_epoch,
        Which::Latest => meta.epoch,
    };
    let dir = epoch_dir(root, epoch);
    let (net, mut store) = Adenet::new(&meta.config.model, meta.config.optim.seed)?;
    store
        .load_named(io::load(&dir.join("params.bin"))?)
        .map_err(|e| Error::Config(format!("checkpoint does not fit the configured model: {e}")))?;
    let mut adam = Adam::new(super::train::adam_config(&meta.config, epoch));
    adam.load_state(&store, io::load(&dir.join("optimizer.bin"))?)?;
    Ok(Restored {
        meta,
        epoch,
        net,
        store,
        adam,
    })
}
