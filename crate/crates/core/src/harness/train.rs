use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adenet_tensor::{clip_grad_norm, Adam, AdamConfig, Ctx, Graph, ParamId, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, CheckpointMeta, Restored};
use super::config::RunConfig;
use super::evaluate::{composite, evaluate, ModelPredictor};
use crate::error::{Error, IoContext, Result};
use crate::model::{Adenet, ModelInput};
use crate::objectives::{asd_loss, si_sdr_loss, total_loss, EvalReport};
use crate::signalio::{remix, ClipRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValSummary {
    pub map: Option<f64>,
    pub auc: Option<f64>,
    pub si_sdr_improvement_db: Option<f64>,
    pub composite: f64,
}

impl From<&EvalReport> for ValSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            map: r.total.map,
            auc: r.total.auc,
            si_sdr_improvement_db: r.total.si_sdr_improvement_db,
            composite: composite(r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss: f64,
    pub l_se: f64,
    pub l_asd: f64,
    pub val: Option<ValSummary>,
}

/// What one optimiser step saw.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub batch: usize,
    pub snr_db: f64,
    pub loss: f64,
    pub l_se: f64,
    pub l_asd: f64,
    pub mask_min: f64,
    pub grad_norm: f64,
}

pub fn adam_config(cfg: &RunConfig, epoch: usize) -> AdamConfig {
    AdamConfig {
        lr: cfg.optim.lr_at(epoch),
        weight_decay: cfg.optim.weight_decay,
        ..AdamConfig::default()
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub net: Adenet,
    pub store: ParamStore,
    pub adam: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Where non-finite-loss diagnostics go.
    pub dump_dir: PathBuf,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (net, store) = Adenet::new(&cfg.model, cfg.optim.seed)?;
        Ok(Self {
            adam: Adam::new(adam_config(cfg, 0)),
            cfg: cfg.clone(),
            net,
            store,
            epoch: 0,
            history: Vec::new(),
            dump_dir: std::env::temp_dir(),
        })
    }

    pub fn resume(r: Restored) -> Self {
        Self {
            cfg: r.meta.config.clone(),
            net: r.net,
            store: r.store,
            adam: r.adam,
            epoch: r.epoch + 1,
            history: r.meta.history,
            dump_dir: std::env::temp_dir(),
        }
    }

    /// Per-clip forward/backward with gradients summed over the batch;
    /// L_se is averaged over speaking clips, L_asd over all clips.
    pub fn step(&mut self, batch: &[&ClipRecord], snr_db: f64, aug_seeds: &[u64], batch_id: usize) -> Result<StepInfo> {
        let w = self.cfg.loss;
        let n = batch.len() as f64;
        let n_speak = batch.iter().filter(|c| c.speaker_kind.is_speaking()).count() as f64;
        let mut acc: Vec<Option<Tensor>> = vec![None; self.store.len()];
        let (mut l_se, mut l_asd, mut mask_min) = (0.0, 0.0, f64::INFINITY);
        for (clip, &aug) in batch.iter().zip(aug_seeds) {
            let mixture = remix(clip, snr_db)?;
            let input = ModelInput::from_clip(clip, &mixture, self.cfg.data.augment, aug)?;
            let (grads, updates) = {
                let graph = Graph::new();
                let ctx = Ctx::training(&graph, &self.store);
                let out = self.net.forward(&ctx, &input)?;
                mask_min = mask_min.min(out.mask.value().data().iter().copied().fold(f64::INFINITY, f64::min));
                let tv = out.y_a.dim(0);
                let la = asd_loss(&ctx, out.y_a, &clip.asd_labels[..tv])?;
                let ls = if clip.speaker_kind.is_speaking() {
                    let t = input.num_samples();
                    Some(si_sdr_loss(&ctx, out.y_s, &clip.clean_target.samples()[..t])?)
                } else {
                    None
                };
                let la_w = la.scale(1.0 / n);
                let loss = match ls {
                    Some(ls) => total_loss(ls.scale(1.0 / n_speak), la_w, &w),
                    None => la_w.scale(w.lambda2),
                };
                let lv = loss.value().item();
                l_asd += la.value().item() / n;
                if let Some(ls) = ls {
                    l_se += ls.value().item() / n_speak;
                }
                if !lv.is_finite() {
                    let dump = self.dump(batch, batch_id, lv)?;
                    return Err(Error::NonFiniteLoss {
                        epoch: self.epoch,
                        batch: batch_id,
                        dump: dump.display().to_string(),
                    });
                }
                let mut g = graph.backward(loss);
                (ctx.param_grads(&mut g), ctx.take_bn_updates())
            };
            for (id, g) in grads {
                match &mut acc[id.index()] {
                    Some(a) => a.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            self.store.apply_bn_updates(updates);
        }
        // Unreached trainable parameters still take weight decay.
        let mut grads: Vec<(ParamId, Tensor)> = self
            .store
            .ids()
            .zip(acc)
            .filter(|(id, _)| self.store.is_trainable(*id))
            .map(|(id, g)| (id, g.unwrap_or_else(|| Tensor::zeros(self.store.get(id).shape()))))
            .collect();
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.optim.clip_norm);
        self.adam.config = adam_config(&self.cfg, self.epoch);
        self.adam.step(&mut self.store, &grads);
        Ok(StepInfo {
            epoch: self.epoch,
            batch: batch_id,
            snr_db,
            loss: w.lambda1 * l_se + w.lambda2 * l_asd,
            l_se,
            l_asd,
            mask_min,
            grad_norm,
        })
    }

    fn dump(&self, batch: &[&ClipRecord], batch_id: usize, loss: f64) -> Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "epoch = {}\nbatch = {batch_id}\nloss = {loss}", self.epoch);
        let ids: Vec<&str> = batch.iter().map(|c| c.clip_id.as_str()).collect();
        let _ = writeln!(text, "clips = {ids:?}\n\n[param_norms]");
        for (name, t) in self.store.named() {
            let _ = writeln!(text, "{name} = {:e}", t.sq_norm().sqrt());
        }
        std::fs::create_dir_all(&self.dump_dir).at(&self.dump_dir)?;
        let path = self.dump_dir.join(format!("nonfinite_e{:03}_b{batch_id:05}.txt", self.epoch));
        std::fs::write(&path, text).at(&path)?;
        Ok(path)
    }

    /// One pass over `clips` in a seeded order; returns the epoch means.
    pub fn train_epoch(&mut self, clips: &[ClipRecord], observer: &mut dyn FnMut(&StepInfo)) -> Result<EpochRecord> {
        if clips.is_empty() {
            return Err(Error::Config("no training clips".into()));
        }
        let seed = self.cfg.optim.seed;
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, self.epoch as u64])));
        let bs = self.cfg.optim.batch_size;
        let batches_per_epoch = clips.len().div_ceil(bs);
        let (mut loss, mut l_se, mut l_asd) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(bs).enumerate() {
            let batch: Vec<&ClipRecord> = idx.iter().map(|&i| &clips[i]).collect();
            let aug: Vec<u64> = idx.iter().map(|&i| mix_seed(&[seed, self.epoch as u64, i as u64])).collect();
            let global = self.epoch * batches_per_epoch + b;
            let info = self.step(&batch, self.cfg.data.snr_for_batch(global), &aug, b)?;
            observer(&info);
            loss += info.loss;
            l_se += info.l_se;
            l_asd += info.l_asd;
        }
        let nb = batches_per_epoch as f64;
        Ok(EpochRecord {
            epoch: self.epoch,
            lr: self.cfg.optim.lr_at(self.epoch),
            loss: loss / nb,
            l_se: l_se / nb,
            l_asd: l_asd / nb,
            val: None,
        })
    }

    pub fn evaluate(&self, clips: &[ClipRecord]) -> Result<EvalReport> {
        evaluate(
            &ModelPredictor {
                net: &self.net,
                store: &self.store,
            },
            clips,
        )
    }

    /// Runs the configured epochs, validating and checkpointing after each.
    pub fn fit(
        &mut self,
        train: &[ClipRecord],
        val: &[ClipRecord],
        ckpt: Option<&Path>,
        observer: &mut dyn FnMut(&StepInfo),
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<()> {
        if let Some(dir) = ckpt {
            self.dump_dir = dir.to_path_buf();
        }
        while self.epoch < self.cfg.optim.epochs {
            let mut rec = self.train_epoch(train, observer)?;
            if !val.is_empty() {
                rec.val = Some(ValSummary::from(&self.evaluate(val)?));
            }
            on_epoch(&rec);
            self.history.push(rec);
            if let Some(dir) = ckpt {
                checkpoint::save(dir, &self.meta(), &self.store, &self.adam)?;
            }
            self.epoch += 1;
        }
        Ok(())
    }

    /// Best epoch by validation composite, or by training loss without validation.
    pub fn best_epoch(&self) -> usize {
        let score = |r: &EpochRecord| r.val.as_ref().map_or(-r.loss, |v| v.composite);
        self.history
            .iter()
            .fold(None::<&EpochRecord>, |best, r| match best {
                Some(b) if score(b) >= score(r) => Some(b),
                _ => Some(r),
            })
            .map_or(0, |r| r.epoch)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            epoch: self.history.last().map_or(0, |r| r.epoch),
            best_epoch: self.best_epoch(),
            config: self.cfg.clone(),
            history: self.history.clone(),
        }
    }
}
