use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use mnet_tensor::{Scalar, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::eval::evaluate_with;
use crate::data::{make_sequences, tps_views, SequenceSample, VolumeRecord};
use crate::error::{data, Error, Result};
use crate::losses::joint_loss;
use crate::model::{save_checkpoint, MNet};
use crate::nn::Params;
use crate::targets::Regions;

/// Preprocessed training and validation cases.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<VolumeRecord>,
    pub val: Vec<VolumeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Shuffled,
    Ordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    TrainTarget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based, counted across both phases.
    pub epoch: usize,
    pub phase: Phase,
    /// Mean joint loss per optimizer step.
    pub train_loss: f64,
    /// Only measured when a training-Dice stop target is set.
    pub train_wt_dice: Option<f64>,
    pub val_dice: Regions<f64>,
    pub val_hd95: Regions<Option<f64>>,
    pub val_mean_dice: f64,
    pub wall_secs: f64,
}

/// Equality ignores wall time.
impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.phase == o.phase
            && self.train_loss.to_bits() == o.train_loss.to_bits()
            && self.train_wt_dice.map(f64::to_bits) == o.train_wt_dice.map(f64::to_bits)
            && self.val_dice == o.val_dice
            && self.val_hd95 == o.val_hd95
            && self.val_mean_dice.to_bits() == o.val_mean_dice.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mean_dice: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub stop: StopReason,
    /// Whether patience ended phase 1 before its budget.
    pub phase1_early_stopped: bool,
    pub phase1_end_hash: Option<u64>,
    pub phase2_start_hash: Option<u64>,
}

impl RunRecord {
    /// Index of the first phase-2 epoch, if the phase marker switched.
    pub fn phase_switch(&self) -> Option<usize> {
        self.epochs.windows(2).position(|w| w[0].phase != w[1].phase).map(|i| i + 1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

pub struct TrainOutcome<S: Scalar> {
    /// Parameters of the best validation epoch.
    pub model: MNet<S>,
    pub last: MNet<S>,
    pub record: RunRecord,
}

/// Hash of every parameter path and bit pattern.
pub fn param_hash<S: Scalar>(model: &MNet<S>) -> u64 {
    let mut h = DefaultHasher::new();
    for (path, t) in model.named_params() {
        h.write(path.as_bytes());
        for &v in t.data() {
            h.write_u64(v.as_f64().to_bits());
        }
    }
    h.finish()
}

/// Builds ordered samples of `frames` slices from every case.
pub fn sequences_of<S: Scalar>(cases: &[VolumeRecord], frames: usize) -> Result<Vec<SequenceSample<S>>> {
    let mut out = Vec::new();
    for c in cases {
        out.extend(make_sequences(c, frames)?);
    }
    Ok(out)
}

/// One optimizer step on the batch mean of the joint loss. Returns the loss,
/// or `None` if it was not finite (parameters are then untouched).
pub fn train_step<S: Scalar>(
    model: &mut MNet<S>,
    opt: &mut Adam<S>,
    batch: &[&SequenceSample<S>],
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let mut total: Option<Tensor<S>> = None;
    for s in batch {
        let l = joint_loss(&bound.forward(&s.frames)?, &s.target_tensor(), &cfg.loss)?;
        total = Some(match total {
            Some(acc) => acc.add(&l)?,
            None => l,
        });
    }
    let loss = total
        .ok_or_else(|| data("empty batch"))?
        .scale(S::of(1.0 / batch.len() as f64));
    let value = loss.item().as_f64();
    if !value.is_finite() {
        return Ok(None);
    }
    let grads = loss.backward()?;
    let g: Vec<Tensor<S>> = bound.named_params().iter().map(|(_, t)| grads.get_or_zeros(t)).collect();
    let mut slots = Vec::new();
    model.params_mut("", &mut slots);
    let mut params: Vec<&mut Tensor<S>> = slots.into_iter().map(|(_, t)| t).collect();
    opt.update(&mut params, &g)?;
    Ok(Some(value))
}

/// Two-phase training: the shuffled view for `phase1_epochs`, then the
/// ordered view for `phase2_epochs`, continuing from the phase-1 parameters.
/// Each phase ends early after `early_stop_patience` epochs without a better
/// validation mean Dice within that phase. The best epoch overall is kept
/// (and written to `out_dir/best.ckpt` when given).
pub fn train_tps<S: Scalar>(cfg: &TrainConfig, data_: &TrainData, out_dir: Option<&Path>) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if data_.train.is_empty() || data_.val.is_empty() {
        return Err(data("training needs at least one training and one validation case"));
    }
    let ordered = sequences_of::<S>(&data_.train, cfg.model.frames)?;
    let (shuffled, ordered) = tps_views(&ordered, cfg.seed)?;
    let mut model = MNet::<S>::new(&cfg.model, cfg.seed)?;
    let mut opt = Adam::new(&cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let best_path = out_dir.map(|d| d.join("best.ckpt"));

    let mut record = RunRecord {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mean_dice: f64::NEG_INFINITY,
        best_checkpoint: None,
        stop: StopReason::Completed,
        phase1_early_stopped: false,
        phase1_end_hash: None,
        phase2_start_hash: None,
    };
    let mut best = model.clone();
    let mut epoch = 0;
    let mut step = 0;
    'phases: for (phase, budget, view) in [
        (Phase::Shuffled, cfg.phase1_epochs, &shuffled),
        (Phase::Ordered, cfg.phase2_epochs, &ordered),
    ] {
        if budget == 0 {
            continue;
        }
        if phase == Phase::Ordered && cfg.phase1_epochs > 0 {
            record.phase2_start_hash = Some(param_hash(&model));
        }
        let mut phase_best = f64::NEG_INFINITY;
        let mut since_best = 0;
        for _ in 0..budget {
            let start = Instant::now();
            let mut order: Vec<&SequenceSample<S>> = view.samples.iter().collect();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut steps = 0;
            for batch in order.chunks(cfg.batch_size) {
                match train_step(&mut model, &mut opt, batch, cfg)? {
                    Some(l) => loss_sum += l,
                    None => {
                        warn!("non-finite loss at epoch {epoch} step {step}");
                        if let Some(dir) = out_dir {
                            save_checkpoint(&model, step as u64, &dir.join("last_finite.ckpt"))?;
                        }
                        return Err(Error::Diverged { epoch, step });
                    }
                }
                steps += 1;
                step += 1;
            }
            let val = evaluate_with(&model, &data_.val, cfg.dice_mode)?;
            let val_mean = val.mean_dice.mean();
            let train_wt_dice = match cfg.stop_at_train_wt_dice {
                Some(_) => Some(evaluate_with(&model, &data_.train, cfg.dice_mode)?.mean_dice.wt),
                None => None,
            };
            record.epochs.push(EpochRecord {
                epoch,
                phase,
                train_loss: loss_sum / steps as f64,
                train_wt_dice,
                val_dice: val.mean_dice,
                val_hd95: val.mean_hd95,
                val_mean_dice: val_mean,
                wall_secs: start.elapsed().as_secs_f64(),
            });
            info!(
                "epoch {epoch} [{phase:?}] loss {:.4} val dice {:.4}/{:.4}/{:.4}{}",
                loss_sum / steps as f64,
                val.mean_dice.wt,
                val.mean_dice.tc,
                val.mean_dice.et,
                train_wt_dice.map(|d| format!(" train WT {d:.4}")).unwrap_or_default()
            );
            if val_mean > record.best_val_mean_dice {
                record.best_val_mean_dice = val_mean;
                record.best_epoch = epoch;
                best = model.clone();
                if let Some(p) = &best_path {
                    save_checkpoint(&best, step as u64, p)?;
                    record.best_checkpoint = Some(p.clone());
                }
            }
            if val_mean > phase_best {
                phase_best = val_mean;
                since_best = 0;
            } else {
                since_best += 1;
            }
            epoch += 1;
            if let (Some(target), Some(d)) = (cfg.stop_at_train_wt_dice, train_wt_dice) {
                if d >= target {
                    record.stop = StopReason::TrainTarget;
                    break 'phases;
                }
            }
            if since_best >= cfg.early_stop_patience {
                if phase == Phase::Shuffled {
                    record.phase1_early_stopped = true;
                    break;
                }
                record.stop = StopReason::EarlyStopped;
                break 'phases;
            }
        }
        if phase == Phase::Shuffled {
            record.phase1_end_hash = Some(param_hash(&model));
        }
    }
    Ok(TrainOutcome {
        model: best,
        last: model,
        record,
    })
}
