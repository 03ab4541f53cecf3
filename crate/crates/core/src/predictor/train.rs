use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{backward_with, predict_mask};
use super::params::{init_params, ParamSet};
use super::ArchConfig;
use crate::datagen::{Corpus, Sample, Split};
use crate::error::{invalid, Error, Result};
use crate::fidelity::{BinaryMask, CompositeWeights, LossBreakdown};
use crate::grid::{Field2D, GridSpec};
use crate::metrics::dice;
use crate::priors::{PfParams, RdParams};
use crate::solver::{AdamParams, AdamState};
use crate::{fmt_sig6, sub_seed};

const SHUFFLE_STREAM: u64 = 20;
const DROPOUT_STREAM: u64 = 21;
const INIT_STREAM: u64 = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    /// Prior weights, applied during stage 2 only.
    pub weights: CompositeWeights,
    pub rd: RdParams,
    pub pf: PfParams,
    pub grid: GridSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 50,
            epochs_stage2: 50,
            batch_size: 4,
            adam: AdamParams {
                step_size: 0.003,
                ..AdamParams::default()
            },
            weights: CompositeWeights::default(),
            rd: RdParams::default(),
            pf: PfParams::default(),
            grid: GridSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_stage1 == 0 && self.epochs_stage2 == 0 {
            return invalid("epochs_stage1 and epochs_stage2 cannot both be 0");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.rd.validate()?;
        self.pf.validate()?;
        self.grid.validate()
    }
}

/// Mean loss breakdown over one epoch's training samples, plus validation Dice.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Global epoch index, counted across both stages.
    pub epoch: usize,
    pub stage: u8,
    pub loss: LossBreakdown,
    /// NaN when there is no validation data.
    pub val_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,stage,dice,bce,rd,pf,total,val_dice")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.stage,
                fmt_sig6(r.loss.dice),
                fmt_sig6(r.loss.bce),
                fmt_sig6(r.loss.rd),
                fmt_sig6(r.loss.pf),
                fmt_sig6(r.loss.total),
                fmt_sig6(r.val_dice)
            )?;
        }
        Ok(())
    }
}

/// Network parameters together with the optimizer state and epoch counter,
/// so training can be resumed or branched (e.g. one stage-1 run feeding
/// several stage-2 variants).
#[derive(Clone, Debug)]
pub struct Trainer {
    params: ParamSet,
    adam: AdamState,
    epoch: usize,
    seed: u64,
}

impl Trainer {
    /// Fresh network initialized from `seed`.
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let params = init_params(arch, sub_seed(seed, INIT_STREAM, 0))?;
        Ok(Self::from_params(params, seed))
    }

    pub fn from_params(params: ParamSet, seed: u64) -> Self {
        let adam = AdamState::new(params.len());
        Self {
            params,
            adam,
            epoch: 0,
            seed,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs `epochs` epochs of minibatch Adam. Stage 1 ignores the prior
    /// weights in `cfg`; stage 2 uses them.
    pub fn run_stage(
        &mut self,
        stage: u8,
        epochs: usize,
        cfg: &TrainConfig,
        train: &[(&Field2D, &BinaryMask)],
        val: &[(&Field2D, &BinaryMask)],
        log: &mut TrainLog,
    ) -> Result<()> {
        if train.is_empty() {
            return invalid("training set is empty");
        }
        if cfg.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        let weights = if stage == 1 {
            CompositeWeights::default()
        } else {
            cfg.weights
        };
        for _ in 0..epochs {
            let epoch = self.epoch;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(self.seed, SHUFFLE_STREAM, epoch as u64)));
            let dropout = self.params.arch().dropout_rate > 0.0;

            let mut seen = Vec::with_capacity(train.len());
            for batch in order.chunks(cfg.batch_size) {
                let params = &self.params;
                let results: Vec<Result<_>> = batch
                    .par_iter()
                    .map(|&k| {
                        let ds = dropout.then(|| sub_seed(self.seed, DROPOUT_STREAM, (epoch * train.len() + k) as u64));
                        let (img, y) = train[k];
                        backward_with(img, y, params, &weights, &cfg.rd, &cfg.pf, &cfg.grid, ds)
                    })
                    .collect();
                let mut sum = vec![0.0; self.params.len()];
                for r in results {
                    let g = r?;
                    if !g.breakdown.is_finite() {
                        return Err(Error::Divergence {
                            phase: "epoch",
                            index: epoch,
                            value: g.breakdown.total,
                        });
                    }
                    for (s, v) in sum.iter_mut().zip(g.params.as_slice()) {
                        *s += v;
                    }
                    seen.push(g.breakdown);
                }
                let scale = 1.0 / batch.len() as f64;
                for s in &mut sum {
                    *s *= scale;
                }
                if let Some(bad) = sum.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        phase: "epoch",
                        index: epoch,
                        value: *bad,
                    });
                }
                self.adam.step(self.params.as_mut_slice(), &sum, &cfg.adam);
            }
            if !self.params.is_finite() {
                return Err(Error::Divergence {
                    phase: "epoch",
                    index: epoch,
                    value: f64::NAN,
                });
            }

            let val_dice = mean_dice(&self.params, val)?;
            log.records.push(EpochRecord {
                epoch,
                stage,
                loss: LossBreakdown::mean(&seen),
                val_dice,
            });
            self.epoch += 1;
        }
        Ok(())
    }
}

/// Mean Dice of the thresholded predictions; NaN for an empty set.
pub fn mean_dice(params: &ParamSet, set: &[(&Field2D, &BinaryMask)]) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let scores: Vec<Result<f64>> = set
        .par_iter()
        .map(|(img, y)| dice(&predict_mask(img, params)?, y))
        .collect();
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / set.len() as f64)
}

fn pairs<'a>(samples: &[&'a Sample]) -> Vec<(&'a Field2D, &'a BinaryMask)> {
    samples.iter().map(|s| (&s.image, &s.mask)).collect()
}

/// Two-stage training on explicit image/mask pairs.
pub fn train_on(
    train: &[(&Field2D, &BinaryMask)],
    val: &[(&Field2D, &BinaryMask)],
    cfg: &TrainConfig,
    arch: &ArchConfig,
) -> Result<(ParamSet, TrainLog)> {
    cfg.validate()?;
    arch.validate()?;
    if train.is_empty() {
        return invalid("training set is empty");
    }
    for (img, y) in train.iter().chain(val) {
        arch.check_input(img.height(), img.width())?;
        if img.dims() != y.dims() {
            return Err(Error::DimensionMismatch {
                expected: img.dims(),
                actual: y.dims(),
            });
        }
    }
    let mut trainer = Trainer::new(arch, cfg.seed)?;
    let mut log = TrainLog::default();
    trainer.run_stage(1, cfg.epochs_stage1, cfg, train, val, &mut log)?;
    trainer.run_stage(2, cfg.epochs_stage2, cfg, train, val, &mut log)?;
    Ok((trainer.into_params(), log))
}

/// Two-stage training on the corpus' train split, validating on its val split.
pub fn train(corpus: &Corpus, cfg: &TrainConfig, arch: &ArchConfig) -> Result<(ParamSet, TrainLog)> {
    let tr = pairs(&corpus.split(Split::Train));
    let va = pairs(&corpus.split(Split::Val));
    train_on(&tr, &va, cfg, arch)
}
