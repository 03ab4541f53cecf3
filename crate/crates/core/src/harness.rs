//! Experiment orchestration: data-fraction sweeps, constraint ablations and
//! prior-parameter sweeps over the two-stage trainer, plus the summary
//! arithmetic (means, standard deviations, improvement percentages).

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, Sample, Split};
use crate::error::{invalid, Error, Result};
use crate::fidelity::{BinaryMask, CompositeWeights};
use crate::fmt_sig6;
use crate::grid::Field2D;
use crate::metrics::{binarize, evaluate, BoundaryParams, MetricSet};
use crate::predictor::{forward, mean_dice, ArchConfig, ParamSet, TrainConfig, TrainLog, Trainer};

/// Which priors are active in stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Stage 1 only.
    Baseline,
    RdOnly,
    PfOnly,
    RdPf,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::RdOnly => "rd_only",
            Self::PfOnly => "pf_only",
            Self::RdPf => "rd_pf",
        }
    }

    pub fn stages(self) -> usize {
        if self == Self::Baseline {
            1
        } else {
            2
        }
    }

    /// `w` with the weights of inactive priors zeroed.
    pub fn mask(self, w: CompositeWeights) -> CompositeWeights {
        match self {
            Self::Baseline => CompositeWeights::new(0.0, 0.0),
            Self::RdOnly => CompositeWeights::new(w.lambda_rd, 0.0),
            Self::PfOnly => CompositeWeights::new(0.0, w.lambda_pf),
            Self::RdPf => w,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "a")]
    A,
    #[serde(rename = "D")]
    D,
    #[serde(rename = "eps")]
    Eps,
    #[serde(rename = "lambda_rd")]
    LambdaRd,
    #[serde(rename = "lambda_pf")]
    LambdaPf,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::A => "a",
            Self::D => "D",
            Self::Eps => "eps",
            Self::LambdaRd => "lambda_rd",
            Self::LambdaPf => "lambda_pf",
        }
    }

    /// The grid used when a spec names an axis without listing values.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::None => vec![],
            Self::A => vec![0.3, 0.4, 0.5, 0.6, 0.7],
            Self::D => vec![0.5, 1.0, 2.0, 5.0, 10.0, 100.0],
            Self::Eps => vec![0.001, 0.01, 0.05, 0.1, 0.2],
            Self::LambdaRd | Self::LambdaPf => vec![0.01, 0.05, 0.1, 0.5, 1.0],
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Self::None => {}
            Self::A => c.rd.a = value,
            Self::D => c.rd.d = value,
            Self::Eps => c.pf.eps = value,
            Self::LambdaRd => c.weights.lambda_rd = value,
            Self::LambdaPf => c.weights.lambda_pf = value,
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Dice,
    Iou,
    BoundaryF1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Dice, MetricKind::Iou, MetricKind::BoundaryF1];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dice => "dice",
            Self::Iou => "iou",
            Self::BoundaryF1 => "boundary_f1",
        }
    }

    pub fn pick(self, m: &MetricSet) -> f64 {
        match self {
            Self::Dice => m.dice,
            Self::Iou => m.iou,
            Self::BoundaryF1 => m.boundary_f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub constraint: Constraint,
    /// Training-data percentages.
    pub fractions: Vec<u32>,
    pub sweep: SweepAxis,
    /// Values for `sweep`; empty means the axis' default grid.
    pub sweep_values: Vec<f64>,
    /// Seeds per cell; repeat `r` trains with seed `train.seed + r`.
    pub repeats: usize,
    pub metrics: Vec<MetricKind>,
    pub splits: Vec<Split>,
    pub boundary: BoundaryParams,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            constraint: Constraint::RdPf,
            fractions: vec![100],
            sweep: SweepAxis::None,
            sweep_values: vec![],
            repeats: 1,
            metrics: MetricKind::ALL.to_vec(),
            splits: vec![Split::TestIn, Split::TestOod],
            boundary: BoundaryParams::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return invalid("fractions must not be empty");
        }
        if let Some(f) = self.fractions.iter().find(|&&f| f == 0 || f > 100) {
            return invalid(format!("fraction {f}% must lie in 1..=100"));
        }
        if self.metrics.is_empty() {
            return invalid("metrics must not be empty");
        }
        if self.splits.is_empty() {
            return invalid("splits must not be empty");
        }
        if self.repeats == 0 {
            return invalid("repeats must be at least 1");
        }
        if self.sweep == SweepAxis::None && !self.sweep_values.is_empty() {
            return invalid("sweep_values given without a sweep axis");
        }
        if let Some(v) = self.sweep_values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("sweep value {v} is not finite"));
        }
        self.boundary.validate()
    }

    /// The sweep values actually run; `[None]` when there is no sweep.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        if self.sweep == SweepAxis::None {
            return vec![None];
        }
        let values = if self.sweep_values.is_empty() {
            self.sweep.default_values()
        } else {
            self.sweep_values.clone()
        };
        values.into_iter().map(Some).collect()
    }

    /// Number of rows `run_experiment` emits.
    pub fn row_count(&self) -> usize {
        self.fractions.len()
            * self.sweep_points().len()
            * self.repeats
            * self.metrics.len()
            * self.splits.len()
            * self.constraint.stages()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub constraint: Constraint,
    pub fraction: u32,
    pub sweep_param: SweepAxis,
    pub sweep_value: Option<f64>,
    pub split: Split,
    pub metric: MetricKind,
    pub stage: u8,
    pub seed: u64,
    /// Mean of the metric over the split's images; NaN when training diverged.
    pub value: f64,
    /// Set when this row's stage diverged.
    pub diverged: bool,
}

pub const RESULT_HEADER: &str = "constraint,fraction,sweep_param,sweep_value,split,metric,stage,seed,value";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.constraint.name(),
            r.fraction,
            r.sweep_param.name(),
            fmt_opt(r.sweep_value),
            r.split.name(),
            r.metric.name(),
            r.stage,
            r.seed,
            fmt_sig6(r.value)
        )?;
    }
    Ok(())
}

/// Validation Dice after stage 2 for one (fraction, sweep value, seed) cell,
/// used to pick sweep values the way a validation grid search would.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub fraction: u32,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub val_dice: f64,
}

/// Per-fraction sweep value with the best mean validation Dice over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub fraction: u32,
    pub sweep_value: Option<f64>,
    pub mean_val_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub validation: Vec<ValidationScore>,
    /// Training logs per (fraction, sweep value, seed) cell, in row order.
    pub logs: Vec<(u32, Option<f64>, u64, TrainLog)>,
}

impl ExperimentOutcome {
    /// The sweep value with the highest mean validation Dice per fraction;
    /// ties go to the earlier value. Cells with NaN scores are skipped.
    pub fn select(&self) -> Vec<Selection> {
        let mut groups: BTreeMap<u32, Vec<(Option<f64>, Vec<f64>)>> = BTreeMap::new();
        for v in &self.validation {
            let list = groups.entry(v.fraction).or_default();
            match list.iter_mut().find(|(s, _)| *s == v.sweep_value) {
                Some((_, scores)) => scores.push(v.val_dice),
                None => list.push((v.sweep_value, vec![v.val_dice])),
            }
        }
        let mut out = Vec::new();
        for (fraction, list) in groups {
            let mut best: Option<Selection> = None;
            for (value, scores) in list {
                let m = scores.iter().sum::<f64>() / scores.len() as f64;
                if m.is_nan() {
                    continue;
                }
                if best.as_ref().is_none_or(|b| m > b.mean_val_dice) {
                    best = Some(Selection {
                        fraction,
                        sweep_value: value,
                        mean_val_dice: m,
                    });
                }
            }
            out.extend(best);
        }
        out
    }
}

type Pairs<'a> = Vec<(&'a Field2D, &'a BinaryMask)>;

fn pairs<'a>(samples: &[&'a Sample]) -> Pairs<'a> {
    samples.iter().map(|s| (&s.image, &s.mask)).collect()
}

/// Per-split metric means of `params`.
fn score(params: &ParamSet, spec: &ExperimentSpec, sets: &[(Split, Pairs)]) -> Result<Vec<(Split, MetricSet)>> {
    let mut out = Vec::with_capacity(sets.len());
    for (split, set) in sets {
        let per: Vec<Result<MetricSet>> = set
            .par_iter()
            .map(|(img, y)| evaluate(&binarize(&forward(img, params)?, 0.5), y, &spec.boundary))
            .collect();
        let mut sum = MetricSet {
            dice: 0.0,
            iou: 0.0,
            boundary_f1: 0.0,
        };
        for m in per {
            let m = m?;
            sum.dice += m.dice;
            sum.iou += m.iou;
            sum.boundary_f1 += m.boundary_f1;
        }
        let n = set.len() as f64;
        out.push((
            *split,
            MetricSet {
                dice: sum.dice / n,
                iou: sum.iou / n,
                boundary_f1: sum.boundary_f1 / n,
            },
        ));
    }
    Ok(out)
}

struct CellResult {
    rows: Vec<ResultRow>,
    validation: Vec<ValidationScore>,
    logs: Vec<(u32, Option<f64>, u64, TrainLog)>,
}

/// Runs every (fraction, seed) cell. Stage 1 is trained once per cell and
/// shared by all sweep values; stage 2 branches from it per sweep value.
/// A diverged stage yields NaN rows flagged `diverged` instead of an error.
pub fn run_experiment(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    train: &TrainConfig,
    arch: &ArchConfig,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    train.validate()?;
    arch.validate()?;
    for p in spec.sweep_points().into_iter().flatten() {
        spec.sweep.apply(train, p).validate()?;
    }
    let mut eval_sets = Vec::new();
    for &split in &spec.splits {
        let set = pairs(&corpus.split(split));
        if set.is_empty() {
            return invalid(format!("corpus has no {} samples", split.name()));
        }
        eval_sets.push((split, set));
    }
    let val = pairs(&corpus.split(Split::Val));
    for &f in &spec.fractions {
        corpus.train_fraction(f)?;
    }
    for s in &corpus.samples {
        arch.check_input(s.image.height(), s.image.width())?;
    }

    let cells: Vec<(u32, u64)> = spec
        .fractions
        .iter()
        .flat_map(|&f| (0..spec.repeats as u64).map(move |r| (f, train.seed.wrapping_add(r))))
        .collect();
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&(fraction, seed)| run_cell(spec, corpus, train, arch, fraction, seed, &eval_sets, &val))
        .collect();

    // Reorder from (fraction, seed, sweep) to (fraction, sweep, seed).
    let points = spec.sweep_points();
    let mut by_cell = Vec::with_capacity(results.len());
    for r in results {
        by_cell.push(r?);
    }
    let mut outcome = ExperimentOutcome::default();
    let per_point = spec.splits.len() * spec.metrics.len() * spec.constraint.stages();
    for (fi, _) in spec.fractions.iter().enumerate() {
        for (pi, _) in points.iter().enumerate() {
            for r in 0..spec.repeats {
                let cell = &by_cell[fi * spec.repeats + r];
                outcome
                    .rows
                    .extend_from_slice(&cell.rows[pi * per_point..(pi + 1) * per_point]);
                if let Some(v) = cell.validation.get(pi) {
                    outcome.validation.push(v.clone());
                }
                if let Some(l) = cell.logs.get(pi) {
                    outcome.logs.push(l.clone());
                }
            }
        }
    }
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    train: &TrainConfig,
    arch: &ArchConfig,
    fraction: u32,
    seed: u64,
    eval_sets: &[(Split, Pairs)],
    val: &[(&Field2D, &BinaryMask)],
) -> Result<CellResult> {
    let train_set = pairs(&corpus.train_fraction(fraction)?);
    let cfg = TrainConfig {
        seed,
        ..train.clone()
    };

    let mut trainer = Trainer::new(arch, seed)?;
    let mut stage1_log = TrainLog::default();
    let stage1 = match trainer.run_stage(1, cfg.epochs_stage1, &cfg, &train_set, val, &mut stage1_log) {
        Ok(()) => Some(score(trainer.params(), spec, eval_sets)?),
        Err(Error::Divergence { .. }) => None,
        Err(e) => return Err(e),
    };

    let mut cell = CellResult {
        rows: Vec::new(),
        validation: Vec::new(),
        logs: Vec::new(),
    };
    for point in spec.sweep_points() {
        let mut point_cfg = match point {
            Some(v) => spec.sweep.apply(&cfg, v),
            None => cfg.clone(),
        };
        point_cfg.weights = spec.constraint.mask(point_cfg.weights);

        let mut log = stage1_log.clone();
        let mut stage2 = None;
        if spec.constraint.stages() == 2 && stage1.is_some() {
            let mut branch = trainer.clone();
            match branch.run_stage(2, point_cfg.epochs_stage2, &point_cfg, &train_set, val, &mut log) {
                Ok(()) => {
                    stage2 = Some(score(branch.params(), spec, eval_sets)?);
                    cell.validation.push(ValidationScore {
                        fraction,
                        sweep_value: point,
                        seed,
                        val_dice: mean_dice(branch.params(), val)?,
                    });
                }
                Err(Error::Divergence { .. }) => cell.validation.push(ValidationScore {
                    fraction,
                    sweep_value: point,
                    seed,
                    val_dice: f64::NAN,
                }),
                Err(e) => return Err(e),
            }
        }
        cell.logs.push((fraction, point, seed, log));

        let stages: Vec<(u8, &Option<Vec<(Split, MetricSet)>>)> = if spec.constraint.stages() == 2 {
            vec![(1, &stage1), (2, &stage2)]
        } else {
            vec![(1, &stage1)]
        };
        for (split_pos, &split) in spec.splits.iter().enumerate() {
            for &metric in &spec.metrics {
                for &(stage, scores) in &stages {
                    let value = scores
                        .as_ref()
                        .map(|s| metric.pick(&s[split_pos].1))
                        .unwrap_or(f64::NAN);
                    cell.rows.push(ResultRow {
                        constraint: spec.constraint,
                        fraction,
                        sweep_param: spec.sweep,
                        sweep_value: point,
                        split,
                        metric,
                        stage,
                        seed,
                        value,
                        diverged: scores.is_none(),
                    });
                }
            }
        }
    }
    Ok(cell)
}

/// Relative change from `stage1` to `stage2` in percent; `None` unless
/// `stage1 > 0`.
pub fn improvement(stage1: f64, stage2: f64) -> Option<f64> {
    if stage1 > 0.0 && stage1.is_finite() {
        Some(100.0 * (stage2 - stage1) / stage1)
    } else {
        None
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub constraint: Constraint,
    pub fraction: u32,
    pub sweep_param: SweepAxis,
    pub sweep_value: Option<f64>,
    pub split: Split,
    pub metric: MetricKind,
    /// Seeds contributing finite values, per stage.
    pub n: [usize; 2],
    pub diverged: usize,
    pub stage1: (f64, f64),
    /// NaN when the constraint has no second stage.
    pub stage2: (f64, f64),
    pub improvement: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "constraint,fraction,sweep_param,sweep_value,split,metric,n_stage1,n_stage2,diverged,\
stage1_mean,stage1_std,stage2_mean,stage2_std,improvement_pct";

/// Groups rows by everything except seed and stage, keeping the first-seen
/// group order, and reduces each group to means, deviations and the
/// improvement of the stage means.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (Constraint, u32, SweepAxis, Option<u64>, Split, MetricKind);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, (Option<f64>, [Vec<f64>; 2], usize)> = BTreeMap::new();
    for r in rows {
        let key = (
            r.constraint,
            r.fraction,
            r.sweep_param,
            r.sweep_value.map(f64::to_bits),
            r.split,
            r.metric,
        );
        let g = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (r.sweep_value, [Vec::new(), Vec::new()], 0)
        });
        if r.value.is_finite() {
            g.1[(r.stage as usize).clamp(1, 2) - 1].push(r.value);
        } else if r.diverged {
            g.2 += 1;
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (sweep_value, values, diverged) = &groups[&key];
            let stage1 = mean_std(&values[0]);
            let stage2 = mean_std(&values[1]);
            SummaryRow {
                constraint: key.0,
                fraction: key.1,
                sweep_param: key.2,
                sweep_value: *sweep_value,
                split: key.4,
                metric: key.5,
                n: [values[0].len(), values[1].len()],
                diverged: *diverged,
                stage1,
                stage2,
                improvement: improvement(stage1.0, stage2.0).filter(|v| v.is_finite()),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.constraint.name(),
            s.fraction,
            s.sweep_param.name(),
            fmt_opt(s.sweep_value),
            s.split.name(),
            s.metric.name(),
            s.n[0],
            s.n[1],
            s.diverged,
            fmt_sig6(s.stage1.0),
            fmt_sig6(s.stage1.1),
            fmt_sig6(s.stage2.0),
            fmt_sig6(s.stage2.1),
            fmt_opt(s.improvement)
        )?;
    }
    Ok(())
}

/// Wide layout: one line per (constraint, fraction, sweep point) with, for
/// every split x metric pair, stage means and deviations and the improvement
/// column. Column order follows first appearance in `summary`.
pub fn write_summary_wide_csv<W: Write>(summary: &[SummaryRow], mut out: W) -> Result<()> {
    type RowKey = (Constraint, u32, SweepAxis, Option<u64>);
    let mut columns: Vec<(Split, MetricKind)> = Vec::new();
    let mut row_keys: Vec<(RowKey, Option<f64>)> = Vec::new();
    let mut cells: BTreeMap<(RowKey, Split, MetricKind), &SummaryRow> = BTreeMap::new();
    for s in summary {
        if !columns.contains(&(s.split, s.metric)) {
            columns.push((s.split, s.metric));
        }
        let key = (s.constraint, s.fraction, s.sweep_param, s.sweep_value.map(f64::to_bits));
        if !row_keys.iter().any(|(k, _)| *k == key) {
            row_keys.push((key, s.sweep_value));
        }
        cells.insert((key, s.split, s.metric), s);
    }

    let mut header = String::from("constraint,fraction,sweep_param,sweep_value");
    for (split, metric) in &columns {
        for suffix in ["stage1_mean", "stage1_std", "stage2_mean", "stage2_std", "improvement_pct"] {
            header.push_str(&format!(",{}_{}_{}", split.name(), metric.name(), suffix));
        }
    }
    writeln!(out, "{header}")?;
    for (key, value) in &row_keys {
        let mut line = format!("{},{},{},{}", key.0.name(), key.1, key.2.name(), fmt_opt(*value));
        for (split, metric) in &columns {
            match cells.get(&(*key, *split, *metric)) {
                Some(s) => line.push_str(&format!(
                    ",{},{},{},{},{}",
                    fmt_sig6(s.stage1.0),
                    fmt_sig6(s.stage1.1),
                    fmt_sig6(s.stage2.0),
                    fmt_sig6(s.stage2.1),
                    fmt_opt(s.improvement)
                )),
                None => line.push_str(",,,,,"),
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
