use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pdeseg::datagen::{load_corpus, make_corpus, read_mask_pgm, write_corpus, write_field_pgm, write_field_raw, Corpus, Split};
use pdeseg::harness::{
    run_experiment, summarize, write_rows_csv, write_summary_csv, write_summary_wide_csv, ExperimentSpec, ResultRow,
    Selection,
};
use pdeseg::metrics::{binarize, evaluate, MetricSet};
use pdeseg::predictor::{forward, train_on, ParamSet};
use pdeseg::solver::solve_variational;
use pdeseg::{fmt_sig6, BinaryMask, Field2D};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn with_path(path: &Path) -> impl Fn(pdeseg::Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref()
        .ok_or_else(|| CliError::config(format!("config has no `{name}` section")))
}

pub fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pdeseg::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load(manifest: &Path) -> Result<Corpus, CliError> {
    load_corpus(manifest).map_err(with_path(manifest))
}

fn check_threshold(t: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(CliError::config(format!("threshold must lie in [0,1], got {t}")))
    }
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let corpus_cfg = section(&cfg.gen, "gen")?;
    let corpus = make_corpus(corpus_cfg).map_err(|e| CliError::config(format!("gen: {e}")))?;
    write_corpus(out, &corpus).map_err(with_path(out))?;
    Ok(())
}

#[derive(Serialize)]
struct SolveMetrics {
    iterations: usize,
    stage_boundary: usize,
    final_loss: f64,
    target: MetricSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<MetricSet>,
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let s = section(&cfg.solve, "solve")?;
    check_threshold(s.threshold)?;
    s.solver.validate()?;
    s.boundary.validate()?;
    let target = read_mask_pgm(&s.target).map_err(with_path(&s.target))?;
    let truth = match &s.truth {
        Some(p) => {
            let m = read_mask_pgm(p).map_err(with_path(p))?;
            if m.dims() != target.dims() {
                return Err(CliError::config(format!(
                    "truth mask is {}x{} but target is {}x{}",
                    m.height(),
                    m.width(),
                    target.height(),
                    target.width()
                )));
            }
            Some(m)
        }
        None => None,
    };

    let report = solve_variational(&target, &s.solver)?;
    let pred = binarize(&report.final_field, s.threshold);
    let metrics = SolveMetrics {
        iterations: report.loss_log.len(),
        stage_boundary: report.stage_boundary,
        final_loss: report.loss_log.last().map(|r| r.loss.total).unwrap_or(f64::NAN),
        target: evaluate(&pred, &target, &s.boundary)?,
        truth: truth.as_ref().map(|t| evaluate(&pred, t, &s.boundary)).transpose()?,
    };

    write_field_pgm(&out.join("field.pgm"), &report.final_field).map_err(with_path(out))?;
    write_field_raw(&out.join("field.f64"), &report.final_field).map_err(with_path(out))?;
    write_file(&out.join("loss.csv"), &csv_bytes(|b| report.write_loss_csv(b))?)?;
    write_json(&out.join("metrics.json"), &metrics)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let s = section(&cfg.train, "train")?;
    let corpus = load(&s.manifest)?;
    let set = corpus.train_fraction(s.fraction)?;
    let tr: Vec<(&Field2D, &BinaryMask)> = set.iter().map(|x| (&x.image, &x.mask)).collect();
    let va: Vec<(&Field2D, &BinaryMask)> = corpus
        .split(Split::Val)
        .into_iter()
        .map(|x| (&x.image, &x.mask))
        .collect();
    let (params, log) = train_on(&tr, &va, &s.config, &s.arch)?;
    write_file(&out.join("params.json"), params.to_json()?.as_bytes())?;
    write_file(&out.join("train_log.csv"), &csv_bytes(|b| log.write_csv(b))?)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let s = section(&cfg.eval, "eval")?;
    check_threshold(s.threshold)?;
    s.boundary.validate()?;
    if s.splits.is_empty() {
        return Err(CliError::config("eval.splits must not be empty"));
    }
    let text = fs::read_to_string(&s.params)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", s.params.display())))?;
    let params = ParamSet::from_json(&text).map_err(with_path(&s.params))?;
    let corpus = load(&s.manifest)?;

    let mut per_image = String::from("index,split,morphology,dice,iou,boundary_f1\n");
    let mut aggregate = String::from("split,n,dice,iou,boundary_f1\n");
    for &split in &s.splits {
        let samples = corpus.split(split);
        let mut sum = [0.0; 3];
        for x in &samples {
            let u = forward(&x.image, &params)?;
            let m = evaluate(&binarize(&u, s.threshold), &x.mask, &s.boundary)?;
            sum[0] += m.dice;
            sum[1] += m.iou;
            sum[2] += m.boundary_f1;
            let _ = writeln!(
                per_image,
                "{},{},{},{},{},{}",
                x.index,
                split.name(),
                x.morphology.name(),
                fmt_sig6(m.dice),
                fmt_sig6(m.iou),
                fmt_sig6(m.boundary_f1)
            );
        }
        let n = samples.len();
        let mean = |v: f64| if n == 0 { f64::NAN } else { v / n as f64 };
        let _ = writeln!(
            aggregate,
            "{},{},{},{},{}",
            split.name(),
            n,
            fmt_sig6(mean(sum[0])),
            fmt_sig6(mean(sum[1])),
            fmt_sig6(mean(sum[2]))
        );
    }
    write_file(&out.join("per_image.csv"), per_image.as_bytes())?;
    write_file(&out.join("aggregate.csv"), aggregate.as_bytes())
}

fn selection_csv(spec: &ExperimentSpec, selected: &[Selection], buf: &mut String) {
    for s in selected {
        let _ = writeln!(
            buf,
            "{},{},{},{},{}",
            spec.constraint.name(),
            s.fraction,
            spec.sweep.name(),
            s.sweep_value.map(fmt_sig6).unwrap_or_default(),
            fmt_sig6(s.mean_val_dice)
        );
    }
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let s = section(&cfg.sweep, "sweep")?;
    if s.experiments.is_empty() {
        return Err(CliError::config("sweep.experiments must not be empty"));
    }
    for (k, e) in s.experiments.iter().enumerate() {
        e.validate()
            .map_err(|err| CliError::config(format!("sweep.experiments[{k}]: {err}")))?;
    }
    let corpus = load(&s.manifest)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut selection = String::from("constraint,fraction,sweep_param,sweep_value,mean_val_dice\n");
    for spec in &s.experiments {
        let outcome = run_experiment(spec, &corpus, &s.train, &s.arch)?;
        rows.extend(outcome.rows.iter().cloned());
        if spec.constraint.stages() == 2 {
            selection_csv(spec, &outcome.select(), &mut selection);
        }
    }
    let summary = summarize(&rows);
    write_file(&out.join("rows.csv"), &csv_bytes(|b| write_rows_csv(&rows, b))?)?;
    write_file(&out.join("summary.csv"), &csv_bytes(|b| write_summary_wide_csv(&summary, b))?)?;
    write_file(&out.join("summary_long.csv"), &csv_bytes(|b| write_summary_csv(&summary, b))?)?;
    write_file(&out.join("selection.csv"), selection.as_bytes())
}
