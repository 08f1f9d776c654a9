//! The five commands and their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lpad_core::anomaly::{evaluate_model, EvalOptions, EvalReport, ThresholdSource};
use lpad_core::datapipe::{
    fit_stats, load_csv, normalize, split, synth_generate, write_csv, CsvSchema, Dataset, NormStats,
};
use lpad_core::diffcore::Checkpoint;
use lpad_core::rng::{stream, streams};
use lpad_core::vae::{train_with, Model, TrainConfig, TrainStats};
use serde::Serialize;

use crate::config::{DataSource, EvalSplit, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Eval,
    Transfer,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Transfer => "transfer",
            Command::Sweep => "sweep",
        }
    }
}

/// Normalized data for one run: the set the model is fitted on (and the
/// threshold derived from) and the set it is evaluated on.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub fit: Dataset,
    pub validation: Option<Dataset>,
    pub eval: Dataset,
    pub stats: NormStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
    pub config: serde_json::Value,
}

/// Mean F1 per `(latent, beta)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub latents: Vec<usize>,
    pub betas: Vec<f64>,
    pub f1: Vec<Vec<MeanSd>>,
}

impl SweepTable {
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut s = String::new();
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        s.push_str("latent");
        for b in &self.betas {
            let _ = write!(s, ",{b}");
        }
        s.push('\n');
        for (l, row) in self.latents.iter().zip(&self.f1) {
            let _ = write!(s, "{l}");
            for cell in row {
                let _ = write!(s, ",{:?}", cell.mean);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub stats: Vec<TrainStats>,
    pub summary: Option<Summary>,
    pub sweep: Option<SweepTable>,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn load_raw(cfg: &RunConfig) -> CliResult<Dataset> {
    Ok(match &cfg.data {
        DataSource::Csv(p) => load_csv(p, &CsvSchema::default())?,
        DataSource::Synth(s) => synth_generate(s)?,
    })
}

/// Splits `raw` and normalizes every part with statistics fitted on the
/// fit set, or with `stats` when given.
pub fn prepare(cfg: &RunConfig, raw: &Dataset, stats: Option<&NormStats>) -> CliResult<Prepared> {
    let parts = split(raw, &cfg.split)?;
    let (fit_raw, val_raw, eval_raw) = match parts.len() {
        3 if cfg.combine_train_val => (
            Dataset::concat(&[&parts[0], &parts[1]])?,
            None,
            parts[2].clone(),
        ),
        3 => match cfg.eval_split {
            EvalSplit::Validation => (parts[0].clone(), None, parts[1].clone()),
            EvalSplit::Test => (parts[0].clone(), Some(parts[1].clone()), parts[2].clone()),
        },
        _ => (parts[0].clone(), None, parts[1].clone()),
    };
    let stats = stats
        .cloned()
        .unwrap_or_else(|| fit_stats(&fit_raw, cfg.norm));
    let norm = |d: &Dataset| normalize(d, stats.mode, Some(&stats));
    Ok(Prepared {
        fit: norm(&fit_raw)?,
        validation: val_raw.as_ref().map(norm).transpose()?,
        eval: norm(&eval_raw)?,
        stats,
    })
}

fn repeat_seeds(cfg: &RunConfig, repeats: usize) -> Vec<u64> {
    (0..repeats as u64)
        .map(|r| cfg.seed.wrapping_add(r))
        .collect()
}

fn repeat_dir(out: &Path, repeats: usize, r: usize) -> PathBuf {
    if repeats == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("repeat-{}", r + 1))
    }
}

fn checkpoint_of(model: &Model, cfg: &RunConfig, seed: u64, stats: &NormStats) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.push_meta("seed", seed.to_string());
    ck.push_meta("run_config", cfg.snapshot_json().to_string());
    ck.push_meta(
        "norm_stats",
        serde_json::to_string(stats).expect("stats serialize"),
    );
    ck
}

fn train_one(
    cfg: &RunConfig,
    model: &mut Model,
    fit: &Dataset,
    validation: Option<&Dataset>,
    tc: &TrainConfig,
    dir: &Path,
    stats: &NormStats,
    files: &mut Vec<PathBuf>,
) -> CliResult<TrainStats> {
    let mut saved = Vec::new();
    let result = train_with(model, fit, validation, tc, |epoch, m, due| {
        if due {
            let path = dir.join(format!("checkpoint-epoch-{epoch}.txt"));
            checkpoint_of(m, cfg, tc.seed, stats).save(&path)?;
            saved.push(path);
        }
        Ok(())
    });
    files.extend(saved);
    let train_stats = result?;
    let path = dir.join("train_stats.csv");
    let mut comments = cfg.snapshot_comments();
    comments.push(format!("run_seed = {}", tc.seed));
    train_stats.write_csv(&path, &comments)?;
    files.push(path);
    let path = dir.join("checkpoint.txt");
    checkpoint_of(model, cfg, tc.seed, stats).save(&path)?;
    files.push(path);
    Ok(train_stats)
}

fn source_threshold(cfg: &RunConfig) -> CliResult<Option<f64>> {
    if let Some(t) = cfg.source_threshold {
        return Ok(Some(t));
    }
    let Some(path) = &cfg.source_report else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: not a report: {e}", path.display())))?;
    v.get("threshold")
        .and_then(serde_json::Value::as_f64)
        .map(Some)
        .ok_or_else(|| CliError::Usage(format!("{}: no numeric 'threshold' field", path.display())))
}

fn eval_options(cfg: &RunConfig) -> CliResult<EvalOptions> {
    Ok(EvalOptions {
        samples: cfg.samples,
        transform: cfg.transform,
        threshold_source: cfg.threshold_source,
        source_threshold: if cfg.threshold_source == ThresholdSource::SelfRun {
            None
        } else {
            source_threshold(cfg)?
        },
        anomaly_fraction: cfg.anomaly_fraction,
    })
}

fn evaluate(
    cfg: &RunConfig,
    model: &Model,
    data: &Prepared,
    seed: u64,
    opts: &EvalOptions,
) -> CliResult<EvalReport> {
    let mut report = evaluate_model(
        model,
        &data.fit,
        &data.eval,
        opts,
        &mut stream(seed, streams::EVAL),
    )?;
    report.config = cfg.snapshot_json();
    report.seeds = vec![seed];
    Ok(report)
}

fn write_report(
    cfg: &RunConfig,
    report: &EvalReport,
    dir: &Path,
    stem: &str,
    files: &mut Vec<PathBuf>,
) -> CliResult<()> {
    write_file(
        &dir.join(format!("{stem}.json")),
        &report.summary_json(),
        files,
    )?;
    let mut csv = String::new();
    for c in cfg.snapshot_comments() {
        let _ = writeln!(csv, "# {c}");
    }
    let _ = writeln!(
        csv,
        "# run_seed = {}",
        report.seeds.first().copied().unwrap_or(cfg.seed)
    );
    csv.push_str(&report.instances_csv());
    write_file(&dir.join(format!("{stem}.csv")), &csv, files)
}

fn summarize(cfg: &RunConfig, command: Command, reports: &[EvalReport]) -> Summary {
    let pick = |f: fn(&EvalReport) -> f64| MeanSd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Summary {
        command: command.as_str(),
        repeats: reports.len(),
        seeds: reports.iter().flat_map(|r| r.seeds.clone()).collect(),
        precision: pick(|r| r.precision),
        recall: pick(|r| r.recall),
        f1: pick(|r| r.f1),
        config: cfg.snapshot_json(),
    }
}

fn check_shape(model: &Model, ds: &Dataset) -> CliResult<()> {
    let spec = &model.spec;
    if spec.net.in_channels != ds.n_channels() || spec.input_len != ds.window_len() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} channels x {} steps, data has {} x {}",
            spec.net.in_channels,
            spec.input_len,
            ds.n_channels(),
            ds.window_len()
        )));
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(Model, Option<NormStats>)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::from_checkpoint(&ck)?;
    let stats = match ck.meta("norm_stats") {
        Some(s) => Some(
            serde_json::from_str(s)
                .map_err(|e| CliError::Usage(format!("{}: bad norm_stats: {e}", path.display())))?,
        ),
        None => None,
    };
    Ok((model, stats))
}

/// Trains (or loads) and evaluates `repeats` models under `cfg`.
fn train_and_eval(
    cfg: &RunConfig,
    repeats: usize,
    evaluate_too: bool,
    out: &Path,
) -> CliResult<RunOutcome> {
    let raw = load_raw(cfg)?;
    let loaded = cfg.checkpoint.as_deref().map(load_model).transpose()?;
    let data = prepare(cfg, &raw, loaded.as_ref().and_then(|(_, s)| s.as_ref()))?;
    let opts = eval_options(cfg)?;
    let mut outcome = RunOutcome::default();
    for (r, seed) in repeat_seeds(cfg, repeats).into_iter().enumerate() {
        let dir = repeat_dir(out, repeats, r);
        create_dir(&dir)?;
        let model = match &loaded {
            Some((m, _)) => {
                check_shape(m, &data.fit)?;
                m.clone()
            }
            None => {
                let spec = cfg
                    .model
                    .model_spec(data.fit.n_channels(), data.fit.window_len())?;
                let mut model = Model::new(spec, seed)?;
                let tc = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let stats = train_one(
                    cfg,
                    &mut model,
                    &data.fit,
                    data.validation.as_ref(),
                    &tc,
                    &dir,
                    &data.stats,
                    &mut outcome.files,
                )?;
                outcome.stats.push(stats);
                model
            }
        };
        if evaluate_too {
            let report = evaluate(cfg, &model, &data, seed, &opts)?;
            write_report(cfg, &report, &dir, "eval", &mut outcome.files)?;
            outcome.reports.push(report);
        }
    }
    Ok(outcome)
}

fn transfer(cfg: &RunConfig, repeats: usize, out: &Path) -> CliResult<RunOutcome> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Missing("checkpoint".into()))?;
    let (source, _) = load_model(path)?;
    let raw = load_raw(cfg)?;
    let data = prepare(cfg, &raw, None)?;
    check_shape(&source, &data.fit)?;
    let opts = eval_options(cfg)?;
    let mut outcome = RunOutcome::default();
    for (r, seed) in repeat_seeds(cfg, repeats).into_iter().enumerate() {
        let dir = repeat_dir(out, repeats, r);
        create_dir(&dir)?;
        let mut model = source.clone();
        if cfg.post_train_epochs > 0 {
            let tc = TrainConfig {
                epochs: cfg.post_train_epochs,
                minibatch: cfg.post_train_minibatch,
                seed,
                ..cfg.train.clone()
            };
            let stats = train_one(
                cfg,
                &mut model,
                &data.fit,
                None,
                &tc,
                &dir,
                &data.stats,
                &mut outcome.files,
            )?;
            outcome.stats.push(stats);
        }
        let report = evaluate(cfg, &model, &data, seed, &opts)?;
        write_report(cfg, &report, &dir, "transfer", &mut outcome.files)?;
        outcome.reports.push(report);
    }
    Ok(outcome)
}

fn sweep(cfg: &RunConfig, repeats: usize, out: &Path) -> CliResult<RunOutcome> {
    if cfg.checkpoint.is_some() {
        return Err(CliError::Usage(
            "sweep trains its own models; remove 'checkpoint'".into(),
        ));
    }
    let mut outcome = RunOutcome::default();
    let mut table = SweepTable {
        latents: cfg.sweep_latents.clone(),
        betas: cfg.sweep_betas.clone(),
        f1: Vec::new(),
    };
    let mut cells = String::from("latent,beta,repeat,seed,precision,recall,f1\n");
    for &latent in &cfg.sweep_latents {
        let mut row = Vec::new();
        for &beta in &cfg.sweep_betas {
            let mut cell_cfg = cfg.clone();
            cell_cfg.model.latent = latent;
            cell_cfg.model.beta = beta;
            let dir = out.join(format!("latent-{latent}-beta-{beta}"));
            let cell = train_and_eval(&cell_cfg, repeats, true, &dir)?;
            for (r, rep) in cell.reports.iter().enumerate() {
                let _ = writeln!(
                    cells,
                    "{latent},{beta},{},{},{:?},{:?},{:?}",
                    r + 1,
                    rep.seeds[0],
                    rep.precision,
                    rep.recall,
                    rep.f1
                );
            }
            row.push(MeanSd::of(
                &cell.reports.iter().map(|r| r.f1).collect::<Vec<_>>(),
            ));
            outcome.files.extend(cell.files);
            outcome.reports.extend(cell.reports);
            outcome.stats.extend(cell.stats);
        }
        table.f1.push(row);
    }
    let comments = cfg.snapshot_comments();
    write_file(
        &out.join("sweep.csv"),
        &table.to_csv(&comments),
        &mut outcome.files,
    )?;
    let mut long = String::new();
    for c in &comments {
        let _ = writeln!(long, "# {c}");
    }
    long.push_str(&cells);
    write_file(&out.join("sweep_cells.csv"), &long, &mut outcome.files)?;
    outcome.sweep = Some(table);
    Ok(outcome)
}

/// Runs `command` under `cfg`, writing artifacts beneath `cfg.out`.
pub fn run(cfg: &RunConfig, command: Command, repeats: usize) -> CliResult<RunOutcome> {
    if repeats == 0 {
        return Err(CliError::Invalid {
            key: "repeats".into(),
            constraint: "must be > 0".into(),
        });
    }
    let out = cfg.out.clone();
    create_dir(&out)?;
    let mut files = Vec::new();
    write_file(&out.join("config.txt"), &cfg.snapshot_text(), &mut files)?;
    let mut outcome = match command {
        Command::Synth => {
            let DataSource::Synth(s) = &cfg.data else {
                return Err(CliError::Usage(
                    "synth needs synthetic data settings, not 'data'".into(),
                ));
            };
            let ds = synth_generate(s)?;
            let path = out.join("dataset.csv");
            write_csv(&ds, &path, &cfg.snapshot_comments())?;
            files.push(path);
            return Ok(RunOutcome {
                files,
                ..RunOutcome::default()
            });
        }
        Command::Train => train_and_eval(cfg, repeats, false, &out)?,
        Command::Eval => train_and_eval(cfg, repeats, true, &out)?,
        Command::Transfer => transfer(cfg, repeats, &out)?,
        Command::Sweep => sweep(cfg, repeats, &out)?,
    };
    if !outcome.reports.is_empty() && command != Command::Sweep {
        let summary = summarize(cfg, command, &outcome.reports);
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_file(&out.join("summary.json"), &text, &mut files)?;
        outcome.summary = Some(summary);
    }
    files.append(&mut outcome.files);
    outcome.files = files;
    Ok(outcome)
}
