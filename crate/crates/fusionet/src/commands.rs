//! The subcommands. Each one writes a `run.json` before starting and
//! finalises it once every declared output exists.

use std::ops::ControlFlow;
use std::path::Path;

use fusionet_core::data::{MemeSample, Split, Vocabulary};
use fusionet_core::metrics::{aggregate_seeds, recovery_ratio, EvalReport, TransferScores};
use fusionet_core::training::{self, EpochRecord, TrainOutcome};
use fusionet_core::{FusionKind, Model};
use serde_json::json;

use crate::checkpoint::{BestRecord, Checkpoint};
use crate::cli::{AblateArgs, CrossdomainArgs, EvalArgs, ReportArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{self, load_manifest, Dataset};
use crate::reports::{
    display_path, read_json, write_json, write_jsonl, EpochLine, EvalReportJson, PredictionLine, RecoveryReportJson,
    RunManifest,
};
use crate::synth::write_synthetic;
use crate::workers;

pub const CHECKPOINT: &str = "checkpoint.fnet";
pub const LOG: &str = "log.jsonl";
pub const TEST_REPORT: &str = "test_report.json";
pub const EVAL_REPORT: &str = "eval.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TABLE: &str = "ablation.md";
pub const RECOVERY: &str = "recovery.json";
pub const TARGET_REPORT: &str = "target_report.json";

pub fn synth(args: &SynthArgs) -> Result<()> {
    let [a, b] = args.triggers.as_slice() else {
        return Err(Error::Config("--triggers takes exactly two words".into()));
    };
    let config = json!({"n": args.n, "seed": args.seed, "triggers": [a, b]});
    let mut run = RunManifest::start("synth", config, vec![args.seed], &[], &args.out)?;
    let manifest = write_synthetic(&args.out, args.n, args.seed, [a, b])?;
    run.outputs = vec![manifest.file_name().unwrap().to_string_lossy().into(), "images".into()];
    run.finish(&args.out)?;
    eprintln!("wrote {} samples to {}", args.n, manifest.display());
    Ok(())
}

/// Model trained on `train`, selected on `validation`, with the vocabulary
/// it was trained with.
pub struct Fitted {
    pub outcome: TrainOutcome<f32>,
    pub vocab: Vocabulary,
}

impl Fitted {
    pub fn best_record(&self) -> BestRecord {
        let rec = self
            .outcome
            .log
            .iter()
            .find(|r| r.epoch == self.outcome.best_epoch)
            .expect("best epoch is logged");
        BestRecord {
            epoch: rec.epoch,
            val_accuracy: rec.val_accuracy,
            val_weighted_f1: rec.val_weighted_f1,
        }
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint::new(
            &self.outcome.best,
            self.vocab.tokens().to_vec(),
            cfg.label_map.clone(),
            self.best_record(),
        )
    }
}

pub fn fit(
    cfg: &RunConfig,
    kind: FusionKind,
    seed: u64,
    train_set: &[&MemeSample],
    validation: &[&MemeSample],
    tag: &str,
) -> Result<Fitted> {
    let vocab = manifest::vocabulary(train_set.iter().copied(), cfg.min_count);
    let train_ex = manifest::examples(train_set.iter().copied(), &vocab, cfg.seq_len);
    let val_ex = manifest::examples(validation.iter().copied(), &vocab, cfg.seq_len);
    let model_config = fusionet_core::ModelConfig {
        fusion: kind,
        ..cfg.model_config(vocab.len())
    };
    let model = Model::new(model_config, seed)?;
    let outcome = training::train(&cfg.train_config(seed), model, &train_ex, &val_ex, |rec, _| {
        eprintln!("{tag} {}", epoch_summary(rec));
        ControlFlow::Continue(())
    })?;
    Ok(Fitted { outcome, vocab })
}

fn epoch_summary(r: &EpochRecord) -> String {
    let loss = r.train_loss.map_or("-".into(), |l| format!("{l:.4}"));
    let acc = r.train_accuracy.map_or("-".into(), |a| format!("{a:.3}"));
    format!(
        "epoch {:>3}  loss {loss}  train_acc {acc}  val_acc {:.3}  val_wf1 {:.3}{}",
        r.epoch,
        r.val_accuracy,
        r.val_weighted_f1,
        if r.improved { "  *" } else { "" }
    )
}

/// Metrics and per-sample rows for `samples`.
pub fn evaluate(
    model: &Model<f32>,
    samples: &[&MemeSample],
    vocab: &Vocabulary,
) -> Result<(EvalReport, Vec<PredictionLine>)> {
    let ex = manifest::examples(samples.iter().copied(), vocab, model.config().dims.seq_len);
    let preds = training::evaluate(model, &ex)?;
    let report = EvalReport::from_predictions(&preds.labels, &preds.predicted, &preds.scores)?;
    let rows = samples
        .iter()
        .zip(&preds.predicted)
        .zip(&preds.scores)
        .map(|((s, &p), &score)| PredictionLine {
            id: s.id.clone(),
            score,
            predicted: p,
            truth: s.label,
        })
        .collect();
    Ok((report, rows))
}

fn warn_single_class(report: &EvalReport, what: &str) {
    if report.auc.is_none() {
        eprintln!("warning: {what} contains a single class; AUC reported as null");
    }
}

fn load(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let d = load_manifest(path, &cfg.label_map)?;
    eprintln!(
        "{}: {} samples (train {}, validation {}, test {})",
        path.display(),
        d.samples.len(),
        d.stats.split_size(Split::Train),
        d.stats.split_size(Split::Validation),
        d.stats.split_size(Split::Test)
    );
    Ok(d)
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serialises")
}

/// Saves checkpoint, log and (when the split is nonempty) the test report.
fn save_fitted(
    out: &Path,
    cfg: &RunConfig,
    fitted: &Fitted,
    test: &[&MemeSample],
) -> Result<(Vec<String>, Option<EvalReport>)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fitted.checkpoint(cfg).save(&out.join(CHECKPOINT))?;
    let log: Vec<EpochLine> = fitted.outcome.log.iter().map(Into::into).collect();
    write_jsonl(&out.join(LOG), &log)?;
    let mut outputs = vec![CHECKPOINT.to_string(), LOG.to_string()];
    let mut report = None;
    if !test.is_empty() {
        let (r, _) = evaluate(&fitted.outcome.best, test, &fitted.vocab)?;
        warn_single_class(&r, "test split");
        write_json(&out.join(TEST_REPORT), &EvalReportJson::from(&r))?;
        outputs.push(TEST_REPORT.into());
        report = Some(r);
    }
    Ok((outputs, report))
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub test_report: Option<EvalReport>,
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = RunConfig::resolve(
        args.flags.config.as_deref(),
        &args.flags.overrides(args.fusion.clone(), args.seed),
    )?;
    let mut run = RunManifest::start("train", config_json(&cfg), vec![cfg.seed], &[&args.data], &args.out)?;
    let data = load(&args.data, &cfg)?;
    let train_set: Vec<&MemeSample> = data.split(Split::Train).collect();
    let val: Vec<&MemeSample> = data.split(Split::Validation).collect();
    let test: Vec<&MemeSample> = data.split(Split::Test).collect();
    let fitted = fit(&cfg, cfg.fusion_kind()?, cfg.seed, &train_set, &val, "[train]")?;
    let (outputs, report) = save_fitted(&args.out, &cfg, &fitted, &test)?;
    run.outputs = outputs;
    run.details.insert("train_size".into(), json!(train_set.len()));
    run.details
        .insert("best_epoch".into(), json!(fitted.outcome.best_epoch));
    run.finish(&args.out)?;
    Ok(TrainSummary {
        best_epoch: fitted.outcome.best_epoch,
        test_report: report,
    })
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let split: Split = args.split.parse()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut model_config = ckpt.config.model_config()?;
    if let Some(kind) = &args.fusion {
        model_config.fusion = kind.parse()?;
    }
    let model = ckpt.model_as(model_config)?;
    let vocab = Vocabulary::from_tokens(ckpt.config.vocabulary.clone())?;
    let config = json!({"split": split.as_str(), "fusion": model_config.fusion.as_str()});
    let mut run = RunManifest::start("eval", config, vec![], &[&args.checkpoint, &args.data], &args.out)?;
    let data = load_manifest(&args.data, &ckpt.config.label_map)?;
    let samples: Vec<&MemeSample> = data.split(split).collect();
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "split `{split}` of {} is empty",
            args.data.display()
        )));
    }
    let (report, rows) = evaluate(&model, &samples, &vocab)?;
    warn_single_class(&report, &format!("split `{split}`"));
    write_json(&args.out.join(EVAL_REPORT), &EvalReportJson::from(&report))?;
    write_jsonl(&args.out.join(PREDICTIONS), &rows)?;
    run.outputs = vec![EVAL_REPORT.into(), PREDICTIONS.into()];
    run.details.insert("samples".into(), json!(samples.len()));
    run.finish(&args.out)?;
    eprintln!(
        "{split}: weighted F1 {:.4}, accuracy {:.4}",
        report.weighted_f1,
        report.accuracy()
    );
    Ok(report)
}

/// Mean (± std over seeds) report per fusion kind, in [`FusionKind::MULTIMODAL`] order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub kind: String,
    pub report: EvalReportJson,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub kinds: Vec<AblationRow>,
}

pub fn ablate(args: &AblateArgs) -> Result<AblationReport> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let cfg = RunConfig::resolve(
        args.flags.config.as_deref(),
        &args.flags.overrides(None, Some(args.seed)),
    )?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| args.seed + i).collect();
    let mut run = RunManifest::start("ablate", config_json(&cfg), seeds.clone(), &[&args.data], &args.out)?;
    let data = load(&args.data, &cfg)?;
    let train_set: Vec<&MemeSample> = data.split(Split::Train).collect();
    let val: Vec<&MemeSample> = data.split(Split::Validation).collect();
    let test: Vec<&MemeSample> = data.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Config(format!("{} has no test split", args.data.display())));
    }
    let jobs: Vec<(FusionKind, u64)> = FusionKind::MULTIMODAL
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let results = workers::map_ordered(&jobs, workers::thread_count(), |_, &(kind, seed)| -> Result<_> {
        let tag = format!("[{kind} seed {seed}]");
        let fitted = fit(&cfg, kind, seed, &train_set, &val, &tag)?;
        let rel = format!("{kind}/seed-{seed}");
        let (outputs, report) = save_fitted(&args.out.join(&rel), &cfg, &fitted, &test)?;
        let outputs: Vec<String> = outputs.into_iter().map(|o| format!("{rel}/{o}")).collect();
        Ok((outputs, report.expect("test split is nonempty")))
    });
    let mut by_kind: Vec<(FusionKind, Vec<EvalReport>)> = Vec::new();
    for ((kind, _), result) in jobs.iter().zip(results) {
        let (outputs, report) = result?;
        run.outputs.extend(outputs);
        match by_kind.last_mut() {
            Some((k, reports)) if k == kind => reports.push(report),
            _ => by_kind.push((*kind, vec![report])),
        }
    }
    let mut rows = Vec::new();
    for (kind, reports) in by_kind {
        let agg = if reports.len() >= 2 {
            aggregate_seeds(&reports)?
        } else {
            reports.into_iter().next().unwrap()
        };
        rows.push(AblationRow {
            kind: kind.as_str().into(),
            report: EvalReportJson::from(&agg),
        });
    }
    let report = AblationReport { seeds, kinds: rows };
    write_json(&args.out.join(ABLATION_JSON), &report)?;
    std::fs::write(args.out.join(ABLATION_TABLE), ablation_table(&report)).map_err(|e| Error::io(&args.out, e))?;
    run.outputs.push(ABLATION_JSON.into());
    run.outputs.push(ABLATION_TABLE.into());
    run.finish(&args.out)?;
    eprint!("{}", ablation_table(&report));
    Ok(report)
}

fn mean_std(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        (Some(m), None) => format!("{m:.3}"),
        _ => "n/a".into(),
    }
}

pub fn ablation_table(report: &AblationReport) -> String {
    let mut s = String::from("| fusion | WF | AUC | MR |\n|---|---|---|---|\n");
    for row in &report.kinds {
        let (r, sd) = (&row.report, row.report.std.as_ref());
        s.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            row.kind,
            mean_std(Some(r.weighted_f1), sd.map(|x| x.weighted_f1)),
            mean_std(r.auc, sd.and_then(|x| x.auc)),
            mean_std(Some(r.mr_combined), sd.map(|x| x.mr_combined)),
        ));
    }
    s
}

/// Name of a dataset in recovery reports: the manifest's directory for
/// `manifest.jsonl`, the file stem otherwise.
pub fn dataset_name(path: &Path) -> String {
    let canonical = std::fs::canonicalize(path).unwrap_or_else(|_| path.into());
    let stem = canonical
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if canonical.file_name().is_some_and(|f| f == crate::synth::MANIFEST_NAME) {
        if let Some(dir) = canonical.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

/// `F(T,T)` from a finished `train` run on the target manifest.
fn baseline_f1(dir: &Path, target: &Path) -> Result<f64> {
    let instruct = || {
        format!(
            "run `fusionet train --data {}` first and pass its output directory",
            target.display()
        )
    };
    let run = RunManifest::read(dir)
        .map_err(|_| Error::MissingBaseline(format!("{} is not a run directory; {}", dir.display(), instruct())))?;
    if run.command != "train" || run.status != "complete" {
        return Err(Error::MissingBaseline(format!(
            "{} is not a completed train run; {}",
            dir.display(),
            instruct()
        )));
    }
    if run.inputs.first() != Some(&display_path(target)) {
        return Err(Error::MissingBaseline(format!(
            "{} was trained on {}, not the target; {}",
            dir.display(),
            run.inputs.first().map_or("nothing", String::as_str),
            instruct()
        )));
    }
    let report: EvalReportJson = read_json(&dir.join(TEST_REPORT))
        .map_err(|_| Error::MissingBaseline(format!("{} has no {TEST_REPORT}; {}", dir.display(), instruct())))?;
    Ok(report.weighted_f1)
}

pub struct CrossdomainSummary {
    pub train_size: usize,
    pub recovery: RecoveryReportJson,
}

pub fn crossdomain(args: &CrossdomainArgs) -> Result<CrossdomainSummary> {
    let cfg = RunConfig::resolve(
        args.flags.config.as_deref(),
        &args.flags.overrides(args.fusion.clone(), args.seed),
    )?;
    let f_tt = baseline_f1(&args.baseline, &args.target)?;
    let mut run = RunManifest::start(
        "crossdomain",
        config_json(&cfg),
        vec![cfg.seed],
        &[&args.source, &args.target, &args.baseline],
        &args.out,
    )?;
    let source = load(&args.source, &cfg)?;
    let target = load(&args.target, &cfg)?;
    let same = display_path(&args.source) == display_path(&args.target);
    let mut train_set: Vec<&MemeSample> = source.split(Split::Train).collect();
    let mut val: Vec<&MemeSample> = source.split(Split::Validation).collect();
    if args.combined && !same {
        train_set.extend(target.split(Split::Train));
        val.extend(target.split(Split::Validation));
    }
    let test: Vec<&MemeSample> = target.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Config(format!("{} has no test split", args.target.display())));
    }
    let fitted = fit(&cfg, cfg.fusion_kind()?, cfg.seed, &train_set, &val, "[crossdomain]")?;
    let (report, _) = evaluate(&fitted.outcome.best, &test, &fitted.vocab)?;
    warn_single_class(&report, "target test split");

    let target_name = dataset_name(&args.target);
    let source_name = match (args.combined, same) {
        (_, true) => target_name.clone(),
        (true, false) => format!("{}+{}", dataset_name(&args.source), target_name),
        (false, false) => dataset_name(&args.source),
    };
    let recovery = recovery_ratio(&TransferScores {
        in_domain: vec![(target_name.clone(), f_tt)],
        transfers: vec![(source_name, target_name, report.weighted_f1)],
    })?;
    let recovery = RecoveryReportJson::from(&recovery);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    fitted.checkpoint(&cfg).save(&args.out.join(CHECKPOINT))?;
    let log: Vec<EpochLine> = fitted.outcome.log.iter().map(Into::into).collect();
    write_jsonl(&args.out.join(LOG), &log)?;
    write_json(&args.out.join(TARGET_REPORT), &EvalReportJson::from(&report))?;
    write_json(&args.out.join(RECOVERY), &recovery)?;
    run.outputs = vec![CHECKPOINT.into(), LOG.into(), TARGET_REPORT.into(), RECOVERY.into()];
    run.details.insert("train_size".into(), json!(train_set.len()));
    run.details.insert("combined".into(), json!(args.combined));
    run.finish(&args.out)?;
    if let Some(cell) = recovery.cells.last() {
        eprintln!(
            "R({}, {}) = {:.3} ({}%)",
            cell.source, cell.target, cell.ratio, cell.percent
        );
    }
    Ok(CrossdomainSummary {
        train_size: train_set.len(),
        recovery,
    })
}

/// Collects the primary report of each run directory into one table.
pub fn report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut table = String::from("| run | command | WF | AUC | MR |\n|---|---|---|---|---|\n");
    for dir in &args.runs {
        let run = RunManifest::read(dir)?;
        let primary = match run.command.as_str() {
            "train" => Some(TEST_REPORT),
            "eval" => Some(EVAL_REPORT),
            "crossdomain" => Some(TARGET_REPORT),
            _ => None,
        };
        let mut entry = json!({"run": display_path(dir), "command": run.command, "status": run.status});
        if let Some(name) = primary.filter(|n| dir.join(n).exists()) {
            let r: EvalReportJson = read_json(&dir.join(name))?;
            table.push_str(&format!(
                "| {} | {} | {:.3} | {} | {:.3} |\n",
                dir.display(),
                run.command,
                r.weighted_f1,
                r.auc.map_or("n/a".into(), |a| format!("{a:.3}")),
                r.mr_combined
            ));
            entry["report"] = serde_json::to_value(&r).expect("report serialises");
        }
        if run.command == "ablate" && dir.join(ABLATION_JSON).exists() {
            let a: AblationReport = read_json(&dir.join(ABLATION_JSON))?;
            for row in &a.kinds {
                table.push_str(&format!(
                    "| {} | ablate:{} | {:.3} | {} | {:.3} |\n",
                    dir.display(),
                    row.kind,
                    row.report.weighted_f1,
                    row.report.auc.map_or("n/a".into(), |x| format!("{x:.3}")),
                    row.report.mr_combined
                ));
            }
            entry["ablation"] = serde_json::to_value(&a).expect("report serialises");
        }
        if run.command == "crossdomain" && dir.join(RECOVERY).exists() {
            let r: RecoveryReportJson = read_json(&dir.join(RECOVERY))?;
            entry["recovery"] = serde_json::to_value(&r).expect("report serialises");
        }
        rows.push(entry);
    }
    print!("{table}");
    if let Some(out) = &args.out {
        write_json(out, &json!({"runs": rows}))?;
    }
    Ok(())
}
