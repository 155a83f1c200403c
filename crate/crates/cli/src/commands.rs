//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nucleonet::data::labels::{class_keys, ATTRIBUTE_KEYS, N_SHAPES};
use nucleonet::data::{extract_features, gen_synthetic, load_feature_file, load_manifest, DatasetManifest, FeatureMatrix};
use nucleonet::evaluation::{evaluate, summarize, write_report, write_roc_curves, EvaluationReport};
use nucleonet::gradcheck::suite::{run_checks, Group};
use nucleonet::gradcheck::TOLERANCE;
use nucleonet::model::{
    combine_predictions, Checkpoint, ModelKind, ParamStore, PredictionVector, TrainingMeta, TwoCycleModel, Variant,
};
use nucleonet::parallel::Executor;
use nucleonet::seed::{derive_seed, stream};
use nucleonet::training::{
    predict_indices, pretrain_round, split_dataset, train_variant_round, Dataset, EpochRecord, Precision,
};
use nucleonet::{Error, Real, Result};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Selection};

pub const ROUNDS_FILE: &str = "rounds.json";

fn io<E: Into<std::io::Error>>(path: &Path) -> impl FnOnce(E) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

/// Output directory of a subcommand, created and holding the resolved
/// config before any other output is written.
pub fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let out = RunConfig::require(&cfg.out_dir, "out_dir", command)?.clone();
    cfg.validate()?;
    mkdir(&out)?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

fn manifest(cfg: &RunConfig, command: &str) -> Result<DatasetManifest> {
    let path = RunConfig::require(&cfg.manifest, "manifest", command)?;
    let mut m = load_manifest(path)?;
    if let Some(root) = &cfg.image_root {
        m.root = root.clone();
    }
    Ok(m)
}

fn features(cfg: &RunConfig, m: &DatasetManifest, needed: bool) -> Result<Option<FeatureMatrix>> {
    if !needed {
        return Ok(None);
    }
    match &cfg.features {
        Some(p) => load_feature_file(p).map(Some),
        None => {
            log::info!("computing {}-dimensional stand-in features for {} images", cfg.feature_dim, m.len());
            extract_features(m, cfg.feature_dim).map(Some)
        }
    }
}

fn load_dataset<T: Real>(cfg: &RunConfig, command: &str, variants: &[Variant]) -> Result<Dataset<T>> {
    let m = manifest(cfg, command)?;
    let f = features(cfg, &m, variants.iter().any(|v| v.injects_features()))?;
    Dataset::load(&m, cfg.experiment.crop, f)
}

struct TsvLog {
    path: PathBuf,
    w: BufWriter<File>,
}

impl TsvLog {
    fn create(path: PathBuf) -> Result<Self> {
        if let Some(dir) = path.parent() {
            mkdir(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
        writeln!(w, "{}", EpochRecord::HEADER).map_err(io(&path))?;
        Ok(TsvLog { path, w })
    }

    fn record(&mut self, tag: &str, r: &EpochRecord) -> Result<()> {
        log::info!("{tag}: epoch {} cycle {} loss {:.6}", r.epoch, r.cycle, r.train_loss);
        writeln!(self.w, "{}", r.to_line()).map_err(io(&self.path))?;
        self.w.flush().map_err(io(&self.path))
    }
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg, "gen-synth")?;
    let m = gen_synthetic(&cfg.synth.params(), &out)?;
    println!("wrote {} images and manifest.csv to {}", m.len(), out.display());
    Ok(())
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg, "extract-features")?;
    let m = manifest(cfg, "extract-features")?;
    let f = extract_features(&m, cfg.feature_dim)?;
    let path = out.join("features.nfv");
    f.save(&path)?;
    println!("wrote {} rows of dimension {} to {}", f.count(), f.dim, path.display());
    Ok(())
}

fn cae_variant(sel: Selection) -> Variant {
    match sel {
        Selection::Default => Variant::Default,
        _ => Variant::W,
    }
}

fn cae_meta(cfg: &RunConfig, round: usize) -> TrainingMeta {
    TrainingMeta {
        epoch: cfg.experiment.cae_epochs as u32,
        cycle: 0,
        rng_state: derive_seed(cfg.experiment.seed, &[stream::CAE_INIT, round as u64]),
    }
}

/// Pretrains one autoencoder on every manifest image.
pub fn pretrain_cae(cfg: &RunConfig) -> Result<()> {
    match cfg.experiment.precision {
        Precision::F32 => pretrain_cae_t::<f32>(cfg),
        Precision::F64 => pretrain_cae_t::<f64>(cfg),
    }
}

fn pretrain_cae_t<T: Real>(cfg: &RunConfig) -> Result<()> {
    let sel = *RunConfig::require(&cfg.variant, "variant", "pretrain-cae")?;
    let out = prepare_out(cfg, "pretrain-cae")?;
    let data = load_dataset::<T>(cfg, "pretrain-cae", &[])?;
    let exec = Executor::from_env()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut log = TsvLog::create(out.join("logs").join("cae.tsv"))?;
    let cae = pretrain_round(cae_variant(sel), &data, &all, &cfg.experiment, 0, &exec, &mut |r| {
        log.record("autoencoder", r)
    })?;
    let mut ck = Checkpoint::new(ModelKind::Cae, cae.spec().clone(), cae_meta(cfg, 0));
    ck.add_params("", cae.params());
    let path = out.join("cae.nnck");
    ck.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn checkpoint_path(dir: &Path, variant: Variant, round: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("{variant}_round{round}.nnck"))
}

fn write_predictions(path: &Path, names: &[String], preds: &[PredictionVector]) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    let mut header = vec!["path".to_string()];
    header.extend(ATTRIBUTE_KEYS.iter().map(|k| k.to_string()));
    header.extend(class_keys()[ATTRIBUTE_KEYS.len()..].iter().map(|k| format!("shape_{k}")));
    header.push("shape_no_nucleus".into());
    debug_assert_eq!(header.len(), 1 + ATTRIBUTE_KEYS.len() + N_SHAPES);
    writeln!(w, "{}", header.join(",")).map_err(io(path))?;
    for (name, p) in names.iter().zip(preds) {
        let cols: Vec<String> = p.attributes.iter().chain(&p.shapes).map(|v| format!("{v:e}")).collect();
        writeln!(w, "{name},{}", cols.join(",")).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Per-round reports of one run, as stored in `rounds.json`.
#[derive(Serialize, Deserialize)]
pub struct RoundsFile {
    pub rounds: Vec<EvaluationReport>,
}

/// Evaluates one round's predictions, adding the combined column when
/// both WF and WFM are present, and writes ROC points.
fn evaluate_round(
    sel: Selection,
    round: usize,
    preds: &BTreeMap<Variant, Vec<PredictionVector>>,
    truths: &[nucleonet::data::LabelVector],
    out: &Path,
    exec: &Executor,
) -> Result<Vec<EvaluationReport>> {
    let mut columns: Vec<(String, Vec<PredictionVector>)> = sel
        .variants()
        .into_iter()
        .map(|v| (v.name().to_string(), preds[&v].clone()))
        .collect();
    if sel == Selection::Combo {
        let combined = preds[&Variant::Wf]
            .iter()
            .zip(&preds[&Variant::Wfm])
            .map(|(a, b)| combine_predictions(a, b))
            .collect::<Result<Vec<_>>>()?;
        columns.push((Selection::Combo.name().to_string(), combined));
    }
    let mut reports = Vec::new();
    for (name, p) in &columns {
        let (report, curves) = evaluate(name, round, p, truths, exec)?;
        write_roc_curves(&out.join("roc"), name, round, &curves)?;
        log::info!(
            "{name} round {round}: mean AuROC {:.4} (shapes {:.4}, attributes {:.4})",
            report.mean_auroc,
            report.mean_shape_auroc,
            report.mean_attribute_auroc
        );
        reports.push(report);
    }
    Ok(reports)
}

/// Writes `rounds.json` and the averaged report for the given rounds.
pub fn finish_report(out: &Path, rounds: Vec<EvaluationReport>) -> Result<()> {
    let mut order: Vec<String> = Vec::new();
    for r in &rounds {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
    }
    let summaries = order
        .iter()
        .map(|v| {
            let mine: Vec<EvaluationReport> = rounds.iter().filter(|r| &r.variant == v).cloned().collect();
            summarize(&mine)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out.join(ROUNDS_FILE);
    let text = serde_json::to_string_pretty(&RoundsFile { rounds: rounds.clone() }).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io(&path))?;
    write_report(out, &summaries, &rounds)?;
    for s in &summaries {
        println!(
            "{}: mean AuROC {:.4}, shapes {:.4}, attributes {:.4}, attr error {:.4}, shape error {:.4}",
            s.variant, s.mean_auroc, s.mean_shape_auroc, s.mean_attribute_auroc, s.attr_error, s.shape_error
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    match cfg.experiment.precision {
        Precision::F32 => train_t::<f32>(cfg),
        Precision::F64 => train_t::<f64>(cfg),
    }
}

fn train_t<T: Real>(cfg: &RunConfig) -> Result<()> {
    let sel = *RunConfig::require(&cfg.variant, "variant", "train")?;
    let out = prepare_out(cfg, "train")?;
    let exp = &cfg.experiment;
    let variants = sel.variants();
    let data = load_dataset::<T>(cfg, "train", &variants)?;
    let names = manifest(cfg, "train")?.records.into_iter().map(|r| r.path).collect::<Vec<_>>();
    let exec = Executor::from_env()?;
    let given_cae = match &cfg.cae_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.kind != ModelKind::Cae {
                return Err(Error::Config(format!("{} is not an autoencoder checkpoint", p.display())));
            }
            Some(ck.params::<T>(""))
        }
        None => None,
    };
    let mut all_reports = Vec::new();
    for round in 0..exp.rounds {
        let (train, test) = split_dataset(data.len(), exp.seed, exp.split_fraction, round)?;
        log::info!("round {round}: {} training and {} test images", train.len(), test.len());
        // Autoencoders depend only on whether the loss is center-weighted.
        let mut caes: BTreeMap<bool, ParamStore<T>> = BTreeMap::new();
        let mut preds = BTreeMap::new();
        for &v in &variants {
            let init = match (&given_cae, exp.pretrain_cae) {
                (Some(p), _) => Some(p.clone()),
                (None, false) => None,
                (None, true) => {
                    let key = v.center_weighted();
                    if !caes.contains_key(&key) {
                        let tag = if key { "cae_weighted" } else { "cae_plain" };
                        let mut log = TsvLog::create(out.join("logs").join(format!("{tag}_round{round}.tsv")))?;
                        let cae = pretrain_round(v, &data, &train, exp, round, &exec, &mut |r| log.record(tag, r))?;
                        let mut ck = Checkpoint::new(ModelKind::Cae, cae.spec().clone(), cae_meta(cfg, round));
                        ck.add_params("", cae.params());
                        let dir = out.join("checkpoints");
                        mkdir(&dir)?;
                        ck.save(&dir.join(format!("{tag}_round{round}.nnck")))?;
                        caes.insert(key, cae.params().clone());
                    }
                    Some(caes[&key].clone())
                }
            };
            let mut log = TsvLog::create(out.join("logs").join(format!("{v}_round{round}.tsv")))?;
            let tag = v.name();
            let (model, _) =
                train_variant_round(v, &data, &train, init.as_ref(), exp, round, &exec, &mut |r| log.record(tag, r))?;
            let meta = TrainingMeta {
                epoch: (2 * exp.cycle_epochs) as u32,
                cycle: 2,
                rng_state: derive_seed(exp.seed, &[stream::CNN_INIT, round as u64]),
            };
            let path = checkpoint_path(&out, v, round);
            mkdir(path.parent().expect("checkpoint path has a parent"))?;
            model.to_checkpoint(meta).save(&path)?;
            let p = predict_indices(&model, &data, &test, &exec)?;
            let test_names: Vec<String> = test.iter().map(|&i| names[i].clone()).collect();
            write_predictions(&out.join("predictions").join(format!("{v}_round{round}.csv")), &test_names, &p)?;
            preds.insert(v, p);
        }
        let truths: Vec<_> = test.iter().map(|&i| data.labels[i]).collect();
        all_reports.extend(evaluate_round(sel, round, &preds, &truths, &out, &exec)?);
    }
    finish_report(&out, all_reports)
}

/// Re-evaluates the checkpoints of an earlier `train` run on the same
/// splits.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    match cfg.experiment.precision {
        Precision::F32 => eval_t::<f32>(cfg),
        Precision::F64 => eval_t::<f64>(cfg),
    }
}

fn eval_t<T: Real>(cfg: &RunConfig) -> Result<()> {
    let sel = *RunConfig::require(&cfg.variant, "variant", "eval")?;
    let source = RunConfig::require(&cfg.checkpoints, "checkpoints", "eval")?.clone();
    let out = prepare_out(cfg, "eval")?;
    let exp = &cfg.experiment;
    let variants = sel.variants();
    let data = load_dataset::<T>(cfg, "eval", &variants)?;
    let exec = Executor::from_env()?;
    let mut all_reports = Vec::new();
    for round in 0..exp.rounds {
        let (_, test) = split_dataset(data.len(), exp.seed, exp.split_fraction, round)?;
        let mut preds = BTreeMap::new();
        for &v in &variants {
            let ck = Checkpoint::load(&checkpoint_path(&source, v, round))?;
            if ck.spec.variant != v {
                return Err(Error::Data(format!(
                    "checkpoint for {v} round {round} holds variant {}",
                    ck.spec.variant
                )));
            }
            let model = TwoCycleModel::<T>::from_checkpoint(&ck)?;
            preds.insert(v, predict_indices(&model, &data, &test, &exec)?);
        }
        let truths: Vec<_> = test.iter().map(|&i| data.labels[i]).collect();
        all_reports.extend(evaluate_round(sel, round, &preds, &truths, &out, &exec)?);
    }
    finish_report(&out, all_reports)
}

/// Scores every manifest image with one checkpoint, or with a WF and a WFM
/// checkpoint combined.
pub fn predict(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    match cfg.experiment.precision {
        Precision::F32 => predict_t::<f32>(cfg, checkpoints),
        Precision::F64 => predict_t::<f64>(cfg, checkpoints),
    }
}

fn predict_t<T: Real>(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    let out = prepare_out(cfg, "predict")?;
    let models = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p).and_then(|ck| TwoCycleModel::<T>::from_checkpoint(&ck)))
        .collect::<Result<Vec<_>>>()?;
    let variants: Vec<Variant> = models.iter().map(|m| m.spec().variant).collect();
    let combo = match variants.as_slice() {
        [_] => false,
        [Variant::Wf, Variant::Wfm] => true,
        _ => {
            return Err(Error::Config(
                "predict takes one checkpoint, or a WF checkpoint followed by a WFM checkpoint".into(),
            ))
        }
    };
    let m = manifest(cfg, "predict")?;
    let f = features(cfg, &m, variants.iter().any(|v| v.injects_features()))?;
    let data = Dataset::<T>::load(&m, cfg.experiment.crop, f)?;
    let exec = Executor::from_env()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut per_model = models
        .iter()
        .map(|model| predict_indices(model, &data, &all, &exec))
        .collect::<Result<Vec<_>>>()?;
    let preds = if combo {
        per_model[0]
            .iter()
            .zip(&per_model[1])
            .map(|(a, b)| combine_predictions(a, b))
            .collect::<Result<Vec<_>>>()?
    } else {
        per_model.remove(0)
    };
    let names: Vec<String> = m.records.into_iter().map(|r| r.path).collect();
    let path = out.join("predictions.csv");
    write_predictions(&path, &names, &preds)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Merges the per-round results of several runs into one report.
pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let out = prepare_out(cfg, "report")?;
    let mut rounds = Vec::new();
    for dir in inputs {
        let path = dir.join(ROUNDS_FILE);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let file: RoundsFile =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        rounds.extend(file.rounds);
    }
    finish_report(&out, rounds)
}

/// Runs the selected gradient checks, printing one line per check.
/// Returns whether every check passed.
pub fn gradcheck(groups: &[Group], seed: u64) -> Result<bool> {
    let results = run_checks(groups, seed)?;
    let mut ok = true;
    for (name, r) in &results {
        let pass = r.passed(TOLERANCE);
        ok &= pass;
        println!("{name:<28} max_rel_err {:.3e}  {}", r.max_relative_error, if pass { "ok" } else { "FAIL" });
    }
    println!("{} checks, tolerance {TOLERANCE:e}: {}", results.len(), if ok { "all passed" } else { "FAILED" });
    Ok(ok)
}
