//! The six pipeline stages. Each stage writes the resolved configuration
//! and a manifest naming its outputs; later stages locate their inputs
//! only through those manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ecg_robust::attacks::{build_attacked_dataset, AttackManifest};
use ecg_robust::data::{
    class_counts, load_csv, make_folds, prepare as prepare_split, save_csv, split_dataset, synth_corpus, AttackTag,
    BeatRecord,
};
use ecg_robust::models::{Discriminator, Generator, Network};
use ecg_robust::train::{
    classification_csv, clean_references, cross_validate, cross_validate_undefended, evaluate_classifier,
    evaluate_detector, evaluate_generator, pretrain_undefended, reference_indices, similarity_csv, train_gan,
    GanOutcome, MetricsReport, Paired,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{PipelineConfig, RESOLVED_CONFIG};
use crate::error::CliError;
use crate::plot::overlay_svg;

pub const PREPARE: &str = "prepare";
pub const PRETRAIN: &str = "pretrain";
pub const ATTACK: &str = "attack";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";
pub const PLOT: &str = "plot";

pub const PLOT_DIR: &str = "plots";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    /// Role to file name, relative to the output directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub details: serde_json::Value,
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(format!("{stage}.manifest.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Loads an earlier stage's manifest; `what` names the artifact the caller
/// is after in the error.
pub fn read_manifest(out: &Path, stage: &str, what: &str) -> Result<StageManifest, CliError> {
    let p = manifest_path(out, stage);
    if !p.is_file() {
        return Err(CliError::Missing(format!(
            "missing {what}: {} not found; run `{stage}` first",
            p.display()
        )));
    }
    let text = std::fs::read_to_string(&p)?;
    Ok(serde_json::from_str(&text)?)
}

fn artifact(out: &Path, m: &StageManifest, role: &str, what: &str) -> Result<PathBuf, CliError> {
    let name = m
        .outputs
        .get(role)
        .ok_or_else(|| CliError::Missing(format!("missing {what}: `{}` declares no {role}", m.stage)))?;
    let p = out.join(name);
    if !p.is_file() {
        return Err(CliError::Missing(format!("missing {what}: {}", p.display())));
    }
    Ok(p)
}

struct Stage<'a> {
    cfg: &'a PipelineConfig,
    name: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl<'a> Stage<'a> {
    fn begin(cfg: &'a PipelineConfig, name: &'static str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out)?;
        std::fs::write(cfg.out.join(RESOLVED_CONFIG), cfg.to_toml())?;
        Ok(Stage {
            cfg,
            name,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) {
        let name = path
            .strip_prefix(&self.cfg.out)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.inputs.insert(role.into(), name);
    }

    fn output(&mut self, role: &str, name: &str) -> PathBuf {
        self.outputs.insert(role.into(), name.into());
        self.cfg.out.join(name)
    }

    fn finish(self, details: serde_json::Value) -> Result<StageManifest, CliError> {
        let m = StageManifest {
            stage: self.name.into(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            details,
        };
        write_json(&manifest_path(&self.cfg.out, self.name), &m)?;
        eprintln!("[{}] done in {:.1?}", self.name, self.started.elapsed());
        Ok(m)
    }
}

fn load_records(cfg: &PipelineConfig, path: &Path) -> Result<Vec<BeatRecord>, CliError> {
    let rs = load_csv(path, cfg.dataset.scheme)?;
    if let Some(r) = rs.iter().find(|r| r.samples.len() != cfg.dataset.width) {
        return Err(CliError::Invariant(format!(
            "{} has {} samples, configured width is {}",
            r.source_id,
            r.samples.len(),
            cfg.dataset.width
        )));
    }
    Ok(rs)
}

pub fn prepare(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, PREPARE)?;
    let corpus = if cfg.is_synthetic() {
        synth_corpus(&cfg.synth_config(), cfg.seed)?
    } else {
        let p = PathBuf::from(&cfg.dataset.source);
        st.input("dataset", &p);
        let rs = load_records(cfg, &p)?;
        if rs.iter().any(|r| r.attack != AttackTag::Clean) {
            return Err(CliError::Invariant("source dataset contains attacked records".into()));
        }
        rs
    };
    let classes = cfg.classes();
    let p = prepare_split(&corpus, classes, &cfg.prepare_config(), cfg.seed)?;
    save_csv(&p.split.train, &st.output("train", "train.csv"), cfg.dataset.scheme)?;
    save_csv(&p.split.test, &st.output("test", "test.csv"), cfg.dataset.scheme)?;
    let train_counts = class_counts(&p.split.train, classes);
    let test_counts = class_counts(&p.split.test, classes);
    eprintln!("[prepare] train {train_counts:?}, test {test_counts:?}");
    st.finish(json!({
        "source": cfg.dataset.source,
        "classes": cfg.dataset.scheme.names(),
        "corpus_counts": class_counts(&corpus, classes),
        "train_counts": train_counts,
        "test_counts": test_counts,
        "train_counts_before_smote": p.train_counts_before_smote,
        "smote_added": p.smote_added,
    }))
}

pub fn pretrain(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, PRETRAIN)?;
    let prep = read_manifest(&cfg.out, PREPARE, "prepared data")?;
    let train_path = artifact(&cfg.out, &prep, "train", "prepared data")?;
    st.input("train", &train_path);
    let train = load_records(cfg, &train_path)?;
    let pc = cfg.pretrain_config();
    let (model, details) = if cfg.pretrain.folds >= 2 {
        let cv = cross_validate_undefended(&train, &pc, cfg.pretrain.folds)?;
        eprintln!("[pretrain] fold scores {:?}, best fold {}", cv.scores, cv.best_fold);
        let d = json!({ "folds": cfg.pretrain.folds, "fold_scores": cv.scores, "best_fold": cv.best_fold });
        (cv.best, d)
    } else {
        let out = pretrain_undefended(&train, &pc)?;
        let best = &out.history[out.best_epoch];
        eprintln!(
            "[pretrain] best epoch {} validation accuracy {:.4}",
            out.best_epoch, best.validation_accuracy
        );
        let d = json!({ "best_epoch": out.best_epoch, "history": out.history });
        (out.model, d)
    };
    model.save(&st.output("checkpoint", "undefended.ckpt.json"))?;
    st.finish(details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub seed: u64,
    pub train: AttackManifest,
    pub test: AttackManifest,
}

pub fn attack(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, ATTACK)?;
    let pm = read_manifest(&cfg.out, PRETRAIN, "checkpoint")?;
    let ck = artifact(&cfg.out, &pm, "checkpoint", "checkpoint")?;
    st.input("checkpoint", &ck);
    let model = Discriminator::load(&ck)?;
    let prep = read_manifest(&cfg.out, PREPARE, "prepared data")?;
    let train_path = artifact(&cfg.out, &prep, "train", "prepared data")?;
    let test_path = artifact(&cfg.out, &prep, "test", "prepared data")?;
    st.input("train", &train_path);
    st.input("test", &test_path);
    let configs = cfg.attack_configs();
    let mut report = AttackReport {
        seed: cfg.seed,
        train: AttackManifest { clean_records: 0, kinds: Vec::new() },
        test: AttackManifest { clean_records: 0, kinds: Vec::new() },
    };
    for (role, src, dst) in [("train", &train_path, "train_attacked.csv"), ("test", &test_path, "test_attacked.csv")] {
        let clean = load_records(cfg, src)?;
        let (mixed, manifest) = build_attacked_dataset(&model, &clean, &configs)?;
        save_csv(&mixed, &st.output(&format!("{role}_attacked"), dst), cfg.dataset.scheme)?;
        for k in &manifest.kinds {
            eprintln!(
                "[attack] {role} {}: success {:.3}, mean linf {:.4}, failures {}",
                k.kind, k.success_rate, k.mean_linf, k.failures
            );
        }
        if role == "train" {
            report.train = manifest;
        } else {
            report.test = manifest;
        }
    }
    write_json(&st.output("attack_manifest", "attack_manifest.json"), &report)?;
    let kinds: Vec<String> = configs.iter().map(|c| c.kind.to_string()).collect();
    st.finish(json!({ "kinds": kinds }))
}

/// Records whose clean source passes `keep`, with their clean references.
fn subset<'r>(
    records: &'r [BeatRecord],
    refs: &[usize],
    keep: impl Fn(usize) -> bool,
) -> (Vec<BeatRecord>, Vec<&'r [f64]>) {
    let mut rs = Vec::new();
    let mut rf = Vec::new();
    for (r, &c) in records.iter().zip(refs) {
        if keep(c) {
            rs.push(r.clone());
            rf.push(records[c].samples.as_slice());
        }
    }
    (rs, rf)
}

fn class_accuracy(d: &Discriminator, records: &[BeatRecord]) -> ecg_robust::Result<f64> {
    let pred = d.predict(&ecg_robust::data::samples_of(records))?;
    let hits = pred.iter().zip(records).filter(|(p, r)| **p == r.label).count();
    Ok(hits as f64 / records.len().max(1) as f64)
}

pub fn train(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, TRAIN)?;
    let am = read_manifest(&cfg.out, ATTACK, "attacked data")?;
    let data_path = artifact(&cfg.out, &am, "train_attacked", "attacked data")?;
    st.input("train_attacked", &data_path);
    let records = load_records(cfg, &data_path)?;
    let init = if cfg.train.init_from_pretrained {
        let pm = read_manifest(&cfg.out, PRETRAIN, "checkpoint")?;
        let ck = artifact(&cfg.out, &pm, "checkpoint", "checkpoint")?;
        st.input("init", &ck);
        Some(Discriminator::load(&ck)?)
    } else {
        None
    };
    let refs = reference_indices(&records)?;
    let clean: Vec<BeatRecord> = records.iter().filter(|r| r.attack == AttackTag::Clean).cloned().collect();
    let tc = cfg.train_config();

    let run = |train_keep: &dyn Fn(usize) -> bool,
               val_keep: Option<&dyn Fn(usize) -> bool>|
     -> ecg_robust::Result<GanOutcome> {
        let (tr, tr_refs) = subset(&records, &refs, train_keep);
        let val = val_keep.map(|k| subset(&records, &refs, k));
        let val_paired = val.as_ref().map(|(r, f)| Paired { records: r, references: f });
        train_gan(Paired { records: &tr, references: &tr_refs }, val_paired, &tc, init.as_ref())
    };

    let (outcome, cv_details) = if cfg.train.cross_validate {
        let k = cfg.train.folds;
        let clean_folds = make_folds(&clean, k, cfg.seed)?;
        let item_folds: Vec<usize> = refs.iter().map(|&c| clean_folds[c]).collect();
        let cv = cross_validate(
            &item_folds,
            k,
            |f, _| run(&|c| clean_folds[c] != f, Some(&|c| clean_folds[c] == f)),
            |out: &GanOutcome, held| {
                let rs: Vec<BeatRecord> = held.iter().map(|&i| records[i].clone()).collect();
                class_accuracy(&out.discriminator, &rs)
            },
        )?;
        eprintln!("[train] fold scores {:?}, best fold {}", cv.scores, cv.best_fold);
        (cv.best, json!({ "folds": k, "fold_scores": cv.scores, "best_fold": cv.best_fold }))
    } else if cfg.train.validation_fraction > 0.0 {
        let split = split_dataset(&clean, 1.0 - cfg.train.validation_fraction, cfg.seed ^ 0x7a11_d001)?;
        let held: BTreeSet<&str> = split.test.iter().map(|r| r.source_id.as_str()).collect();
        let is_held: Vec<bool> = records
            .iter()
            .map(|r| r.attack == AttackTag::Clean && held.contains(r.source_id.as_str()))
            .collect();
        (run(&|c| !is_held[c], Some(&|c| is_held[c]))?, serde_json::Value::Null)
    } else {
        (run(&|_| true, None)?, serde_json::Value::Null)
    };

    for e in &outcome.epochs {
        match &e.validation {
            Some(v) => eprintln!(
                "[train] epoch {} mse {:.5} | val class {:.4} attack {:.4} mse {:.5}",
                e.epoch, e.train.mse, v.class_accuracy, v.attack_accuracy, v.generator_mse
            ),
            None => eprintln!("[train] epoch {} mse {:.5}", e.epoch, e.train.mse),
        }
    }
    outcome.generator.save(&st.output("generator", "generator.ckpt.json"))?;
    outcome.discriminator.save(&st.output("discriminator", "discriminator.ckpt.json"))?;
    let mut lines = String::new();
    for e in &outcome.log {
        lines.push_str(&e.to_json_line());
        lines.push('\n');
    }
    std::fs::write(st.output("losses", "losses.jsonl"), lines)?;
    st.finish(json!({ "epochs": outcome.epochs, "cross_validation": cv_details }))
}

pub fn eval(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, EVAL)?;
    let tm = read_manifest(&cfg.out, TRAIN, "checkpoint")?;
    let g_path = artifact(&cfg.out, &tm, "generator", "checkpoint")?;
    let d_path = artifact(&cfg.out, &tm, "discriminator", "checkpoint")?;
    let pm = read_manifest(&cfg.out, PRETRAIN, "checkpoint")?;
    let u_path = artifact(&cfg.out, &pm, "checkpoint", "checkpoint")?;
    let am = read_manifest(&cfg.out, ATTACK, "attacked data")?;
    let test_path = artifact(&cfg.out, &am, "test_attacked", "attacked data")?;
    for (role, p) in [("generator", &g_path), ("discriminator", &d_path), ("undefended", &u_path), ("test_attacked", &test_path)] {
        st.input(role, p);
    }
    let generator = Generator::load(&g_path)?;
    let defended = Discriminator::load(&d_path)?;
    let undefended = Discriminator::load(&u_path)?;
    let test = load_records(cfg, &test_path)?;

    let requested: BTreeSet<String> = am.details["kinds"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let present: BTreeSet<String> = test
        .iter()
        .filter(|r| r.attack.is_attacked())
        .map(|r| r.attack.as_str().to_string())
        .collect();
    if present != requested {
        return Err(CliError::Invariant(format!(
            "test set holds attacks {present:?}, attack manifest declares {requested:?}"
        )));
    }

    let names = cfg.dataset.scheme.names();
    let class_names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let und = MetricsReport::new("undefended", names, evaluate_classifier(&undefended, &test)?);
    let mut def = MetricsReport::new("defended", names, evaluate_classifier(&defended, &test)?);
    def.detection = Some(evaluate_detector(&defended, &test)?);
    let refs = clean_references(&test)?;
    def.similarity = evaluate_generator(&generator, &test, &refs, cfg.seed)?;

    und.save_json(&st.output("metrics_undefended", "metrics_undefended.json"))?;
    def.save_json(&st.output("metrics_defended", "metrics_defended.json"))?;
    std::fs::write(
        st.output("classification_undefended", "classification_undefended.csv"),
        classification_csv(&und.classification, &class_names),
    )?;
    std::fs::write(
        st.output("classification_defended", "classification_defended.csv"),
        classification_csv(&def.classification, &class_names),
    )?;
    std::fs::write(st.output("similarity", "similarity.csv"), similarity_csv(&def.similarity))?;

    let mut rows = Vec::new();
    for (u, d) in und.classification.iter().zip(&def.classification) {
        eprintln!(
            "[eval] {:>5}: undefended {:.4} defended {:.4}",
            u.attack, u.metrics.accuracy, d.metrics.accuracy
        );
        rows.push(json!({ "attack": u.attack, "undefended": u.metrics.accuracy, "defended": d.metrics.accuracy }));
    }
    let detection = def.detection.as_ref().map(|m| m.accuracy);
    eprintln!("[eval] attack detection accuracy {:.4}", detection.unwrap_or(f64::NAN));
    st.finish(json!({ "accuracy": rows, "detection_accuracy": detection }))
}

/// Paths for the plot stage; unset paths come from earlier manifests.
#[derive(Clone, Debug, Default)]
pub struct PlotInputs {
    pub clean: Option<PathBuf>,
    pub attacked: Option<PathBuf>,
    /// Which record of each kind to draw.
    pub index: usize,
}

pub fn plot(cfg: &PipelineConfig, inputs: &PlotInputs) -> Result<StageManifest, CliError> {
    let mut st = Stage::begin(cfg, PLOT)?;
    let clean_path = match &inputs.clean {
        Some(p) => p.clone(),
        None => artifact(&cfg.out, &read_manifest(&cfg.out, PREPARE, "prepared data")?, "test", "prepared data")?,
    };
    let attacked_path = match &inputs.attacked {
        Some(p) => p.clone(),
        None => artifact(
            &cfg.out,
            &read_manifest(&cfg.out, ATTACK, "attacked data")?,
            "test_attacked",
            "attacked data",
        )?,
    };
    for p in [&clean_path, &attacked_path] {
        if !p.is_file() {
            return Err(CliError::Missing(format!("missing artifact: {}", p.display())));
        }
    }
    st.input("clean", &clean_path);
    st.input("attacked", &attacked_path);
    let clean: Vec<BeatRecord> = load_records(cfg, &clean_path)?
        .into_iter()
        .filter(|r| r.attack == AttackTag::Clean)
        .collect();
    let attacked = load_records(cfg, &attacked_path)?;
    let base = clean
        .get(inputs.index)
        .ok_or_else(|| CliError::Invariant(format!("no clean record {}", inputs.index)))?;
    std::fs::create_dir_all(cfg.out.join(PLOT_DIR))?;
    let mut drawn = Vec::new();
    for tag in AttackTag::ALL.into_iter().filter(|t| t.is_attacked()) {
        let Some(r) = attacked.iter().filter(|r| r.attack == tag).nth(inputs.index) else {
            continue;
        };
        if r.label != base.label {
            return Err(CliError::Invariant(format!(
                "{tag} record {} has label {}, clean record has {}",
                inputs.index, r.label, base.label
            )));
        }
        let title = format!(
            "{} record {} ({}): clean vs {}",
            tag,
            inputs.index,
            cfg.dataset.scheme.name(base.label),
            tag
        );
        let name = format!("{PLOT_DIR}/{}.svg", tag.as_str());
        std::fs::write(st.output(tag.as_str(), &name), overlay_svg(&title, &base.samples, &r.samples, tag.as_str()))?;
        drawn.push(tag.as_str());
    }
    eprintln!("[plot] wrote {} overlays", drawn.len());
    st.finish(json!({ "index": inputs.index, "kinds": drawn }))
}

/// All stages in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<StageManifest>, CliError> {
    Ok(vec![
        prepare(cfg)?,
        pretrain(cfg)?,
        attack(cfg)?,
        train(cfg)?,
        eval(cfg)?,
        plot(cfg, &PlotInputs::default())?,
    ])
}
