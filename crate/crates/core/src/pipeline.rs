//! File-level steps of the end-to-end run: statistics, calibration, head
//! training and evaluation. Each step reads its inputs from disk and writes
//! fixed file names under the output directory, so running the steps one by
//! one gives the same files as a single `pipeline` run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    build_calibrated_set, check_paired_views, CalibratedSet, CalibrationConfig,
};
use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::format::{load_dataset, save_dataset};
use crate::head::{load_params, save_params, train, write_metrics_csv, TrainConfig};
use crate::stats::{compute_class_stats, partition_by_frequency, CovMode};
use crate::synth::{self, MixtureSpec};

pub const PARAMS_FILE: &str = "params.darch1";
pub const CALIBRATED_FILE: &str = "calibrated.darc1";
pub const PROVENANCE_FILE: &str = "calibrated.provenance.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARTITION_FILE: &str = "partition.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: PathBuf,
    pub train_aug: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Extra evaluation sets sharing the training class table (other sensors
    /// or modalities).
    #[serde(default)]
    pub cross: Vec<PathBuf>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub training: TrainConfig,
    /// Covariance store for the exported statistics.
    #[serde(default)]
    pub cov_mode: CovMode,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to the config
    /// file. Errors carry the JSON path of the offending field.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::config(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_relative(base);
        cfg.validate()
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.train_aug);
        self.val.iter_mut().for_each(fix);
        self.test.iter_mut().for_each(fix);
        self.cross.iter_mut().for_each(fix);
        fix(&mut self.out);
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration
            .validate()
            .map_err(|e| Error::config(format!("calibration.{}", strip(&e))))?;
        self.training
            .validate()
            .map_err(|e| Error::config(format!("training.{}", strip(&e))))
    }

    /// `--seed` and `--out` command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.calibration.seed = seed;
            self.training.seed = seed;
        }
        if let Some(out) = out {
            self.out = out;
        }
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_views(cfg: &PipelineConfig) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let plain = load_dataset(&cfg.train)?;
    let aug = load_dataset(&cfg.train_aug)?;
    check_paired_views(&plain, &aug).map_err(|e| {
        Error::validation(format!(
            "{} and {} are not paired views: {}",
            cfg.train.display(),
            cfg.train_aug.display(),
            e
        ))
    })?;
    Ok((plain, aug))
}

/// Writes per-class statistics of both views and the frequency partition.
pub fn run_stats(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_out()?;
    let (plain, aug) = load_views(cfg)?;
    write_json(
        &compute_class_stats(&plain, cfg.cov_mode),
        &cfg.out_file("stats_train.json"),
    )?;
    write_json(
        &compute_class_stats(&aug, cfg.cov_mode),
        &cfg.out_file("stats_train_aug.json"),
    )?;
    let partition = partition_by_frequency(&plain, cfg.calibration.eta);
    log::info!(
        "{} common / {} rare classes at eta = {}",
        partition.common_ids.len(),
        partition.rare_ids.len(),
        partition.eta
    );
    write_json(&partition, &cfg.out_file(PARTITION_FILE))
}

pub fn run_calibrate(cfg: &PipelineConfig) -> Result<CalibratedSet> {
    cfg.ensure_out()?;
    let (plain, aug) = load_views(cfg)?;
    let set = build_calibrated_set(&plain, &aug, &cfg.calibration)?;
    save_dataset(&set.data, cfg.out_file(CALIBRATED_FILE))?;
    set.write_provenance_csv(cfg.out_file(PROVENANCE_FILE))?;
    log::info!(
        "calibrated set: {} rows ({} generated)",
        set.len(),
        set.origins.iter().filter(|o| o.tag.is_generated()).count()
    );
    Ok(set)
}

/// Trains on `<out>/calibrated.darc1` (or `input` when given).
pub fn run_train(cfg: &PipelineConfig, input: Option<&Path>) -> Result<()> {
    cfg.ensure_out()?;
    let default_input = cfg.out_file(CALIBRATED_FILE);
    let input = input.unwrap_or(&default_input);
    let set = load_dataset(input)?;
    let out = train(&set, &cfg.training)?;
    save_params(&out.params, cfg.out_file(PARAMS_FILE))?;
    write_metrics_csv(&out.log, cfg.out_file(METRICS_FILE))
}

/// Evaluates the saved head on val, test and every cross-modality set and
/// writes one report per set. Returns the (name, report) pairs.
pub fn run_eval(cfg: &PipelineConfig, params: Option<&Path>) -> Result<Vec<(String, EvalReport)>> {
    cfg.ensure_out()?;
    let default_params = cfg.out_file(PARAMS_FILE);
    let head = load_params(params.unwrap_or(&default_params))?;
    let train_set = load_dataset(&cfg.train)?;
    let partition = partition_by_frequency(&train_set, cfg.calibration.eta);

    let mut targets: Vec<(String, &PathBuf)> = Vec::new();
    if let Some(v) = &cfg.val {
        targets.push(("val".into(), v));
    }
    if let Some(t) = &cfg.test {
        targets.push(("test".into(), t));
    }
    for c in &cfg.cross {
        let stem = c
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cross".into());
        targets.push((format!("cross_{stem}"), c));
    }

    let mut reports = Vec::new();
    for (name, path) in targets {
        let ds = load_dataset(path)?;
        if ds.class_names() != train_set.class_names() {
            return Err(Error::validation(format!(
                "class table of {} does not match training set {}",
                path.display(),
                cfg.train.display()
            )));
        }
        let report = evaluate(&head, &ds, Some(&partition))?;
        fs::write(
            cfg.out_file(&format!("report_{name}.json")),
            report.to_json()?,
        )
        .map_err(|e| Error::io(cfg.out_file(&format!("report_{name}.json")), e))?;
        print!("[{name}] {}", report.render(ds.class_names()));
        reports.push((name, report));
    }
    Ok(reports)
}

/// stats, calibrate, train and eval in sequence.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<(String, EvalReport)>> {
    run_stats(cfg)?;
    run_calibrate(cfg)?;
    run_train(cfg, None)?;
    run_eval(cfg, None)
}

/// Generates every split of `spec` under `dir`, plus `spec.json` and a
/// ready-to-run `pipeline.json` pointing at the generated files.
pub fn run_synth(spec: &MixtureSpec, dir: &Path) -> Result<PipelineConfig> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = synth::generate(spec)?;
    save_dataset(&splits.train, dir.join("train.darc1"))?;
    save_dataset(&splits.train_aug, dir.join("train_aug.darc1"))?;
    save_dataset(&splits.val, dir.join("val.darc1"))?;
    save_dataset(&splits.test, dir.join("test.darc1"))?;
    let mut cross = Vec::new();
    if let Some(sh) = &splits.shifted {
        save_dataset(&sh.train, dir.join("shifted_train.darc1"))?;
        save_dataset(&sh.val, dir.join("shifted_val.darc1"))?;
        save_dataset(&sh.test, dir.join("shifted_test.darc1"))?;
        cross.push(PathBuf::from("shifted_test.darc1"));
    }
    write_json(spec, &dir.join("spec.json"))?;
    let cfg = PipelineConfig {
        train: "train.darc1".into(),
        train_aug: "train_aug.darc1".into(),
        val: Some("val.darc1".into()),
        test: Some("test.darc1".into()),
        cross,
        calibration: CalibrationConfig {
            seed: spec.seed,
            ..CalibrationConfig::default()
        },
        training: TrainConfig {
            seed: spec.seed,
            ..TrainConfig::default()
        },
        cov_mode: CovMode::Diagonal,
        out: "run".into(),
    };
    write_json(&cfg, &dir.join("pipeline.json"))?;
    Ok(cfg)
}
