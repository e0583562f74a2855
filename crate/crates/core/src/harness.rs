//! Entry points shared by the command line tool and the examples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{DatasetManifest, FeatureSequence, read_feature_file};
use crate::metrics::{LogisticFit, krocc, logistic_fit, plcc_rmse, srocc};
use crate::pyramid::fuse_scores;
use crate::trainer::{TrainConfig, TrainLog, train_with};

pub const CHECKPOINT_FILE: &str = "checkpoint.gstc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Exit status for a failed command: 2 for bad input, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Manifest { .. }
        | Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Shape { .. } => 2,
        _ => 1,
    }
}

/// Training run settings: every training field plus the data and output
/// locations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    /// Optional held-out manifest, evaluated after training.
    pub eval_manifest: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            manifest: None,
            eval_manifest: None,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    const PATH_KEYS: [&'static str; 3] = ["manifest", "eval_manifest", "out"];

    /// Parse a JSON object. Keys other than `manifest`, `eval_manifest` and
    /// `out` are training fields; all are optional.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut take_path = |key: &str| -> Result<Option<PathBuf>> {
            match map.remove(key) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::String(s)) => Ok(Some(PathBuf::from(s))),
                Some(other) => Err(Error::Config(format!("{key} must be a string, got {other}"))),
            }
        };
        let [manifest, eval_manifest, out] = Self::PATH_KEYS.map(&mut take_path);
        let (manifest, eval_manifest, out) = (manifest?, eval_manifest?, out?);
        let train: TrainConfig = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::Config(e.to_string()))?;
        let run = RunConfig {
            train,
            manifest,
            eval_manifest,
            out: out.unwrap_or_else(|| RunConfig::default().out),
        };
        run.train.validate()?;
        Ok(run)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let Some(manifest) = &self.manifest else {
            return Err(Error::Config("no training manifest given".into()));
        };
        if self.eval_manifest.as_ref() == Some(manifest) {
            return Err(Error::Config(
                "training and evaluation manifests must differ".into(),
            ));
        }
        if &self.out == manifest {
            return Err(Error::Config("output directory collides with the manifest".into()));
        }
        Ok(())
    }
}

/// Artifacts of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    /// Held-out report when an evaluation manifest was configured.
    pub eval: Option<EvalReport>,
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} does not exist",
            path.display()
        )));
    }
    DatasetManifest::load(path)
}

/// Train on the configured manifest, writing the checkpoint and the
/// per-epoch log under the output directory.
pub fn cmd_train(run: &RunConfig, on_epoch: impl FnMut(&crate::trainer::EpochLog)) -> Result<TrainOutcome> {
    run.validate()?;
    let manifest = load_manifest(run.manifest.as_ref().expect("validated"))?;
    let eval_manifest = run.eval_manifest.as_deref().map(load_manifest).transpose()?;
    let dataset = manifest.load_features()?;
    let (checkpoint, log) = train_with(&dataset, &run.train, on_epoch)?;

    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let checkpoint_path = run.out.join(CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    let log_path = run.out.join(TRAIN_LOG_FILE);
    fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(&log_path, e))?;

    let eval = match eval_manifest {
        Some(m) => {
            let preds = evaluate(&checkpoint, &m.load_features()?, &m)?;
            Some(report(&preds, checkpoint.config.fusion_lambda)?)
        }
        None => None,
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        checkpoint_path,
        log_path,
        eval,
    })
}

/// Scores of one video on the raw MOS scale.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub video_id: String,
    pub mos: f64,
    pub q_vid: f64,
    pub q_reg: f64,
}

/// Score a video with a checkpoint, on the raw MOS scale.
pub fn predict_video(ck: &Checkpoint, seq: &FeatureSequence) -> Result<(f64, f64)> {
    let s = ck.params.predict(seq)?;
    Ok((ck.scaler.denormalize(s.q_vid), ck.scaler.denormalize(s.q_reg)))
}

/// Score every video of a loaded dataset, in manifest order.
pub fn evaluate(
    ck: &Checkpoint,
    dataset: &[(FeatureSequence, f64)],
    manifest: &DatasetManifest,
) -> Result<Vec<VideoPrediction>> {
    dataset
        .par_iter()
        .zip(&manifest.records)
        .map(|((seq, mos), rec)| {
            let (q_vid, q_reg) = predict_video(ck, seq)?;
            Ok(VideoPrediction {
                video_id: rec.video_id.clone(),
                mos: *mos,
                q_vid,
                q_reg,
            })
        })
        .collect()
}

/// Agreement between one score column and MOS.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub lambda: f64,
    pub count: usize,
    pub srocc: f64,
    pub krocc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub fit: LogisticFit,
}

impl EvalReport {
    pub fn from_scores(pred: &[f64], mos: &[f64], lambda: f64) -> Result<Self> {
        let fit = logistic_fit(pred, mos)?;
        let (plcc, rmse) = plcc_rmse(pred, mos, &fit)?;
        Ok(EvalReport {
            lambda,
            count: pred.len(),
            srocc: srocc(pred, mos)?,
            krocc: krocc(pred, mos)?,
            plcc,
            rmse,
            fit,
        })
    }

    /// Two-column `metric,value` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let rows = [
            ("lambda", self.lambda),
            ("count", self.count as f64),
            ("srocc", self.srocc),
            ("krocc", self.krocc),
            ("plcc", self.plcc),
            ("rmse", self.rmse),
        ];
        for (k, v) in rows {
            writeln!(out, "{k},{v}").unwrap();
        }
        for (i, b) in self.fit.beta.iter().enumerate() {
            writeln!(out, "beta{},{b}", i + 1).unwrap();
        }
        writeln!(out, "fit_converged,{}", self.fit.converged as u8).unwrap();
        out
    }
}

/// Report for `Q^fus` at `lambda`; `lambda = 0` scores `Q^vid` alone.
pub fn report(preds: &[VideoPrediction], lambda: f64) -> Result<EvalReport> {
    let score = |p: &VideoPrediction| -> Result<f64> {
        if lambda == 0.0 {
            Ok(p.q_vid)
        } else {
            fuse_scores(p.q_vid, p.q_reg, lambda)
        }
    };
    let scores = preds.iter().map(score).collect::<Result<Vec<_>>>()?;
    let mos: Vec<f64> = preds.iter().map(|p| p.mos).collect();
    EvalReport::from_scores(&scores, &mos, lambda)
}

/// The fusion weights `0.0, 0.2, …, 1.8`.
pub fn sweep_lambdas() -> [f64; 10] {
    std::array::from_fn(|i| i as f64 / 5.0)
}

pub fn sweep(preds: &[VideoPrediction]) -> Result<Vec<EvalReport>> {
    sweep_lambdas().iter().map(|&l| report(preds, l)).collect()
}

/// One row per fusion weight.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out =
        String::from("lambda,srocc,krocc,plcc,rmse,beta1,beta2,beta3,beta4,beta5,fit_converged\n");
    for r in reports {
        let b = r.fit.beta;
        writeln!(
            out,
            "{:.1},{},{},{},{},{},{},{},{},{},{}",
            r.lambda, r.srocc, r.krocc, r.plcc, r.rmse, b[0], b[1], b[2], b[3], b[4], r.fit.converged as u8
        )
        .unwrap();
    }
    out
}

pub fn predictions_csv(preds: &[VideoPrediction]) -> String {
    let mut out = String::from("video_id,mos,q_vid,q_reg\n");
    for p in preds {
        writeln!(out, "{},{},{},{}", p.video_id, p.mos, p.q_vid, p.q_reg).unwrap();
    }
    out
}

/// Everything `eval` computes.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub predictions: Vec<VideoPrediction>,
    pub report: EvalReport,
    pub sweep: Option<Vec<EvalReport>>,
}

/// Evaluate a checkpoint on a manifest. When `out` is given, the report and
/// the per-video predictions are written there, plus `sweep.csv` when
/// `with_sweep` is set.
pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    lambda: f64,
    with_sweep: bool,
    out: Option<&Path>,
) -> Result<EvalOutcome> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("fusion λ {lambda} must be ≥ 0")));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let m = load_manifest(manifest)?;
    let dataset = m.load_features()?;
    let predictions = evaluate(&ck, &dataset, &m)?;
    let report = report(&predictions, lambda)?;
    let sweep = with_sweep.then(|| sweep(&predictions)).transpose()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("report.csv", report.to_csv())?;
        write("predictions.csv", predictions_csv(&predictions))?;
        if let Some(rows) = &sweep {
            write("sweep.csv", sweep_csv(rows))?;
        }
    }
    Ok(EvalOutcome {
        predictions,
        report,
        sweep,
    })
}

/// Raw-scale `Q^vid`, or `Q^fus` when `lambda` is given, for one file.
pub fn cmd_predict(checkpoint: &Path, features: &Path, lambda: Option<f64>) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let seq = read_feature_file(features)?;
    let (q_vid, q_reg) = predict_video(&ck, &seq)?;
    match lambda {
        None | Some(0.0) => Ok(q_vid),
        Some(l) => fuse_scores(q_vid, q_reg, l),
    }
}
