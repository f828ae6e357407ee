use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::copy_task::{CopyDataset, CopyTaskConfig};
use super::model::{ForwardOptions, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Learning rate switches to `lr` from epoch `epoch` (1-based) on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDrop {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_drop: Option<LrDrop>,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once copy-region test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            lr_drop: None,
            batch: 32,
            epochs: 100,
            seed: 0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the model, which is a useful control.
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr = {} must be finite and >= 0", self.lr)));
        }
        if let Some(d) = self.lr_drop {
            if !(d.lr >= 0.0) || d.epoch == 0 {
                return Err(Error::Config("lr_drop needs epoch >= 1 and lr >= 0".into()));
            }
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop {
            Some(d) if epoch >= d.epoch => d.lr,
            _ => self.lr,
        }
    }
}

/// Fixed Adam hyperparameters.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

enum Optimizer {
    Sgd,
    Adam { m: Vec<DenseMatrix>, v: Vec<DenseMatrix>, t: i32 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &[DenseMatrix]) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                let zeros = || params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
                Optimizer::Adam { m: zeros(), v: zeros(), t: 0 }
            }
        }
    }

    fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * d;
                    }
                }
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for (((p, g), mp), vp) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((x, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mp.data_mut())
                        .zip(vp.data_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    /// First epoch whose test accuracy reached the target, if one was set.
    pub epochs_to_target: Option<usize>,
    pub param_count: usize,
    pub total_wall_time_s: f64,
}

/// Everything needed to rerun and audit a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub git_describe: String,
    pub seed: u64,
    pub copy: Option<CopyTaskConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub epochs: Vec<EpochMetrics>,
    pub summary: RunSummary,
}

impl RunManifest {
    /// One row per epoch: `epoch,lr,train_loss,test_accuracy`. Wall time is
    /// left out so reruns produce identical bytes.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "lr", "train_loss", "test_accuracy"]).map_err(csv_err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.test_accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `git describe --always --dirty` of the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Fraction of copy-region next-token predictions that are correct.
pub fn copy_accuracy(model: &Model, data: &CopyDataset, batch: usize) -> Result<f64> {
    let len = data.seq_len();
    let region = data.copy_positions();
    let (mut correct, mut total) = (0usize, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (tokens, targets) = data.batch(chunk);
        let logits = model.logits(&tokens, chunk.len(), len)?;
        for b in 0..chunk.len() {
            for pos in region.clone() {
                let r = b * len + pos;
                let row = logits.row(r);
                let pred = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
                correct += usize::from(Some(pred) == targets[r]);
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Trains on `train`, evaluating copy-region accuracy on `test` after each
/// epoch. Batches are reshuffled every epoch from `cfg.seed`.
pub fn train(model: &mut Model, train: &CopyDataset, test: &CopyDataset, cfg: &TrainConfig) -> Result<RunManifest> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("train and test sets must be non-empty".into()));
    }
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        git_describe: git_describe(),
        seed: cfg.seed,
        copy: None,
        model: Some(model.config().clone()),
        train: Some(cfg.clone()),
        epochs: Vec::new(),
        summary: RunSummary { param_count: model.param_count(), ..Default::default() },
    };
    let len = train.seq_len();
    let mut rng = Rng::new(cfg.seed ^ 0x5_eed0_fba7_c4e5);
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let opts = ForwardOptions::default();
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        rng.shuffle(&mut order);
        let (mut loss_sum, mut rows) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let (tokens, targets) = train.batch(chunk);
            let failure = match model.loss_and_grads(&tokens, &targets, chunk.len(), len, &opts) {
                Ok((loss, grads, _)) if loss.is_finite() => Ok((loss, grads)),
                Ok((loss, _, _)) => Err(format!("non-finite training loss {loss}")),
                Err(Error::Numerical(msg)) => Err(msg),
                Err(e) => return Err(e),
            };
            let (loss, grads) = match failure {
                Ok(v) => v,
                Err(reason) => {
                    manifest.summary.epochs_run = epoch - 1;
                    return Err(Error::TrainingAborted { epoch, reason, manifest: Box::new(manifest) });
                }
            };
            let n = targets.iter().filter(|t| t.is_some()).count();
            loss_sum += loss * n as f64;
            rows += n;
            opt.step(model.params_mut(), &grads, lr);
        }
        let train_loss = loss_sum / rows as f64;
        let test_accuracy = copy_accuracy(model, test, cfg.batch)?;
        let wall = start.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {train_loss:.5}, copy accuracy {test_accuracy:.4}");
        manifest.epochs.push(EpochMetrics { epoch, lr, train_loss, test_accuracy, wall_time_s: wall });
        let s = &mut manifest.summary;
        s.epochs_run = epoch;
        s.final_train_loss = train_loss;
        s.final_test_accuracy = test_accuracy;
        s.best_test_accuracy = s.best_test_accuracy.max(test_accuracy);
        s.total_wall_time_s = wall;
        if let Some(target) = cfg.target_accuracy {
            if test_accuracy >= target {
                s.epochs_to_target = Some(epoch);
                break;
            }
        }
    }
    Ok(manifest)
}

/// Dataset generation, model construction and training in one call.
pub fn run_copy_task(copy: &CopyTaskConfig, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<RunManifest> {
    let (train_set, test_set) = super::copy_task::generate_copy_dataset(copy)?;
    let mut mc = model_cfg.clone();
    mc.vocab_size = copy.n_tokens();
    mc.max_len = mc.max_len.max(copy.seq_len());
    let mut model = Model::build(&mc, &mut Rng::new(cfg.seed))?;
    let mut manifest = train(&mut model, &train_set, &test_set, cfg)?;
    manifest.copy = Some(copy.clone());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::copy_task::generate_copy_dataset;
    use crate::harness::model::AttentionKind;

    fn tiny() -> (CopyTaskConfig, ModelConfig) {
        let copy = CopyTaskConfig { word_len: 3, n_train: 40, n_test: 12, ..Default::default() };
        let model = ModelConfig { d_model: 8, d_ff: 16, max_len: 8, vocab_size: 11, ..Default::default() };
        (copy, model)
    }

    #[test]
    fn zero_lr_freezes_loss() {
        let (copy, model) = tiny();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, batch: 7, ..Default::default() };
        let m = run_copy_task(&copy, &model, &cfg).unwrap();
        let l0 = m.epochs[0].train_loss;
        assert!(m.epochs.iter().all(|e| (e.train_loss - l0).abs() <= 1e-12));
        assert!(m.epochs.iter().all(|e| e.test_accuracy == m.epochs[0].test_accuracy));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (copy, model) = tiny();
        let cfg = TrainConfig { lr: 3e-3, epochs: 5, batch: 8, ..Default::default() };
        let a = run_copy_task(&copy, &model, &cfg).unwrap();
        let b = run_copy_task(&copy, &model, &cfg).unwrap();
        assert!(a.epochs[4].train_loss < a.epochs[0].train_loss);
        assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
        let sgd = TrainConfig { optimizer: OptimizerKind::Sgd, lr: 0.1, ..cfg };
        let s = run_copy_task(&copy, &model, &sgd).unwrap();
        assert!(s.epochs[4].train_loss < s.epochs[0].train_loss);
    }

    #[test]
    fn manifest_round_trips() {
        let (copy, model) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            lr_drop: Some(LrDrop { epoch: 2, lr: 1e-4 }),
            ..Default::default()
        };
        let m = run_copy_task(&copy, &ModelConfig { attention_kind: AttentionKind::AdaptiveMomentum, ..model }, &cfg).unwrap();
        assert_eq!(m.epochs[1].lr, 1e-4);
        assert_eq!(RunManifest::from_json(&m.to_json().unwrap()).unwrap(), m);
        let csv = m.metrics_csv().unwrap();
        assert!(csv.starts_with("epoch,lr,train_loss,test_accuracy\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn nan_loss_aborts_with_manifest() {
        let (copy, model) = tiny();
        let (tr, te) = generate_copy_dataset(&copy).unwrap();
        let mut m = Model::build(&ModelConfig { vocab_size: 11, ..model }, &mut Rng::new(0)).unwrap();
        m.params_mut()[0].data_mut()[0] = f64::NAN;
        match train(&mut m, &tr, &te, &TrainConfig { epochs: 2, ..Default::default() }) {
            Err(Error::TrainingAborted { epoch: 1, manifest, .. }) => assert_eq!(manifest.summary.epochs_run, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..Default::default() }.validate().is_err());
    }
}
