//! β and β̃ sweeps on the copy task. Reported, not asserted.

use serde::{Deserialize, Serialize};

use super::copy_task::CopyTaskConfig;
use super::model::{AttentionKind, ModelConfig};
use super::train::{run_copy_task, TrainConfig};
use crate::attention::ConnectionMomentum;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    /// Attention momentum values tried on the adaptive-momentum model.
    pub betas: Vec<f64>,
    /// Connection momentum values tried on the momentum-connection model.
    pub beta_tildes: Vec<ConnectionMomentum>,
    /// Epoch budget per run (overrides `train.epochs`).
    pub epochs: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            beta_tildes: vec![
                ConnectionMomentum::Constant(0.0),
                ConnectionMomentum::Constant(0.01),
                ConnectionMomentum::Constant(0.1),
                ConnectionMomentum::Constant(0.5),
                ConnectionMomentum::Constant(0.9),
                ConnectionMomentum::Adaptive,
            ],
            epochs: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub sweep: &'static str,
    pub value: String,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub best_test_accuracy: f64,
    pub epochs_to_target: Option<usize>,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("sweep,value,epochs_run,final_train_loss,best_test_accuracy,epochs_to_target\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sweep,
            r.value,
            r.epochs_run,
            r.final_train_loss,
            r.best_test_accuracy,
            r.epochs_to_target.map(|e| e.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Runs both sweeps on top of `model`/`train`; the β sweep uses the adaptive
/// connection, the β̃ sweep uses the model's `β` and `γ`.
pub fn run_ablation(copy: &CopyTaskConfig, model: &ModelConfig, train: &TrainConfig, cfg: &AblateConfig) -> Result<Vec<AblationRow>> {
    let train = TrainConfig { epochs: cfg.epochs, ..train.clone() };
    let mut rows = Vec::new();
    let mut record = |sweep: &'static str, value: String, m: &ModelConfig| -> Result<()> {
        let man = run_copy_task(copy, m, &train)?;
        log::info!("ablate {sweep}={value}: best accuracy {:.4}", man.summary.best_test_accuracy);
        rows.push(AblationRow {
            sweep,
            value,
            epochs_run: man.summary.epochs_run,
            final_train_loss: man.summary.final_train_loss,
            best_test_accuracy: man.summary.best_test_accuracy,
            epochs_to_target: man.summary.epochs_to_target,
        });
        Ok(())
    };
    for &beta in &cfg.betas {
        let mut m = model.clone();
        m.attention_kind = AttentionKind::AdaptiveMomentum;
        m.momentum.beta = beta;
        m.momentum.beta_tilde = ConnectionMomentum::Adaptive;
        record("beta", beta.to_string(), &m)?;
    }
    for &bt in &cfg.beta_tildes {
        let mut m = model.clone();
        m.momentum.beta_tilde = bt;
        m.attention_kind = match bt {
            ConnectionMomentum::Adaptive => AttentionKind::AdaptiveMomentum,
            ConnectionMomentum::Constant(_) => AttentionKind::MomentumWithConnection,
        };
        let value = match bt {
            ConnectionMomentum::Adaptive => "adaptive".to_string(),
            ConnectionMomentum::Constant(b) => b.to_string(),
        };
        record("beta_tilde", value, &m)?;
    }
    Ok(rows)
}
