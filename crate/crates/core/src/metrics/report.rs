use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalTable;
use crate::error::{Error, Result};
use crate::model::LossParts;

/// Metrics of one completed epoch. Loss terms are means over the epoch's
/// batches; `objective` composes them with the epoch's λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Completed epochs before this one (the schedule's ε).
    pub epoch: usize,
    pub lambda: f64,
    pub losses: LossParts<f64>,
    pub objective: f64,
    pub train_pearson: Option<f64>,
    pub train_mae: f64,
    pub validation_pearson: Option<f64>,
    pub validation_mae: Option<f64>,
    /// Evaluation-mode accuracy of the adversarial classifier.
    pub discriminator_accuracy: Option<f64>,
}

/// One step of the multi-task loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Regression loss of the complexity batch.
    pub loss1: f64,
    /// Masked-word loss of the simplification batch.
    pub loss2: f64,
    pub task_loss: f64,
    /// `loss1 + w_ml·loss2 − βλ·α_task·task_loss`
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batches: Vec<BatchRecord>,
    pub summary: Option<EvalTable>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line<'a> {
    Epoch(&'a EpochRecord),
    Batch(&'a BatchRecord),
    Summary(&'a EvalTable),
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum OwnedLine {
    Epoch(EpochRecord),
    Batch(BatchRecord),
    Summary(EvalTable),
}

impl TrainingReport {
    /// One JSON object per line, tagged `epoch`, `batch` or `summary`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = Vec::new();
        let lines = self
            .batches
            .iter()
            .map(Line::Batch)
            .chain(self.epochs.iter().map(Line::Epoch))
            .chain(self.summary.iter().map(Line::Summary));
        for line in lines {
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        Ok(String::from_utf8(out).expect("JSON is UTF-8"))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut report = TrainingReport::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                OwnedLine::Epoch(e) => report.epochs.push(e),
                OwnedLine::Batch(b) => report.batches.push(b),
                OwnedLine::Summary(s) => report.summary = Some(s),
            }
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Epochs numbered 0, 1, 2, … with every metric finite.
    pub fn check(&self) -> Result<()> {
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch != i {
                return Err(Error::Contract(format!("epoch record {i} is numbered {}", e.epoch)));
            }
            let values = [
                Some(e.lambda),
                Some(e.objective),
                Some(e.train_mae),
                e.train_pearson,
                e.validation_pearson,
                e.validation_mae,
                e.discriminator_accuracy,
                e.losses.regression,
                e.losses.discriminator,
                e.losses.vae,
                e.losses.decoder,
                e.losses.masked_lm,
            ];
            if values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "training report" });
            }
        }
        Ok(())
    }
}
