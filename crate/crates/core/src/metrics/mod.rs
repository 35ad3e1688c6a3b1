//! Pearson correlation, mean absolute error, discriminator accuracy and the
//! per-group evaluation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod report;
pub use report::{BatchRecord, EpochRecord, TrainingReport};

fn check_lengths(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{op}: {a} predictions for {b} gold values")));
    }
    Ok(())
}

/// Sample Pearson correlation. Constant input has no correlation and is
/// reported as an error rather than NaN.
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_lengths("pearson", pred.len(), gold.len())?;
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, got {}",
            pred.len()
        )));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gold.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gold) {
        let (dp, dg) = (p - mp, g - mg);
        cov += dp * dg;
        vp += dp * dp;
        vg += dg * dg;
    }
    if vp == 0.0 || vg == 0.0 {
        let which = if vp == 0.0 { "predictions" } else { "gold values" };
        return Err(Error::UndefinedCorrelation(format!("{which} are constant")));
    }
    let r = cov / (vp.sqrt() * vg.sqrt());
    if !r.is_finite() {
        return Err(Error::NonFinite { op: "pearson" });
    }
    Ok(r.clamp(-1.0, 1.0))
}

pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_lengths("mae", pred.len(), gold.len())?;
    if pred.is_empty() {
        return Err(Error::Contract("mae of an empty list".into()));
    }
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label (ties toward the lowest
/// index). An empty input scores 0.
pub fn discriminator_accuracy<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<f64> {
    check_lengths("discriminator_accuracy", logits.len(), labels.len())?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(l, &y)| argmax(l.as_ref()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Metrics for one column of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    /// Omitted when undefined (fewer than two examples or constant input).
    pub pearson: Option<f64>,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub overall: GroupMetrics,
    /// Sorted by group name.
    pub groups: Vec<(String, GroupMetrics)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

impl EvalTable {
    pub fn group(&self, name: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, m)| m)
    }

    /// Tab-separated table: one column per group after `all`, rows `n`,
    /// `pearson`, `mae`; `-` marks an omitted value.
    pub fn to_tsv(&self) -> String {
        let cols: Vec<(&str, &GroupMetrics)> = std::iter::once(("all", &self.overall))
            .chain(self.groups.iter().map(|(g, m)| (g.as_str(), m)))
            .collect();
        let mut out = String::from("metric");
        for (name, _) in &cols {
            write!(out, "\t{name}").unwrap();
        }
        out.push_str("\nn");
        for (_, m) in &cols {
            write!(out, "\t{}", m.n).unwrap();
        }
        out.push_str("\npearson");
        for (_, m) in &cols {
            match m.pearson {
                Some(r) => write!(out, "\t{r}").unwrap(),
                None => out.push_str("\t-"),
            }
        }
        out.push_str("\nmae");
        for (_, m) in &cols {
            write!(out, "\t{}", m.mae).unwrap();
        }
        out.push('\n');
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, d: String| Error::Validation {
            path: "<metrics table>".into(),
            line,
            detail: d,
        };
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
        if rows.len() != 4 || rows[0].first() != Some(&"metric") || rows[0].get(1) != Some(&"all") {
            return Err(bad(1, "expected header `metric all ...` and rows n, pearson, mae".into()));
        }
        let width = rows[0].len();
        for (i, (row, name)) in rows[1..].iter().zip(["n", "pearson", "mae"]).enumerate() {
            if row.len() != width || row[0] != name {
                return Err(bad(i + 2, format!("expected row {name:?} with {width} fields")));
            }
        }
        let mut metrics = Vec::new();
        for c in 1..width {
            let n = rows[1][c].parse().map_err(|_| bad(2, format!("bad count {:?}", rows[1][c])))?;
            let pearson = match rows[2][c] {
                "-" => None,
                v => Some(v.parse().map_err(|_| bad(3, format!("bad value {v:?}")))?),
            };
            let mae = rows[3][c].parse().map_err(|_| bad(4, format!("bad value {:?}", rows[3][c])))?;
            metrics.push(GroupMetrics { n, pearson, mae });
        }
        let mut metrics = metrics.into_iter();
        let overall = metrics.next().expect("width >= 2");
        let groups = rows[0][2..].iter().map(|g| g.to_string()).zip(metrics).collect();
        Ok(EvalTable { overall, groups, notices: Vec::new() })
    }
}

/// Evaluation-mode predictions of `model` scored overall and per group;
/// `groups[i]` names the group of `examples[i]`.
pub fn evaluate<S: AsRef<str>>(
    model: &crate::model::CwiModel,
    examples: &[crate::corpus::EncodedExample],
    groups: &[S],
    exec: crate::exec::Execution,
) -> Result<EvalTable> {
    check_lengths("evaluate", groups.len(), examples.len())?;
    let pred = model.predict(examples, exec)?;
    let gold: Vec<f64> = examples.iter().map(|e| e.gold).collect();
    evaluate_predictions(&pred, &gold, groups)
}

/// Overall and per-group metrics. Predictions are clamped to [0, 1] first.
/// Groups where Pearson is undefined keep their MAE and gain a notice.
pub fn evaluate_predictions<S: AsRef<str>>(pred: &[f64], gold: &[f64], groups: &[S]) -> Result<EvalTable> {
    check_lengths("evaluate", pred.len(), gold.len())?;
    check_lengths("evaluate", groups.len(), gold.len())?;
    let pred: Vec<f64> = pred.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let mut notices = Vec::new();
    let mut column = |name: &str, p: &[f64], g: &[f64]| -> Result<GroupMetrics> {
        let pearson = match pearson(p, g) {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(why)) => {
                notices.push(format!("{name}: pearson omitted ({why})"));
                None
            }
            Err(e) => return Err(e),
        };
        Ok(GroupMetrics { n: p.len(), pearson, mae: mae(p, g)? })
    };
    let overall = column("all", &pred, gold)?;
    let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((p, g), name) in pred.iter().zip(gold).zip(groups) {
        let entry = by_group.entry(name.as_ref()).or_default();
        entry.0.push(*p);
        entry.1.push(*g);
    }
    let mut rows = Vec::new();
    for (name, (p, g)) in &by_group {
        rows.push((name.to_string(), column(name, p, g)?));
    }
    Ok(EvalTable { overall, groups: rows, notices })
}
