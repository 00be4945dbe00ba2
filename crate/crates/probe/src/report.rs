//! Evaluation, ablation and training reports in text and JSON.

use std::fmt::Write;

use probe_core::eval::{ablation_table, AblationRow, Evaluation, ObstacleResult, Report, HELDOUT_FRACTION};
use probe_core::model::TrainLog;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub dataset_digest: String,
    pub checkpoint_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub heldout_fraction: f64,
    pub train: usize,
    pub heldout: usize,
}

impl SplitInfo {
    pub fn new(seed: u64, train: usize, heldout: usize) -> Self {
        SplitInfo { seed, heldout_fraction: HELDOUT_FRACTION, train, heldout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub predictor: String,
    pub split: SplitInfo,
    pub movable_iou: Option<f64>,
    pub static_iou: Option<f64>,
    /// Dataset-mean movable box placed at the mean contact position.
    pub baseline_iou: Option<f64>,
    /// Same, plus the mean offset from contact position to box.
    pub baseline_offset_iou: Option<f64>,
    pub contact_accuracy: Option<f64>,
    pub table: Report,
    /// Per-obstacle values the table is averaged from.
    pub results: Vec<ObstacleResult>,
}

impl EvalReport {
    pub fn new(provenance: Provenance, predictor: &str, split: SplitInfo, e: &Evaluation) -> Self {
        EvalReport {
            provenance,
            predictor: predictor.into(),
            split,
            movable_iou: e.movable_iou(),
            static_iou: e.static_iou(),
            baseline_iou: e.baseline_iou(),
            baseline_offset_iou: e.baseline_offset_iou(),
            contact_accuracy: e.contact.value(),
            table: e.report(),
            results: e.results.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = header(&self.provenance, &self.split);
        let _ = writeln!(s, "predictor         {}", self.predictor);
        let _ = writeln!(s);
        let _ = writeln!(s, "final-contact rotated IoU and absolute errors; reference values in parentheses");
        s.push_str(&self.table.to_text());
        let _ = writeln!(s);
        for (name, v) in [
            ("movable IoU", self.movable_iou),
            ("static IoU", self.static_iou),
            ("baseline IoU", self.baseline_iou),
            ("baseline+offset", self.baseline_offset_iou),
            ("contact accuracy", self.contact_accuracy),
        ] {
            let _ = writeln!(s, "{name:<17} {}", fmt(v));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub provenance: Provenance,
    pub split: SplitInfo,
    /// Shared by every subset; only the channel mask differs.
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = header(&self.provenance, &self.split);
        let _ = writeln!(s, "model seed        {}", self.seed);
        let _ = writeln!(s);
        s.push_str(&ablation_table(&self.rows));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub provenance: Provenance,
    pub split: SplitInfo,
    pub log: TrainLog,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "–".into(), |v| format!("{v:.3}"))
}

fn header(p: &Provenance, split: &SplitInfo) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config digest     {}", p.config_digest);
    let _ = writeln!(s, "dataset digest    {}", p.dataset_digest);
    if let Some(c) = &p.checkpoint_digest {
        let _ = writeln!(s, "checkpoint digest {c}");
    }
    let _ = writeln!(
        s,
        "held-out split    seed {}, fraction {}, {} train / {} held out",
        split.seed, split.heldout_fraction, split.train, split.heldout
    );
    s
}
