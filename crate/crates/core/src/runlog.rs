//! Structured run records, one JSON object per line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Plain distillation before selection starts.
    Warmup,
    /// Plain distillation after warm-up (no selector).
    Full,
    /// Policy-selected sub-batch.
    Reinforced,
    /// Threshold-selected sub-batch (confidence or agreement baseline).
    Select,
}

impl Phase {
    pub fn is_selection(self) -> bool {
        matches!(self, Phase::Reinforced | Phase::Select)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: usize,
    pub k: usize,
    pub phase: Phase,
    pub batch: usize,
    pub kept: usize,
    pub reward: Option<f64>,
    pub kd_loss: Option<f64>,
    pub policy_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSummary {
    pub summary: String,
    pub k: usize,
    /// Mean over selection steps of the per-batch discard fraction.
    pub discard_ratio: Option<f64>,
    /// `1 − Σ kept / Σ batch` over selection steps.
    pub pooled_discard_ratio: Option<f64>,
    pub skipped_steps: usize,
    /// Step whose student was kept as this iteration's model.
    pub selected_step: usize,
    pub checkpoint: Option<String>,
    pub eval_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepRecord),
    Iteration(IterationSummary),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push_step(&mut self, r: StepRecord) {
        self.records.push(LogRecord::Step(r));
    }

    pub fn push_iteration(&mut self, r: IterationSummary) {
        self.records.push(LogRecord::Iteration(r));
    }

    pub fn extend(&mut self, other: RunLog) {
        self.records.extend(other.records);
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Iteration(_) => None,
        })
    }

    pub fn iterations(&self) -> impl Iterator<Item = &IterationSummary> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Iteration(s) => Some(s),
            LogRecord::Step(_) => None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = RunLog::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record = serde_json::from_str(line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            log.records.push(record);
        }
        Ok(log)
    }
}
