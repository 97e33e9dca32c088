//! Evaluation results as CSV, one row per evaluation point, task and seed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::toyworld::TaskId;

pub const HEADER: &str = "seed,phase,step,task,mean_reward,std_reward,loss_distill,loss_pr";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    /// Short token naming the training phase, e.g. `ltm_B`.
    pub phase: String,
    pub step: usize,
    pub task: TaskId,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub loss_distill: Option<f64>,
    pub loss_pr: Option<f64>,
}

fn valid_phase(p: &str) -> bool {
    !p.is_empty()
        && p.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    /// CSV line without the newline. Floats use the shortest representation
    /// that parses back to the same bits.
    pub fn to_line(&self) -> Result<String> {
        if !valid_phase(&self.phase) {
            return Err(Error::invalid(format!("bad phase token {:?}", self.phase)));
        }
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.phase,
            self.step,
            self.task,
            self.mean_reward,
            self.std_reward,
            optional(self.loss_distill),
            optional(self.loss_pr),
        );
        Ok(s)
    }
}

pub fn render(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line()?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => {
            return Err(Error::Metrics {
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let err = |message: String| Error::Metrics {
            line: line_no,
            message,
        };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| {
                err(format!(
                    "field {} is not a number: {:?}",
                    idx + 1,
                    fields[idx]
                ))
            })
        };
        let opt = |idx: usize| -> Result<Option<f64>> {
            if fields[idx].is_empty() {
                Ok(None)
            } else {
                num(idx).map(Some)
            }
        };
        if !valid_phase(fields[1]) {
            return Err(err(format!("bad phase {:?}", fields[1])));
        }
        rows.push(MetricsRow {
            seed: fields[0]
                .parse()
                .map_err(|_| err(format!("bad seed {:?}", fields[0])))?,
            phase: fields[1].to_string(),
            step: fields[2]
                .parse()
                .map_err(|_| err(format!("bad step {:?}", fields[2])))?,
            task: fields[3].parse().map_err(|e: Error| err(e.to_string()))?,
            mean_reward: num(4)?,
            std_reward: num(5)?,
            loss_distill: opt(6)?,
            loss_pr: opt(7)?,
        });
    }
    Ok(rows)
}

/// Writes `rows` to a new file; an existing file is never replaced.
pub fn write_new(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let text = render(rows)?;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(())
}
