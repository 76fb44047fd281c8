//! Append-only run logs, serialized one JSON object per line.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::acquisition::Acquisition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Record {
    pub round: usize,
    pub sampled_thetas: Vec<f64>,
    pub selected_arm: usize,
    pub reward: u8,
    pub metric: f64,
    pub arms_after: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Record {
    pub round: usize,
    pub proposed_ratio: Vec<u32>,
    /// `None` for the initial random evaluations and grid evaluations.
    pub acquisition_used: Option<Acquisition>,
    pub posterior_mean: Option<f64>,
    pub posterior_std: Option<f64>,
    pub score: f64,
    pub incumbent: f64,
    /// Hedge gains after this round's update, in PI, EI, UCB order.
    pub gains: Option<[f64; 3]>,
    pub seed: u64,
}

/// Both stage logs of one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub stage1: Vec<Stage1Record>,
    pub stage2: Vec<Stage2Record>,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        // Plain data structs: serialization cannot fail.
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut writer: W) -> std::io::Result<()> {
    writer.write_all(to_jsonl(records).as_bytes())?;
    writer.flush()
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}
