//! Stage records: what a simulation writes and what distillation reads.
//!
//! A record captures one scheduling decision together with the features of
//! every candidate that was schedulable at that stage, winner included.
//! Traces are CSV with a `#META ` JSON header line; one row per
//! (stage, candidate). Floats use Rust's shortest round-trip formatting so
//! save/load reproduces values bit-exactly.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, NormalizationConfig, FEATURE_COUNT};
use crate::workload::{JobId, NodeId};

pub const TRACE_COLUMNS: &str =
    "stage_idx,clock_s,job_id,node_id,winner,l_i,prev_same_job,f1,f2,f3,f4,f5,f6,f7,f8,f9,f10";

/// Metadata tying a trace to the workload, normalization and policy that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub workload_hash: String,
    pub normalization: NormalizationConfig,
    pub scheduler: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub job_id: JobId,
    pub node_id: NodeId,
    pub features: FeatureVector,
}

/// One scheduling stage: the decision plus all schedulable candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage_idx: u64,
    pub clock_s: f64,
    pub chosen_job: JobId,
    pub chosen_node: NodeId,
    /// Executors actually granted (the realized l_i).
    pub executor_budget: usize,
    pub candidates: Vec<CandidateRecord>,
    pub prev_job: Option<JobId>,
}

impl StageRecord {
    pub fn winner_index(&self) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c.job_id == self.chosen_job && c.node_id == self.chosen_node)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::validation(format!(
                "stage {}: no candidates",
                self.stage_idx
            )));
        }
        if self.winner_index().is_none() {
            return Err(Error::validation(format!(
                "stage {}: winner {}/{} not among candidates",
                self.stage_idx, self.chosen_job, self.chosen_node
            )));
        }
        if self.candidates.iter().any(|c| !c.features.is_finite()) {
            return Err(Error::validation(format!(
                "stage {}: non-finite feature",
                self.stage_idx
            )));
        }
        if self.executor_budget == 0 {
            return Err(Error::validation(format!(
                "stage {}: zero executor budget",
                self.stage_idx
            )));
        }
        Ok(())
    }
}

/// Receives one record per scheduling stage during a simulation.
pub trait TraceSink {
    fn record(&mut self, record: &StageRecord) -> Result<()>;
}

/// Collects records in memory.
#[derive(Debug)]
pub struct MemorySink {
    pub header: TraceHeader,
    pub records: Vec<StageRecord>,
}

impl MemorySink {
    pub fn new(header: TraceHeader) -> Self {
        MemorySink {
            header,
            records: Vec::new(),
        }
    }

    pub fn into_trace(self) -> TraceFile {
        TraceFile {
            header: self.header,
            records: self.records,
        }
    }
}

impl TraceSink for MemorySink {
    fn record(&mut self, record: &StageRecord) -> Result<()> {
        record.validate()?;
        if let Some(last) = self.records.last() {
            if record.stage_idx <= last.stage_idx {
                return Err(Error::validation(format!(
                    "stage {} out of order after {}",
                    record.stage_idx, last.stage_idx
                )));
            }
        }
        self.records.push(record.clone());
        Ok(())
    }
}

/// Streams records to a CSV file as they arrive.
pub struct CsvTraceWriter {
    w: BufWriter<std::fs::File>,
    last_stage: Option<u64>,
}

impl CsvTraceWriter {
    pub fn create(path: impl AsRef<Path>, header: &TraceHeader) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        write_header(&mut w, header)?;
        Ok(CsvTraceWriter {
            w,
            last_stage: None,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

impl TraceSink for CsvTraceWriter {
    fn record(&mut self, record: &StageRecord) -> Result<()> {
        record.validate()?;
        if let Some(last) = self.last_stage {
            if record.stage_idx <= last {
                return Err(Error::validation(format!(
                    "stage {} out of order after {last}",
                    record.stage_idx
                )));
            }
        }
        write_record(&mut self.w, record).map_err(|e| {
            Error::validation(format!("stage {}: write failed: {e}", record.stage_idx))
        })?;
        self.last_stage = Some(record.stage_idx);
        Ok(())
    }
}

fn write_header(w: &mut impl Write, header: &TraceHeader) -> Result<()> {
    writeln!(w, "#META {}", serde_json::to_string(header)?)?;
    writeln!(w, "{TRACE_COLUMNS}")?;
    Ok(())
}

fn write_record(w: &mut impl Write, record: &StageRecord) -> std::io::Result<()> {
    for c in &record.candidates {
        let winner =
            u8::from(c.job_id == record.chosen_job && c.node_id == record.chosen_node);
        let prev_same = u8::from(record.prev_job == Some(c.job_id));
        write!(
            w,
            "{},{},{},{},{},{},{}",
            record.stage_idx,
            record.clock_s,
            c.job_id.0,
            c.node_id.0,
            winner,
            record.executor_budget,
            prev_same
        )?;
        for v in c.features.as_array() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A fully loaded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<StageRecord>,
}

impl TraceFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = CsvTraceWriter::create(path, &self.header)?;
        for r in &self.records {
            w.record(r)?;
        }
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TraceFile> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let (_, meta) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty trace file"))?;
        let meta = meta?;
        let header: TraceHeader = meta
            .strip_prefix("#META ")
            .ok_or_else(|| Error::parse(1, "missing #META header"))
            .and_then(|json| {
                serde_json::from_str(json).map_err(|e| Error::parse(1, format!("bad meta: {e}")))
            })?;

        let (_, cols) = lines
            .next()
            .ok_or_else(|| Error::parse(2, "missing column header"))?;
        if cols? != TRACE_COLUMNS {
            return Err(Error::parse(2, "unexpected column header"));
        }

        let mut records: Vec<StageRecord> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 + FEATURE_COUNT {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} columns, got {}", 7 + FEATURE_COUNT, fields.len()),
                ));
            }
            let num = |i: usize, what: &str| -> Result<f64> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("bad {what}: {}", fields[i])))
            };
            let int = |i: usize, what: &str| -> Result<u64> {
                fields[i]
                    .parse::<u64>()
                    .map_err(|_| Error::parse(line_no, format!("bad {what}: {}", fields[i])))
            };
            let stage_idx = int(0, "stage_idx")?;
            let clock_s = num(1, "clock_s")?;
            let job_id = JobId(int(2, "job_id")? as u32);
            let node_id = NodeId(int(3, "node_id")? as u32);
            let winner = int(4, "winner")?;
            let l_i = int(5, "l_i")? as usize;
            let prev_same = int(6, "prev_same_job")?;
            let mut feats = [0.0; FEATURE_COUNT];
            for (k, f) in feats.iter_mut().enumerate() {
                *f = num(7 + k, "feature")?;
                if !f.is_finite() {
                    return Err(Error::parse(line_no, "non-finite feature"));
                }
            }
            let candidate = CandidateRecord {
                job_id,
                node_id,
                features: FeatureVector::from_array(feats),
            };

            let start_new = records
                .last()
                .map(|r| r.stage_idx != stage_idx)
                .unwrap_or(true);
            if start_new {
                if let Some(last) = records.last() {
                    if stage_idx <= last.stage_idx {
                        return Err(Error::parse(
                            line_no,
                            format!("stage {stage_idx} not increasing"),
                        ));
                    }
                    last.validate()
                        .map_err(|e| Error::parse(line_no, e.to_string()))?;
                }
                records.push(StageRecord {
                    stage_idx,
                    clock_s,
                    chosen_job: JobId(u32::MAX),
                    chosen_node: NodeId(u32::MAX),
                    executor_budget: l_i,
                    candidates: Vec::new(),
                    prev_job: None,
                });
            }
            let rec = records.last_mut().expect("record started");
            if winner > 1 || prev_same > 1 {
                return Err(Error::parse(line_no, "winner/prev_same_job must be 0 or 1"));
            }
            if winner == 1 {
                if rec.chosen_job != JobId(u32::MAX) {
                    return Err(Error::parse(
                        line_no,
                        format!("stage {stage_idx} has multiple winners"),
                    ));
                }
                rec.chosen_job = job_id;
                rec.chosen_node = node_id;
            }
            if prev_same == 1 {
                rec.prev_job = Some(job_id);
            }
            rec.candidates.push(candidate);
        }
        if let Some(last) = records.last() {
            last.validate().map_err(|e| Error::parse(0, e.to_string()))?;
        }
        Ok(TraceFile { header, records })
    }

    /// All job ids appearing anywhere in the trace's candidate sets.
    pub fn job_ids(&self) -> BTreeSet<JobId> {
        self.records
            .iter()
            .flat_map(|r| r.candidates.iter().map(|c| c.job_id))
            .collect()
    }
}

/// Partition traces into train/test by whole job sets: a trace never
/// straddles the split, so test jobs are unseen during training. Targets
/// `fraction` of the total job count for the train side.
pub fn split_train_test(
    traces: Vec<TraceFile>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TraceFile>, Vec<TraceFile>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!(
            "fraction must be in (0, 1), got {fraction}"
        )));
    }
    if traces.len() < 2 {
        return Err(Error::validation(
            "need at least two traces to split without breaking a job set",
        ));
    }
    let mut seen: BTreeSet<JobId> = BTreeSet::new();
    for t in &traces {
        for id in t.job_ids() {
            if !seen.insert(id) {
                return Err(Error::validation(format!(
                    "{id} appears in more than one trace; job sets must be disjoint"
                )));
            }
        }
    }
    let total_jobs = seen.len();
    let target = (fraction * total_jobs as f64).round() as usize;

    let mut order: Vec<usize> = (0..traces.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();
    let mut train_jobs = 0usize;
    for i in order {
        let size = traces[i].job_ids().len();
        if train_jobs < target.max(1) {
            train_jobs += size;
            train_idx.push(i);
        } else {
            test_idx.push(i);
        }
    }
    if test_idx.is_empty() {
        let moved = train_idx.pop().expect("at least two traces");
        test_idx.push(moved);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, t) in traces.into_iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(t);
        } else {
            test.push(t);
        }
    }
    Ok((train, test))
}
