//! Jobs, DAGs and synthetic workload generation.
//!
//! A job is a DAG of nodes; each node holds a number of homogeneous tasks
//! with a common per-task duration. Workloads are either batched (all jobs
//! arrive at t = 0) or continuous (Poisson arrivals). DAG shapes come from a
//! fixed set of versioned templates so that a given (shape, size, seed)
//! triple is stable across releases.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default executor count for generated workloads; override with
/// [`WorkloadSpec::with_executors`].
pub const DEFAULT_EXECUTORS: usize = 20;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct JobId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u32);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Per-task execution profile of a node. All tasks of a node are homogeneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    /// Seconds one task takes on one reference executor.
    pub duration_s: f64,
}

impl TaskTemplate {
    pub fn new(duration_s: f64) -> Result<Self> {
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(Error::validation(format!(
                "task duration must be positive and finite, got {duration_s}"
            )));
        }
        Ok(TaskTemplate { duration_s })
    }
}

/// One stage of a job: a set of homogeneous tasks plus dependency edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub node_id: NodeId,
    pub task_count: u32,
    pub task: TaskTemplate,
    pub parents: BTreeSet<NodeId>,
    pub children: BTreeSet<NodeId>,
}

impl DagNode {
    /// Total work of this node in executor-seconds.
    pub fn work_s(&self) -> f64 {
        self.task_count as f64 * self.task.duration_s
    }
}

/// A job: a DAG of nodes plus its arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDag {
    pub job_id: JobId,
    pub nodes: Vec<DagNode>,
    pub arrival_time_s: f64,
    /// Size class the job was generated from, when known. Used for JCT
    /// breakdown reporting; absent for hand-written workloads.
    pub size_class: Option<f64>,
}

impl JobDag {
    pub fn node(&self, id: NodeId) -> Option<&DagNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn total_tasks(&self) -> u64 {
        self.nodes.iter().map(|n| n.task_count as u64).sum()
    }

    pub fn total_work_s(&self) -> f64 {
        self.nodes.iter().map(|n| n.work_s()).sum()
    }

    /// Kahn topological sort. Fails on cycles; this is the acyclicity check.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
        for n in &self.nodes {
            indegree.insert(n.node_id, n.parents.len());
        }
        let mut queue: VecDeque<NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = queue.pop_front() {
            order.push(id);
            let node = self
                .node(id)
                .ok_or_else(|| Error::validation(format!("{}: missing node {id}", self.job_id)))?;
            for &child in &node.children {
                let d = indegree.get_mut(&child).ok_or_else(|| {
                    Error::validation(format!("{}: dangling edge {id}->{child}", self.job_id))
                })?;
                *d -= 1;
                if *d == 0 {
                    queue.push_back(child);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::validation(format!(
                "{}: dependency cycle detected",
                self.job_id
            )));
        }
        Ok(order)
    }

    /// Full structural validation: unique ids, resolvable edges, no
    /// self-edges, parent/child symmetry, positive tasks/durations,
    /// acyclicity and at least one source node.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::validation(format!("{}: job has no nodes", self.job_id)));
        }
        if !(self.arrival_time_s >= 0.0) {
            return Err(Error::validation(format!(
                "{}: arrival time must be nonnegative",
                self.job_id
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.node_id) {
                return Err(Error::validation(format!(
                    "{}: duplicate node id {}",
                    self.job_id, n.node_id
                )));
            }
            if n.task_count == 0 {
                return Err(Error::validation(format!(
                    "{}: node {} has zero tasks",
                    self.job_id, n.node_id
                )));
            }
            TaskTemplate::new(n.task.duration_s).map_err(|_| {
                Error::validation(format!(
                    "{}: node {} has invalid task duration {}",
                    self.job_id, n.node_id, n.task.duration_s
                ))
            })?;
        }
        for n in &self.nodes {
            for &p in &n.parents {
                if p == n.node_id {
                    return Err(Error::validation(format!(
                        "{}: self-edge on node {}",
                        self.job_id, n.node_id
                    )));
                }
                let parent = self.node(p).ok_or_else(|| {
                    Error::validation(format!(
                        "{}: node {} references missing parent {p}",
                        self.job_id, n.node_id
                    ))
                })?;
                if !parent.children.contains(&n.node_id) {
                    return Err(Error::validation(format!(
                        "{}: edge {p}->{} not mirrored in children set",
                        self.job_id, n.node_id
                    )));
                }
            }
            for &c in &n.children {
                let child = self.node(c).ok_or_else(|| {
                    Error::validation(format!(
                        "{}: node {} references missing child {c}",
                        self.job_id, n.node_id
                    ))
                })?;
                if !child.parents.contains(&n.node_id) {
                    return Err(Error::validation(format!(
                        "{}: edge {}->{c} not mirrored in parents set",
                        self.job_id, n.node_id
                    )));
                }
            }
        }
        if !self.nodes.iter().any(|n| n.parents.is_empty()) {
            return Err(Error::validation(format!(
                "{}: no source node",
                self.job_id
            )));
        }
        self.topo_order()?;
        Ok(())
    }
}

/// A full experiment workload: jobs plus the cluster size they target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub jobs: Vec<JobDag>,
    pub executor_count: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn with_executors(mut self, executor_count: usize) -> Self {
        self.executor_count = executor_count;
        self
    }

    /// Sort jobs by (arrival, job_id). Generators emit canonical specs; this
    /// exists for hand-assembled ones.
    pub fn canonicalize(&mut self) {
        self.jobs.sort_by(|a, b| {
            a.arrival_time_s
                .total_cmp(&b.arrival_time_s)
                .then(a.job_id.cmp(&b.job_id))
        });
    }

    pub fn validate(&self) -> Result<()> {
        if self.executor_count == 0 {
            return Err(Error::validation("executor count must be >= 1"));
        }
        let mut ids = BTreeSet::new();
        for job in &self.jobs {
            if !ids.insert(job.job_id) {
                return Err(Error::validation(format!("duplicate {}", job.job_id)));
            }
            job.validate()?;
        }
        for w in self.jobs.windows(2) {
            if w[1].arrival_time_s < w[0].arrival_time_s {
                return Err(Error::validation(
                    "job arrivals not nondecreasing; call canonicalize()",
                ));
            }
        }
        Ok(())
    }

    /// Shift every job id by `offset`, e.g. to keep ids globally unique
    /// across the train/test workload pair of a fidelity experiment.
    pub fn offset_job_ids(mut self, offset: u32) -> Self {
        for job in &mut self.jobs {
            job.job_id = JobId(job.job_id.0 + offset);
        }
        self
    }

    pub fn total_tasks(&self) -> u64 {
        self.jobs.iter().map(|j| j.total_tasks()).sum()
    }

    /// Mean task duration across all tasks, used for default normalization.
    pub fn mean_task_duration_s(&self) -> f64 {
        let total_tasks = self.total_tasks();
        if total_tasks == 0 {
            return 1.0;
        }
        let work: f64 = self.jobs.iter().map(|j| j.total_work_s()).sum();
        work / total_tasks as f64
    }
}

// ---------------------------------------------------------------------------
// Shape templates
// ---------------------------------------------------------------------------

/// Structural blueprint a job is instantiated from. Task counts and
/// durations here are the size-class-1.0 baseline.
#[derive(Debug, Clone)]
pub struct ShapeTemplate {
    pub nodes: Vec<TemplateNode>,
}

#[derive(Debug, Clone)]
pub struct TemplateNode {
    pub base_tasks: u32,
    pub base_duration_s: f64,
    pub parents: Vec<usize>,
}

const SHAPE_SALT: u64 = 0x5a7e_11ad_0c31_9b64;

/// Deterministic template for a shape id. Templates depend only on the id,
/// never on the workload seed, so generated workloads stay stable.
///
/// Families cycle through chain, fork-join, diamond, out-tree and layered
/// random DAGs; the id also perturbs node counts, task counts and durations.
pub fn shape_template(shape_id: u32) -> ShapeTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_SALT ^ (shape_id as u64).wrapping_mul(0x9e37));
    let mut nodes: Vec<TemplateNode> = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, parents: Vec<usize>| -> usize {
        let base_tasks = rng.random_range(1..=6);
        let base_duration_s = rng.random_range(0.5..3.0);
        nodes.push(TemplateNode {
            base_tasks,
            base_duration_s,
            parents,
        });
        nodes.len() - 1
    };
    match shape_id % 5 {
        0 => {
            // chain
            let len = rng.random_range(3..=8);
            let mut prev: Option<usize> = None;
            for _ in 0..len {
                let parents = prev.map(|p| vec![p]).unwrap_or_default();
                prev = Some(push(&mut rng, parents));
            }
        }
        1 => {
            // fork-join: source -> k parallel branches -> sink
            let src = push(&mut rng, vec![]);
            let branches = rng.random_range(2..=5);
            let mut tails = Vec::new();
            for _ in 0..branches {
                let len = rng.random_range(1..=3);
                let mut prev = src;
                for _ in 0..len {
                    prev = push(&mut rng, vec![prev]);
                }
                tails.push(prev);
            }
            push(&mut rng, tails);
        }
        2 => {
            // diamond with a variable middle width
            let src = push(&mut rng, vec![]);
            let width = rng.random_range(2..=4);
            let mids: Vec<usize> = (0..width).map(|_| push(&mut rng, vec![src])).collect();
            push(&mut rng, mids);
        }
        3 => {
            // out-tree
            let depth = rng.random_range(2..=3);
            let fanout = rng.random_range(2..=3);
            let root = push(&mut rng, vec![]);
            let mut frontier = vec![root];
            for _ in 0..depth {
                let mut next = Vec::new();
                for &p in &frontier {
                    for _ in 0..fanout {
                        next.push(push(&mut rng, vec![p]));
                    }
                }
                frontier = next;
                if nodes.len() > 24 {
                    break;
                }
            }
        }
        _ => {
            // layered random: every node draws >=1 parent from the previous layer
            let layers = rng.random_range(2..=4);
            let mut prev_layer: Vec<usize> = Vec::new();
            for layer in 0..layers {
                let width = rng.random_range(2..=4);
                let mut cur = Vec::new();
                for _ in 0..width {
                    let parents = if layer == 0 {
                        vec![]
                    } else {
                        let k = rng.random_range(1..=prev_layer.len());
                        let mut choice = prev_layer.clone();
                        choice.shuffle(&mut rng);
                        choice.truncate(k);
                        choice.sort_unstable();
                        choice
                    };
                    cur.push(push(&mut rng, parents));
                }
                prev_layer = cur;
            }
        }
    }
    ShapeTemplate { nodes }
}

/// Instantiate a template at a size class. Total node work scales exactly
/// linearly with the class: task counts grow ~sqrt(s) and the per-task
/// duration absorbs the rounding remainder.
fn instantiate(template: &ShapeTemplate, job_id: JobId, arrival_s: f64, size_class: f64) -> JobDag {
    let mut nodes: Vec<DagNode> = Vec::with_capacity(template.nodes.len());
    for (idx, t) in template.nodes.iter().enumerate() {
        let scaled = (t.base_tasks as f64 * size_class.sqrt()).round().max(1.0);
        let task_count = scaled as u32;
        let duration_s =
            t.base_duration_s * size_class * t.base_tasks as f64 / task_count as f64;
        nodes.push(DagNode {
            node_id: NodeId(idx as u32),
            task_count,
            task: TaskTemplate { duration_s },
            parents: t.parents.iter().map(|&p| NodeId(p as u32)).collect(),
            children: BTreeSet::new(),
        });
    }
    // derive children from parents
    let edges: Vec<(NodeId, NodeId)> = nodes
        .iter()
        .flat_map(|n| n.parents.iter().map(move |&p| (p, n.node_id)))
        .collect();
    for (parent, child) in edges {
        let p = nodes.iter_mut().find(|n| n.node_id == parent).unwrap();
        p.children.insert(child);
    }
    JobDag {
        job_id,
        nodes,
        arrival_time_s: arrival_s,
        size_class: Some(size_class),
    }
}

fn check_generator_args(n_jobs: usize, size_classes: &[f64], n_shapes: u32) -> Result<()> {
    if n_jobs == 0 {
        return Err(Error::validation("n_jobs must be >= 1"));
    }
    if size_classes.is_empty() {
        return Err(Error::validation("at least one size class required"));
    }
    if let Some(bad) = size_classes.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::validation(format!("invalid size class {bad}")));
    }
    if n_shapes == 0 {
        return Err(Error::validation("n_shapes must be >= 1"));
    }
    Ok(())
}

/// Batched workload: `n_jobs` jobs, all arriving at t = 0, shapes and size
/// classes sampled uniformly. Deterministic per seed.
pub fn generate_batched(
    n_jobs: usize,
    size_classes: &[f64],
    n_shapes: u32,
    seed: u64,
) -> Result<WorkloadSpec> {
    check_generator_args(n_jobs, size_classes, n_shapes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = (0..n_jobs)
        .map(|i| {
            let shape_id = rng.random_range(0..n_shapes);
            let size = size_classes[rng.random_range(0..size_classes.len())];
            instantiate(&shape_template(shape_id), JobId(i as u32), 0.0, size)
        })
        .collect();
    let spec = WorkloadSpec {
        jobs,
        executor_count: DEFAULT_EXECUTORS,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Continuous-arrival workload: interarrival gaps are i.i.d. exponential
/// with the given mean. Jobs come out sorted by arrival time.
pub fn generate_poisson(
    n_jobs: usize,
    mean_interarrival_s: f64,
    size_classes: &[f64],
    n_shapes: u32,
    seed: u64,
) -> Result<WorkloadSpec> {
    check_generator_args(n_jobs, size_classes, n_shapes)?;
    if !(mean_interarrival_s > 0.0) || !mean_interarrival_s.is_finite() {
        return Err(Error::validation(format!(
            "mean interarrival must be positive, got {mean_interarrival_s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / mean_interarrival_s)
        .map_err(|e| Error::validation(format!("exponential distribution: {e}")))?;
    let mut clock = 0.0;
    let jobs = (0..n_jobs)
        .map(|i| {
            clock += exp.sample(&mut rng);
            let shape_id = rng.random_range(0..n_shapes);
            let size = size_classes[rng.random_range(0..size_classes.len())];
            instantiate(&shape_template(shape_id), JobId(i as u32), clock, size)
        })
        .collect();
    let spec = WorkloadSpec {
        jobs,
        executor_count: DEFAULT_EXECUTORS,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: MetaBody,
}

#[derive(Serialize, Deserialize)]
struct MetaBody {
    executors: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct JobLine {
    job_id: u32,
    arrival_s: f64,
    nodes: Vec<NodeLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    size_class: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct NodeLine {
    id: u32,
    tasks: u32,
    dur_s: f64,
    parents: Vec<u32>,
}

/// Write a workload as JSONL: a meta header line followed by one job per line.
pub fn save_workload(spec: &WorkloadSpec, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_workload(spec, &mut w)?;
    w.flush()?;
    Ok(())
}

/// SHA-256 of the canonical JSONL serialization, hex-encoded. Links traces
/// and models back to the exact workload they came from.
pub fn workload_hash(spec: &WorkloadSpec) -> String {
    use sha2::{Digest, Sha256};
    let mut buf = Vec::new();
    write_workload(spec, &mut buf).expect("in-memory serialization");
    let digest = Sha256::digest(&buf);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_workload(spec: &WorkloadSpec, w: &mut impl Write) -> Result<()> {
    let meta = MetaLine {
        meta: MetaBody {
            executors: spec.executor_count,
            seed: spec.seed,
        },
    };
    writeln!(w, "{}", serde_json::to_string(&meta)?)?;
    for job in &spec.jobs {
        let line = JobLine {
            job_id: job.job_id.0,
            arrival_s: job.arrival_time_s,
            nodes: job
                .nodes
                .iter()
                .map(|n| NodeLine {
                    id: n.node_id.0,
                    tasks: n.task_count,
                    dur_s: n.task.duration_s,
                    parents: n.parents.iter().map(|p| p.0).collect(),
                })
                .collect(),
            size_class: job.size_class,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Load a JSONL workload, validating structure as it goes. Errors carry the
/// 1-based line number and, where known, the offending job/node.
pub fn load_workload(path: impl AsRef<Path>) -> Result<WorkloadSpec> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty workload file"))?;
    let first = first?;
    let meta: MetaLine = serde_json::from_str(&first)
        .map_err(|e| Error::parse(1, format!("bad meta header: {e}")))?;

    let mut jobs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JobLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("bad job line: {e}")))?;
        let job_id = JobId(raw.job_id);
        let mut nodes: Vec<DagNode> = Vec::with_capacity(raw.nodes.len());
        for n in &raw.nodes {
            nodes.push(DagNode {
                node_id: NodeId(n.id),
                task_count: n.tasks,
                task: TaskTemplate { duration_s: n.dur_s },
                parents: n.parents.iter().map(|&p| NodeId(p)).collect(),
                children: BTreeSet::new(),
            });
        }
        // derive children, catching dangling parent references
        let edges: Vec<(NodeId, NodeId)> = nodes
            .iter()
            .flat_map(|n| n.parents.iter().map(move |&p| (p, n.node_id)))
            .collect();
        for (parent, child) in edges {
            match nodes.iter_mut().find(|n| n.node_id == parent) {
                Some(p) => {
                    p.children.insert(child);
                }
                None => {
                    return Err(Error::parse(
                        line_no,
                        format!("{job_id}: node {child} references missing node {parent}"),
                    ))
                }
            }
        }
        let job = JobDag {
            job_id,
            nodes,
            arrival_time_s: raw.arrival_s,
            size_class: raw.size_class,
        };
        job.validate()
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        jobs.push(job);
    }

    let mut spec = WorkloadSpec {
        jobs,
        executor_count: meta.meta.executors,
        seed: meta.meta.seed,
    };
    spec.canonicalize();
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_generation() {
        let spec = generate_batched(1, &[1.0], 1, 7).unwrap();
        assert_eq!(spec.jobs.len(), 1);
        assert_eq!(spec.jobs[0].arrival_time_s, 0.0);
        spec.jobs[0].topo_order().unwrap();
    }

    #[test]
    fn batched_spans_seven_classes() {
        let sizes = [2.0, 5.0, 10.0, 20.0, 50.0, 80.0, 100.0];
        let spec = generate_batched(20, &sizes, 22, 1).unwrap();
        assert_eq!(spec.jobs.len(), 20);
        assert!(spec.jobs.iter().all(|j| j.arrival_time_s == 0.0));
        for job in &spec.jobs {
            assert!(sizes.contains(&job.size_class.unwrap()));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_batched(20, &[2.0, 5.0, 10.0], 22, 1).unwrap();
        let b = generate_batched(20, &[2.0, 5.0, 10.0], 22, 1).unwrap();
        assert_eq!(a, b);
        let p1 = generate_poisson(50, 25.0, &[1.0, 2.0], 5, 3).unwrap();
        let p2 = generate_poisson(50, 25.0, &[1.0, 2.0], 5, 3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn invalid_size_class_rejected() {
        assert!(generate_batched(1, &[0.0], 1, 7).is_err());
        assert!(generate_batched(1, &[-2.0], 1, 7).is_err());
        assert!(generate_poisson(0, 25.0, &[1.0], 1, 7).is_err());
    }

    #[test]
    fn poisson_mean_gap_tpch_scale() {
        let spec = generate_poisson(5000, 25.0, &[1.0], 5, 42).unwrap();
        let gaps: Vec<f64> = mean_gaps(&spec);
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 25.0).abs() < 1.0, "mean gap {mean}");
    }

    #[test]
    fn poisson_mean_gap_small_interval() {
        let spec = generate_poisson(1000, 2.5, &[1.0], 5, 9).unwrap();
        let gaps = mean_gaps(&spec);
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 2.5).abs() < 0.2, "mean gap {mean}");
    }

    #[test]
    fn poisson_single_job() {
        let spec = generate_poisson(1, 25.0, &[1.0], 1, 3).unwrap();
        assert_eq!(spec.jobs.len(), 1);
        assert!(spec.jobs[0].arrival_time_s >= 0.0);
    }

    /// Kolmogorov-Smirnov test of arrival gaps against Exp(mean) at alpha=0.01.
    #[test]
    fn poisson_gaps_pass_ks() {
        let mean = 10.0;
        let spec = generate_poisson(2000, mean, &[1.0], 5, 17).unwrap();
        let mut gaps = mean_gaps(&spec);
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        let mut d: f64 = 0.0;
        for (i, g) in gaps.iter().enumerate() {
            let cdf = 1.0 - (-g / mean).exp();
            let hi = (i as f64 + 1.0) / n - cdf;
            let lo = cdf - i as f64 / n;
            d = d.max(hi).max(lo);
        }
        // critical value at alpha = 0.01
        let crit = 1.628 / n.sqrt();
        assert!(d < crit, "KS statistic {d} >= {crit}");
    }

    fn mean_gaps(spec: &WorkloadSpec) -> Vec<f64> {
        let mut arrivals: Vec<f64> = spec.jobs.iter().map(|j| j.arrival_time_s).collect();
        let mut gaps = vec![arrivals[0]];
        arrivals.windows(2).for_each(|w| gaps.push(w[1] - w[0]));
        gaps
    }

    #[test]
    fn all_templates_are_valid_dags() {
        for shape in 0..40 {
            let job = instantiate(&shape_template(shape), JobId(0), 0.0, 5.0);
            job.validate().unwrap();
        }
    }

    #[test]
    fn size_class_scales_work_linearly() {
        let t = shape_template(3);
        let base: f64 = instantiate(&t, JobId(0), 0.0, 1.0).total_work_s();
        for s in [2.0, 10.0, 100.0] {
            let scaled = instantiate(&t, JobId(0), 0.0, s).total_work_s();
            assert!(
                (scaled - base * s).abs() < 1e-6 * scaled,
                "work {scaled} vs {}",
                base * s
            );
        }
    }

    #[test]
    fn roundtrip_identity() {
        let spec = generate_batched(5, &[1.0, 4.0], 7, 11).unwrap();
        let dir = std::env::temp_dir().join("dagsched_wl_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.jsonl");
        save_workload(&spec, &path).unwrap();
        let loaded = load_workload(&path).unwrap();
        assert_eq!(spec, loaded);
    }

    #[test]
    fn dangling_edge_names_node_and_line() {
        let dir = std::env::temp_dir().join("dagsched_wl_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"meta\":{\"executors\":2,\"seed\":0}}\n\
             {\"job_id\":0,\"arrival_s\":0.0,\"nodes\":[{\"id\":0,\"tasks\":1,\"dur_s\":1.0,\"parents\":[9]}]}\n",
        )
        .unwrap();
        let err = load_workload(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("n9"), "{msg}");
    }

    #[test]
    fn cycle_rejected() {
        let dir = std::env::temp_dir().join("dagsched_wl_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cycle.jsonl");
        std::fs::write(
            &path,
            "{\"meta\":{\"executors\":2,\"seed\":0}}\n\
             {\"job_id\":0,\"arrival_s\":0.0,\"nodes\":[\
              {\"id\":0,\"tasks\":1,\"dur_s\":1.0,\"parents\":[1]},\
              {\"id\":1,\"tasks\":1,\"dur_s\":1.0,\"parents\":[0]}]}\n",
        )
        .unwrap();
        let err = load_workload(&path).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }
}
