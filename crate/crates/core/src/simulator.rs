//! Deterministic discrete-event simulation of a multi-executor cluster.
//!
//! Time advances event by event (job arrivals, task finishes). After every
//! batch of same-instant events, scheduling stages fire back-to-back until
//! no idle executor or no schedulable node remains, or the policy declines.
//! Event ties resolve as: arrivals before finishes, then by job, node and
//! executor id, so a run is a pure function of (workload, policy, seeds).

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, CpInfo, CpMetric, FeatureVector, NormalizationConfig};
use crate::schedulers::{fair_caps, AllocationMode, Decision, SchedulerPolicy, SchedulingDecision};
use crate::trace::{CandidateRecord, MemorySink, StageRecord, TraceFile, TraceHeader, TraceSink};
use crate::workload::{workload_hash, JobDag, JobId, NodeId, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExecId(pub u32);

impl fmt::Display for ExecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExecutorStatus {
    Idle,
    Busy {
        job_id: JobId,
        node_id: NodeId,
        task_finish_time_s: f64,
    },
}

/// One executor slot. `assigned_job` lingers after the executor goes idle
/// until the job completes or the slot is re-dispatched elsewhere; F1 counts
/// these associations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutorState {
    pub exec_id: ExecId,
    pub status: ExecutorStatus,
    pub assigned_job: Option<JobId>,
}

/// Per-node progress counters. `remaining_tasks` means not yet dispatched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRuntime {
    pub remaining_tasks: u32,
    pub dispatched_tasks: u32,
    pub finished_tasks: u32,
    pub ready: bool,
    pending_parents: u32,
}

#[derive(Debug)]
struct JobRuntime {
    nodes: BTreeMap<NodeId, NodeRuntime>,
    remaining_tasks_total: u64,
    nodes_unfinished: usize,
    completion_s: Option<f64>,
}

impl JobRuntime {
    fn new(dag: &JobDag) -> Self {
        let nodes: BTreeMap<NodeId, NodeRuntime> = dag
            .nodes
            .iter()
            .map(|n| {
                (
                    n.node_id,
                    NodeRuntime {
                        remaining_tasks: n.task_count,
                        dispatched_tasks: 0,
                        finished_tasks: 0,
                        ready: n.parents.is_empty(),
                        pending_parents: n.parents.len() as u32,
                    },
                )
            })
            .collect();
        JobRuntime {
            remaining_tasks_total: dag.total_tasks(),
            nodes_unfinished: nodes.len(),
            nodes,
            completion_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    JobArrival {
        job: JobId,
    },
    TaskFinish {
        job: JobId,
        node: NodeId,
        exec: ExecId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time_s: f64,
    kind: EventKind,
}

impl Event {
    /// Tie order at equal times: arrivals first, then job, node, executor.
    fn key(&self) -> (u8, u32, u32, u32) {
        match self.kind {
            EventKind::JobArrival { job } => (0, job.0, 0, 0),
            EventKind::TaskFinish { job, node, exec } => (1, job.0, node.0, exec.0),
        }
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then_with(|| self.key().cmp(&other.key()))
    }
}

/// Simulation knobs. The normalization applies to recorded trace features
/// only; policies normalize on their own terms.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub normalization: NormalizationConfig,
    pub cp_metric: CpMetric,
    /// Fixed delay added when an executor switches to a different job.
    pub migration_delay_s: f64,
    pub record_timeline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            normalization: NormalizationConfig::identity(),
            cp_metric: CpMetric::Hops,
            migration_delay_s: 0.0,
            record_timeline: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: JobId,
    pub arrival_s: f64,
    pub completion_s: f64,
    pub jct_s: f64,
    pub size_class: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub t_s: f64,
    pub concurrent_jobs: usize,
    pub busy_executors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub jobs: Vec<JobOutcome>,
    pub avg_jct_s: f64,
    pub timeline: Vec<TimelineSample>,
    pub stages: u64,
    /// Stages where the policy declined despite idle executors and ready work.
    pub declined_stages: u64,
}

impl SimResult {
    pub fn jct_of(&self, job: JobId) -> Option<f64> {
        self.jobs.iter().find(|j| j.job_id == job).map(|j| j.jct_s)
    }

    /// Time-weighted mean of the concurrent-job step function.
    pub fn mean_concurrent_jobs(&self) -> f64 {
        step_mean(&self.timeline, |s| s.concurrent_jobs as f64)
    }

    /// Time-weighted mean busy-executor count.
    pub fn mean_busy_executors(&self) -> f64 {
        step_mean(&self.timeline, |s| s.busy_executors as f64)
    }
}

fn step_mean(samples: &[TimelineSample], value: impl Fn(&TimelineSample) -> f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    if samples.len() == 1 {
        return value(&samples[0]);
    }
    let span = samples.last().unwrap().t_s - samples[0].t_s;
    if span <= 0.0 {
        return value(&samples[0]);
    }
    let mut acc = 0.0;
    for w in samples.windows(2) {
        acc += value(&w[0]) * (w[1].t_s - w[0].t_s);
    }
    acc / span
}

// ---------------------------------------------------------------------------
// Stage view
// ---------------------------------------------------------------------------

/// A schedulable (job, node) pair at the current stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub job_id: JobId,
    pub node_id: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct JobAgg {
    assigned: usize,
    held: usize,
    just_freed: bool,
    remaining_tasks: u64,
    remaining_work_s: f64,
}

/// Read-only snapshot a policy decides from. Candidates are the ready nodes
/// with undispatched tasks whose job can still take executors under the
/// policy's allocation mode.
pub struct StageView<'a> {
    clock_s: f64,
    executor_count: usize,
    idle_executors: usize,
    jobs_in_system: &'a [JobId],
    arrivals: &'a BTreeMap<JobId, f64>,
    prev_scheduled_job: Option<JobId>,
    candidates: Vec<Candidate>,
    caps: BTreeMap<JobId, usize>,
    aggs: BTreeMap<JobId, JobAgg>,
    cp: BTreeMap<JobId, BTreeMap<NodeId, CpInfo>>,
    dags: BTreeMap<JobId, &'a JobDag>,
    node_remaining: BTreeMap<(JobId, NodeId), u32>,
}

impl StageView<'_> {
    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn executor_count(&self) -> usize {
        self.executor_count
    }

    pub fn idle_executors(&self) -> usize {
        self.idle_executors
    }

    /// Jobs currently in the system, in arrival order (the sequence I).
    pub fn jobs_in_system(&self) -> &[JobId] {
        self.jobs_in_system
    }

    pub fn arrival_s(&self, job: JobId) -> f64 {
        self.arrivals.get(&job).copied().unwrap_or(f64::INFINITY)
    }

    pub fn prev_scheduled_job(&self) -> Option<JobId> {
        self.prev_scheduled_job
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    /// Per-job executor cap under the active allocation mode.
    pub fn cap(&self, job: JobId) -> usize {
        self.caps.get(&job).copied().unwrap_or(self.executor_count)
    }

    /// Executors busy running tasks of this job.
    pub fn held(&self, job: JobId) -> usize {
        self.aggs.get(&job).map(|a| a.held).unwrap_or(0)
    }

    /// Executors associated with this job (busy or lingering idle); F1.
    pub fn assigned(&self, job: JobId) -> usize {
        self.aggs.get(&job).map(|a| a.assigned).unwrap_or(0)
    }

    /// Executors this job may still be granted: cap minus held.
    pub fn fair_budget(&self, job: JobId) -> usize {
        self.cap(job).saturating_sub(self.held(job))
    }

    pub fn job_remaining_work_s(&self, job: JobId) -> f64 {
        self.aggs.get(&job).map(|a| a.remaining_work_s).unwrap_or(0.0)
    }

    pub fn job_remaining_tasks(&self, job: JobId) -> u64 {
        self.aggs.get(&job).map(|a| a.remaining_tasks).unwrap_or(0)
    }

    /// Undispatched tasks of a candidate node (0 for unknown nodes).
    pub fn node_remaining(&self, job: JobId, node: NodeId) -> u32 {
        self.node_remaining.get(&(job, node)).copied().unwrap_or(0)
    }

    /// F1-F10 for a candidate of this stage.
    pub fn features(&self, c: &Candidate, norm: &NormalizationConfig) -> FeatureVector {
        let agg = self.aggs.get(&c.job_id).expect("candidate job aggregated");
        let cp = &self.cp[&c.job_id][&c.node_id];
        let dag = self.dags[&c.job_id];
        let node = dag.node(c.node_id).expect("candidate node exists");
        features::assemble(
            &features::AssembleInputs {
                executors_assigned_to_job: agg.assigned,
                job_just_freed: agg.just_freed,
                idle_executors: self.idle_executors,
                node_remaining_tasks: self.node_remaining[&(c.job_id, c.node_id)],
                task_duration_s: node.task.duration_s,
                cp_tasks: cp.tasks,
                cp_work_s: cp.work_s,
                job_remaining_tasks: agg.remaining_tasks,
                job_remaining_work_s: agg.remaining_work_s,
                locality: self.prev_scheduled_job == Some(c.job_id),
            },
            norm,
        )
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct Simulation<'a> {
    dags: BTreeMap<JobId, &'a JobDag>,
    arrivals: BTreeMap<JobId, f64>,
    config: &'a RunConfig,

    clock_s: f64,
    executors: Vec<ExecutorState>,
    idle_count: usize,
    jobs_in_system: Vec<JobId>,
    runtimes: BTreeMap<JobId, JobRuntime>,
    event_queue: BinaryHeap<Reverse<Event>>,
    prev_scheduled_job: Option<JobId>,
    job_exec_cap: BTreeMap<JobId, usize>,
    just_finished_jobs: BTreeSet<JobId>,
    stage_idx: u64,

    total_tasks: u64,
    finished_tasks: u64,
    outcomes: Vec<JobOutcome>,
    timeline: Vec<TimelineSample>,
    declined: u64,
}

impl<'a> Simulation<'a> {
    fn new(spec: &'a WorkloadSpec, config: &'a RunConfig) -> Result<Self> {
        spec.validate()?;
        config.normalization.validate()?;
        if config.migration_delay_s < 0.0 {
            return Err(Error::validation("migration delay must be nonnegative"));
        }
        let dags: BTreeMap<JobId, &JobDag> =
            spec.jobs.iter().map(|j| (j.job_id, j)).collect();
        let arrivals: BTreeMap<JobId, f64> = spec
            .jobs
            .iter()
            .map(|j| (j.job_id, j.arrival_time_s))
            .collect();
        let mut event_queue = BinaryHeap::new();
        for job in &spec.jobs {
            event_queue.push(Reverse(Event {
                time_s: job.arrival_time_s,
                kind: EventKind::JobArrival { job: job.job_id },
            }));
        }
        let executors = (0..spec.executor_count)
            .map(|i| ExecutorState {
                exec_id: ExecId(i as u32),
                status: ExecutorStatus::Idle,
                assigned_job: None,
            })
            .collect();
        Ok(Simulation {
            dags,
            arrivals,
            config,
            clock_s: 0.0,
            executors,
            idle_count: spec.executor_count,
            jobs_in_system: Vec::new(),
            runtimes: BTreeMap::new(),
            event_queue,
            prev_scheduled_job: None,
            job_exec_cap: BTreeMap::new(),
            just_finished_jobs: BTreeSet::new(),
            stage_idx: 0,
            total_tasks: spec.total_tasks(),
            finished_tasks: 0,
            outcomes: Vec::new(),
            timeline: Vec::new(),
            declined: 0,
        })
    }

    fn next_event_time(&self) -> Option<f64> {
        self.event_queue.peek().map(|Reverse(e)| e.time_s)
    }

    /// Pop and apply every event whose time equals `t` exactly.
    fn advance_to(&mut self, t: f64) -> Result<()> {
        assert!(
            t >= self.clock_s,
            "event time {t} precedes clock {}",
            self.clock_s
        );
        self.clock_s = t;
        self.just_finished_jobs.clear();
        while let Some(Reverse(ev)) = self.event_queue.peek() {
            if ev.time_s != t {
                break;
            }
            let Reverse(ev) = self.event_queue.pop().expect("peeked");
            self.apply_event(ev)?;
        }
        Ok(())
    }

    fn apply_event(&mut self, ev: Event) -> Result<()> {
        match ev.kind {
            EventKind::JobArrival { job } => {
                let dag = self.dags[&job];
                self.runtimes.insert(job, JobRuntime::new(dag));
                self.jobs_in_system.push(job);
            }
            EventKind::TaskFinish { job, node, exec } => {
                let slot = &mut self.executors[exec.0 as usize];
                debug_assert!(matches!(
                    slot.status,
                    ExecutorStatus::Busy { job_id, node_id, .. }
                        if job_id == job && node_id == node
                ));
                slot.status = ExecutorStatus::Idle;
                self.idle_count += 1;
                self.finished_tasks += 1;
                self.just_finished_jobs.insert(job);

                let dag = self.dags[&job];
                let runtime = self.runtimes.get_mut(&job).expect("job runtime");
                let task_count = dag.node(node).expect("node").task_count;
                let node_rt = runtime.nodes.get_mut(&node).expect("node runtime");
                node_rt.finished_tasks += 1;
                debug_assert!(node_rt.finished_tasks <= node_rt.dispatched_tasks);
                if node_rt.finished_tasks == task_count {
                    // dependency resolution
                    for child in &dag.node(node).expect("node").children {
                        let child_rt = runtime.nodes.get_mut(child).expect("child runtime");
                        child_rt.pending_parents -= 1;
                        if child_rt.pending_parents == 0 {
                            child_rt.ready = true;
                        }
                    }
                    runtime.nodes_unfinished -= 1;
                    if runtime.nodes_unfinished == 0 {
                        self.complete_job(job);
                    }
                }
            }
        }
        Ok(())
    }

    fn complete_job(&mut self, job: JobId) {
        let runtime = self.runtimes.get_mut(&job).expect("job runtime");
        runtime.completion_s = Some(self.clock_s);
        let arrival = self.arrivals[&job];
        self.outcomes.push(JobOutcome {
            job_id: job,
            arrival_s: arrival,
            completion_s: self.clock_s,
            jct_s: self.clock_s - arrival,
            size_class: self.dags[&job].size_class,
        });
        self.jobs_in_system.retain(|&j| j != job);
        self.job_exec_cap.remove(&job);
        for slot in &mut self.executors {
            if slot.assigned_job == Some(job) {
                debug_assert!(matches!(slot.status, ExecutorStatus::Idle));
                slot.assigned_job = None;
            }
        }
    }

    fn build_view(&self, mode: AllocationMode) -> StageView<'_> {
        let caps = match mode {
            AllocationMode::FairShare => fair_caps(self.executors.len(), &self.jobs_in_system),
            AllocationMode::AllIdle => self
                .jobs_in_system
                .iter()
                .map(|&j| (j, self.executors.len()))
                .collect(),
        };

        let mut aggs: BTreeMap<JobId, JobAgg> = BTreeMap::new();
        for &job in &self.jobs_in_system {
            let runtime = &self.runtimes[&job];
            let dag = self.dags[&job];
            let mut remaining_work = 0.0;
            for (id, rt) in &runtime.nodes {
                remaining_work +=
                    rt.remaining_tasks as f64 * dag.node(*id).expect("node").task.duration_s;
            }
            aggs.insert(
                job,
                JobAgg {
                    assigned: 0,
                    held: 0,
                    just_freed: self.just_finished_jobs.contains(&job),
                    remaining_tasks: runtime.remaining_tasks_total,
                    remaining_work_s: remaining_work,
                },
            );
        }
        for slot in &self.executors {
            if let Some(job) = slot.assigned_job {
                if let Some(agg) = aggs.get_mut(&job) {
                    agg.assigned += 1;
                    if matches!(slot.status, ExecutorStatus::Busy { .. }) {
                        agg.held += 1;
                    }
                }
            }
        }

        let mut candidates = Vec::new();
        let mut node_remaining = BTreeMap::new();
        let mut cp = BTreeMap::new();
        for &job in &self.jobs_in_system {
            if let AllocationMode::FairShare = mode {
                let cap = caps.get(&job).copied().unwrap_or(0);
                if cap <= aggs[&job].held {
                    continue;
                }
            }
            let runtime = &self.runtimes[&job];
            let mut any = false;
            for (&id, rt) in &runtime.nodes {
                if rt.ready && rt.remaining_tasks > 0 {
                    candidates.push(Candidate {
                        job_id: job,
                        node_id: id,
                    });
                    any = true;
                }
            }
            if any {
                let dag = self.dags[&job];
                for (&id, rt) in &runtime.nodes {
                    node_remaining.insert((job, id), rt.remaining_tasks);
                }
                let rem = |n: NodeId| runtime.nodes.get(&n).map(|r| r.remaining_tasks).unwrap_or(0);
                cp.insert(
                    job,
                    features::cp_aggregates(dag, &rem, self.config.cp_metric),
                );
            }
        }

        StageView {
            clock_s: self.clock_s,
            executor_count: self.executors.len(),
            idle_executors: self.idle_count,
            jobs_in_system: &self.jobs_in_system,
            arrivals: &self.arrivals,
            prev_scheduled_job: self.prev_scheduled_job,
            candidates,
            caps,
            aggs,
            cp,
            dags: self.dags.clone(),
            node_remaining,
        }
    }

    fn validate_decision(
        &self,
        view: &StageView<'_>,
        d: &SchedulingDecision,
    ) -> Result<()> {
        let stage = self.stage_idx;
        if !view
            .candidates
            .iter()
            .any(|c| c.job_id == d.job_id && c.node_id == d.node_id)
        {
            let reason = match self.runtimes.get(&d.job_id) {
                None => "job not in system".to_string(),
                Some(rt) => match rt.nodes.get(&d.node_id) {
                    None => format!("unknown node {}", d.node_id),
                    Some(n) if !n.ready => "node has unresolved parents".to_string(),
                    Some(n) if n.remaining_tasks == 0 => {
                        "node has no undispatched tasks".to_string()
                    }
                    Some(_) => "job is at its executor cap".to_string(),
                },
            };
            return Err(Error::contract(
                stage,
                format!("decision {}/{} rejected: {reason}", d.job_id, d.node_id),
            ));
        }
        if d.executor_budget == 0 {
            return Err(Error::contract(stage, "executor budget must be >= 1"));
        }
        if d.executor_budget > view.idle_executors {
            return Err(Error::contract(
                stage,
                format!(
                    "budget {} over-allocates: only {} idle",
                    d.executor_budget, view.idle_executors
                ),
            ));
        }
        let cap = view.cap(d.job_id);
        let held = view.held(d.job_id);
        if d.executor_budget + held > cap {
            return Err(Error::contract(
                stage,
                format!(
                    "budget {} would put {} above its cap ({held} held, cap {cap})",
                    d.executor_budget, d.job_id
                ),
            ));
        }
        Ok(())
    }

    /// Dispatch up to min(budget, remaining) tasks of the chosen node onto
    /// the lowest-numbered idle executors. Returns the dispatched count.
    fn dispatch(&mut self, d: &SchedulingDecision, cap: usize) -> usize {
        let dag = self.dags[&d.job_id];
        let duration = dag.node(d.node_id).expect("node").task.duration_s;
        let runtime = self.runtimes.get_mut(&d.job_id).expect("job runtime");
        let node_rt = runtime.nodes.get_mut(&d.node_id).expect("node runtime");
        let k = d.executor_budget.min(node_rt.remaining_tasks as usize);
        debug_assert!(k >= 1);

        node_rt.remaining_tasks -= k as u32;
        node_rt.dispatched_tasks += k as u32;
        runtime.remaining_tasks_total -= k as u64;

        let mut dispatched = 0;
        for slot in &mut self.executors {
            if dispatched == k {
                break;
            }
            if !matches!(slot.status, ExecutorStatus::Idle) {
                continue;
            }
            let migration = match slot.assigned_job {
                Some(prev) if prev != d.job_id => self.config.migration_delay_s,
                _ => 0.0,
            };
            let finish = self.clock_s + migration + duration;
            slot.status = ExecutorStatus::Busy {
                job_id: d.job_id,
                node_id: d.node_id,
                task_finish_time_s: finish,
            };
            slot.assigned_job = Some(d.job_id);
            self.event_queue.push(Reverse(Event {
                time_s: finish,
                kind: EventKind::TaskFinish {
                    job: d.job_id,
                    node: d.node_id,
                    exec: slot.exec_id,
                },
            }));
            dispatched += 1;
        }
        debug_assert_eq!(dispatched, k);
        self.idle_count -= k;

        self.job_exec_cap.insert(d.job_id, cap);
        self.prev_scheduled_job = Some(d.job_id);
        self.stage_idx += 1;

        let busy = self
            .executors
            .iter()
            .filter(|e| matches!(e.status, ExecutorStatus::Busy { .. }))
            .count();
        assert_eq!(
            busy + self.idle_count,
            self.executors.len(),
            "executor conservation violated"
        );
        k
    }

    fn make_record(&self, view: &StageView<'_>, d: &SchedulingDecision) -> StageRecord {
        let candidates = view
            .candidates
            .iter()
            .map(|c| CandidateRecord {
                job_id: c.job_id,
                node_id: c.node_id,
                features: view.features(c, &self.config.normalization),
            })
            .collect();
        StageRecord {
            stage_idx: self.stage_idx,
            clock_s: self.clock_s,
            chosen_job: d.job_id,
            chosen_node: d.node_id,
            executor_budget: d.executor_budget, // realized count patched in by caller
            candidates,
            prev_job: self.prev_scheduled_job,
        }
    }

    fn run_stages(
        &mut self,
        scheduler: &mut dyn SchedulerPolicy,
        hooks: &mut Option<&mut dyn TraceSink>,
    ) -> Result<()> {
        loop {
            if self.idle_count == 0 {
                return Ok(());
            }
            let mode = scheduler.allocation_mode();
            let (decision, mut record, cap) = {
                let view = self.build_view(mode);
                if view.candidates().is_empty() {
                    return Ok(());
                }
                match scheduler.decide(&view) {
                    Decision::Idle => {
                        self.declined += 1;
                        log::debug!(
                            "stage {}: policy declined with {} candidates and {} idle",
                            self.stage_idx,
                            view.candidates().len(),
                            self.idle_count
                        );
                        return Ok(());
                    }
                    Decision::Schedule(d) => {
                        self.validate_decision(&view, &d)?;
                        let rec = hooks.is_some().then(|| self.make_record(&view, &d));
                        (d, rec, view.cap(d.job_id))
                    }
                }
            };
            let dispatched = self.dispatch(&decision, cap);
            if let Some(h) = hooks {
                let mut rec = record.take().expect("record built when hooks set");
                rec.executor_budget = dispatched;
                h.record(&rec)?;
            }
        }
    }

    fn sample_timeline(&mut self) {
        if !self.config.record_timeline {
            return;
        }
        let busy = self.executors.len() - self.idle_count;
        self.timeline.push(TimelineSample {
            t_s: self.clock_s,
            concurrent_jobs: self.jobs_in_system.len(),
            busy_executors: busy,
        });
    }

    fn finalize(mut self) -> Result<SimResult> {
        if !self.jobs_in_system.is_empty() {
            return Err(Error::contract(
                self.stage_idx,
                format!(
                    "simulation drained its event queue with {} incomplete job(s)",
                    self.jobs_in_system.len()
                ),
            ));
        }
        assert_eq!(
            self.finished_tasks, self.total_tasks,
            "exactly-once violated: {} of {} tasks finished",
            self.finished_tasks, self.total_tasks
        );
        assert_eq!(self.idle_count, self.executors.len());
        self.outcomes.sort_by_key(|o| o.job_id);
        let avg = if self.outcomes.is_empty() {
            0.0
        } else {
            self.outcomes.iter().map(|o| o.jct_s).sum::<f64>() / self.outcomes.len() as f64
        };
        Ok(SimResult {
            jobs: self.outcomes,
            avg_jct_s: avg,
            timeline: self.timeline,
            stages: self.stage_idx,
            declined_stages: self.declined,
        })
    }
}

/// Run a workload to completion under a policy. `hooks` receives one record
/// per scheduling stage.
pub fn run(
    spec: &WorkloadSpec,
    scheduler: &mut dyn SchedulerPolicy,
    mut hooks: Option<&mut dyn TraceSink>,
    config: &RunConfig,
) -> Result<SimResult> {
    let mut sim = Simulation::new(spec, config)?;
    while let Some(t) = sim.next_event_time() {
        sim.advance_to(t)?;
        sim.run_stages(scheduler, &mut hooks)?;
        sim.sample_timeline();
    }
    sim.finalize()
}

/// Run and capture the trace in memory, stamping a header that ties it to
/// the workload and normalization.
pub fn run_recorded(
    spec: &WorkloadSpec,
    scheduler: &mut dyn SchedulerPolicy,
    scheduler_seed: u64,
    config: &RunConfig,
) -> Result<(SimResult, TraceFile)> {
    let header = TraceHeader {
        workload_hash: workload_hash(spec),
        normalization: config.normalization,
        scheduler: scheduler.name().to_string(),
        seed: scheduler_seed,
    };
    let mut sink = MemorySink::new(header);
    let result = run(spec, scheduler, Some(&mut sink), config)?;
    Ok((result, sink.into_trace()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::{FairScheduler, FifoScheduler, SjfScheduler};
    use crate::workload::{generate_batched, DagNode, TaskTemplate};
    use std::collections::BTreeSet;

    fn single_node_job(job: u32, tasks: u32, dur: f64, arrival: f64) -> JobDag {
        JobDag {
            job_id: JobId(job),
            nodes: vec![DagNode {
                node_id: NodeId(0),
                task_count: tasks,
                task: TaskTemplate { duration_s: dur },
                parents: BTreeSet::new(),
                children: BTreeSet::new(),
            }],
            arrival_time_s: arrival,
            size_class: None,
        }
    }

    fn chain_job(job: u32, durs: &[f64], arrival: f64) -> JobDag {
        let nodes = durs
            .iter()
            .enumerate()
            .map(|(i, &d)| DagNode {
                node_id: NodeId(i as u32),
                task_count: 1,
                task: TaskTemplate { duration_s: d },
                parents: if i == 0 {
                    BTreeSet::new()
                } else {
                    [NodeId(i as u32 - 1)].into_iter().collect()
                },
                children: if i + 1 == durs.len() {
                    BTreeSet::new()
                } else {
                    [NodeId(i as u32 + 1)].into_iter().collect()
                },
            })
            .collect();
        JobDag {
            job_id: JobId(job),
            nodes,
            arrival_time_s: arrival,
            size_class: None,
        }
    }

    #[test]
    fn single_task_lower_bound() {
        let spec = WorkloadSpec {
            jobs: vec![single_node_job(0, 1, 5.0, 0.0)],
            executor_count: 1,
            seed: 0,
        };
        let result = run(&spec, &mut FifoScheduler, None, &RunConfig::default()).unwrap();
        assert_eq!(result.avg_jct_s, 5.0);
    }

    #[test]
    fn chain_forces_serialization() {
        let spec = WorkloadSpec {
            jobs: vec![chain_job(0, &[3.0, 3.0], 0.0)],
            executor_count: 2,
            seed: 0,
        };
        let result = run(&spec, &mut FifoScheduler, None, &RunConfig::default()).unwrap();
        assert_eq!(result.avg_jct_s, 6.0);
    }

    #[test]
    fn all_schedulers_complete_batched_workload() {
        let spec = generate_batched(6, &[1.0, 3.0], 8, 5)
            .unwrap()
            .with_executors(4);
        for (name, mut policy) in [
            ("fifo", Box::new(FifoScheduler) as Box<dyn SchedulerPolicy>),
            ("fair", Box::new(FairScheduler)),
            ("sjf", Box::new(SjfScheduler)),
        ] {
            let result = run(&spec, policy.as_mut(), None, &RunConfig::default())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(result.jobs.len(), 6, "{name}");
            assert!(result.jobs.iter().all(|j| j.jct_s > 0.0), "{name}");
        }
    }

    #[test]
    fn identical_runs_are_identical() {
        let spec = generate_batched(8, &[1.0, 2.0, 8.0], 10, 3)
            .unwrap()
            .with_executors(5);
        let cfg = RunConfig::default();
        let (r1, t1) = run_recorded(&spec, &mut FairScheduler, 0, &cfg).unwrap();
        let (r2, t2) = run_recorded(&spec, &mut FairScheduler, 0, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn timeline_starts_at_batch_size_and_ends_empty() {
        let spec = generate_batched(5, &[1.0], 4, 2).unwrap().with_executors(3);
        let result = run(&spec, &mut FairScheduler, None, &RunConfig::default()).unwrap();
        assert_eq!(result.timeline.first().unwrap().concurrent_jobs, 5);
        assert_eq!(result.timeline.last().unwrap().concurrent_jobs, 0);
    }

    #[test]
    fn min_rule_dispatches_remaining_only() {
        // one node with 2 remaining tasks, 5 idle executors, cap 3 under fair
        struct Greedy;
        impl SchedulerPolicy for Greedy {
            fn name(&self) -> &str {
                "greedy"
            }
            fn decide(&mut self, view: &StageView<'_>) -> Decision {
                let c = view.candidates()[0];
                Decision::Schedule(SchedulingDecision {
                    job_id: c.job_id,
                    node_id: c.node_id,
                    executor_budget: view.idle_executors(),
                })
            }
        }
        let spec = WorkloadSpec {
            jobs: vec![single_node_job(0, 2, 4.0, 0.0)],
            executor_count: 5,
            seed: 0,
        };
        let mut trace_header = TraceHeader {
            workload_hash: workload_hash(&spec),
            normalization: NormalizationConfig::identity(),
            scheduler: "greedy".into(),
            seed: 0,
        };
        trace_header.scheduler = "greedy".into();
        let mut sink = MemorySink::new(trace_header);
        let result = run(
            &spec,
            &mut Greedy,
            Some(&mut sink),
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(result.avg_jct_s, 4.0);
        assert_eq!(sink.records.len(), 1);
        assert_eq!(sink.records[0].executor_budget, 2);
    }

    #[test]
    fn non_ready_node_is_contract_violation() {
        struct Bad;
        impl SchedulerPolicy for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn decide(&mut self, _view: &StageView<'_>) -> Decision {
                Decision::Schedule(SchedulingDecision {
                    job_id: JobId(0),
                    node_id: NodeId(1), // child of the chain head: not ready
                    executor_budget: 1,
                })
            }
        }
        let spec = WorkloadSpec {
            jobs: vec![chain_job(0, &[3.0, 3.0], 0.0)],
            executor_count: 2,
            seed: 0,
        };
        let err = run(&spec, &mut Bad, None, &RunConfig::default()).unwrap_err();
        match err {
            Error::Contract { stage, msg } => {
                assert_eq!(stage, 0);
                assert!(msg.contains("unresolved parents"), "{msg}");
            }
            other => panic!("expected contract violation, got {other}"),
        }
    }

    #[test]
    fn over_allocation_is_contract_violation() {
        struct Bad;
        impl SchedulerPolicy for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn decide(&mut self, view: &StageView<'_>) -> Decision {
                let c = view.candidates()[0];
                Decision::Schedule(SchedulingDecision {
                    job_id: c.job_id,
                    node_id: c.node_id,
                    executor_budget: view.idle_executors() + 1,
                })
            }
        }
        let spec = WorkloadSpec {
            jobs: vec![single_node_job(0, 4, 1.0, 0.0)],
            executor_count: 2,
            seed: 0,
        };
        let err = run(&spec, &mut Bad, None, &RunConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }), "{err}");
    }

    #[test]
    fn one_record_per_stage() {
        let spec = generate_batched(4, &[1.0, 2.0], 6, 9)
            .unwrap()
            .with_executors(3);
        let (result, trace) = run_recorded(&spec, &mut FairScheduler, 0, &RunConfig::default())
            .unwrap();
        assert_eq!(result.stages as usize, trace.records.len());
        // every dispatched task is accounted for by stage budgets
        let dispatched: u64 = trace.records.iter().map(|r| r.executor_budget as u64).sum();
        assert_eq!(dispatched, spec.total_tasks());
    }

    #[test]
    fn migration_delay_applies_on_job_switch() {
        // two 1-task jobs, 1 executor: second job pays the migration delay
        let spec = WorkloadSpec {
            jobs: vec![
                single_node_job(0, 1, 2.0, 0.0),
                single_node_job(1, 1, 2.0, 0.0),
            ],
            executor_count: 1,
            seed: 0,
        };
        let cfg = RunConfig {
            migration_delay_s: 0.5,
            ..RunConfig::default()
        };
        let result = run(&spec, &mut FifoScheduler, None, &cfg).unwrap();
        assert_eq!(result.jct_of(JobId(0)).unwrap(), 2.0);
        assert_eq!(result.jct_of(JobId(1)).unwrap(), 4.5);
    }
}
