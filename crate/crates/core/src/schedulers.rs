//! Scheduling policies: the policy contract plus FIFO, Fair, SJF and the
//! scripted critical-path teacher used to produce training traces.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::NormalizationConfig;
use crate::simulator::{Candidate, StageView};
use crate::workload::{JobId, NodeId};

/// One scheduling decision: run `executor_budget` tasks of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulingDecision {
    pub job_id: JobId,
    pub node_id: NodeId,
    pub executor_budget: usize,
}

/// What a policy returns for a stage. `Idle` lets simulated time advance to
/// the next event without dispatching anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Schedule(SchedulingDecision),
    Idle,
}

/// How the per-job executor cap is derived for a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationMode {
    /// Equal split of all executors among jobs in the system; scheduling a
    /// job past its share is a contract violation.
    FairShare,
    /// No cap beyond the cluster size.
    AllIdle,
}

/// A scheduling policy. `decide` must name a ready node from the stage's
/// candidate list (or return `Idle`); the simulator enforces this.
pub trait SchedulerPolicy {
    fn name(&self) -> &str;

    fn allocation_mode(&self) -> AllocationMode {
        AllocationMode::AllIdle
    }

    fn decide(&mut self, view: &StageView<'_>) -> Decision;
}

/// Equal executor split among jobs currently in the system, in arrival
/// order: floor share for everyone, remainder to the earliest arrivals.
/// The caps always sum to `executor_count` when any job is present.
pub fn fair_caps(executor_count: usize, jobs_in_arrival_order: &[JobId]) -> BTreeMap<JobId, usize> {
    let n = jobs_in_arrival_order.len();
    let mut caps = BTreeMap::new();
    if n == 0 {
        return caps;
    }
    let base = executor_count / n;
    let remainder = executor_count % n;
    for (i, &job) in jobs_in_arrival_order.iter().enumerate() {
        caps.insert(job, base + usize::from(i < remainder));
    }
    caps
}

// ---------------------------------------------------------------------------
// FIFO
// ---------------------------------------------------------------------------

/// Earliest-arrived job first, all idle executors to its lowest ready node.
#[derive(Debug, Default)]
pub struct FifoScheduler;

impl SchedulerPolicy for FifoScheduler {
    fn name(&self) -> &str {
        "fifo"
    }

    fn decide(&mut self, view: &StageView<'_>) -> Decision {
        let best = view.candidates().iter().min_by(|a, b| {
            view.arrival_s(a.job_id)
                .total_cmp(&view.arrival_s(b.job_id))
                .then(a.job_id.cmp(&b.job_id))
                .then(a.node_id.cmp(&b.node_id))
        });
        match best {
            Some(c) => Decision::Schedule(SchedulingDecision {
                job_id: c.job_id,
                node_id: c.node_id,
                executor_budget: view.idle_executors(),
            }),
            None => Decision::Idle,
        }
    }
}

// ---------------------------------------------------------------------------
// Fair
// ---------------------------------------------------------------------------

/// Dynamic equal partitioning: top up the most under-served job (largest
/// cap minus executors currently held), earliest arrival on ties.
#[derive(Debug, Default)]
pub struct FairScheduler;

impl SchedulerPolicy for FairScheduler {
    fn name(&self) -> &str {
        "fair"
    }

    fn allocation_mode(&self) -> AllocationMode {
        AllocationMode::FairShare
    }

    fn decide(&mut self, view: &StageView<'_>) -> Decision {
        let best = view.candidates().iter().min_by(|a, b| {
            let deficit_a = view.fair_budget(a.job_id);
            let deficit_b = view.fair_budget(b.job_id);
            deficit_b
                .cmp(&deficit_a) // larger deficit first
                .then(
                    view.arrival_s(a.job_id)
                        .total_cmp(&view.arrival_s(b.job_id)),
                )
                .then(a.job_id.cmp(&b.job_id))
                .then(a.node_id.cmp(&b.node_id))
        });
        match best {
            Some(c) => Decision::Schedule(SchedulingDecision {
                job_id: c.job_id,
                node_id: c.node_id,
                executor_budget: view.fair_budget(c.job_id),
            }),
            None => Decision::Idle,
        }
    }
}

// ---------------------------------------------------------------------------
// SJF
// ---------------------------------------------------------------------------

/// Smallest total remaining workload first; all idle executors.
#[derive(Debug, Default)]
pub struct SjfScheduler;

impl SchedulerPolicy for SjfScheduler {
    fn name(&self) -> &str {
        "sjf"
    }

    fn decide(&mut self, view: &StageView<'_>) -> Decision {
        let best = view.candidates().iter().min_by(|a, b| {
            view.job_remaining_work_s(a.job_id)
                .total_cmp(&view.job_remaining_work_s(b.job_id))
                .then(a.job_id.cmp(&b.job_id))
                .then(a.node_id.cmp(&b.node_id))
        });
        match best {
            Some(c) => Decision::Schedule(SchedulingDecision {
                job_id: c.job_id,
                node_id: c.node_id,
                executor_budget: view.idle_executors(),
            }),
            None => Decision::Idle,
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted teacher
// ---------------------------------------------------------------------------

/// Scripted teacher heuristic: schedule the node with the least remaining
/// critical-path workload (F7), breaking ties by job remaining workload
/// (F9), then locality (F10, same-job-as-previous first), then ids. Budgets
/// come from the fair split.
///
/// With `epsilon > 0` the teacher picks the second-best node with that
/// probability, emulating the sampling randomness of a DNN scheduler.
#[derive(Debug)]
pub struct TeacherCrpScheduler {
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl TeacherCrpScheduler {
    pub fn new(seed: u64) -> Self {
        Self::with_noise(0.0, seed)
    }

    pub fn with_noise(epsilon: f64, seed: u64) -> Self {
        TeacherCrpScheduler {
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The teacher's ranking key. Raw (identity-normalized) features keep
    /// the rule independent of whatever normalization a trace records.
    fn key(view: &StageView<'_>, c: &Candidate) -> (f64, f64, f64, JobId, NodeId) {
        let fv = view.features(c, &NormalizationConfig::identity());
        (
            fv.f7_cp_remaining_work_s,
            fv.f9_job_remaining_work_s,
            1.0 - fv.f10_locality,
            c.job_id,
            c.node_id,
        )
    }
}

impl SchedulerPolicy for TeacherCrpScheduler {
    fn name(&self) -> &str {
        "teacher-crp"
    }

    fn allocation_mode(&self) -> AllocationMode {
        AllocationMode::FairShare
    }

    fn decide(&mut self, view: &StageView<'_>) -> Decision {
        let mut ranked: Vec<((f64, f64, f64, JobId, NodeId), &Candidate)> = view
            .candidates()
            .iter()
            .map(|c| (Self::key(view, c), c))
            .collect();
        if ranked.is_empty() {
            return Decision::Idle;
        }
        ranked.sort_by(|(ka, _), (kb, _)| {
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
                .then(ka.4.cmp(&kb.4))
        });
        let mut pick = 0;
        if self.epsilon > 0.0 && ranked.len() >= 2 && self.rng.random::<f64>() < self.epsilon {
            pick = 1;
        }
        let c = ranked[pick].1;
        Decision::Schedule(SchedulingDecision {
            job_id: c.job_id,
            node_id: c.node_id,
            executor_budget: view.fair_budget(c.job_id),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fair_caps_even_split() {
        let jobs = [JobId(0), JobId(1)];
        let caps = fair_caps(10, &jobs);
        assert_eq!(caps[&JobId(0)], 5);
        assert_eq!(caps[&JobId(1)], 5);
    }

    #[test]
    fn fair_caps_remainder_to_earliest() {
        // jobs listed in arrival order
        let jobs = [JobId(7), JobId(2), JobId(5)];
        let caps = fair_caps(10, &jobs);
        assert_eq!(caps[&JobId(7)], 4);
        assert_eq!(caps[&JobId(2)], 3);
        assert_eq!(caps[&JobId(5)], 3);
        assert_eq!(caps.values().sum::<usize>(), 10);
    }

    #[test]
    fn fair_caps_single_job_gets_all() {
        let caps = fair_caps(10, &[JobId(3)]);
        assert_eq!(caps[&JobId(3)], 10);
    }

    #[test]
    fn fair_caps_sum_property() {
        for n in 1..40usize {
            let jobs: Vec<JobId> = (0..n as u32).map(JobId).collect();
            for e in 0..60usize {
                let caps = fair_caps(e, &jobs);
                assert_eq!(caps.values().sum::<usize>(), e);
            }
        }
    }
}
