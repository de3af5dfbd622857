//! The ten-dimensional node feature vector and its normalization.
//!
//! F1-F5 are raw per-node/cluster quantities; F6-F10 aggregate over the
//! node's remaining critical path and its job. "Remaining" throughout means
//! tasks not yet dispatched to an executor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{JobDag, JobId, NodeId};

pub const FEATURE_COUNT: usize = 10;

/// Which quantity the "longest path" maximizes. The comparison tie-break is
/// always summed remaining work, then lexicographic node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CpMetric {
    #[default]
    Hops,
    Tasks,
    Work,
}

/// Work features are divided by `work_scale_s`, count features by
/// `count_scale`. Binary flags are never scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub work_scale_s: f64,
    pub count_scale: f64,
}

impl NormalizationConfig {
    pub fn identity() -> Self {
        NormalizationConfig {
            work_scale_s: 1.0,
            count_scale: 1.0,
        }
    }

    /// Default normalization pinned to a training workload: mean task
    /// duration x 100 for work, 100 for counts.
    pub fn from_workload(spec: &crate::workload::WorkloadSpec) -> Self {
        NormalizationConfig {
            work_scale_s: spec.mean_task_duration_s() * 100.0,
            count_scale: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.work_scale_s > 0.0) || !(self.count_scale > 0.0) {
            return Err(Error::validation("normalization scales must be positive"));
        }
        Ok(())
    }
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self::identity()
    }
}

/// F1..F10 for one candidate node. Flags (F2, F10) are encoded 0.0/1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f1_exec_assigned: f64,
    pub f2_just_freed: f64,
    pub f3_idle_executors: f64,
    pub f4_node_remaining_work_s: f64,
    pub f5_node_remaining_tasks: f64,
    pub f6_cp_task_count: f64,
    pub f7_cp_remaining_work_s: f64,
    pub f8_job_remaining_tasks: f64,
    pub f9_job_remaining_work_s: f64,
    pub f10_locality: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.f1_exec_assigned,
            self.f2_just_freed,
            self.f3_idle_executors,
            self.f4_node_remaining_work_s,
            self.f5_node_remaining_tasks,
            self.f6_cp_task_count,
            self.f7_cp_remaining_work_s,
            self.f8_job_remaining_tasks,
            self.f9_job_remaining_work_s,
            self.f10_locality,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            f1_exec_assigned: a[0],
            f2_just_freed: a[1],
            f3_idle_executors: a[2],
            f4_node_remaining_work_s: a[3],
            f5_node_remaining_tasks: a[4],
            f6_cp_task_count: a[5],
            f7_cp_remaining_work_s: a[6],
            f8_job_remaining_tasks: a[7],
            f9_job_remaining_work_s: a[8],
            f10_locality: a[9],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Re-express this vector under a different normalization. Work features
    /// rescale by the work ratio, counts by the count ratio; flags pass
    /// through.
    pub fn renormalized(&self, from: &NormalizationConfig, to: &NormalizationConfig) -> Self {
        let work = from.work_scale_s / to.work_scale_s;
        let count = from.count_scale / to.count_scale;
        FeatureVector {
            f1_exec_assigned: self.f1_exec_assigned * count,
            f2_just_freed: self.f2_just_freed,
            f3_idle_executors: self.f3_idle_executors * count,
            f4_node_remaining_work_s: self.f4_node_remaining_work_s * work,
            f5_node_remaining_tasks: self.f5_node_remaining_tasks * count,
            f6_cp_task_count: self.f6_cp_task_count * count,
            f7_cp_remaining_work_s: self.f7_cp_remaining_work_s * work,
            f8_job_remaining_tasks: self.f8_job_remaining_tasks * count,
            f9_job_remaining_work_s: self.f9_job_remaining_work_s * work,
            f10_locality: self.f10_locality,
        }
    }
}

/// Critical-path aggregates from one node through its unfinished descendants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpInfo {
    pub hops: u64,
    pub tasks: u64,
    pub work_s: f64,
    /// Next node on the chosen path, None at the path's end.
    pub next: Option<NodeId>,
}

/// Longest-path DP over the sub-DAG of nodes with remaining tasks.
///
/// For every node this yields the maximal path starting there: primary key
/// per `metric`, ties broken by larger summed remaining work, then by the
/// lexicographically smallest node-id sequence. A node with no remaining
/// work contributes zero tasks/work but is still a valid path start.
pub fn cp_aggregates(
    dag: &JobDag,
    remaining: &dyn Fn(NodeId) -> u32,
    metric: CpMetric,
) -> BTreeMap<NodeId, CpInfo> {
    let order = dag
        .topo_order()
        .expect("cp_aggregates requires a valid DAG");
    let mut info: BTreeMap<NodeId, CpInfo> = BTreeMap::new();
    for &id in order.iter().rev() {
        let node = dag.node(id).expect("node in topo order");
        let rem = remaining(id) as u64;
        let own_work = rem as f64 * node.task.duration_s;
        let mut best: Option<(NodeId, CpInfo)> = None;
        for &child in &node.children {
            if remaining(child) == 0 {
                continue;
            }
            let ci = info[&child];
            let better = match &best {
                None => true,
                Some((bid, b)) => {
                    let key = |c: &CpInfo| match metric {
                        CpMetric::Hops => c.hops as f64,
                        CpMetric::Tasks => c.tasks as f64,
                        CpMetric::Work => c.work_s,
                    };
                    match key(&ci).total_cmp(&key(b)) {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => match ci.work_s.total_cmp(&b.work_s) {
                            std::cmp::Ordering::Greater => true,
                            std::cmp::Ordering::Less => false,
                            std::cmp::Ordering::Equal => child < *bid,
                        },
                    }
                }
            };
            if better {
                best = Some((child, ci));
            }
        }
        let cp = match best {
            Some((child, ci)) => CpInfo {
                hops: ci.hops + 1,
                tasks: ci.tasks + rem,
                work_s: ci.work_s + own_work,
                next: Some(child),
            },
            None => CpInfo {
                hops: 1,
                tasks: rem,
                work_s: own_work,
                next: None,
            },
        };
        info.insert(id, cp);
    }
    info
}

/// The maximal path starting at `node`, inclusive.
pub fn longest_path_from(
    dag: &JobDag,
    remaining: &dyn Fn(NodeId) -> u32,
    node: NodeId,
    metric: CpMetric,
) -> Vec<NodeId> {
    let info = cp_aggregates(dag, remaining, metric);
    let mut path = vec![node];
    let mut cur = node;
    while let Some(next) = info[&cur].next {
        path.push(next);
        cur = next;
    }
    path
}

/// Everything `extract` needs besides the node itself.
pub struct FeatureInputs<'a> {
    pub dag: &'a JobDag,
    /// Per-node tasks not yet dispatched.
    pub remaining: &'a dyn Fn(NodeId) -> u32,
    /// F1: executors currently associated with this node's job.
    pub executors_assigned_to_job: usize,
    /// F2: an executor finished a task of this job at the stage's trigger.
    pub job_just_freed: bool,
    /// F3.
    pub idle_executors: usize,
    /// F8 source: total undispatched tasks of the job.
    pub job_remaining_tasks: u64,
    /// F9 source: total undispatched work of the job in seconds.
    pub job_remaining_work_s: f64,
    pub prev_scheduled_job: Option<JobId>,
    pub cp_metric: CpMetric,
}

/// Raw ingredients of one feature vector, critical path already resolved.
/// The simulator computes the per-job critical-path DP once per stage and
/// assembles candidates from it; `extract` is the standalone path.
pub struct AssembleInputs {
    pub executors_assigned_to_job: usize,
    pub job_just_freed: bool,
    pub idle_executors: usize,
    pub node_remaining_tasks: u32,
    pub task_duration_s: f64,
    pub cp_tasks: u64,
    pub cp_work_s: f64,
    pub job_remaining_tasks: u64,
    pub job_remaining_work_s: f64,
    pub locality: bool,
}

pub fn assemble(i: &AssembleInputs, norm: &NormalizationConfig) -> FeatureVector {
    let rem = i.node_remaining_tasks as f64;
    FeatureVector {
        f1_exec_assigned: i.executors_assigned_to_job as f64 / norm.count_scale,
        f2_just_freed: if i.job_just_freed { 1.0 } else { 0.0 },
        f3_idle_executors: i.idle_executors as f64 / norm.count_scale,
        f4_node_remaining_work_s: rem * i.task_duration_s / norm.work_scale_s,
        f5_node_remaining_tasks: rem / norm.count_scale,
        f6_cp_task_count: i.cp_tasks as f64 / norm.count_scale,
        f7_cp_remaining_work_s: i.cp_work_s / norm.work_scale_s,
        f8_job_remaining_tasks: i.job_remaining_tasks as f64 / norm.count_scale,
        f9_job_remaining_work_s: i.job_remaining_work_s / norm.work_scale_s,
        f10_locality: if i.locality { 1.0 } else { 0.0 },
    }
}

/// Compute F1-F10 for one node. Fails when the node does not belong to the
/// job or the job has fully completed.
pub fn extract(
    node_id: NodeId,
    inputs: &FeatureInputs<'_>,
    norm: &NormalizationConfig,
) -> Result<FeatureVector> {
    norm.validate()?;
    let node = inputs.dag.node(node_id).ok_or_else(|| {
        Error::validation(format!(
            "{}: feature extraction on unknown node {node_id}",
            inputs.dag.job_id
        ))
    })?;
    if inputs.job_remaining_tasks == 0 && inputs.executors_assigned_to_job == 0 {
        return Err(Error::validation(format!(
            "{}: feature extraction on a completed job",
            inputs.dag.job_id
        )));
    }
    let cp = cp_aggregates(inputs.dag, inputs.remaining, inputs.cp_metric);
    let cp_node = cp[&node_id];
    Ok(assemble(
        &AssembleInputs {
            executors_assigned_to_job: inputs.executors_assigned_to_job,
            job_just_freed: inputs.job_just_freed,
            idle_executors: inputs.idle_executors,
            node_remaining_tasks: (inputs.remaining)(node_id),
            task_duration_s: node.task.duration_s,
            cp_tasks: cp_node.tasks,
            cp_work_s: cp_node.work_s,
            job_remaining_tasks: inputs.job_remaining_tasks,
            job_remaining_work_s: inputs.job_remaining_work_s,
            locality: inputs.prev_scheduled_job == Some(inputs.dag.job_id),
        },
        norm,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{DagNode, TaskTemplate};
    use std::collections::BTreeSet;

    fn chain_job() -> JobDag {
        // A(2 tasks x 3s) -> B(1 task x 4s)
        JobDag {
            job_id: JobId(0),
            nodes: vec![
                DagNode {
                    node_id: NodeId(0),
                    task_count: 2,
                    task: TaskTemplate { duration_s: 3.0 },
                    parents: BTreeSet::new(),
                    children: [NodeId(1)].into_iter().collect(),
                },
                DagNode {
                    node_id: NodeId(1),
                    task_count: 1,
                    task: TaskTemplate { duration_s: 4.0 },
                    parents: [NodeId(0)].into_iter().collect(),
                    children: BTreeSet::new(),
                },
            ],
            arrival_time_s: 0.0,
            size_class: None,
        }
    }

    fn full_remaining(dag: &JobDag) -> impl Fn(NodeId) -> u32 + '_ {
        move |id| dag.node(id).map(|n| n.task_count).unwrap_or(0)
    }

    #[test]
    fn leaf_path_is_itself() {
        let dag = chain_job();
        let rem = full_remaining(&dag);
        let path = longest_path_from(&dag, &rem, NodeId(1), CpMetric::Hops);
        assert_eq!(path, vec![NodeId(1)]);
    }

    #[test]
    fn chain_path_from_head() {
        let dag = chain_job();
        let rem = full_remaining(&dag);
        let path = longest_path_from(&dag, &rem, NodeId(0), CpMetric::Hops);
        assert_eq!(path, vec![NodeId(0), NodeId(1)]);
    }

    #[test]
    fn diamond_tie_breaks_on_work() {
        // A -> {B heavy, C light} -> D; hops tie, work decides.
        let mk = |id: u32, dur: f64, parents: &[u32], children: &[u32]| DagNode {
            node_id: NodeId(id),
            task_count: 1,
            task: TaskTemplate { duration_s: dur },
            parents: parents.iter().map(|&p| NodeId(p)).collect(),
            children: children.iter().map(|&c| NodeId(c)).collect(),
        };
        let dag = JobDag {
            job_id: JobId(0),
            nodes: vec![
                mk(0, 1.0, &[], &[1, 2]),
                mk(1, 5.0, &[0], &[3]),
                mk(2, 1.0, &[0], &[3]),
                mk(3, 1.0, &[1, 2], &[]),
            ],
            arrival_time_s: 0.0,
            size_class: None,
        };
        dag.validate().unwrap();
        let rem = full_remaining(&dag);
        // oracle: enumerate all root-to-sink paths on the 4-node DAG
        let candidates = [vec![0u32, 1, 3], vec![0, 2, 3]];
        let work = |p: &[u32]| -> f64 {
            p.iter()
                .map(|&i| dag.node(NodeId(i)).unwrap().work_s())
                .sum()
        };
        let best = candidates
            .iter()
            .max_by(|a, b| work(a).total_cmp(&work(b)))
            .unwrap();
        let path = longest_path_from(&dag, &rem, NodeId(0), CpMetric::Hops);
        let got: Vec<u32> = path.iter().map(|n| n.0).collect();
        assert_eq!(&got, best);
        assert_eq!(got, vec![0, 1, 3]);
    }

    #[test]
    fn extract_fresh_single_node_job() {
        let dag = JobDag {
            job_id: JobId(0),
            nodes: vec![DagNode {
                node_id: NodeId(0),
                task_count: 4,
                task: TaskTemplate { duration_s: 2.0 },
                parents: BTreeSet::new(),
                children: BTreeSet::new(),
            }],
            arrival_time_s: 0.0,
            size_class: None,
        };
        let rem = full_remaining(&dag);
        let inputs = FeatureInputs {
            dag: &dag,
            remaining: &rem,
            executors_assigned_to_job: 0,
            job_just_freed: false,
            idle_executors: 10,
            job_remaining_tasks: 4,
            job_remaining_work_s: 8.0,
            prev_scheduled_job: None,
            cp_metric: CpMetric::Hops,
        };
        let fv = extract(NodeId(0), &inputs, &NormalizationConfig::identity()).unwrap();
        assert_eq!(
            fv.as_array(),
            [0.0, 0.0, 10.0, 8.0, 4.0, 4.0, 8.0, 4.0, 8.0, 0.0]
        );

        let inputs_local = FeatureInputs {
            prev_scheduled_job: Some(JobId(0)),
            remaining: &rem,
            ..inputs
        };
        let fv = extract(NodeId(0), &inputs_local, &NormalizationConfig::identity()).unwrap();
        assert_eq!(fv.f10_locality, 1.0);
    }

    #[test]
    fn extract_chain_composites() {
        let dag = chain_job();
        let rem = full_remaining(&dag);
        let inputs = FeatureInputs {
            dag: &dag,
            remaining: &rem,
            executors_assigned_to_job: 0,
            job_just_freed: false,
            idle_executors: 2,
            job_remaining_tasks: 3,
            job_remaining_work_s: 10.0,
            prev_scheduled_job: None,
            cp_metric: CpMetric::Hops,
        };
        let fv = extract(NodeId(0), &inputs, &NormalizationConfig::identity()).unwrap();
        // path A->B: tasks 2+1, work 2*3 + 1*4
        assert_eq!(fv.f6_cp_task_count, 3.0);
        assert_eq!(fv.f7_cp_remaining_work_s, 10.0);
        // invariant family
        assert!(fv.f4_node_remaining_work_s <= fv.f7_cp_remaining_work_s);
        assert!(fv.f7_cp_remaining_work_s <= fv.f9_job_remaining_work_s);
        assert!(fv.f5_node_remaining_tasks <= fv.f8_job_remaining_tasks);
    }

    #[test]
    fn completed_job_rejected() {
        let dag = chain_job();
        let rem = |_: NodeId| 0u32;
        let inputs = FeatureInputs {
            dag: &dag,
            remaining: &rem,
            executors_assigned_to_job: 0,
            job_just_freed: false,
            idle_executors: 2,
            job_remaining_tasks: 0,
            job_remaining_work_s: 0.0,
            prev_scheduled_job: None,
            cp_metric: CpMetric::Hops,
        };
        assert!(extract(NodeId(0), &inputs, &NormalizationConfig::identity()).is_err());
    }

    #[test]
    fn scaling_preserves_comparisons() {
        let dag = chain_job();
        let rem = full_remaining(&dag);
        let inputs = FeatureInputs {
            dag: &dag,
            remaining: &rem,
            executors_assigned_to_job: 3,
            job_just_freed: true,
            idle_executors: 7,
            job_remaining_tasks: 3,
            job_remaining_work_s: 10.0,
            prev_scheduled_job: None,
            cp_metric: CpMetric::Hops,
        };
        let id = NormalizationConfig::identity();
        let scaled = NormalizationConfig {
            work_scale_s: 17.0,
            count_scale: 3.0,
        };
        let a0 = extract(NodeId(0), &inputs, &id).unwrap().as_array();
        let b0 = extract(NodeId(1), &inputs, &id).unwrap().as_array();
        let a1 = extract(NodeId(0), &inputs, &scaled).unwrap().as_array();
        let b1 = extract(NodeId(1), &inputs, &scaled).unwrap().as_array();
        for k in 0..FEATURE_COUNT {
            assert_eq!(
                a0[k].total_cmp(&b0[k]),
                a1[k].total_cmp(&b1[k]),
                "feature {k} comparison changed under scaling"
            );
        }
    }
}
