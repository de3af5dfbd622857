//! Discrete-event simulation of DAG-job scheduling on a multi-executor
//! cluster, plus a teacher-student pipeline that distills an interpretable
//! decision-tree node-selection policy from recorded scheduler traces.
//!
//! The pieces fit together as follows:
//!
//! * [`workload`] defines jobs (DAGs of task groups) and generates synthetic
//!   batched / Poisson-arrival workloads.
//! * [`simulator`] runs a workload under a [`schedulers::SchedulerPolicy`],
//!   measuring per-job completion times and optionally recording one
//!   [`trace::StageRecord`] per scheduling stage.
//! * [`features`] computes the ten-dimensional per-node feature vector used
//!   both by the scripted teacher heuristic and by distilled trees.
//! * [`distill`] turns traces into fixed-size group samples and fits CART
//!   trees that predict the winning slot inside each group.
//! * [`treesched`] schedules with a fitted tree: a tournament over ready
//!   nodes using the tree as a pairwise/triplet comparator, plus fair
//!   executor allocation.
//! * [`tuning`] adapts pool trees to edge cases from reference traces.
//! * [`report`] derives JCT tables, timelines and decision-path histograms.

pub mod distill;
pub mod error;
pub mod features;
pub mod report;
pub mod schedulers;
pub mod simulator;
pub mod trace;
pub mod tree;
pub mod treesched;
pub mod tuning;
pub mod workload;

pub use error::{Error, Result};
pub use features::{FeatureVector, NormalizationConfig, FEATURE_COUNT};
pub use schedulers::{Decision, SchedulerPolicy, SchedulingDecision};
pub use simulator::{run, RunConfig, SimResult};
pub use trace::{StageRecord, TraceFile};
pub use tree::DecisionTreeModel;
pub use treesched::{TreeScheduler, TreeSchedulerConfig};
pub use workload::{DagNode, JobDag, JobId, NodeId, TaskTemplate, WorkloadSpec};
