//! Teacher-student distillation: turn recorded stages into fixed-size group
//! samples, fit CART comparators on them, and measure how faithfully a tree
//! reproduces the recorded decisions.
//!
//! Each stage contributes groups of one winning node plus g-1 losing nodes.
//! The winner's slot position is randomized by default: writing the winner
//! into a fixed slot would leak the label through position and train a
//! degenerate comparator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, NormalizationConfig, FEATURE_COUNT};
use crate::trace::TraceFile;
use crate::tree::{grow, CartParams, Dataset, DecisionTreeModel, TreeMeta};
use crate::treesched::{tournament_select, TieBreak, TournamentCandidate};
use crate::workload::{JobId, NodeId};

/// Where the winning node lands inside a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WinnerSlotPolicy {
    /// Seeded-random slot per group; the label is the slot index.
    #[default]
    Permute,
    /// Winner always in the last slot (the literal reading of the original
    /// construction). Training refuses this: the label would be constant.
    Last,
}

/// One training sample: |g| feature vectors plus the winning slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub slots: Vec<FeatureVector>,
    pub winner_slot: usize,
    /// (stage index, node identity per slot) for provenance.
    pub provenance: (u64, Vec<(JobId, NodeId)>),
}

impl GroupSample {
    pub fn concat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.slots.len() * FEATURE_COUNT);
        for s in &self.slots {
            x.extend_from_slice(&s.as_array());
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct GroupBuildOptions {
    pub g: usize,
    /// Cap on groups taken from one stage; a seeded uniform sample is drawn
    /// when the combination count exceeds it.
    pub max_groups_per_stage: usize,
    pub winner_slot_policy: WinnerSlotPolicy,
    pub seed: u64,
}

impl GroupBuildOptions {
    pub fn new(g: usize) -> Self {
        GroupBuildOptions {
            g,
            max_groups_per_stage: 200,
            winner_slot_policy: WinnerSlotPolicy::Permute,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct GroupBuildOutcome {
    pub samples: Vec<GroupSample>,
    /// Stages skipped for having fewer than g candidates.
    pub skipped_stages: usize,
}

fn combinations(n: usize, k: usize) -> usize {
    match k {
        1 => n,
        2 => n * (n - 1) / 2,
        _ => unreachable!("group sizes 2 and 3 only"),
    }
}

/// Lexicographic unranking of an (a < b) pair over 0..n.
fn unrank_pair(n: usize, mut idx: usize) -> (usize, usize) {
    let mut a = 0;
    loop {
        let with_a = n - 1 - a;
        if idx < with_a {
            return (a, a + 1 + idx);
        }
        idx -= with_a;
        a += 1;
    }
}

/// Build group samples from a trace. Deterministic: each stage derives its
/// own RNG from (seed, stage_idx).
pub fn build_groups(trace: &TraceFile, opts: &GroupBuildOptions) -> Result<GroupBuildOutcome> {
    if !(2..=3).contains(&opts.g) {
        return Err(Error::validation(format!(
            "group size must be 2 or 3, got {}",
            opts.g
        )));
    }
    if opts.max_groups_per_stage == 0 {
        return Err(Error::validation("max_groups_per_stage must be >= 1"));
    }
    let k = opts.g - 1;
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for rec in &trace.records {
        let winner = rec.winner_index().ok_or_else(|| {
            Error::validation(format!("stage {}: winner missing", rec.stage_idx))
        })?;
        let losers: Vec<usize> = (0..rec.candidates.len()).filter(|&i| i != winner).collect();
        if losers.len() < k {
            skipped += 1;
            continue;
        }
        let total = combinations(losers.len(), k);
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed ^ rec.stage_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let picks: Vec<usize> = if total <= opts.max_groups_per_stage {
            (0..total).collect()
        } else {
            let mut chosen =
                rand::seq::index::sample(&mut rng, total, opts.max_groups_per_stage).into_vec();
            chosen.sort_unstable();
            chosen
        };
        for combo in picks {
            let loser_rows: Vec<usize> = match k {
                1 => vec![losers[combo]],
                _ => {
                    let (a, b) = unrank_pair(losers.len(), combo);
                    vec![losers[a], losers[b]]
                }
            };
            let winner_slot = match opts.winner_slot_policy {
                WinnerSlotPolicy::Last => opts.g - 1,
                WinnerSlotPolicy::Permute => rng.random_range(0..opts.g),
            };
            let mut slots = Vec::with_capacity(opts.g);
            let mut ids = Vec::with_capacity(opts.g);
            let mut loser_iter = loser_rows.iter();
            for slot in 0..opts.g {
                let row = if slot == winner_slot {
                    winner
                } else {
                    *loser_iter.next().expect("enough losers")
                };
                let c = &rec.candidates[row];
                slots.push(c.features);
                ids.push((c.job_id, c.node_id));
            }
            samples.push(GroupSample {
                slots,
                winner_slot,
                provenance: (rec.stage_idx, ids),
            });
        }
    }
    if skipped > 0 {
        log::warn!(
            "build_groups: skipped {skipped} stage(s) with fewer than {} candidates",
            opts.g
        );
    }
    Ok(GroupBuildOutcome {
        samples,
        skipped_stages: skipped,
    })
}

/// Assemble a flat dataset (optionally renormalizing features) from groups.
pub fn samples_to_dataset(
    samples: &[GroupSample],
    g: usize,
    renorm: Option<(&NormalizationConfig, &NormalizationConfig)>,
) -> Dataset {
    let n_features = g * FEATURE_COUNT;
    let mut x = Vec::with_capacity(samples.len() * n_features);
    let mut y = Vec::with_capacity(samples.len());
    for s in samples {
        for fv in &s.slots {
            let fv = match renorm {
                Some((from, to)) => fv.renormalized(from, to),
                None => *fv,
            };
            x.extend_from_slice(&fv.as_array());
        }
        y.push(s.winner_slot);
    }
    Dataset {
        w: vec![1.0; samples.len()],
        x,
        y,
        n_features,
        n_classes: g,
    }
}

/// The (g, depth, leaves) budget of one tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitConfig {
    pub g: usize,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(g: usize, max_depth: usize, max_leaves: usize) -> Self {
        FitConfig {
            g,
            max_depth,
            max_leaves,
            min_leaf: 1,
            seed: 0,
        }
    }

    fn cart(&self) -> CartParams {
        CartParams {
            max_depth: self.max_depth,
            max_leaves: self.max_leaves,
            min_leaf: self.min_leaf,
        }
    }
}

/// Fit one CART comparator on group samples. `norm` and `trace_hash` are
/// recorded in the metadata so inference reuses the training normalization.
pub fn fit_tree(
    samples: &[GroupSample],
    cfg: &FitConfig,
    norm: &NormalizationConfig,
    trace_hash: &str,
) -> Result<DecisionTreeModel> {
    if samples.is_empty() {
        return Err(Error::Fit("no group samples to fit on".into()));
    }
    if samples.iter().any(|s| s.slots.len() != cfg.g) {
        return Err(Error::Fit(format!(
            "sample group size differs from configured g={}",
            cfg.g
        )));
    }
    let data = samples_to_dataset(samples, cfg.g, None);
    let nodes = grow(&data, &cfg.cart())?;
    let model = DecisionTreeModel {
        meta: TreeMeta {
            g: cfg.g,
            max_depth: cfg.max_depth,
            max_leaves: cfg.max_leaves,
            min_leaf: cfg.min_leaf,
            seed: cfg.seed,
            normalization: *norm,
            trace_hash: trace_hash.to_string(),
        },
        nodes,
    };
    debug_assert!(model.validate().is_ok());
    Ok(model)
}

/// Weighted refit used by tuning: same algorithm, caller-controlled rows.
pub fn fit_tree_weighted(
    data: &Dataset,
    cfg: &FitConfig,
    norm: &NormalizationConfig,
    trace_hash: &str,
) -> Result<DecisionTreeModel> {
    let nodes = grow(data, &cfg.cart())?;
    Ok(DecisionTreeModel {
        meta: TreeMeta {
            g: cfg.g,
            max_depth: cfg.max_depth,
            max_leaves: cfg.max_leaves,
            min_leaf: cfg.min_leaf,
            seed: cfg.seed,
            normalization: *norm,
            trace_hash: trace_hash.to_string(),
        },
        nodes,
    })
}

/// Identity string tying a model to the trace it was trained on.
pub fn trace_fingerprint(trace: &TraceFile) -> String {
    format!(
        "wl:{}:sched:{}:seed:{}:stages:{}",
        trace.header.workload_hash,
        trace.header.scheduler,
        trace.header.seed,
        trace.records.len()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Fraction of groups whose winning slot the tree predicts.
    pub within_group: f64,
    /// Fraction of stages where the full tournament reproduces the recorded
    /// winner.
    pub across_trace: f64,
    pub n_groups: usize,
    pub n_stages: usize,
}

#[derive(Debug, Clone)]
pub struct FidelityOptions {
    pub max_groups_per_stage: usize,
    pub winner_slot_policy: WinnerSlotPolicy,
    pub seed: u64,
    pub tournament_m: usize,
    pub tiebreak: TieBreak,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        FidelityOptions {
            max_groups_per_stage: 200,
            winner_slot_policy: WinnerSlotPolicy::Permute,
            seed: 0,
            tournament_m: 2,
            tiebreak: TieBreak::LeastWork,
        }
    }
}

/// Measure fidelity of a model against a held-out trace. Features recorded
/// under a different normalization are converted to the model's.
pub fn fidelity(
    model: &DecisionTreeModel,
    test_trace: &TraceFile,
    opts: &FidelityOptions,
) -> Result<FidelityReport> {
    if test_trace.records.is_empty() {
        return Err(Error::validation("empty test trace"));
    }
    let g = model.meta.g;
    let built = build_groups(
        test_trace,
        &GroupBuildOptions {
            g,
            max_groups_per_stage: opts.max_groups_per_stage,
            winner_slot_policy: opts.winner_slot_policy,
            seed: opts.seed,
        },
    )?;
    if built.samples.is_empty() {
        return Err(Error::validation(format!(
            "test trace has no stage with >= {g} candidates"
        )));
    }
    let from = &test_trace.header.normalization;
    let to = &model.meta.normalization;
    let data = samples_to_dataset(&built.samples, g, Some((from, to)));
    let mut hits = 0usize;
    for i in 0..data.len() {
        if model.predict(data.row(i))? == data.y[i] {
            hits += 1;
        }
    }
    let within_group = hits as f64 / data.len() as f64;

    let mut stage_hits = 0usize;
    let mut stages = 0usize;
    for rec in &test_trace.records {
        let candidates: Vec<TournamentCandidate> = rec
            .candidates
            .iter()
            .map(|c| TournamentCandidate {
                job_id: c.job_id,
                node_id: c.node_id,
                features: c.features.renormalized(from, to),
            })
            .collect();
        let stage_seed = opts
            .seed
            .wrapping_add(rec.stage_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let outcome = tournament_select(
            model,
            &candidates,
            opts.tournament_m,
            opts.tiebreak,
            stage_seed,
            None,
        )?;
        stages += 1;
        if outcome.winner_job == rec.chosen_job && outcome.winner_node == rec.chosen_node {
            stage_hits += 1;
        }
    }
    Ok(FidelityReport {
        within_group,
        across_trace: stage_hits as f64 / stages as f64,
        n_groups: data.len(),
        n_stages: stages,
    })
}

// ---------------------------------------------------------------------------
// Tree pool
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub model: DecisionTreeModel,
    pub within_group: f64,
    pub across_trace: f64,
}

/// Fidelity-ranked collection of distilled trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePool {
    pub entries: Vec<PoolEntry>,
    pub capacity: usize,
}

impl TreePool {
    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries.first()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let pool: TreePool = serde_json::from_reader(std::io::BufReader::new(file))?;
        for e in &pool.entries {
            e.model.validate()?;
        }
        Ok(pool)
    }
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    pub max_groups_per_stage: usize,
    pub winner_slot_policy: WinnerSlotPolicy,
    pub seed: u64,
    pub tournament_m: usize,
    pub tiebreak: TieBreak,
}

impl Default for DistillOptions {
    fn default() -> Self {
        DistillOptions {
            max_groups_per_stage: 200,
            winner_slot_policy: WinnerSlotPolicy::Permute,
            seed: 0,
            tournament_m: 2,
            tiebreak: TieBreak::LeastWork,
        }
    }
}

/// Fit one tree per config, rank by held-out within-group fidelity, keep the
/// best `capacity`. Fits run in parallel; the ranking is deterministic.
pub fn distill_pool(
    train_trace: &TraceFile,
    test_trace: &TraceFile,
    configs: &[FitConfig],
    capacity: usize,
    opts: &DistillOptions,
) -> Result<TreePool> {
    if configs.is_empty() {
        return Err(Error::validation("at least one tree config required"));
    }
    if capacity == 0 {
        return Err(Error::validation("pool capacity must be >= 1"));
    }
    if opts.winner_slot_policy == WinnerSlotPolicy::Last {
        return Err(Error::Fit(
            "winner-slot policy 'last' makes every label the final slot; \
             a comparator trained on it is degenerate. use 'permute'"
                .into(),
        ));
    }

    // group samples are shared between configs with the same g
    let mut samples_by_g: BTreeMap<usize, Vec<GroupSample>> = BTreeMap::new();
    for cfg in configs {
        if !samples_by_g.contains_key(&cfg.g) {
            let built = build_groups(
                train_trace,
                &GroupBuildOptions {
                    g: cfg.g,
                    max_groups_per_stage: opts.max_groups_per_stage,
                    winner_slot_policy: opts.winner_slot_policy,
                    seed: opts.seed,
                },
            )?;
            samples_by_g.insert(cfg.g, built.samples);
        }
    }

    let hash = trace_fingerprint(train_trace);
    let norm = train_trace.header.normalization;
    let fidelity_opts = FidelityOptions {
        max_groups_per_stage: opts.max_groups_per_stage,
        winner_slot_policy: opts.winner_slot_policy,
        seed: opts.seed,
        tournament_m: opts.tournament_m,
        tiebreak: opts.tiebreak,
    };

    let mut entries: Vec<(usize, PoolEntry)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| -> Result<(usize, PoolEntry)> {
            let samples = &samples_by_g[&cfg.g];
            let model = fit_tree(samples, cfg, &norm, &hash)?;
            let rep = fidelity(&model, test_trace, &fidelity_opts)?;
            Ok((
                i,
                PoolEntry {
                    model,
                    within_group: rep.within_group,
                    across_trace: rep.across_trace,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    entries.sort_by(|(ia, a), (ib, b)| {
        b.within_group
            .total_cmp(&a.within_group)
            .then(b.across_trace.total_cmp(&a.across_trace))
            .then(ia.cmp(ib))
    });
    let entries: Vec<PoolEntry> = entries
        .into_iter()
        .map(|(_, e)| e)
        .take(capacity)
        .collect();
    Ok(TreePool { entries, capacity })
}
