//! The merge engine: bipartite partitioning, merging of the top-Υ tokens by
//! information degree with size tracking, the minimum-token threshold, and
//! the inverse restore operation used by generation pipelines.
//!
//! Merging is a size-weighted average, so the size-weighted token sum (the
//! "mass") is conserved and a merged sequence stays equivalent to its
//! physically expanded form under size-biased attention. Restore rebuilds
//! the pre-merge geometry after a block has run on the shortened sequence.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use crate::informativity::{bipartite_redundancy, information_degree, FusionStrategy};
use crate::numerics::Matrix;
use crate::sequence::TokenSequence;

/// Which projection space token similarity is measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityFeature {
    /// Key projections (the default; cheapest signal that already exists).
    Keys,
    /// Query projections.
    Queries,
    /// Raw token embeddings.
    Tokens,
}

/// Whether merged tokens stay merged or are restored after each component.
///
/// Merge-only maps skip recording the restore metadata (pre-merge source
/// rows), so [`turbo_restore`] only accepts maps produced in merge-restore
/// mode. The pipelines stamp the mode they need on every block: the
/// shrinking pipeline merges only, the grid-preserving one restores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurboMode {
    /// Understanding pipelines: sequences shrink monotonically.
    MergeOnly,
    /// Generation pipelines: merge before a component, restore after it.
    MergeRestore,
}

/// How a restored token is reconstructed from its merge target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreRule {
    /// The restored token is a copy of its target's post-block row.
    CopyTarget,
    /// Blend of the target's post-block row and the token's own pre-merge
    /// row, weighted by the stored match similarity.
    BlendSimilarity,
}

/// Merge-engine knobs.
///
/// `drop_ratio` is the number of tokens removed per block — a count,
/// despite the name. `min_tokens_threshold` floors the sequence length so
/// aggressive settings cannot collapse it. The pipelines stamp `mode` and
/// the strategy's `block_id` per block; both matter when driving the merge
/// engine directly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurboConfig {
    pub drop_ratio: usize,
    pub strategy: FusionStrategy,
    pub similarity_feature: SimilarityFeature,
    pub min_tokens_threshold: usize,
    pub mode: TurboMode,
    pub restore_rule: RestoreRule,
}

impl Default for TurboConfig {
    fn default() -> Self {
        TurboConfig {
            drop_ratio: 0,
            strategy: FusionStrategy::default(),
            similarity_feature: SimilarityFeature::Keys,
            min_tokens_threshold: 1,
            mode: TurboMode::MergeOnly,
            restore_rule: RestoreRule::CopyTarget,
        }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens_threshold < 1 {
            return Err(Error::Config(
                "min_tokens_threshold must be at least 1".to_string(),
            ));
        }
        self.strategy.validate()
    }
}

/// One executed merge: `source` collapsed into `target` (both pre-merge
/// indices) at the recorded match similarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergePair {
    pub source: usize,
    pub target: usize,
    pub similarity: f32,
}

/// Complete record of one merge decision — everything restore needs to
/// invert it and everything diagnostics want to inspect it.
#[derive(Clone, Debug)]
pub struct MergeMap {
    /// Sequence length before merging.
    pub pre_merge_length: usize,
    /// The candidate partition (pre-merge indices).
    pub b_indices: Vec<usize>,
    /// The target partition (pre-merge indices; includes the classifier).
    pub c_indices: Vec<usize>,
    /// Executed merges in priority order (highest information degree
    /// first). Sources are distinct; targets may repeat.
    pub merged: Vec<MergePair>,
    /// Post-merge position -> pre-merge position, ascending.
    pub survivor_order: Vec<usize>,
    /// Sizes before the merge; restore resets to these.
    pre_merge_sizes: Vec<u64>,
    /// Pre-merge rows of the merged-away sources, aligned with `merged`;
    /// recorded in merge-restore mode only, and read by the blend restore.
    merged_rows: Matrix,
    /// Classifier position before the merge.
    cls_index: Option<usize>,
    restore_rule: RestoreRule,
    /// The mode the map was recorded under; restoring needs merge-restore.
    mode: TurboMode,
}

impl MergeMap {
    /// Number of merges actually executed, after all clamping.
    pub fn upsilon_effective(&self) -> usize {
        self.merged.len()
    }

    /// JSON summary of the decision (indices and similarities only).
    pub fn to_debug_json(&self, block_id: usize) -> serde_json::Value {
        json!({
            "block_id": block_id,
            "pre_merge_length": self.pre_merge_length,
            "b_indices": self.b_indices,
            "c_indices": self.c_indices,
            "merged": self
                .merged
                .iter()
                .map(|p| {
                    json!({
                        "source": p.source,
                        "target": p.target,
                        "similarity": p.similarity,
                    })
                })
                .collect::<Vec<_>>(),
            "survivor_order": self.survivor_order,
        })
    }
}

/// Splits a sequence into merge candidates B and merge targets C.
///
/// Non-classifier tokens alternate by position: odd positions become
/// candidates, even positions targets; the classifier (position 0, an even
/// position) always lands in C. With fewer than 2 mergeable tokens there is
/// nothing to pair, so B is empty and C holds everything.
pub fn partition(seq: &TokenSequence) -> (Vec<usize>, Vec<usize>) {
    let n = seq.len();
    let mergeable = n - usize::from(seq.cls_index().is_some());
    if mergeable < 2 {
        return (Vec::new(), (0..n).collect());
    }
    let mut b = Vec::with_capacity(n / 2);
    let mut c = Vec::with_capacity(n - n / 2);
    for i in 0..n {
        if i % 2 == 1 {
            b.push(i);
        } else {
            c.push(i);
        }
    }
    (b, c)
}

/// Merges the `drop_ratio` most expendable tokens of `seq` into their best
/// matches, guided by the attention trace of the block that just ran.
///
/// Similarity is measured in the configured feature space from the trace;
/// the semantic value is the trace's classifier attention row.
pub fn turbo_merge(
    seq: &TokenSequence,
    trace: &AttentionTrace,
    cfg: &TurboConfig,
) -> Result<(TokenSequence, MergeMap)> {
    if trace.outputs.rows() != seq.len() {
        return Err(Error::Shape(format!(
            "attention trace covers {} tokens but the sequence has {}",
            trace.outputs.rows(),
            seq.len()
        )));
    }
    let features = match cfg.similarity_feature {
        SimilarityFeature::Keys => &trace.keys,
        SimilarityFeature::Queries => &trace.queries,
        SimilarityFeature::Tokens => &seq.tokens,
    };
    turbo_merge_guided(seq, &trace.cls_attention, features, cfg)
}

/// [`turbo_merge`] with the guidance signals passed explicitly: `semantic`
/// is a per-token semantic value and `features` the similarity space (one
/// row per token). Generation components use this entry point directly with
/// cross-modal guidance.
pub fn turbo_merge_guided(
    seq: &TokenSequence,
    semantic: &[f32],
    features: &Matrix,
    cfg: &TurboConfig,
) -> Result<(TokenSequence, MergeMap)> {
    cfg.validate()?;
    let n = seq.len();
    if semantic.len() != n {
        return Err(Error::Shape(format!(
            "{} semantic values for a {n}-token sequence",
            semantic.len()
        )));
    }
    if features.rows() != n {
        return Err(Error::Shape(format!(
            "{} feature rows for a {n}-token sequence",
            features.rows()
        )));
    }

    let (b_indices, c_indices) = partition(seq);
    let targets: Vec<usize> = c_indices
        .iter()
        .copied()
        .filter(|&i| Some(i) != seq.cls_index())
        .collect();
    let upsilon_eff = cfg
        .drop_ratio
        .min(b_indices.len())
        .min(n.saturating_sub(cfg.min_tokens_threshold));
    if upsilon_eff == 0 || targets.is_empty() {
        let map = MergeMap {
            pre_merge_length: n,
            b_indices,
            c_indices,
            merged: Vec::new(),
            survivor_order: (0..n).collect(),
            pre_merge_sizes: seq.sizes().to_vec(),
            merged_rows: Matrix::zeros(0, seq.width()),
            cls_index: seq.cls_index(),
            restore_rule: cfg.restore_rule,
            mode: cfg.mode,
        };
        return Ok((seq.clone(), map));
    }

    let b_features = features.gather_rows(&b_indices);
    let t_features = features.gather_rows(&targets);
    let matches = bipartite_redundancy(&b_features, &t_features)?;
    let b_redundancy: Vec<f32> = matches.iter().map(|&(sim, _)| sim).collect();
    let b_semantic: Vec<f32> = b_indices.iter().map(|&i| semantic[i]).collect();
    let degrees = information_degree(&b_redundancy, &b_semantic, &cfg.strategy)?.values;

    // Highest degree merges first; the stable sort breaks float ties toward
    // the lower original position.
    let mut order: Vec<usize> = (0..b_indices.len()).collect();
    order.sort_by(|&x, &y| degrees[y].total_cmp(&degrees[x]));
    order.truncate(upsilon_eff);

    let width = seq.width();
    let sizes = seq.sizes();
    let mut merged = Vec::with_capacity(upsilon_eff);
    let mut merged_row_data = Vec::with_capacity(upsilon_eff * width);
    let mut removed = vec![false; n];
    // Per-target running sum of size-weighted rows, started lazily from the
    // target's own mass. Joint accumulation in f64 makes the result
    // independent of merge order and exact for duplicate rows.
    let mut pools: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut extra_size = vec![0u64; n];
    for &pos in &order {
        let source = b_indices[pos];
        let (sim, target_pos) = matches[pos];
        let target = targets[target_pos];
        let pool = pools[target].get_or_insert_with(|| {
            let s_t = sizes[target] as f64;
            seq.tokens.row(target).iter().map(|&v| s_t * v as f64).collect()
        });
        let s_b = sizes[source] as f64;
        for (j, &v) in seq.tokens.row(source).iter().enumerate() {
            pool[j] += s_b * v as f64;
        }
        extra_size[target] += sizes[source];
        removed[source] = true;
        merged.push(MergePair {
            source,
            target,
            similarity: sim,
        });
        if cfg.mode == TurboMode::MergeRestore {
            merged_row_data.extend_from_slice(seq.tokens.row(source));
        }
    }

    let mut survivor_order = Vec::with_capacity(n - upsilon_eff);
    let mut out_data = Vec::with_capacity((n - upsilon_eff) * width);
    let mut out_sizes = Vec::with_capacity(n - upsilon_eff);
    let mut out_cls = None;
    for i in 0..n {
        if removed[i] {
            continue;
        }
        if Some(i) == seq.cls_index() {
            out_cls = Some(survivor_order.len());
        }
        let total = sizes[i] + extra_size[i];
        match &pools[i] {
            Some(pool) => {
                let denom = total as f64;
                out_data.extend(pool.iter().map(|&v| (v / denom) as f32));
            }
            None => out_data.extend_from_slice(seq.tokens.row(i)),
        }
        out_sizes.push(total);
        survivor_order.push(i);
    }

    let tokens = Matrix::new(n - upsilon_eff, width, out_data)?;
    let out = TokenSequence::assemble(tokens, out_sizes, out_cls, seq.origin_count());
    let recorded = if cfg.mode == TurboMode::MergeRestore {
        Matrix::new(upsilon_eff, width, merged_row_data)?
    } else {
        Matrix::zeros(0, width)
    };
    let map = MergeMap {
        pre_merge_length: n,
        b_indices,
        c_indices,
        merged,
        survivor_order,
        pre_merge_sizes: sizes.to_vec(),
        merged_rows: recorded,
        cls_index: seq.cls_index(),
        restore_rule: cfg.restore_rule,
        mode: cfg.mode,
    };
    Ok((out, map))
}

/// Inverts a merge after the block has run: every merged-away position is
/// refilled from its target's current row (or a similarity blend with its
/// own pre-merge row), survivors return to their original positions, and
/// sizes reset to their pre-merge values.
pub fn turbo_restore(seq: &TokenSequence, map: &MergeMap) -> Result<TokenSequence> {
    if map.mode != TurboMode::MergeRestore {
        return Err(Error::Consistency(
            "the merge map was recorded merge-only and carries no restore data".to_string(),
        ));
    }
    let n_post = map.survivor_order.len();
    if seq.len() != n_post {
        return Err(Error::Consistency(format!(
            "restore expects the {n_post} merge survivors, got {} rows",
            seq.len()
        )));
    }
    let width = seq.width();
    if !map.merged.is_empty() && map.merged_rows.cols() != width {
        return Err(Error::Consistency(format!(
            "merge recorded width {} but the block output has width {width}",
            map.merged_rows.cols()
        )));
    }

    let mut post_of_pre: Vec<Option<usize>> = vec![None; map.pre_merge_length];
    for (post, &pre) in map.survivor_order.iter().enumerate() {
        if pre >= map.pre_merge_length {
            return Err(Error::Consistency(format!(
                "survivor points at pre-merge position {pre} of {}",
                map.pre_merge_length
            )));
        }
        post_of_pre[pre] = Some(post);
    }

    let mut out = Matrix::zeros(map.pre_merge_length, width);
    for (post, &pre) in map.survivor_order.iter().enumerate() {
        out.row_mut(pre).copy_from_slice(seq.tokens.row(post));
    }
    for (k, pair) in map.merged.iter().enumerate() {
        let target_post = post_of_pre[pair.target].ok_or_else(|| {
            Error::Consistency(format!(
                "merge target {} is not among the survivors",
                pair.target
            ))
        })?;
        let target_row = seq.tokens.row(target_post);
        match map.restore_rule {
            RestoreRule::CopyTarget => {
                out.row_mut(pair.source).copy_from_slice(target_row);
            }
            RestoreRule::BlendSimilarity => {
                let w = pair.similarity.clamp(0.0, 1.0);
                let own = map.merged_rows.row(k);
                let dest = out.row_mut(pair.source);
                for j in 0..width {
                    dest[j] = w * target_row[j] + (1.0 - w) * own[j];
                }
            }
        }
    }
    TokenSequence::new(out, map.pre_merge_sizes.clone(), map.cls_index)
}

/// Evaluates the semantic-prune perturbation directly: removing the tokens
/// in `prune` from the classifier's weighted reading shifts it by
/// `actual = |sum_{j in prune} A_j V_j|_2`, which the triangle inequality
/// bounds by `sum_{j in prune} A_j |V_j|_2`. Returns `(actual, bound)`.
pub fn semantic_prune_bound_check(
    seq: &TokenSequence,
    trace: &AttentionTrace,
    prune: &[usize],
) -> Result<(f64, f64)> {
    let n = seq.len();
    if trace.values.rows() != n || trace.cls_attention.len() != n {
        return Err(Error::Shape(format!(
            "attention trace covers {} tokens but the sequence has {n}",
            trace.values.rows()
        )));
    }
    let mut seen = vec![false; n];
    for &j in prune {
        if j >= n {
            return Err(Error::Domain(format!(
                "prune index {j} out of range for {n} tokens"
            )));
        }
        if Some(j) == seq.cls_index() {
            return Err(Error::Domain(
                "the classifier token cannot be pruned".to_string(),
            ));
        }
        if seen[j] {
            return Err(Error::Domain(format!("duplicate prune index {j}")));
        }
        seen[j] = true;
    }

    let width = trace.values.cols();
    let mut delta = vec![0.0f64; width];
    let mut bound = 0.0f64;
    for &j in prune {
        let a = trace.cls_attention[j] as f64;
        let row = trace.values.row(j);
        let mut norm_sq = 0.0f64;
        for (c, &v) in row.iter().enumerate() {
            delta[c] += a * v as f64;
            norm_sq += v as f64 * v as f64;
        }
        bound += a * norm_sq.sqrt();
    }
    let actual = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok((actual, bound))
}
