//! Informativity scoring: how redundant and how semantically loaded each
//! token is, and how the two signals fuse into the information degree that
//! ranks merge candidates.
//!
//! Redundancy `R_i` is the highest cosine similarity a token has against the
//! tokens it may merge with; semantic value `A_i` is the classifier
//! attention mass a token receives. Tokens with high `E` (redundant and
//! semantically light) merge first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Matrix};

/// Fusion rule selector. All four rules combine redundancy `R` and semantic
/// value `A` into an information degree `E`; they differ in how strongly the
/// semantic term suppresses merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// `E = R - alpha * A` (weighted difference; the default).
    S1,
    /// `E = R / A` (ratio; `A` floored at 1e-8).
    S2,
    /// `E = R * (1 - alpha * A)` (modulated product).
    S3,
    /// `E = R - beta^|gamma - block| * alpha * A` (block-scheduled weight).
    S4,
}

/// A fusion strategy with its scalar knobs.
///
/// `block_id` is the index of the block currently being scored; only S4
/// reads it. Pipelines stamp it per block via [`FusionStrategy::for_block`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionStrategy {
    pub kind: StrategyKind,
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub block_id: usize,
}

impl Default for FusionStrategy {
    fn default() -> Self {
        FusionStrategy {
            kind: StrategyKind::S1,
            alpha: 6.0,
            beta: 1.0,
            gamma: 0.0,
            block_id: 0,
        }
    }
}

impl FusionStrategy {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "fusion alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "fusion beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Config("fusion gamma must be finite".to_string()));
        }
        Ok(())
    }

    /// The same strategy aimed at a specific block.
    pub fn for_block(mut self, block_id: usize) -> Self {
        self.block_id = block_id;
        self
    }
}

/// Floor applied to semantic values under the S2 ratio rule.
pub const S2_SEMANTIC_FLOOR: f32 = 1e-8;

/// Information degrees for a redundancy/semantic pair.
pub struct DegreeResult {
    pub values: Vec<f32>,
    /// True when S2 hit the semantic floor somewhere (near division by
    /// zero; the ratio is then saturated rather than infinite).
    pub floored: bool,
}

/// Fuses redundancy and semantic value into information degree, higher
/// meaning merge earlier.
///
/// For non-negative redundancy every rule is monotone non-increasing in the
/// semantic value, so semantically loaded tokens survive; S2 and S3 lose
/// that guarantee where redundancy is negative (the ratio and product flip
/// sign), which the degenerate-input tests pin down.
pub fn information_degree(
    redundancy: &[f32],
    semantic: &[f32],
    strategy: &FusionStrategy,
) -> Result<DegreeResult> {
    if redundancy.len() != semantic.len() {
        return Err(Error::Shape(format!(
            "{} redundancy values against {} semantic values",
            redundancy.len(),
            semantic.len()
        )));
    }
    strategy.validate()?;
    let mut floored = false;
    let values = redundancy
        .iter()
        .zip(semantic)
        .map(|(&r, &a)| match strategy.kind {
            StrategyKind::S1 => r - strategy.alpha * a,
            StrategyKind::S2 => {
                let denom = if a < S2_SEMANTIC_FLOOR {
                    floored = true;
                    S2_SEMANTIC_FLOOR
                } else {
                    a
                };
                r / denom
            }
            StrategyKind::S3 => r * (1.0 - strategy.alpha * a),
            StrategyKind::S4 => {
                let distance = (strategy.gamma - strategy.block_id as f32).abs();
                r - strategy.beta.powf(distance) * strategy.alpha * a
            }
        })
        .collect();
    Ok(DegreeResult { values, floored })
}

/// Mutual redundancy over a whole sequence: for every token, the maximum
/// cosine similarity against any *other* token. Needs at least two tokens.
pub fn mutual_redundancy_full(tokens: &Matrix) -> Result<Vec<f32>> {
    let n = tokens.rows();
    if n < 2 {
        return Err(Error::Domain(format!(
            "mutual redundancy needs at least 2 tokens, got {n}"
        )));
    }
    let mut out = vec![f32::NEG_INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = cosine_similarity(tokens.row(i), tokens.row(j));
            if sim > out[i] {
                out[i] = sim;
            }
            if sim > out[j] {
                out[j] = sim;
            }
        }
    }
    Ok(out)
}

/// Best match of every candidate row against a target set: the highest
/// cosine similarity and the index of the row achieving it, ties resolved
/// toward the lowest target index. Similarities accumulate in `f64` and
/// round once to `f32`, so any matcher following the same contract agrees
/// exactly.
pub fn bipartite_redundancy(b_keys: &Matrix, c_keys: &Matrix) -> Result<Vec<(f32, usize)>> {
    if b_keys.cols() != c_keys.cols() {
        return Err(Error::Shape(format!(
            "candidate width {} against target width {}",
            b_keys.cols(),
            c_keys.cols()
        )));
    }
    if c_keys.rows() == 0 {
        return Err(Error::Domain("no target rows to match against".to_string()));
    }
    let mut out = Vec::with_capacity(b_keys.rows());
    for i in 0..b_keys.rows() {
        let mut best = f32::NEG_INFINITY;
        let mut best_j = 0usize;
        for j in 0..c_keys.rows() {
            let sim = cosine_similarity(b_keys.row(i), c_keys.row(j));
            if sim > best {
                best = sim;
                best_j = j;
            }
        }
        out.push((best, best_j));
    }
    Ok(out)
}

/// Mean pairwise cosine similarity over all unordered distinct pairs — the
/// sequence-level redundancy diagnostic.
pub fn token_redundancy_metric(tokens: &Matrix) -> Result<f32> {
    let n = tokens.rows();
    if n < 2 {
        return Err(Error::Domain(format!(
            "redundancy metric needs at least 2 tokens, got {n}"
        )));
    }
    let mut total = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            total += cosine_similarity(tokens.row(i), tokens.row(j)) as f64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((total / pairs) as f32)
}

/// Attention-concentration diagnostic: the probability mass captured by the
/// top quarter (`floor(n/4)`) of semantic values. Zero for sequences shorter
/// than 4 tokens.
pub fn attention_concentration(semantic: &[f32]) -> f32 {
    let n = semantic.len();
    let top = n / 4;
    if top == 0 {
        return 0.0;
    }
    let mut sorted = semantic.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[..top].iter().sum()
}

/// Per-token scores for one merge decision.
#[derive(Clone, Debug)]
pub struct InformativityScores {
    /// Max similarity toward the opposite partition (candidates score
    /// against eligible targets; targets and the classifier score against
    /// candidates). Zero when the opposite side is empty.
    pub redundancy: Vec<f32>,
    /// Semantic value (classifier attention), a probability vector.
    pub semantic: Vec<f32>,
    /// Fused information degree.
    pub degree: Vec<f32>,
    /// For candidate tokens, the global index of their best target.
    pub match_target: Vec<Option<usize>>,
    /// True when the S2 ratio hit its semantic floor.
    pub degenerate: bool,
}

/// Scores a partitioned sequence: candidates (`b_indices`) are matched
/// against the eligible targets (`targets`, global indices), and every token
/// gets a fused degree. `features` supplies the similarity space (rows
/// aligned with `semantic`).
pub fn compute_scores(
    features: &Matrix,
    semantic: &[f32],
    b_indices: &[usize],
    targets: &[usize],
    strategy: &FusionStrategy,
) -> Result<InformativityScores> {
    let n = features.rows();
    if semantic.len() != n {
        return Err(Error::Shape(format!(
            "{} semantic values for {n} feature rows",
            semantic.len()
        )));
    }
    let mut redundancy = vec![0.0f32; n];
    let mut match_target = vec![None; n];
    if !b_indices.is_empty() && !targets.is_empty() {
        let b_feats = features.gather_rows(b_indices);
        let t_feats = features.gather_rows(targets);
        let matches = bipartite_redundancy(&b_feats, &t_feats)?;
        for (pos, &(sim, target_pos)) in matches.iter().enumerate() {
            redundancy[b_indices[pos]] = sim;
            match_target[b_indices[pos]] = Some(targets[target_pos]);
        }
        // Mirror view for the rest of the sequence: best similarity toward
        // the candidate set. Diagnostics only; merging never reads these.
        for i in 0..n {
            if match_target[i].is_none() && !b_indices.contains(&i) {
                let mut best = f32::NEG_INFINITY;
                for &b in b_indices {
                    let sim = cosine_similarity(features.row(i), features.row(b));
                    if sim > best {
                        best = sim;
                    }
                }
                redundancy[i] = best;
            }
        }
        // Targets themselves: reuse the transpose of the match matrix.
        for &t in targets {
            let mut best = f32::NEG_INFINITY;
            for &b in b_indices {
                let sim = cosine_similarity(features.row(t), features.row(b));
                if sim > best {
                    best = sim;
                }
            }
            redundancy[t] = best;
        }
    }
    let fused = information_degree(&redundancy, semantic, strategy)?;
    Ok(InformativityScores {
        redundancy,
        semantic: semantic.to_vec(),
        degree: fused.values,
        match_target,
        degenerate: fused.floored,
    })
}

/// CSV rows `block_id,token_id,redundancy,semantic,degree`, one per token,
/// with a header.
pub fn scores_to_csv(block_id: usize, scores: &InformativityScores) -> String {
    let mut out = String::from("block_id,token_id,redundancy,semantic,degree\n");
    for i in 0..scores.redundancy.len() {
        out.push_str(&format!(
            "{block_id},{i},{},{},{}\n",
            scores.redundancy[i], scores.semantic[i], scores.degree[i]
        ));
    }
    out
}
