//! Desk-scale pipelines assembling attention blocks end to end: an
//! understanding mode that merges progressively so the sequence shrinks
//! block by block, and a generation mode that merges before and restores
//! after every component so block boundaries keep the full token grid.
//! Also home to the analytic FLOP model and wall-clock measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{
    attend, cls_attention_row, cross_attend, cross_modal_cls_attention, ffn, init_weights,
    BlockWeights,
};
use crate::error::{Error, Result};
use crate::informativity::{attention_concentration, token_redundancy_metric};
use crate::merge::{
    turbo_merge, turbo_merge_guided, turbo_restore, SimilarityFeature, TurboConfig, TurboMode,
};
use crate::numerics::{cosine_similarity, matmul, Matrix};
use crate::report::{checksum_hex, sequence_checksum, BlockStats, RunReport};
use crate::sequence::TokenSequence;
use crate::synth::sinusoidal_encoding;

/// Which pipeline a model runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    /// Encoder-style: blocks of self-attention + FFN, merged tokens stay
    /// merged, the sequence shrinks monotonically.
    Understanding,
    /// Decoder-style: self-attention, cross-attention over a context, and
    /// FFN per block; merging is undone after every component so the
    /// sequence length at block boundaries never changes.
    Generation,
}

/// Model geometry and run plumbing.
///
/// Defaults mirror a small vision encoder: 12 blocks, width 64 over 4
/// heads, FFN width 256, and 197 input tokens (a 14x14 patch grid plus the
/// classifier token).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub input_tokens: usize,
    pub mode: PipelineMode,
    /// Context sequence length; generation mode only.
    pub context_tokens: usize,
    /// Context embedding width; defaults to `width` when absent.
    pub context_width: Option<usize>,
    pub seed: u64,
    /// Whether the input sequence carries a classifier token at position 0.
    pub cls: bool,
    /// Whether the context sequence carries a classifier token.
    pub context_cls: bool,
    /// Add a fixed sinusoidal position signal to the input tokens.
    pub sinusoidal_pos: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 12,
            width: 64,
            heads: 4,
            ffn_width: 256,
            input_tokens: 197,
            mode: PipelineMode::Understanding,
            context_tokens: 0,
            context_width: None,
            seed: 42,
            cls: true,
            context_cls: true,
            sinusoidal_pos: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("layers must be at least 1".to_string()));
        }
        if self.input_tokens < 2 {
            return Err(Error::Config(format!(
                "input_tokens must be at least 2, got {}",
                self.input_tokens
            )));
        }
        if self.width == 0 || self.heads == 0 || self.ffn_width == 0 {
            return Err(Error::Config(
                "width, heads, and ffn_width must be positive".to_string(),
            ));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} is not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.mode == PipelineMode::Generation {
            if self.context_tokens == 0 {
                return Err(Error::Config(
                    "generation mode needs context_tokens >= 1".to_string(),
                ));
            }
            if self.context_width == Some(0) {
                return Err(Error::Config("context_width must be positive".to_string()));
            }
        }
        Ok(())
    }

    /// Context embedding width, falling back to the model width.
    pub fn context_width(&self) -> usize {
        self.context_width.unwrap_or(self.width)
    }
}

/// Analytic FLOP count for a run, one schedule entry per block giving the
/// token count the block computed at (its post-merge length).
///
/// Convention: 1 multiply-accumulate = 2 FLOPs. Per block with n tokens,
/// width D, FFN width F: QKVO projections 8nD^2, attention 4n^2D, FFN
/// 4nDF. Generation blocks add cross-attention over m context tokens:
/// 4nD(D+m) + 4nmD.
pub fn flops(cfg: &ModelConfig, schedule: &[usize]) -> Result<u64> {
    cfg.validate()?;
    if schedule.len() != cfg.layers {
        return Err(Error::Config(format!(
            "schedule has {} entries for {} layers",
            schedule.len(),
            cfg.layers
        )));
    }
    let d = cfg.width as u64;
    let f = cfg.ffn_width as u64;
    let m = cfg.context_tokens as u64;
    let mut total = 0u64;
    for &n in schedule {
        let n = n as u64;
        let mut block = 8 * n * d * d + 4 * n * n * d + 4 * n * d * f;
        if cfg.mode == PipelineMode::Generation {
            block += 4 * n * d * (d + m) + 4 * n * m * d;
        }
        total += block;
    }
    Ok(total)
}

/// Median-based throughput of a runner, in sequences per second.
///
/// Runs one untimed warm-up, then `repetitions` timed calls (3 minimum)
/// and reports the reciprocal of the median.
pub fn measure_throughput<F: FnMut()>(mut runner: F, repetitions: usize) -> f64 {
    assert!(
        repetitions >= 3,
        "throughput needs at least 3 repetitions, got {repetitions}"
    );
    runner();
    let mut times: Vec<f64> = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            runner();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = if repetitions % 2 == 1 {
        times[repetitions / 2]
    } else {
        (times[repetitions / 2 - 1] + times[repetitions / 2]) / 2.0
    };
    1.0 / median.max(1e-12)
}

/// Divergence between two outputs, read at the classifier row: one minus
/// the cosine similarity of the first rows. Zero for identical outputs.
pub fn cls_divergence(a: &Matrix, b: &Matrix) -> Result<f32> {
    if a.rows() == 0 || b.rows() == 0 || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "divergence needs non-empty outputs of equal width, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(1.0 - cosine_similarity(a.row(0), b.row(0)))
}

/// The similarity space a merge decision measures tokens in, computed with
/// the current block's projections.
fn merge_features(seq: &TokenSequence, w: &BlockWeights, feature: SimilarityFeature) -> Result<Matrix> {
    match feature {
        SimilarityFeature::Keys => matmul(&seq.tokens, &w.w_k),
        SimilarityFeature::Queries => matmul(&seq.tokens, &w.w_q),
        SimilarityFeature::Tokens => Ok(seq.tokens.clone()),
    }
}

/// One full understanding pass. With `diagnostics` the per-block stats are
/// collected (costing an extra O(n^2 D) redundancy scan per block); timed
/// passes switch it off.
fn forward_understanding(
    seq0: &TokenSequence,
    weights: &[BlockWeights],
    turbo: &TurboConfig,
    diagnostics: bool,
) -> Result<(TokenSequence, Vec<BlockStats>, bool)> {
    let mut seq = seq0.clone();
    let mut stats = Vec::new();
    let mut uniform = false;
    for (k, w) in weights.iter().enumerate() {
        let tokens_in = seq.len();
        let r_hat = if diagnostics && tokens_in >= 2 {
            token_redundancy_metric(&seq.tokens)?
        } else {
            0.0
        };
        let trace = attend(&seq, w)?;
        uniform |= trace.uniform_semantic;
        let a_hat = if diagnostics {
            attention_concentration(&trace.cls_attention)
        } else {
            0.0
        };
        let mid = seq.with_tokens(seq.tokens.add(&trace.outputs)?)?;
        let block_cfg = TurboConfig {
            strategy: turbo.strategy.for_block(k),
            mode: TurboMode::MergeOnly,
            ..*turbo
        };
        let (merged, map) = turbo_merge(&mid, &trace, &block_cfg)?;
        let out = merged.with_tokens(ffn(&merged.tokens, w)?)?;
        if diagnostics {
            stats.push(BlockStats {
                block: k,
                tokens_in,
                tokens_out: out.len(),
                upsilon_eff: map.upsilon_effective(),
                r_hat,
                a_hat,
            });
        }
        seq = out;
    }
    Ok((seq, stats, uniform))
}

/// Understanding pass with no merge machinery at all — the timing baseline.
fn forward_baseline_understanding(
    seq0: &TokenSequence,
    weights: &[BlockWeights],
) -> Result<TokenSequence> {
    let mut seq = seq0.clone();
    for w in weights {
        let trace = attend(&seq, w)?;
        let mid = seq.tokens.add(&trace.outputs)?;
        seq = seq.with_tokens(ffn(&mid, w)?)?;
    }
    Ok(seq)
}

/// One full generation pass: per block, each component (self-attention,
/// cross-attention, FFN) runs on a merged sequence and is restored
/// immediately after, so every block boundary sees the full grid.
/// Intra-modal components are guided by the classifier attention row;
/// cross-attention is guided by the cross-modal classifier values.
fn forward_generation(
    seq0: &TokenSequence,
    context: &TokenSequence,
    weights: &[BlockWeights],
    turbo: &TurboConfig,
    diagnostics: bool,
) -> Result<(TokenSequence, Vec<BlockStats>, bool)> {
    let mut seq = seq0.clone();
    let mut stats = Vec::new();
    let mut uniform = false;
    for (k, w) in weights.iter().enumerate() {
        let tokens_in = seq.len();
        let r_hat = if diagnostics && tokens_in >= 2 {
            token_redundancy_metric(&seq.tokens)?
        } else {
            0.0
        };
        let block_cfg = TurboConfig {
            strategy: turbo.strategy.for_block(k),
            mode: TurboMode::MergeRestore,
            ..*turbo
        };

        // Self-attention component.
        let (semantic, semantic_uniform) = cls_attention_row(&seq, w)?;
        uniform |= semantic_uniform;
        let a_hat = if diagnostics {
            attention_concentration(&semantic)
        } else {
            0.0
        };
        let features = merge_features(&seq, w, block_cfg.similarity_feature)?;
        let (merged, map) = turbo_merge_guided(&seq, &semantic, &features, &block_cfg)?;
        let upsilon_eff = map.upsilon_effective();
        let trace = attend(&merged, w)?;
        let mid = merged.with_tokens(merged.tokens.add(&trace.outputs)?)?;
        seq = turbo_restore(&mid, &map)?;

        // Cross-attention component, guided by cross-modal semantics.
        let (cross_semantic, cross_uniform) = cross_modal_cls_attention(&seq, context, w)?;
        uniform |= cross_uniform;
        let features = merge_features(&seq, w, block_cfg.similarity_feature)?;
        let (merged, map) = turbo_merge_guided(&seq, &cross_semantic, &features, &block_cfg)?;
        let trace = cross_attend(&merged, context, w)?;
        let mid = merged.with_tokens(merged.tokens.add(&trace.outputs)?)?;
        seq = turbo_restore(&mid, &map)?;

        // FFN component, guided like the self-attention one.
        let (ffn_semantic, ffn_uniform) = cls_attention_row(&seq, w)?;
        uniform |= ffn_uniform;
        let features = merge_features(&seq, w, block_cfg.similarity_feature)?;
        let (merged, map) = turbo_merge_guided(&seq, &ffn_semantic, &features, &block_cfg)?;
        let mid = merged.with_tokens(ffn(&merged.tokens, w)?)?;
        seq = turbo_restore(&mid, &map)?;

        if diagnostics {
            stats.push(BlockStats {
                block: k,
                tokens_in,
                tokens_out: seq.len(),
                upsilon_eff,
                r_hat,
                a_hat,
            });
        }
    }
    Ok((seq, stats, uniform))
}

/// Generation pass without merge machinery — the timing baseline.
fn forward_baseline_generation(
    seq0: &TokenSequence,
    context: &TokenSequence,
    weights: &[BlockWeights],
) -> Result<TokenSequence> {
    let mut seq = seq0.clone();
    for w in weights {
        let trace = attend(&seq, w)?;
        seq = seq.with_tokens(seq.tokens.add(&trace.outputs)?)?;
        let trace = cross_attend(&seq, context, w)?;
        seq = seq.with_tokens(seq.tokens.add(&trace.outputs)?)?;
        seq = seq.with_tokens(ffn(&seq.tokens, w)?)?;
    }
    Ok(seq)
}

fn prepare_input(cfg: &ModelConfig, input: &Matrix) -> Result<TokenSequence> {
    if input.rows() != cfg.input_tokens || input.cols() != cfg.width {
        return Err(Error::Config(format!(
            "input is {}x{} but the config expects {}x{}",
            input.rows(),
            input.cols(),
            cfg.input_tokens,
            cfg.width
        )));
    }
    let tokens = if cfg.sinusoidal_pos {
        input.add(&sinusoidal_encoding(cfg.input_tokens, cfg.width))?
    } else {
        input.clone()
    };
    TokenSequence::fresh(tokens, cfg.cls)
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    cfg: &ModelConfig,
    mode: &str,
    output: &Matrix,
    blocks: Vec<BlockStats>,
    turbo_schedule: Vec<usize>,
    uniform: bool,
    wall_baseline: f64,
    wall_turbo: f64,
) -> Result<RunReport> {
    let baseline_schedule = vec![cfg.input_tokens; cfg.layers];
    let flops_baseline = flops(cfg, &baseline_schedule)?;
    let flops_turbo = flops(cfg, &turbo_schedule)?;
    let checksum = sequence_checksum(output, &blocks);
    Ok(RunReport {
        mode: mode.to_string(),
        blocks,
        flops_baseline,
        flops_turbo,
        flops_ratio: flops_turbo as f64 / flops_baseline as f64,
        wall_clock_baseline: wall_baseline,
        wall_clock_turbo: wall_turbo,
        throughput_baseline: 1.0 / wall_baseline.max(1e-12),
        throughput_turbo: 1.0 / wall_turbo.max(1e-12),
        speedup: wall_baseline / wall_turbo.max(1e-12),
        output_checksum: checksum_hex(checksum),
        uniform_semantic: uniform,
    })
}

/// Runs the understanding pipeline end to end: one diagnostics pass feeds
/// the report, then lean accelerated and baseline passes are timed with
/// `repetitions` repetitions each (3 minimum, plus a warm-up).
pub fn run_understanding(
    cfg: &ModelConfig,
    turbo: &TurboConfig,
    input: &Matrix,
    repetitions: usize,
) -> Result<(Matrix, RunReport)> {
    cfg.validate()?;
    turbo.validate()?;
    if cfg.mode != PipelineMode::Understanding {
        return Err(Error::Config(
            "config is in generation mode; use run_generation".to_string(),
        ));
    }
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "repetitions must be at least 3, got {repetitions}"
        )));
    }
    let weights = init_weights(cfg, cfg.seed)?;
    let seq0 = prepare_input(cfg, input)?;

    let (out, blocks, uniform) = forward_understanding(&seq0, &weights, turbo, true)?;
    let turbo_schedule: Vec<usize> = blocks.iter().map(|b| b.tokens_out).collect();

    let turbo_tps = measure_throughput(
        || {
            forward_understanding(&seq0, &weights, turbo, false)
                .expect("validated forward cannot fail");
        },
        repetitions,
    );
    let baseline_tps = measure_throughput(
        || {
            forward_baseline_understanding(&seq0, &weights)
                .expect("validated forward cannot fail");
        },
        repetitions,
    );

    let report = assemble_report(
        cfg,
        "understanding",
        &out.tokens,
        blocks,
        turbo_schedule,
        uniform,
        1.0 / baseline_tps,
        1.0 / turbo_tps,
    )?;
    Ok((out.tokens, report))
}

/// Runs the generation pipeline end to end; see [`run_understanding`] for
/// the measurement protocol. `context` is the cross-attended sequence.
pub fn run_generation(
    cfg: &ModelConfig,
    turbo: &TurboConfig,
    input: &Matrix,
    context: &Matrix,
    repetitions: usize,
) -> Result<(Matrix, RunReport)> {
    cfg.validate()?;
    turbo.validate()?;
    if cfg.mode != PipelineMode::Generation {
        return Err(Error::Config(
            "config is in understanding mode; use run_understanding".to_string(),
        ));
    }
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "repetitions must be at least 3, got {repetitions}"
        )));
    }
    if context.rows() != cfg.context_tokens || context.cols() != cfg.context_width() {
        return Err(Error::Config(format!(
            "context is {}x{} but the config expects {}x{}",
            context.rows(),
            context.cols(),
            cfg.context_tokens,
            cfg.context_width()
        )));
    }
    let weights = init_weights(cfg, cfg.seed)?;
    let seq0 = prepare_input(cfg, input)?;
    let ctx = TokenSequence::fresh(context.clone(), cfg.context_cls)?;

    let (out, blocks, uniform) = forward_generation(&seq0, &ctx, &weights, turbo, true)?;
    let turbo_schedule: Vec<usize> = blocks
        .iter()
        .map(|b| b.tokens_in - b.upsilon_eff)
        .collect();

    let turbo_tps = measure_throughput(
        || {
            forward_generation(&seq0, &ctx, &weights, turbo, false)
                .expect("validated forward cannot fail");
        },
        repetitions,
    );
    let baseline_tps = measure_throughput(
        || {
            forward_baseline_generation(&seq0, &ctx, &weights)
                .expect("validated forward cannot fail");
        },
        repetitions,
    );

    let report = assemble_report(
        cfg,
        "generation",
        &out.tokens,
        blocks,
        turbo_schedule,
        uniform,
        1.0 / baseline_tps,
        1.0 / turbo_tps,
    )?;
    Ok((out.tokens, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::informativity::{FusionStrategy, StrategyKind};
    use crate::merge::{RestoreRule, TurboMode};
    use crate::synth;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            width: 16,
            heads: 4,
            ffn_width: 32,
            input_tokens: 9,
            ..Default::default()
        }
    }

    fn turbo_cfg(upsilon: usize) -> TurboConfig {
        TurboConfig {
            drop_ratio: upsilon,
            ..Default::default()
        }
    }

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let mut cfg = small_cfg();
        cfg.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.input_tokens = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.mode = PipelineMode::Generation;
        cfg.context_tokens = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flops_hand_values() {
        let cfg = ModelConfig {
            layers: 1,
            width: 1,
            heads: 1,
            ffn_width: 1,
            input_tokens: 2,
            ..Default::default()
        };
        assert_eq!(flops(&cfg, &[1]).unwrap(), 16);

        let cfg2 = ModelConfig {
            layers: 2,
            width: 2,
            heads: 1,
            ffn_width: 3,
            input_tokens: 4,
            ..Default::default()
        };
        // n=4: 8*4*4 + 4*16*2 + 4*4*2*3 = 128 + 128 + 96 = 352
        // n=3: 8*3*4 + 4*9*2  + 4*3*2*3 = 96 + 72 + 72   = 240
        assert_eq!(flops(&cfg2, &[4, 3]).unwrap(), 592);

        let gen = ModelConfig {
            layers: 1,
            width: 1,
            heads: 1,
            ffn_width: 1,
            input_tokens: 2,
            mode: PipelineMode::Generation,
            context_tokens: 1,
            ..Default::default()
        };
        // base 16 + cross 4*1*1*(1+1) + 4*1*1*1 = 16 + 8 + 4 = 28
        assert_eq!(flops(&gen, &[1]).unwrap(), 28);
    }

    #[test]
    fn flops_checks_schedule_length() {
        assert!(flops(&small_cfg(), &[9]).is_err());
        assert!(flops(&small_cfg(), &[9, 9, 9]).is_err());
    }

    #[test]
    fn zero_upsilon_understanding_is_bitwise_baseline() {
        let cfg = small_cfg();
        let input = synth::gaussian_tokens(9, 16, 3);
        let (out, report) = run_understanding(&cfg, &turbo_cfg(0), &input, 3).unwrap();
        let weights = init_weights(&cfg, cfg.seed).unwrap();
        let seq0 = prepare_input(&cfg, &input).unwrap();
        let baseline = forward_baseline_understanding(&seq0, &weights).unwrap();
        assert_eq!(out.data(), baseline.tokens.data());
        assert_eq!(report.flops_baseline, report.flops_turbo);
        assert!((report.flops_ratio - 1.0).abs() < 1e-12);
        for b in &report.blocks {
            assert_eq!(b.upsilon_eff, 0);
            assert_eq!(b.tokens_in, b.tokens_out);
        }
    }

    /// Token counts a merge-only run must follow: each block removes
    /// `upsilon` tokens, capped by the candidate side (half the sequence,
    /// and empty with fewer than 2 mergeable tokens) and the length floor.
    fn law_schedule(
        n0: usize,
        layers: usize,
        upsilon: usize,
        threshold: usize,
        cls: bool,
    ) -> Vec<usize> {
        let mut n = n0;
        let mut out = Vec::with_capacity(layers);
        for _ in 0..layers {
            let mergeable = n - usize::from(cls);
            let b_len = if mergeable >= 2 { n / 2 } else { 0 };
            n = (n - upsilon.min(b_len)).max(threshold);
            out.push(n);
        }
        out
    }

    #[test]
    fn understanding_schedule_shrinks_to_the_threshold() {
        let cfg = ModelConfig {
            layers: 12,
            width: 16,
            heads: 4,
            ffn_width: 32,
            input_tokens: 197,
            ..Default::default()
        };
        let input = synth::gaussian_tokens(197, 16, 4);
        // Moderate ratio: the last block enters at 21 tokens, where the
        // candidate side (10 tokens) caps the merge count before the
        // threshold can bind.
        let turbo = TurboConfig {
            drop_ratio: 16,
            min_tokens_threshold: 8,
            ..Default::default()
        };
        let (out, report) = run_understanding(&cfg, &turbo, &input, 3).unwrap();
        let law = law_schedule(197, 12, 16, 8, true);
        let got: Vec<usize> = report.blocks.iter().map(|b| b.tokens_out).collect();
        assert_eq!(got, law);
        assert_eq!(out.rows(), 11);
        for pair in report.blocks.windows(2) {
            assert!(pair[1].tokens_in <= pair[0].tokens_in);
            assert_eq!(pair[1].tokens_in, pair[0].tokens_out);
        }
        assert!(report.flops_turbo < report.flops_baseline);

        // Aggressive ratio: the floor binds and the tail blocks idle at it.
        let aggressive = TurboConfig {
            drop_ratio: 32,
            min_tokens_threshold: 8,
            ..Default::default()
        };
        let (out, report) = run_understanding(&cfg, &aggressive, &input, 3).unwrap();
        let law = law_schedule(197, 12, 32, 8, true);
        let got: Vec<usize> = report.blocks.iter().map(|b| b.tokens_out).collect();
        assert_eq!(got, law);
        assert_eq!(out.rows(), 8);
        assert_eq!(report.blocks.last().unwrap().upsilon_eff, 0);
    }

    #[test]
    fn understanding_merges_follow_the_schedule_law() {
        let cfg = ModelConfig {
            layers: 6,
            width: 16,
            heads: 2,
            ffn_width: 32,
            input_tokens: 21,
            ..Default::default()
        };
        let turbo = TurboConfig {
            drop_ratio: 3,
            min_tokens_threshold: 10,
            ..Default::default()
        };
        let input = synth::gaussian_tokens(21, 16, 5);
        let (_, report) = run_understanding(&cfg, &turbo, &input, 3).unwrap();
        let mut n = 21usize;
        for b in &report.blocks {
            assert_eq!(b.tokens_in, n);
            let mergeable = n - 1; // cls present
            let b_side = if mergeable >= 2 { n / 2 } else { 0 };
            let expected = (n - 3.min(b_side)).max(10);
            assert_eq!(b.tokens_out, expected);
            n = expected;
        }
    }

    #[test]
    fn generation_keeps_the_boundary_length() {
        let cfg = ModelConfig {
            layers: 2,
            width: 16,
            heads: 4,
            ffn_width: 32,
            input_tokens: 12,
            mode: PipelineMode::Generation,
            context_tokens: 5,
            context_width: Some(12),
            ..Default::default()
        };
        let input = synth::gaussian_tokens(12, 16, 6);
        let context = synth::gaussian_tokens(5, 12, 7);
        for upsilon in [0usize, 4] {
            let (out, report) =
                run_generation(&cfg, &turbo_cfg(upsilon), &input, &context, 3).unwrap();
            assert_eq!(out.rows(), 12);
            assert_eq!(out.cols(), 16);
            for b in &report.blocks {
                assert_eq!(b.tokens_in, 12);
                assert_eq!(b.tokens_out, 12);
                assert_eq!(b.upsilon_eff, upsilon);
            }
        }
    }

    #[test]
    fn zero_upsilon_generation_is_bitwise_baseline() {
        let cfg = ModelConfig {
            layers: 2,
            width: 16,
            heads: 4,
            ffn_width: 32,
            input_tokens: 10,
            mode: PipelineMode::Generation,
            context_tokens: 4,
            context_width: Some(16),
            ..Default::default()
        };
        let input = synth::gaussian_tokens(10, 16, 8);
        let context = synth::gaussian_tokens(4, 16, 9);
        let (out, _) = run_generation(&cfg, &turbo_cfg(0), &input, &context, 3).unwrap();
        let weights = init_weights(&cfg, cfg.seed).unwrap();
        let seq0 = prepare_input(&cfg, &input).unwrap();
        let ctx = TokenSequence::fresh(context, cfg.context_cls).unwrap();
        let baseline = forward_baseline_generation(&seq0, &ctx, &weights).unwrap();
        assert_eq!(out.data(), baseline.tokens.data());
    }

    #[test]
    fn reports_are_deterministic_per_seed() {
        let cfg = small_cfg();
        let turbo = TurboConfig {
            drop_ratio: 2,
            strategy: FusionStrategy {
                kind: StrategyKind::S4,
                beta: 0.5,
                gamma: 1.0,
                ..Default::default()
            },
            restore_rule: RestoreRule::BlendSimilarity,
            mode: TurboMode::MergeOnly,
            ..Default::default()
        };
        let input = synth::gaussian_tokens(9, 16, 10);
        let (out_a, rep_a) = run_understanding(&cfg, &turbo, &input, 3).unwrap();
        let (out_b, rep_b) = run_understanding(&cfg, &turbo, &input, 3).unwrap();
        assert_eq!(out_a.data(), out_b.data());
        assert_eq!(rep_a.output_checksum, rep_b.output_checksum);
    }

    #[test]
    fn missing_classifier_sets_the_uniform_flag() {
        let mut cfg = small_cfg();
        cfg.cls = false;
        let input = synth::gaussian_tokens(9, 16, 11);
        let (_, report) = run_understanding(&cfg, &turbo_cfg(2), &input, 3).unwrap();
        assert!(report.uniform_semantic);
        let cfg2 = small_cfg();
        let (_, report2) = run_understanding(&cfg2, &turbo_cfg(2), &input, 3).unwrap();
        assert!(!report2.uniform_semantic);
    }

    #[test]
    fn diagnostics_stay_in_range() {
        let cfg = small_cfg();
        let input = synth::gaussian_tokens(9, 16, 12);
        let (_, report) = run_understanding(&cfg, &turbo_cfg(2), &input, 3).unwrap();
        for b in &report.blocks {
            assert!((-1.0..=1.0).contains(&b.r_hat));
            assert!((0.0..=1.0 + 1e-6).contains(&b.a_hat));
        }
    }

    #[test]
    fn throughput_runs_warmup_plus_repetitions() {
        let mut calls = 0usize;
        let tps = measure_throughput(
            || {
                calls += 1;
                std::thread::sleep(std::time::Duration::from_micros(200));
            },
            4,
        );
        assert_eq!(calls, 5);
        assert!(tps > 0.0);
    }

    #[test]
    fn divergence_is_zero_for_identical_outputs() {
        let m = synth::gaussian_tokens(4, 8, 13);
        assert_eq!(cls_divergence(&m, &m).unwrap(), 0.0);
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!((cls_divergence(&a, &b).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let cfg = small_cfg();
        let input = synth::gaussian_tokens(9, 16, 14);
        let ctx = synth::gaussian_tokens(4, 16, 15);
        assert!(matches!(
            run_generation(&cfg, &turbo_cfg(0), &input, &ctx, 3),
            Err(Error::Config(_))
        ));
        let mut gen_cfg = small_cfg();
        gen_cfg.mode = PipelineMode::Generation;
        gen_cfg.context_tokens = 4;
        assert!(matches!(
            run_understanding(&gen_cfg, &turbo_cfg(0), &input, 3),
            Err(Error::Config(_))
        ));
    }
}
