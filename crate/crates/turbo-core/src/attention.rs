//! Multi-head attention blocks with duplicate-count weighting.
//!
//! The central contract: attending over a merged sequence whose tokens carry
//! sizes `s` must equal attending over the physically duplicated sequence.
//! That holds when every key's logit gains `ln(s_j)` — `s` identical keys
//! contribute `s * exp(q . k)` of softmax mass, which is exactly
//! `exp(q . k + ln s)`. [`attend`] applies that bias through the softmax
//! kernel; the 64-bit expanded reference in [`crate::oracle`] checks it.
//!
//! [`attend`] also records the head-averaged classifier attention row (the
//! semantic-value signal consumed by merging) plus the raw q/k/v
//! projections, so downstream consumers never recompute them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, row_softmax, Matrix};
use crate::pipeline::{ModelConfig, PipelineMode};
use crate::sequence::TokenSequence;
use crate::synth::SeededRng;
use crate::tmt1;

/// Projection pair for attending over a second modality whose width may
/// differ from the block width.
#[derive(Clone, Debug)]
pub struct CrossProjection {
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Weights of one transformer block.
#[derive(Clone, Debug)]
pub struct BlockWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ffn_in: Matrix,
    pub ffn_out: Matrix,
    pub cross: Option<CrossProjection>,
    heads: usize,
}

impl BlockWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_q: Matrix,
        w_k: Matrix,
        w_v: Matrix,
        w_o: Matrix,
        ffn_in: Matrix,
        ffn_out: Matrix,
        heads: usize,
        cross: Option<CrossProjection>,
    ) -> Result<Self> {
        let d = w_q.rows();
        for (name, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_o", &w_o)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Shape(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if ffn_in.rows() != d || ffn_out.cols() != d || ffn_in.cols() != ffn_out.rows() {
            return Err(Error::Shape(format!(
                "ffn projections {}x{} and {}x{} do not form a {d}->f->{d} map",
                ffn_in.rows(),
                ffn_in.cols(),
                ffn_out.rows(),
                ffn_out.cols()
            )));
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {d} is not divisible into {heads} heads"
            )));
        }
        if let Some(c) = &cross {
            if c.w_k.cols() != d || c.w_v.cols() != d || c.w_k.rows() != c.w_v.rows() {
                return Err(Error::Shape(
                    "cross projections must map a common source width to the block width"
                        .to_string(),
                ));
            }
        }
        Ok(BlockWeights {
            w_q,
            w_k,
            w_v,
            w_o,
            ffn_in,
            ffn_out,
            cross,
            heads,
        })
    }

    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_in.cols()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads
    }
}

/// Everything one attention call produces: outputs plus the recorded
/// intermediates merging feeds on.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// Attention output rows (pre-residual), `n x width`.
    pub outputs: Matrix,
    /// Head-averaged classifier attention over the key axis; a probability
    /// vector. Uniform when the sequence has no classifier token.
    pub cls_attention: Vec<f32>,
    /// Key projections of the attended-over tokens (pre head split).
    pub keys: Matrix,
    /// Query projections of the querying tokens (pre head split).
    pub queries: Matrix,
    /// Value projections of the attended-over tokens (pre head split).
    pub values: Matrix,
    /// True when `cls_attention` fell back to the uniform distribution.
    pub uniform_semantic: bool,
}

/// Copies one head's columns, scaling every value.
fn head_slice(m: &Matrix, head: usize, dh: usize, scale: f32) -> Matrix {
    let off = head * dh;
    let mut data = Vec::with_capacity(m.rows() * dh);
    for i in 0..m.rows() {
        let row = m.row(i);
        data.extend(row[off..off + dh].iter().map(|v| v * scale));
    }
    Matrix::new(m.rows(), dh, data).expect("slice of finite matrix is finite")
}

/// Multi-head self-attention with the log-size key bias.
///
/// Per head: `softmax(q_h k_h^T / sqrt(d_h) + ln sizes) v_h`; heads are
/// concatenated and passed through the output projection. The classifier
/// attention row is taken from the softmax matrix (pre value mix, pre
/// output projection) and averaged over heads.
pub fn attend(seq: &TokenSequence, w: &BlockWeights) -> Result<AttentionTrace> {
    let n = seq.len();
    let d = seq.width();
    if n == 0 {
        return Err(Error::Domain("attention over an empty sequence".to_string()));
    }
    if d != w.width() {
        return Err(Error::Shape(format!(
            "sequence width {d} against block width {}",
            w.width()
        )));
    }
    let q = matmul(&seq.tokens, &w.w_q)?;
    let k = matmul(&seq.tokens, &w.w_k)?;
    let v = matmul(&seq.tokens, &w.w_v)?;
    let sizes = seq.sizes_f32();
    let h = w.heads();
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut concat = Matrix::zeros(n, d);
    let mut cls_acc = vec![0.0f32; n];
    for head in 0..h {
        let qh = head_slice(&q, head, dh, scale);
        let kh = head_slice(&k, head, dh, 1.0);
        let vh = head_slice(&v, head, dh, 1.0);
        let scores = matmul_nt(&qh, &kh)?;
        let probs = row_softmax(&scores, Some(&sizes))?;
        if let Some(ci) = seq.cls_index() {
            for (acc, p) in cls_acc.iter_mut().zip(probs.row(ci)) {
                *acc += p;
            }
        }
        let mixed = matmul(&probs, &vh)?;
        let off = head * dh;
        for i in 0..n {
            concat.row_mut(i)[off..off + dh].copy_from_slice(mixed.row(i));
        }
    }
    let outputs = matmul(&concat, &w.w_o)?;
    let (cls_attention, uniform_semantic) = match seq.cls_index() {
        Some(_) => (cls_acc.iter().map(|a| a / h as f32).collect(), false),
        None => (vec![1.0 / n as f32; n], true),
    };
    Ok(AttentionTrace {
        outputs,
        cls_attention,
        keys: k,
        queries: q,
        values: v,
        uniform_semantic,
    })
}

/// Cross-attention: queries from `seq`, keys and values from `context`,
/// with the log-size bias taken from the *context* sizes. Uses the block's
/// cross projections when present, otherwise the self k/v projections
/// (which then require matching widths).
///
/// The returned trace holds context-side keys/values and the querying
/// side's classifier row over context tokens.
pub fn cross_attend(
    seq: &TokenSequence,
    context: &TokenSequence,
    w: &BlockWeights,
) -> Result<AttentionTrace> {
    let n = seq.len();
    let m = context.len();
    let d = seq.width();
    if n == 0 || m == 0 {
        return Err(Error::Domain(
            "cross-attention over an empty sequence".to_string(),
        ));
    }
    if d != w.width() {
        return Err(Error::Shape(format!(
            "sequence width {d} against block width {}",
            w.width()
        )));
    }
    let (wk, wv) = match w.cross.as_ref() {
        Some(c) => (&c.w_k, &c.w_v),
        None => (&w.w_k, &w.w_v),
    };
    if context.width() != wk.rows() {
        return Err(Error::Shape(format!(
            "context width {} against key projection input {}",
            context.width(),
            wk.rows()
        )));
    }
    let q = matmul(&seq.tokens, &w.w_q)?;
    let k = matmul(&context.tokens, wk)?;
    let v = matmul(&context.tokens, wv)?;
    let ctx_sizes = context.sizes_f32();
    let h = w.heads();
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut concat = Matrix::zeros(n, d);
    let mut cls_acc = vec![0.0f32; m];
    for head in 0..h {
        let qh = head_slice(&q, head, dh, scale);
        let kh = head_slice(&k, head, dh, 1.0);
        let vh = head_slice(&v, head, dh, 1.0);
        let scores = matmul_nt(&qh, &kh)?;
        let probs = row_softmax(&scores, Some(&ctx_sizes))?;
        if let Some(ci) = seq.cls_index() {
            for (acc, p) in cls_acc.iter_mut().zip(probs.row(ci)) {
                *acc += p;
            }
        }
        let mixed = matmul(&probs, &vh)?;
        let off = head * dh;
        for i in 0..n {
            concat.row_mut(i)[off..off + dh].copy_from_slice(mixed.row(i));
        }
    }
    let outputs = matmul(&concat, &w.w_o)?;
    let (cls_attention, uniform_semantic) = match seq.cls_index() {
        Some(_) => (cls_acc.iter().map(|a| a / h as f32).collect(), false),
        None => (vec![1.0 / m as f32; m], true),
    };
    Ok(AttentionTrace {
        outputs,
        cls_attention,
        keys: k,
        queries: q,
        values: v,
        uniform_semantic,
    })
}

/// The classifier attention row alone — one query row instead of the full
/// score matrix, so guidance stays cheap when no full attention call is at
/// hand. Bit-compatible with the row [`attend`] records.
///
/// Returns the row and whether it fell back to uniform (no classifier).
pub fn cls_attention_row(seq: &TokenSequence, w: &BlockWeights) -> Result<(Vec<f32>, bool)> {
    let n = seq.len();
    let ci = match seq.cls_index() {
        Some(ci) => ci,
        None => return Ok((vec![1.0 / n as f32; n], true)),
    };
    if seq.width() != w.width() {
        return Err(Error::Shape(format!(
            "sequence width {} against block width {}",
            seq.width(),
            w.width()
        )));
    }
    let k = matmul(&seq.tokens, &w.w_k)?;
    let qc = matmul(&seq.tokens.gather_rows(&[ci]), &w.w_q)?;
    attention_row_over(&qc, &k, &seq.sizes_f32(), w)
}

/// Cross-modal semantic value: how strongly each token of `seq` aligns with
/// the *context's* classifier token. Per head, the context-classifier column
/// of the cross-attention scores is normalized over `seq`'s tokens (with
/// `seq`'s log-size bias), then head-averaged.
///
/// Falls back to uniform when the context has no classifier token.
pub fn cross_modal_cls_attention(
    seq: &TokenSequence,
    context: &TokenSequence,
    w: &BlockWeights,
) -> Result<(Vec<f32>, bool)> {
    let n = seq.len();
    let ci = match context.cls_index() {
        Some(ci) => ci,
        None => return Ok((vec![1.0 / n as f32; n], true)),
    };
    let (wk, _) = match w.cross.as_ref() {
        Some(c) => (&c.w_k, &c.w_v),
        None => (&w.w_k, &w.w_v),
    };
    if context.width() != wk.rows() {
        return Err(Error::Shape(format!(
            "context width {} against key projection input {}",
            context.width(),
            wk.rows()
        )));
    }
    // The context classifier acts as the key; seq tokens act as queries.
    let kc = matmul(&context.tokens.gather_rows(&[ci]), wk)?;
    let q = matmul(&seq.tokens, &w.w_q)?;
    attention_row_over(&kc, &q, &seq.sizes_f32(), w)
}

/// Shared tail: softmax over `keys` rows of the single `anchor` row, per
/// head, with a positive bias, averaged across heads.
fn attention_row_over(
    anchor: &Matrix,
    keys: &Matrix,
    bias: &[f32],
    w: &BlockWeights,
) -> Result<(Vec<f32>, bool)> {
    let n = keys.rows();
    let h = w.heads();
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut acc = vec![0.0f32; n];
    for head in 0..h {
        let ah = head_slice(anchor, head, dh, scale);
        let kh = head_slice(keys, head, dh, 1.0);
        let scores = matmul_nt(&ah, &kh)?;
        let probs = row_softmax(&scores, Some(bias))?;
        for (a, p) in acc.iter_mut().zip(probs.row(0)) {
            *a += p;
        }
    }
    for a in acc.iter_mut() {
        *a /= h as f32;
    }
    Ok((acc, false))
}

/// GELU activation, tanh form.
fn gelu(x: f32) -> f32 {
    let c = (2.0f32 / std::f32::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Position-wise feed-forward with residual:
/// `gelu(x ffn_in) ffn_out + x`.
pub fn ffn(x: &Matrix, w: &BlockWeights) -> Result<Matrix> {
    if x.cols() != w.width() {
        return Err(Error::Shape(format!(
            "ffn input width {} against block width {}",
            x.cols(),
            w.width()
        )));
    }
    let mut hidden = matmul(x, &w.ffn_in)?;
    for i in 0..hidden.rows() {
        for v in hidden.row_mut(i) {
            *v = gelu(*v);
        }
    }
    let projected = matmul(&hidden, &w.ffn_out)?;
    projected.add(x)
}

fn init_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    // Symmetric uniform with std = 1 / sqrt(fan_in). Uniform keeps the
    // stream free of transcendentals, so identical seeds give bit-identical
    // weights on every platform.
    let scale = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.uniform_unit_variance() * scale) as f32)
        .collect();
    Matrix::new(rows, cols, data).expect("initializer is finite")
}

/// Deterministic block weights for a model configuration.
///
/// One seeded stream fills every matrix in a fixed order (per layer: q, k,
/// v, o, ffn_in, ffn_out, then cross k/v in generation mode), so a seed
/// pins the entire stack.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<Vec<BlockWeights>> {
    config.validate()?;
    let d = config.width;
    let f = config.ffn_width;
    let mut rng = SeededRng::new(seed);
    let mut blocks = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let w_q = init_matrix(&mut rng, d, d);
        let w_k = init_matrix(&mut rng, d, d);
        let w_v = init_matrix(&mut rng, d, d);
        let w_o = init_matrix(&mut rng, d, d);
        let ffn_in = init_matrix(&mut rng, d, f);
        let ffn_out = init_matrix(&mut rng, f, d);
        let cross = match config.mode {
            PipelineMode::Generation => {
                let dc = config.context_width();
                Some(CrossProjection {
                    w_k: init_matrix(&mut rng, dc, d),
                    w_v: init_matrix(&mut rng, dc, d),
                })
            }
            PipelineMode::Understanding => None,
        };
        blocks.push(BlockWeights::new(
            w_q, w_k, w_v, w_o, ffn_in, ffn_out, config.heads, cross,
        )?);
    }
    Ok(blocks)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsManifest {
    layers: usize,
    width: usize,
    heads: usize,
    ffn_width: usize,
    context_width: Option<usize>,
    seed: u64,
}

const MATRIX_NAMES: [&str; 6] = ["wq", "wk", "wv", "wo", "ffn_in", "ffn_out"];

/// Writes a weight stack as one tensor file per matrix plus a JSON manifest
/// describing dimensions, head count, and the seed that produced it.
pub fn save_weights(dir: impl AsRef<Path>, blocks: &[BlockWeights], seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let first = blocks
        .first()
        .ok_or_else(|| Error::Domain("cannot save an empty weight stack".to_string()))?;
    std::fs::create_dir_all(dir)?;
    let manifest = WeightsManifest {
        layers: blocks.len(),
        width: first.width(),
        heads: first.heads(),
        ffn_width: first.ffn_width(),
        context_width: first.cross.as_ref().map(|c| c.w_k.rows()),
        seed,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    for (i, b) in blocks.iter().enumerate() {
        let mats = [&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.ffn_in, &b.ffn_out];
        for (name, m) in MATRIX_NAMES.iter().zip(mats) {
            tmt1::write_file(dir.join(format!("block{i:02}_{name}.tmt1")), m)?;
        }
        if let Some(c) = &b.cross {
            tmt1::write_file(dir.join(format!("block{i:02}_cross_k.tmt1")), &c.w_k)?;
            tmt1::write_file(dir.join(format!("block{i:02}_cross_v.tmt1")), &c.w_v)?;
        }
    }
    Ok(())
}

/// Reads back a weight stack written by [`save_weights`].
pub fn load_weights(dir: impl AsRef<Path>) -> Result<Vec<BlockWeights>> {
    let dir = dir.as_ref();
    let raw = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: WeightsManifest =
        serde_json::from_str(&raw).map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
    let mut blocks = Vec::with_capacity(manifest.layers);
    for i in 0..manifest.layers {
        let mut mats = Vec::with_capacity(6);
        for name in MATRIX_NAMES {
            mats.push(tmt1::read_file(dir.join(format!("block{i:02}_{name}.tmt1")))?);
        }
        let cross = match manifest.context_width {
            Some(_) => Some(CrossProjection {
                w_k: tmt1::read_file(dir.join(format!("block{i:02}_cross_k.tmt1")))?,
                w_v: tmt1::read_file(dir.join(format!("block{i:02}_cross_v.tmt1")))?,
            }),
            None => None,
        };
        let [w_q, w_k, w_v, w_o, ffn_in, ffn_out]: [Matrix; 6] =
            mats.try_into().expect("six matrices per block");
        blocks.push(BlockWeights::new(
            w_q,
            w_k,
            w_v,
            w_o,
            ffn_in,
            ffn_out,
            manifest.heads,
            cross,
        )?);
    }
    Ok(blocks)
}
