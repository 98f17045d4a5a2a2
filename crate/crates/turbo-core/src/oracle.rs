//! Independent 64-bit brute-force references.
//!
//! These functions re-derive every quantity the runtime computes — products,
//! softmax, attention, matching, perturbation bounds — from first principles
//! in `f64`, sharing only data accessors with the runtime modules, never
//! arithmetic. Tests and the verification suites compare runtime output
//! against them; nothing on a measured path calls into this module.
//!
//! The attention reference operates on *expanded* sequences: a merged token
//! of size `s` is physically repeated `s` times, so duplicate weighting must
//! emerge from plain unbiased attention if the runtime's log-size bias is
//! correct.

use crate::attention::BlockWeights;
use crate::numerics::Matrix;
use crate::sequence::TokenSequence;

/// Converts a runtime matrix into a flat `f64` buffer.
pub fn matrix_to_f64(m: &Matrix) -> Vec<f64> {
    m.data().iter().map(|&v| v as f64).collect()
}

/// Plain `f64` product of row-major buffers. Panics on dimension mismatch;
/// this is test support, not a runtime surface.
pub fn matmul64_raw(a: &[f64], ar: usize, ac: usize, b: &[f64], br: usize, bc: usize) -> Vec<f64> {
    assert_eq!(a.len(), ar * ac);
    assert_eq!(b.len(), br * bc);
    assert_eq!(ac, br, "inner dimensions differ");
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for j in 0..bc {
            let mut acc = 0.0;
            for k in 0..ac {
                acc += a[i * ac + k] * b[k * bc + j];
            }
            out[i * bc + j] = acc;
        }
    }
    out
}

/// 64-bit product of two runtime matrices.
pub fn matmul64(a: &Matrix, b: &Matrix) -> Vec<f64> {
    matmul64_raw(
        &matrix_to_f64(a),
        a.rows(),
        a.cols(),
        &matrix_to_f64(b),
        b.rows(),
        b.cols(),
    )
}

/// 64-bit stabilized softmax of one row, with the same optional positive
/// column bias contract as the runtime kernel.
pub fn softmax64(row: &[f32], bias: Option<&[f32]>) -> Vec<f64> {
    let logits: Vec<f64> = match bias {
        Some(b) => {
            assert_eq!(b.len(), row.len());
            row.iter()
                .zip(b)
                .map(|(&x, &s)| x as f64 + (s as f64).ln())
                .collect()
        }
        None => row.iter().map(|&x| x as f64).collect(),
    };
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn gelu64(x: f64) -> f64 {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// A merged sequence unrolled back to physical duplicates.
pub struct ExpandedSequence {
    /// Row-major `len x width` token buffer in `f64`.
    pub tokens: Vec<f64>,
    pub len: usize,
    pub width: usize,
    /// For each expanded row, the merged-sequence index it copies.
    pub provenance: Vec<usize>,
}

impl ExpandedSequence {
    /// First expanded row that originated from the given merged index.
    pub fn first_row_of(&self, merged_index: usize) -> Option<usize> {
        self.provenance.iter().position(|&p| p == merged_index)
    }
}

/// Repeats each token `sizes[i]` times, in sequence order.
pub fn expand(seq: &TokenSequence) -> ExpandedSequence {
    let width = seq.width();
    let mut tokens = Vec::new();
    let mut provenance = Vec::new();
    for i in 0..seq.len() {
        for _ in 0..seq.sizes()[i] {
            tokens.extend(seq.tokens.row(i).iter().map(|&v| v as f64));
            provenance.push(i);
        }
    }
    ExpandedSequence {
        len: provenance.len(),
        tokens,
        width,
        provenance,
    }
}

/// Full multi-head self-attention in `f64` with no size bias: projections,
/// per-head scaled scores, softmax, value mix, head concat, output
/// projection. Returns the `n x width` output rows.
pub fn attention_rows_f64(tokens: &[f64], n: usize, width: usize, w: &BlockWeights) -> Vec<f64> {
    let d = width;
    assert_eq!(w.width(), d, "weight width mismatch");
    let h = w.heads();
    let dh = d / h;
    let wq = matrix_to_f64(&w.w_q);
    let wk = matrix_to_f64(&w.w_k);
    let wv = matrix_to_f64(&w.w_v);
    let wo = matrix_to_f64(&w.w_o);
    let q = matmul64_raw(tokens, n, d, &wq, d, d);
    let k = matmul64_raw(tokens, n, d, &wk, d, d);
    let v = matmul64_raw(tokens, n, d, &wv, d, d);
    let mut concat = vec![0.0; n * d];
    let scale = 1.0 / (dh as f64).sqrt();
    for head in 0..h {
        let off = head * dh;
        for i in 0..n {
            // Scores of query i against every key, this head only.
            let mut logits = vec![0.0; n];
            for (j, logit) in logits.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in 0..dh {
                    acc += q[i * d + off + t] * k[j * d + off + t];
                }
                *logit = acc * scale;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for t in 0..dh {
                let mut acc = 0.0;
                for (j, &e) in exps.iter().enumerate() {
                    acc += e * v[j * d + off + t];
                }
                concat[i * d + off + t] = acc / denom;
            }
        }
    }
    matmul64_raw(&concat, n, d, &wo, d, d)
}

/// Self-attention reference over an expanded sequence.
pub fn attention_rows(exp: &ExpandedSequence, w: &BlockWeights) -> Vec<f64> {
    attention_rows_f64(&exp.tokens, exp.len, exp.width, w)
}

/// Self-attention reference over a plain (size-1) token matrix.
pub fn attention_rows_plain(tokens: &Matrix, w: &BlockWeights) -> Vec<f64> {
    attention_rows_f64(&matrix_to_f64(tokens), tokens.rows(), tokens.cols(), w)
}

/// Cross-attention reference: queries from `x`, keys/values from `context`,
/// no size bias, `f64` throughout.
pub fn cross_attention_rows(x: &Matrix, context: &Matrix, w: &BlockWeights) -> Vec<f64> {
    let n = x.rows();
    let d = x.cols();
    let m = context.rows();
    let h = w.heads();
    let dh = d / h;
    let (wk, wv) = match w.cross.as_ref() {
        Some(c) => (&c.w_k, &c.w_v),
        None => (&w.w_k, &w.w_v),
    };
    let q = matmul64_raw(&matrix_to_f64(x), n, d, &matrix_to_f64(&w.w_q), d, d);
    let k = matmul64_raw(
        &matrix_to_f64(context),
        m,
        context.cols(),
        &matrix_to_f64(wk),
        wk.rows(),
        wk.cols(),
    );
    let v = matmul64_raw(
        &matrix_to_f64(context),
        m,
        context.cols(),
        &matrix_to_f64(wv),
        wv.rows(),
        wv.cols(),
    );
    let mut concat = vec![0.0; n * d];
    let scale = 1.0 / (dh as f64).sqrt();
    for head in 0..h {
        let off = head * dh;
        for i in 0..n {
            let mut logits = vec![0.0; m];
            for (j, logit) in logits.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in 0..dh {
                    acc += q[i * d + off + t] * k[j * d + off + t];
                }
                *logit = acc * scale;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for t in 0..dh {
                let mut acc = 0.0;
                for (j, &e) in exps.iter().enumerate() {
                    acc += e * v[j * d + off + t];
                }
                concat[i * d + off + t] = acc / denom;
            }
        }
    }
    matmul64_raw(&concat, n, d, &matrix_to_f64(&w.w_o), d, d)
}

/// Feed-forward reference: `gelu(x W_in) W_out + x` in `f64`.
pub fn ffn_rows(tokens: &Matrix, w: &BlockWeights) -> Vec<f64> {
    let n = tokens.rows();
    let d = tokens.cols();
    let f = w.ffn_width();
    let x = matrix_to_f64(tokens);
    let mut hidden = matmul64_raw(&x, n, d, &matrix_to_f64(&w.ffn_in), d, f);
    for v in hidden.iter_mut() {
        *v = gelu64(*v);
    }
    let mut out = matmul64_raw(&hidden, n, f, &matrix_to_f64(&w.ffn_out), f, d);
    for i in 0..n * d {
        out[i] += x[i];
    }
    out
}

/// Exhaustive best-match search: for every row of `b_keys`, the highest
/// cosine similarity over all rows of `c_keys` and its index, ties resolved
/// toward the lowest index. Similarities are accumulated in `f64` and
/// rounded to `f32` once, the same contract the runtime matcher documents.
pub fn matching(b_keys: &Matrix, c_keys: &Matrix) -> Vec<(f32, usize)> {
    assert!(c_keys.rows() > 0, "no candidate targets");
    let mut out = Vec::with_capacity(b_keys.rows());
    for i in 0..b_keys.rows() {
        let mut best = f32::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..c_keys.rows() {
            let sim = cosine64(b_keys.row(i), c_keys.row(j));
            if sim > best {
                best = sim;
                best_j = j;
            }
        }
        out.push((best, best_j));
    }
    out
}

fn cosine64(a: &[f32], b: &[f32]) -> f32 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
}

/// Direct evaluation of the semantic-prune perturbation and its bound.
///
/// Builds the full weighted reading `Y = sum_i A_i V_i` and the pruned
/// reading `Y'` separately, returning `(|Y - Y'|_2, sum_pruned A_j |V_j|_2)`.
pub fn prune_bound(semantic: &[f32], values: &Matrix, prune: &[usize]) -> (f64, f64) {
    assert_eq!(
        semantic.len(),
        values.rows(),
        "one semantic weight per value row"
    );
    let d = values.cols();
    let mut full = vec![0.0f64; d];
    let mut kept = vec![0.0f64; d];
    for (i, &weight) in semantic.iter().enumerate() {
        let a = weight as f64;
        let pruned = prune.contains(&i);
        for (j, &v) in values.row(i).iter().enumerate() {
            full[j] += a * v as f64;
            if !pruned {
                kept[j] += a * v as f64;
            }
        }
    }
    let actual = full
        .iter()
        .zip(&kept)
        .map(|(y, yp)| (y - yp) * (y - yp))
        .sum::<f64>()
        .sqrt();
    let mut bound = 0.0f64;
    for &j in prune {
        let norm = values
            .row(j)
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        bound += semantic[j] as f64 * norm;
    }
    (actual, bound)
}
