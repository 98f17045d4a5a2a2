//! Token sequences: a token matrix plus the duplicate-count bookkeeping that
//! merging maintains.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A sequence of tokens with per-token duplicate counts.
///
/// `sizes[i]` records how many original tokens row `i` stands for; the sum
/// of all sizes always equals `origin_count`, the length of the sequence
/// before any merging. A classifier token, when present, sits at index 0 and
/// is never merged away.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Matrix,
    sizes: Vec<u64>,
    cls_index: Option<usize>,
    origin_count: u64,
}

impl TokenSequence {
    /// Wraps a token matrix with explicit sizes.
    pub fn new(tokens: Matrix, sizes: Vec<u64>, cls_index: Option<usize>) -> Result<Self> {
        if sizes.len() != tokens.rows() {
            return Err(Error::Shape(format!(
                "{} sizes for {} tokens",
                sizes.len(),
                tokens.rows()
            )));
        }
        if sizes.iter().any(|&s| s < 1) {
            return Err(Error::Domain("token sizes must be at least 1".to_string()));
        }
        match cls_index {
            None => {}
            Some(0) if !sizes.is_empty() => {}
            Some(i) => {
                return Err(Error::Domain(format!(
                    "classifier token must sit at index 0, got {i}"
                )));
            }
        }
        let origin_count = sizes.iter().sum();
        Ok(TokenSequence {
            tokens,
            sizes,
            cls_index,
            origin_count,
        })
    }

    /// A sequence of unmerged tokens (all sizes 1). `has_cls` marks row 0 as
    /// the classifier token.
    pub fn fresh(tokens: Matrix, has_cls: bool) -> Result<Self> {
        let n = tokens.rows();
        if has_cls && n == 0 {
            return Err(Error::Domain(
                "cannot mark a classifier token in an empty sequence".to_string(),
            ));
        }
        TokenSequence::new(tokens, vec![1; n], if has_cls { Some(0) } else { None })
    }

    /// Replaces the token matrix, keeping sizes and bookkeeping. The new
    /// matrix must have the same row count.
    pub fn with_tokens(&self, tokens: Matrix) -> Result<Self> {
        if tokens.rows() != self.len() {
            return Err(Error::Shape(format!(
                "replacement has {} rows, sequence has {}",
                tokens.rows(),
                self.len()
            )));
        }
        Ok(TokenSequence {
            tokens,
            sizes: self.sizes.clone(),
            cls_index: self.cls_index,
            origin_count: self.origin_count,
        })
    }

    pub(crate) fn assemble(
        tokens: Matrix,
        sizes: Vec<u64>,
        cls_index: Option<usize>,
        origin_count: u64,
    ) -> Self {
        debug_assert_eq!(sizes.iter().sum::<u64>(), origin_count);
        TokenSequence {
            tokens,
            sizes,
            cls_index,
            origin_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// Sizes converted to `f32`, the form the attention bias consumes.
    pub fn sizes_f32(&self) -> Vec<f32> {
        self.sizes.iter().map(|&s| s as f32).collect()
    }

    pub fn cls_index(&self) -> Option<usize> {
        self.cls_index
    }

    pub fn origin_count(&self) -> u64 {
        self.origin_count
    }

    /// Weighted token mass `sum_i sizes[i] * tokens[i]`, accumulated in
    /// `f64`. Merging preserves this vector.
    pub fn weighted_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0f64; self.width()];
        for i in 0..self.len() {
            let s = self.sizes[i] as f64;
            for (j, v) in self.tokens.row(i).iter().enumerate() {
                mass[j] += s * *v as f64;
            }
        }
        mass
    }
}
