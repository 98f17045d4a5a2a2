//! Run reporting: per-block statistics, FLOP/throughput totals, and the
//! FNV-1a checksum that pins a run's numeric output for determinism checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// 64-bit FNV-1a streaming hash.
///
/// Dependency-free and stable across platforms; used to fingerprint weight
/// streams and run outputs. Not cryptographic.
#[derive(Clone, Debug)]
pub struct Fnv1a {
    state: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a { state: FNV_OFFSET }
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a::new()
    }
}

/// What one block did to the sequence, plus its redundancy diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct BlockStats {
    pub block: usize,
    /// Sequence length entering the block.
    pub tokens_in: usize,
    /// Sequence length leaving the block.
    pub tokens_out: usize,
    /// Merges executed inside the block.
    pub upsilon_eff: usize,
    /// Mean pairwise cosine similarity of the block's input tokens.
    pub r_hat: f32,
    /// Attention mass held by the top quarter of tokens.
    pub a_hat: f32,
}

/// Full record of one pipeline run: per-block statistics, analytic FLOPs
/// for the accelerated and unaccelerated schedules, measured wall-clocks,
/// and the output fingerprint.
///
/// Wall-clock fields are machine-dependent and deliberately excluded from
/// the checksum; everything else is deterministic per seed.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub blocks: Vec<BlockStats>,
    pub flops_baseline: u64,
    pub flops_turbo: u64,
    /// `flops_turbo / flops_baseline`.
    pub flops_ratio: f64,
    /// Median seconds per sequence, unaccelerated.
    pub wall_clock_baseline: f64,
    /// Median seconds per sequence, accelerated.
    pub wall_clock_turbo: f64,
    /// Sequences per second, unaccelerated.
    pub throughput_baseline: f64,
    /// Sequences per second, accelerated.
    pub throughput_turbo: f64,
    /// `throughput_turbo / throughput_baseline`.
    pub speedup: f64,
    /// Hex FNV-1a fingerprint of the output and the block schedule.
    pub output_checksum: String,
    /// True when some block scored tokens without a classifier and fell
    /// back to uniform semantic values.
    pub uniform_semantic: bool,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))
    }

    /// Per-block rows as CSV, one line per block, with a header.
    pub fn blocks_csv(&self) -> String {
        let mut out = String::from("block,tokens_in,tokens_out,upsilon_eff,r_hat,a_hat\n");
        for b in &self.blocks {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.block, b.tokens_in, b.tokens_out, b.upsilon_eff, b.r_hat, b.a_hat
            ));
        }
        out
    }
}

/// Fingerprint of a run: the output matrix (shape and little-endian bytes)
/// and each block's token schedule. Wall-clocks and float diagnostics stay
/// out so the value is bit-stable across machines and repetitions.
pub fn sequence_checksum(output: &Matrix, blocks: &[BlockStats]) -> u64 {
    let mut hash = Fnv1a::new();
    hash.write(&(output.rows() as u64).to_le_bytes());
    hash.write(&(output.cols() as u64).to_le_bytes());
    for v in output.data() {
        hash.write(&v.to_le_bytes());
    }
    for b in blocks {
        hash.write(&(b.block as u64).to_le_bytes());
        hash.write(&(b.tokens_in as u64).to_le_bytes());
        hash.write(&(b.tokens_out as u64).to_le_bytes());
        hash.write(&(b.upsilon_eff as u64).to_le_bytes());
    }
    hash.finish()
}

/// Canonical 16-digit hex rendering of a checksum.
pub fn checksum_hex(v: u64) -> String {
    format!("{v:016x}")
}
