//! Self-contained verification suites: randomized property checks of the
//! runtime against the 64-bit reference implementations, runnable outside
//! the test harness (the CLI's `verify` subcommand drives them).

use crate::attention::{attend, init_weights};
use crate::informativity::bipartite_redundancy;
use crate::merge::{semantic_prune_bound_check, turbo_merge_guided, TurboConfig};
use crate::numerics::Matrix;
use crate::oracle;
use crate::pipeline::ModelConfig;
use crate::sequence::TokenSequence;
use crate::synth::{self, SeededRng};

/// How many randomized instances each suite draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Seconds-scale smoke run.
    Quick,
    /// At least 500 instances across the suites.
    Full,
}

/// Deliberate defect injection, for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Corrupt a size vector before the mass-conservation comparison, so
    /// that suite must report failures.
    CorruptSizes,
}

/// Outcome of one property suite.
#[derive(Clone, Debug)]
pub struct PropertyResult {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// First failure description, empty when clean.
    pub detail: String,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn record_failure(result: &mut PropertyResult, detail: String) {
    result.failures += 1;
    if result.detail.is_empty() {
        result.detail = detail;
    }
}

fn random_sized_sequence(rng: &mut SeededRng, n: usize, d: usize, cls: bool) -> TokenSequence {
    let tokens = synth::gaussian_tokens(n, d, rng.next_u64());
    let sizes: Vec<u64> = (0..n).map(|_| 1 + rng.next_u64() % 4).collect();
    TokenSequence::new(tokens, sizes, cls.then_some(0)).expect("generated sequence is valid")
}

fn block_for(width: usize, heads: usize, seed: u64) -> crate::attention::BlockWeights {
    let cfg = ModelConfig {
        layers: 1,
        width,
        heads,
        ffn_width: 2 * width,
        input_tokens: 4,
        ..Default::default()
    };
    init_weights(&cfg, seed)
        .expect("verification config is valid")
        .remove(0)
}

/// Size-biased attention on a merged sequence must match plain 64-bit
/// attention on the physically expanded duplicate sequence.
fn suite_expanded_attention(instances: usize, seed: u64) -> PropertyResult {
    let mut result = PropertyResult {
        name: "expanded attention equivalence".to_string(),
        instances,
        failures: 0,
        detail: String::new(),
    };
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let n = 2 + (rng.next_u64() % 8) as usize;
        let heads = [1usize, 2, 4][(rng.next_u64() % 3) as usize];
        let cls = rng.next_u64().is_multiple_of(2);
        let seq = random_sized_sequence(&mut rng, n, 16, cls);
        let w = block_for(16, heads, seed.wrapping_add(i as u64));
        let trace = match attend(&seq, &w) {
            Ok(t) => t,
            Err(e) => {
                record_failure(&mut result, format!("instance {i}: attention failed: {e}"));
                continue;
            }
        };
        let expanded = oracle::expand(&seq);
        let want = oracle::attention_rows(&expanded, &w);
        let width = seq.width();
        // The relative tolerance is anchored to the output scale: 32-bit
        // rounding noise tracks the summed intermediates, so elements near
        // zero through cancellation would fail a per-element anchor.
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        'rows: for row in 0..n {
            let exp_row = expanded
                .first_row_of(row)
                .expect("every merged row has provenance");
            for col in 0..width {
                let got = trace.outputs.get(row, col) as f64;
                let reference = want[exp_row * width + col];
                let tol = 1e-5 * scale.max(got.abs()) + 1e-7;
                if (got - reference).abs() > tol {
                    record_failure(
                        &mut result,
                        format!(
                            "instance {i}: row {row} col {col}: {got} vs reference {reference}"
                        ),
                    );
                    break 'rows;
                }
            }
        }
    }
    result
}

/// The runtime matcher must agree with the exhaustive reference matcher
/// bit-for-bit, tie-breaks included.
fn suite_matching(instances: usize, seed: u64) -> PropertyResult {
    let mut result = PropertyResult {
        name: "matching equivalence".to_string(),
        instances,
        failures: 0,
        detail: String::new(),
    };
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let b_rows = 1 + (rng.next_u64() % 8) as usize;
        let c_rows = 1 + (rng.next_u64() % 8) as usize;
        let d = 4 + (rng.next_u64() % 12) as usize;
        let b = synth::gaussian_tokens(b_rows, d, rng.next_u64());
        // Occasionally plant exact duplicates to force tie handling.
        let c = if rng.next_u64().is_multiple_of(4) {
            let mut rows: Vec<Vec<f32>> = (0..c_rows).map(|r| b.row(r % b_rows).to_vec()).collect();
            if c_rows > 1 {
                rows[c_rows - 1] = rows[0].clone();
            }
            Matrix::from_rows(&rows).expect("planted rows are finite")
        } else {
            synth::gaussian_tokens(c_rows, d, rng.next_u64())
        };
        let got = match bipartite_redundancy(&b, &c) {
            Ok(g) => g,
            Err(e) => {
                record_failure(&mut result, format!("instance {i}: matcher failed: {e}"));
                continue;
            }
        };
        let want = oracle::matching(&b, &c);
        if got != want {
            record_failure(
                &mut result,
                format!("instance {i}: matcher disagreed with the reference"),
            );
        }
    }
    result
}

/// Pruning low-semantic tokens must perturb the weighted reading by no
/// more than the triangle-inequality bound, and the runtime evaluation
/// must agree with the reference evaluation.
fn suite_prune_bound(instances: usize, seed: u64) -> PropertyResult {
    let mut result = PropertyResult {
        name: "semantic prune bound".to_string(),
        instances,
        failures: 0,
        detail: String::new(),
    };
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let n = 4 + (rng.next_u64() % 8) as usize;
        let seq = random_sized_sequence(&mut rng, n, 16, true);
        let w = block_for(16, 4, seed.wrapping_add(0x9e37).wrapping_add(i as u64));
        let trace = match attend(&seq, &w) {
            Ok(t) => t,
            Err(e) => {
                record_failure(&mut result, format!("instance {i}: attention failed: {e}"));
                continue;
            }
        };
        let prune_count = 1 + (rng.next_u64() as usize) % (n / 2);
        let mut candidates: Vec<usize> = (1..n).collect();
        // Random distinct subset.
        for j in (1..candidates.len()).rev() {
            let pick = (rng.next_u64() as usize) % (j + 1);
            candidates.swap(j, pick);
        }
        let prune = &candidates[..prune_count];
        match semantic_prune_bound_check(&seq, &trace, prune) {
            Ok((actual, bound)) => {
                let (ref_actual, ref_bound) =
                    oracle::prune_bound(&trace.cls_attention, &trace.values, prune);
                if actual > bound + 1e-6 {
                    record_failure(
                        &mut result,
                        format!("instance {i}: delta {actual} exceeds bound {bound}"),
                    );
                } else if (actual - ref_actual).abs() > 1e-9 || (bound - ref_bound).abs() > 1e-9 {
                    record_failure(
                        &mut result,
                        format!("instance {i}: disagreement with the reference evaluation"),
                    );
                }
            }
            Err(e) => record_failure(&mut result, format!("instance {i}: check failed: {e}")),
        }
    }
    result
}

/// Merging must preserve the size-weighted token sum and the represented
/// token count. The fault injection corrupts the pre-merge size vector, so
/// with it armed this suite must fail.
fn suite_mass_conservation(instances: usize, seed: u64, fault: Option<Fault>) -> PropertyResult {
    let mut result = PropertyResult {
        name: "mass conservation".to_string(),
        instances,
        failures: 0,
        detail: String::new(),
    };
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let n = 2 + (rng.next_u64() % 14) as usize;
        let cls = rng.next_u64().is_multiple_of(2);
        let seq = random_sized_sequence(&mut rng, n, 8, cls);
        let before = match fault {
            Some(Fault::CorruptSizes) => {
                let mut sizes = seq.sizes().to_vec();
                sizes[n - 1] += 1;
                TokenSequence::new(seq.tokens.clone(), sizes, seq.cls_index())
                    .expect("corrupted sizes are still positive")
                    .weighted_mass()
            }
            None => seq.weighted_mass(),
        };
        let cfg = TurboConfig {
            drop_ratio: (rng.next_u64() % 8) as usize,
            ..Default::default()
        };
        let semantic: Vec<f32> = (0..n).map(|_| rng.uniform() as f32).collect();
        match turbo_merge_guided(&seq, &semantic, &seq.tokens, &cfg) {
            Ok((out, _)) => {
                let after = out.weighted_mass();
                let drifted = before
                    .iter()
                    .zip(&after)
                    .any(|(b, a)| (b - a).abs() > 1e-5);
                if drifted {
                    record_failure(&mut result, format!("instance {i}: weighted mass drifted"));
                } else if out.sizes().iter().sum::<u64>() != seq.origin_count() {
                    record_failure(&mut result, format!("instance {i}: token count not conserved"));
                }
            }
            Err(e) => record_failure(&mut result, format!("instance {i}: merge failed: {e}")),
        }
    }
    result
}

/// Runs all four suites and returns their results. `fault` arms a
/// deliberate defect (see [`Fault`]); `seed` pins the random instances.
pub fn run_suites(scale: Scale, fault: Option<Fault>, seed: u64) -> Vec<PropertyResult> {
    let (attention_n, matching_n, prune_n, mass_n) = match scale {
        Scale::Quick => (50, 60, 50, 60),
        Scale::Full => (150, 160, 120, 160),
    };
    vec![
        suite_expanded_attention(attention_n, seed),
        suite_matching(matching_n, seed.wrapping_add(1)),
        suite_prune_bound(prune_n, seed.wrapping_add(2)),
        suite_mass_conservation(mass_n, seed.wrapping_add(3), fault),
    ]
}
