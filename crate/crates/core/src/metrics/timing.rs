use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::{self, FilterState, FrequencyGrid, StepSizeParams, Variant};

/// Per-step wall time of one update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub variant: Variant,
    pub len: usize,
    pub samples: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
}

/// Consecutive update steps timed together per repetition.
const BATCH: usize = 16;
const WARMUP_BATCHES: usize = 4;

/// Times the isolated weight update of each variant on identical inputs.
///
/// Every repetition times a batch of [`BATCH`] updates against precomputed
/// basis vectors and records the mean per-step duration; the statistics are
/// taken over repetitions.
pub fn time_step_sizes(variants: &[Variant], len: usize, reps: usize) -> Vec<TimingStats> {
    let reps = reps.max(1);
    let grid = FrequencyGrid::new(6.0, 10.0, len.max(1)).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let inputs: Vec<(Vec<f64>, f64)> = (0..BATCH)
        .map(|i| (grid.basis(i as f64 * 0.001).values, rng.gen_range(-1e-3..1e-3)))
        .collect();

    variants
        .iter()
        .map(|&variant| {
            let params = StepSizeParams { lambda_rls: 1.0, ..StepSizeParams::for_variant(variant) };
            let mut state = FilterState::new(grid.len(), &params);
            let run_batch = |state: &mut FilterState| {
                for (g, e) in &inputs {
                    let _ = black_box(filter::step(state, black_box(g), black_box(*e), &params));
                }
            };
            for _ in 0..WARMUP_BATCHES {
                run_batch(&mut state);
            }
            let samples: Vec<f64> = (0..reps)
                .map(|_| {
                    let start = Instant::now();
                    run_batch(&mut state);
                    start.elapsed().as_nanos() as f64 / BATCH as f64
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / reps as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / reps as f64;
            TimingStats { variant, len: grid.len(), samples: reps, mean_ns: mean, std_ns: var.sqrt() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repetition_has_zero_spread() {
        let stats = time_step_sizes(&[Variant::Lms], 20, 1);
        assert_eq!(stats[0].samples, 1);
        assert_eq!(stats[0].std_ns, 0.0);
        assert!(stats[0].mean_ns > 0.0);
    }

    #[test]
    fn reports_every_variant_in_order() {
        let stats = time_step_sizes(&Variant::ALL, 10, 5);
        let order: Vec<Variant> = stats.iter().map(|s| s.variant).collect();
        assert_eq!(order, Variant::ALL);
        assert!(stats.iter().all(|s| s.len == 10 && s.samples == 5));
    }
}
