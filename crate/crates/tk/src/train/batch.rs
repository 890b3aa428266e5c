//! Batch assembly: chronological runs for stateful training, seeded
//! shuffling otherwise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::timebase::PredictionPoint;

/// One training batch. `reset` marks the start of a fresh chronological run
/// (recurrent state must be cleared before it).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub points: Vec<PredictionPoint>,
    pub reset: bool,
}

/// Splits the (chronologically ordered) training points into batches.
///
/// Stateful mode keeps order and never lets a batch span two slices: each
/// slice's points are chunked in sequence and the first chunk of every slice
/// is flagged for a state reset. Lane `b` of consecutive chunks advances
/// through points `b`, `b+B`, `b+2B`, …
///
/// Non-stateful mode applies a uniform shuffle seeded by the config seed and
/// the epoch (or keeps order when shuffling is disabled).
pub fn make_batches(
    points: &[PredictionPoint],
    config: &TrainConfig,
    epoch: usize,
) -> Vec<Batch> {
    let bs = config.batch_size.max(1);
    let mut out = Vec::new();
    if config.stateful {
        let mut i = 0;
        while i < points.len() {
            let slice = points[i].slice;
            let mut j = i;
            while j < points.len() && points[j].slice == slice {
                j += 1;
            }
            for (k, chunk) in points[i..j].chunks(bs).enumerate() {
                out.push(Batch {
                    points: chunk.to_vec(),
                    reset: k == 0,
                });
            }
            i = j;
        }
    } else {
        let mut order = points.to_vec();
        if config.shuffle {
            let seed = config
                .seed
                .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(bs) {
            out.push(Batch {
                points: chunk.to_vec(),
                reset: true,
            });
        }
    }
    out
}
