use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row indices for one optimization step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub unsup: Vec<usize>,
    pub sup: Vec<usize>,
}

/// Index batches for one epoch: one pass over the unlabelled set, each
/// unlabelled batch paired with a labelled batch drawn from a reshuffled
/// cycle over the labelled set. With no unlabelled data the epoch is one
/// pass over the labelled set.
pub fn make_batches(
    n_sup: usize,
    n_unsup: usize,
    batch_sup: usize,
    batch_unsup: usize,
    epoch_seed: u64,
) -> Result<Vec<Step>> {
    let use_sup = n_sup > 0 && batch_sup > 0;
    let use_unsup = n_unsup > 0 && batch_unsup > 0;
    if !use_sup && !use_unsup {
        return Err(Error::Contract(
            "both the labelled and unlabelled streams are empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut unsup_order: Vec<usize> = (0..n_unsup).collect();
    unsup_order.shuffle(&mut rng);

    let steps = if use_unsup {
        n_unsup.div_ceil(batch_unsup)
    } else {
        n_sup.div_ceil(batch_sup)
    };
    let mut cycle: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let unsup = if use_unsup {
            unsup_order[k * batch_unsup..((k + 1) * batch_unsup).min(n_unsup)].to_vec()
        } else {
            Vec::new()
        };
        let mut sup = Vec::new();
        if use_sup {
            let want = batch_sup.min(n_sup);
            while sup.len() < want {
                if pos == cycle.len() {
                    cycle = (0..n_sup).collect();
                    cycle.shuffle(&mut rng);
                    pos = 0;
                }
                let take = (want - sup.len()).min(cycle.len() - pos);
                sup.extend_from_slice(&cycle[pos..pos + take]);
                pos += take;
            }
        }
        out.push(Step { unsup, sup });
    }
    Ok(out)
}
