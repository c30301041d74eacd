use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::OptimizerSettings;
use crate::error::{Error, Result};
use crate::nn::AdamW;

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Shuffled minibatch AdamW loop. `step` returns `(loss, grads)` for a
/// batch of item indices and may draw extra randomness from the shared rng.
pub(crate) fn minibatch_loop<F>(
    label: &str,
    params: &mut [f64],
    opt: &OptimizerSettings,
    num_items: usize,
    seed: u64,
    mut step: F,
) -> Result<TrainLog>
where
    F: FnMut(&[f64], &[usize], &mut ChaCha8Rng) -> (f64, Vec<f64>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamW::new(params.len(), opt.lr, opt.weight_decay);
    let mut order: Vec<usize> = (0..num_items).collect();
    let mut log = TrainLog::default();
    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(opt.batch_size.max(1)).enumerate() {
            let (loss, grads) = step(params, batch, &mut rng);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step: b, loss });
            }
            adam.step(params, &grads);
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        debug!("{label}: epoch {epoch} loss {mean:.5}");
        log.epoch_losses.push(mean);
    }
    Ok(log)
}
