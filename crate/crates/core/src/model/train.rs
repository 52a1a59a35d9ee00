use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{rmsprop_update, RmspropState, TrainConfig};
use super::{backward_into, init_model, model_forward, ModelError, ModelGradients, ModelParams};
use crate::data::{Dataset, TimeSeriesSample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch, measured before each batch update.
    pub history: Vec<f64>,
}

fn sample_gradient(
    s: &TimeSeriesSample,
    p: &ModelParams,
    buf: &mut ModelGradients,
) -> Result<f64, ModelError> {
    let out = model_forward(s, p)?;
    buf.fill_zero();
    backward_into(&out, p, s.label, buf);
    Ok(out.loss)
}

/// Mean gradient and summed loss over `batch`.
///
/// Per-sample gradients are always added in batch order, so the result is
/// bit-identical whatever the size of the rayon pool.
pub fn batch_gradients(
    batch: &[&TimeSeriesSample],
    p: &ModelParams,
) -> Result<(ModelGradients, f64), ModelError> {
    let mut acc = ModelGradients::zeros_like(p);
    let mut loss = 0.0;
    let workers = rayon::current_num_threads();
    if workers <= 1 {
        let mut buf = ModelGradients::zeros_like(p);
        for s in batch {
            loss += sample_gradient(s, p, &mut buf)?;
            acc.add_assign(&buf);
        }
    } else {
        for chunk in batch.chunks(workers) {
            let parts = chunk
                .par_iter()
                .map(|s| {
                    let mut buf = ModelGradients::zeros_like(p);
                    sample_gradient(s, p, &mut buf).map(|l| (buf, l))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for (g, l) in &parts {
                loss += l;
                acc.add_assign(g);
            }
        }
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok((acc, loss))
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    train_with_progress(ds, cfg, |_, _| {})
}

/// Mini-batch RMSprop training; `progress(epoch, mean_loss)` runs after each
/// epoch.
pub fn train_with_progress(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    ds.check_trainable()?;
    let mut params = init_model(
        ds.num_features,
        cfg.hidden_dim,
        ds.class_names.clone(),
        cfg.seed,
    );
    params.timestamps_hint = ds.num_timestamps;
    let mut state = RmspropState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TimeSeriesSample> = idx.iter().map(|&i| &ds.samples[i]).collect();
            let (mut grads, loss) = batch_gradients(&batch, &params)?;
            epoch_loss += loss;
            if let Some(max_norm) = cfg.grad_clip_norm {
                let norm = grads.norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            rmsprop_update(&mut params, &grads, &mut state, cfg)?;
        }
        state.epochs_completed += 1;
        let mean = epoch_loss / ds.len() as f64;
        history.push(mean);
        progress(epoch, mean);
    }
    Ok(TrainOutcome { params, history })
}
