//! Rate-distortion training with plain gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::codec::{CodecModel, Image, Quantizer};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Halve the learning rate after this many epochs without improvement.
    pub plateau_patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            lr: 1e-3,
            seed: 0,
            batch_size: 8,
            plateau_patience: Some(3),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Final model, or the last finite one if training diverged.
    pub model: CodecModel,
    /// Mean per-image loss of each completed epoch.
    pub history: Vec<f64>,
    /// `(epoch, step)` at which a non-finite loss or gradient appeared.
    pub diverged_at: Option<(usize, usize)>,
}

/// Trains `model` on `dataset` with noise-injected quantization and
/// momentum-free gradient descent over shuffled minibatches.
pub fn train(model: &CodecModel, dataset: &[Image], opts: &TrainOptions) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let dims = dataset[0].tensor().dims();
    if let Some(bad) = dataset.iter().find(|im| im.tensor().dims() != dims) {
        return Err(Error::shape(format!(
            "training images must share one shape: {dims:?} vs {:?}",
            bad.tensor().dims()
        )));
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::invalid("batch_size must be >= 1 and lr positive"));
    }
    model.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut current = model.clone();
    let mut lr = opts.lr;
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(opts.batch_size).enumerate() {
            let mut grads: Vec<(&'static str, Vec<f64>)> = Vec::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::new();
                let p = current.bind(&mut g, true);
                let x = g.constant(dataset[i].tensor().clone());
                let loss = match current.rd_loss_on(&mut g, &p, x, &mut Quantizer::Noise(&mut rng)) {
                    Ok(l) => l,
                    Err(Error::NonFinite(_)) => {
                        return Ok(TrainReport { model: current, history, diverged_at: Some((epoch, step)) })
                    }
                    Err(e) => return Err(e),
                };
                batch_loss += g.scalar_value(loss)?;
                g.backward(loss)?;
                for (k, (name, var)) in p.named().into_iter().enumerate() {
                    let gr = g.grad(var).expect("tracked parameter");
                    match grads.get_mut(k) {
                        Some((_, acc)) => acc.iter_mut().zip(gr).for_each(|(a, v)| *a += v),
                        None => grads.push((name, gr.to_vec())),
                    }
                }
            }
            if !batch_loss.is_finite() || grads.iter().any(|(_, gr)| gr.iter().any(|v| !v.is_finite())) {
                return Ok(TrainReport { model: current, history, diverged_at: Some((epoch, step)) });
            }
            let scale = lr / batch.len() as f64;
            let mut next = current.clone();
            for (name, gr) in &grads {
                let t = next.parameter_mut(name).expect("named parameter");
                t.data_mut().iter_mut().zip(gr).for_each(|(w, g)| *w -= scale * g);
            }
            if next.validate().is_err() {
                return Ok(TrainReport { model: current, history, diverged_at: Some((epoch, step)) });
            }
            current = next;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / dataset.len() as f64;
        history.push(mean);
        if mean < best {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
            if opts.plateau_patience.is_some_and(|p| since_best >= p) {
                lr *= 0.5;
                since_best = 0;
            }
        }
    }
    Ok(TrainReport { model: current, history, diverged_at: None })
}
