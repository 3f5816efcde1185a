use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_update, lr_for_epoch, Adam};
use super::tensor::Tensor;
use super::unet::{masked_mse_grad, UNet};
use crate::codec::{GeometryFrame, FRAME_CHANNELS, FRAME_SIDE};
use crate::dataset::{ContextVector, CONTEXT_LEN};
use crate::diffusion::{training_step, DiffusionSchedule, Denoiser, NoisedBatch, TrainItem, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 400,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Stacks frames into a `[B, 3, 32, 32]` tensor.
pub fn frames_to_tensor<S: Real>(frames: &[GeometryFrame<S>]) -> Tensor<S> {
    let mut data = Vec::with_capacity(frames.len() * crate::codec::FRAME_LEN);
    for f in frames {
        data.extend_from_slice(&f.data);
    }
    Tensor {
        shape: [frames.len(), FRAME_CHANNELS, FRAME_SIDE, FRAME_SIDE],
        data,
    }
}

/// Normalized step and context tensors for a batch.
pub fn conditioning<S: Real>(steps: &[usize], total: usize, contexts: &[ContextVector]) -> (Tensor<S>, Tensor<S>) {
    let t = Tensor {
        shape: [steps.len(), 1, 1, 1],
        data: steps.iter().map(|&s| S::of(s as f64 / total as f64)).collect(),
    };
    let c = Tensor {
        shape: [contexts.len(), CONTEXT_LEN, 1, 1],
        data: contexts.iter().flat_map(|c| c.to_values::<S>()).collect(),
    };
    (t, c)
}

/// A U-Net with its optimizer, usable both for training and sampling.
#[derive(Clone, Debug)]
pub struct NetDenoiser<S> {
    pub net: UNet<S>,
    pub opt: Adam<S>,
    /// Learning rate used by the next [`TrainableDenoiser::fit_batch`].
    pub lr: f64,
}

impl<S: Real> NetDenoiser<S> {
    pub fn new(net: UNet<S>) -> Self {
        let opt = Adam::new(net.params());
        NetDenoiser { net, opt, lr: 1e-3 }
    }

    pub fn with_optimizer(net: UNet<S>, opt: Adam<S>) -> Self {
        NetDenoiser { net, opt, lr: 1e-3 }
    }
}

impl<S: Real> TrainableDenoiser<S> for NetDenoiser<S> {
    fn fit_batch(&mut self, batch: &NoisedBatch<S>) -> Result<S> {
        let x = frames_to_tensor(&batch.inputs);
        let target = frames_to_tensor(&batch.targets);
        let (t, c) = conditioning(&batch.steps, batch.total_steps, &batch.contexts);
        let (y, cache) = self.net.forward(&x, &t, &c, true)?;
        let (loss, dy) = masked_mse_grad(&y, &target, &batch.live)?;
        if !loss.is_finite() {
            return Err(Error::Shape("non-finite training loss".into()));
        }
        let grads = self.net.backward(&cache, &dy);
        self.net.update_running_stats(&cache);
        adam_update(self.net.params_mut(), &grads, &mut self.opt, self.lr);
        Ok(loss)
    }
}

impl<S: Real> Denoiser<S> for NetDenoiser<S> {
    fn predict(&mut self, x_t: &GeometryFrame<S>, t: usize, steps: usize, context: &ContextVector) -> Result<GeometryFrame<S>> {
        let x = frames_to_tensor(std::slice::from_ref(x_t));
        let (tn, c) = conditioning(&[t], steps, std::slice::from_ref(context));
        let y = self.net.predict(&x, &tn, &c)?;
        GeometryFrame::from_vec(y.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

/// Runs `config.epochs` epochs of shuffled mini-batch training. Epoch `k`
/// uses the rate `eta_{k-1}` of the linear decay.
pub fn train<S: Real>(
    model: &mut NetDenoiser<S>,
    items: &[TrainItem<S>],
    schedule: &DiffusionSchedule<S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if items.is_empty() || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("training needs items, a batch size and epochs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);
    for k in 1..=config.epochs {
        model.lr = lr;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainItem<S>> = chunk.iter().map(|&i| items[i].clone()).collect();
            let loss = training_step(model, &batch, schedule, rng.random())?;
            total += loss.to_f64v();
            batches += 1;
        }
        let stats = EpochStats {
            epoch: k,
            learning_rate: lr,
            mean_loss: total / batches as f64,
        };
        on_epoch(&stats);
        history.push(stats);
        lr = lr_for_epoch(lr, k, config.epochs);
    }
    Ok(history)
}
