//! Masked loss, the training loop, and sparse inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::plenoptic::FlowerStackBatch;

use super::adam::{AdamConfig, AdamState};
use super::layer::Mode;
use super::network::{microlens_depth_network, Network};
use super::tensor::{Scalar, Tensor4};
use super::{DepthSource, NetError, SparseDepthMap, SparseSample};

/// Mean squared error over the pixels selected by a binary mask:
/// `sum(M * (pred - gt)^2) / sum(M)`. Accumulated in f64.
pub fn masked_mse<T: Scalar>(
    pred: &Tensor4<T>,
    gt: &Tensor4<T>,
    mask: &Tensor4<T>,
) -> Result<f64, NetError> {
    if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
        return Err(NetError::shape(format!(
            "masked_mse shapes differ: pred {:?}, gt {:?}, mask {:?}",
            pred.shape(),
            gt.shape(),
            mask.shape()
        )));
    }
    let mut num = 0.0f64;
    let mut count = 0.0f64;
    for ((&p, &g), &m) in pred.as_slice().iter().zip(gt.as_slice()).zip(mask.as_slice()) {
        let m = m.to_f64();
        if m != 0.0 && m != 1.0 {
            return Err(NetError::shape("mask values must be 0 or 1".to_string()));
        }
        let d = p.to_f64() - g.to_f64();
        num += m * d * d;
        count += m;
    }
    if count == 0.0 {
        return Err(NetError::EmptyMask);
    }
    Ok(num / count)
}

/// Gradient of [`masked_mse`] with respect to the prediction:
/// `2 * M * (pred - gt) / sum(M)`.
pub fn masked_mse_grad<T: Scalar>(
    pred: &Tensor4<T>,
    gt: &Tensor4<T>,
    mask: &Tensor4<T>,
) -> Result<Tensor4<T>, NetError> {
    if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
        return Err(NetError::shape("masked_mse_grad shapes differ".to_string()));
    }
    let count: f64 = mask.as_slice().iter().map(|m| m.to_f64()).sum();
    if count == 0.0 {
        return Err(NetError::EmptyMask);
    }
    let scale = T::from_f64(2.0 / count);
    let (n, c, h, w) = pred.shape();
    let mut grad = Tensor4::zeros(n, c, h, w);
    for ((d, (&p, &g)), &m) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice().iter().zip(gt.as_slice()))
        .zip(mask.as_slice())
    {
        *d = scale * m * (p - g);
    }
    Ok(grad)
}

/// Training hyperparameters. Defaults: 125 epochs, batches of 128, Adam
/// with learning rate 0.001.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 125, batch_size: 128, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.adam.learning_rate > 0.0) {
            return Err(NetError::shape(
                "train config requires epochs >= 1, batch size >= 1, positive learning rate"
                    .to_string(),
            ));
        }
        Ok(())
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub network: Network<f32>,
    /// Mean masked MSE per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the microlens depth network on stacks with ground-truth depths.
///
/// Stacks without a matching ground-truth sample are skipped. Each epoch
/// reshuffles the training set with the seeded stream and iterates
/// mini-batches (the final shorter batch included). The mask selects the
/// centroid pixel of every output map.
pub fn train(
    stacks: &FlowerStackBatch,
    gt: &SparseDepthMap,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if stacks.height != stacks.width {
        return Err(NetError::shape("stacks must be square".to_string()));
    }
    let labeled: Vec<(usize, f64)> = (0..stacks.count)
        .filter_map(|i| gt.get(stacks.coords[i]).map(|s| (i, s.depth_m)))
        .collect();
    if labeled.is_empty() {
        return Err(NetError::NoTrainingData);
    }

    let mut net: Network<f32> = microlens_depth_network(stacks.height, cfg.seed)?;
    let mut adam = AdamState::for_network(&net);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sse = 0.0f64;
        let mut epoch_count = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, gt_t, mask) = gather_batch(stacks, &labeled, chunk);
            let (out, caches) = net.forward(&input, Mode::Train)?;
            let loss = masked_mse(&out, &gt_t, &mask)?;
            let grad = masked_mse_grad(&out, &gt_t, &mask)?;
            let (grads, _) = net.backward(&caches, &grad);
            let grad_arrays: Vec<&Vec<f32>> = grads.iter().flat_map(|g| g.arrays()).collect();
            let mut params = net.param_arrays_mut();
            adam.step(&mut params, &grad_arrays, &cfg.adam);
            epoch_sse += loss * chunk.len() as f64;
            epoch_count += chunk.len() as f64;
        }
        history.push(epoch_sse / epoch_count);
    }
    Ok(TrainOutcome { network: net, loss_history: history })
}

fn gather_batch(
    stacks: &FlowerStackBatch,
    labeled: &[(usize, f64)],
    chunk: &[usize],
) -> (Tensor4<f32>, Tensor4<f32>, Tensor4<f32>) {
    let (c, h, w) = (stacks.channels, stacks.height, stacks.width);
    let n = chunk.len();
    let mut input = Tensor4::zeros(n, c, h, w);
    let mut gt = Tensor4::zeros(n, 1, h, w);
    let mut mask = Tensor4::zeros(n, 1, h, w);
    for (bi, &oi) in chunk.iter().enumerate() {
        let (stack_idx, depth) = labeled[oi];
        input.item_mut(bi).copy_from_slice(stacks.item(stack_idx));
        *gt.at_mut(bi, 0, h / 2, w / 2) = depth as f32;
        *mask.at_mut(bi, 0, h / 2, w / 2) = 1.0;
    }
    (input, gt, mask)
}

/// Inference batch size. Evaluation is per-item, so chunking cannot change
/// results; it only bounds memory.
const PREDICT_CHUNK: usize = 256;

/// Predicts one metric depth per stack: the eval-mode output value at the
/// centroid pixel, anchored at the stack's centroid position.
pub fn predict_sparse(
    net: &Network<f32>,
    stacks: &FlowerStackBatch,
) -> Result<SparseDepthMap, NetError> {
    let (c, h, w) = (stacks.channels, stacks.height, stacks.width);
    let mut samples = Vec::with_capacity(stacks.count);
    let mut start = 0;
    while start < stacks.count {
        let end = (start + PREDICT_CHUNK).min(stacks.count);
        let n = end - start;
        let mut input = Tensor4::zeros(n, c, h, w);
        for bi in 0..n {
            input.item_mut(bi).copy_from_slice(stacks.item(start + bi));
        }
        let out = net.forward_eval(&input)?;
        for bi in 0..n {
            let depth = out.at(bi, 0, h / 2, w / 2) as f64;
            if !depth.is_finite() {
                return Err(NetError::shape("network produced a non-finite depth".to_string()));
            }
            samples.push(SparseSample {
                coord: stacks.coords[start + bi],
                position: stacks.centroids[start + bi],
                depth_m: depth,
            });
        }
        start = end;
    }
    Ok(SparseDepthMap::new(DepthSource::Predicted, samples))
}
