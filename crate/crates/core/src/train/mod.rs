//! The training loop: seeded batching and augmentation, loss/optimizer
//! plumbing, per-epoch metrics with firing-rate hooks, and evaluation.

mod augment;
mod loss;
mod optim;

pub use augment::{augment_batch, hflip_image, AugmentFlags, CROP_PAD};
pub use loss::{accuracy, one_hot, smoothed_xent, smoothed_xent_grad, softmax_xent};
pub use optim::{cosine_lr, OptimKind, Optimizer};

use crate::data::Dataset;
use crate::error::Result;
use crate::graph::{Mode, NetworkGraph};
use crate::rng::Rng;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimKind,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    pub augment: AugmentFlags,
    /// Global gradient-norm ceiling (0 disables).
    pub grad_clip: f64,
    /// Lower clamp on batch-norm scales after each step; keeps folding valid.
    pub gamma_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            optimizer: OptimKind::adam(),
            lr: 0.001,
            lr_min: 0.0,
            weight_decay: 0.0005,
            epochs: 20,
            batch_size: 128,
            label_smoothing: 0.1,
            seed: 1,
            augment: AugmentFlags { hflip: true, crop_pad: false },
            grad_clip: 10.0,
            gamma_floor: 1e-3,
        }
    }
}

/// One epoch of measurements, train and test side.
#[derive(Clone, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_firing_rate: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub test_firing_rate: f64,
    /// Per-activation-layer firing rates over the test pass, in graph order.
    pub per_layer_test_rates: Vec<f64>,
    /// Fraction of activation neurons that never fired during the train epoch.
    pub dead_fraction: f64,
}

/// Header plus two rows (`train`, `test`) per epoch.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy,lr,mean_firing_rate\n");
    for m in history {
        out.push_str(&format!(
            "{},train,{},{},{},{}\n",
            m.epoch, m.train_loss, m.train_acc, m.lr, m.train_firing_rate
        ));
        out.push_str(&format!(
            "{},test,{},{},{},{}\n",
            m.epoch, m.test_loss, m.test_acc, m.lr, m.test_firing_rate
        ));
    }
    out
}

/// Spike fraction over all activation layers since the last stats reset.
fn overall_firing_rate<T: Scalar>(net: &NetworkGraph<T>) -> f64 {
    let mut spikes = 0.0;
    let mut count = 0.0;
    for (_, s) in net.firing_stats() {
        spikes += s.spikes;
        count += s.count;
    }
    if count == 0.0 {
        0.0
    } else {
        spikes / count
    }
}

/// Mean accuracy over the dataset in the graph's current inference mode
/// (eval, or folded-eval for a folded graph).
pub fn evaluate<T: Scalar>(
    net: &mut NetworkGraph<T>,
    ds: &Dataset<T>,
    batch_size: usize,
) -> Result<f64> {
    Ok(evaluate_full(net, ds, batch_size)?.1)
}

/// `(mean loss, accuracy)` over the dataset.
pub fn evaluate_full<T: Scalar>(
    net: &mut NetworkGraph<T>,
    ds: &Dataset<T>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if net.mode == Mode::Train {
        net.set_mode(Mode::Eval);
    }
    let mut hits = 0.0;
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = ds.batch(chunk);
        let y = net.forward(&x)?;
        let targets = one_hot::<T>(&labels, ds.num_classes)?;
        loss_sum += softmax_xent(&y, &targets)? * labels.len() as f64;
        hits += accuracy(&y, &labels) * labels.len() as f64;
    }
    Ok((loss_sum / ds.len() as f64, hits / ds.len() as f64))
}

/// Run the configured number of epochs; deterministic given the config and
/// the graph's initial parameters.
pub fn train<T: Scalar>(
    net: &mut NetworkGraph<T>,
    train_ds: &Dataset<T>,
    test_ds: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    net.reseed_dropout(cfg.seed ^ 0x0d0d_0d0d);
    let mut shuffle_rng = Rng::new(cfg.seed ^ 0x51_1aff_1e);
    let mut aug_rng = Rng::new(cfg.seed ^ 0xa060_a060);
    let mut opt = Optimizer::new(cfg.optimizer);
    opt.grad_clip = cfg.grad_clip;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min);
        net.set_mode(Mode::Train);
        net.set_record_firing(true);
        net.reset_firing_stats();
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (raw_x, labels) = train_ds.batch(chunk);
            let x = augment_batch(&raw_x, cfg.augment, &mut aug_rng)?;
            let y = net.forward(&x)?;
            let targets = one_hot::<T>(&labels, train_ds.num_classes)?;
            loss_sum += smoothed_xent(&y, &targets, cfg.label_smoothing)? * labels.len() as f64;
            acc_sum += accuracy(&y, &labels) * labels.len() as f64;
            let grad = smoothed_xent_grad(&y, &targets, cfg.label_smoothing)?;
            net.backward(&grad)?;
            let mut slots = net.params_mut();
            opt.step(&mut slots, lr, cfg.weight_decay)?;
            net.clamp_bn_gamma(cfg.gamma_floor);
        }
        let train_firing_rate = overall_firing_rate(net);
        let dead_fraction = net.dead_neuron_fraction();

        net.set_mode(Mode::Eval);
        net.reset_firing_stats();
        let (test_loss, test_acc) = evaluate_full(net, test_ds, cfg.batch_size)?;
        let per_layer_test_rates: Vec<f64> =
            net.firing_stats().iter().map(|(_, s)| s.rate()).collect();
        let test_firing_rate = overall_firing_rate(net);
        net.set_record_firing(false);

        history.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / train_ds.len() as f64,
            train_acc: acc_sum / train_ds.len() as f64,
            train_firing_rate,
            test_loss,
            test_acc,
            test_firing_rate,
            per_layer_test_rates,
            dead_fraction,
        });
    }
    Ok(history)
}
