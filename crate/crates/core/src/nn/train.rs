use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{Grads, ParamSet, Tensor};
use super::unet::UNet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    L1,
    L2,
}

/// splitmix64 over a sequence of words; used to derive independent seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for p in parts {
        z = z.wrapping_add(*p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Mean per-pixel loss and its gradient with respect to `pred`.
pub fn pixel_loss(pred: &Tensor, target: &[f32], loss: Loss) -> (f64, Tensor) {
    assert_eq!(pred.data.len(), target.len(), "prediction/target size");
    let n = target.len() as f32;
    let mut grad = Tensor::zeros(pred.c, pred.h, pred.w);
    let mut total = 0.0f64;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(target) {
        let e = p - t;
        match loss {
            Loss::L1 => {
                total += e.abs() as f64;
                *g = if e > 0.0 {
                    1.0 / n
                } else if e < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            Loss::L2 => {
                total += (e as f64) * (e as f64);
                *g = 2.0 * e / n;
            }
        }
    }
    (total / target.len() as f64, grad)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f32) -> Self {
        let zeros = || params.values.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        for ((p, g), (m, v)) in params
            .values
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + self.eps * c2.sqrt());
            }
        }
    }
}

/// How the learning rate evolves over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Rate for `step` (0-based) out of `total` steps.
    pub fn rate(self, base: f32, step: usize, total: usize) -> f32 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                (base as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub loss: Loss,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// One line of a training log. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

/// Minibatch training loop shared by both stages.
///
/// `fetch(index, draw_seed)` produces one `(input, target)` pair; the seed
/// lets it apply random augmentation reproducibly. Gradients are computed per
/// sample (in parallel when threads are available) and summed in batch
/// order, so results do not depend on the thread count.
pub fn fit<F, V>(
    net: &mut UNet,
    n_samples: usize,
    cfg: &FitConfig,
    fetch: F,
    mut validate: V,
) -> Result<Vec<EpochRecord>>
where
    F: Fn(usize, u64) -> (Tensor, Vec<f32>) + Sync,
    V: FnMut(&UNet) -> Option<f64>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let initial: f64 = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = fetch(i, derive_seed(&[cfg.seed, u64::MAX, i as u64]));
            pixel_loss(&net.predict(&x), &y, cfg.loss).0
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        / n_samples as f64;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: initial,
        val_metric: validate(net),
    }];
    if cfg.epochs == 0 {
        return Ok(log);
    }

    let mut adam = Adam::new(net.params(), cfg.learning_rate);
    let mut last_finite = Some(initial).filter(|l| l.is_finite());
    let total_steps = cfg.epochs * n_samples.div_ceil(cfg.batch_size);
    let mut global_step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64])));
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let net_ref: &UNet = net;
            let results: Vec<(f64, Grads)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let seed = derive_seed(&[cfg.seed, epoch as u64, step as u64, j as u64]);
                    let (x, y) = fetch(i, seed);
                    let (out, cache) = net_ref.forward(&x);
                    let (l, dout) = pixel_loss(&out, &y, cfg.loss);
                    let mut g = net_ref.params().zero_grads();
                    net_ref.backward(&cache, &dout, &mut g);
                    (l, g)
                })
                .collect();
            let mut iter = results.into_iter();
            let (mut batch_loss, mut grads) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                batch_loss += l;
                grads.add_assign(&g);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    last_finite,
                });
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.lr = cfg.schedule.rate(cfg.learning_rate, global_step, total_steps);
            global_step += 1;
            adam.step(net.params_mut(), &grads);
            epoch_loss += batch_loss;
            last_finite = Some(batch_loss / batch.len() as f64);
        }
        let train_loss = epoch_loss / n_samples as f64;
        log::debug!("epoch {epoch}: train loss {train_loss:.6}");
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: validate(net),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Downsample, UNetConfig};

    #[test]
    fn loss_gradients() {
        let pred = Tensor::from_vec(1, 1, 2, vec![1.0, 0.0]);
        let (l1, g1) = pixel_loss(&pred, &[0.0, 0.0], Loss::L1);
        assert_eq!(l1, 0.5);
        assert_eq!(g1.data, vec![0.5, 0.0]);
        let (l2, g2) = pixel_loss(&pred, &[0.0, 2.0], Loss::L2);
        assert_eq!(l2, 2.5);
        assert_eq!(g2.data, vec![1.0, -2.0]);
    }

    #[test]
    fn cosine_schedule_runs_from_base_to_zero() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(0.1, 0, 10), 0.1);
        assert!((s.rate(0.1, 5, 10) - 0.05).abs() < 1e-7);
        assert!(s.rate(0.1, 9, 10) > 0.0);
        assert!(s.rate(0.1, 10, 10).abs() < 1e-9);
        assert_eq!(LrSchedule::Constant.rate(0.1, 7, 10), 0.1);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.values.push(vec![3.0, -2.0]);
        ps.shapes.push(vec![2]);
        let mut adam = Adam::new(&ps, 0.1);
        for _ in 0..500 {
            let g = Grads(vec![ps.values[0].iter().map(|x| 2.0 * x).collect()]);
            adam.step(&mut ps, &g);
        }
        assert!(ps.values[0].iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn fit_learns_identity_map_and_is_deterministic() {
        let cfg_net = UNetConfig {
            in_channels: 1,
            base_width: 4,
            max_width: 8,
            depth: 1,
            convs_per_block: 1,
            downsample: Downsample::MaxPool,
            bottleneck_dilations: vec![1],
            squeeze_excitation: false,
        };
        let data: Vec<Vec<f32>> = (0..6)
            .map(|s| (0..64).map(|i| ((i * 7 + s * 13) % 17) as f32 / 17.0).collect())
            .collect();
        let fetch = |i: usize, _seed: u64| (Tensor::from_vec(1, 8, 8, data[i].clone()), data[i].clone());
        let cfg = FitConfig {
            epochs: 60,
            batch_size: 3,
            learning_rate: 1e-2,
            schedule: LrSchedule::Constant,
            seed: 1,
            loss: Loss::L2,
        };
        let mut a = UNet::new(cfg_net.clone(), 0).unwrap();
        let log_a = fit(&mut a, 6, &cfg, fetch, |_| None).unwrap();
        assert_eq!(log_a.len(), 61);
        assert!(log_a[60].train_loss < 0.2 * log_a[0].train_loss);
        let mut b = UNet::new(cfg_net, 0).unwrap();
        let log_b = fit(&mut b, 6, &cfg, fetch, |_| None).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn zero_epochs_leaves_weights_alone() {
        let cfg_net = UNetConfig {
            in_channels: 1,
            base_width: 2,
            max_width: 2,
            depth: 1,
            convs_per_block: 1,
            downsample: Downsample::MaxPool,
            bottleneck_dilations: vec![1],
            squeeze_excitation: false,
        };
        let mut net = UNet::new(cfg_net, 3).unwrap();
        let before = net.params().clone();
        let cfg = FitConfig {
            epochs: 0,
            batch_size: 1,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            seed: 0,
            loss: Loss::L1,
        };
        let log = fit(&mut net, 1, &cfg, |_, _| (Tensor::zeros(1, 4, 4), vec![0.5; 16]), |_| Some(1.0)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].val_metric, Some(1.0));
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn nan_targets_abort() {
        let cfg_net = UNetConfig {
            in_channels: 1,
            base_width: 2,
            max_width: 2,
            depth: 1,
            convs_per_block: 1,
            downsample: Downsample::MaxPool,
            bottleneck_dilations: vec![1],
            squeeze_excitation: false,
        };
        let mut net = UNet::new(cfg_net, 3).unwrap();
        let cfg = FitConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            seed: 0,
            loss: Loss::L2,
        };
        let err = fit(&mut net, 1, &cfg, |_, _| (Tensor::zeros(1, 4, 4), vec![f32::NAN; 16]), |_| None);
        assert!(matches!(err, Err(Error::NonFiniteLoss { epoch: 1, .. })));
    }
}
