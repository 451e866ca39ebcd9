use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{total_pair_loss, LossParams, LossVariant, PairMeasurements};
use super::model::{ChartModel, Workspace};
use crate::dataset::Dataset;
use crate::features::feature_rx_power;
use crate::icp::{IcpConfig, ScanOdometry};
use crate::rng::{self, Domain};
use crate::{Error, Result, SPEED_OF_LIGHT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied from epoch `⌊lr_decay_start · epochs⌋` on.
    pub lr_decay: f64,
    pub lr_decay_start: f64,
    pub seed: u64,
    pub lambda_value: f64,
    /// Largest step gap for which the laser term is active.
    pub lambda_window: usize,
    pub loss_variant: LossVariant,
    pub hinge_margin_m: f64,
    pub hinge_power_margin_db: f64,
    /// Multiplier applied to the CIR magnitudes before the first layer.
    pub input_scale: f64,
    pub icp: IcpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 32,
            pairs_per_epoch: 16384,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            lr_decay_start: 0.75,
            seed: 0,
            lambda_value: 5.0,
            lambda_window: 500,
            loss_variant: LossVariant::SplitToa,
            hinge_margin_m: 1.0,
            hinge_power_margin_db: 3.0,
            input_scale: 10.0,
            icp: IcpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 || self.pairs_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, pairs_per_epoch and batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay.is_finite()
            && self.lr_decay > 0.0
            && (0.0..=1.0).contains(&self.lr_decay_start))
        {
            return bad("lr_decay must be positive and lr_decay_start within [0, 1]");
        }
        if !(self.lambda_value.is_finite() && self.lambda_value >= 0.0) {
            return bad("lambda_value must be finite and >= 0");
        }
        if !(self.hinge_margin_m > 0.0 && self.hinge_power_margin_db >= 0.0) {
            return bad("hinge margins must be positive");
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be positive");
        }
        Ok(())
    }

    fn loss_params(&self, ue_height: f64) -> LossParams {
        LossParams {
            variant: self.loss_variant,
            ue_height,
            hinge_margin_m: self.hinge_margin_m,
            hinge_power_margin_db: self.hinge_power_margin_db,
        }
    }
}

/// Training pairs with their laser weights and displacement targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub lambdas: Vec<f64>,
    pub t_hat: Vec<f64>,
    pub quality: Vec<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draws `count` pairs uniformly over `n_c ≠ n_f` and, for pairs inside
/// the window, attaches the laser displacement and quality-scaled weight.
pub fn sample_pairs(
    n_steps: usize,
    count: usize,
    cfg: &TrainConfig,
    epoch: usize,
    odometry: Option<&ScanOdometry>,
) -> PairBatch {
    assert!(n_steps >= 2);
    let mut rng = rng::stream(cfg.seed, Domain::Pairs, epoch as u64);
    let pairs: Vec<(usize, usize)> = (0..count)
        .map(|_| {
            let a = rng.random_range(0..n_steps);
            let b = rng.random_range(0..n_steps - 1);
            (a, if b >= a { b + 1 } else { b })
        })
        .collect();
    let laser: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| match odometry {
            Some(odo) if cfg.lambda_value > 0.0 && a.abs_diff(b) <= cfg.lambda_window => {
                let d = odo.displacement(a, b);
                (d.distance, d.quality)
            }
            _ => (0.0, 0.0),
        })
        .collect();
    PairBatch {
        lambdas: laser.iter().map(|&(_, q)| cfg.lambda_value * q).collect(),
        t_hat: laser.iter().map(|&(t, _)| t).collect(),
        quality: laser.iter().map(|&(_, q)| q).collect(),
        pairs,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Pairs whose laser term was active.
    pub laser_pairs: usize,
    pub mean_laser_quality: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ChartModel<f32>,
    pub history: Vec<EpochStats>,
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let step = (self.lr / (1.0 - Self::B1.powi(self.t))) as f32;
        let bc2 = (1.0 - Self::B2.powi(self.t)).sqrt() as f32;
        let (b1, b2, eps) = (Self::B1 as f32, Self::B2 as f32, Self::EPS as f32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() / bc2 + eps);
        }
    }
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, cfg, |_| {})
}

/// Trains a chart model on a dataset's features, ToA and laser scans.
/// Ground truth is never read. `progress` sees every finished epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let h = dataset.header();
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 steps, dataset has {n}"
        )));
    }
    let odometry = if cfg.lambda_value > 0.0 {
        let scans = dataset.laser_scans().ok_or_else(|| {
            Error::Missing("dataset has no laser data; train with lambda 0 or add scans".into())
        })?;
        Some(ScanOdometry::new(&scans, cfg.icp))
    } else {
        None
    };
    let m_count = h.n_trps;
    let per = dataset.feature_len();
    let ranges: Vec<f64> = dataset
        .toa()
        .iter()
        .map(|&t| t as f64 * SPEED_OF_LIGHT)
        .collect();
    let powers: Vec<f64> = if cfg.loss_variant == LossVariant::Hinge {
        let mut p = Vec::with_capacity(n * m_count);
        for i in 0..n {
            p.extend(feature_rx_power(&dataset.feature(i))?);
        }
        p
    } else {
        vec![0.0; n * m_count]
    };
    let trps = dataset.trp_positions();
    let loss_params = cfg.loss_params(h.ue_height);

    let mut model = ChartModel::<f32>::new(m_count, h.c_bar, cfg.input_scale, cfg.seed)?;
    let bbox = h.room_bbox;
    model.set_output_bias([0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3])]);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut ws = Workspace::default();
    let mut grad = vec![0f32; model.params().len()];
    let mut inputs: Vec<f32> = Vec::new();
    let mut d_out: Vec<f32> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    let decay_epoch = (cfg.lr_decay_start * cfg.epochs as f64).floor() as usize;
    for epoch in 0..cfg.epochs {
        if epoch == decay_epoch {
            adam.lr = cfg.learning_rate * cfg.lr_decay;
        }
        let batch = sample_pairs(n, cfg.pairs_per_epoch, cfg, epoch, odometry.as_ref());
        let mut epoch_loss = 0.0;
        for start in (0..batch.len()).step_by(cfg.batch_size) {
            let end = (start + cfg.batch_size).min(batch.len());
            let b = end - start;
            inputs.clear();
            for &(a, c) in &batch.pairs[start..end] {
                inputs.extend_from_slice(dataset.feature_slice(a));
                inputs.extend_from_slice(dataset.feature_slice(c));
            }
            debug_assert_eq!(inputs.len(), 2 * b * per);
            let out = model.forward_batch(&inputs, 2 * b, &mut ws);
            d_out.clear();
            let mut loss_sum = 0.0;
            for (i, p) in (start..end).enumerate() {
                let (a, c) = batch.pairs[p];
                let pa = [out[4 * i] as f64, out[4 * i + 1] as f64];
                let pc = [out[4 * i + 2] as f64, out[4 * i + 3] as f64];
                let meas = PairMeasurements {
                    ranges_a: &ranges[a * m_count..][..m_count],
                    ranges_b: &ranges[c * m_count..][..m_count],
                    power_a: &powers[a * m_count..][..m_count],
                    power_b: &powers[c * m_count..][..m_count],
                    lambda: batch.lambdas[p],
                    t_hat: batch.t_hat[p],
                };
                let (l, ga, gc) = total_pair_loss(pa, pc, &trps, &meas, &loss_params);
                loss_sum += l;
                let s = 1.0 / b as f64;
                d_out.extend([ga[0] * s, ga[1] * s, gc[0] * s, gc[1] * s].map(|v| v as f32));
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("non-finite loss {loss_sum}"),
                });
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward(&mut ws, &d_out, &mut grad);
            adam.step(model.params_mut(), &grad);
            if !model.all_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: "non-finite parameters after update".into(),
                });
            }
            epoch_loss += loss_sum;
            step += 1;
        }
        let laser_pairs = batch.lambdas.iter().filter(|&&l| l > 0.0).count();
        let stats = EpochStats {
            epoch,
            mean_loss: epoch_loss / batch.len() as f64,
            laser_pairs,
            mean_laser_quality: if laser_pairs > 0 {
                batch.quality.iter().filter(|&&q| q > 0.0).sum::<f64>() / laser_pairs as f64
            } else {
                0.0
            },
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}
