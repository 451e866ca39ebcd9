//! Particle swarm optimisation, chart offset estimation and the TDoA
//! baseline.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{lift3d, ChartModel, Point};
use crate::dataset::Dataset;
use crate::features::{CirFeature, ToaVector};
use crate::geometry::{Vec2, Vec3};
use crate::rng::{self, derive_seed, Domain};
use crate::{Error, Result, SPEED_OF_LIGHT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm_size: 100,
            iterations: 300,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::InvalidArgument(
                "swarm_size must be at least 2".into(),
            ));
        }
        if !(self.inertia > 0.0 && self.inertia <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "inertia {} outside (0, 1]",
                self.inertia
            )));
        }
        if !(self.cognitive > 0.0 && self.social > 0.0) {
            return Err(Error::InvalidArgument(
                "cognitive and social weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Global-best value after initialisation and after every iteration.
    pub trace: Vec<f64>,
}

/// Global-best PSO over the box `bounds`. Velocities are clamped to the box
/// extent and positions to the box.
pub fn pso_minimize<F>(objective: F, bounds: &[(f64, f64)], cfg: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty()
        || bounds
            .iter()
            .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::InvalidArgument(format!(
            "invalid search bounds {bounds:?}"
        )));
    }
    let dim = bounds.len();
    let span: Vec<f64> = bounds.iter().map(|&(lo, hi)| hi - lo).collect();
    let mut rng = rng::stream(cfg.seed, Domain::Pso, 0);
    let mut x: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| {
            span.iter()
                .map(|&s| {
                    if s > 0.0 {
                        0.2 * s * rng.random_range(-1.0..=1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let eval = |pts: &[Vec<f64>]| -> Vec<f64> {
        pts.par_iter()
            .map(|p| {
                let f = objective(p);
                if f.is_nan() {
                    f64::INFINITY
                } else {
                    f
                }
            })
            .collect()
    };
    let mut pbest = x.clone();
    let mut pval = eval(&x);
    let first = argmin(&pval);
    let mut gbest = pbest[first].clone();
    let mut gval = pval[first];
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(gval);
    for _ in 0..cfg.iterations {
        for i in 0..cfg.swarm_size {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let vel = cfg.inertia * v[i][d]
                    + cfg.cognitive * r1 * (pbest[i][d] - x[i][d])
                    + cfg.social * r2 * (gbest[d] - x[i][d]);
                v[i][d] = vel.clamp(-span[d], span[d]);
                x[i][d] = (x[i][d] + v[i][d]).clamp(bounds[d].0, bounds[d].1);
            }
        }
        let vals = eval(&x);
        for i in 0..cfg.swarm_size {
            if vals[i] < pval[i] {
                pval[i] = vals[i];
                pbest[i].clone_from(&x[i]);
                if vals[i] < gval {
                    gval = vals[i];
                    gbest.clone_from(&x[i]);
                }
            }
        }
        trace.push(gval);
    }
    Ok(PsoResult {
        best: gbest,
        value: gval,
        trace,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Constant offset between the chart frame and the global frame; `z` is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub b: Vec3,
}

impl BiasVector {
    pub const ZERO: BiasVector = BiasVector { b: Vec3::ZERO };

    pub fn planar(x: f64, y: f64) -> Self {
        BiasVector {
            b: Vec3::new(x, y, 0.0),
        }
    }
}

/// Mean L1 range residual of bias-corrected chart points.
pub fn bias_objective(
    points: &[Point],
    ranges: &[f64],
    trps: &[Vec3],
    ue_height: f64,
    b: Vec2,
) -> f64 {
    let m = trps.len();
    let mut total = 0.0;
    for (n, p) in points.iter().enumerate() {
        let u = lift3d([p[0] - b.x, p[1] - b.y], ue_height);
        for (k, trp) in trps.iter().enumerate() {
            total += (trp.distance(u) - ranges[n * m + k]).abs();
        }
    }
    total / points.len().max(1) as f64
}

/// Bias minimising the L1 range residual of `points` (chart outputs) given
/// measured ranges `τν` laid out `[n, m]`. The search keeps the corrected
/// chart centroid within `room_bbox` grown by 5 m.
pub fn estimate_bias_from_points(
    points: &[Point],
    ranges: &[f64],
    trps: &[Vec3],
    ue_height: f64,
    room_bbox: [f64; 4],
    cfg: &PsoConfig,
) -> Result<BiasVector> {
    if points.is_empty() || ranges.len() != points.len() * trps.len() {
        return Err(Error::Shape(format!(
            "{} points, {} ranges for {} TRPs",
            points.len(),
            ranges.len(),
            trps.len()
        )));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let margin = 5.0;
    let bounds = [
        (cx - room_bbox[2] - margin, cx - room_bbox[0] + margin),
        (cy - room_bbox[3] - margin, cy - room_bbox[1] + margin),
    ];
    let r = pso_minimize(
        |b| bias_objective(points, ranges, trps, ue_height, Vec2::new(b[0], b[1])),
        &bounds,
        cfg,
    )?;
    Ok(BiasVector::planar(r.best[0], r.best[1]))
}

pub fn estimate_bias(
    model: &ChartModel<f32>,
    dataset: &Dataset,
    cfg: &PsoConfig,
) -> Result<BiasVector> {
    check_input(model, dataset)?;
    let h = dataset.header();
    let points = model.predict(dataset.features());
    let ranges: Vec<f64> = dataset
        .toa()
        .iter()
        .map(|&t| t as f64 * SPEED_OF_LIGHT)
        .collect();
    estimate_bias_from_points(
        &points,
        &ranges,
        &dataset.trp_positions(),
        h.ue_height,
        h.room_bbox,
        cfg,
    )
}

fn check_input(model: &ChartModel<f32>, dataset: &Dataset) -> Result<()> {
    let h = dataset.header();
    if model.input_shape() != (h.n_trps, h.c_bar) {
        return Err(Error::Shape(format!(
            "model expects {:?} features, dataset has {}x{} (select the training TRPs)",
            model.input_shape(),
            h.n_trps,
            h.c_bar
        )));
    }
    Ok(())
}

pub fn localize(
    model: &ChartModel<f32>,
    feature: &CirFeature,
    bias: &BiasVector,
    ue_height: f64,
) -> Result<Vec3> {
    let p = model.forward(feature)?;
    Ok(lift3d(p, ue_height) - bias.b)
}

/// [`localize`] for every step of a dataset.
pub fn localize_dataset(
    model: &ChartModel<f32>,
    dataset: &Dataset,
    bias: &BiasVector,
) -> Result<Vec<Vec3>> {
    check_input(model, dataset)?;
    let h = dataset.header().ue_height;
    Ok(model
        .predict(dataset.features())
        .into_iter()
        .map(|p| lift3d(p, h) - bias.b)
        .collect())
}

/// PSO TDoA fix referenced to the first TRP, searched over `room_bbox` at
/// the known UE height.
pub fn tdoa_pso_baseline(
    toa: &ToaVector,
    trps: &[Vec3],
    ue_height: f64,
    room_bbox: [f64; 4],
    cfg: &PsoConfig,
) -> Result<Vec2> {
    if trps.len() < 3 || toa.0.len() != trps.len() {
        return Err(Error::InvalidArgument(format!(
            "TDoA needs at least 3 TRPs with one ToA each, got {} TRPs and {} ToAs",
            trps.len(),
            toa.0.len()
        )));
    }
    let rdiff: Vec<f64> = toa
        .0
        .iter()
        .map(|t| (t - toa.0[0]) * SPEED_OF_LIGHT)
        .collect();
    let objective = |u: &[f64]| {
        let p = Vec3::new(u[0], u[1], ue_height);
        let d0 = trps[0].distance(p);
        (1..trps.len())
            .map(|m| (trps[m].distance(p) - d0 - rdiff[m]).abs())
            .sum::<f64>()
    };
    let bounds = [(room_bbox[0], room_bbox[2]), (room_bbox[1], room_bbox[3])];
    let r = pso_minimize(objective, &bounds, cfg)?;
    Ok(Vec2::new(r.best[0], r.best[1]))
}

/// Baseline fix for every step; step `n` uses a PSO seed derived from
/// `(cfg.seed, n)`.
pub fn tdoa_baseline_dataset(dataset: &Dataset, cfg: &PsoConfig) -> Result<Vec<Vec3>> {
    let h = dataset.header();
    let trps = dataset.trp_positions();
    (0..dataset.len())
        .into_par_iter()
        .map(|n| {
            let step_cfg = PsoConfig {
                seed: derive_seed(cfg.seed, n as u64),
                ..cfg.clone()
            };
            tdoa_pso_baseline(
                &dataset.toa_vector(n),
                &trps,
                h.ue_height,
                h.room_bbox,
                &step_cfg,
            )
            .map(|p| p.with_z(h.ue_height))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trps() -> Vec<Vec3> {
        vec![
            Vec3::new(2.0, 1.0, 8.0),
            Vec3::new(18.0, 1.0, 8.0),
            Vec3::new(10.0, 14.0, 8.0),
        ]
    }

    const BBOX: [f64; 4] = [0.0, 0.0, 20.0, 15.0];

    #[test]
    fn sphere_minimum() {
        let r = pso_minimize(
            |x| x.iter().map(|v| v * v).sum(),
            &[(-5.0, 5.0); 2],
            &PsoConfig::default(),
        )
        .unwrap();
        assert!(r.best.iter().all(|v| v.abs() < 1e-3), "{:?}", r.best);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_objective() {
        let r = pso_minimize(|_| 3.5, &[(-1.0, 1.0); 3], &PsoConfig::default()).unwrap();
        assert_eq!(r.value, 3.5);
        assert!(r.best.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rosenbrock() {
        let cfg = PsoConfig {
            swarm_size: 200,
            iterations: 500,
            ..PsoConfig::default()
        };
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = pso_minimize(f, &[(-2.0, 2.0), (-1.0, 3.0)], &cfg).unwrap();
        assert!(r.value <= 1e-2, "{}", r.value);
    }

    #[test]
    fn never_worse_than_initial_swarm() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + (x[1] * 2.0).cos() + 0.1 * x[0] * x[0];
        let r = pso_minimize(
            f,
            &[(-4.0, 4.0); 2],
            &PsoConfig {
                iterations: 20,
                ..PsoConfig::default()
            },
        )
        .unwrap();
        assert!(r.value <= r.trace[0]);
        let again = pso_minimize(
            f,
            &[(-4.0, 4.0); 2],
            &PsoConfig {
                iterations: 20,
                ..PsoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(pso_minimize(
            |_| 0.0,
            &[(0.0, 1.0)],
            &PsoConfig {
                swarm_size: 1,
                ..PsoConfig::default()
            }
        )
        .is_err());
        assert!(pso_minimize(|_| 0.0, &[(1.0, 0.0)], &PsoConfig::default()).is_err());
        assert!(pso_minimize(|_| 0.0, &[(0.0, f64::INFINITY)], &PsoConfig::default()).is_err());
    }

    fn grid_truth() -> Vec<Point> {
        (0..150)
            .map(|i| [1.0 + (i % 15) as f64 * 1.2, 1.5 + (i / 15) as f64 * 1.3])
            .collect()
    }

    fn exact_ranges(points: &[Point]) -> Vec<f64> {
        points
            .iter()
            .flat_map(|p| trps().into_iter().map(move |t| lift3d(*p, 1.5).distance(t)))
            .collect()
    }

    #[test]
    fn unbiased_chart_gives_zero_bias() {
        let truth = grid_truth();
        let b = estimate_bias_from_points(
            &truth,
            &exact_ranges(&truth),
            &trps(),
            1.5,
            BBOX,
            &PsoConfig::default(),
        )
        .unwrap();
        assert!(b.b.norm() < 0.05, "{b:?}");
        assert_eq!(b.b.z, 0.0);
    }

    #[test]
    fn planted_bias_is_recovered() {
        let truth = grid_truth();
        let chart: Vec<Point> = truth.iter().map(|p| [p[0] + 2.0, p[1] - 1.0]).collect();
        let ranges = exact_ranges(&truth);
        let b =
            estimate_bias_from_points(&chart, &ranges, &trps(), 1.5, BBOX, &PsoConfig::default())
                .unwrap();
        assert!(
            (b.b.x - 2.0).abs() < 0.05 && (b.b.y + 1.0).abs() < 0.05,
            "{b:?}"
        );
        let at_b = bias_objective(&chart, &ranges, &trps(), 1.5, b.b.xy());
        assert!(at_b <= bias_objective(&chart, &ranges, &trps(), 1.5, Vec2::ZERO));
        // shifting the whole chart shifts the bias by the same amount
        let moved: Vec<Point> = chart.iter().map(|p| [p[0] - 3.0, p[1] + 0.5]).collect();
        let b2 =
            estimate_bias_from_points(&moved, &ranges, &trps(), 1.5, BBOX, &PsoConfig::default())
                .unwrap();
        assert!((b2.b.x - (b.b.x - 3.0)).abs() < 0.05 && (b2.b.y - (b.b.y + 0.5)).abs() < 0.05);
    }

    #[test]
    fn trilateration_at_room_centre() {
        let u = Vec3::new(10.0, 7.5, 1.5);
        let toa = ToaVector(
            trps()
                .iter()
                .map(|t| t.distance(u) / SPEED_OF_LIGHT)
                .collect(),
        );
        let est = tdoa_pso_baseline(&toa, &trps(), 1.5, BBOX, &PsoConfig::default()).unwrap();
        assert!((est - u.xy()).norm() < 0.05, "{est:?}");
        let shifted = ToaVector(toa.0.iter().map(|t| t + 37e-9).collect());
        let est2 = tdoa_pso_baseline(&shifted, &trps(), 1.5, BBOX, &PsoConfig::default()).unwrap();
        assert!((est2 - est).norm() < 1e-6);
    }

    #[test]
    fn baseline_needs_three_trps() {
        let toa = ToaVector(vec![1e-8, 2e-8]);
        assert!(tdoa_pso_baseline(&toa, &trps()[..2], 1.5, BBOX, &PsoConfig::default()).is_err());
    }

    #[test]
    fn localize_applies_bias() {
        let model = ChartModel::<f32>::new(2, 49, 10.0, 0).unwrap();
        let f = CirFeature::new(2, 49, vec![0.05; 98]).unwrap();
        let raw = localize(&model, &f, &BiasVector::ZERO, 1.5).unwrap();
        assert_eq!(raw, lift3d(model.forward(&f).unwrap(), 1.5));
        let moved = localize(&model, &f, &BiasVector::planar(1.0, 0.0), 1.5).unwrap();
        assert!((moved.x - (raw.x - 1.0)).abs() < 1e-12 && moved.y == raw.y);
    }
}
