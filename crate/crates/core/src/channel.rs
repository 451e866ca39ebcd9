//! Delay-domain channel impulse responses from scene geometry.
//!
//! Each TRP row holds the line-of-sight path plus one first-order image
//! source per room wall. A path of length `d` contributes a windowed sinc
//! pulse centred at `d / c * fs` taps, scaled to unit energy over the tap
//! grid and then by `amplitude / d`, with an independent uniform phase.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetHeader};
use crate::features::{extract_toa, truncate_and_abs};
use crate::geometry::{reflect_across_line, segments_intersect, Vec2, Vec3};
use crate::rng::{self, derive_seed, Domain};
use crate::world::{simulate_laser_scan, LaserConfig, Scene, Trajectory};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Half-width of the pulse support, in taps.
pub const PULSE_HALF_WIDTH: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub sample_rate_hz: f64,
    /// Number of delay taps `C`.
    pub n_taps: usize,
    /// Carrier wavelength (m); recorded for reference, phases are drawn
    /// independently per path.
    pub carrier_wavelength: f64,
    /// Signal-to-noise ratio of the LoS peak tap; `None` disables noise.
    pub snr_db: Option<f64>,
    pub reflection_coeff: f64,
    pub speed_of_light: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bandwidth_hz: 100e6,
            sample_rate_hz: 122.88e6,
            n_taps: 64,
            carrier_wavelength: SPEED_OF_LIGHT / 3.5e9,
            snr_db: Some(25.0),
            reflection_coeff: 0.5,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.sample_rate_hz >= self.bandwidth_hz) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < bandwidth ({}) <= sample rate ({})",
                self.bandwidth_hz, self.sample_rate_hz
            )));
        }
        if self.n_taps == 0 {
            return Err(Error::InvalidArgument("n_taps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(Error::InvalidArgument(format!(
                "reflection_coeff {} outside [0, 1]",
                self.reflection_coeff
            )));
        }
        if self.speed_of_light != SPEED_OF_LIGHT {
            return Err(Error::InvalidArgument(
                "speed_of_light must be 299792458 m/s".into(),
            ));
        }
        Ok(())
    }

    /// Range spanned by one tap, `c / fs`.
    pub fn tap_length(&self) -> f64 {
        self.speed_of_light / self.sample_rate_hz
    }

    pub fn delay_in_taps(&self, distance: f64) -> f64 {
        distance / self.speed_of_light * self.sample_rate_hz
    }
}

/// `M x C` complex delay-domain channel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CirMatrix {
    pub n_trps: usize,
    pub n_taps: usize,
    pub taps: Vec<Complex64>,
}

impl CirMatrix {
    pub fn zeros(n_trps: usize, n_taps: usize) -> Self {
        CirMatrix {
            n_trps,
            n_taps,
            taps: vec![Complex64::new(0.0, 0.0); n_trps * n_taps],
        }
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.taps[m * self.n_taps..(m + 1) * self.n_taps]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex64] {
        &mut self.taps[m * self.n_taps..(m + 1) * self.n_taps]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed band-limited pulse at fractional delay `delay` (taps), sampled
/// on taps `0..n_taps` before energy normalisation.
pub fn raw_pulse(delay: f64, bandwidth_ratio: f64, n_taps: usize) -> Vec<f64> {
    (0..n_taps)
        .map(|c| {
            let u = c as f64 - delay;
            if u.abs() >= PULSE_HALF_WIDTH {
                0.0
            } else {
                let window = 0.5 * (1.0 + (PI * u / PULSE_HALF_WIDTH).cos());
                window * sinc(bandwidth_ratio * u)
            }
        })
        .collect()
}

/// [`raw_pulse`] scaled to unit energy; all zeros if the pulse misses the grid.
pub fn unit_pulse(delay: f64, bandwidth_ratio: f64, n_taps: usize) -> Vec<f64> {
    let mut p = raw_pulse(delay, bandwidth_ratio, n_taps);
    let energy: f64 = p.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let s = energy.sqrt().recip();
        p.iter_mut().for_each(|v| *v *= s);
    }
    p
}

/// One propagation path as seen by a TRP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub length: f64,
    pub amplitude: f64,
}

/// LoS path first, then one valid first-order reflection per room wall.
pub fn propagation_paths(scene: &Scene, trp: Vec3, ue: Vec3, reflection_coeff: f64) -> Vec<Path> {
    let d = trp.distance(ue);
    let mut paths = vec![Path {
        length: d,
        amplitude: 1.0 / d,
    }];
    if reflection_coeff > 0.0 {
        let dz = trp.z - ue.z;
        for (a, b) in scene.room().edges() {
            let image = reflect_across_line(trp.xy(), a, b);
            // the specular point must fall on the wall segment itself
            if !segments_intersect(image, ue.xy(), a, b) {
                continue;
            }
            let planar: Vec2 = image - ue.xy();
            let len = (planar.norm_sq() + dz * dz).sqrt();
            paths.push(Path {
                length: len,
                amplitude: reflection_coeff / len,
            });
        }
    }
    paths
}

/// Synthesizes the `M x C` CIR seen at `ue` by every TRP of the scene.
/// Row `m` draws from its own random stream, so rows are independent of
/// the TRP count.
pub fn synthesize_cir(scene: &Scene, ue: Vec3, params: &ChannelParams, seed: u64) -> CirMatrix {
    let n_taps = params.n_taps;
    let ratio = params.bandwidth_hz / params.sample_rate_hz;
    let mut cir = CirMatrix::zeros(scene.trps().len(), n_taps);
    for (m, &trp) in scene.trps().iter().enumerate() {
        let mut rng = rng::stream(seed, Domain::Channel, m as u64);
        let row = cir.row_mut(m);
        let mut los_peak_power = 0.0;
        for (i, path) in propagation_paths(scene, trp, ue, params.reflection_coeff)
            .iter()
            .enumerate()
        {
            let phase = rng.random_range(0.0..TAU);
            let pulse = unit_pulse(params.delay_in_taps(path.length), ratio, n_taps);
            let coeff = Complex64::from_polar(path.amplitude, phase);
            for (tap, p) in row.iter_mut().zip(&pulse) {
                *tap += coeff * *p;
            }
            if i == 0 {
                los_peak_power = pulse
                    .iter()
                    .map(|p| (p * path.amplitude).powi(2))
                    .fold(0.0, f64::max);
            }
        }
        if let Some(snr_db) = params.snr_db {
            let sigma = (los_peak_power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
            for tap in row.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *tap += Complex64::new(re * sigma, im * sigma);
            }
        }
    }
    cir
}

/// Builds a dataset along `trajectory`: CIR features and ToA per step,
/// optional laser scans, and the ground-truth positions.
pub fn sample_dataset(
    scene: &Scene,
    trajectory: &Trajectory,
    params: &ChannelParams,
    c_bar: usize,
    laser: Option<&LaserConfig>,
    seed: u64,
) -> Result<Dataset> {
    params.validate()?;
    if c_bar == 0 || c_bar > params.n_taps {
        return Err(Error::InvalidArgument(format!(
            "c_bar {c_bar} outside 1..={}",
            params.n_taps
        )));
    }
    let n = trajectory.len();
    let m = scene.trps().len();
    let steps: Vec<_> = (0..n)
        .into_par_iter()
        .map(|step| -> Result<_> {
            let step_seed = derive_seed(seed, step as u64);
            let cir = synthesize_cir(scene, trajectory.positions[step], params, step_seed);
            let feature = truncate_and_abs(&cir, c_bar)?;
            let toa = extract_toa(&feature, params.sample_rate_hz)?;
            let scan =
                laser.map(|cfg| simulate_laser_scan(scene, trajectory.pose(step), cfg, step_seed));
            Ok((feature, toa, scan))
        })
        .collect::<Result<_>>()?;

    let mut features = Vec::with_capacity(n * m * c_bar);
    let mut toa = Vec::with_capacity(n * m);
    let mut laser_data = laser.map(|cfg| Vec::with_capacity(n * cfg.n_beams() * 2));
    for (feature, t, scan) in steps {
        features.extend_from_slice(&feature.values);
        toa.extend(t.0.iter().map(|&v| v as f32));
        if let (Some(buf), Some(scan)) = (laser_data.as_mut(), scan) {
            for (r, phi) in scan.ranges.iter().zip(&scan.angles) {
                buf.push(*r as f32);
                buf.push(*phi as f32);
            }
        }
    }
    let ground_truth = trajectory
        .positions
        .iter()
        .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
        .collect();
    let (lo, hi) = scene.room().bbox();
    let header = DatasetHeader {
        n_steps: n,
        n_trps: m,
        c_bar,
        n_beams: laser.map_or(0, |cfg| cfg.n_beams()),
        sample_rate_hz: params.sample_rate_hz,
        dt: trajectory.dt,
        trp_positions: scene.trps().iter().map(|p| [p.x, p.y, p.z]).collect(),
        ue_height: scene.ue_height(),
        room_bbox: [lo.x, lo.y, hi.x, hi.y],
        seed,
    };
    Dataset::new(header, features, toa, laser_data, Some(ground_truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_rx_power;
    use crate::world::{build_scene, generate_trajectory, Kinematics, SceneConfig};

    fn noiseless_los() -> ChannelParams {
        ChannelParams {
            snr_db: None,
            reflection_coeff: 0.0,
            ..ChannelParams::default()
        }
    }

    fn scene_with_trp(x: f64, y: f64) -> Scene {
        build_scene(&SceneConfig {
            trps: vec![[x, y, 8.0]],
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn argmax(row: &[Complex64]) -> usize {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.norm() > row[best].norm() {
                best = i;
            }
        }
        best
    }

    #[test]
    fn defaults_are_valid() {
        let p = ChannelParams::default();
        p.validate().unwrap();
        assert!((p.tap_length() - 2.4397).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_params() {
        let p = ChannelParams {
            sample_rate_hz: 50e6,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
        let p = ChannelParams {
            reflection_coeff: 1.5,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn los_delay_lands_on_tap_five() {
        // UE directly below-and-beside the TRP such that the 3D distance is 12.2208 m
        let scene = scene_with_trp(10.0, 7.5);
        let horizontal = (12.2208f64.powi(2) - 6.5f64.powi(2)).sqrt();
        let ue = Vec3::new(10.0 + horizontal, 7.5, 1.5);
        let params = noiseless_los();
        let d = scene.trps()[0].distance(ue);
        assert!((d - 12.2208).abs() < 1e-9);
        let delay = params.delay_in_taps(d);
        assert!((delay - 5.009).abs() < 1e-3, "{delay}");
        let cir = synthesize_cir(&scene, ue, &params, 1);
        assert_eq!(argmax(cir.row(0)), 5);
    }

    #[test]
    fn single_path_row_is_scaled_pulse() {
        let scene = scene_with_trp(5.0, 5.0);
        let ue = Vec3::new(12.0, 9.0, 1.5);
        let params = noiseless_los();
        let cir = synthesize_cir(&scene, ue, &params, 3);
        let d = scene.trps()[0].distance(ue);
        let delay = params.delay_in_taps(d);
        let pulse = unit_pulse(
            delay,
            params.bandwidth_hz / params.sample_rate_hz,
            params.n_taps,
        );
        let phase = cir.row(0)[argmax(cir.row(0))].arg();
        for (tap, p) in cir.row(0).iter().zip(&pulse) {
            let expected = Complex64::from_polar(p / d, phase);
            assert!((tap - expected).norm() < 1e-12);
        }
        // one pulse centre: the peak is at the nearest tap to the delay
        assert_eq!(argmax(cir.row(0)), delay.round() as usize);
    }

    #[test]
    fn single_path_energy_matches_direct_sum() {
        let scene = scene_with_trp(3.0, 4.0);
        let params = noiseless_los();
        let ratio = params.bandwidth_hz / params.sample_rate_hz;
        for (i, x) in [4.0, 9.3, 17.7].iter().enumerate() {
            let ue = Vec3::new(*x, 11.0, 1.5);
            let cir = synthesize_cir(&scene, ue, &params, i as u64);
            let energy: f64 = cir.row(0).iter().map(|c| c.norm_sqr()).sum();
            let d = scene.trps()[0].distance(ue);
            // direct windowed-sinc sum, normalised by its own energy
            let delay = d / SPEED_OF_LIGHT * params.sample_rate_hz;
            let mut direct = 0.0;
            let mut norm = 0.0;
            for c in 0..params.n_taps {
                let u = c as f64 - delay;
                if u.abs() < 8.0 {
                    let s = if u == 0.0 {
                        1.0
                    } else {
                        (PI * ratio * u).sin() / (PI * ratio * u)
                    };
                    let w = 0.5 + 0.5 * (PI * u / 8.0).cos();
                    let v = s * w;
                    norm += v * v;
                    direct += (v / d) * (v / d);
                }
            }
            let expected = direct / norm;
            assert!((energy - expected).abs() / expected < 1e-6);
            assert!((energy - 1.0 / (d * d)).abs() * d * d < 1e-6);
        }
    }

    #[test]
    fn closer_ue_gets_more_power() {
        let scene = scene_with_trp(2.0, 1.0);
        let params = noiseless_los();
        let near = synthesize_cir(&scene, Vec3::new(5.0, 4.0, 1.5), &params, 0);
        let far = synthesize_cir(&scene, Vec3::new(15.0, 12.0, 1.5), &params, 0);
        let p_near = compute_rx_power(&near).unwrap()[0];
        let p_far = compute_rx_power(&far).unwrap()[0];
        assert!(p_near > p_far);
    }

    #[test]
    fn reflections_in_rectangle() {
        let scene = scene_with_trp(2.0, 1.0);
        let paths = propagation_paths(&scene, scene.trps()[0], Vec3::new(10.0, 7.0, 1.5), 0.5);
        assert_eq!(paths.len(), 5);
        assert!(paths[1..].iter().all(|p| p.length > paths[0].length));
        // reflection off the wall y = 0: image at (2, -1)
        let expected = ((8.0f64).powi(2) + 8.0f64.powi(2) + 6.5f64.powi(2)).sqrt();
        assert!(paths.iter().any(|p| (p.length - expected).abs() < 1e-12));
    }

    fn bracketing_peak_rate(params: &ChannelParams, steps: usize) -> f64 {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let traj = generate_trajectory(&scene, steps, 11, &Kinematics::default()).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for (n, ue) in traj.positions.iter().enumerate() {
            let cir = synthesize_cir(&scene, *ue, params, n as u64);
            for (m, trp) in scene.trps().iter().enumerate() {
                let delay = params.delay_in_taps(trp.distance(*ue));
                let peak = argmax(cir.row(m)) as f64;
                total += 1;
                if peak == delay.floor() || peak == delay.ceil() {
                    hits += 1;
                }
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn los_peak_dominance() {
        // The strongest tap brackets the LoS delay for nearly every row with
        // weak reflections; near corners several reflections can outweigh
        // the LoS pulse, so the default coefficient only mostly holds.
        let weak = ChannelParams {
            reflection_coeff: 0.3,
            ..ChannelParams::default()
        };
        assert!(bracketing_peak_rate(&weak, 2000) >= 0.995);
        assert!(bracketing_peak_rate(&ChannelParams::default(), 2000) >= 0.95);
    }

    #[test]
    fn dataset_shapes() {
        let mut cfg = SceneConfig::default();
        cfg.trps.truncate(2);
        let scene = build_scene(&cfg).unwrap();
        let traj = generate_trajectory(&scene, 100, 42, &Kinematics::default()).unwrap();
        let laser = LaserConfig::default();
        let ds = sample_dataset(
            &scene,
            &traj,
            &ChannelParams::default(),
            49,
            Some(&laser),
            42,
        )
        .unwrap();
        let h = ds.header();
        assert_eq!((h.n_steps, h.n_trps, h.c_bar, h.n_beams), (100, 2, 49, 600));
        assert_eq!(ds.features().len(), 100 * 2 * 49);
        assert_eq!(ds.toa().len(), 100 * 2);
        assert_eq!(ds.laser().unwrap().len(), 100 * 600 * 2);
        assert_eq!(ds.ground_truth().unwrap().len(), 100 * 3);
    }

    #[test]
    fn dataset_is_deterministic() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let traj = generate_trajectory(&scene, 50, 1, &Kinematics::default()).unwrap();
        let laser = LaserConfig::default();
        let a = sample_dataset(
            &scene,
            &traj,
            &ChannelParams::default(),
            49,
            Some(&laser),
            9,
        )
        .unwrap();
        let b = sample_dataset(
            &scene,
            &traj,
            &ChannelParams::default(),
            49,
            Some(&laser),
            9,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_toa_within_one_tap() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let traj = generate_trajectory(&scene, 300, 4, &Kinematics::default()).unwrap();
        let params = noiseless_los();
        let ds = sample_dataset(&scene, &traj, &params, 49, None, 4).unwrap();
        let bound = params.tap_length();
        for n in 0..ds.len() {
            for (m, trp) in scene.trps().iter().enumerate() {
                let d = trp.distance(traj.positions[n]);
                let range = ds.toa_row(n)[m] as f64 * SPEED_OF_LIGHT;
                assert!(
                    (range - d).abs() <= bound,
                    "step {n} trp {m}: {range} vs {d}"
                );
            }
        }
    }
}
