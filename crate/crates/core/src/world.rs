//! Indoor scene, UE trajectories and simulated 2D laser scans.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{ray_segment, wrap_angle, Polygon, Vec2, Vec3};
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Range reported by beams that hit nothing within `max_range`.
pub const NO_RETURN: f64 = -1.0;

/// Scene description as found in the JSON experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Counterclockwise room outline, meters.
    pub room: Vec<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<Vec<[f64; 2]>>,
    /// TRP positions `[x, y, z]`, meters.
    pub trps: Vec<[f64; 3]>,
    pub ue_height: f64,
    pub trp_height: f64,
}

impl Default for SceneConfig {
    /// Bare 20 m x 15 m hall. The first two TRPs serve the chart pipeline,
    /// the third exists for the three-anchor TDoA baseline.
    fn default() -> Self {
        SceneConfig {
            room: vec![[0.0, 0.0], [20.0, 0.0], [20.0, 15.0], [0.0, 15.0]],
            obstacles: Vec::new(),
            trps: vec![[2.0, 1.0, 8.0], [18.0, 1.0, 8.0], [10.0, 14.0, 8.0]],
            ue_height: 1.5,
            trp_height: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    room: Polygon,
    obstacles: Vec<Polygon>,
    trps: Vec<Vec3>,
    ue_height: f64,
    trp_height: f64,
}

/// Validates a scene description. Deterministic.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    let room = Polygon::new(config.room.iter().map(|&p| p.into()).collect());
    if !room.is_simple() {
        return Err(Error::InvalidScene("room polygon is not simple".into()));
    }
    if room.signed_area() <= 0.0 {
        return Err(Error::InvalidScene(
            "room polygon must be counterclockwise".into(),
        ));
    }
    let mut obstacles = Vec::with_capacity(config.obstacles.len());
    for (i, verts) in config.obstacles.iter().enumerate() {
        let poly = Polygon::new(verts.iter().map(|&p| p.into()).collect());
        if !poly.is_simple() {
            return Err(Error::InvalidScene(format!("obstacle {i} is not simple")));
        }
        let strictly_inside = poly
            .vertices()
            .iter()
            .all(|&v| room.contains(v) && room.distance_to_boundary(v) > 1e-9)
            && poly.edges().all(|(a, b)| {
                room.edges()
                    .all(|(c, d)| !crate::geometry::segments_intersect(a, b, c, d))
            });
        if !strictly_inside {
            return Err(Error::InvalidScene(format!(
                "obstacle {i} is not strictly inside the room"
            )));
        }
        obstacles.push(poly);
    }
    if config.ue_height.is_nan() || config.ue_height <= 0.0 {
        return Err(Error::InvalidScene(format!(
            "ue_height must be positive, got {}",
            config.ue_height
        )));
    }
    if config.trp_height.is_nan() || config.trp_height <= 0.0 {
        return Err(Error::InvalidScene(format!(
            "trp_height must be positive, got {}",
            config.trp_height
        )));
    }
    if config.trps.is_empty() {
        return Err(Error::InvalidScene("at least one TRP is required".into()));
    }
    let mut trps = Vec::with_capacity(config.trps.len());
    for (i, &p) in config.trps.iter().enumerate() {
        let p = Vec3::from(p);
        if !p.is_finite() || !room.contains(p.xy()) {
            return Err(Error::InvalidScene(format!(
                "TRP {i} at ({}, {}) is outside the room",
                p.x, p.y
            )));
        }
        if (p.z - config.trp_height).abs() > 1e-9 {
            return Err(Error::InvalidScene(format!(
                "TRP {i} height {} differs from trp_height {}",
                p.z, config.trp_height
            )));
        }
        trps.push(p);
    }
    Ok(Scene {
        room,
        obstacles,
        trps,
        ue_height: config.ue_height,
        trp_height: config.trp_height,
    })
}

impl Scene {
    pub fn room(&self) -> &Polygon {
        &self.room
    }

    pub fn obstacles(&self) -> &[Polygon] {
        &self.obstacles
    }

    pub fn trps(&self) -> &[Vec3] {
        &self.trps
    }

    pub fn ue_height(&self) -> f64 {
        self.ue_height
    }

    pub fn trp_height(&self) -> f64 {
        self.trp_height
    }

    /// Inside the room and outside every obstacle.
    pub fn is_free(&self, p: Vec2) -> bool {
        self.room.contains(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Distance to the nearest wall or obstacle edge, or `-1` outside free space.
    pub fn clearance(&self, p: Vec2) -> f64 {
        if !self.is_free(p) {
            return -1.0;
        }
        self.obstacles
            .iter()
            .map(|o| o.distance_to_boundary(p))
            .fold(self.room.distance_to_boundary(p), f64::min)
    }

    /// Every wall and obstacle edge.
    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.room
            .edges()
            .chain(self.obstacles.iter().flat_map(|o| o.edges()))
    }

    /// Distance from `origin` along unit `dir` to the nearest surface.
    pub fn cast_ray(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        self.segments()
            .filter_map(|(a, b)| ray_segment(origin, dir, a, b))
            .min_by(f64::total_cmp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kinematics {
    /// Cruise speed, also the hard planar speed limit (m/s).
    pub v_max: f64,
    /// Turn-rate limit (rad/s).
    pub omega_max: f64,
    /// Step period (s).
    pub dt: f64,
    /// Ornstein-Uhlenbeck mean-reversion rate of the turn rate (1/s).
    pub turn_reversion: f64,
    /// Ornstein-Uhlenbeck diffusion of the turn rate (rad/s per sqrt(s)).
    pub turn_noise: f64,
    /// Preferred distance to walls (m).
    pub clearance: f64,
    /// Proportional gain steering the heading toward the current waypoint (1/s).
    pub waypoint_gain: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            v_max: 2.5,
            omega_max: 2.0,
            dt: 0.020,
            turn_reversion: 1.0,
            turn_noise: 0.5,
            clearance: 0.6,
            waypoint_gain: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec3>,
    pub headings: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pose(&self, n: usize) -> Pose {
        Pose {
            position: self.positions[n].xy(),
            heading: self.headings[n],
        }
    }
}

/// Planar pose of the UE body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

const START_RETRIES: usize = 10_000;

/// Constant-speed random walk whose turn rate follows an Ornstein-Uhlenbeck
/// process around a weak pull toward random waypoints (so long runs cover
/// the whole room). Headings that run into a wall within the look-ahead
/// distance are replaced by a hard turn toward the freer side.
pub fn generate_trajectory(
    scene: &Scene,
    n_steps: usize,
    seed: u64,
    kin: &Kinematics,
) -> Result<Trajectory> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_steps must be >= 2, got {n_steps}"
        )));
    }
    if !(kin.v_max > 0.0 && kin.dt > 0.0 && kin.omega_max > 0.0) {
        return Err(Error::InvalidArgument(
            "kinematic limits must be positive".into(),
        ));
    }
    let mut rng = rng::stream(seed, Domain::Trajectory, 0);
    let (lo, hi) = scene.room().bbox();

    let sample_free = |rng: &mut rand_chacha::ChaCha8Rng| {
        (0..START_RETRIES).find_map(|_| {
            let p = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            (scene.clearance(p) >= kin.clearance).then_some(p)
        })
    };
    let mut pos = sample_free(&mut rng).ok_or_else(|| {
        Error::Trajectory(format!(
            "no start pose with clearance {} m after {START_RETRIES} draws",
            kin.clearance
        ))
    })?;
    let mut waypoint = sample_free(&mut rng).unwrap_or(pos);
    let mut heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut omega = 0.0_f64;

    let step = kin.v_max * kin.dt;
    let max_turn = kin.omega_max * kin.dt;
    let lookahead = kin.clearance + 3.0 * kin.v_max / kin.omega_max;
    let probe = |p: Vec2, h: f64| {
        scene
            .clearance(p + Vec2::from_angle(h) * lookahead)
            .min(scene.clearance(p))
    };

    let mut positions = Vec::with_capacity(n_steps);
    let mut headings = Vec::with_capacity(n_steps);
    positions.push(pos.with_z(scene.ue_height()));
    headings.push(heading);

    for _ in 1..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        omega += -kin.turn_reversion * omega * kin.dt + kin.turn_noise * kin.dt.sqrt() * z;
        omega = omega.clamp(-kin.omega_max, kin.omega_max);
        if (waypoint - pos).norm() < 1.0 {
            waypoint = sample_free(&mut rng).unwrap_or(pos);
        }
        let to_waypoint = waypoint - pos;
        let bearing_error = wrap_angle(to_waypoint.y.atan2(to_waypoint.x) - heading);
        let command =
            (omega + kin.waypoint_gain * bearing_error).clamp(-kin.omega_max, kin.omega_max);

        let mut turn = command * kin.dt;
        if probe(pos, heading + turn) < kin.clearance {
            let left = probe(pos, heading + max_turn);
            let right = probe(pos, heading - max_turn);
            omega = if left >= right {
                kin.omega_max
            } else {
                -kin.omega_max
            };
            turn = omega * kin.dt;
        }

        let mut next_heading = heading + turn;
        let mut next = pos + Vec2::from_angle(next_heading) * step;
        if scene.clearance(next) <= 0.0 {
            let alternatives = [heading + max_turn, heading - max_turn];
            match alternatives
                .iter()
                .map(|&h| (h, pos + Vec2::from_angle(h) * step))
                .find(|&(_, p)| scene.clearance(p) > 0.0)
            {
                Some((h, p)) => {
                    next_heading = h;
                    next = p;
                }
                None => {
                    // boxed in: rotate on the spot
                    next_heading = heading + max_turn;
                    next = pos;
                }
            }
        }
        heading = wrap_angle(next_heading);
        pos = next;
        positions.push(pos.with_z(scene.ue_height()));
        headings.push(heading);
    }
    Ok(Trajectory {
        positions,
        headings,
        dt: kin.dt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserConfig {
    /// Angular resolution, degrees.
    pub resolution_deg: f64,
    /// Ranging noise standard deviation, meters.
    pub noise_sigma: f64,
    pub max_range: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        LaserConfig {
            resolution_deg: 0.6,
            noise_sigma: 0.05,
            max_range: 30.0,
        }
    }
}

impl LaserConfig {
    pub fn n_beams(&self) -> usize {
        (360.0 / self.resolution_deg - 1e-9).ceil() as usize
    }

    /// Body-frame beam angles `k * resolution`, radians.
    pub fn beam_angles(&self) -> Vec<f64> {
        let step = self.resolution_deg.to_radians();
        (0..self.n_beams()).map(|k| k as f64 * step).collect()
    }
}

/// One sweep of `(range, body-frame angle)` pairs; `range == NO_RETURN`
/// marks beams without a return.
#[derive(Clone, Debug, PartialEq)]
pub struct LaserScan {
    pub ranges: Vec<f64>,
    pub angles: Vec<f64>,
}

impl LaserScan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Ray-casts every beam against walls and obstacles and adds Gaussian
/// ranging noise. Noisy ranges are clamped into `(0, max_range]`.
pub fn simulate_laser_scan(scene: &Scene, pose: Pose, cfg: &LaserConfig, seed: u64) -> LaserScan {
    let angles = cfg.beam_angles();
    let mut rng = rng::stream(seed, Domain::Laser, 0);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let ranges = angles
        .iter()
        .map(|&phi| {
            let dir = Vec2::from_angle(pose.heading + phi);
            match scene.cast_ray(pose.position, dir) {
                Some(r) if r <= cfg.max_range => {
                    let r = if cfg.noise_sigma > 0.0 {
                        r + noise.sample(&mut rng)
                    } else {
                        r
                    };
                    r.clamp(1e-3, cfg.max_range)
                }
                _ => NO_RETURN,
            }
        })
        .collect();
    LaserScan { ranges, angles }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_scene(side: f64) -> Scene {
        build_scene(&SceneConfig {
            room: vec![[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]],
            obstacles: vec![],
            trps: vec![[side / 2.0, side / 2.0, 8.0]],
            ue_height: 1.5,
            trp_height: 8.0,
        })
        .unwrap()
    }

    #[test]
    fn default_scene_is_valid() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        assert_eq!(scene.trps().len(), 3);
        assert_eq!(scene.trp_height(), 8.0);
        assert_eq!(scene.ue_height(), 1.5);
    }

    #[test]
    fn two_trp_hall() {
        let mut cfg = SceneConfig::default();
        cfg.trps.truncate(2);
        assert_eq!(build_scene(&cfg).unwrap().trps().len(), 2);
    }

    #[test]
    fn unit_square_single_trp() {
        let cfg = SceneConfig {
            room: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            obstacles: vec![],
            trps: vec![[0.5, 0.5, 8.0]],
            ue_height: 1.5,
            trp_height: 8.0,
        };
        assert_eq!(build_scene(&cfg).unwrap().trps().len(), 1);
    }

    #[test]
    fn rejects_invalid_scenes() {
        let mut cfg = SceneConfig::default();
        cfg.trps.push([100.0, 100.0, 8.0]);
        assert!(matches!(build_scene(&cfg), Err(Error::InvalidScene(_))));

        let cfg = SceneConfig {
            room: vec![[0.0, 0.0], [20.0, 15.0], [20.0, 0.0], [0.0, 15.0]],
            ..SceneConfig::default()
        };
        assert!(build_scene(&cfg).is_err());

        let mut cfg = SceneConfig::default();
        cfg.room.reverse();
        assert!(build_scene(&cfg).is_err());

        let cfg = SceneConfig {
            ue_height: 0.0,
            ..SceneConfig::default()
        };
        assert!(build_scene(&cfg).is_err());

        let mut cfg = SceneConfig::default();
        cfg.trps.clear();
        assert!(build_scene(&cfg).is_err());

        let cfg = SceneConfig {
            obstacles: vec![vec![[19.0, 5.0], [21.0, 5.0], [21.0, 6.0], [19.0, 6.0]]],
            ..SceneConfig::default()
        };
        assert!(build_scene(&cfg).is_err());
    }

    #[test]
    fn trajectory_is_deterministic() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let kin = Kinematics::default();
        let a = generate_trajectory(&scene, 500, 42, &kin).unwrap();
        let b = generate_trajectory(&scene, 500, 42, &kin).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&scene, 500, 43, &kin).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trajectory_respects_kinematics() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let kin = Kinematics {
            v_max: 1.0,
            dt: 0.02,
            ..Kinematics::default()
        };
        let t = generate_trajectory(&scene, 3000, 5, &kin).unwrap();
        for n in 1..t.len() {
            let step = (t.positions[n].xy() - t.positions[n - 1].xy()).norm();
            assert!(step <= 0.02 + 1e-12, "step {n}: {step}");
            let turn = wrap_angle(t.headings[n] - t.headings[n - 1]).abs();
            assert!(turn <= kin.omega_max * kin.dt + 1e-12);
            assert_eq!(t.positions[n].z, 1.5);
        }
    }

    #[test]
    fn long_trajectory_stays_inside() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let t = generate_trajectory(&scene, 5000, 42, &Kinematics::default()).unwrap();
        assert!(t.positions.iter().all(|p| scene.room().contains(p.xy())));
    }

    #[test]
    fn trajectory_avoids_obstacles() {
        let cfg = SceneConfig {
            obstacles: vec![vec![[8.0, 6.0], [12.0, 6.0], [12.0, 9.0], [8.0, 9.0]]],
            ..SceneConfig::default()
        };
        let scene = build_scene(&cfg).unwrap();
        let t = generate_trajectory(&scene, 5000, 3, &Kinematics::default()).unwrap();
        assert!(t.positions.iter().all(|p| scene.is_free(p.xy())));
    }

    #[test]
    fn rejects_short_and_impossible_trajectories() {
        let scene = square_scene(1.0);
        assert!(generate_trajectory(&scene, 1, 0, &Kinematics::default()).is_err());
        let kin = Kinematics {
            clearance: 5.0,
            ..Kinematics::default()
        };
        assert!(matches!(
            generate_trajectory(&scene, 10, 0, &kin),
            Err(Error::Trajectory(_))
        ));
    }

    #[test]
    fn beam_count() {
        assert_eq!(LaserConfig::default().n_beams(), 600);
        let cfg = LaserConfig {
            resolution_deg: 0.7,
            ..LaserConfig::default()
        };
        assert_eq!(cfg.n_beams(), 515);
    }

    #[test]
    fn noiseless_scan_geometry() {
        let scene = square_scene(10.0);
        let cfg = LaserConfig {
            noise_sigma: 0.0,
            ..LaserConfig::default()
        };
        let pose = Pose {
            position: Vec2::new(5.0, 5.0),
            heading: 0.0,
        };
        let scan = simulate_laser_scan(&scene, pose, &cfg, 0);
        assert_eq!(scan.len(), 600);
        assert!((scan.ranges[0] - 5.0).abs() < 1e-12);
        // beams 0 and 300 are opposite (300 * 0.6 deg = 180 deg)
        assert!((scan.ranges[0] + scan.ranges[300] - 10.0).abs() < 1e-12);
        assert!((scan.ranges[150] + scan.ranges[450] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_scan_matches_brute_force() {
        let cfg = SceneConfig {
            obstacles: vec![vec![[8.0, 6.0], [12.0, 6.0], [12.0, 9.0], [8.0, 9.0]]],
            ..SceneConfig::default()
        };
        let scene = build_scene(&cfg).unwrap();
        let laser = LaserConfig {
            noise_sigma: 0.0,
            ..LaserConfig::default()
        };
        let pose = Pose {
            position: Vec2::new(3.0, 4.0),
            heading: 0.7,
        };
        let scan = simulate_laser_scan(&scene, pose, &laser, 1);
        let walls: Vec<(Vec2, Vec2)> = scene.segments().collect();
        for (r, phi) in scan.ranges.iter().zip(&scan.angles) {
            let d = Vec2::from_angle(0.7 + phi);
            // parametric intersection, solved independently via Cramer's rule
            let mut best = f64::INFINITY;
            for &(a, b) in &walls {
                let (ex, ey) = (b.x - a.x, b.y - a.y);
                let det = -d.x * ey + d.y * ex;
                if det.abs() < 1e-14 {
                    continue;
                }
                let (wx, wy) = (a.x - pose.position.x, a.y - pose.position.y);
                let t = (-wx * ey + wy * ex) / det;
                let s = (d.x * wy - d.y * wx) / det;
                if t > 0.0 && (0.0..=1.0).contains(&s) {
                    best = best.min(t);
                }
            }
            assert!((r - best).abs() < 1e-9, "{r} vs {best}");
        }
    }

    #[test]
    fn no_return_beyond_max_range() {
        let scene = square_scene(10.0);
        let cfg = LaserConfig {
            noise_sigma: 0.0,
            max_range: 4.0,
            ..LaserConfig::default()
        };
        let pose = Pose {
            position: Vec2::new(5.0, 5.0),
            heading: 0.0,
        };
        let scan = simulate_laser_scan(&scene, pose, &cfg, 0);
        assert!(scan.ranges.iter().all(|&r| r == NO_RETURN));
    }

    #[test]
    fn ranging_noise_statistics() {
        // 10^4 beams against the flat wall x = 10 from (5, 5): only
        // beams within +-30 deg of the axis are counted.
        let scene = square_scene(10.0);
        let cfg = LaserConfig::default();
        let mut residuals = Vec::new();
        let mut seed = 0;
        while residuals.len() < 10_000 {
            let pose = Pose {
                position: Vec2::new(5.0, 5.0),
                heading: 0.0,
            };
            let scan = simulate_laser_scan(&scene, pose, &cfg, seed);
            for (r, phi) in scan.ranges.iter().zip(&scan.angles) {
                let a = wrap_angle(*phi);
                if a.abs() < 30f64.to_radians() && residuals.len() < 10_000 {
                    residuals.push(r - 5.0 / a.cos());
                }
            }
            seed += 1;
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.05).abs() <= 0.005, "std {std}");
        assert!(mean.abs() < 0.005);
    }
}
