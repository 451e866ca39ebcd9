//! 2D ICP scan matching and laser displacement estimation.
//!
//! Registration follows the Besl-McKay scheme: each source point is paired
//! with its closest point on the target shape, then the rigid transform that
//! best aligns the pairs is solved in closed form. The target shape is the
//! scan polyline (consecutive beams joined when their gap is short), which
//! removes the sampling bias point-only matching suffers on long walls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{closest_point_on_segment, wrap_angle, Vec2};
use crate::world::LaserScan;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2D {
    /// Radians, wrapped to (−π, π].
    pub rotation: f64,
    pub translation: Vec2,
}

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D = RigidTransform2D {
        rotation: 0.0,
        translation: Vec2::ZERO,
    };

    pub fn new(rotation: f64, translation: Vec2) -> Self {
        RigidTransform2D {
            rotation: wrap_angle(rotation),
            translation,
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        RigidTransform2D::new(
            self.rotation + other.rotation,
            self.apply(other.translation),
        )
    }

    pub fn inverse(&self) -> RigidTransform2D {
        RigidTransform2D::new(-self.rotation, (-self.translation).rotate(-self.rotation))
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Translation increment below which the iteration stops (m).
    pub tol_translation: f64,
    /// Rotation increment below which the iteration stops (rad).
    pub tol_rotation: f64,
    /// Final correspondence rejection distance (m).
    pub reject_dist: f64,
    /// Rejection distance of the first iteration; shrinks geometrically to
    /// `reject_dist`.
    pub coarse_reject_dist: f64,
    /// Longest gap between consecutive target points still joined by a
    /// segment (m); 0 disables segments (pure point-to-point pairing).
    pub max_link: f64,
    /// Minimum matched fraction for a direct registration to be trusted.
    pub match_gate: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iter: 50,
            tol_translation: 1e-4,
            tol_rotation: 1e-4,
            reject_dist: 0.5,
            coarse_reject_dist: 2.0,
            max_link: 1.0,
            match_gate: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points into the target frame.
    pub transform: RigidTransform2D,
    pub rms_residual: f64,
    pub matched_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Cartesian body-frame points of every beam with a return.
pub fn scan_to_points(scan: &LaserScan) -> Vec<Vec2> {
    scan.ranges
        .iter()
        .zip(&scan.angles)
        .filter(|(r, _)| **r > 0.0)
        .map(|(&r, &phi)| Vec2::from_angle(phi) * r)
        .collect()
}

/// Static 2D kd-tree over a point set (implicit, median-split layout).
#[derive(Clone, Debug)]
pub struct KdTree {
    nodes: Vec<(Vec2, usize)>,
}

impl KdTree {
    pub fn new(points: &[Vec2]) -> Self {
        let mut nodes: Vec<(Vec2, usize)> = points.iter().copied().zip(0..).collect();
        Self::build(&mut nodes, 0);
        KdTree { nodes }
    }

    fn key(p: Vec2, axis: usize) -> f64 {
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    }

    fn build(nodes: &mut [(Vec2, usize)], depth: usize) {
        if nodes.len() <= 1 {
            return;
        }
        let axis = depth % 2;
        let mid = nodes.len() / 2;
        nodes.select_nth_unstable_by(mid, |a, b| {
            Self::key(a.0, axis).total_cmp(&Self::key(b.0, axis))
        });
        let (left, right) = nodes.split_at_mut(mid);
        Self::build(left, depth + 1);
        Self::build(&mut right[1..], depth + 1);
    }

    /// Index (into the original point list) and squared distance of the
    /// nearest point.
    pub fn nearest(&self, q: Vec2) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.nodes.len(), 0, q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, q: Vec2, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let (p, idx) = self.nodes[mid];
        let d = (p - q).norm_sq();
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = depth % 2;
        let diff = Self::key(q, axis) - Self::key(p, axis);
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, depth + 1, q, best);
        if diff * diff <= best.1 {
            self.search(far.0, far.1, depth + 1, q, best);
        }
    }
}

/// Registration target: points, their kd-tree and the polyline links.
#[derive(Clone, Debug)]
pub struct ScanTarget {
    points: Vec<Vec2>,
    tree: KdTree,
    /// `linked[i]`: points `i` and `i + 1` (cyclic) form a segment.
    linked: Vec<bool>,
}

impl ScanTarget {
    pub fn new(points: Vec<Vec2>, max_link: f64) -> Self {
        let n = points.len();
        let linked = (0..n)
            .map(|i| {
                n > 1 && max_link > 0.0 && (points[(i + 1) % n] - points[i]).norm() <= max_link
            })
            .collect();
        ScanTarget {
            tree: KdTree::new(&points),
            points,
            linked,
        }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Closest point on the target shape to `q`.
    fn closest(&self, q: Vec2) -> Option<Vec2> {
        let (j, _) = self.tree.nearest(q)?;
        let n = self.points.len();
        let mut best = self.points[j];
        let mut best_d = (best - q).norm_sq();
        let prev = (j + n - 1) % n;
        for (a, b, ok) in [
            (prev, j, self.linked[prev]),
            (j, (j + 1) % n, self.linked[j]),
        ] {
            if ok {
                let c = closest_point_on_segment(q, self.points[a], self.points[b]);
                let d = (c - q).norm_sq();
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
        }
        Some(best)
    }
}

/// Closed-form least-squares rigid transform mapping `src[i]` onto `dst[i]`.
/// `None` when the cross-covariance is rank deficient.
pub fn fit_rigid(src: &[Vec2], dst: &[Vec2]) -> Option<RigidTransform2D> {
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / n);
    let cd = dst.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / n);
    let (mut sin_sum, mut cos_sum, mut spread) = (0.0, 0.0, 0.0);
    for (&p, &q) in src.iter().zip(dst) {
        let (p, q) = (p - cs, q - cd);
        cos_sum += p.dot(q);
        sin_sum += p.cross(q);
        spread += p.norm_sq();
    }
    if spread <= 1e-12 * n || cos_sum.hypot(sin_sum) <= 1e-12 * spread.max(1.0) {
        return None;
    }
    let rotation = sin_sum.atan2(cos_sum);
    let translation = cd - cs.rotate(rotation);
    Some(RigidTransform2D::new(rotation, translation))
}

pub fn icp_register(
    source: &[Vec2],
    target: &[Vec2],
    init: RigidTransform2D,
    cfg: &IcpConfig,
) -> IcpResult {
    icp_register_to(
        source,
        &ScanTarget::new(target.to_vec(), cfg.max_link),
        init,
        cfg,
    )
}

/// [`icp_register`] against a prepared target.
pub fn icp_register_to(
    source: &[Vec2],
    target: &ScanTarget,
    init: RigidTransform2D,
    cfg: &IcpConfig,
) -> IcpResult {
    let mut transform = init;
    let failed = |transform, iterations| IcpResult {
        transform,
        rms_residual: f64::INFINITY,
        matched_fraction: 0.0,
        iterations,
        converged: false,
    };
    if source.len() < 3 || target.points().len() < 3 {
        return failed(transform, 0);
    }
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    let mut gate = cfg.coarse_reject_dist.max(cfg.reject_dist);
    for iter in 1..=cfg.max_iter {
        src.clear();
        dst.clear();
        for &p in source {
            let moved = transform.apply(p);
            if let Some(c) = target.closest(moved) {
                if (c - moved).norm_sq() <= gate * gate {
                    src.push(moved);
                    dst.push(c);
                }
            }
        }
        let Some(step) = fit_rigid(&src, &dst) else {
            return failed(transform, iter);
        };
        transform = step.compose(&transform);
        let settled = gate <= cfg.reject_dist;
        if settled
            && step.translation.norm() < cfg.tol_translation
            && step.rotation.abs() < cfg.tol_rotation
        {
            return finish(source, target, transform, cfg, iter, true);
        }
        gate = (gate * 0.7).max(cfg.reject_dist);
    }
    finish(source, target, transform, cfg, cfg.max_iter, false)
}

fn finish(
    source: &[Vec2],
    target: &ScanTarget,
    transform: RigidTransform2D,
    cfg: &IcpConfig,
    iterations: usize,
    converged: bool,
) -> IcpResult {
    let mut matched = 0usize;
    let mut sq = 0.0;
    for &p in source {
        let moved = transform.apply(p);
        if let Some(c) = target.closest(moved) {
            let d = (c - moved).norm_sq();
            if d <= cfg.reject_dist * cfg.reject_dist {
                matched += 1;
                sq += d;
            }
        }
    }
    let rms_residual = if matched > 0 {
        (sq / matched as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let matched_fraction = matched as f64 / source.len() as f64;
    IcpResult {
        transform,
        rms_residual,
        matched_fraction,
        iterations,
        converged: converged && matched >= 3,
    }
}

/// Displacement magnitude between two steps and how much to trust it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Displacement {
    pub distance: f64,
    /// In `[0, 1]`; 0 means unusable.
    pub quality: f64,
}

/// Consecutive-scan odometry over a scan sequence, used to seed direct
/// registrations between arbitrary steps.
#[derive(Clone, Debug)]
pub struct ScanOdometry {
    points: Vec<Vec<Vec2>>,
    targets: Vec<ScanTarget>,
    /// `links[n]` registers scan `n + 1` into the frame of scan `n`.
    links: Vec<IcpResult>,
    cfg: IcpConfig,
}

impl ScanOdometry {
    pub fn new(scans: &[LaserScan], cfg: IcpConfig) -> Self {
        let points: Vec<Vec<Vec2>> = scans.par_iter().map(scan_to_points).collect();
        let targets: Vec<ScanTarget> = points
            .par_iter()
            .map(|p| ScanTarget::new(p.clone(), cfg.max_link))
            .collect();
        let links = (0..points.len().saturating_sub(1))
            .into_par_iter()
            .map(|n| {
                icp_register_to(
                    &points[n + 1],
                    &targets[n],
                    RigidTransform2D::IDENTITY,
                    &cfg,
                )
            })
            .collect();
        ScanOdometry {
            points,
            targets,
            links,
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn links(&self) -> &[IcpResult] {
        &self.links
    }

    /// Chained link transforms mapping scan `to` into the frame of scan
    /// `from` (`from < to`), with the weakest link's matched fraction, or 0
    /// if any link failed to converge.
    pub fn composed(&self, from: usize, to: usize) -> (RigidTransform2D, f64) {
        let mut t = RigidTransform2D::IDENTITY;
        let mut quality: f64 = 1.0;
        for link in &self.links[from..to] {
            t = t.compose(&link.transform);
            quality = if link.converged {
                quality.min(link.matched_fraction)
            } else {
                0.0
            };
        }
        (t, quality)
    }

    /// Odometry-seeded direct registration between steps `a` and `b`,
    /// falling back to the composed odometry at half its quality when the
    /// direct result fails the gate.
    pub fn displacement(&self, a: usize, b: usize) -> Displacement {
        let (from, to) = if a <= b { (a, b) } else { (b, a) };
        if from == to {
            return Displacement {
                distance: 0.0,
                quality: 1.0,
            };
        }
        let (guess, odo_quality) = self.composed(from, to);
        if odo_quality == 0.0 {
            return Displacement {
                distance: guess.translation_norm(),
                quality: 0.0,
            };
        }
        let direct = icp_register_to(&self.points[to], &self.targets[from], guess, &self.cfg);
        if direct.converged && direct.matched_fraction >= self.cfg.match_gate {
            Displacement {
                distance: direct.transform.translation_norm(),
                quality: direct.matched_fraction,
            }
        } else {
            Displacement {
                distance: guess.translation_norm(),
                quality: 0.5 * odo_quality.min(self.cfg.match_gate),
            }
        }
    }
}

/// Laser displacement between steps `n` and `n2` of a scan sequence.
pub fn estimate_displacement(
    scans: &[LaserScan],
    n: usize,
    n2: usize,
    cfg: &IcpConfig,
) -> Result<Displacement> {
    if n >= scans.len() || n2 >= scans.len() {
        return Err(Error::InvalidArgument(format!(
            "steps {n}, {n2} out of range for {} scans",
            scans.len()
        )));
    }
    let (from, to) = if n <= n2 { (n, n2) } else { (n2, n) };
    if from == to {
        return Ok(Displacement {
            distance: 0.0,
            quality: 1.0,
        });
    }
    Ok(ScanOdometry::new(&scans[from..=to], *cfg).displacement(0, to - from))
}
