//! Bilateration, ToA and laser losses on chart points, with their
//! gradients with respect to the points.

use serde::{Deserialize, Serialize};

use super::model::{ChartModel, Workspace};
use super::scalar::Scalar;
use crate::geometry::Vec3;

/// Added under every square root so coincident points keep finite gradients.
pub const NORM_EPS: f64 = 1e-9;

pub type Point = [f64; 2];

pub fn lift3d(p: Point, ue_height: f64) -> Vec3 {
    Vec3::new(p[0], p[1], ue_height)
}

/// Guarded distance from `lift3d(p)` to `trp` and its gradient in `p`.
fn range_to(p: Point, trp: Vec3, ue_height: f64) -> (f64, Point) {
    let (dx, dy, dz) = (p[0] - trp.x, p[1] - trp.y, ue_height - trp.z);
    let d = (dx * dx + dy * dy + dz * dz + NORM_EPS).sqrt();
    (d, [dx / d, dy / d])
}

fn scale(g: Point, s: f64) -> Point {
    [g[0] * s, g[1] * s]
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

/// `(‖x_m − lift3d(p)‖ − range)²` where `range = τ ν`.
pub fn toa_sample_loss(p: Point, trp: Vec3, range_m: f64, ue_height: f64) -> (f64, Point) {
    let (d, g) = range_to(p, trp, ue_height);
    let r = d - range_m;
    (r * r, scale(g, 2.0 * r))
}

/// `(d_c − d_f + |Δτ| ν)²` with `c` the sample whose measured range is
/// shorter. Gradients are returned in argument order.
pub fn pair_toa_loss(
    pa: Point,
    pb: Point,
    trp: Vec3,
    range_a: f64,
    range_b: f64,
    ue_height: f64,
) -> (f64, Point, Point) {
    let (da, ga) = range_to(pa, trp, ue_height);
    let (db, gb) = range_to(pb, trp, ue_height);
    let gap = (range_a - range_b).abs();
    let r = if range_a <= range_b {
        da - db + gap
    } else {
        db - da + gap
    };
    let sign = if range_a <= range_b { 1.0 } else { -1.0 };
    (r * r, scale(ga, 2.0 * r * sign), scale(gb, -2.0 * r * sign))
}

/// `max(d_c − d_f + margin, 0)` for a pair where `pc` is known to be closer.
pub fn hinge_loss(
    pc: Point,
    pf: Point,
    trp: Vec3,
    margin_m: f64,
    ue_height: f64,
) -> (f64, Point, Point) {
    let (dc, gc) = range_to(pc, trp, ue_height);
    let (df, gf) = range_to(pf, trp, ue_height);
    let v = dc - df + margin_m;
    if v > 0.0 {
        (v, gc, scale(gf, -1.0))
    } else {
        (0.0, [0.0; 2], [0.0; 2])
    }
}

/// `(‖pa − pb‖ − t_hat)²`, planar.
pub fn laser_loss(pa: Point, pb: Point, t_hat: f64) -> (f64, Point, Point) {
    let dv = [pa[0] - pb[0], pa[1] - pb[1]];
    let s = (dv[0] * dv[0] + dv[1] * dv[1] + NORM_EPS).sqrt();
    let r = s - t_hat;
    let g = scale(dv, 2.0 * r / s);
    (r * r, g, scale(g, -1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Per-sample range residuals.
    #[default]
    SplitToa,
    /// Pairwise range-difference residuals.
    PairToa,
    /// Margin ranking on received-power order.
    Hinge,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub variant: LossVariant,
    pub ue_height: f64,
    pub hinge_margin_m: f64,
    /// Power gap (dB) needed before the hinge treats one sample as closer.
    pub hinge_power_margin_db: f64,
}

/// Per-pair measurements, indexed by TRP.
#[derive(Clone, Copy, Debug)]
pub struct PairMeasurements<'a> {
    pub ranges_a: &'a [f64],
    pub ranges_b: &'a [f64],
    /// Received power in dB; read by the hinge variant only.
    pub power_a: &'a [f64],
    pub power_b: &'a [f64],
    /// Laser weight, already gated by window and ICP quality.
    pub lambda: f64,
    pub t_hat: f64,
}

/// `Σ_m radio_m(a, b) + λ · laser(a, b)` and its gradients in `pa`, `pb`.
pub fn total_pair_loss(
    pa: Point,
    pb: Point,
    trps: &[Vec3],
    meas: &PairMeasurements,
    params: &LossParams,
) -> (f64, Point, Point) {
    let h = params.ue_height;
    let (mut loss, mut ga, mut gb) = (0.0, [0.0; 2], [0.0; 2]);
    for (m, &trp) in trps.iter().enumerate() {
        let (l, a, b) = match params.variant {
            LossVariant::SplitToa => {
                let (la, a) = toa_sample_loss(pa, trp, meas.ranges_a[m], h);
                let (lb, b) = toa_sample_loss(pb, trp, meas.ranges_b[m], h);
                (la + lb, a, b)
            }
            LossVariant::PairToa => {
                pair_toa_loss(pa, pb, trp, meas.ranges_a[m], meas.ranges_b[m], h)
            }
            LossVariant::Hinge => {
                let margin = params.hinge_power_margin_db;
                if meas.power_a[m] > meas.power_b[m] + margin {
                    hinge_loss(pa, pb, trp, params.hinge_margin_m, h)
                } else if meas.power_b[m] > meas.power_a[m] + margin {
                    let (l, b, a) = hinge_loss(pb, pa, trp, params.hinge_margin_m, h);
                    (l, a, b)
                } else {
                    (0.0, [0.0; 2], [0.0; 2])
                }
            }
        };
        loss += l;
        ga = add(ga, a);
        gb = add(gb, b);
    }
    if meas.lambda > 0.0 {
        let (l, a, b) = laser_loss(pa, pb, meas.t_hat);
        loss += meas.lambda * l;
        ga = add(ga, scale(a, meas.lambda));
        gb = add(gb, scale(b, meas.lambda));
    }
    (loss, ga, gb)
}

/// Loss of one pair through the model; adds `∂loss/∂θ` into `grad`.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss_and_grad<T: Scalar>(
    model: &ChartModel<T>,
    input_a: &[T],
    input_b: &[T],
    trps: &[Vec3],
    meas: &PairMeasurements,
    params: &LossParams,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    let inputs: Vec<T> = input_a.iter().chain(input_b).copied().collect();
    let out = model.forward_batch(&inputs, 2, ws);
    let pa = [out[0].to_f64(), out[1].to_f64()];
    let pb = [out[2].to_f64(), out[3].to_f64()];
    let (loss, ga, gb) = total_pair_loss(pa, pb, trps, meas, params);
    let d_out = [ga[0], ga[1], gb[0], gb[1]].map(T::from_f64);
    model.backward(ws, &d_out, grad);
    loss
}
