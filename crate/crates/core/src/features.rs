//! Network inputs and radio measurements derived from the CIR.

use rand::Rng;

use crate::channel::CirMatrix;
use crate::dataset::Dataset;
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Truncated CIR magnitudes `|W[:, :c_bar]|`, row-major `M x c_bar`.
#[derive(Clone, Debug, PartialEq)]
pub struct CirFeature {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl CirFeature {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature",
                values.len()
            )));
        }
        Ok(CirFeature { rows, cols, values })
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }
}

/// Per-TRP time of arrival, seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct ToaVector(pub Vec<f64>);

pub fn truncate_and_abs(cir: &CirMatrix, c_bar: usize) -> Result<CirFeature> {
    if c_bar == 0 || c_bar > cir.n_taps {
        return Err(Error::InvalidArgument(format!(
            "c_bar {c_bar} outside 1..={}",
            cir.n_taps
        )));
    }
    let values = (0..cir.n_trps)
        .flat_map(|m| cir.row(m)[..c_bar].iter().map(|w| w.norm() as f32))
        .collect();
    Ok(CirFeature {
        rows: cir.n_trps,
        cols: c_bar,
        values,
    })
}

/// Index of the largest entry; ties go to the smallest index.
fn peak_index(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Strongest-tap ToA per row, `tau = argmax / fs` with tap 0 at zero delay.
pub fn extract_toa(feature: &CirFeature, sample_rate_hz: f64) -> Result<ToaVector> {
    (0..feature.rows)
        .map(|m| {
            let row = feature.row(m);
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroRow { row: m });
            }
            Ok(peak_index(row) as f64 / sample_rate_hz)
        })
        .collect::<Result<_>>()
        .map(ToaVector)
}

fn power_db(norm_sq: f64, row: usize) -> Result<f64> {
    if norm_sq == 0.0 {
        return Err(Error::ZeroRow { row });
    }
    Ok(10.0 * norm_sq.log10())
}

/// Received power per TRP, `20 log10 ||w_m||`, dB.
pub fn compute_rx_power(cir: &CirMatrix) -> Result<Vec<f64>> {
    (0..cir.n_trps)
        .map(|m| power_db(cir.row(m).iter().map(|w| w.norm_sqr()).sum(), m))
        .collect()
}

/// Same as [`compute_rx_power`] over the truncated magnitudes.
pub fn feature_rx_power(feature: &CirFeature) -> Result<Vec<f64>> {
    (0..feature.rows)
        .map(|m| {
            power_db(
                feature
                    .row(m)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum(),
                m,
            )
        })
        .collect()
}

/// Outcome of the power-distance diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PowerDistanceReport {
    pub margin_db: f64,
    pub triples: usize,
    pub satisfied: usize,
    pub rate: f64,
}

/// Samples `(n_c, n_f, m)` triples with `n_c` strictly closer to TRP `m`
/// than `n_f` and reports how often the closer step also receives more
/// power by at least `margin_db`.
pub fn check_power_distance(
    dataset: &Dataset,
    margin_db: f64,
    n_triples: usize,
    seed: u64,
) -> Result<PowerDistanceReport> {
    let truth = dataset
        .ground_truth()
        .ok_or_else(|| Error::Missing("power-distance diagnostic needs ground truth".into()))?;
    let n = dataset.len();
    let m_count = dataset.header().n_trps;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two steps".into()));
    }
    let powers: Vec<Vec<f64>> = (0..n)
        .map(|i| feature_rx_power(&dataset.feature(i)))
        .collect::<Result<_>>()?;
    let trps = dataset.trp_positions();
    let dist = |i: usize, m: usize| {
        let u = crate::geometry::Vec3::new(
            truth[3 * i] as f64,
            truth[3 * i + 1] as f64,
            truth[3 * i + 2] as f64,
        );
        trps[m].distance(u)
    };

    let mut rng = rng::stream(seed, Domain::Diagnostic, 0);
    let mut triples = 0;
    let mut satisfied = 0;
    let mut attempts = 0usize;
    while triples < n_triples && attempts < n_triples.saturating_mul(100) {
        attempts += 1;
        let m = rng.random_range(0..m_count);
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (da, db) = (dist(a, m), dist(b, m));
        if a == b || da == db {
            continue;
        }
        let (close, far) = if da < db { (a, b) } else { (b, a) };
        triples += 1;
        if powers[close][m] > powers[far][m] + margin_db {
            satisfied += 1;
        }
    }
    if triples == 0 {
        return Err(Error::InvalidArgument(
            "no distinguishable triples found".into(),
        ));
    }
    Ok(PowerDistanceReport {
        margin_db,
        triples,
        satisfied,
        rate: satisfied as f64 / triples as f64,
    })
}
