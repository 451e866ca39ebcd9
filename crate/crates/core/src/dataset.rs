//! Dataset container and its on-disk layout.
//!
//! A dataset directory holds `manifest.json` plus one flat binary file per
//! array. Arrays are little-endian IEEE-754 float32, row-major:
//!
//! | file               | shape         | content                          |
//! |--------------------|---------------|----------------------------------|
//! | `features.f32`     | `N x M x C̄`   | truncated CIR magnitudes         |
//! | `toa.f32`          | `N x M`       | strongest-tap ToA, seconds       |
//! | `laser.f32`        | `N x K x 2`   | `(range m, body angle rad)`      |
//! | `ground_truth.f32` | `N x 3`       | UE position, evaluation only     |
//!
//! `laser.f32` and `ground_truth.f32` are optional and flagged in the
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{CirFeature, ToaVector};
use crate::geometry::Vec3;
use crate::world::LaserScan;
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "chartfuse-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const FEATURES: &str = "features";
const TOA: &str = "toa";
const LASER: &str = "laser";
const GROUND_TRUTH: &str = "ground_truth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub n_steps: usize,
    pub n_trps: usize,
    pub c_bar: usize,
    /// Beams per scan `K`; 0 when the dataset carries no laser data.
    pub n_beams: usize,
    pub sample_rate_hz: f64,
    pub dt: f64,
    pub trp_positions: Vec<[f64; 3]>,
    pub ue_height: f64,
    /// `[x_min, y_min, x_max, y_max]` of the room, meters.
    pub room_bbox: [f64; 4],
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub byte_order: String,
    pub dtype: String,
    #[serde(flatten)]
    pub header: DatasetHeader,
    pub has_ground_truth: bool,
    pub has_laser: bool,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

/// Which arrays a reader may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Every array present on disk.
    Full,
    /// Self-supervised training inputs only; the ground-truth file is
    /// never opened.
    Training,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    features: Vec<f32>,
    toa: Vec<f32>,
    laser: Option<Vec<f32>>,
    ground_truth: Option<Vec<f32>>,
    ground_truth_on_disk: bool,
}

impl Dataset {
    pub fn new(
        header: DatasetHeader,
        features: Vec<f32>,
        toa: Vec<f32>,
        laser: Option<Vec<f32>>,
        ground_truth: Option<Vec<f32>>,
    ) -> Result<Self> {
        let ds = Dataset {
            ground_truth_on_disk: ground_truth.is_some(),
            header,
            features,
            toa,
            laser,
            ground_truth,
        };
        ds.check_shapes()?;
        Ok(ds)
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 4] {
        let h = &self.header;
        [
            (FEATURES, vec![h.n_steps, h.n_trps, h.c_bar]),
            (TOA, vec![h.n_steps, h.n_trps]),
            (LASER, vec![h.n_steps, h.n_beams, 2]),
            (GROUND_TRUTH, vec![h.n_steps, 3]),
        ]
    }

    fn array(&self, name: &str) -> Option<&Vec<f32>> {
        match name {
            FEATURES => Some(&self.features),
            TOA => Some(&self.toa),
            LASER => self.laser.as_ref(),
            GROUND_TRUTH => self.ground_truth.as_ref(),
            _ => None,
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let h = &self.header;
        if h.trp_positions.len() != h.n_trps {
            return Err(Error::Shape(format!(
                "{} TRP positions for n_trps = {}",
                h.trp_positions.len(),
                h.n_trps
            )));
        }
        for (name, shape) in self.shapes() {
            if let Some(a) = self.array(name) {
                let expected: usize = shape.iter().product();
                if a.len() != expected {
                    return Err(Error::DatasetArray {
                        array: name.into(),
                        reason: format!(
                            "holds {} values, shape {shape:?} needs {expected}",
                            a.len()
                        ),
                    });
                }
            }
        }
        if self.laser.is_some() && h.n_beams == 0 {
            return Err(Error::Shape("laser data with zero beams".into()));
        }
        Ok(())
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.header.n_steps == 0
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn toa(&self) -> &[f32] {
        &self.toa
    }

    pub fn laser(&self) -> Option<&[f32]> {
        self.laser.as_deref()
    }

    pub fn ground_truth(&self) -> Option<&[f32]> {
        self.ground_truth.as_deref()
    }

    pub fn has_laser(&self) -> bool {
        self.laser.is_some()
    }

    pub fn feature_len(&self) -> usize {
        self.header.n_trps * self.header.c_bar
    }

    pub fn feature_slice(&self, n: usize) -> &[f32] {
        let w = self.feature_len();
        &self.features[n * w..(n + 1) * w]
    }

    pub fn feature(&self, n: usize) -> CirFeature {
        CirFeature {
            rows: self.header.n_trps,
            cols: self.header.c_bar,
            values: self.feature_slice(n).to_vec(),
        }
    }

    pub fn toa_row(&self, n: usize) -> &[f32] {
        let m = self.header.n_trps;
        &self.toa[n * m..(n + 1) * m]
    }

    pub fn toa_vector(&self, n: usize) -> ToaVector {
        ToaVector(self.toa_row(n).iter().map(|&t| t as f64).collect())
    }

    pub fn trp_positions(&self) -> Vec<Vec3> {
        self.header
            .trp_positions
            .iter()
            .map(|&p| p.into())
            .collect()
    }

    pub fn laser_scan(&self, n: usize) -> Option<LaserScan> {
        let k = self.header.n_beams;
        self.laser.as_ref().map(|l| {
            let rows = &l[n * k * 2..(n + 1) * k * 2];
            LaserScan {
                ranges: rows.iter().step_by(2).map(|&r| r as f64).collect(),
                angles: rows.iter().skip(1).step_by(2).map(|&a| a as f64).collect(),
            }
        })
    }

    pub fn laser_scans(&self) -> Option<Vec<LaserScan>> {
        self.laser.as_ref()?;
        Some(
            (0..self.len())
                .map(|n| self.laser_scan(n).expect("laser present"))
                .collect(),
        )
    }

    pub fn ground_truth_position(&self, n: usize) -> Option<Vec3> {
        self.ground_truth
            .as_ref()
            .map(|g| Vec3::new(g[3 * n] as f64, g[3 * n + 1] as f64, g[3 * n + 2] as f64))
    }

    pub fn ground_truth_positions(&self) -> Option<Vec<Vec3>> {
        self.ground_truth.as_ref()?;
        Some(
            (0..self.len())
                .map(|n| self.ground_truth_position(n).expect("present"))
                .collect(),
        )
    }

    /// Drops ground truth (as a training loader would).
    pub fn without_ground_truth(mut self) -> Self {
        self.ground_truth = None;
        self
    }

    /// Drops laser data.
    pub fn without_laser(mut self) -> Self {
        self.laser = None;
        self.header.n_beams = 0;
        self
    }

    /// Keeps only the listed TRP rows, in the given order.
    pub fn select_trps(&self, trps: &[usize]) -> Result<Dataset> {
        let m = self.header.n_trps;
        if trps.is_empty() || trps.iter().any(|&t| t >= m) {
            return Err(Error::InvalidArgument(format!(
                "TRP selection {trps:?} invalid for {m} TRPs"
            )));
        }
        let c_bar = self.header.c_bar;
        let mut features = Vec::with_capacity(self.len() * trps.len() * c_bar);
        let mut toa = Vec::with_capacity(self.len() * trps.len());
        for n in 0..self.len() {
            let f = self.feature_slice(n);
            let t = self.toa_row(n);
            for &sel in trps {
                features.extend_from_slice(&f[sel * c_bar..(sel + 1) * c_bar]);
                toa.push(t[sel]);
            }
        }
        let mut header = self.header.clone();
        header.n_trps = trps.len();
        header.trp_positions = trps.iter().map(|&t| self.header.trp_positions[t]).collect();
        let mut ds = Dataset::new(
            header,
            features,
            toa,
            self.laser.clone(),
            self.ground_truth.clone(),
        )?;
        ds.ground_truth_on_disk = self.ground_truth_on_disk;
        Ok(ds)
    }

    pub fn manifest(&self) -> Manifest {
        let mut arrays = BTreeMap::new();
        for (name, shape) in self.shapes() {
            if self.array(name).is_some() {
                arrays.insert(
                    name.to_string(),
                    ArrayEntry {
                        file: format!("{name}.f32"),
                        shape,
                    },
                );
            }
        }
        Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            byte_order: "little".into(),
            dtype: "float32".into(),
            header: self.header.clone(),
            has_ground_truth: self.ground_truth.is_some(),
            has_laser: self.laser.is_some(),
            arrays,
        }
    }

    /// True when the dataset on disk carried ground truth, even if the
    /// loader skipped it.
    pub fn ground_truth_available(&self) -> bool {
        self.ground_truth_on_disk
    }
}

pub fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of float32",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dataset.manifest();
    for (name, entry) in &manifest.arrays {
        let values = dataset.array(name).expect("listed arrays exist");
        write_f32_file(&dir.join(&entry.file), values)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Format(format!(
            "unknown dataset format `{}`",
            manifest.format
        )));
    }
    if manifest.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    if manifest.byte_order != "little" || manifest.dtype != "float32" {
        return Err(Error::Format(format!(
            "arrays must be little-endian float32, manifest says {} {}",
            manifest.byte_order, manifest.dtype
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path, mode: LoadMode) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let load = |name: &str, required: bool| -> Result<Option<Vec<f32>>> {
        let Some(entry) = manifest.arrays.get(name) else {
            return if required {
                Err(Error::DatasetArray {
                    array: name.into(),
                    reason: "missing from manifest".into(),
                })
            } else {
                Ok(None)
            };
        };
        let path = dir.join(&entry.file);
        let meta = fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        let expected = entry.shape.iter().product::<usize>() * 4;
        if meta.len() as usize != expected {
            return Err(Error::DatasetArray {
                array: name.into(),
                reason: format!(
                    "file has {} bytes, shape {:?} needs {expected}",
                    meta.len(),
                    entry.shape
                ),
            });
        }
        read_f32_file(&path).map(Some)
    };
    let features = load(FEATURES, true)?.expect("required");
    let toa = load(TOA, true)?.expect("required");
    let laser = if manifest.has_laser {
        load(LASER, true)?
    } else {
        None
    };
    let ground_truth = match mode {
        LoadMode::Full if manifest.has_ground_truth => load(GROUND_TRUTH, true)?,
        _ => None,
    };
    let mut ds = Dataset::new(manifest.header.clone(), features, toa, laser, ground_truth)?;
    // the manifest shapes must agree with the header-derived shapes
    for (name, shape) in ds.shapes() {
        if let (Some(entry), Some(_)) = (manifest.arrays.get(name), ds.array(name)) {
            if entry.shape != shape {
                return Err(Error::DatasetArray {
                    array: name.into(),
                    reason: format!(
                        "manifest shape {:?} disagrees with header shape {shape:?}",
                        entry.shape
                    ),
                });
            }
        }
    }
    ds.ground_truth_on_disk = manifest.has_ground_truth;
    Ok(ds)
}
