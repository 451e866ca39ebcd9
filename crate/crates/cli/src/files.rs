//! Bias, positions and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chartfuse::geometry::Vec3;
use chartfuse::metrics::EvalReport;
use chartfuse::pso::BiasVector;
use serde::Serialize;

pub const BIAS_FORMAT: &str = "chartfuse-bias";

#[derive(Serialize)]
struct BiasManifest<'a, C: Serialize> {
    format: &'a str,
    version: u32,
    file: String,
    byte_order: &'a str,
    dtype: &'a str,
    shape: [usize; 1],
    values: [f32; 3],
    config: &'a C,
}

/// Sidecar path `<stem>.<suffix>` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Writes the three bias components as little-endian f32 plus a JSON
/// manifest `<stem>.json` that records the producing configuration.
pub fn write_bias<C: Serialize>(path: &Path, bias: &BiasVector, config: &C) -> Result<()> {
    ensure_parent(path)?;
    let values = [bias.b.x as f32, bias.b.y as f32, bias.b.z as f32];
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let manifest = BiasManifest {
        format: BIAS_FORMAT,
        version: 1,
        file: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        byte_order: "little",
        dtype: "float32",
        shape: [3],
        values,
        config,
    };
    write_json(&sidecar(path, "json"), &manifest)
}

pub fn read_bias(path: &Path) -> Result<BiasVector> {
    let bytes = fs::read(path).with_context(|| format!("reading bias file {}", path.display()))?;
    if bytes.len() != 12 {
        bail!(
            "bias file {} holds {} bytes, expected 12 (3 x f32)",
            path.display(),
            bytes.len()
        );
    }
    let v: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(BiasVector {
        b: Vec3::new(v[0], v[1], v[2]),
    })
}

/// `step,x,y,z,err`; `err` is empty when no ground truth is known.
pub fn write_positions(path: &Path, positions: &[Vec3], errors: Option<&[f64]>) -> Result<()> {
    ensure_parent(path)?;
    let mut out = String::from("step,x,y,z,err\n");
    for (n, p) in positions.iter().enumerate() {
        write!(out, "{n},{},{},{},", p.x, p.y, p.z)?;
        if let Some(e) = errors {
            write!(out, "{}", e[n])?;
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_positions(path: &Path) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("step,x,y,z") => {}
        _ => bail!("{}: missing `step,x,y,z,err` header", path.display()),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| -> Result<f64> {
            let f = fields
                .get(k)
                .with_context(|| format!("{}:{}: too few fields", path.display(), i + 2))?;
            f.trim()
                .parse()
                .with_context(|| format!("{}:{}: bad number {f:?}", path.display(), i + 2))
        };
        if parse(0)? as usize != i {
            bail!(
                "{}:{}: steps must be consecutive from 0",
                path.display(),
                i + 2
            );
        }
        out.push(Vec3::new(parse(1)?, parse(2)?, parse(3)?));
    }
    Ok(out)
}

/// Per-step estimates, ground truth and error for plotting.
pub fn write_report_csv(
    path: &Path,
    estimates: &[Vec3],
    truth: &[Vec3],
    report: &EvalReport,
) -> Result<()> {
    let mut out = String::from("step,x,y,z,gt_x,gt_y,gt_z,err\n");
    for (n, (e, t)) in estimates.iter().zip(truth).enumerate() {
        writeln!(
            out,
            "{n},{},{},{},{},{},{},{}",
            e.x, e.y, e.z, t.x, t.y, t.z, report.per_step_errors[n]
        )?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
