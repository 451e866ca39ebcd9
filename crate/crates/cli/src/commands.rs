use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chartfuse::chart::{read_model, train_with_progress, write_model, LossVariant, TrainConfig};
use chartfuse::dataset::{read_dataset, write_dataset, Dataset, LoadMode};
use chartfuse::features::check_power_distance;
use chartfuse::geometry::Vec3;
use chartfuse::metrics::{continuity, evaluate_positions, trustworthiness, EvalReport};
use chartfuse::pso::{estimate_bias, localize_dataset, tdoa_baseline_dataset, PsoConfig};
use chartfuse::scenario::{simulate_split, ScenarioConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::files::{
    read_bias, read_positions, sidecar, write_bias, write_json, write_positions, write_report_csv,
};
use crate::{
    BaselineArgs, EvaluateArgs, LocalizeArgs, OffsetArgs, PowerArgs, PsoArgs, SimulateArgs,
    TrainArgs, Variant,
};

fn print_config<T: Serialize>(command: &str, cfg: &T) -> Result<()> {
    println!("{command} config:\n{}", serde_json::to_string_pretty(cfg)?);
    Ok(())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn load(dir: &Path, mode: LoadMode, trps: Option<&[usize]>) -> Result<Dataset> {
    let ds =
        read_dataset(dir, mode).with_context(|| format!("loading dataset {}", dir.display()))?;
    match trps {
        Some(t) => Ok(ds.select_trps(t)?),
        None => Ok(ds),
    }
}

fn planar_errors(est: &[Vec3], truth: &[Vec3]) -> Vec<f64> {
    est.iter()
        .zip(truth)
        .map(|(e, t)| (e.xy() - t.xy()).norm())
        .collect()
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train_seed = s;
    }
    if let Some(s) = a.test_seed {
        cfg.test_seed = s;
    }
    if let Some(n) = a.train_steps {
        cfg.train_steps = n;
    }
    if let Some(n) = a.test_steps {
        cfg.test_steps = n;
    }
    if let Some(s) = a.snr_db {
        cfg.channel.snr_db = Some(s);
    }
    if a.noiseless {
        cfg.channel.snr_db = None;
    }
    if let Some(r) = a.reflection_coeff {
        cfg.channel.reflection_coeff = r;
    }
    if a.no_laser {
        cfg.laser = None;
    }
    print_config("simulate", &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (train, test) = simulate_split(&cfg)?;
    write_dataset(&train, &a.out.join("train"))?;
    write_dataset(&test, &a.out.join("test"))?;
    write_json(&a.out.join("simulate.config.json"), &cfg)?;
    eprintln!(
        "wrote {} train and {} test steps to {}",
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

/// Resolved training configuration stored beside the model.
#[derive(Serialize, Deserialize)]
struct TrainSnapshot {
    data: PathBuf,
    trps: Option<Vec<usize>>,
    train: TrainConfig,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(seed => seed, lambda => lambda_value, window => lambda_window, epochs => epochs,
         pairs_per_epoch => pairs_per_epoch, batch_size => batch_size, lr => learning_rate, input_scale => input_scale);
    if let Some(v) = a.variant {
        cfg.loss_variant = match v {
            Variant::SplitToa => LossVariant::SplitToa,
            Variant::PairToa => LossVariant::PairToa,
            Variant::Hinge => LossVariant::Hinge,
        };
    }
    cfg.validate()?;
    let snapshot = TrainSnapshot {
        data: a.data.clone(),
        trps: a.trps.clone(),
        train: cfg.clone(),
    };
    print_config("train", &snapshot)?;
    let dataset = load(&a.data, LoadMode::Training, a.trps.as_deref())?;
    if cfg.lambda_value > 0.0 && !dataset.has_laser() {
        bail!(
            "dataset {} has no laser data but lambda is {}; use --lambda 0",
            a.data.display(),
            cfg.lambda_value
        );
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = train_with_progress(&dataset, &cfg, |s| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  laser pairs {}  quality {:.3}",
            s.epoch, s.mean_loss, s.laser_pairs, s.mean_laser_quality
        )
    })?;
    write_model(&outcome.model, &a.out.join("model.bin"))?;
    let mut log = String::from("epoch,mean_loss,laser_pairs,mean_laser_quality\n");
    for s in &outcome.history {
        log.push_str(&format!(
            "{},{},{},{}\n",
            s.epoch, s.mean_loss, s.laser_pairs, s.mean_laser_quality
        ));
    }
    fs::write(a.out.join("loss.csv"), log)?;
    write_json(&a.out.join("train.config.json"), &snapshot)?;
    eprintln!("model written to {}", a.out.join("model.bin").display());
    Ok(())
}

/// Explicit TRPs, else those recorded in `train.config.json` beside the model.
fn model_trps(explicit: Option<Vec<usize>>, model: &Path) -> Result<Option<Vec<usize>>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    let snap = model.with_file_name("train.config.json");
    if !snap.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&snap).with_context(|| format!("reading {}", snap.display()))?;
    let s: TrainSnapshot =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", snap.display()))?;
    Ok(s.trps)
}

fn pso_config(a: &PsoArgs) -> PsoConfig {
    let d = PsoConfig::default();
    PsoConfig {
        seed: a.seed.unwrap_or(d.seed),
        swarm_size: a.swarm_size.unwrap_or(d.swarm_size),
        iterations: a.iterations.unwrap_or(d.iterations),
        ..d
    }
}

#[derive(Serialize)]
struct OffsetSnapshot<'a> {
    model: &'a Path,
    data: &'a Path,
    trps: &'a Option<Vec<usize>>,
    pso: &'a PsoConfig,
}

pub fn estimate_offset(a: OffsetArgs) -> Result<()> {
    let trps = model_trps(a.trps, &a.model)?;
    let pso = pso_config(&a.pso);
    let snapshot = OffsetSnapshot {
        model: &a.model,
        data: &a.data,
        trps: &trps,
        pso: &pso,
    };
    print_config("estimate-offset", &snapshot)?;
    let model = read_model(&a.model)?;
    let dataset = load(&a.data, LoadMode::Training, trps.as_deref())?;
    let bias = estimate_bias(&model, &dataset, &pso)?;
    write_bias(&a.out, &bias, &snapshot)?;
    println!("bias: [{}, {}, {}]", bias.b.x, bias.b.y, bias.b.z);
    Ok(())
}

#[derive(Serialize)]
struct LocalizeSnapshot<'a> {
    model: &'a Path,
    bias: &'a Path,
    data: &'a Path,
    trps: &'a Option<Vec<usize>>,
}

pub fn localize(a: LocalizeArgs) -> Result<()> {
    let trps = model_trps(a.trps, &a.model)?;
    let snapshot = LocalizeSnapshot {
        model: &a.model,
        bias: &a.bias,
        data: &a.data,
        trps: &trps,
    };
    print_config("localize", &snapshot)?;
    let model = read_model(&a.model)?;
    let bias = read_bias(&a.bias)?;
    let dataset = load(&a.data, LoadMode::Full, trps.as_deref())?;
    let positions = localize_dataset(&model, &dataset, &bias)?;
    let errors = dataset
        .ground_truth_positions()
        .map(|t| planar_errors(&positions, &t));
    write_positions(&a.out, &positions, errors.as_deref())?;
    write_json(&sidecar(&a.out, "config.json"), &snapshot)?;
    eprintln!("wrote {} positions to {}", positions.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CurvePoint {
    k: usize,
    ct: f64,
    tw: f64,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    positions: &'a Path,
    data: &'a Path,
    #[serde(flatten)]
    report: &'a EvalReport,
    k_curve: Vec<CurvePoint>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    print_config(
        "evaluate",
        &serde_json::json!({ "positions": a.positions, "data": a.data, "k": a.k, "k_curve": a.k_curve }),
    )?;
    let estimates = read_positions(&a.positions)?;
    let dataset = load(&a.data, LoadMode::Full, None)?;
    let truth = dataset.ground_truth_positions().with_context(|| {
        format!(
            "dataset {} has no ground truth; evaluate needs it",
            a.data.display()
        )
    })?;
    if estimates.len() != truth.len() {
        bail!(
            "{} positions for a dataset of {} steps",
            estimates.len(),
            truth.len()
        );
    }
    let report = evaluate_positions(&estimates, &truth, a.k)?;
    let gt: Vec<[f64; 2]> = truth.iter().map(|p| [p.x, p.y]).collect();
    let est: Vec<[f64; 2]> = estimates.iter().map(|p| [p.x, p.y]).collect();
    let k_curve = a
        .k_curve
        .iter()
        .map(|&k| {
            Ok(CurvePoint {
                k,
                ct: continuity(&gt, &est, k)?,
                tw: trustworthiness(&gt, &est, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(
        &a.out,
        &ReportFile {
            positions: &a.positions,
            data: &a.data,
            report: &report,
            k_curve,
        },
    )?;
    write_report_csv(&sidecar(&a.out, "csv"), &estimates, &truth, &report)?;
    println!(
        "CE90 {:.3} m  mean {:.3} m  CT {:.4}  TW {:.4}  (k = {})",
        report.ce90, report.mean_err, report.ct, report.tw, report.k_neighbors
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineSnapshot<'a> {
    data: &'a Path,
    trps: &'a Option<Vec<usize>>,
    pso: &'a PsoConfig,
}

pub fn baseline_tdoa(a: BaselineArgs) -> Result<()> {
    let pso = pso_config(&a.pso);
    let snapshot = BaselineSnapshot {
        data: &a.data,
        trps: &a.trps,
        pso: &pso,
    };
    print_config("baseline-tdoa", &snapshot)?;
    let dataset = load(&a.data, LoadMode::Full, a.trps.as_deref())?;
    if dataset.header().n_trps < 3 {
        bail!(
            "TDoA baseline needs at least 3 TRPs, dataset selection has {}",
            dataset.header().n_trps
        );
    }
    let positions = tdoa_baseline_dataset(&dataset, &pso)?;
    let errors = dataset
        .ground_truth_positions()
        .map(|t| planar_errors(&positions, &t));
    write_positions(&a.out, &positions, errors.as_deref())?;
    write_json(&sidecar(&a.out, "config.json"), &snapshot)?;
    eprintln!(
        "wrote {} baseline positions to {}",
        positions.len(),
        a.out.display()
    );
    Ok(())
}

pub fn diagnose_power(a: PowerArgs) -> Result<()> {
    print_config(
        "diagnose-power",
        &serde_json::json!({ "data": a.data, "margin_db": a.margin_db, "triples": a.triples, "seed": a.seed }),
    )?;
    let dataset = load(&a.data, LoadMode::Full, None)?;
    let report = check_power_distance(&dataset, a.margin_db, a.triples, a.seed)?;
    println!(
        "power-distance rate {:.4} ({} of {} triples, margin {} dB)",
        report.rate, report.satisfied, report.triples, report.margin_db
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}
