use chartfuse::chart::{train, TrainConfig};
use chartfuse::features::check_power_distance;
use chartfuse::scenario::{simulate, ScenarioConfig};

fn los_only(snr_db: Option<f64>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.channel.reflection_coeff = 0.0;
    cfg.channel.snr_db = snr_db;
    cfg.laser = None;
    cfg
}

#[test]
fn closer_means_louder_without_multipath_or_noise() {
    let data = simulate(&los_only(None), 400, 3).unwrap();
    let r = check_power_distance(&data, 0.0, 5000, 1).unwrap();
    assert_eq!(r.triples, 5000);
    assert_eq!(r.rate, 1.0);
}

#[test]
fn closer_means_louder_at_25_db() {
    let data = simulate(&los_only(Some(25.0)), 2000, 3).unwrap();
    let r = check_power_distance(&data, 0.0, 10_000, 1).unwrap();
    assert!(r.rate >= 0.9, "rate {}", r.rate);
}

#[test]
fn infinite_margin_is_never_met() {
    let data = simulate(&los_only(None), 100, 3).unwrap();
    assert_eq!(
        check_power_distance(&data, f64::INFINITY, 500, 1)
            .unwrap()
            .satisfied,
        0
    );
}

#[test]
fn power_check_needs_ground_truth() {
    let data = simulate(&los_only(None), 50, 3)
        .unwrap()
        .without_ground_truth();
    assert!(check_power_distance(&data, 0.0, 10, 1).is_err());
}

fn tiny_run() -> (chartfuse::dataset::Dataset, TrainConfig) {
    let cfg = ScenarioConfig::default();
    let data = simulate(&cfg, 50, 11).unwrap().without_ground_truth();
    let tc = TrainConfig {
        epochs: 5,
        pairs_per_epoch: 640,
        lambda_window: 20,
        seed: 4,
        ..TrainConfig::default()
    };
    (data, tc)
}

#[test]
fn training_reduces_the_loss() {
    let (data, tc) = tiny_run();
    let out = train(&data, &tc).unwrap();
    assert_eq!(out.history.len(), 5);
    let first = out.history[0].mean_loss;
    let last = out.history[4].mean_loss;
    assert!(last < first, "loss {first} -> {last}");
    assert!(out.history.iter().all(|e| e.laser_pairs > 0));
    assert!(out.model.all_finite());
}

#[test]
fn training_is_deterministic() {
    let (data, tc) = tiny_run();
    let a = train(
        &data,
        &TrainConfig {
            epochs: 2,
            ..tc.clone()
        },
    )
    .unwrap();
    let b = train(
        &data,
        &TrainConfig {
            epochs: 2,
            ..tc.clone()
        },
    )
    .unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.history, b.history);
    let c = train(
        &data,
        &TrainConfig {
            epochs: 2,
            seed: 5,
            ..tc
        },
    )
    .unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn laser_weight_needs_scans() {
    let (data, tc) = tiny_run();
    assert!(train(&data.clone().without_laser(), &tc).is_err());
    let plain = TrainConfig {
        lambda_value: 0.0,
        epochs: 1,
        ..tc
    };
    assert!(train(&data.without_laser(), &plain).is_ok());
}
