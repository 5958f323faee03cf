use std::collections::HashSet;
use std::fs;

use rctaf::attacks::clean_accuracy;
use rctaf::data::{make_dataset, Sample};
use rctaf::sweep::{read_results, run_cell, run_sweep, write_results, CellKey, CellStatus, SweepOptions};
use rctaf::train::train_network;
use rctaf::{ActivationSpec, AttackConfig, Generator, InitScheme, Network, SweepConfig, TrainConfig, TrainMode};

/// Ordinary least squares on `[x₁, x₂, 1]` via the 3×3 normal equations.
fn least_squares_probe(train: &[Sample]) -> [f64; 3] {
    let mut a = [[0.0f64; 4]; 3];
    for s in train {
        let f = [s.x[0], s.x[1], 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += f[i] * f[j];
            }
            a[i][3] += f[i] * s.y;
        }
    }
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..3 {
            if r != c {
                let m = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= m * a[c][k];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

#[test]
fn separated_blobs_are_linearly_separable() {
    let data = make_dataset(Generator::GaussianBlobs { separation: 6.0 }, 1000, 4).unwrap();
    let w = least_squares_probe(&data.train);
    let correct = data
        .test
        .iter()
        .filter(|s| (w[0] * s.x[0] + w[1] * s.x[1] + w[2]) * s.y > 0.0)
        .count();
    assert!(
        correct as f64 >= 0.99 * data.test.len() as f64,
        "{correct}/{}",
        data.test.len()
    );
}

#[test]
fn datasets_are_reproducible_and_balanced() {
    for gen in [
        Generator::TwoMoons { noise: 0.1 },
        Generator::Circles {
            noise: 0.05,
            ratio: 0.5,
        },
        Generator::GaussianBlobs { separation: 2.0 },
    ] {
        for n in [4, 5, 101, 400] {
            let a = make_dataset(gen, n, 9).unwrap();
            assert_eq!(a, make_dataset(gen, n, 9).unwrap());
            assert_eq!(a.len(), n);
            assert_eq!(a.train.len(), n * 4 / 5);
            let pos = a.all().filter(|s| s.y == 1.0).count() as i64;
            let neg = a.all().filter(|s| s.y == -1.0).count() as i64;
            assert_eq!(pos + neg, n as i64);
            assert!((pos - neg).abs() <= 1);
        }
    }
    assert_ne!(
        make_dataset(Generator::default(), 50, 1).unwrap(),
        make_dataset(Generator::default(), 50, 2).unwrap()
    );
}

#[test]
fn noiseless_moons_lie_on_the_arcs() {
    let data = make_dataset(Generator::TwoMoons { noise: 0.0 }, 200, 0).unwrap();
    for s in data.all() {
        let r = if s.y > 0.0 {
            (s.x[0].powi(2) + s.x[1].powi(2)).sqrt()
        } else {
            ((s.x[0] - 1.0).powi(2) + (s.x[1] - 0.5).powi(2)).sqrt()
        };
        assert!((r - 1.0).abs() < 1e-12);
        if s.y > 0.0 {
            assert!(s.x[1] >= -1e-12);
        } else {
            assert!(s.x[1] <= 0.5 + 1e-12);
        }
    }
}

#[test]
fn small_net_fits_separated_blobs() {
    let data = make_dataset(Generator::GaussianBlobs { separation: 6.0 }, 400, 1).unwrap();
    let act = ActivationSpec::rct_af(14.0, 1).unwrap();
    let net = Network::init(&[2, 16, 1], act, 0, InitScheme::He).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let (trained, history) = train_network(net, &data, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 200);
    let acc = clean_accuracy(&trained, &data.test).unwrap();
    assert!(acc >= 0.98, "test accuracy {acc}");
}

#[test]
fn zero_budget_adversarial_training_is_standard_training() {
    let data = make_dataset(Generator::default(), 100, 3).unwrap();
    let net = Network::init(&[2, 8, 1], ActivationSpec::Gelu, 1, InitScheme::He).unwrap();
    let std = TrainConfig {
        epochs: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let adv = TrainConfig {
        mode: TrainMode::PgdAdversarial {
            attack: AttackConfig {
                epsilon: 0.0,
                ..AttackConfig::default()
            },
        },
        ..std
    };
    assert_eq!(
        train_network(net.clone(), &data, &std).unwrap(),
        train_network(net, &data, &adv).unwrap()
    );
}

fn small_sweep() -> SweepConfig {
    let mut cfg = SweepConfig::default();
    cfg.dataset.n = 60;
    cfg.curvature_targets = vec![0.5, 7.0];
    cfg.betas = vec![1, 2];
    cfg.seeds = vec![0, 1];
    cfg.hidden_widths = vec![4];
    cfg.train.epochs = 2;
    cfg.train_attack.steps = 2;
    cfg.eval_attack.steps = 3;
    cfg
}

#[test]
fn single_cell_uses_the_matching_alpha() {
    let mut cfg = small_sweep();
    cfg.curvature_targets = vec![7.0];
    cfg.betas = vec![0];
    cfg.seeds = vec![3];
    let out = run_sweep(&cfg, &SweepOptions::default()).unwrap();
    assert_eq!(out.results.len(), 1);
    let r = &out.results[0];
    assert_eq!((r.beta, r.curvature, r.alpha, r.seed), (0, 7.0, 28.0, 3));
    assert_eq!(r.status, CellStatus::Ok);
    assert!(r.robust_acc.unwrap() <= r.clean_acc.unwrap());
}

#[test]
fn sweep_covers_every_cell_once_and_is_reproducible() {
    let cfg = small_sweep();
    let seq = run_sweep(
        &cfg,
        &SweepOptions {
            jobs: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let par = run_sweep(
        &cfg,
        &SweepOptions {
            jobs: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(seq.results.len(), 8);
    let keys: HashSet<_> = seq
        .results
        .iter()
        .map(|r| (r.beta, r.curvature.to_bits(), r.seed))
        .collect();
    assert_eq!(keys.len(), 8);
    let strip = |v: &[rctaf::SweepResult]| v.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&seq.results), strip(&par.results));
    for r in &seq.results {
        assert!((0.0..=1.0).contains(&r.clean_acc.unwrap()));
        assert!(r.robust_acc.unwrap() <= r.clean_acc.unwrap());
    }
}

#[test]
fn resume_skips_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let cfg = small_sweep();
    let opts = SweepOptions {
        output: Some(path.clone()),
        resume: true,
        jobs: Some(2),
    };
    let first = run_sweep(&cfg, &opts).unwrap();
    assert_eq!((first.ran, first.skipped), (8, 0));
    let text = fs::read_to_string(&path).unwrap();
    let again = run_sweep(&cfg, &opts).unwrap();
    assert_eq!((again.ran, again.skipped), (0, 8));
    assert_eq!(fs::read_to_string(&path).unwrap(), text);

    // Simulate a run killed while writing the last row.
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines[..lines.len() - 2].join("\n") + "\n" + &lines[lines.len() - 2][..5];
    fs::write(&path, keep).unwrap();
    let healed = run_sweep(&cfg, &opts).unwrap();
    assert_eq!((healed.ran, healed.skipped), (2, 6));
    let rows = read_results(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    let strip = |v: &[rctaf::SweepResult]| v.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&healed.results), strip(&first.results));
}

#[test]
fn results_round_trip_through_csv() {
    let cfg = small_sweep();
    let dataset = make_dataset(cfg.dataset.generator, cfg.dataset.n, cfg.dataset.seed).unwrap();
    let r = run_cell(
        &cfg,
        &dataset,
        CellKey {
            beta: 2,
            curvature: 7.0,
            seed: 0,
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_results(std::slice::from_ref(&r), &mut buf).unwrap();
    let back = read_results(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].without_timing(), r.without_timing());
}
