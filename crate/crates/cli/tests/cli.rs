use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rctaf::{ActivationSpec, InitScheme, Network};

fn rctaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rctaf")).args(args).output().unwrap()
}

fn run(cmd: &str) -> Output {
    rctaf(&cmd.split_whitespace().collect::<Vec<_>>())
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn act_table_example() {
    let o = run("act-table -a rct_af:1:0 --x-min -1 --x-max 1 --points 3");
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["x", "value", "d1", "d2"]);
    let xs: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(xs, [-1.0, 0.0, 1.0]);
    let v0: f64 = rows[2][1].parse().unwrap();
    assert!((v0 - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn act_table_rows_match_the_library() {
    let spec: ActivationSpec = "rct_af:14:2".parse().unwrap();
    let o = run("act-table -a rct_af:14:2 --x-min -3 --x-max 2.5 --points 57");
    assert!(o.status.success());
    let text = stdout(&o);
    let mut n = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v[1], spec.eval(v[0]).unwrap());
        assert_eq!(v[2], spec.d1(v[0]).unwrap().value);
        assert_eq!(v[3], spec.d2(v[0]).unwrap());
        n += 1;
    }
    assert_eq!(n, 57);
}

#[test]
fn relu_table_leaves_d2_empty() {
    let o = rctaf(&["act-table", "-a", "relu", "--points", "5"]);
    assert!(o.status.success());
    for line in stdout(&o).lines().skip(1) {
        assert!(line.ends_with(','), "{line}");
    }
}

#[test]
fn act_table_rejects_bad_ranges() {
    let o = rctaf(&["act-table", "-a", "gelu", "--x-min", "2", "--x-max", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = rctaf(&["act-table", "-a", "gelu", "--points", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn curvature_table() {
    let o = run("curvature -a gelu -a swish -a mish -a elu -a rct_af:7:2 -a relu");
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    // Mish peaks at 0.644 near x = -0.088.
    assert_eq!(values, ["0.798", "0.500", "0.644", "1.000", "7.000", "inf"]);
}

#[test]
fn curvature_defaults_include_rct_af_at_seven() {
    let o = rctaf(&["curvature"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rct: Vec<&str> = text.lines().filter(|l| l.starts_with("rct_af")).collect();
    assert_eq!(rct.len(), 3);
    assert!(rct.iter().all(|l| l.ends_with(",0.000,7.000")), "{rct:?}");
}

#[test]
fn hessian_check_passes_by_default() {
    let o = rctaf(&["hessian-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 21);
    let err = stderr(&o);
    assert!(err.contains("max relative error vs finite differences"), "{err}");
    assert!(err.trim_end().ends_with("PASS"));
}

#[test]
fn hessian_check_with_zero_tolerance_fails() {
    let o = rctaf(&["hessian-check", "--trials", "3", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FAIL"));
}

#[test]
fn hessian_check_on_a_single_hidden_layer_file() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::init(&[2, 5, 1], ActivationSpec::rct_af(4.0, 1).unwrap(), 8, InitScheme::He).unwrap();
    let file = dir.path().join("net.json");
    fs::write(&file, serde_json::to_string(&net).unwrap()).unwrap();
    let out = dir.path().join("report.csv");
    let o = run(&format!(
        "hessian-check --net {} --x 0.3,-0.7 --y 1 -o {}",
        p(&file),
        p(&out)
    ));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("closed-form single-hidden-layer check"), "{summary}");
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn hessian_check_missing_file_is_an_io_error() {
    let o = rctaf(&["hessian-check", "--net", "/nonexistent/net.json"]);
    assert_eq!(o.status.code(), Some(3));
}

fn one_cell_config(dir: &Path) -> String {
    let cfg = r#"{
        "dataset": {"generator": {"kind": "two_moons", "noise": 0.1}, "n": 40, "seed": 1},
        "curvature_targets": [7.0],
        "betas": [1],
        "seeds": [0],
        "hidden_widths": [4],
        "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.01, "momentum": 0.9,
                  "mode": {"kind": "standard"}, "seed": 0},
        "train_attack": {"epsilon": 0.1, "step_size": 0.05, "steps": 2, "random_start": true},
        "eval_attack": {"epsilon": 0.1, "step_size": 0.05, "steps": 2, "random_start": true}
    }"#;
    let path = dir.join("sweep.json");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn one_cell_sweep_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_cell_config(dir.path());
    let out = dir.path().join("results.csv");
    let o = rctaf(&["sweep", "--config", &cfg, "-o", p(&out), "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("1 cells run, 0 skipped"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("1,7,14,0,"));

    let o = rctaf(&["sweep", "--config", &cfg, "-o", p(&out), "--resume"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("0 cells run, 1 skipped"));
    assert_eq!(fs::read_to_string(&out).unwrap(), text);

    let svg = dir.path().join("r.svg");
    let o = run(&format!(
        "plot -i {} --kind robustness-vs-curvature -o {}",
        p(&out),
        p(&svg)
    ));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_to_stdout_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_cell_config(dir.path());
    let o = rctaf(&["sweep", "--config", &cfg]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(stderr(&o).contains("1 cells run"));
    assert_eq!(rctaf(&["sweep", "--config", &cfg, "--resume"]).status.code(), Some(1));
    assert_eq!(rctaf(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(rctaf(&["--help"]).status.code(), Some(0));
}

const HEADER: &str = "beta,curvature,alpha,seed,clean_acc,robust_acc,diag_norm,wall_time_s,status,std_clean_acc";

fn write_csv(dir: &Path, rows: &[&str]) -> String {
    let path = dir.join("synthetic.csv");
    fs::write(&path, format!("{HEADER}\n{}\n", rows.join("\n"))).unwrap();
    path.to_str().unwrap().to_string()
}

/// (series, cx, cy) of every marker in an emitted SVG.
fn markers(svg: &str) -> Vec<(String, f64, f64)> {
    let attr = |tag: &str, name: &str| -> String {
        let start = tag.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
        tag[start..].split('"').next().unwrap().to_string()
    };
    svg.split("<circle")
        .skip(1)
        .map(|t| t.split("/>").next().unwrap())
        .filter(|t| t.contains("class=\"marker\""))
        .map(|t| {
            (
                attr(t, "data-series"),
                attr(t, "cx").parse().unwrap(),
                attr(t, "cy").parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn plot_one_point_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(
        dir.path(),
        &[
            "0,7,28,0,0.9,0.8,0.3,0.1,ok,0.95",
            "1,7,14,0,0.9,0.7,0.2,0.1,ok,0.95",
            "2,7,7,0,0.9,0.6,0.1,0.1,ok,0.95",
        ],
    );
    let svg = dir.path().join("out.svg");
    let o = rctaf(&["plot", "-i", &csv, "--kind", "norm-vs-curvature", "-o", p(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), format!("wrote {}", p(&svg)));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") || text.starts_with("<?xml"));
    let m = markers(&text);
    assert_eq!(m.len(), 3);
    let series: std::collections::BTreeSet<_> = m.iter().map(|t| t.0.clone()).collect();
    assert_eq!(series.len(), 3);
}

#[test]
fn plot_is_deterministic_and_locates_the_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (c, norm) in [(1.0, 0.9), (4.0, 0.5), (7.0, 0.2), (20.0, 0.6), (50.0, 0.8)] {
        for seed in 0..2 {
            let jitter = if seed == 0 { 0.01 } else { -0.01 };
            rows.push(format!(
                "1,{c},{},{seed},0.9,0.7,{},0.1,ok,0.95",
                2.0 * c,
                norm + jitter
            ));
        }
    }
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    let csv = write_csv(dir.path(), &refs);
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    for out in [&a, &b] {
        let o = run(&format!("plot -i {csv} --kind norm-vs-curvature --log-x -o {}", p(out)));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut m = markers(&text);
    assert_eq!(m.len(), 5);
    m.sort_by(|u, v| u.1.total_cmp(&v.1));
    // SVG y grows downwards, so the smallest value has the largest cy.
    let lowest = m.iter().enumerate().max_by(|u, v| u.1 .2.total_cmp(&v.1 .2)).unwrap().0;
    assert_eq!(lowest, 2, "markers by x: {m:?}");
}

#[test]
fn plot_reports_a_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "beta,curvature,alpha,seed,clean_acc\n1,7,14,0,0.9\n").unwrap();
    let svg = dir.path().join("x.svg");
    let o = run(&format!(
        "plot -i {} --kind robustness-vs-curvature -o {}",
        p(&path),
        p(&svg)
    ));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("robust_acc"), "{}", stderr(&o));
}

#[test]
fn plot_usage_errors() {
    assert_eq!(rctaf(&["plot", "--kind", "norm-vs-curvature"]).status.code(), Some(1));
    assert_eq!(
        rctaf(&["plot", "-i", "x.csv", "--kind", "nonsense"]).status.code(),
        Some(1)
    );
}
