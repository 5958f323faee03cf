use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rctaf::activation::{alpha_for_curvature, CurvatureBound};
use rctaf::chart::{ChartSpec, Series};
use rctaf::sweep::{read_results, run_sweep, seed_means, write_results, Metric, SweepOptions};
use rctaf::verify::{check_case, random_cases, CaseReport, CheckCase};
use rctaf::{ActivationSpec, Error, Network, SweepConfig};
use serde_json::json;

/// Curvature-tunable activations, exact Hessian diagonals and robustness sweeps.
#[derive(Parser, Debug)]
#[command(name = "rctaf", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output file. Defaults to stdout, or `<kind>.svg` for `plot`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum PlotKind {
    RobustnessVsCurvature,
    NormVsCurvature,
    CleanVsCurvature,
    StdCleanVsCurvature,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate an activation and its first two derivatives.
    ActTable {
        /// Activation, e.g. `rct_af:14:1`, `gelu`, or a JSON object.
        #[arg(long, short)]
        activation: ActivationSpec,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        x_min: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        x_max: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Peak |σ''| of each activation (the baselines and RCT-AF at curvature 7 by default).
    Curvature {
        #[arg(long = "activation", short)]
        activations: Vec<ActivationSpec>,
    },
    /// Compare the exact Hessian diagonal with finite differences and the path expansion.
    HessianCheck {
        /// Network JSON file; random networks are drawn when omitted.
        #[arg(long)]
        net: Option<PathBuf>,
        /// Input point for `--net` (comma separated); random when omitted.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Option<Vec<f64>>,
        /// Target for `--net`; random when omitted.
        #[arg(long, allow_negative_numbers = true)]
        y: Option<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Run a curvature sweep and write one CSV row per cell.
    Sweep {
        /// Sweep configuration JSON; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Skip cells already present in the output file.
        #[arg(long)]
        resume: bool,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render sweep results as an SVG chart.
    Plot {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        log_x: bool,
    },
}

enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Check(_) => 2,
            Failure::Lib(e) => match e {
                Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 3,
                Error::Diverged { .. } | Error::Singular(_) | Error::Capacity(_) => 2,
                Error::Domain(_) | Error::UnsupportedActivation(_) | Error::Config(_) | Error::Shape { .. } => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Check(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::ActTable {
            activation,
            x_min,
            x_max,
            points,
        } => act_table(&cli, activation, *x_min, *x_max, *points),
        Command::Curvature { activations } => curvature(&cli, activations),
        Command::HessianCheck {
            net,
            x,
            y,
            trials,
            tolerance,
        } => hessian_check(&cli, net.as_deref(), x.as_deref(), *y, *trials, *tolerance),
        Command::Sweep { config, resume, jobs } => sweep(&cli, config.as_deref(), *resume, *jobs),
        Command::Plot { input, kind, log_x } => plot(&cli, input, *kind, *log_x),
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn act_table(cli: &Cli, spec: &ActivationSpec, lo: f64, hi: f64, n: usize) -> Outcome {
    spec.validate()?;
    if n < 2 {
        return Err(Failure::Usage(format!("--points must be at least 2, got {n}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Failure::Usage(format!(
            "need a finite range with x-min < x-max, got [{lo}, {hi}]"
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i == n - 1 {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / (n - 1) as f64)
        };
        let d2 = spec.d2(x).ok();
        rows.push((x, spec.eval(x)?, spec.d1(x)?.value, d2));
    }
    let mut out = sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => {
            writeln!(out, "x,value,d1,d2")?;
            for (x, v, d1, d2) in rows {
                let d2 = d2.map(|v| v.to_string()).unwrap_or_default();
                writeln!(out, "{x},{v},{d1},{d2}")?;
            }
        }
        Format::Json => {
            let rows: Vec<_> = rows
                .into_iter()
                .map(|(x, v, d1, d2)| json!({"x": x, "value": v, "d1": d1, "d2": d2}))
                .collect();
            serde_json::to_writer_pretty(&mut out, &json!({"activation": spec, "rows": rows})).map_err(Error::from)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn default_curvature_specs() -> Vec<ActivationSpec> {
    let mut specs = ActivationSpec::baselines();
    for beta in 0..=2 {
        let alpha = alpha_for_curvature(beta, 7.0).expect("valid beta");
        specs.push(ActivationSpec::rct_af(alpha, beta).expect("valid RCT-AF"));
    }
    specs
}

fn curvature(cli: &Cli, specs: &[ActivationSpec]) -> Outcome {
    let specs = if specs.is_empty() {
        default_curvature_specs()
    } else {
        specs.to_vec()
    };
    let mut out = sink(cli.output.as_deref())?;
    let profiles: Vec<_> = specs
        .iter()
        .map(|s| s.validate().map(|_| s.max_abs_d2()))
        .collect::<rctaf::Result<_>>()?;
    match cli.format {
        Format::Csv => {
            writeln!(out, "activation,argmax_x,max_abs_d2")?;
            for p in &profiles {
                let argmax = match p.max_abs_d2 {
                    CurvatureBound::Unbounded => String::new(),
                    CurvatureBound::Finite(_) => format!("{:.3}", p.argmax_x + 0.0),
                };
                writeln!(out, "{},{argmax},{:.3}", p.spec, p.max_abs_d2)?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &profiles).map_err(Error::from)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(io::BufReader::new(file)).map_err(Error::from)?)
}

fn hessian_check(
    cli: &Cli,
    net: Option<&Path>,
    x: Option<&[f64]>,
    y: Option<f64>,
    trials: usize,
    tolerance: f64,
) -> Outcome {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Failure::Usage(format!("--tolerance must be >= 0, got {tolerance}")));
    }
    let cases: Vec<CheckCase> = match net {
        Some(path) => {
            let net: Network = load_json(path)?;
            // A random draw supplies whatever the user left out.
            let mut drawn = random_cases(cli.seed, 1)?.remove(0);
            let x = match x {
                Some(v) => v.to_vec(),
                None => (0..net.input_dim())
                    .map(|i| drawn.x.get(i).copied().unwrap_or(0.5))
                    .collect(),
            };
            drawn.net = net;
            vec![CheckCase {
                x,
                y: y.unwrap_or(drawn.y),
                net: drawn.net,
            }]
        }
        None => {
            if trials == 0 {
                return Err(Failure::Usage("--trials must be at least 1".into()));
            }
            random_cases(cli.seed, trials)?
        }
    };
    let reports: Vec<CaseReport> = cases
        .iter()
        .map(|c| check_case(c, tolerance))
        .collect::<rctaf::Result<_>>()?;
    let closed_form_tol = 1e-12;
    let closed_form_ok = |r: &CaseReport| r.closed_form_max_abs.is_none_or(|e| e <= closed_form_tol);
    let passed = reports
        .iter()
        .all(|r| r.passed() && (net.is_none() || closed_form_ok(r)));
    let worst_fd = reports.iter().map(|r| r.fd_max_rel).fold(0.0, f64::max);
    let worst_paths = reports
        .iter()
        .filter_map(|r| r.paths_max_rel)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));

    let mut out = sink(cli.output.as_deref())?;
    match cli.format {
        Format::Json => {
            let doc = json!({
                "tolerance": tolerance,
                "passed": passed,
                "max_fd_relative_error": worst_fd,
                "max_paths_relative_error": worst_paths,
                "cases": reports,
            });
            serde_json::to_writer_pretty(&mut out, &doc).map_err(Error::from)?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(
                out,
                "case,widths,activation,params,fd_max_rel,fd_grad_max_rel,paths_max_rel,closed_form_max_abs,pass"
            )?;
            for (i, r) in reports.iter().enumerate() {
                let widths: Vec<String> = r.widths.iter().map(|w| w.to_string()).collect();
                let opt = |v: Option<f64>| v.map(|v| format!("{v:.3e}")).unwrap_or_default();
                writeln!(
                    out,
                    "{i},{},{},{},{:.3e},{:.3e},{},{},{}",
                    widths.join("-"),
                    r.activation,
                    r.params,
                    r.fd_max_rel,
                    r.fd_grad_max_rel,
                    opt(r.paths_max_rel),
                    opt(r.closed_form_max_abs),
                    if r.passed() { "pass" } else { "fail" }
                )?;
            }
            out.flush()?;
            drop(out);
            let mut summary = if cli.output.is_some() {
                Box::new(io::stdout().lock()) as Box<dyn Write>
            } else {
                Box::new(io::stderr().lock())
            };
            writeln!(
                summary,
                "max relative error vs finite differences: {worst_fd:.3e} (tolerance {tolerance:e})"
            )?;
            if let Some(p) = worst_paths {
                writeln!(summary, "max relative error vs path expansion: {p:.3e}")?;
            }
            if let (Some(_), [r]) = (net, reports.as_slice()) {
                if let Some(e) = r.closed_form_max_abs {
                    writeln!(
                        summary,
                        "closed-form single-hidden-layer check: max abs difference {e:.3e} ({})",
                        if e <= closed_form_tol { "pass" } else { "fail" }
                    )?;
                }
            }
            writeln!(summary, "{}", if passed { "PASS" } else { "FAIL" })?;
        }
    }
    if passed {
        Ok(())
    } else {
        let failed = reports.iter().filter(|r| !r.passed() || !closed_form_ok(r)).count();
        Err(Failure::Check(format!("{failed} of {} cases failed", reports.len())))
    }
}

fn sweep(cli: &Cli, config: Option<&Path>, resume: bool, jobs: Option<usize>) -> Outcome {
    let cfg: SweepConfig = match config {
        Some(p) => load_json(p)?,
        None => SweepConfig::default(),
    };
    if resume && cli.output.is_none() {
        return Err(Failure::Usage("--resume needs --output".into()));
    }
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let opts = SweepOptions {
        output: cli.output.clone(),
        resume,
        jobs,
    };
    let outcome = run_sweep(&cfg, &opts)?;
    if cli.output.is_none() {
        let stdout = io::stdout().lock();
        write_results(&outcome.results, stdout)?;
    }
    let means = |m: Metric| seed_means(&outcome.results, m);
    let (robust, norm, clean) = (
        means(Metric::RobustAcc),
        means(Metric::DiagNorm),
        means(Metric::StdCleanAcc),
    );
    let mut summary = if cli.output.is_some() {
        Box::new(io::stdout().lock()) as Box<dyn Write>
    } else {
        Box::new(io::stderr().lock())
    };
    match cli.format {
        Format::Csv => {
            writeln!(summary, "{} cells run, {} skipped", outcome.ran, outcome.skipped)?;
            writeln!(
                summary,
                "beta,curvature,mean_robust_acc,mean_diag_norm,mean_std_clean_acc"
            )?;
            for (beta, pts) in &robust {
                for &(c, r) in pts {
                    let lookup = |m: &std::collections::BTreeMap<u8, Vec<(f64, f64)>>| {
                        m.get(beta)
                            .and_then(|v| v.iter().find(|p| p.0 == c))
                            .map(|p| format!("{:.4}", p.1))
                            .unwrap_or_default()
                    };
                    writeln!(summary, "{beta},{c},{r:.4},{},{}", lookup(&norm), lookup(&clean))?;
                }
            }
        }
        Format::Json => {
            let doc = json!({
                "ran": outcome.ran,
                "skipped": outcome.skipped,
                "mean_robust_acc": robust,
                "mean_diag_norm": norm,
                "mean_std_clean_acc": clean,
            });
            serde_json::to_writer_pretty(&mut summary, &doc).map_err(Error::from)?;
            writeln!(summary)?;
        }
    }
    Ok(())
}

fn plot(cli: &Cli, input: &Path, kind: PlotKind, log_x: bool) -> Outcome {
    let results = read_results(File::open(input)?)?;
    if results.is_empty() {
        return Err(Failure::Lib(Error::Format(format!("{} has no rows", input.display()))));
    }
    let (metric, title, y_label) = match kind {
        PlotKind::RobustnessVsCurvature => (Metric::RobustAcc, "Robustness vs. maximum curvature", "robust accuracy"),
        PlotKind::NormVsCurvature => (
            Metric::DiagNorm,
            "Normalized Hessian diagonal norm vs. maximum curvature",
            "normalized diagonal norm",
        ),
        PlotKind::CleanVsCurvature => (
            Metric::CleanAcc,
            "Clean accuracy (adversarial training) vs. maximum curvature",
            "clean accuracy",
        ),
        PlotKind::StdCleanVsCurvature => (
            Metric::StdCleanAcc,
            "Clean accuracy (standard training) vs. maximum curvature",
            "clean accuracy",
        ),
    };
    let series: Vec<Series> = seed_means(&results, metric)
        .into_iter()
        .filter(|(_, pts)| !pts.is_empty())
        .map(|(beta, points)| Series {
            name: format!("β={beta}"),
            points,
        })
        .collect();
    if series.is_empty() {
        return Err(Failure::Lib(Error::Format(format!(
            "column `{}` has no values",
            metric.label()
        ))));
    }
    let chart = ChartSpec {
        title: title.into(),
        x_label: "max |σ''|".into(),
        y_label: y_label.into(),
        series,
        log_x,
    };
    let svg = chart.render()?;
    let path = cli.output.clone().unwrap_or_else(|| {
        let name = kind
            .to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default();
        PathBuf::from(format!("{name}.svg"))
    });
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(())
}
