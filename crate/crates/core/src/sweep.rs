//! Curvature sweep: for every (β, max|σ''|, seed) cell, train an adversarial
//! network (clean / robust accuracy) and a standard twin from the same
//! initialisation (normalized Hessian diagonal norm, clean accuracy).
//!
//! Cells are independent and run on a bounded worker pool. Finished cells are
//! appended to a CSV file as they complete, so an interrupted sweep resumes
//! from where it stopped.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activation::{alpha_for_curvature, ActivationSpec};
use crate::attacks::{self, AttackConfig};
use crate::data::{make_dataset, Dataset, Generator};
use crate::error::{Error, Result};
use crate::hessian::{dataset_diag_norm, Reduction};
use crate::network::{InitScheme, Network};
use crate::par;
use crate::train::{mix_seed, train_network, TrainConfig, TrainMode};

pub const CSV_HEADER: [&str; 10] = [
    "beta",
    "curvature",
    "alpha",
    "seed",
    "clean_acc",
    "robust_acc",
    "diag_norm",
    "wall_time_s",
    "status",
    "std_clean_acc",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub dataset: DatasetConfig,
    pub curvature_targets: Vec<f64>,
    pub betas: Vec<u8>,
    pub seeds: Vec<u64>,
    /// Hidden layer widths; the network is `[2, hidden.., 1]`.
    pub hidden_widths: Vec<usize>,
    pub init: InitScheme,
    /// Optimiser settings shared by both twins (`mode` and `seed` are set per cell).
    pub train: TrainConfig,
    /// Attack used inside adversarial training.
    pub train_attack: AttackConfig,
    /// Attack used for robust accuracy on the test split.
    pub eval_attack: AttackConfig,
    pub diag_reduction: Reduction,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dataset: DatasetConfig {
                generator: Generator::TwoMoons { noise: 0.2 },
                n: 400,
                seed: 7,
            },
            curvature_targets: vec![0.5, 1.0, 2.0, 4.0, 7.0, 10.0, 15.0, 20.0, 30.0, 50.0],
            betas: vec![0, 1, 2],
            seeds: (0..5).collect(),
            hidden_widths: vec![16, 16],
            init: InitScheme::He,
            train: TrainConfig {
                epochs: 100,
                batch_size: 32,
                learning_rate: 0.01,
                momentum: 0.9,
                mode: TrainMode::Standard,
                seed: 0,
                history_attack: None,
            },
            train_attack: AttackConfig {
                epsilon: 0.3,
                step_size: 0.075,
                steps: 7,
                random_start: true,
                input_bounds: None,
            },
            eval_attack: AttackConfig::default(),
            diag_reduction: Reduction::MeanDiagThenNorm,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curvature_targets.is_empty() {
            return Err(Error::Config("no curvature targets".into()));
        }
        if self.curvature_targets.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("curvature targets must be positive".into()));
        }
        if self.curvature_targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("curvature targets must be sorted ascending".into()));
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| b > 2) {
            return Err(Error::Config(format!(
                "betas must be a non-empty subset of {{0,1,2}}, got {:?}",
                self.betas
            )));
        }
        let mut seen = HashSet::new();
        if !self.betas.iter().all(|b| seen.insert(*b)) {
            return Err(Error::Config("duplicate beta".into()));
        }
        let mut seen = HashSet::new();
        if self.seeds.is_empty() || !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(Error::Config("seeds must be non-empty and distinct".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.train.validate()?;
        self.train_attack.validate()?;
        self.eval_attack.validate()?;
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(&self.hidden_widths);
        w.push(1);
        w
    }

    /// All cells in (beta, curvature, seed) order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &beta in &self.betas {
            for &curvature in &self.curvature_targets {
                for &seed in &self.seeds {
                    out.push(CellKey { beta, curvature, seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub beta: u8,
    pub curvature: f64,
    pub seed: u64,
}

impl CellKey {
    fn id(&self) -> (u8, u64, u64) {
        (self.beta, self.curvature.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Adversarial training diverged; robustness metrics are missing.
    DivergedAdversarial,
    /// Standard training diverged; the diag norm is missing.
    DivergedStandard,
    Diverged,
}

impl CellStatus {
    fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::DivergedAdversarial => "diverged_adversarial",
            CellStatus::DivergedStandard => "diverged_standard",
            CellStatus::Diverged => "diverged",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => CellStatus::Ok,
            "diverged_adversarial" => CellStatus::DivergedAdversarial,
            "diverged_standard" => CellStatus::DivergedStandard,
            "diverged" => CellStatus::Diverged,
            other => return Err(Error::Format(format!("unknown status {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub beta: u8,
    pub curvature: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Adversarially trained network, test split.
    pub clean_acc: Option<f64>,
    pub robust_acc: Option<f64>,
    /// Standard twin at the end of training, over the training split.
    pub diag_norm: Option<f64>,
    pub wall_time_s: f64,
    pub status: CellStatus,
    /// Standard twin, test split.
    pub std_clean_acc: Option<f64>,
}

impl SweepResult {
    pub fn key(&self) -> CellKey {
        CellKey {
            beta: self.beta,
            curvature: self.curvature,
            seed: self.seed,
        }
    }

    /// Same record with the timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> SweepResult {
        SweepResult {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    fn record(&self) -> [String; 10] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.beta.to_string(),
            self.curvature.to_string(),
            self.alpha.to_string(),
            self.seed.to_string(),
            opt(self.clean_acc),
            opt(self.robust_acc),
            opt(self.diag_norm),
            format!("{:.3}", self.wall_time_s),
            self.status.as_str().to_string(),
            opt(self.std_clean_acc),
        ]
    }
}

/// Trains both twins of one cell.
pub fn run_cell(cfg: &SweepConfig, dataset: &Dataset, key: CellKey) -> Result<SweepResult> {
    let start = Instant::now();
    let alpha = alpha_for_curvature(key.beta, key.curvature)?;
    let act = ActivationSpec::rct_af(alpha, key.beta)?;
    let net = Network::init(&cfg.widths(), act, key.seed, cfg.init)?;

    let adv_cfg = TrainConfig {
        mode: TrainMode::PgdAdversarial {
            attack: cfg.train_attack,
        },
        seed: mix_seed(key.seed, 1),
        ..cfg.train
    };
    let std_cfg = TrainConfig {
        mode: TrainMode::Standard,
        seed: mix_seed(key.seed, 2),
        ..cfg.train
    };

    let adv = match train_network(net.clone(), dataset, &adv_cfg) {
        Ok((trained, _)) => {
            let clean = attacks::clean_accuracy(&trained, &dataset.test)?;
            let robust = attacks::robust_accuracy(&trained, &dataset.test, &cfg.eval_attack, mix_seed(key.seed, 3))?;
            Some((clean, robust))
        }
        Err(Error::Diverged { .. }) => None,
        Err(e) => return Err(e),
    };
    let std = match train_network(net, dataset, &std_cfg) {
        Ok((trained, _)) => {
            let norm = dataset_diag_norm(&trained, &dataset.train, cfg.diag_reduction)?;
            let clean = attacks::clean_accuracy(&trained, &dataset.test)?;
            Some((norm, clean))
        }
        Err(Error::Diverged { .. }) => None,
        Err(e) => return Err(e),
    };
    let status = match (adv.is_some(), std.is_some()) {
        (true, true) => CellStatus::Ok,
        (false, true) => CellStatus::DivergedAdversarial,
        (true, false) => CellStatus::DivergedStandard,
        (false, false) => CellStatus::Diverged,
    };
    Ok(SweepResult {
        beta: key.beta,
        curvature: key.curvature,
        alpha,
        seed: key.seed,
        clean_acc: adv.map(|a| a.0),
        robust_acc: adv.map(|a| a.1),
        diag_norm: std.map(|s| s.0),
        wall_time_s: start.elapsed().as_secs_f64(),
        status,
        std_clean_acc: std.map(|s| s.1),
    })
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// CSV sink; rows are appended as cells finish.
    pub output: Option<PathBuf>,
    /// Keep rows already in `output` and skip their cells.
    pub resume: bool,
    /// Worker threads (`None` = all available).
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// One record per cell, in [`SweepConfig::cells`] order.
    pub results: Vec<SweepResult>,
    pub ran: usize,
    pub skipped: usize,
}

pub fn run_sweep(cfg: &SweepConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dataset = make_dataset(cfg.dataset.generator, cfg.dataset.n, cfg.dataset.seed)?;
    let cells = cfg.cells();

    let mut done: Vec<SweepResult> = Vec::new();
    if let (Some(path), true) = (&opts.output, opts.resume) {
        if path.exists() {
            done = read_for_resume(path)?;
        }
    }
    let wanted: HashSet<_> = cells.iter().map(CellKey::id).collect();
    done.retain(|r| wanted.contains(&r.key().id()));
    let done_ids: HashSet<_> = done.iter().map(|r| r.key().id()).collect();
    let pending: Vec<CellKey> = cells.iter().copied().filter(|c| !done_ids.contains(&c.id())).collect();

    let sink = match &opts.output {
        Some(path) => Some(Mutex::new(open_sink(path, opts.resume)?)),
        None => None,
    };

    let fresh = par::with_jobs(opts.jobs, || {
        par::map(&pending, |_, &key| -> Result<SweepResult> {
            let r = run_cell(cfg, &dataset, key)?;
            if let Some(sink) = &sink {
                let mut w = sink.lock().expect("sink poisoned");
                w.write_record(r.record())?;
                w.flush()?;
            }
            Ok(r)
        })
    });
    let ran = fresh.len();
    let skipped = done.len();
    let mut all = done;
    for r in fresh {
        all.push(r?);
    }
    let order: BTreeMap<_, usize> = cells.iter().enumerate().map(|(i, c)| (c.id(), i)).collect();
    all.sort_by_key(|r| order[&r.key().id()]);
    Ok(SweepOutcome {
        results: all,
        ran,
        skipped,
    })
}

/// Reads an existing sink. A killed run can leave an unterminated last line;
/// it is dropped and the file truncated to the complete rows.
fn read_for_resume(path: &Path) -> Result<Vec<SweepResult>> {
    let text = std::fs::read_to_string(path)?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if text.ends_with('\n') {
        return read_results(text.as_bytes());
    }
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    std::fs::write(path, complete)?;
    if complete.is_empty() {
        return Ok(Vec::new());
    }
    read_results(complete.as_bytes())
}

fn open_sink(path: &Path, resume: bool) -> Result<csv::Writer<File>> {
    let has_rows = resume && path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = if has_rows {
        OpenOptions::new().append(true).open(path)?
    } else {
        File::create(path)?
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !has_rows {
        w.write_record(CSV_HEADER)?;
        w.flush()?;
    }
    Ok(w)
}

pub fn write_results<W: Write>(results: &[SweepResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses sweep CSV by column name. The `std_clean_acc` column is optional.
pub fn read_results<R: Read>(input: R) -> Result<Vec<SweepResult>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = CSV_HEADER[..9].iter().map(|n| col(n)).collect::<Result<_>>()?;
    let std_idx = headers.iter().position(|h| h == "std_clean_acc");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::Format(format!("row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| -> Result<f64> { field(i).parse().map_err(|_| bad(what)) };
        let opt = |i: usize, what: &str| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        out.push(SweepResult {
            beta: field(idx[0]).parse().map_err(|_| bad("beta"))?,
            curvature: num(idx[1], "curvature")?,
            alpha: num(idx[2], "alpha")?,
            seed: field(idx[3]).parse().map_err(|_| bad("seed"))?,
            clean_acc: opt(idx[4], "clean_acc")?,
            robust_acc: opt(idx[5], "robust_acc")?,
            diag_norm: opt(idx[6], "diag_norm")?,
            wall_time_s: num(idx[7], "wall_time_s")?,
            status: CellStatus::parse(field(idx[8]))?,
            std_clean_acc: match std_idx {
                Some(i) => opt(i, "std_clean_acc")?,
                None => None,
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CleanAcc,
    RobustAcc,
    DiagNorm,
    StdCleanAcc,
}

impl Metric {
    pub fn of(self, r: &SweepResult) -> Option<f64> {
        match self {
            Metric::CleanAcc => r.clean_acc,
            Metric::RobustAcc => r.robust_acc,
            Metric::DiagNorm => r.diag_norm,
            Metric::StdCleanAcc => r.std_clean_acc,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::CleanAcc => "clean accuracy",
            Metric::RobustAcc => "robust accuracy",
            Metric::DiagNorm => "normalized Hessian diagonal norm",
            Metric::StdCleanAcc => "clean accuracy (standard training)",
        }
    }
}

/// Seed-averaged metric per beta: `beta -> [(curvature, mean)]`, curvature
/// ascending. Cells missing the metric are left out of the average.
pub fn seed_means(results: &[SweepResult], metric: Metric) -> BTreeMap<u8, Vec<(f64, f64)>> {
    let mut acc: BTreeMap<u8, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in results {
        if let Some(v) = metric.of(r) {
            let e = acc
                .entry(r.beta)
                .or_default()
                .entry(ordered_key(r.curvature))
                .or_insert((r.curvature, 0.0, 0));
            e.1 += v;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(b, m)| (b, m.into_values().map(|(c, s, n)| (c, s / n as f64)).collect()))
        .collect()
}

// Monotone map of positive floats onto u64 so BTreeMap sorts by value.
fn ordered_key(c: f64) -> u64 {
    c.to_bits()
}

/// Seed mean of `metric` at one (beta, curvature).
pub fn mean_at(results: &[SweepResult], metric: Metric, beta: u8, curvature: f64) -> Option<f64> {
    seed_means(results, metric)
        .get(&beta)?
        .iter()
        .find(|(c, _)| *c == curvature)
        .map(|(_, m)| *m)
}
