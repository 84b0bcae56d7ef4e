//! Command-line harness: config resolution, the shared data pipeline, and
//! one function per subcommand. Every report embeds the resolved config so
//! a run can be replayed from its own output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attacks::{loss_score_mia, mir_auc, reconstruction_risk, reidentification_risk, AttackReport};
use crate::data::{
    apply_minmax, fit_minmax, load_csv, make_splits, write_csv, Dataset, LabelColumn,
    MinimizationMask, MinimizedDataset, DEFAULT_JITTER,
};
use crate::defense::{apply_privacy_scores, privacy_scores, ScoreKind};
use crate::error::{Error, Result};
use crate::impute::{fit_gaussian_stats, fit_mean, impute, Imputer};
use crate::learner::{target_utility, TrainOptions};
use crate::minimize::{
    dual_search, evolutionary_mask, overlap, sweep, sweep_csv, Algorithm, EvoConfig, Problem,
};
use crate::theory::{
    check_feature_selection_thm, check_sampling_bound, check_taylor_residual,
    check_utility_bound, random_logistic_instance, BoundCheckResult, GaussianLinearSetup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ImputerKind {
    Zero,
    Mean,
    Gaussian,
}

/// Everything a run depends on. Loaded from `--config` JSON, then
/// overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    /// Label column name, or a 0-based index.
    pub label: String,
    pub header: bool,
    pub lambda: f64,
    pub algorithm: Algorithm,
    pub k: Option<usize>,
    pub grid: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub imputer: ImputerKind,
    pub beta: f64,
    pub scores: ScoreKind,
    pub seed: u64,
    pub out: PathBuf,
    /// Split rows into public / member / non-member halves. Without splits
    /// every row is minimized and the scaler and imputer are fit on all rows.
    pub splits: bool,
    pub runs: usize,
    /// Ridge strength used by `verify`. The sampling bound only holds when
    /// λ is small relative to the data curvature, so it has its own default.
    pub theory_lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            label: "label".into(),
            header: true,
            lambda: 1.0,
            algorithm: Algorithm::Evolutionary(EvoConfig::default()),
            k: None,
            grid: None,
            alpha: None,
            imputer: ImputerKind::Gaussian,
            beta: 0.0,
            scores: ScoreKind::Uniqueness,
            seed: 0,
            out: PathBuf::from("out"),
            splits: true,
            runs: 5,
            theory_lambda: 0.02,
            tol: TrainOptions::default().tol,
            max_iter: TrainOptions::default().max_iter,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    fn require_k(&self) -> Result<usize> {
        self.k
            .ok_or_else(|| Error::InvalidArgument("--k is required for this command".into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "datamin", version, about = "Data minimization experiments for tabular classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the dataset at sparsity k and report target utility.
    Minimize(CommonArgs),
    /// Evaluate an algorithm over a sparsity grid, with optional dual search.
    Sweep(CommonArgs),
    /// Re-identification, reconstruction and membership risk of a mask.
    Attack(MaskArgs),
    /// Re-select a mask with privacy scores and compare risks.
    Defend(MaskArgs),
    /// Run the theory checks; exit code 0 only when all of them hold.
    Verify(CommonArgs),
    /// Repeat the evolutionary search and report pairwise overlap.
    Multiplicity(CommonArgs),
    /// Write the imputed version of a minimized dataset.
    Impute(MaskArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// feature_selection | random_rows | individualized_random | taylor |
    /// metamodel | evolutionary
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated sparsity values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub imputer: Option<ImputerKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// uniqueness | correlation
    #[arg(long)]
    pub scores: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Minimize every row instead of the member split.
    #[arg(long)]
    pub no_splits: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Ridge strength for `verify`.
    #[arg(long)]
    pub theory_lambda: Option<f64>,
    /// Cap on worker threads; defaults to available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mask file produced by `minimize` or `sweep`.
    #[arg(long)]
    pub mask: PathBuf,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(
                &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            )?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(l) = &self.label {
            cfg.label = l.clone();
        }
        if self.no_header {
            cfg.header = false;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(name) = &self.algorithm {
            cfg.algorithm = algorithm_from_name(name, cfg.seed)?;
        } else if self.seed.is_some() {
            cfg.algorithm = reseed(&cfg.algorithm, cfg.seed);
        }
        if let Some(v) = self.k {
            cfg.k = Some(v);
        }
        if let Some(v) = &self.grid {
            cfg.grid = Some(v.clone());
        }
        if let Some(v) = self.alpha {
            cfg.alpha = Some(v);
        }
        if let Some(v) = self.imputer {
            cfg.imputer = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(s) = &self.scores {
            cfg.scores = s.parse()?;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.no_splits {
            cfg.splits = false;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.theory_lambda {
            cfg.theory_lambda = v;
        }
        for (name, v) in [("lambda", cfg.lambda), ("theory_lambda", cfg.theory_lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(cfg)
    }
}

pub fn algorithm_from_name(name: &str, seed: u64) -> Result<Algorithm> {
    Ok(match name {
        "feature_selection" => Algorithm::FeatureSelection,
        "random_rows" => Algorithm::RandomRows { seed },
        "individualized_random" => Algorithm::IndividualizedRandom { seed },
        "taylor" => Algorithm::Taylor,
        "metamodel" => Algorithm::Metamodel {
            n_models: 200,
            k_sample: None,
            seed,
        },
        "evolutionary" => Algorithm::Evolutionary(EvoConfig::default().with_seed(seed)),
        other => {
            return Err(Error::InvalidArgument(format!("unknown algorithm {other:?}")))
        }
    })
}

fn reseed(alg: &Algorithm, seed: u64) -> Algorithm {
    match alg {
        Algorithm::RandomRows { .. } => Algorithm::RandomRows { seed },
        Algorithm::IndividualizedRandom { .. } => Algorithm::IndividualizedRandom { seed },
        Algorithm::Metamodel {
            n_models, k_sample, ..
        } => Algorithm::Metamodel {
            n_models: *n_models,
            k_sample: *k_sample,
            seed,
        },
        Algorithm::Evolutionary(cfg) => Algorithm::Evolutionary(cfg.clone().with_seed(seed)),
        other => other.clone(),
    }
}

/// Scaled data, the rows to minimize, and the imputer fit on public rows.
pub struct Prepared {
    pub target: Dataset,
    pub nonmembers: Option<Dataset>,
    pub imputer: Imputer,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
    let label: LabelColumn = match cfg.label.parse() {
        Ok(l) => l,
        Err(never) => match never {},
    };
    let raw = load_csv(path, &label, cfg.header)?;
    let all: Vec<usize> = (0..raw.n()).collect();
    let (public, member, nonmember) = if cfg.splits {
        let s = make_splits(raw.n(), cfg.seed)?;
        (s.public, s.member, Some(s.nonmember))
    } else {
        (all.clone(), all, None)
    };
    let scaled = apply_minmax(&raw, &fit_minmax(&raw, &public)?)?;
    let imputer = match cfg.imputer {
        ImputerKind::Zero => Imputer::Zero,
        ImputerKind::Mean => Imputer::Mean(fit_mean(&scaled, &public)?),
        ImputerKind::Gaussian => {
            Imputer::Gaussian(fit_gaussian_stats(&scaled, &public, DEFAULT_JITTER)?)
        }
    };
    Ok(Prepared {
        target: scaled.subset(&member)?,
        nonmembers: nonmember.map(|idx| scaled.subset(&idx)).transpose()?,
        imputer,
    })
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn config_value(cfg: &ExperimentConfig) -> Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

pub fn cmd_minimize(cfg: &ExperimentConfig) -> Result<Value> {
    let start = Instant::now();
    let k = cfg.require_k()?;
    let prep = prepare(cfg)?;
    let problem = Problem {
        dataset: &prep.target,
        lambda: cfg.lambda,
        imputer: prep.imputer.clone(),
        opts: cfg.train_options(),
    };
    let (full_loss, full_acc) = problem.full_utility()?;
    let mask = cfg.algorithm.run(&problem, k)?;
    let (target_loss, target_acc) = problem.evaluate(&mask)?;
    let dir = out_dir(cfg)?;
    mask.write_file(&dir.join("mask.txt"))?;
    let report = json!({
        "config": config_value(cfg)?,
        "algorithm": cfg.algorithm.name(),
        "k": mask.k(),
        "retained_fraction": mask.retained_fraction(),
        "full_loss": full_loss,
        "full_acc": full_acc,
        "target_loss": target_loss,
        "target_acc": target_acc,
        "wall_time": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Value> {
    let start = Instant::now();
    let grid = cfg
        .grid
        .clone()
        .filter(|g| !g.is_empty())
        .ok_or_else(|| Error::InvalidArgument("--grid must list at least one k".into()))?;
    let prep = prepare(cfg)?;
    let problem = Problem {
        dataset: &prep.target,
        lambda: cfg.lambda,
        imputer: prep.imputer.clone(),
        opts: cfg.train_options(),
    };
    let dir = out_dir(cfg)?;
    let mut report = json!({
        "config": config_value(cfg)?,
        "algorithm": cfg.algorithm.name(),
    });
    match cfg.alpha {
        None => {
            let rows: Vec<_> = sweep(&cfg.algorithm, &problem, &grid)?
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            write_text(&dir.join("sweep.csv"), &sweep_csv(&rows)?)?;
        }
        Some(alpha) => match dual_search(&cfg.algorithm, &problem, alpha, &grid) {
            Ok(res) => {
                write_text(&dir.join("sweep.csv"), &sweep_csv(&res.table)?)?;
                res.mask.write_file(&dir.join("mask.txt"))?;
                report["dual"] = json!({
                    "alpha": alpha,
                    "k": res.k,
                    "full_loss": res.full_loss,
                    "full_acc": res.full_accuracy,
                });
            }
            Err(Error::NoFeasibleSparsity { alpha, table }) => {
                // keep the evidence before failing
                write_text(&dir.join("sweep.csv"), &sweep_csv(&table)?)?;
                return Err(Error::NoFeasibleSparsity { alpha, table });
            }
            Err(e) => return Err(e),
        },
    }
    report["wall_time"] = json!(start.elapsed().as_secs_f64());
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}

fn attack_report(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    mask: &MinimizationMask,
    algorithm: &str,
) -> Result<AttackReport> {
    mask.check_dims(prep.target.n(), prep.target.p())?;
    let x = prep.target.features();
    let minimized = MinimizedDataset::new(x, mask)?;
    let rir = reidentification_risk(x, &minimized)?;
    let rcr = reconstruction_risk(x, &minimized, &prep.imputer)?;
    let mir = match &prep.nonmembers {
        Some(non) => {
            let model = target_utility(
                &prep.target,
                mask,
                cfg.lambda,
                &prep.imputer,
                cfg.train_options(),
            )?
            .params;
            let (m, nm) = loss_score_mia(&model, &prep.target, non)?;
            Some(mir_auc(&m, &nm)?)
        }
        None => None,
    };
    Ok(AttackReport {
        rir,
        rcr,
        mir,
        algorithm: algorithm.to_string(),
        k: mask.k(),
        seed: cfg.seed,
    })
}

pub fn cmd_attack(cfg: &ExperimentConfig, mask_path: &Path) -> Result<Value> {
    let prep = prepare(cfg)?;
    let mask = MinimizationMask::read_file(mask_path)?;
    let report = attack_report(cfg, &prep, &mask, cfg.algorithm.name())?;
    let value = json!({
        "config": config_value(cfg)?,
        "mask": mask_path,
        "attack": report,
    });
    write_json(&out_dir(cfg)?.join("attack.json"), &value)?;
    Ok(value)
}

pub fn cmd_defend(cfg: &ExperimentConfig, mask_path: &Path) -> Result<Value> {
    let prep = prepare(cfg)?;
    let base = MinimizationMask::read_file(mask_path)?;
    base.check_dims(prep.target.n(), prep.target.p())?;
    let scores = privacy_scores(&prep.target, cfg.scores)?;
    let defended = apply_privacy_scores(&base, &scores, cfg.beta, base.k())?;
    let before = attack_report(cfg, &prep, &base, cfg.algorithm.name())?;
    let after = attack_report(cfg, &prep, &defended, cfg.algorithm.name())?;
    let dir = out_dir(cfg)?;
    defended.write_file(&dir.join("defended_mask.txt"))?;
    write_text(
        &dir.join("scores.csv"),
        &scores.to_csv(prep.target.feature_names())?,
    )?;
    let value = json!({
        "config": config_value(cfg)?,
        "mask": mask_path,
        "beta": cfg.beta,
        "scores": cfg.scores,
        "before": before,
        "after": after,
    });
    write_json(&dir.join("defense.json"), &value)?;
    Ok(value)
}

/// Runs the four theory checks on seeded synthetic instances. Returns the
/// report and whether every check holds.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<(Value, bool)> {
    let seed = cfg.seed;
    let lambda = cfg.theory_lambda;
    let mut checks: Vec<BoundCheckResult> = Vec::new();
    let run = || -> Result<Vec<BoundCheckResult>> {
        let setup = GaussianLinearSetup {
            var_x: vec![1.0, 2.0, 0.5],
            coef: vec![1.5, -0.5, 2.0],
            noise_var: 1.0,
        };
        let fs = check_feature_selection_thm(&setup, &[1], 200_000, seed)?;
        let sampling_data = random_logistic_instance(20, 3, seed)?;
        let sampling = check_sampling_bound(&sampling_data, lambda, 20, 30, seed, 1.1)?;
        let utility_data = random_logistic_instance(20, 3, seed.wrapping_add(1))?;
        let utility = check_utility_bound(&utility_data, lambda, 5, 50, seed)?;
        let taylor_data = random_logistic_instance(10, 3, seed.wrapping_add(2))?;
        let taylor = check_taylor_residual(&taylor_data, lambda, &[1e-2, 1e-3, 1e-4], seed)?
            .as_bound_check(format!("n=10 p=3 lambda={lambda} seed={seed}"));
        Ok(vec![fs, sampling, utility, taylor])
    };
    let outcome = run();
    let failure = match outcome {
        Ok(c) => {
            checks = c;
            None
        }
        Err(e) => Some(e),
    };
    let all_hold = failure.is_none() && checks.iter().all(|c| c.holds);
    let value = json!({
        "config": config_value(cfg)?,
        "checks": checks,
        "all_hold": all_hold,
        "error": failure.as_ref().map(|e| e.to_string()),
    });
    write_json(&out_dir(cfg)?.join("verify.json"), &value)?;
    match failure {
        Some(e) => Err(e),
        None => Ok((value, all_hold)),
    }
}

pub fn cmd_multiplicity(cfg: &ExperimentConfig) -> Result<Value> {
    if cfg.runs < 2 {
        return Err(Error::InvalidArgument("multiplicity needs at least 2 runs".into()));
    }
    let k = cfg.require_k()?;
    let prep = prepare(cfg)?;
    let evo = match &cfg.algorithm {
        Algorithm::Evolutionary(e) => e.clone(),
        _ => EvoConfig::default(),
    };
    let mut masks = Vec::with_capacity(cfg.runs);
    let mut accuracies = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs as u64 {
        let run_cfg = evo.clone().with_seed(cfg.seed.wrapping_add(r));
        let res = evolutionary_mask(
            &prep.target,
            cfg.lambda,
            k,
            &prep.imputer,
            &run_cfg,
            cfg.train_options(),
        )?;
        let t = target_utility(
            &prep.target,
            &res.mask,
            cfg.lambda,
            &prep.imputer,
            cfg.train_options(),
        )?;
        accuracies.push(t.accuracy);
        masks.push(res.mask);
    }
    let runs = masks.len();
    let mut matrix = DMatrix::<f64>::zeros(runs, runs);
    for a in 0..runs {
        for b in 0..runs {
            matrix[(a, b)] = overlap(&masks[a], &masks[b])?;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string()];
    header.extend((0..runs).map(|r| format!("run_{r}")));
    w.write_record(&header)?;
    for a in 0..runs {
        let mut rec = vec![format!("run_{a}")];
        rec.extend((0..runs).map(|b| matrix[(a, b)].to_string()));
        w.write_record(&rec)?;
    }
    let csv_text = String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?,
    )
    .expect("csv output is utf-8");
    let max_off = (0..runs)
        .flat_map(|a| (0..runs).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| matrix[(a, b)])
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let dir = out_dir(cfg)?;
    write_text(&dir.join("overlap.csv"), &csv_text)?;
    let value = json!({
        "config": config_value(cfg)?,
        "k": k,
        "accuracies": accuracies,
        "accuracy_spread": hi - lo,
        "max_off_diagonal_overlap": max_off,
    });
    write_json(&dir.join("multiplicity.json"), &value)?;
    Ok(value)
}

pub fn cmd_impute(cfg: &ExperimentConfig, mask_path: &Path) -> Result<Value> {
    let prep = prepare(cfg)?;
    let mask = MinimizationMask::read_file(mask_path)?;
    let minimized = MinimizedDataset::new(prep.target.features(), &mask)?;
    let filled = impute(&minimized, &prep.imputer)?;
    let dir = out_dir(cfg)?;
    write_csv(&prep.target.with_features(filled)?, &dir.join("imputed.csv"))?;
    let value = json!({
        "config": config_value(cfg)?,
        "mask": mask_path,
        "imputer": prep.imputer.name(),
        "k": mask.k(),
    });
    write_json(&dir.join("impute.json"), &value)?;
    Ok(value)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| -> Result<i32> {
        let common = match &cli.command {
            Command::Minimize(c) | Command::Sweep(c) | Command::Verify(c) | Command::Multiplicity(c) => c,
            Command::Attack(m) | Command::Defend(m) | Command::Impute(m) => &m.common,
        };
        configure_threads(common.threads)?;
        let cfg = common.resolve()?;
        let report = match &cli.command {
            Command::Minimize(_) => cmd_minimize(&cfg)?,
            Command::Sweep(_) => cmd_sweep(&cfg)?,
            Command::Attack(m) => cmd_attack(&cfg, &m.mask)?,
            Command::Defend(m) => cmd_defend(&cfg, &m.mask)?,
            Command::Multiplicity(_) => cmd_multiplicity(&cfg)?,
            Command::Impute(m) => cmd_impute(&cfg, &m.mask)?,
            Command::Verify(_) => {
                let (report, holds) = cmd_verify(&cfg)?;
                println!("{}", serde_json::to_string_pretty(&report)?);
                return Ok(if holds { 0 } else { 3 });
            }
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(0)
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
