use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dipole_tree::data::{load_csv, load_csv_with, write_csv, CsvSchema, DEFAULT_ZETA1, DEFAULT_ZETA2};
use dipole_tree::kernel::KernelChoice;
use dipole_tree::pipeline::{
    self, FitOptions, DEFAULT_ALPHA_C, DEFAULT_BOOTSTRAP, DEFAULT_KAPPA, DEFAULT_VALIDATION_FRACTION,
};
use dipole_tree::qp::{QpMethod, SolverConfig};
use dipole_tree::sim;
use dipole_tree::splitter::DEFAULT_EPSILON;
use dipole_tree::tree::{SurvivalTree, DEFAULT_MIN_NODE};
use dipole_tree::{Error, Result};

/// Survival trees split by kernel dipole SVMs.
#[derive(Debug, Parser)]
#[command(name = "dipole-tree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow, prune and save a tree.
    Fit {
        data: PathBuf,
        #[command(flatten)]
        cols: Columns,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        kappa: Option<f64>,
        /// Model file to write.
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Also write the fit report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predicted median survival for every row.
    Predict {
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cols: Columns,
        /// CSV of predictions; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concordance and Brier scores for a saved model, or by cross-validation.
    Evaluate {
        data: PathBuf,
        /// Saved model; required unless --folds is given.
        #[arg(long, conflicts_with = "folds")]
        model: Option<PathBuf>,
        /// Cross-validate a fresh fit with this many folds.
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        cols: Columns,
        #[command(flatten)]
        fit: ModelArgs,
        #[arg(long)]
        kappa: Option<f64>,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Brier curve CSV (saved-model mode).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Cross-validated choice of kappa = exp(eta).
    Tune {
        data: PathBuf,
        #[command(flatten)]
        cols: Columns,
        #[command(flatten)]
        fit: ModelArgs,
        /// Comma-separated eta values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = pipeline::default_eta_grid())]
        eta_grid: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-(eta, fold) table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write a simulated dataset and its configuration.
    Simulate {
        /// planar, parabolic, elliptical, hyperbolic or weibull-elliptical.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 2)]
        p: usize,
        #[arg(long, default_value_t = 180)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV to write; the config goes next to it as `<out>.config.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Columns {
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "status")]
    status_col: String,
    /// Columns to ignore, comma-separated.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
}

impl Columns {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            time_col: self.time_col.clone(),
            status_col: self.status_col.clone(),
            exclude: self.exclude.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// linear | quad | poly:d,c | gauss[:sigma2]
    #[arg(long, default_value = "quad")]
    kernel: KernelChoice,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_ZETA1)]
    zeta1: f64,
    #[arg(long, default_value_t = DEFAULT_ZETA2)]
    zeta2: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_NODE)]
    min_node: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA_C)]
    alpha_c: f64,
    /// Held-out share for subtree selection; 0 switches to bootstrap.
    #[arg(long, default_value_t = DEFAULT_VALIDATION_FRACTION)]
    validation_fraction: f64,
    /// Bootstrap replicates used when no validation rows are held out.
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// smo (pairwise, default) or admm (operator splitting).
    #[arg(long, default_value = "smo", value_parser = parse_method)]
    qp_method: QpMethod,
    #[arg(long, default_value_t = SolverConfig::default().tol)]
    qp_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iter)]
    qp_max_iter: usize,
    #[arg(long, default_value_t = SolverConfig::default().rho)]
    qp_rho: f64,
}

impl ModelArgs {
    fn options(&self, kappa: f64) -> Result<FitOptions> {
        if !(self.qp_tol > 0.0 && self.qp_rho > 0.0 && self.qp_max_iter > 0) {
            return Err(Error::InvalidParameter("QP tolerance, rho and iteration cap must be positive".into()));
        }
        Ok(FitOptions {
            kernel: self.kernel,
            kappa,
            epsilon: self.epsilon,
            zeta1: self.zeta1,
            zeta2: self.zeta2,
            min_node: self.min_node,
            alpha_c: self.alpha_c,
            validation_fraction: self.validation_fraction,
            bootstrap: self.bootstrap,
            seed: self.seed,
            qp: SolverConfig {
                method: self.qp_method,
                tol: self.qp_tol,
                max_iter: self.qp_max_iter,
                rho: self.qp_rho,
                ..SolverConfig::default()
            },
        })
    }
}

fn parse_method(s: &str) -> std::result::Result<QpMethod, String> {
    match s {
        "smo" => Ok(QpMethod::Smo),
        "admm" => Ok(QpMethod::Admm),
        _ => Err(format!("unknown QP method `{s}` (expected smo or admm)")),
    }
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, cols, model, kappa, out, report } => {
            let d = load_csv(&data, &cols.schema())?;
            let (tree, rep) = pipeline::fit(&d, &model.options(kappa.unwrap_or(DEFAULT_KAPPA))?)?;
            tree.save(&out)?;
            eprintln!(
                "nodes: {} grown, {} after pruning; model written to {}",
                rep.nodes_grown,
                rep.nodes_pruned,
                out.display()
            );
            emit(&rep, report.as_deref())
        }
        Command::Predict { data, model, cols, out } => {
            let tree = SurvivalTree::load(&model)?;
            let d = load_csv_with(&data, &cols.schema(), &tree.standardization)?;
            let mut w = match &out {
                Some(p) => csv::Writer::from_writer(Box::new(std::fs::File::create(p)?) as Box<dyn std::io::Write>),
                None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
            };
            w.write_record(["row", "leaf", "median", "median_fallback"])?;
            for (i, leaf) in tree.route(&d)?.into_iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    leaf.id.to_string(),
                    leaf.median.to_string(),
                    leaf.median_fallback.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Evaluate { data, model, folds, cols, fit, kappa, out, curve } => match (model, folds) {
            (Some(m), None) => {
                let tree = SurvivalTree::load(&m)?;
                let d = load_csv_with(&data, &cols.schema(), &tree.standardization)?;
                let rep = pipeline::evaluate_tree(&tree, &d)?;
                if let Some(c) = curve {
                    let mut w = csv::Writer::from_path(c)?;
                    w.write_record(["t", "brier", "dropped"])?;
                    for b in &rep.brier_curve {
                        w.write_record([b.t.to_string(), b.score.to_string(), b.dropped.to_string()])?;
                    }
                    w.flush()?;
                }
                emit(&rep, out.as_deref())
            }
            (None, Some(k)) => {
                let d = load_csv(&data, &cols.schema())?;
                let rep = pipeline::cross_validate(&d, k, &fit.options(kappa.unwrap_or(DEFAULT_KAPPA))?)?;
                emit(&rep, out.as_deref())
            }
            _ => Err(Error::InvalidParameter("evaluate needs --model or --folds".into())),
        },
        Command::Tune { data, cols, fit, eta_grid, folds, out, table } => {
            let d = load_csv(&data, &cols.schema())?;
            let rep = pipeline::tune(&d, &eta_grid, folds, &fit.options(DEFAULT_KAPPA)?)?;
            if let Some(t) = table {
                let mut w = csv::Writer::from_path(t)?;
                w.write_record(["eta", "kappa", "fold", "nodes", "ci", "ibs"])?;
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                for row in &rep.rows {
                    for f in &row.cv.folds {
                        w.write_record([
                            row.eta.to_string(),
                            row.kappa.to_string(),
                            f.fold.to_string(),
                            f.nodes.map_or(String::new(), |n| n.to_string()),
                            opt(f.ci),
                            opt(f.ibs),
                        ])?;
                    }
                }
                w.flush()?;
            }
            eprintln!("best eta {} (kappa {})", rep.best_eta, rep.best_kappa);
            emit(&rep, out.as_deref())
        }
        Command::Simulate { preset, p, n, seed, out } => {
            let mut cfg = sim::preset(&preset, p)?;
            cfg.n = n;
            cfg.seed = seed;
            let d = sim::simulate(&cfg)?;
            write_csv(&out, &d, &CsvSchema::default())?;
            let mut sidecar = out.clone().into_os_string();
            sidecar.push(".config.json");
            emit(&cfg, Some(Path::new(&sidecar)))?;
            println!("rows: {}, censored fraction: {}", d.n(), d.censored_fraction());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
