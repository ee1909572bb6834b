//! Command-line front end: every pipeline stage over CSV / Newick / JSON
//! files. JSON goes to stdout, human summaries to stderr, and the exit code
//! carries the scientific verdict (0 compatible or not rejected, 1
//! incompatible or rejected, 2 usage or I/O error, 3 numerical failure).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::RngCore as _;

use corrtree::geometry::{self, CompatMode, GeometryError, Role, SymMatrix};
use corrtree::inference::{self, BayesMode, InferenceError};
use corrtree::io::{self, IoError};
use corrtree::numerics::NumericsError;
use corrtree::rng::Stream;
use corrtree::simlab::{
    self, ExperimentConfig, QuartetSelection, SimError, WeightLaw,
};
use corrtree::trees::{parse_newick, serialize_newick, Quartet, Tree, TreeError};
use corrtree::wishart::WishartError;

const EXIT_REJECTED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

struct CliErr {
    code: u8,
    msg: String,
}

impl CliErr {
    fn usage(msg: impl Into<String>) -> Self {
        CliErr {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    fn numerical(msg: impl Into<String>) -> Self {
        CliErr {
            code: EXIT_NUMERICAL,
            msg: msg.into(),
        }
    }
}

impl From<TreeError> for CliErr {
    fn from(e: TreeError) -> Self {
        CliErr::usage(e.to_string())
    }
}

impl From<NumericsError> for CliErr {
    fn from(e: NumericsError) -> Self {
        CliErr::numerical(e.to_string())
    }
}

impl From<GeometryError> for CliErr {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::NotPsd | GeometryError::Numerics(_) => {
                CliErr::numerical(e.to_string())
            }
            other => CliErr::usage(other.to_string()),
        }
    }
}

impl From<WishartError> for CliErr {
    fn from(e: WishartError) -> Self {
        CliErr::numerical(e.to_string())
    }
}

impl From<InferenceError> for CliErr {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NearSingular(_)
            | InferenceError::Wishart(_)
            | InferenceError::Numerics(_) => CliErr::numerical(e.to_string()),
            InferenceError::Geometry(g) => g.into(),
            other => CliErr::usage(other.to_string()),
        }
    }
}

impl From<IoError> for CliErr {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Geometry(g) => g.into(),
            other => CliErr::usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliErr {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Inference(i) => i.into(),
            SimError::Geometry(g) => g.into(),
            other => CliErr::usage(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "corrtree",
    version,
    about = "Decide whether Gaussian data is compatible with a latent tree model, without fitting one"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckModeArg {
    /// Triple-product constraints only (pre-screen).
    Triples,
    /// Triples plus the quartet-level conditions.
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum BayesModeArg {
    Triples,
    #[value(name = "quartet-full")]
    QuartetFull,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Null,
    Power,
    Recovery,
    Volume,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    /// Minimal determining quartet set (m - 3 quartets).
    Defining,
    /// Testing set of size C(m,2) - (2m - 3).
    Testing,
}

#[derive(Subcommand)]
enum Cmd {
    /// Geometric membership test of a covariance or correlation matrix.
    Check {
        /// Square CSV matrix, optional header row of variable names.
        #[arg(long)]
        matrix: PathBuf,
        /// Newick tree; with it the tree-specific constraints are checked.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = CheckModeArg::Full)]
        mode: CheckModeArg,
    },
    /// Tetrad chi-square test of a quartet or a whole tree.
    Test {
        /// Data CSV (rows = observations).
        #[arg(long, conflicts_with = "scatter")]
        data: Option<PathBuf>,
        /// Precomputed scatter matrix CSV; requires --n.
        #[arg(long, requires = "n")]
        scatter: Option<PathBuf>,
        /// Sample size behind a scatter matrix.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tree: PathBuf,
        /// Single quartet "ij|kl"; without it the whole tree is tested.
        #[arg(long)]
        quartet: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Subtract column means before forming the scatter matrix.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        center: bool,
    },
    /// Test every binary tree on the observed variables and rank by p-value.
    Explore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        center: bool,
    },
    /// Classify every 4-subset by single-quartet tests.
    Screen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        center: bool,
    },
    /// Posterior probability of tree compatibility under an
    /// inverse-Wishart prior.
    Bayes {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = BayesModeArg::Triples)]
        mode: BayesModeArg,
        /// Designated quartet "ij|kl" (required for quartet-full).
        #[arg(long)]
        quartet: Option<String>,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        center: bool,
    },
    /// Run a scripted simulation experiment and write CSV + manifest.
    Simulate {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        n: usize,
        /// Replicates; for the volume experiment this is the draw count.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed edge correlation.
        #[arg(long, conflicts_with = "rho_range")]
        rho: Option<f64>,
        /// Uniform edge-correlation range "LO,HI".
        #[arg(long)]
        rho_range: Option<String>,
        /// Single quartet "ij|kl" to test (required for power).
        #[arg(long)]
        quartet: Option<String>,
        #[arg(long, value_enum, default_value_t = SelectionArg::Defining)]
        selection: SelectionArg,
        #[arg(long)]
        alpha: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate data from a latent tree model.
    Gen {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        rho: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_tree(path: &Path) -> Result<Tree, CliErr> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliErr::usage(format!("{}: {e}", path.display())))?;
    Ok(parse_newick(text.trim())?)
}

/// Resolve --seed, generating and printing one when absent.
fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = rand::rngs::OsRng.next_u64();
            eprintln!("no --seed given; using generated seed {s}");
            s
        }
    }
}

/// Load a scatter matrix and its effective degrees of freedom from either a
/// data table or a precomputed scatter file.
fn load_scatter(
    data: Option<&Path>,
    scatter: Option<&Path>,
    n: Option<usize>,
    center: bool,
) -> Result<(SymMatrix, usize), CliErr> {
    match (data, scatter) {
        (Some(d), None) => {
            let (x, names) = io::read_data_csv(d)?;
            if x.rows < 2 {
                return Err(CliErr::usage(format!(
                    "{}: need at least two observations",
                    d.display()
                )));
            }
            let (s, df) = simlab::scatter_matrix(&x, center);
            let rows: Vec<Vec<f64>> = (0..s.rows).map(|r| s.row(r).to_vec()).collect();
            Ok((SymMatrix::new(Role::Scatter, &rows, names)?, df))
        }
        (None, Some(p)) => {
            let n = n.ok_or_else(|| CliErr::usage("--scatter requires --n"))?;
            let s = io::read_matrix_csv(p, Role::Scatter)?;
            Ok((s, n))
        }
        _ => Err(CliErr::usage("provide exactly one of --data or --scatter")),
    }
}

fn emit<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serialization")
    );
}

fn parse_rho_range(s: &str) -> Result<(f64, f64), CliErr> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(CliErr::usage("--rho-range expects \"LO,HI\""));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| CliErr::usage("--rho-range: LO is not a number"))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| CliErr::usage("--rho-range: HI is not a number"))?;
    Ok((lo, hi))
}

fn run(cli: Cli) -> Result<u8, CliErr> {
    match cli.cmd {
        Cmd::Check {
            matrix,
            tree,
            tol,
            mode,
        } => {
            let s = io::read_matrix_csv(&matrix, Role::Covariance)?;
            let mode = match mode {
                CheckModeArg::Triples => CompatMode::TriplesOnly,
                CheckModeArg::Full => CompatMode::Full,
            };
            let verdict = match tree {
                Some(tp) => {
                    let t = read_tree(&tp)?;
                    geometry::t_compatible(&s, &t, tol, mode)?
                }
                None => geometry::tree_compatible(&s, tol, mode)?,
            };
            emit(&verdict);
            if verdict.member {
                eprintln!("compatible (tol {tol:.1e})");
                Ok(0)
            } else {
                let w = verdict.witness.as_ref().expect("witness on failure");
                eprintln!(
                    "incompatible: {} at ({}) with slack {:.3e}",
                    w.kind,
                    w.indices.join(","),
                    w.slack
                );
                Ok(EXIT_REJECTED)
            }
        }
        Cmd::Test {
            data,
            scatter,
            n,
            tree,
            quartet,
            alpha,
            center,
        } => {
            let (s, df) = load_scatter(data.as_deref(), scatter.as_deref(), n, center)?;
            let t = read_tree(&tree)?;
            let report = match &quartet {
                Some(text) => {
                    let q = Quartet::parse(text)?;
                    inference::quartet_test(&s, df, &q)?
                }
                None => inference::confirmatory_test(&s, df, &t)?,
            };
            emit(&report);
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if report.p_value < alpha {
                eprintln!(
                    "rejected at alpha {alpha}: statistic {:.4}, dof {}, p {:.4e}",
                    report.statistic, report.dof, report.p_value
                );
                Ok(EXIT_REJECTED)
            } else {
                eprintln!(
                    "not rejected: statistic {:.4}, dof {}, p {:.4}",
                    report.statistic, report.dof, report.p_value
                );
                Ok(0)
            }
        }
        Cmd::Explore {
            data,
            alpha,
            center,
        } => {
            let (s, df) = load_scatter(Some(&data), None, None, center)?;
            let report = inference::exploratory_scan(&s, df, alpha)?;
            emit(&report);
            match &report.candidate {
                Some(t) => {
                    eprintln!(
                        "candidate tree: {t} (Bonferroni alpha {:.5})",
                        report.bonferroni_alpha
                    );
                    Ok(0)
                }
                None => {
                    eprintln!("all {} trees rejected", report.ranked.len());
                    Ok(EXIT_REJECTED)
                }
            }
        }
        Cmd::Screen {
            data,
            alpha,
            center,
        } => {
            let (s, df) = load_scatter(Some(&data), None, None, center)?;
            let report = inference::quartet_screen(&s, df, alpha)?;
            emit(&report);
            let resolved = report
                .subsets
                .iter()
                .filter(|c| c.resolved.is_some())
                .count();
            eprintln!("{resolved}/{} subsets resolved", report.subsets.len());
            Ok(0)
        }
        Cmd::Bayes {
            data,
            draws,
            seed,
            mode,
            quartet,
            center,
        } => {
            let (s, df) = load_scatter(Some(&data), None, None, center)?;
            let seed = resolve_seed(seed);
            let q = quartet.as_deref().map(Quartet::parse).transpose()?;
            let mode = match mode {
                BayesModeArg::Triples => BayesMode::Triples,
                BayesModeArg::QuartetFull => BayesMode::QuartetFull,
            };
            let report =
                inference::bayes_compatibility(&s, df, draws, seed, mode, q.as_ref(), None)?;
            emit(&report);
            eprintln!(
                "posterior compatibility probability {:.4} over {} draws",
                report.probability, report.draws
            );
            Ok(0)
        }
        Cmd::Simulate {
            experiment,
            tree,
            n,
            reps,
            seed,
            rho,
            rho_range,
            quartet,
            selection,
            alpha,
            out,
        } => {
            std::fs::create_dir_all(&out)
                .map_err(|e| CliErr::usage(format!("{}: {e}", out.display())))?;
            let seed = resolve_seed(seed);
            let weight_law = match (rho, &rho_range) {
                (Some(v), _) => WeightLaw::Fixed(v),
                (None, Some(r)) => {
                    let (lo, hi) = parse_rho_range(r)?;
                    WeightLaw::Uniform(lo, hi)
                }
                (None, None) => WeightLaw::Uniform(0.5, 1.0),
            };
            match experiment {
                ExperimentArg::Volume => {
                    let draws = reps.unwrap_or(1_000_000);
                    let v = simlab::volume_ratio_tripod(draws, seed, true);
                    io::write_json(&out.join("manifest.json"), &serde_json::json!({
                        "experiment": "volume",
                        "draws": draws,
                        "seed": seed,
                        "psd_filter": true,
                    }))?;
                    std::fs::write(
                        out.join("volume.csv"),
                        format!(
                            "estimate,std_error,kept,total\n{},{},{},{}\n",
                            v.estimate, v.std_error, v.kept, v.total
                        ),
                    )
                    .map_err(|e| CliErr::usage(format!("{}: {e}", out.display())))?;
                    emit(&v);
                    eprintln!(
                        "volume ratio {:.4} +- {:.4} ({} kept of {})",
                        v.estimate, v.std_error, v.kept, v.total
                    );
                    Ok(0)
                }
                ExperimentArg::Recovery => {
                    let t = tree
                        .as_deref()
                        .ok_or_else(|| CliErr::usage("--tree is required for recovery"))
                        .and_then(read_tree)?;
                    let rho = rho.unwrap_or(0.7);
                    let reps = reps.unwrap_or(100);
                    let alpha = alpha.unwrap_or(0.1);
                    let rep = simlab::recovery_experiment(&t, rho, n, reps, alpha, seed)?;
                    let result = serde_json::json!({
                        "experiment": "recovery",
                        "report": &rep,
                    });
                    io::write_json(&out.join("manifest.json"), &result)?;
                    emit(&result);
                    eprintln!(
                        "true tree top-ranked in {:.1}% and confirmed in {:.1}% of replicates",
                        100.0 * rep.candidate_rate,
                        100.0 * rep.confirmed_rate
                    );
                    Ok(0)
                }
                ExperimentArg::Null | ExperimentArg::Power => {
                    let t = tree
                        .as_deref()
                        .ok_or_else(|| CliErr::usage("--tree is required for this experiment"))
                        .and_then(read_tree)?;
                    let selection = match (&quartet, experiment, selection) {
                        (Some(text), _, _) => QuartetSelection::Single(Quartet::parse(text)?),
                        (None, ExperimentArg::Power, _) => {
                            return Err(CliErr::usage("--quartet is required for power"))
                        }
                        (None, _, SelectionArg::Defining) => QuartetSelection::Defining,
                        (None, _, SelectionArg::Testing) => QuartetSelection::Testing,
                    };
                    let cfg = ExperimentConfig {
                        tree: t.clone(),
                        weight_law,
                        n,
                        reps: reps.unwrap_or(2000),
                        seed,
                        selection,
                    };
                    let alpha = alpha.unwrap_or(0.05);
                    let (hist, rate) = match experiment {
                        ExperimentArg::Null => (simlab::null_distribution_experiment(&cfg)?, None),
                        _ => {
                            let (h, r) = simlab::power_experiment(&cfg, alpha)?;
                            (h, Some(r))
                        }
                    };
                    io::write_histogram_csv(&out.join("histogram.csv"), &hist)?;
                    let manifest = serde_json::json!({
                        "experiment": match experiment {
                            ExperimentArg::Null => "null",
                            _ => "power",
                        },
                        "tree": serialize_newick(&t),
                        "weight_law": cfg.weight_law.describe(),
                        // Weights are drawn once per experiment; replicates
                        // share the same true covariance.
                        "weight_policy": "drawn once per experiment",
                        "n": cfg.n, "reps": cfg.reps, "seed": seed,
                        "quartet": quartet,
                        "alpha": alpha,
                        "ks_distance": hist.ks_distance,
                        "rejection_rate": rate,
                    });
                    io::write_json(&out.join("manifest.json"), &manifest)?;
                    emit(&manifest);
                    match rate {
                        Some(r) => eprintln!(
                            "KS {:.4}; rejection rate {:.3} at alpha {alpha}",
                            hist.ks_distance, r
                        ),
                        None => eprintln!("KS distance {:.4} against chi2_{}", hist.ks_distance, hist.dof),
                    }
                    Ok(0)
                }
            }
        }
        Cmd::Gen {
            tree,
            rho,
            n,
            seed,
            out,
        } => {
            let t = read_tree(&tree)?;
            let seed = resolve_seed(seed);
            let w = geometry::EdgeWeights::constant(&t, rho);
            let x = simlab::gen_tree_data(&t, &w, n, &mut Stream::new(seed))?;
            io::write_data_csv(&out, &x, Some(&t.leaf_labels()))?;
            eprintln!(
                "wrote {n} observations of {} variables to {} (seed {seed})",
                t.leaf_count(),
                out.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
