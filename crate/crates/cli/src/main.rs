use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmgm::analysis::{
    centrality, hamming_distance, knn_impute, load_csv, load_schema, read_csv, write_csv, EdgeLength, FitMetadata,
    GraphDocument, NodeRecord, DEFAULT_NEIGHBORS,
};
use qmgm::benchmark::{
    confusion_metrics, run_replications, true_graph, BenchmarkConfig, DataSource, DgpKind, Learner, RecoveryMetrics,
};
use qmgm::mgm::{fit_mgm, select_mgm_graph, MgmConfig};
use qmgm::model::{log_spaced_lambdas, DEFAULT_NONZERO_TOLERANCE};
use qmgm::penalized::Estimator;
use qmgm::selection::Selection;
use qmgm::{fit_qmgm, select_graph, QmgmConfig, QmgmError, QuantileGrid, ResidualScale, SelectionCriterion};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "qmgm", version, about = "Quantile mixed graphical models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Comma-separated quantile levels [default: octiles for fit]
    #[arg(long, global = true, value_delimiter = ',')]
    tau_levels: Option<Vec<f64>>,
    #[arg(long, global = true, default_value_t = 0.001)]
    lambda_min: f64,
    #[arg(long, global = true, default_value_t = 5.0)]
    lambda_max: f64,
    /// Number of log-equispaced penalties [default: 100 for fit, 50 for simulate]
    #[arg(long, global = true)]
    lambda_count: Option<usize>,
    /// aic, bic, bicp, bic2p or bic3p
    #[arg(long, global = true)]
    criterion: Option<String>,
    /// Explicit BIC constant; overrides --criterion
    #[arg(long, global = true)]
    cn: Option<f64>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Coefficients at or below this magnitude count as zero
    #[arg(long, global = true, default_value_t = DEFAULT_NONZERO_TOLERANCE)]
    tolerance: f64,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Step-two estimator: pseudo-response or implicit-equation
    #[arg(long, global = true, default_value = "pseudo-response")]
    estimator: String,
    /// Penalize pseudo-response fits on the original rather than the standardized scale
    #[arg(long, global = true)]
    no_standardize: bool,
}

impl Global {
    fn estimator(&self) -> std::result::Result<Estimator, Failure> {
        Estimator::parse(&self.estimator).ok_or_else(|| {
            Failure::Usage(format!("unknown estimator `{}` (expected pseudo-response or implicit-equation)", self.estimator))
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a graph to a CSV file and write its document (and a .dot next to it)
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "")]
        missing_token: String,
        /// qmgm or mgm
        #[arg(long, default_value = "qmgm")]
        learner: String,
        /// Use link-inverse fitted values in the criterion residuals
        #[arg(long)]
        inverse_residuals: bool,
    },
    /// Run Monte Carlo replications on synthetic data
    Simulate {
        /// main, binary or null
        #[arg(long, default_value = "main")]
        variant: String,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long = "R", alias = "replications", default_value_t = 20)]
        replications: usize,
        #[arg(long, value_delimiter = ',', default_value = "qmgm1,qmgm3,qmgm7,mgm")]
        learners: Vec<String>,
        /// Criteria to evaluate [default: all five]
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<String>>,
    },
    /// Write the synthetic true graph as a document
    Truth {
        #[arg(long, default_value = "main")]
        variant: String,
    },
    /// Recovery metrics of an estimated graph against a true one
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Degree, betweenness and closeness of a graph document
    Centrality {
        #[arg(long)]
        graph: PathBuf,
        /// Use 1/strength as edge length
        #[arg(long)]
        weighted: bool,
    },
    /// Normalized Hamming distance between two graph documents
    Hamming { a: PathBuf, b: PathBuf },
    /// Fill missing cells from the k nearest complete rows
    Impute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "")]
        missing_token: String,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
        k: usize,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<QmgmError> for Failure {
    fn from(e: QmgmError) -> Self {
        match e {
            QmgmError::Config(_) | QmgmError::LambdaGrid(_) | QmgmError::QuantileGrid(_) => Failure::Usage(e.to_string()),
            QmgmError::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Fit { data, schema, missing_token, learner, inverse_residuals } => {
            fit(g, data, schema, missing_token, learner, *inverse_residuals)
        }
        Command::Simulate { variant, n, replications, learners, criteria } => {
            simulate(g, variant, *n, *replications, learners, criteria.as_deref())
        }
        Command::Truth { variant } => {
            let kind = parse_variant(variant)?;
            let nodes = qmgm::benchmark::dgp::schema(kind)
                .into_iter()
                .map(|s| NodeRecord { name: s.name, kind: s.kind, domain: None })
                .collect();
            let fit = FitMetadata { learner: "truth".into(), ..Default::default() };
            emit(g, &GraphDocument::from_graph(&true_graph(), nodes, fit)?.to_json()?)
        }
        Command::Metrics { truth, estimate } => {
            let t = GraphDocument::load(truth)?.to_graph()?;
            let e = GraphDocument::load(estimate)?.to_graph()?;
            let m = confusion_metrics(&t, &e)?;
            let mut out = RecoveryMetrics::NAMES.join(",");
            out.push('\n');
            out.push_str(&m.values().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
            out.push('\n');
            emit(g, &out)
        }
        Command::Centrality { graph, weighted } => {
            let doc = GraphDocument::load(graph)?;
            let length = if *weighted { EdgeLength::InverseStrength } else { EdgeLength::Unit };
            let r = centrality(&doc.to_graph()?, length);
            let mut out = String::from("node,degree,betweenness,closeness\n");
            for (v, node) in doc.nodes.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", node.name, r.degree[v], r.betweenness[v], r.closeness[v]));
            }
            emit(g, &out)
        }
        Command::Hamming { a, b } => {
            let a = GraphDocument::load(a)?.to_graph()?;
            let b = GraphDocument::load(b)?.to_graph()?;
            emit(g, &format!("{}\n", hamming_distance(&a, &b)?))
        }
        Command::Impute { data, schema, missing_token, k } => {
            let schema = load_schema(schema)?;
            let d = read_csv(std::fs::File::open(data)?, &schema, missing_token)?;
            let imputed = knn_impute(&d, *k)?;
            let mut buf = Vec::new();
            write_csv(&imputed, &mut buf, missing_token)?;
            emit(g, &String::from_utf8_lossy(&buf))
        }
    }
}

fn emit(g: &Global, text: &str) -> CliResult {
    match &g.output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_variant(v: &str) -> std::result::Result<DgpKind, Failure> {
    DgpKind::parse(v).ok_or_else(|| Failure::Usage(format!("unknown variant `{v}` (expected main or binary)")))
}

fn lambdas(g: &Global, default_count: usize) -> std::result::Result<Vec<f64>, Failure> {
    Ok(log_spaced_lambdas(g.lambda_min, g.lambda_max, g.lambda_count.unwrap_or(default_count))?)
}

fn criterion_for(g: &Global, p: usize, default: &str) -> std::result::Result<SelectionCriterion, Failure> {
    if let Some(cn) = g.cn {
        return Ok(SelectionCriterion::bic(cn)?);
    }
    Ok(SelectionCriterion::from_name(g.criterion.as_deref().unwrap_or(default), p)?)
}

fn fit(g: &Global, data: &Path, schema: &Path, missing: &str, learner: &str, inverse: bool) -> CliResult {
    let schema_doc = load_schema(schema)?;
    let dataset = load_csv(data, schema, missing)?;
    if dataset.missing_count() > 0 {
        return Err(Failure::Data(format!(
            "{} missing cells; run `qmgm impute` first",
            dataset.missing_count()
        )));
    }
    let dataset = dataset.validate_and_standardize()?;
    let grid = lambdas(g, 100)?;
    let criterion = criterion_for(g, dataset.p(), "bic")?;
    let (selection, tau_grid): (Selection, Vec<f64>) = match learner {
        "qmgm" => {
            let levels = match &g.tau_levels {
                Some(t) => QuantileGrid::new(t.clone())?,
                None => QuantileGrid::standard(7)?,
            };
            let mut cfg = QmgmConfig::new(levels.clone(), grid);
            cfg.nonzero_tolerance = g.tolerance;
            cfg.estimator = g.estimator()?;
            cfg.standardize = !g.no_standardize;
            let cube = fit_qmgm(&dataset, &cfg)?;
            if cube.unconverged() > 0 {
                eprintln!("warning: {} of the path fits hit the iteration cap", cube.unconverged());
            }
            let scale = if inverse { ResidualScale::Inverse } else { ResidualScale::Linear };
            (select_graph(&cube, &dataset, criterion, scale, g.tolerance)?, levels.levels().to_vec())
        }
        "mgm" => {
            let cfg = MgmConfig { nonzero_tolerance: g.tolerance, ..MgmConfig::default() };
            let cube = fit_mgm(&dataset, &grid, &cfg)?;
            (select_mgm_graph(&cube, &dataset, criterion, g.tolerance)?, vec![])
        }
        other => return Err(Failure::Usage(format!("unknown learner `{other}` (expected qmgm or mgm)"))),
    };
    let nodes = schema_doc
        .variables
        .iter()
        .zip(&schema_doc.domains)
        .map(|(v, d)| NodeRecord { name: v.name.clone(), kind: v.kind, domain: d.clone() })
        .collect();
    let meta = FitMetadata {
        learner: learner.into(),
        tau_grid,
        lambda: Some(selection.lambda),
        criterion: Some(criterion.label()),
        nonzero_tolerance: g.tolerance,
        tolerance: 1e-7,
    };
    let doc = GraphDocument::from_graph(&selection.graph, nodes, meta)?;
    eprintln!(
        "selected lambda {:.6} (index {}), {} edges",
        selection.lambda,
        selection.index,
        selection.graph.edge_count()
    );
    match &g.output {
        Some(p) => {
            doc.save(p)?;
            std::fs::write(p.with_extension("dot"), doc.to_dot())?;
        }
        None => std::io::stdout().write_all(doc.to_json()?.as_bytes())?,
    }
    Ok(())
}

fn simulate(
    g: &Global,
    variant: &str,
    n: usize,
    replications: usize,
    learners: &[String],
    criteria: Option<&[String]>,
) -> CliResult {
    let source = match variant {
        "null" => DataSource::Independent { continuous: 3, count: 3 },
        v => DataSource::Dgp(parse_variant(v)?),
    };
    let mut cfg = BenchmarkConfig::standard(source, n, replications, g.seed)?;
    cfg.learners = learners.iter().map(|l| Learner::parse(l)).collect::<qmgm::Result<_>>()?;
    if let Some(c) = criteria {
        cfg.criteria = c.to_vec();
    }
    cfg.lambdas = lambdas(g, 50)?;
    cfg.nonzero_tolerance = g.tolerance;
    cfg.estimator = g.estimator()?;
    cfg.standardize = !g.no_standardize;
    if g.tau_levels.is_some() {
        return Err(Failure::Usage("simulate takes quantile grids from --learners (qmgm<L>)".into()));
    }
    let report = run_replications(&cfg)?;
    let dir = g.output.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    report.write_summary_csv(&dir.join("summary.csv"))?;
    report.write_timing_csv(&dir.join("timing.csv"))?;
    report.write_manifest(&dir.join("manifest.txt"))?;
    for l in &cfg.learners {
        if let Some(auc) = report.median(*l, "path", "auc") {
            println!("{:<8} median AUC {auc:.3}", l.label());
        }
    }
    if !report.failures.is_empty() {
        eprintln!("warning: {} replications failed", report.failures.len());
    }
    if report.outcomes.is_empty() {
        return Err(Failure::Numerical("every replication failed".into()));
    }
    Ok(())
}
