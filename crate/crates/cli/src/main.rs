//! `tgcc` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or invalid argument, 2 data error,
//! 3 numeric abort.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;
use thiserror::Error;

use tgcc::bench::{self, EvalReport};
use tgcc::condenser::{self, SyntheticGraph};
use tgcc::dataio::{self, CondensedBundle, GraphBundle, Provenance, SbmSpec};
use tgcc::pipeline::{self, TgccConfig};
use tgcc::Graph;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tgcc::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tgcc", version, about = "Graph condensation with causal-invariant spectral contrast")]
struct Cli {
    /// Log progress to stderr and print one JSON object per epoch to stdout.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Condense a graph bundle into a condensed bundle.
    Condense {
        #[arg(long)]
        bundle: PathBuf,
        /// JSON config; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sub: Subsample,
    },
    /// Write the intervened graph `V` as a weighted bundle, for inspection.
    Augment {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sub: Subsample,
    },
    /// Build a coreset baseline as a condensed bundle.
    Baseline {
        method: BaselineMethod,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Condensation ratio r; the coreset has max(C, round(r·N)) nodes.
        #[arg(long, default_value_t = 0.026, conflicts_with = "size")]
        ratio: f64,
        /// Explicit coreset size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sub: Subsample,
    },
    /// Evaluate a condensed bundle on a graph bundle.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        condensed: PathBuf,
        /// Graph to evaluate on (the target for transfer protocols).
        #[arg(long)]
        bundle: PathBuf,
        /// JSON config whose `eval` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        sub: Subsample,
    },
    /// Import raw datasets.
    Import {
        #[command(subcommand)]
        source: ImportSource,
    },
    /// Generate synthetic datasets.
    Gen {
        #[command(subcommand)]
        model: GenModel,
    },
    /// Print loss or evaluation tables.
    Report {
        #[command(subcommand)]
        table: ReportTable,
    },
}

#[derive(Debug, clap::Args)]
struct Subsample {
    /// Class-stratified node subsample applied after loading. Results on a
    /// subsample are not comparable to full-graph numbers.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    subsample_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Random,
    Herding,
    Kcenter,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Node,
    Link,
    Transfer,
    TransferLink,
}

#[derive(Debug, Subcommand)]
enum ImportSource {
    /// Planetoid pickles (`ind.<name>.*`) or a LINQS `.content`/`.cites` pair.
    Planetoid {
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the generated split for layouts without a public split.
        #[arg(long, default_value_t = dataio::DEFAULT_SPLIT_SEED)]
        split_seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum GenModel {
    /// Stochastic block model with Gaussian class-mean features.
    Sbm {
        /// Comma-separated block sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<usize>,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        mean_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ReportTable {
    /// Per-epoch loss table of a condensed bundle.
    Loss { condensed: PathBuf },
    /// Summary table of evaluation JSON files.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<TgccConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| tgcc::Error::MissingFile(p.to_path_buf()))?;
            TgccConfig::from_json(&text)?
        }
        None => TgccConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(path: &Path, sub: &Subsample) -> CliResult<GraphBundle> {
    let mut bundle = dataio::read_bundle(path)?;
    if let Some(k) = sub.subsample {
        bundle.graph = bundle.graph.subsample(k, sub.subsample_seed)?;
        bundle
            .provenance
            .insert("subsample".into(), serde_json::json!({"nodes": k, "seed": sub.subsample_seed}));
    }
    Ok(bundle)
}

fn source_provenance(bundle: &GraphBundle) -> Provenance {
    let mut prov = Provenance::new();
    for key in ["dataset", "source_format", "subsample"] {
        if let Some(v) = bundle.provenance.get(key) {
            prov.insert(format!("source_{key}"), v.clone());
        }
    }
    prov
}

fn condense(
    bundle: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    sub: &Subsample,
    verbose: bool,
) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let source = load_graph(bundle, sub)?;
    let g = &source.graph;
    log::info!(
        "condensing {} nodes into {} at ratio {}",
        g.num_nodes(),
        condenser::condensed_size(g.num_nodes(), g.num_classes(), cfg.ratio),
        cfg.ratio
    );
    let mut stdout = std::io::stdout().lock();
    let artifacts = pipeline::run_condense_with(g, &cfg, |rec| {
        if verbose {
            // A closed pipe only loses log lines; the run continues.
            let _ = writeln!(stdout, "{}", serde_json::to_string(rec).expect("records serialize"));
        }
    })?;
    let mut prov = source_provenance(&source);
    prov.insert("method".into(), Value::from("tgcc"));
    prov.insert("seed".into(), Value::from(artifacts.seed));
    dataio::save_condensed(&CondensedBundle::from_artifacts(&artifacts, prov), out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn augment(bundle: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>, sub: &Subsample) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let source = load_graph(bundle, sub)?;
    let v = pipeline::intervened_adjacency(&source.graph, &cfg)?;
    let graph = source.graph.with_adjacency(v.view())?;
    let mut prov = source.provenance.clone();
    prov.insert(
        "intervention".into(),
        serde_json::json!({"rho": cfg.rho, "epsilon": cfg.epsilon, "seed": cfg.seed}),
    );
    dataio::save_bundle(&GraphBundle { graph, provenance: prov }, out)?;
    Ok(())
}

fn baseline(
    method: BaselineMethod,
    bundle: &Path,
    out: &Path,
    ratio: f64,
    size: Option<usize>,
    seed: u64,
    sub: &Subsample,
) -> CliResult<()> {
    let source = load_graph(bundle, sub)?;
    let g = &source.graph;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Usage(format!("--ratio must lie in (0, 1), got {ratio}")));
    }
    let m = size.unwrap_or_else(|| condenser::condensed_size(g.num_nodes(), g.num_classes(), ratio));
    let (name, syn) = match method {
        BaselineMethod::Random => ("random", bench::coreset_random(g, m, seed)?),
        BaselineMethod::Herding => ("herding", bench::coreset_herding(g, m)?),
        BaselineMethod::Kcenter => ("kcenter", bench::coreset_kcenter(g, m, seed)?),
    };
    let mut prov = source_provenance(&source);
    prov.insert("method".into(), Value::from(name));
    prov.insert("seed".into(), Value::from(seed));
    let mut config = serde_json::to_string_pretty(&serde_json::json!({
        "baseline": name,
        "size": m,
        "seed": seed,
    }))
    .expect("static json");
    config.push('\n');
    let bundle = CondensedBundle {
        synthetic: syn,
        config_json: config,
        trace: Vec::new(),
        encoder: None,
        provenance: prov,
    };
    dataio::save_condensed(&bundle, out)?;
    Ok(())
}

fn evaluate(
    protocol: ProtocolArg,
    condensed: &Path,
    bundle: &Path,
    config: Option<&Path>,
    seeds: Option<Vec<u64>>,
    json: Option<&Path>,
    sub: &Subsample,
) -> CliResult<()> {
    let mut settings = load_config(config, None)?.eval;
    if let Some(s) = seeds {
        settings.seeds = s;
    }
    let syn: SyntheticGraph = dataio::load_condensed(condensed)?.synthetic;
    let g: Graph = load_graph(bundle, sub)?.graph;
    let reports = match protocol {
        ProtocolArg::Node => vec![bench::eval_node_classification(&syn, &g, &settings)?],
        ProtocolArg::Link => bench::eval_link_prediction(&syn, &g, &settings)?,
        ProtocolArg::Transfer => bench::eval_transfer(&syn, &g, &settings, false)?,
        ProtocolArg::TransferLink => bench::eval_transfer(&syn, &g, &settings, true)?,
    };
    print!("{}", reports_tsv(&reports));
    if let Some(path) = json {
        let mut text = serde_json::to_string_pretty(&reports).map_err(tgcc::Error::from)?;
        text.push('\n');
        dataio::write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn reports_tsv(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", EvalReport::TSV_HEADER);
    for r in reports {
        out.push_str(&r.tsv_row());
        out.push('\n');
    }
    out
}

fn report(table: &ReportTable) -> CliResult<()> {
    match table {
        ReportTable::Loss { condensed } => {
            let bundle = dataio::load_condensed(condensed)?;
            let (delta, eta) = match TgccConfig::from_json(&bundle.config_json) {
                Ok(cfg) => (cfg.delta, cfg.eta),
                Err(_) if bundle.trace.is_empty() => (0.0, 0.0),
                Err(e) => return Err(e.into()),
            };
            let report = pipeline::LossReport {
                delta,
                eta,
                rows: bundle.trace,
            };
            print!("{}", report.to_tsv());
        }
        ReportTable::Eval { reports } => {
            let mut all = Vec::new();
            for p in reports {
                let text = fs::read_to_string(p).map_err(|_| tgcc::Error::MissingFile(p.clone()))?;
                let parsed: Vec<EvalReport> = serde_json::from_str(&text).map_err(|e| tgcc::Error::Malformed {
                    path: p.clone(),
                    detail: e.to_string(),
                })?;
                all.extend(parsed);
            }
            print!("{}", reports_tsv(&all));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Condense {
            bundle,
            config,
            out,
            seed,
            sub,
        } => condense(&bundle, config.as_deref(), &out, seed, &sub, verbose),
        Command::Augment {
            bundle,
            config,
            out,
            seed,
            sub,
        } => augment(&bundle, config.as_deref(), &out, seed, &sub),
        Command::Baseline {
            method,
            bundle,
            out,
            ratio,
            size,
            seed,
            sub,
        } => baseline(method, &bundle, &out, ratio, size, seed, &sub),
        Command::Eval {
            protocol,
            condensed,
            bundle,
            config,
            seeds,
            json,
            sub,
        } => evaluate(protocol, &condensed, &bundle, config.as_deref(), seeds, json.as_deref(), &sub),
        Command::Import {
            source: ImportSource::Planetoid { raw, out, split_seed },
        } => {
            let bundle = dataio::import_planetoid(&raw, split_seed)?;
            let g = &bundle.graph;
            log::info!(
                "imported {} nodes, {} edges, {} features, {} classes",
                g.num_nodes(),
                g.num_edges(),
                g.feature_dim(),
                g.num_classes()
            );
            dataio::save_bundle(&bundle, &out)?;
            Ok(())
        }
        Command::Gen {
            model:
                GenModel::Sbm {
                    blocks,
                    p_in,
                    p_out,
                    dim,
                    mean_scale,
                    seed,
                    out,
                },
        } => {
            let spec = SbmSpec {
                blocks,
                p_in,
                p_out,
                dim,
                mean_scale,
                seed,
            };
            dataio::save_bundle(&dataio::gen_sbm(&spec)?, &out)?;
            Ok(())
        }
        Command::Report { table } => report(&table),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
