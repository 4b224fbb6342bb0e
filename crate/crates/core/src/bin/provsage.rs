//! Operator command-line front end: train an ensemble on benign edge
//! streams, stream-detect with alerting and DOT traces, evaluate over a
//! labeled scene corpus, and sweep evasion budgets against a trained model.
//!
//! Config precedence is flags > config file > defaults. Usage errors
//! (missing paths, bad flag combinations, unknown attack kinds) exit with
//! code 2; runtime failures exit with code 1. Logs go to stderr, data to
//! files or stdout.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use provsage::alert::{alert_log_line, score_node_level};
use provsage::attack::{evaluate_evasion, AttackKind, EvasionRow};
use provsage::config::Config;
use provsage::ensemble::{train_on_graph_sequence, Ensemble};
use provsage::eval::{
    load_ground_truth, load_streamspot, metrics, run_graph_level_eval, split_train_test,
    ConfusionCounts, LabeledGraph, MetricSet,
};
use provsage::features::extract_features;
use provsage::graph::{EdgeRecord, MemGraph, NodeId};
use provsage::pipeline::StreamingDetector;

#[derive(Parser)]
#[command(name = "provsage", version, about = "Streaming provenance-graph anomaly detector")]
struct Cli {
    #[command(flatten)]
    config: ConfigOpts,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags mirroring the runtime configuration fields; any flag overrides the
/// config file, which overrides the built-in defaults.
#[derive(Args, Debug, Default, Clone)]
struct ConfigOpts {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Minibatch size (BS).
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Detection flush threshold (SS).
    #[arg(long, global = true)]
    subgraph_size: Option<usize>,
    /// Active-node count per training subgraph.
    #[arg(long, global = true)]
    split_size: Option<usize>,
    /// Confidence ratio threshold (R).
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Waiting-time threshold (T) in stream time units, or "inf".
    #[arg(long, global = true)]
    wait_threshold: Option<String>,
    /// Tolerance threshold: alert when confirmed count exceeds it.
    #[arg(long, global = true)]
    tolerance: Option<usize>,
    /// Hop count K (1 or 2).
    #[arg(long, global = true)]
    hops: Option<usize>,
    /// Hidden layer width.
    #[arg(long, global = true)]
    hidden: Option<usize>,
    /// Training epochs per submodel.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Root seed; every command is deterministic under a fixed seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Consecutive non-shrinking submodels tolerated before dropping
    /// stuck nodes as unlearnable.
    #[arg(long, global = true)]
    stall_limit: Option<usize>,
    /// Seeded repetitions for mean-reported evaluations.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Policy for never-seen node or edge types: anomalous | reject.
    #[arg(long, global = true)]
    unknown_type_policy: Option<String>,
    /// What the flush counter counts: edges | active_nodes.
    #[arg(long, global = true)]
    ss_semantics: Option<String>,
    /// Feed whole-history counts to the model instead of window-local.
    #[arg(long, global = true)]
    whole_history_features: Option<bool>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the stacked ensemble on benign edge streams.
    Train(TrainArgs),
    /// Stream edges through a trained model; emit alerts and traces.
    Detect(DetectArgs),
    /// Score detection quality over a labeled scene corpus.
    Evaluate(EvaluateArgs),
    /// Sweep evasion budgets against a trained model.
    Attack(AttackArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Benign edge-stream files (6-column tab-separated records).
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Serialized ensemble output path.
    #[arg(long)]
    model_out: PathBuf,
    /// Training-report JSON output path (default stdout).
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Serialized ensemble path.
    #[arg(long)]
    model: PathBuf,
    /// Edge stream path, or "-" for stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// Alert log output path (default stdout).
    #[arg(long)]
    alerts_out: Option<PathBuf>,
    /// Directory receiving one DOT trace per confirmed node.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Scene corpus file: src, src_type, dst, dst_type, edge_type,
    /// graph_id per tab-separated line; scene = graph_id / 100.
    #[arg(long)]
    dataset: PathBuf,
    /// Scene numbers holding attack graphs.
    #[arg(long = "attack-scene", default_values_t = vec![3usize])]
    attack_scenes: Vec<usize>,
    /// Evaluation granularity: graph | node.
    #[arg(long, default_value = "graph")]
    mode: String,
    /// Ground-truth sidecar (graph_id <TAB> node per line); required in
    /// node mode.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Train fraction of each benign scene; attack graphs all go to test.
    #[arg(long, default_value_t = 0.75)]
    train_frac: f64,
    /// Metrics CSV output path (default stdout).
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// JSON summary output path.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Serialized ensemble path.
    #[arg(long)]
    model: PathBuf,
    /// Scene corpus file holding the attack graphs.
    #[arg(long)]
    dataset: PathBuf,
    /// Scene numbers holding attack graphs.
    #[arg(long = "attack-scene", default_values_t = vec![3usize])]
    attack_scenes: Vec<usize>,
    /// Ground-truth sidecar naming the anomalous nodes per graph.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Attack kind: train-data | model | model+neighbors | all.
    #[arg(long, default_value = "train-data")]
    kind: String,
    /// Comma-separated budget sweep.
    #[arg(long, default_value = "0,0.1,0.2")]
    deltas: String,
    /// Gradient-attack iteration count.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Node type assigned to attacker-controlled peer nodes (default:
    /// first node type in the model's type map).
    #[arg(long)]
    peer_type: Option<String>,
    /// Sweep CSV output path (default stdout).
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

/// Failure with its process exit code; 2 marks usage errors.
struct Failure {
    code: u8,
    msg: String,
}

impl From<provsage::Error> for Failure {
    fn from(e: provsage::Error) -> Self {
        Failure {
            code: 1,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.config)?;
    match cli.cmd {
        Cmd::Train(args) => cmd_train(&cfg, &args),
        Cmd::Detect(args) => cmd_detect(&cfg, &args),
        Cmd::Evaluate(args) => cmd_evaluate(&cfg, &args),
        Cmd::Attack(args) => cmd_attack(&cfg, &args),
    }
}

fn resolve_config(opts: &ConfigOpts) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &opts.config {
        if !path.exists() {
            return Err(usage(format!("config file {} does not exist", path.display())));
        }
        cfg.load_file(path).map_err(|e| usage(e.to_string()))?;
    }
    let overrides: Vec<(&str, Option<String>)> = vec![
        ("batch_size", opts.batch_size.map(|v| v.to_string())),
        ("subgraph_size", opts.subgraph_size.map(|v| v.to_string())),
        ("split_size", opts.split_size.map(|v| v.to_string())),
        ("ratio", opts.ratio.map(|v| v.to_string())),
        ("wait_threshold", opts.wait_threshold.clone()),
        ("tolerance", opts.tolerance.map(|v| v.to_string())),
        ("hops", opts.hops.map(|v| v.to_string())),
        ("hidden", opts.hidden.map(|v| v.to_string())),
        ("epochs", opts.epochs.map(|v| v.to_string())),
        ("learning_rate", opts.learning_rate.map(|v| v.to_string())),
        ("seed", opts.seed.map(|v| v.to_string())),
        ("stall_limit", opts.stall_limit.map(|v| v.to_string())),
        ("repeats", opts.repeats.map(|v| v.to_string())),
        ("unknown_type_policy", opts.unknown_type_policy.clone()),
        ("ss_semantics", opts.ss_semantics.clone()),
        (
            "whole_history_features",
            opts.whole_history_features.map(|v| v.to_string()),
        ),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            cfg.set(key, &value).map_err(|e| usage(e.to_string()))?;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn require_path(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_edge_stream(path: &Path) -> Result<MemGraph, provsage::Error> {
    let file = fs::File::open(path)?;
    let mut g = MemGraph::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        g.append(&EdgeRecord::parse(&line, i + 1)?)?;
    }
    Ok(g)
}

/// Writer to the given path, or stdout when absent.
fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).map_err(provsage::Error::from)?),
        None => Box::new(std::io::stdout()),
    })
}

fn cmd_train(cfg: &Config, args: &TrainArgs) -> Result<(), Failure> {
    for p in &args.inputs {
        require_path(p, "input path")?;
    }
    let mut graphs = Vec::new();
    for p in &args.inputs {
        let g = load_edge_stream(p)?;
        eprintln!(
            "loaded {}: {} nodes, {} edges",
            p.display(),
            g.node_count(),
            g.edge_count()
        );
        graphs.push(g);
    }
    let refs: Vec<&MemGraph> = graphs.iter().collect();
    let (ensemble, report) = train_on_graph_sequence(&refs, cfg)?;
    fs::write(&args.model_out, ensemble.to_bytes()?).map_err(provsage::Error::from)?;
    eprintln!(
        "trained {} submodels ({} unlearnable nodes); model written to {}",
        report.cnt,
        report.unlearnable.len(),
        args.model_out.display()
    );
    let json = serde_json::to_string_pretty(&report).map_err(provsage::Error::from)?;
    let mut out = sink(&args.report_out)?;
    writeln!(out, "{json}").map_err(provsage::Error::from)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Ensemble, Failure> {
    require_path(path, "model file")?;
    let bytes = fs::read(path).map_err(provsage::Error::from)?;
    Ok(Ensemble::from_bytes(&bytes)?)
}

fn cmd_detect(cfg: &Config, args: &DetectArgs) -> Result<(), Failure> {
    let ensemble = load_model(&args.model)?;
    let reader: Box<dyn BufRead> = if args.input == "-" {
        Box::new(BufReader::new(std::io::stdin()))
    } else {
        let p = Path::new(&args.input);
        require_path(p, "input path")?;
        Box::new(BufReader::new(
            fs::File::open(p).map_err(provsage::Error::from)?,
        ))
    };
    let mut out = sink(&args.alerts_out)?;
    let mut det = StreamingDetector::new(ensemble, cfg.clone());
    let emit = |out: &mut Box<dyn Write>,
                    report: &provsage::pipeline::FlushReport|
     -> Result<(), provsage::Error> {
        for row in &report.anomalous {
            writeln!(
                out,
                "{}",
                alert_log_line(row.timestamp, &row.node, &row.node_type, &row.best_class, row.ratio)
            )?;
        }
        Ok(())
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(provsage::Error::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = EdgeRecord::parse(&line, i + 1)?;
        if let Some(report) = det.ingest_record(&rec)? {
            emit(&mut out, &report)?;
        }
    }
    let (summary, tail) = det.finish()?;
    if let Some(report) = tail {
        emit(&mut out, &report)?;
    }
    if let Some(dir) = &args.trace_dir {
        fs::create_dir_all(dir).map_err(provsage::Error::from)?;
        for trace in &summary.traces {
            // node names may hold path separators; keep filenames flat
            let safe: String = trace
                .root
                .chars()
                .map(|c| if c.is_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
                .collect();
            fs::write(dir.join(format!("{safe}.dot")), trace.to_dot())
                .map_err(provsage::Error::from)?;
        }
        eprintln!("{} trace files written to {}", summary.traces.len(), dir.display());
    }
    writeln!(
        out,
        "summary\tflushes={}\tedges={}\tconfirmed={}\talert_raised={}",
        summary.flushes,
        summary.edges_ingested,
        summary.confirmed.len(),
        summary.alert_raised
    )
    .map_err(provsage::Error::from)?;
    Ok(())
}

fn fmt_metric(m: Option<f64>) -> String {
    match m {
        Some(v) => format!("{v:.6}"),
        None => "undefined".to_string(),
    }
}

fn metric_csv(m: &MetricSet) -> String {
    format!(
        "{},{},{},{},{},{}",
        fmt_metric(m.precision),
        fmt_metric(m.recall),
        fmt_metric(m.accuracy),
        fmt_metric(m.f_score),
        fmt_metric(m.fpr),
        fmt_metric(m.fnr)
    )
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    counts: ConfusionCounts,
    metrics: MetricSet,
}

#[derive(Serialize)]
struct EvalSummary {
    mode: String,
    repeats: usize,
    per_seed: Vec<SeedResult>,
    mean_counts: ConfusionCounts,
    mean_metrics: MetricSet,
}

/// Streams one labeled graph through a fresh detector and scores the
/// confirmed nodes against ground truth under the 2-hop hunting rule.
fn node_level_counts(
    ensemble: &Ensemble,
    cfg: &Config,
    lg: &LabeledGraph,
    truth: &[String],
) -> Result<ConfusionCounts, provsage::Error> {
    let mut det = StreamingDetector::new(ensemble.clone(), cfg.clone());
    for i in 0..lg.graph.edge_count() {
        det.ingest_record(&lg.graph.record_for(i))?;
    }
    let (summary, _) = det.finish()?;
    let flagged: HashSet<NodeId> = summary
        .confirmed
        .iter()
        .filter_map(|name| lg.graph.lookup(name))
        .collect();
    let anomalous: HashSet<NodeId> = truth
        .iter()
        .filter_map(|name| lg.graph.lookup(name))
        .collect();
    score_node_level(&lg.graph, &anomalous, &flagged)
}

fn cmd_evaluate(cfg: &Config, args: &EvaluateArgs) -> Result<(), Failure> {
    require_path(&args.dataset, "dataset path")?;
    if args.mode != "graph" && args.mode != "node" {
        return Err(usage(format!("mode must be graph|node, got {}", args.mode)));
    }
    let truth: HashMap<String, Vec<String>> = if args.mode == "node" {
        let sidecar = args
            .ground_truth
            .as_ref()
            .ok_or_else(|| usage("node-level evaluation requires --ground-truth"))?;
        require_path(sidecar, "ground-truth path")?;
        load_ground_truth(sidecar)?
    } else {
        HashMap::new()
    };
    let graphs = load_streamspot(&args.dataset, &args.attack_scenes)?;
    eprintln!(
        "{} graphs loaded from {} ({} attack)",
        graphs.len(),
        args.dataset.display(),
        graphs.iter().filter(|g| g.attack).count()
    );

    let mut per_seed = Vec::new();
    let mut total = ConfusionCounts::default();
    for rep in 0..cfg.repeats.max(1) {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(rep as u64);
        let (train, test) = split_train_test(&graphs, args.train_frac, run_cfg.seed)?;
        let counts = if args.mode == "graph" {
            let (_, counts, _) = run_graph_level_eval(&train, &test, &run_cfg)?;
            counts
        } else {
            let mems: Vec<&MemGraph> = train.iter().map(|g| &g.graph).collect();
            let (ensemble, _) = train_on_graph_sequence(&mems, &run_cfg)?;
            let mut counts = ConfusionCounts::default();
            let empty = Vec::new();
            for lg in &test {
                let names = truth.get(&lg.id).unwrap_or(&empty);
                counts.add(&node_level_counts(&ensemble, &run_cfg, lg, names)?);
            }
            counts
        };
        eprintln!(
            "seed {}: tp={} tn={} fp={} fn={}",
            run_cfg.seed, counts.tp, counts.tn, counts.fp, counts.fn_
        );
        total.add(&counts);
        per_seed.push(SeedResult {
            seed: run_cfg.seed,
            metrics: metrics(&counts),
            counts,
        });
    }
    let mean_counts = total.scale(1.0 / per_seed.len() as f64);
    let mean_metrics = metrics(&mean_counts);

    let mut csv = sink(&args.csv_out)?;
    writeln!(
        csv,
        "seed,mode,tp,tn,fp,fn,precision,recall,accuracy,f_score,fpr,fnr"
    )
    .map_err(provsage::Error::from)?;
    for r in &per_seed {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.seed,
            args.mode,
            r.counts.tp,
            r.counts.tn,
            r.counts.fp,
            r.counts.fn_,
            metric_csv(&r.metrics)
        )
        .map_err(provsage::Error::from)?;
    }
    writeln!(
        csv,
        "mean,{},{},{},{},{},{}",
        args.mode,
        mean_counts.tp,
        mean_counts.tn,
        mean_counts.fp,
        mean_counts.fn_,
        metric_csv(&mean_metrics)
    )
    .map_err(provsage::Error::from)?;

    if let Some(path) = &args.summary_out {
        let summary = EvalSummary {
            mode: args.mode.clone(),
            repeats: per_seed.len(),
            per_seed,
            mean_counts,
            mean_metrics,
        };
        let json = serde_json::to_string_pretty(&summary).map_err(provsage::Error::from)?;
        fs::write(path, json + "\n").map_err(provsage::Error::from)?;
    }
    Ok(())
}

fn parse_kinds(kind: &str) -> Result<Vec<AttackKind>, Failure> {
    match kind {
        "train-data" => Ok(vec![AttackKind::TrainingData]),
        "model" => Ok(vec![AttackKind::Model]),
        "model+neighbors" => Ok(vec![AttackKind::Neighbors]),
        "all" => Ok(vec![
            AttackKind::TrainingData,
            AttackKind::Model,
            AttackKind::Neighbors,
        ]),
        other => Err(usage(format!(
            "unknown attack kind {other}; expected train-data|model|model+neighbors|all"
        ))),
    }
}

fn cmd_attack(_cfg: &Config, args: &AttackArgs) -> Result<(), Failure> {
    let kinds = parse_kinds(&args.kind)?;
    let deltas: Vec<f64> = args
        .deltas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("bad delta value {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let ensemble = load_model(&args.model)?;
    require_path(&args.dataset, "dataset path")?;
    require_path(&args.ground_truth, "ground-truth path")?;
    let truth = load_ground_truth(&args.ground_truth)?;
    let graphs = load_streamspot(&args.dataset, &args.attack_scenes)?;
    let peer_type = match &args.peer_type {
        Some(t) => t.clone(),
        None => ensemble.maps.node_type_name(0).to_string(),
    };

    // benign-scene node features stand in for the training set the
    // training-data attack consults
    let mut training_features: Vec<(Vec<u32>, usize)> = Vec::new();
    for lg in graphs.iter().filter(|g| !g.attack) {
        for f in extract_features(&lg.graph, &ensemble.maps)? {
            training_features.push((f.vector, f.label));
        }
    }

    // aggregated per (kind, delta) over every attack graph
    let mut table: Vec<(AttackKind, Vec<EvasionRow>)> = Vec::new();
    for &kind in &kinds {
        let mut agg: Vec<EvasionRow> = Vec::new();
        for lg in graphs.iter().filter(|g| g.attack) {
            let empty = Vec::new();
            let names = truth.get(&lg.id).unwrap_or(&empty);
            let anomalous: Vec<NodeId> =
                names.iter().filter_map(|n| lg.graph.lookup(n)).collect();
            let rows = evaluate_evasion(
                &ensemble,
                &lg.graph,
                &anomalous,
                &training_features,
                kind,
                &deltas,
                args.steps,
                &peer_type,
            )?;
            if agg.is_empty() {
                agg = rows;
            } else {
                for (a, r) in agg.iter_mut().zip(rows) {
                    a.attacked += r.attacked;
                    a.counts.add(&r.counts);
                    a.metrics = metrics(&a.counts);
                }
            }
        }
        eprintln!("{} sweep done over {} budgets", kind.name(), deltas.len());
        table.push((kind, agg));
    }

    let mut csv = sink(&args.csv_out)?;
    writeln!(
        csv,
        "delta_a,kind,attacked,tp,tn,fp,fn,fnr,fpr,precision,recall"
    )
    .map_err(provsage::Error::from)?;
    for (kind, rows) in &table {
        for r in rows {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.delta_a,
                kind.name(),
                r.attacked,
                r.counts.tp,
                r.counts.tn,
                r.counts.fp,
                r.counts.fn_,
                fmt_metric(r.metrics.fnr),
                fmt_metric(r.metrics.fpr),
                fmt_metric(r.metrics.precision),
                fmt_metric(r.metrics.recall)
            )
            .map_err(provsage::Error::from)?;
        }
    }
    Ok(())
}
