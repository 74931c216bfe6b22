// SPDX-License-Identifier: MIT OR Apache-2.0

//! `latent-lens` command-line front end.

use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latent_lens::attribution::{batch_attribute, AttributionConfig, Direction};
use latent_lens::bundle::{load_bundle, read_manifest};
use latent_lens::metrics::{
    layer_metrics, read_metrics_csv, spearman_matrix, write_correlation_csv, write_metrics_csv, MetricConfig,
};
use latent_lens::parallel::{resolve_workers, with_workers};
use latent_lens::persist::write_json;
use latent_lens::population::{analyze, write_report};
use latent_lens::qkcircuit::sweep::{read_records, write_sweep_csv};
use latent_lens::qkcircuit::{
    layer_sweep, threshold_sweep, HeadAggregation, QkConfig, Side, DEFAULT_KEY_TAUS, DEFAULT_QUERY_TAUS,
};
use latent_lens::report::plot::{plot, PlotKind};
use latent_lens::report::{exit_code, read_thresholds, run, write_default_config, RunConfig};
use latent_lens::semantics::{
    calibrate, classify, default_calibration_layer, pass_rate_curves, phase_split, read_labels_csv,
    read_pass_rates_csv, sample_features, write_labels_csv, write_pass_rates_csv, LayerPassRates, DEFAULT_PHASE_CUTOFF,
};
use latent_lens::synth::{write_bundle, SynthConfig};
use latent_lens::{Bundle, Error};

#[derive(Parser)]
#[command(
    name = "latent-lens",
    version,
    about = "Weight-only analysis of sparse-autoencoder features"
)]
struct Cli {
    /// Worker threads (LATENT_LENS_WORKERS takes precedence).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bundle.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k token attributions for a range of features.
    Attr(AttrArgs),
    /// All metrics for every feature of a layer, or `metrics corr`.
    #[command(args_conflicts_with_subcommands = true)]
    Metrics {
        #[command(subcommand)]
        corr: Option<MetricsCommand>,
        #[command(flatten)]
        args: MetricsArgs,
    },
    /// Threshold calibration and semantic classification.
    #[command(subcommand)]
    Semantics(SemanticsCommand),
    /// Out-of-context query/key scores between features.
    #[command(subcommand)]
    Qk(QkCommand),
    /// Semantic vs. non-semantic attention weight populations.
    Population(PopulationArgs),
    /// Run a full experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Re-run stages even when their outputs are current.
        #[arg(long)]
        force: bool,
    },
    /// Write a default run config.
    Init {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        #[arg(long, default_value = "run.json")]
        config: PathBuf,
    },
    /// Render SVG figures from a results directory.
    Plot {
        #[arg(long)]
        results: PathBuf,
        /// Figure kind, or `all`.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Dec,
    Enc,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::Dec => Direction::DecUnembed,
            Dir::Enc => Direction::EncEmbed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Query,
    Key,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Query => Side::Query,
            SideArg::Key => Side::Key,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rope {
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    FeatureStatistic,
    HeadCounts,
}

#[derive(Args)]
struct AttrArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, value_enum)]
    direction: Dir,
    /// Feature range `A..B`; all features when omitted.
    #[arg(long)]
    features: Option<String>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, value_enum)]
    direction: Option<Dir>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Spearman correlation between the metric columns of a metrics CSV.
    Corr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SemanticsCommand {
    /// Fit thresholds at the calibration layer.
    Calibrate {
        /// Metrics CSV of the calibration layer.
        #[arg(long, conflicts_with = "bundle")]
        metrics: Option<PathBuf>,
        /// Compute the calibration layer's metrics from a bundle instead.
        #[arg(long, required_unless_present = "metrics")]
        bundle: Option<PathBuf>,
        #[arg(long, value_enum)]
        direction: Dir,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 50.0)]
        percentile: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label the features of a metrics CSV.
    Classify {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer pass rates for every metric subset.
    Curves {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-layer label CSVs here.
        #[arg(long)]
        labels_dir: Option<PathBuf>,
    },
    /// First layer where both directions' joint rates drop below the cutoff.
    Split {
        #[arg(long)]
        dec: PathBuf,
        #[arg(long)]
        enc: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PHASE_CUTOFF)]
        cutoff: f64,
    },
    /// Uniform sample of semantic features.
    Sample {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum QkCommand {
    /// Pre-softmax magnitudes and top-k sums.
    Pre(QkArgs),
    /// Query-specialist and key-hub counts.
    Post(QkArgs),
    /// Mean percentage of passing features across thresholds.
    Sweep {
        #[command(flatten)]
        args: QkArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QUERY_TAUS)]
        query_taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KEY_TAUS)]
        key_taus: Vec<f64>,
    },
}

#[derive(Args)]
struct QkArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Layer range `A..B`; every layer with a following attention layer when omitted.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.95)]
    tau_q: f64,
    #[arg(long, default_value_t = 0.25)]
    tau_k: f64,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, default_value_t = 512)]
    block_rows: usize,
    /// Skip the attention-input norm.
    #[arg(long)]
    no_norm: bool,
    #[arg(long, value_enum, default_value = "feature-statistic")]
    aggregation: Aggregation,
    #[arg(long, value_enum, default_value = "off")]
    rope: Rope,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PopulationArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Directory of per-layer QK records.
    #[arg(long)]
    weights: PathBuf,
    /// Directory of `{dec,enc}_labels_layer_NNN.csv` files.
    #[arg(long)]
    labels: PathBuf,
    /// One side, or both when omitted.
    #[arg(long, value_enum)]
    side: Option<SideArg>,
    #[arg(long)]
    phase_boundary: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<Range<usize>, Error> {
    let bad = || Error::Config(format!("expected a range like 0..8, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..b)
}

fn bundle(dir: &Path) -> Result<Bundle, Error> {
    load_bundle(dir).map_err(|e| match e {
        Error::Io { .. } | Error::Json { .. } => Error::Container(e.to_string()),
        e => e,
    })
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_attr(a: &AttrArgs) -> anyhow::Result<()> {
    let b = bundle(&a.bundle)?;
    let d_sae = b.sae(a.layer)?.d_sae();
    let features = a.features.as_deref().map(parse_range).transpose()?.unwrap_or(0..d_sae);
    let cfg = AttributionConfig {
        top_k: a.top_k,
        ..Default::default()
    };
    if a.top_k == 0 || a.top_k > b.arch.d_vocab {
        return Err(Error::Config(format!("--top-k must lie in 1..={}", b.arch.d_vocab)).into());
    }
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    #[derive(Serialize)]
    struct Row<'a> {
        layer: usize,
        feature: usize,
        rank: usize,
        token_id: usize,
        token_string: &'a str,
        score: f64,
    }
    let stream = batch_attribute(&b, a.layer, a.direction.into(), features, &cfg)?;
    match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for attr in stream {
                for (rank, &(token_id, score)) in attr.top_k.iter().enumerate() {
                    w.serialize(Row {
                        layer: attr.layer,
                        feature: attr.feature,
                        rank,
                        token_id,
                        token_string: &b.vocab[token_id],
                        score,
                    })?;
                }
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for attr in stream {
                let top: Vec<_> = attr
                    .top_k
                    .iter()
                    .enumerate()
                    .map(|(rank, &(token_id, score))| {
                        serde_json::json!({ "rank": rank, "token_id": token_id, "token_string": b.vocab[token_id], "score": score })
                    })
                    .collect();
                let line = serde_json::json!({
                    "layer": attr.layer,
                    "feature": attr.feature,
                    "direction": attr.direction,
                    "top_k": top,
                });
                writeln!(sink, "{line}")?;
            }
        }
    }
    Ok(())
}

fn cmd_metrics(corr: &Option<MetricsCommand>, a: &MetricsArgs) -> anyhow::Result<()> {
    if let Some(MetricsCommand::Corr { input, out }) = corr {
        let table = read_metrics_csv(input)?;
        let c = spearman_matrix(&table)?;
        write_correlation_csv(out, &c)?;
        if !c.constant.is_empty() {
            eprintln!("constant columns reported as 0: {}", c.constant.join(", "));
        }
        return Ok(());
    }
    let (Some(dir), Some(layer), Some(direction), Some(out)) = (&a.bundle, a.layer, a.direction, &a.out) else {
        bail!(Error::Config(
            "metrics needs --bundle, --layer, --direction and --out".into()
        ));
    };
    let b = bundle(dir)?;
    let cfg = MetricConfig {
        k: a.k,
        temperature: a.temperature,
        ..Default::default()
    };
    let table = layer_metrics(&b, layer, direction.into(), &AttributionConfig::default(), &cfg)?;
    write_metrics_csv(out, &table)?;
    Ok(())
}

fn cmd_semantics(c: &SemanticsCommand) -> anyhow::Result<()> {
    match c {
        SemanticsCommand::Calibrate {
            metrics,
            bundle: dir,
            direction,
            layer,
            percentile,
            out,
        } => {
            let direction: Direction = (*direction).into();
            let (table, cal) = match (metrics, dir) {
                (Some(path), _) => {
                    let mut table = read_metrics_csv(path)?;
                    let cal = match layer {
                        Some(l) => *l,
                        None => table.first().map(|m| m.layer).unwrap_or(0),
                    };
                    table.retain(|m| m.layer == cal);
                    (table, cal)
                }
                (None, Some(dir)) => {
                    let b = bundle(dir)?;
                    let cal = layer.unwrap_or_else(|| default_calibration_layer(&b.arch, direction));
                    let table = layer_metrics(
                        &b,
                        cal,
                        direction,
                        &AttributionConfig::default(),
                        &MetricConfig::default(),
                    )?;
                    (table, cal)
                }
                (None, None) => bail!(Error::Config("calibrate needs --metrics or --bundle".into())),
            };
            if !(*percentile > 0.0 && *percentile < 100.0) {
                bail!(Error::Config(format!(
                    "--percentile must lie in (0, 100), got {percentile}"
                )));
            }
            let t = calibrate(&table, direction, cal, *percentile)?;
            t.write(out)?;
            println!(
                "layer {cal}: leven_sim >= {:.6}, cosine_sim >= {:.6}, entropy_100 <= {:.6}",
                t.leven_min, t.cosine_min, t.entropy100_max
            );
        }
        SemanticsCommand::Classify {
            metrics,
            thresholds,
            out,
        } => {
            let t = read_thresholds(thresholds)?;
            let table = read_metrics_csv(metrics)?;
            let labels = classify(&table, &t);
            write_labels_csv(out, &labels)?;
            let semantic = labels.iter().filter(|l| l.semantic).count();
            println!("{semantic}/{} features semantic", labels.len());
        }
        SemanticsCommand::Curves {
            bundle: dir,
            thresholds,
            out,
            labels_dir,
        } => {
            let t = read_thresholds(thresholds)?;
            let b = bundle(dir)?;
            let curves = pass_rate_curves(
                &b,
                t.direction,
                &t,
                &AttributionConfig::default(),
                &MetricConfig::default(),
            )?;
            write_pass_rates_csv(out, &curves.layers)?;
            if let Some(ld) = labels_dir {
                ensure_dir(ld)?;
                for (layer, labels) in curves.labels.iter().enumerate() {
                    let name = format!("{}_labels_layer_{layer:03}.csv", t.direction.tag());
                    write_labels_csv(&ld.join(name), labels)?;
                }
            }
        }
        SemanticsCommand::Split { dec, enc, cutoff } => {
            let joint = |p: &Path| -> anyhow::Result<Vec<f64>> {
                Ok(read_pass_rates_csv(p)?.iter().map(LayerPassRates::joint).collect())
            };
            match phase_split(&joint(dec)?, &joint(enc)?, *cutoff) {
                Some(b) => println!("{b}"),
                None => println!("none"),
            }
        }
        SemanticsCommand::Sample { labels, n, seed } => {
            let labels = read_labels_csv(labels)?;
            for f in sample_features(&labels, *n, *seed) {
                println!("{f}");
            }
        }
    }
    Ok(())
}

fn qk_config(a: &QkArgs) -> QkConfig {
    let Rope::Off = a.rope;
    QkConfig {
        k: a.k,
        tau_q: a.tau_q,
        tau_k: a.tau_k,
        block_rows: a.block_rows,
        use_norm: !a.no_norm,
        aggregation: match a.aggregation {
            Aggregation::FeatureStatistic => HeadAggregation::FeatureStatistic,
            Aggregation::HeadCounts => HeadAggregation::HeadCounts,
        },
    }
}

fn cmd_qk(c: &QkCommand) -> anyhow::Result<()> {
    let a = match c {
        QkCommand::Pre(a) | QkCommand::Post(a) => a,
        QkCommand::Sweep { args, .. } => args,
    };
    let cfg = qk_config(a);
    let b = bundle(&a.bundle)?;
    let range = match &a.layers {
        Some(s) => parse_range(s)?,
        None => 0..b.arch.n_layers.saturating_sub(1),
    };
    ensure_dir(&a.out)?;
    let records = layer_sweep(&b, &cfg, range, Some(&a.out))?;
    match c {
        QkCommand::Pre(_) => {
            for r in &records {
                let sums: Vec<String> = r.head_sums().iter().map(|s| format!("{s:.4}")).collect();
                println!("layer {}: head sums {}", r.layer, sums.join(" "));
            }
        }
        QkCommand::Post(_) => {
            for r in &records {
                let n = r.counts(cfg.tau_q, cfg.tau_k, a.exclude_self, cfg.aggregation);
                println!(
                    "layer {}: query any/mean/median {}/{}/{}, key any/mean/median {}/{}/{}",
                    r.layer, n.query_any, n.query_mean, n.query_median, n.key_any, n.key_mean, n.key_median
                );
            }
        }
        QkCommand::Sweep {
            query_taus, key_taus, ..
        } => {
            for (side, taus, tag) in [(Side::Query, query_taus, "query"), (Side::Key, key_taus, "key")] {
                let rows = threshold_sweep(&records, taus, side, a.exclude_self);
                let suffix = if a.exclude_self { "_no_self" } else { "" };
                write_sweep_csv(&a.out.join(format!("sweep_{tag}{suffix}.csv")), side, &rows)?;
            }
        }
    }
    Ok(())
}

fn cmd_population(a: &PopulationArgs) -> anyhow::Result<()> {
    let manifest = read_manifest(&a.bundle).map_err(|e| Error::Container(e.to_string()))?;
    let records = read_records(&a.weights)?;
    if records.is_empty() {
        bail!(Error::InvalidInput(format!("no QK records in {}", a.weights.display())));
    }
    let read = |tag: &str| -> latent_lens::Result<Vec<Vec<_>>> {
        (0..manifest.arch.n_layers)
            .map(|l| read_labels_csv(&a.labels.join(format!("{tag}_labels_layer_{l:03}.csv"))))
            .collect()
    };
    let dec = read("dec")?;
    let enc_present = a.labels.join("enc_labels_layer_000.csv").exists();
    let enc = if a.phase_boundary.is_some() && enc_present {
        Some(read("enc")?)
    } else {
        None
    };
    if a.phase_boundary.is_some() && enc.is_none() {
        eprintln!("no encoder labels found; treating the model as single-phase");
    }
    ensure_dir(&a.out)?;
    let sides = match a.side {
        Some(s) => vec![Side::from(s)],
        None => vec![Side::Query, Side::Key],
    };
    for side in sides {
        let report = analyze(&records, side, &dec, enc.as_deref(), a.phase_boundary, a.seed)?;
        write_report(&a.out, &report)?;
        let tag = if side == Side::Query { "query" } else { "key" };
        write_json(&a.out.join(format!("population_{tag}.json")), &report)?;
    }
    Ok(())
}

fn cmd_plot(results: &Path, kind: &str, out: &Path) -> anyhow::Result<()> {
    let kinds = if kind == "all" {
        PlotKind::ALL.to_vec()
    } else {
        vec![kind.parse::<PlotKind>()?]
    };
    ensure_dir(out)?;
    for k in kinds {
        for p in plot(results, k, out)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth { seed, preset, out } => {
            let cfg = SynthConfig::preset(preset, *seed)?;
            write_bundle(&cfg, out)?;
        }
        Command::Attr(a) => cmd_attr(a)?,
        Command::Metrics { corr, args } => cmd_metrics(corr, args)?,
        Command::Semantics(c) => cmd_semantics(c)?,
        Command::Qk(c) => cmd_qk(c)?,
        Command::Population(a) => cmd_population(a)?,
        Command::Run { config, force } => {
            let mut cfg = RunConfig::load(config)?;
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            let outcome = run(&cfg, *force)?;
            for s in &outcome.executed {
                println!("ran {}", s.name());
            }
            for s in &outcome.skipped {
                println!("skipped {} (up to date)", s.name());
            }
            println!("{}", outcome.results.display());
        }
        Command::Init {
            bundle: b,
            out_dir,
            config,
        } => write_default_config(config, b, out_dir)?,
        Command::Plot { results, kind, out } => cmd_plot(results, kind, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_workers(cli.workers)
        .map_err(anyhow::Error::from)
        .and_then(|w| with_workers(w, || dispatch(&cli)).map_err(anyhow::Error::from))
        .and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(4, exit_code);
            ExitCode::from(code as u8)
        }
    }
}
