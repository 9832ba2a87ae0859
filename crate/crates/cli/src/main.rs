//! `veralign` command-line front end.
//!
//! Exit codes: 0 on success, 2 when inputs or configuration are invalid,
//! 1 for any other failure (I/O and the like).

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use veralign::align::{inject_ground_truth, predict_labels, propagate, write_scores, ThresholdRule};
use veralign::eval::{
    accuracy, make_split, run_experiment, run_grid, write_summary_table, ExperimentConfig, ExperimentReport, RunRecord,
    RunSummary,
};
use veralign::fna::{compute_fna, fna_histogram};
use veralign::graph::{build_graph, GraphConfig, IsolatedPolicy};
use veralign::ingest::{validate_split, ActivityMeasure, DanglingPolicy, Dataset, SplitSpec};
use veralign::predict::{load_predictions, predict, train_baseline};
use veralign::synth::generate;
use veralign::Error;

#[derive(Parser)]
#[command(
    name = "veralign",
    version,
    about = "Few-shot fake news detection over shared-readership graphs"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override: generator seed for `synth`, split seed for `align`,
    /// master seed for `eval`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and canonicalize a dataset.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Split file to check against the dataset.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Fake news affinity of active users and its histogram.
    Fna {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        t_u: Option<u64>,
        #[arg(long, value_enum)]
        measure: Option<Measure>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Build and dump the normalized proximity graph.
    Graph {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// Align base predictions for one split.
    Align {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        graph: GraphArgs,
        /// Training split; sampled with --n and --seed when absent.
        #[arg(long, conflicts_with = "n")]
        split: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Base prediction file; the built-in baseline is trained when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        t_p: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        no_tpl: bool,
        #[arg(long)]
        no_graph: bool,
        /// Harden only rows strictly above the percentile.
        #[arg(long)]
        strict_threshold: bool,
        /// Also dump the intermediate score matrices.
        #[arg(long)]
        snapshots: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        articles: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        consistency: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Run the configured experiment (or grid) over all seeds.
    Eval,
    /// Print the tables of a saved report.
    Report {
        /// A report.jsonl written by `eval`.
        input: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, requires = "engagements")]
    articles: Option<PathBuf>,
    #[arg(long, requires = "articles")]
    engagements: Option<PathBuf>,
    /// Drop engagements with unknown articles instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    t_u: Option<u64>,
    #[arg(long, value_enum)]
    measure: Option<Measure>,
    #[arg(long)]
    zero_diagonal: bool,
    #[arg(long, value_enum)]
    isolated: Option<Isolated>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Measure {
    ByArticle,
    ByRepost,
}

impl From<Measure> for ActivityMeasure {
    fn from(m: Measure) -> Self {
        match m {
            Measure::ByArticle => ActivityMeasure::ByArticle,
            Measure::ByRepost => ActivityMeasure::ByRepost,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Isolated {
    SelfLoop,
    Zero,
}

struct Session {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: PathBuf,
}

impl Session {
    fn config(&self) -> ExperimentConfig {
        self.config.clone().unwrap_or_default()
    }

    fn dataset(&self, data: &DataArgs) -> Result<Dataset> {
        let policy = if data.lenient {
            DanglingPolicy::Lenient
        } else {
            DanglingPolicy::Strict
        };
        match (&data.articles, &data.engagements, &self.config) {
            (Some(a), Some(e), _) => Ok(Dataset::load(a, e, policy)?),
            (_, _, Some(c)) => {
                let mut c = c.clone();
                if let Some(d) = c.data.as_mut() {
                    if data.lenient {
                        d.dangling = policy;
                    }
                }
                Ok(c.load_dataset()?)
            }
            _ => Err(Error::InvalidParameter("give --articles and --engagements, or --config".into()).into()),
        }
    }

    fn graph_config(&self, args: &GraphArgs) -> GraphConfig {
        let mut g = self.config().align.graph;
        if let Some(t_u) = args.t_u {
            g.t_u = t_u;
        }
        if let Some(m) = args.measure {
            g.measure = m.into();
        }
        if args.zero_diagonal {
            g.options.zero_diagonal = true;
        }
        if let Some(i) = args.isolated {
            g.options.isolated = match i {
                Isolated::SelfLoop => IsolatedPolicy::SelfLoop,
                Isolated::Zero => IsolatedPolicy::Zero,
            };
        }
        g
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<PathBuf> {
        let mut w = self.create(name)?;
        let path = self.out.join(name);
        f(&mut w)
            .and_then(|()| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .is_some_and(Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    let mut last = msg.clone();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !last.contains(&s) {
            msg.push_str(": ");
            msg.push_str(&s);
        }
        last = s;
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let ctx = Session {
        config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Ingest { data, split } => ingest(&ctx, &data, split.as_deref()),
        Command::Fna {
            data,
            t_u,
            measure,
            bins,
        } => {
            let ds = ctx.dataset(&data)?;
            let g = ctx.config().align.graph;
            let table = compute_fna(&ds, t_u.unwrap_or(g.t_u), measure.map_or(g.measure, Into::into))?;
            let hist = fna_histogram(&table, bins)?;
            ctx.write_with("fna.csv", |w| table.write_csv(w))?;
            ctx.write_with("fna_histogram.csv", |w| hist.write_csv(w))?;
            let mut stdout = io::stdout().lock();
            hist.write_csv(&mut stdout)?;
            Ok(())
        }
        Command::Graph { data, graph } => {
            let ds = ctx.dataset(&data)?;
            let g = build_graph(&ds, &ctx.graph_config(&graph))?;
            let path = ctx.write_with("graph.txt", |w| g.write(w))?;
            println!(
                "{} articles, {} stored entries, {} isolated -> {}",
                g.n(),
                g.edge_count(),
                g.degrees().iter().filter(|&&d| d == 0.0).count(),
                path.display()
            );
            Ok(())
        }
        Command::Align {
            data,
            graph,
            split,
            n,
            predictions,
            t_p,
            k,
            no_tpl,
            no_graph,
            strict_threshold,
            snapshots,
        } => {
            let ds = ctx.dataset(&data)?;
            let cfg = ctx.config();
            let split = match split {
                Some(path) => SplitSpec::load(path)?,
                None => {
                    let split = make_split(&ds, n.unwrap_or(cfg.n), ctx.seed.unwrap_or(cfg.master_seed))?;
                    ctx.write_with("split.json", |w| split.write(w))?;
                    split
                }
            };
            let p = match predictions.or_else(|| cfg.data.as_ref().and_then(|d| d.predictions.clone())) {
                Some(path) => load_predictions(path, &ds)?,
                None => predict(&train_baseline(&ds, &split, &cfg.baseline)?, &ds),
            };
            let rule = if strict_threshold {
                ThresholdRule::Above
            } else {
                cfg.align.threshold_rule
            };
            let mut h = inject_ground_truth(&p, &ds, &split)?;
            if cfg.align.use_tpl && !no_tpl {
                h = h.harden_unlabeled(t_p.unwrap_or(cfg.align.t_p), rule)?;
            }
            let steps = if cfg.align.use_graph && !no_graph {
                k.unwrap_or(cfg.align.k)
            } else {
                0
            };
            let g = build_graph(&ds, &ctx.graph_config(&graph))?;
            let aligned = propagate(&g, h.scores(), steps, snapshots)?;
            let labels = predict_labels(&aligned.scores, &h)?;
            ctx.write_with("labels.csv", |w| {
                writeln!(w, "article_id,label")?;
                for (id, c) in labels.by_id(&ds) {
                    writeln!(w, "{id},{c}")?;
                }
                Ok(())
            })?;
            ctx.write_with("scores.csv", |w| write_scores(&aligned, &ds, w))?;

            println!(
                "{} labeled, {} pseudo-labeled, {} predicted, {} all-zero rows",
                split.len(),
                h.count(veralign::align::RowKind::PseudoLabel),
                labels.labels.len(),
                labels.zero_rows.len()
            );
            let eval_ids: Vec<&str> = labels.by_id(&ds).map(|(id, _)| id).collect();
            if !eval_ids.is_empty() && eval_ids.iter().all(|id| ds.labels().get(id).is_some()) {
                let predicted: HashMap<&str, usize> = labels.by_id(&ds).collect();
                println!("accuracy {:.3}%", accuracy(&predicted, ds.labels(), &eval_ids)?);
            }
            Ok(())
        }
        Command::Synth {
            articles,
            users,
            consistency,
            overlap,
        } => {
            let mut s = ctx.config().synth.unwrap_or_default();
            s.n_articles = articles.unwrap_or(s.n_articles);
            s.n_users = users.unwrap_or(s.n_users);
            s.consistency = consistency.unwrap_or(s.consistency);
            s.class_token_overlap = overlap.unwrap_or(s.class_token_overlap);
            s.seed = ctx.seed.unwrap_or(s.seed);
            let ds = generate(&s)?;
            ctx.write_with("articles.jsonl", |w| ds.write_articles(w))?;
            ctx.write_with("engagements.csv", |w| ds.write_engagements(w))?;
            println!(
                "{} articles, {} users, {} engagements -> {}",
                ds.n_articles(),
                ds.n_users(),
                ds.engagements().len(),
                ctx.out.display()
            );
            Ok(())
        }
        Command::Eval => eval(&ctx),
        Command::Report { input } => report(&input),
    }
}

fn ingest(ctx: &Session, data: &DataArgs, split: Option<&Path>) -> Result<()> {
    let ds = ctx.dataset(data)?;
    println!(
        "{} articles ({} labeled), {} users, {} engagements, {} dropped",
        ds.n_articles(),
        ds.labels().len(),
        ds.n_users(),
        ds.engagements().len(),
        ds.dropped_engagements()
    );
    if let Some(path) = split {
        let r = validate_split(&ds, &SplitSpec::load(path)?)?;
        println!(
            "split n={} real={} fake={} balanced={}",
            r.n, r.real, r.fake, r.balanced
        );
    }
    ctx.write_with("canonical_articles.jsonl", |w| ds.write_articles(w))?;
    ctx.write_with("canonical_engagements.csv", |w| ds.write_engagements(w))?;
    Ok(())
}

fn eval(ctx: &Session) -> Result<()> {
    let Some(mut config) = ctx.config.clone() else {
        return Err(Error::InvalidParameter("eval needs --config".into()).into());
    };
    if let Some(seed) = ctx.seed {
        config.master_seed = seed;
        config.seeds = None;
    }
    let reports: Vec<ExperimentReport> = if config.grid.is_some() {
        run_grid(&config)?
    } else {
        vec![run_experiment(&config)?]
    };
    ctx.write_with("report.jsonl", |w| {
        reports.iter().try_for_each(|r| r.write_jsonl(&mut *w))
    })?;
    ctx.write_with("report.txt", |w| {
        reports.iter().try_for_each(|r| {
            r.write_table(&mut *w)?;
            writeln!(w)
        })
    })?;
    let mut stdout = io::stdout().lock();
    for r in &reports {
        r.write_table(&mut stdout)?;
        writeln!(stdout)?;
    }
    Ok(())
}

fn report(input: &Path) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let mut runs: Vec<RunRecord> = Vec::new();
    let mut stdout = io::stdout().lock();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::parse(input.display().to_string(), i + 1, e);
        let value: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
        match value.get("record").and_then(|r| r.as_str()) {
            Some("run") => runs.push(serde_json::from_value(value).map_err(parse_err)?),
            Some("summary") => {
                let header = (value.get("n"), value.get("params"));
                if let (Some(n), Some(p)) = header {
                    writeln!(stdout, "n={n} params={p}")?;
                }
                let summary: RunSummary = serde_json::from_value(value).map_err(parse_err)?;
                write_summary_table(&runs, &summary, &mut stdout)?;
                writeln!(stdout)?;
                runs.clear();
            }
            _ => bail!(Error::parse(input.display().to_string(), i + 1, "missing record tag")),
        }
    }
    if !runs.is_empty() {
        bail!(Error::parse(
            input.display().to_string(),
            0,
            "runs without a summary record"
        ));
    }
    Ok(())
}
