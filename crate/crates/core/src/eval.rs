//! Few-shot experiment harness: balanced seeded splits, the full
//! predict → inject → harden → propagate → argmax pipeline per seed,
//! accuracy on the unlabeled articles, ablations and paired significance.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{inject_ground_truth, predict_labels, propagate, RowKind, ThresholdRule};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphConfig, ProximityGraph};
use crate::ingest::{DanglingPolicy, Dataset, GoldLabels, SplitSpec, NUM_CLASSES};
use crate::matrix::argmax;
use crate::predict::{load_predictions, predict, train_baseline, BaselineParams, PredictionMatrix};
use crate::stats::{wilcoxon_signed_rank, WilcoxonResult, MIN_PAIRS};
use crate::synth::{generate, SynthConfig};

/// Runs per experiment when no explicit seed list is given.
pub const DEFAULT_RUNS: usize = 20;

/// Samples `n / 2` articles of each class without replacement.
pub fn make_split(dataset: &Dataset, n: usize, seed: u64) -> Result<SplitSpec> {
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("training size {n} is odd")));
    }
    let per_class = n / 2;
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for i in 0..dataset.n_articles() {
        if let Some(c) = dataset.label_at(i) {
            by_class[c].push(i);
        }
    }
    if let Some(c) = (0..NUM_CLASSES).find(|&c| by_class[c].len() < per_class) {
        return Err(Error::InvalidSplit(format!(
            "class {c} has {} labeled articles, need {per_class}",
            by_class[c].len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, members) in by_class.iter().enumerate() {
        for pick in sample(&mut rng, members.len(), per_class) {
            ids.push(dataset.id_of(members[pick]).to_string());
            labels.push(class);
        }
    }
    SplitSpec::new(ids, labels)
}

/// Percentage of `eval_ids` whose predicted class matches the gold label.
pub fn accuracy(predictions: &HashMap<&str, usize>, gold: &GoldLabels, eval_ids: &[&str]) -> Result<f64> {
    if eval_ids.is_empty() {
        return Err(Error::InvalidParameter("no articles to evaluate".into()));
    }
    let missing: Vec<String> = eval_ids
        .iter()
        .filter(|id| !predictions.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let unlabeled: Vec<String> = eval_ids
        .iter()
        .filter(|id| gold.get(id).is_none())
        .map(|id| id.to_string())
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::Unlabeled(unlabeled));
    }
    let correct = eval_ids
        .iter()
        .filter(|id| gold.get(id) == predictions.get(*id).copied())
        .count();
    Ok(100.0 * correct as f64 / eval_ids.len() as f64)
}

/// SplitMix64 step: independent per-run seeds from one master seed.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    let mut z = master.wrapping_add(run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_t_p() -> f64 {
    95.0
}

fn default_k() -> usize {
    2
}

fn yes() -> bool {
    true
}

/// Alignment hyperparameters and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    #[serde(default = "default_t_p")]
    pub t_p: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Off gives the "-TPL" variant.
    #[serde(default = "yes")]
    pub use_tpl: bool,
    /// Off gives the "-G" variant: labels are the argmax of H itself.
    #[serde(default = "yes")]
    pub use_graph: bool,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
    #[serde(default)]
    pub graph: GraphConfig,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            t_p: default_t_p(),
            k: default_k(),
            use_tpl: true,
            use_graph: true,
            threshold_rule: ThresholdRule::default(),
            graph: GraphConfig::default(),
        }
    }
}

/// Where base predictions come from.
#[derive(Debug, Clone)]
pub enum BaseSource {
    /// Fixed matrix shared by every run (e.g. from the prompt tuner).
    Fixed(PredictionMatrix),
    /// Built-in classifier retrained on each run's split.
    Baseline(BaselineParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    /// Argmax of the base predictions on the unlabeled articles.
    pub base_accuracy: f64,
    pub aligned_accuracy: f64,
    pub pseudo_labeled: usize,
    pub threshold: Option<f64>,
    /// Unlabeled rows whose aligned scores were all zero.
    pub zero_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<(String, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub mean_base_accuracy: f64,
    pub mean_aligned_accuracy: f64,
    /// Runs where aligned accuracy beat base accuracy.
    pub wins: usize,
    pub wilcoxon: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub n: usize,
    pub params: AlignParams,
    pub runs: Vec<RunRecord>,
    pub summary: RunSummary,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Order-independent mean: the sum runs over sorted values.
pub fn mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// One seed of the pipeline against a prebuilt graph.
pub fn run_once(
    dataset: &Dataset,
    graph: Option<&ProximityGraph>,
    base: &BaseSource,
    n: usize,
    seed: u64,
    params: &AlignParams,
    keep_predictions: bool,
) -> Result<RunRecord> {
    let split = make_split(dataset, n, seed)?;
    let p = match base {
        BaseSource::Fixed(p) => p.clone(),
        BaseSource::Baseline(hp) => predict(&train_baseline(dataset, &split, hp)?, dataset),
    };
    let mut h = inject_ground_truth(&p, dataset, &split)?;
    let eval_ids: Vec<&str> = (0..dataset.n_articles())
        .filter(|&i| h.kinds()[i] != RowKind::GroundTruth)
        .map(|i| dataset.id_of(i))
        .collect();

    let base_pred: HashMap<&str, usize> = eval_ids
        .iter()
        .map(|&id| (id, argmax(p.row(dataset.index_of(id).expect("id from dataset")))))
        .collect();
    let base_accuracy = accuracy(&base_pred, dataset.labels(), &eval_ids)?;

    if params.use_tpl {
        h = h.harden_unlabeled(params.t_p, params.threshold_rule)?;
    }
    let steps = if params.use_graph { params.k } else { 0 };
    let scores = match graph {
        Some(g) if steps > 0 => propagate(g, h.scores(), steps, false)?.scores,
        _ => h.scores().clone(),
    };
    let labels = predict_labels(&scores, &h)?;
    let aligned: HashMap<&str, usize> = labels.by_id(dataset).collect();
    let aligned_accuracy = accuracy(&aligned, dataset.labels(), &eval_ids)?;

    Ok(RunRecord {
        seed,
        n_train: split.len(),
        n_eval: eval_ids.len(),
        base_accuracy,
        aligned_accuracy,
        pseudo_labeled: h.count(RowKind::PseudoLabel),
        threshold: h.threshold(),
        zero_rows: labels.zero_rows.len(),
        predictions: keep_predictions.then(|| labels.by_id(dataset).map(|(id, c)| (id.to_string(), c)).collect()),
    })
}

/// Runs every seed (in parallel) and aggregates.
pub fn run_on_dataset(
    dataset: &Dataset,
    base: &BaseSource,
    n: usize,
    seeds: &[u64],
    params: &AlignParams,
    keep_predictions: bool,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("no seeds".into()));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::InvalidParameter("seeds must be distinct".into()));
    }
    if let BaseSource::Fixed(p) = base {
        if p.rows() != dataset.n_articles() {
            return Err(Error::DimensionMismatch(format!(
                "{} prediction rows for {} articles",
                p.rows(),
                dataset.n_articles()
            )));
        }
    }
    let graph = if params.use_graph && params.k > 0 {
        Some(build_graph(dataset, &params.graph)?)
    } else {
        None
    };
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            run_once(dataset, graph.as_ref(), base, n, seed, params, keep_predictions).map_err(|e| Error::Run {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(ExperimentReport {
        n,
        params: *params,
        runs,
        summary,
        wall_time: started.elapsed(),
    })
}

pub fn summarize(runs: &[RunRecord]) -> RunSummary {
    let base: Vec<f64> = runs.iter().map(|r| r.base_accuracy).collect();
    let aligned: Vec<f64> = runs.iter().map(|r| r.aligned_accuracy).collect();
    let wilcoxon = if runs.len() >= MIN_PAIRS {
        wilcoxon_signed_rank(&aligned, &base).ok()
    } else {
        None
    };
    RunSummary {
        runs: runs.len(),
        mean_base_accuracy: mean(&base),
        mean_aligned_accuracy: mean(&aligned),
        wins: runs.iter().filter(|r| r.aligned_accuracy > r.base_accuracy).count(),
        wilcoxon,
    }
}

impl ExperimentReport {
    /// Line-delimited JSON: one "run" record per seed, then a "summary".
    /// Contains nothing time-dependent.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            record: &'a str,
            n: usize,
            params: &'a AlignParams,
            #[serde(flatten)]
            body: &'a T,
        }
        for run in &self.runs {
            serde_json::to_writer(
                &mut w,
                &Tagged {
                    record: "run",
                    n: self.n,
                    params: &self.params,
                    body: run,
                },
            )?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut w,
            &Tagged {
                record: "summary",
                n: self.n,
                params: &self.params,
                body: &self.summary,
            },
        )?;
        w.write_all(b"\n")
    }

    pub fn write_table(&self, mut w: impl Write) -> std::io::Result<()> {
        let p = &self.params;
        writeln!(
            w,
            "n={} t_p={} t_u={} k={} tpl={} graph={}",
            self.n, p.t_p, p.graph.t_u, p.k, p.use_tpl, p.use_graph
        )?;
        write_summary_table(&self.runs, &self.summary, &mut w)?;
        writeln!(w, "wall time   {:.3}s", self.wall_time.as_secs_f64())
    }
}

pub fn write_summary_table(runs: &[RunRecord], summary: &RunSummary, mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{:>20}  {:>8}  {:>8}  {:>7}  {:>10}",
        "seed", "base%", "aligned%", "pseudo", "threshold"
    )?;
    for r in runs {
        let threshold = r.threshold.map_or_else(|| "-".to_string(), |t| format!("{t:.6}"));
        writeln!(
            w,
            "{:>20}  {:>8.3}  {:>8.3}  {:>7}  {:>10}",
            r.seed, r.base_accuracy, r.aligned_accuracy, r.pseudo_labeled, threshold
        )?;
    }
    writeln!(
        w,
        "{:>20}  {:>8.3}  {:>8.3}",
        "mean", summary.mean_base_accuracy, summary.mean_aligned_accuracy
    )?;
    writeln!(w, "wins        {}/{}", summary.wins, summary.runs)?;
    match &summary.wilcoxon {
        Some(wx) => writeln!(
            w,
            "wilcoxon    T={} z={:.4} p={:.6e} n={}",
            wx.statistic, wx.z, wx.p_value, wx.n_effective
        ),
        None => writeln!(w, "wilcoxon    n/a"),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub articles: PathBuf,
    pub engagements: PathBuf,
    /// Base prediction file; without it the built-in baseline is trained per run.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    #[serde(default)]
    pub dangling: DanglingPolicy,
}

/// Lists to sweep; each empty list falls back to the scalar setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub t_p: Vec<f64>,
    #[serde(default)]
    pub t_u: Vec<u64>,
    #[serde(default)]
    pub k: Vec<usize>,
}

fn default_n() -> usize {
    16
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: Option<DataConfig>,
    /// Used when `data` is absent.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Explicit seeds; otherwise `runs` seeds are derived from `master_seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub keep_predictions: bool,
    #[serde(default)]
    pub align: AlignParams,
    #[serde(default)]
    pub baseline: BaselineParams,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            synth: None,
            n: default_n(),
            seeds: None,
            runs: default_runs(),
            master_seed: 0,
            keep_predictions: false,
            align: AlignParams::default(),
            baseline: BaselineParams::default(),
            grid: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML config; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::parse(path.display().to_string(), line, e.message())
        })?;
        if let (Some(data), Some(dir)) = (config.data.as_mut(), path.parent()) {
            for p in [&mut data.articles, &mut data.engagements]
                .into_iter()
                .chain(data.predictions.as_mut())
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.runs as u64)
                .map(|i| derive_seed(self.master_seed, i))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for n in self.grid.as_ref().map_or(&[][..], |g| &g.n[..]).iter().chain([&self.n]) {
            if n % 2 != 0 {
                return Err(Error::InvalidParameter(format!("training size {n} is odd")));
            }
        }
        let seeds = self.seed_list();
        if seeds.is_empty() {
            return Err(Error::InvalidParameter("no seeds".into()));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(Error::InvalidParameter("seeds must be distinct".into()));
        }
        if self.data.is_none() && self.synth.is_none() {
            return Err(Error::InvalidParameter(
                "config needs a [data] or [synth] section".into(),
            ));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.data, &self.synth) {
            (Some(d), _) => Dataset::load(&d.articles, &d.engagements, d.dangling),
            (None, Some(s)) => generate(s),
            (None, None) => Err(Error::InvalidParameter(
                "config needs a [data] or [synth] section".into(),
            )),
        }
    }

    pub fn base_source(&self, dataset: &Dataset) -> Result<BaseSource> {
        match self.data.as_ref().and_then(|d| d.predictions.as_ref()) {
            Some(path) => Ok(BaseSource::Fixed(load_predictions(path, dataset)?)),
            None => Ok(BaseSource::Baseline(self.baseline)),
        }
    }

    /// Every (n, params) combination the grid spans, in nested order
    /// n → t_u → t_p → k.
    pub fn combinations(&self) -> Vec<(usize, AlignParams)> {
        fn or<T: Copy>(v: Vec<T>, d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v
            }
        }
        let grid = self.grid.clone().unwrap_or_default();
        let mut out = Vec::new();
        for &n in &or(grid.n.clone(), self.n) {
            for &t_u in &or(grid.t_u.clone(), self.align.graph.t_u) {
                for &t_p in &or(grid.t_p.clone(), self.align.t_p) {
                    for &k in &or(grid.k.clone(), self.align.k) {
                        let mut p = self.align;
                        p.graph.t_u = t_u;
                        p.t_p = t_p;
                        p.k = k;
                        out.push((n, p));
                    }
                }
            }
        }
        out
    }
}

/// Loads the data and runs the configured (scalar) experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let base = config.base_source(&dataset)?;
    run_on_dataset(
        &dataset,
        &base,
        config.n,
        &config.seed_list(),
        &config.align,
        config.keep_predictions,
    )
}

/// One report per grid combination, sharing the loaded dataset.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let base = config.base_source(&dataset)?;
    let seeds = config.seed_list();
    config
        .combinations()
        .into_iter()
        .map(|(n, params)| run_on_dataset(&dataset, &base, n, &seeds, &params, config.keep_predictions))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Article, EngagementRecord};

    fn labeled(n_per_class: usize) -> Dataset {
        let mut articles = Vec::new();
        let mut labels = GoldLabels::new();
        for i in 0..2 * n_per_class {
            let id = format!("a{i:03}");
            labels.insert(id.clone(), i % 2).unwrap();
            articles.push(Article {
                id,
                text: format!("token{} shared", i % 2),
            });
        }
        Dataset::build(articles, labels, Vec::<EngagementRecord>::new(), DanglingPolicy::Strict).unwrap()
    }

    #[test]
    fn split_is_balanced_and_deterministic() {
        let ds = labeled(241);
        let s = make_split(&ds, 16, 7).unwrap();
        assert_eq!(s.class_counts(), [8, 8]);
        for (id, c) in s.iter() {
            assert_eq!(ds.labels().get(id), Some(c));
        }
        assert_eq!(make_split(&ds, 16, 7).unwrap(), s);
        assert_ne!(make_split(&ds, 16, 8).unwrap(), s);
        assert!(make_split(&ds, 0, 7).unwrap().is_empty());
    }

    #[test]
    fn split_errors() {
        let ds = labeled(3);
        assert!(matches!(make_split(&ds, 8, 0), Err(Error::InvalidSplit(_))));
        assert!(matches!(make_split(&ds, 3, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn accuracy_counts() {
        let gold: GoldLabels = [("a", 0), ("b", 1), ("c", 1), ("d", 0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let ids = ["a", "b", "c", "d"];
        let all: HashMap<&str, usize> = [("a", 0), ("b", 1), ("c", 1), ("d", 0)].into_iter().collect();
        assert_eq!(accuracy(&all, &gold, &ids).unwrap(), 100.0);
        let half: HashMap<&str, usize> = [("a", 0), ("b", 0), ("c", 1), ("d", 1)].into_iter().collect();
        assert_eq!(accuracy(&half, &gold, &ids).unwrap(), 50.0);
        let partial: HashMap<&str, usize> = [("a", 0)].into_iter().collect();
        assert!(matches!(
            accuracy(&partial, &gold, &ids),
            Err(Error::MissingPredictions(_))
        ));
    }

    #[test]
    fn six_article_scenario() {
        // hand count: a ok, b wrong, c ok, d ok, e wrong, f ok → 4/6
        let gold: GoldLabels = [("a", 0), ("b", 0), ("c", 1), ("d", 1), ("e", 1), ("f", 0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let preds: HashMap<&str, usize> = [("a", 0), ("b", 1), ("c", 1), ("d", 1), ("e", 0), ("f", 0)]
            .into_iter()
            .collect();
        let acc = accuracy(&preds, &gold, &["a", "b", "c", "d", "e", "f"]).unwrap();
        assert_eq!(acc, 100.0 * 4.0 / 6.0);
    }

    #[test]
    fn derived_seeds_distinct() {
        let seeds: BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let v = [66.1, 70.3, 0.1, 99.9, 12.000001, 1e-9];
        let mut r = v;
        r.reverse();
        assert_eq!(mean(&v), mean(&r));
    }

    #[test]
    fn config_defaults_and_grid() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            n = 32
            [synth]
            n_articles = 100
            [align]
            k = 3
            [align.graph]
            t_u = 2
            [grid]
            t_p = [80.0, 95.0]
            k = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.runs, 20);
        assert_eq!(cfg.seed_list().len(), 20);
        assert_eq!(cfg.align.t_p, 95.0);
        assert!(cfg.align.use_tpl && cfg.align.use_graph);
        let combos = cfg.combinations();
        assert_eq!(combos.len(), 4);
        assert!(combos.iter().all(|(n, p)| *n == 32 && p.graph.t_u == 2));
        cfg.validate().unwrap();

        let odd = ExperimentConfig { n: 15, ..cfg.clone() };
        assert!(odd.validate().is_err());
        let dup = ExperimentConfig {
            seeds: Some(vec![1, 1]),
            ..cfg
        };
        assert!(dup.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }
}
