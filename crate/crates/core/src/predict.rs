//! Base prediction matrix P: loaded from a prediction file, built from
//! answer-token scores, or produced by the built-in character n-gram
//! classifier.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, SplitSpec, NUM_CLASSES};
use crate::matrix::{fmt_f64, Matrix};

/// Every stored prediction row sums to 1 within this.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// File rows off by at most this much are renormalized; beyond it they are rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

const PREDICTION_HEADER: [&str; 3] = ["article_id", "p_real", "p_fake"];

/// Row-stochastic N×C matrix in dataset dense order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix(Matrix);

impl PredictionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            check_row(i, row, ROW_SUM_TOLERANCE).map_err(Error::Predictions)?;
        }
        Ok(Self(m))
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        m.as_mut_slice().fill(1.0 / cols as f64);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Writes "article_id,p_real,p_fake" in dense order.
    pub fn write(&self, dataset: &Dataset, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", PREDICTION_HEADER.join(","))?;
        for (i, row) in self.0.iter_rows().enumerate() {
            let probs: Vec<String> = row.iter().map(|&p| fmt_f64(p)).collect();
            writeln!(w, "{},{}", dataset.id_of(i), probs.join(","))?;
        }
        Ok(())
    }
}

fn check_row(i: usize, row: &[f64], tolerance: f64) -> std::result::Result<f64, String> {
    if let Some(&p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("row {i}: probability {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(format!("row {i}: sums to {sum}"));
    }
    Ok(sum)
}

pub fn load_predictions(path: impl AsRef<Path>, dataset: &Dataset) -> Result<PredictionMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(file, dataset, &path.display().to_string())
}

/// Reads a prediction file covering every dataset article exactly once and
/// reorders it to dense index order.
pub fn read_predictions(reader: impl Read, dataset: &Dataset, context: &str) -> Result<PredictionMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, 1, e))?;
    if headers.iter().map(str::trim).ne(PREDICTION_HEADER) {
        return Err(Error::parse(
            context,
            1,
            format!("expected header {:?}", PREDICTION_HEADER.join(",")),
        ));
    }
    let n = dataset.n_articles();
    let mut rows: Vec<Option<[f64; NUM_CLASSES]>> = vec![None; n];
    let mut extra = BTreeSet::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| Error::parse(context, e.position().map_or(0, |p| p.line() as usize), e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].trim();
        let mut probs = [0.0; NUM_CLASSES];
        for (c, p) in probs.iter_mut().enumerate() {
            *p = rec[c + 1]
                .trim()
                .parse()
                .map_err(|e| Error::parse(context, line, format!("{}: {e}", PREDICTION_HEADER[c + 1])))?;
        }
        let sum = check_row(line, &probs, RENORMALIZE_TOLERANCE)
            .map_err(|m| Error::Predictions(format!("{id} (line {line}): {m}")))?;
        for p in &mut probs {
            *p /= sum;
        }
        match dataset.index_of(id) {
            Some(i) if rows[i].is_some() => {
                return Err(Error::Predictions(format!("duplicate row for {id}")));
            }
            Some(i) => rows[i] = Some(probs),
            None => {
                extra.insert(id.to_string());
            }
        }
    }
    if !extra.is_empty() {
        return Err(Error::Predictions(format!(
            "rows for unknown articles: {}",
            extra.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let missing: Vec<&str> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| dataset.id_of(i))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Predictions(format!("missing rows for: {}", missing.join(", "))));
    }
    let data = rows.into_iter().flatten().flatten().collect();
    PredictionMatrix::new(Matrix::from_vec(n, NUM_CLASSES, data)?)
}

/// Row-wise softmax of answer-token scores.
pub fn answer_softmax(scores: &Matrix) -> Result<PredictionMatrix> {
    let mut out = scores.clone();
    for i in 0..scores.rows() {
        if let Some(col) = scores.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col });
        }
        softmax_in_place(out.row_mut(i));
    }
    Ok(PredictionMatrix(out))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// L2 penalty on the n-gram weights (not the biases).
    pub l2: f64,
    pub iterations: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            ngram_min: 2,
            ngram_max: 4,
            l2: 1e-3,
            iterations: 200,
        }
    }
}

/// Linear softmax classifier over L2-normalized character n-gram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    vocabulary: HashMap<String, usize>,
    /// One weight vector per class, each of vocabulary length.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    params: BaselineParams,
    loss_history: Vec<f64>,
}

impl BaselineModel {
    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn params(&self) -> &BaselineParams {
        &self.params
    }

    /// Training objective before each step and after the last one.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let mut feats: Vec<(usize, f64)> = ngram_counts(text, &self.params)
            .into_iter()
            .filter_map(|(g, c)| self.vocabulary.get(&g).map(|&i| (i, c)))
            .collect();
        feats.sort_unstable_by_key(|f| f.0);
        l2_normalize(&mut feats);
        feats
    }

    fn probabilities(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        let mut logits: Vec<f64> = (0..NUM_CLASSES)
            .map(|c| self.bias[c] + feats.iter().map(|&(i, x)| self.weights[c][i] * x).sum::<f64>())
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    fn objective(&self, examples: &[(Vec<(usize, f64)>, usize)]) -> f64 {
        let ce: f64 = examples
            .iter()
            .map(|(x, y)| -self.probabilities(x)[*y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / examples.len() as f64;
        let penalty: f64 = self.weights.iter().flatten().map(|w| w * w).sum();
        ce + 0.5 * self.params.l2 * penalty
    }
}

fn ngram_counts(text: &str, params: &BaselineParams) -> BTreeMap<String, f64> {
    let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    let mut counts = BTreeMap::new();
    if text.trim().is_empty() {
        return counts;
    }
    for n in params.ngram_min..=params.ngram_max {
        for w in chars.windows(n) {
            *counts.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn l2_normalize(feats: &mut [(usize, f64)]) {
    let norm = feats.iter().map(|f| f.1 * f.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for f in feats {
            f.1 /= norm;
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy plus L2.
///
/// Inputs have unit norm plus a unit bias feature, so the objective's
/// gradient is (1 + l2)-Lipschitz and the fixed step 1 / (1 + l2) never
/// increases the loss. Examples are visited in dense index order, which
/// makes the model independent of split order.
pub fn train_baseline(dataset: &Dataset, split: &SplitSpec, params: &BaselineParams) -> Result<BaselineModel> {
    if params.ngram_min == 0 || params.ngram_min > params.ngram_max {
        return Err(Error::InvalidParameter(format!(
            "n-gram range {}..={} is empty",
            params.ngram_min, params.ngram_max
        )));
    }
    if !(params.l2 >= 0.0 && params.l2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "l2 must be non-negative, got {}",
            params.l2
        )));
    }
    let counts = split.class_counts();
    if split.len() < 2 || counts.contains(&0) {
        return Err(Error::InvalidSplit(format!(
            "training needs both classes present, got counts {counts:?}"
        )));
    }
    let mut labeled: Vec<(usize, usize)> = dataset
        .indices_of(split.labeled_ids())?
        .into_iter()
        .zip(split.labels().iter().copied())
        .collect();
    labeled.sort_unstable();
    let empty: Vec<String> = labeled
        .iter()
        .filter(|(i, _)| dataset.articles()[*i].text.trim().is_empty())
        .map(|(i, _)| dataset.id_of(*i).to_string())
        .collect();
    if !empty.is_empty() {
        return Err(Error::InvalidSplit(format!("empty text for: {}", empty.join(", "))));
    }

    let grams: BTreeSet<String> = labeled
        .iter()
        .flat_map(|(i, _)| ngram_counts(&dataset.articles()[*i].text, params).into_keys())
        .collect();
    let vocabulary: HashMap<String, usize> = grams.into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    let dim = vocabulary.len();
    let mut model = BaselineModel {
        vocabulary,
        weights: vec![vec![0.0; dim]; NUM_CLASSES],
        bias: vec![0.0; NUM_CLASSES],
        params: *params,
        loss_history: Vec::with_capacity(params.iterations + 1),
    };
    let examples: Vec<(Vec<(usize, f64)>, usize)> = labeled
        .iter()
        .map(|&(i, y)| (model.features(&dataset.articles()[i].text), y))
        .collect();

    let step = 1.0 / (1.0 + params.l2);
    let scale = 1.0 / examples.len() as f64;
    for _ in 0..params.iterations {
        model.loss_history.push(model.objective(&examples));
        let mut grad_w: Vec<Vec<f64>> = model
            .weights
            .iter()
            .map(|w| w.iter().map(|v| params.l2 * v).collect())
            .collect();
        let mut grad_b = [0.0; NUM_CLASSES];
        for (x, y) in &examples {
            let p = model.probabilities(x);
            for c in 0..NUM_CLASSES {
                let g = (p[c] - if c == *y { 1.0 } else { 0.0 }) * scale;
                grad_b[c] += g;
                for &(i, v) in x {
                    grad_w[c][i] += g * v;
                }
            }
        }
        for c in 0..NUM_CLASSES {
            for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                *w -= step * g;
            }
            model.bias[c] -= step * grad_b[c];
        }
    }
    model.loss_history.push(model.objective(&examples));
    Ok(model)
}

/// Predictions for every article; an article with no known n-gram gets an
/// exactly uniform row.
pub fn predict(model: &BaselineModel, dataset: &Dataset) -> PredictionMatrix {
    let rows: Vec<Vec<f64>> = dataset
        .articles()
        .par_iter()
        .map(|a| {
            let feats = model.features(&a.text);
            if feats.is_empty() {
                vec![1.0 / NUM_CLASSES as f64; NUM_CLASSES]
            } else {
                model.probabilities(&feats)
            }
        })
        .collect();
    let data = rows.into_iter().flatten().collect();
    PredictionMatrix(Matrix::from_vec(dataset.n_articles(), NUM_CLASSES, data).expect("rows have NUM_CLASSES entries"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Article, DanglingPolicy, GoldLabels};

    fn dataset(texts: &[(&str, &str)]) -> Dataset {
        let articles = texts
            .iter()
            .map(|(id, t)| Article {
                id: id.to_string(),
                text: t.to_string(),
            })
            .collect();
        Dataset::build(articles, GoldLabels::new(), vec![], DanglingPolicy::Strict).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = answer_softmax(&Matrix::from_rows(&[vec![0.0, 0.0], vec![3f64.ln(), 0.0]]).unwrap()).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p.row(1)[0] - 0.75).abs() < 1e-15);
        assert!((p.row(1)[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(matches!(answer_softmax(&m), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn prediction_file_reorders_and_renormalizes() {
        let ds = dataset(&[("a", ""), ("b", "")]);
        let src = "article_id,p_real,p_fake\nb,0.62,0.38000001\na,0.25,0.75\n";
        let p = read_predictions(src.as_bytes(), &ds, "mem").unwrap();
        assert_eq!(p.row(0), &[0.25, 0.75]);
        assert!((p.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.row(1)[0] < 0.62);
    }

    #[test]
    fn prediction_file_errors() {
        let ds = dataset(&[("a", ""), ("b", "")]);
        let missing = "article_id,p_real,p_fake\na,0.5,0.5\n";
        match read_predictions(missing.as_bytes(), &ds, "mem") {
            Err(Error::Predictions(m)) => assert!(m.contains("b"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        let extra = "article_id,p_real,p_fake\na,0.5,0.5\nb,0.5,0.5\nc,0.5,0.5\n";
        assert!(read_predictions(extra.as_bytes(), &ds, "mem").is_err());
        let off = "article_id,p_real,p_fake\na,0.5,0.5\nb,0.6,0.5\n";
        assert!(read_predictions(off.as_bytes(), &ds, "mem").is_err());
        let negative = "article_id,p_real,p_fake\na,1.5,-0.5\nb,0.5,0.5\n";
        assert!(read_predictions(negative.as_bytes(), &ds, "mem").is_err());
        let dup = "article_id,p_real,p_fake\na,0.5,0.5\na,0.5,0.5\nb,0.5,0.5\n";
        assert!(read_predictions(dup.as_bytes(), &ds, "mem").is_err());
        let header = "id,real,fake\na,0.5,0.5\nb,0.5,0.5\n";
        assert!(matches!(
            read_predictions(header.as_bytes(), &ds, "mem"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn prediction_file_round_trip() {
        let ds = dataset(&[("a", ""), ("b", "")]);
        let p = answer_softmax(&Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1]]).unwrap()).unwrap();
        let mut buf = Vec::new();
        p.write(&ds, &mut buf).unwrap();
        assert_eq!(read_predictions(buf.as_slice(), &ds, "mem").unwrap(), p);
    }

    #[test]
    fn minimal_training_and_uniform_empty_row() {
        let ds = dataset(&[("a", "alpha beta"), ("b", "gamma delta"), ("c", "")]);
        let split = SplitSpec::new(vec!["a".into(), "b".into()], vec![0, 1]).unwrap();
        let model = train_baseline(&ds, &split, &BaselineParams::default()).unwrap();
        let p = predict(&model, &ds);
        assert_eq!(p.row(2), &[0.5, 0.5]);
        assert!(p.row(0)[0] > 0.5);
        assert!(p.row(1)[1] > 0.5);
        assert_eq!(predict(&model, &ds), p);
    }

    #[test]
    fn training_preconditions() {
        let ds = dataset(&[("a", "alpha"), ("b", "beta"), ("c", "")]);
        let one_class = SplitSpec::new(vec!["a".into(), "b".into()], vec![1, 1]).unwrap();
        assert!(matches!(
            train_baseline(&ds, &one_class, &BaselineParams::default()),
            Err(Error::InvalidSplit(_))
        ));
        let empty_text = SplitSpec::new(vec!["a".into(), "c".into()], vec![0, 1]).unwrap();
        assert!(matches!(
            train_baseline(&ds, &empty_text, &BaselineParams::default()),
            Err(Error::InvalidSplit(_))
        ));
    }

    #[test]
    fn loss_never_increases() {
        let ds = dataset(&[
            ("a", "the senate passed the bill"),
            ("b", "shocking miracle cure doctors hate"),
            ("c", "officials confirmed the budget"),
            ("d", "you won't believe this secret"),
        ]);
        let split = SplitSpec::new(vec!["a".into(), "b".into(), "c".into(), "d".into()], vec![0, 1, 0, 1]).unwrap();
        let model = train_baseline(
            &ds,
            &split,
            &BaselineParams {
                l2: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let h = model.loss_history();
        assert_eq!(h.len(), 201);
        for w in h.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(h.last().unwrap() < &h[0]);
    }
}
