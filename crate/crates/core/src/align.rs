//! Confidence-informed alignment: ground-truth injection, thresholded pseudo
//! labeling, k-step propagation over the proximity graph and argmax labels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ProximityGraph;
use crate::ingest::{Dataset, SplitSpec};
use crate::matrix::{argmax, fmt_f64, Matrix};
use crate::predict::PredictionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    GroundTruth,
    PseudoLabel,
    Soft,
}

/// Which confidences count as reaching the percentile threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    #[default]
    AtOrAbove,
    Above,
}

impl ThresholdRule {
    fn selects(self, confidence: f64, threshold: f64) -> bool {
        match self {
            ThresholdRule::AtOrAbove => confidence >= threshold,
            ThresholdRule::Above => confidence > threshold,
        }
    }
}

/// H: P with training rows replaced by their labels and confident unlabeled
/// rows hardened, tagged per row with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    scores: Matrix,
    kinds: Vec<RowKind>,
    threshold: Option<f64>,
}

impl ConfidenceMatrix {
    /// Every row starts as a soft copy of P.
    pub fn from_predictions(p: &PredictionMatrix) -> Self {
        Self {
            scores: p.matrix().clone(),
            kinds: vec![RowKind::Soft; p.rows()],
            threshold: None,
        }
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn kinds(&self) -> &[RowKind] {
        &self.kinds
    }

    /// Pseudo-labeling threshold actually used, once hardening has run.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn count(&self, kind: RowKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    /// Hardens the confident rows among those not holding ground truth.
    pub fn harden_unlabeled(mut self, t_p: f64, rule: ThresholdRule) -> Result<Self> {
        let unlabeled: Vec<usize> = (0..self.kinds.len())
            .filter(|&i| self.kinds[i] != RowKind::GroundTruth)
            .collect();
        let mut p_u = Matrix::zeros(unlabeled.len(), self.scores.cols());
        for (r, &i) in unlabeled.iter().enumerate() {
            p_u.row_mut(r).copy_from_slice(self.scores.row(i));
        }
        let hardening = thresholded_pl(&p_u, t_p, rule)?;
        for (r, &i) in unlabeled.iter().enumerate() {
            if hardening.hardened[r] {
                self.scores.row_mut(i).copy_from_slice(hardening.rows.row(r));
                self.kinds[i] = RowKind::PseudoLabel;
            }
        }
        self.threshold = Some(hardening.threshold);
        Ok(self)
    }
}

/// Replaces the rows of labeled articles with their one-hot labels.
pub fn inject_ground_truth(p: &PredictionMatrix, dataset: &Dataset, split: &SplitSpec) -> Result<ConfidenceMatrix> {
    if p.rows() != dataset.n_articles() {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction rows for {} articles",
            p.rows(),
            dataset.n_articles()
        )));
    }
    let indices = dataset.indices_of(split.labeled_ids())?;
    let mut h = ConfidenceMatrix::from_predictions(p);
    for (&i, &class) in indices.iter().zip(split.labels()) {
        let row = h.scores.row_mut(i);
        row.fill(0.0);
        row[class] = 1.0;
        h.kinds[i] = RowKind::GroundTruth;
    }
    Ok(h)
}

/// Nearest-rank percentile: the value at ascending rank ⌈t_p/100 · m⌉.
pub fn nearest_rank_percentile(values: &[f64], t_p: f64) -> Result<f64> {
    if !(t_p > 0.0 && t_p <= 100.0) {
        return Err(Error::InvalidParameter(format!("percentile {t_p} not in (0, 100]")));
    }
    if values.is_empty() {
        return Err(Error::InvalidParameter("percentile of no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let rank = ((t_p * m as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, m) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hardening {
    pub rows: Matrix,
    pub threshold: f64,
    pub hardened: Vec<bool>,
}

/// Hardens every row whose top probability reaches the `t_p`-th percentile
/// of all top probabilities into a one-hot row at its argmax.
pub fn thresholded_pl(p_u: &Matrix, t_p: f64, rule: ThresholdRule) -> Result<Hardening> {
    if p_u.rows() == 0 {
        return Err(Error::InvalidParameter(
            "pseudo labeling needs at least one unlabeled row".into(),
        ));
    }
    let confidence: Vec<f64> = p_u
        .iter_rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let threshold = nearest_rank_percentile(&confidence, t_p)?;
    let mut rows = p_u.clone();
    let hardened: Vec<bool> = confidence.iter().map(|&c| rule.selects(c, threshold)).collect();
    for (i, _) in hardened.iter().enumerate().filter(|(_, &h)| h) {
        let class = argmax(p_u.row(i));
        let row = rows.row_mut(i);
        row.fill(0.0);
        row[class] = 1.0;
    }
    Ok(Hardening {
        rows,
        threshold,
        hardened,
    })
}

/// Ŷ and, optionally, the intermediate A_T^s·H for s = 0..=k.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedScores {
    pub scores: Matrix,
    pub steps: usize,
    pub snapshots: Vec<Matrix>,
}

/// Ŷ = A_T^k H by k successive sparse products.
pub fn propagate(graph: &ProximityGraph, h: &Matrix, k: usize, keep_snapshots: bool) -> Result<AlignedScores> {
    if graph.n() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes, H has {} rows",
            graph.n(),
            h.rows()
        )));
    }
    let mut snapshots = Vec::new();
    let mut current = h.clone();
    for _ in 0..k {
        let next = graph.mul(&current)?;
        if keep_snapshots {
            snapshots.push(std::mem::replace(&mut current, next));
        } else {
            current = next;
        }
    }
    if keep_snapshots {
        snapshots.push(current.clone());
    }
    Ok(AlignedScores {
        scores: current,
        steps: k,
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPredictions {
    /// (dense index, class) for every article not in the training split.
    pub labels: Vec<(usize, usize)>,
    /// Unlabeled rows that were entirely zero; their label comes from the tie rule alone.
    pub zero_rows: Vec<usize>,
}

impl LabelPredictions {
    pub fn by_id<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = (&'a str, usize)> + 'a {
        self.labels.iter().map(move |&(i, c)| (dataset.id_of(i), c))
    }
}

/// Argmax (ties to class 0) of every row not holding ground truth.
pub fn predict_labels(scores: &Matrix, h: &ConfidenceMatrix) -> Result<LabelPredictions> {
    if scores.rows() != h.kinds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} score rows, {} confidence rows",
            scores.rows(),
            h.kinds.len()
        )));
    }
    let mut labels = Vec::new();
    let mut zero_rows = Vec::new();
    for (i, row) in scores.iter_rows().enumerate() {
        if h.kinds[i] == RowKind::GroundTruth {
            continue;
        }
        if row.iter().all(|&v| v == 0.0) {
            zero_rows.push(i);
        }
        labels.push((i, argmax(row)));
    }
    Ok(LabelPredictions { labels, zero_rows })
}

/// Writes "article_id,step,score_real,score_fake", one block per snapshot
/// (or only the final scores when no snapshots were kept).
pub fn write_scores(aligned: &AlignedScores, dataset: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "article_id,step,score_real,score_fake")?;
    let blocks: Vec<(usize, &Matrix)> = if aligned.snapshots.is_empty() {
        vec![(aligned.steps, &aligned.scores)]
    } else {
        aligned.snapshots.iter().enumerate().collect()
    };
    for (step, m) in blocks {
        for (i, row) in m.iter_rows().enumerate() {
            let vals: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{},{step},{}", dataset.id_of(i), vals.join(","))?;
        }
    }
    Ok(())
}
