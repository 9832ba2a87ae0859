//! Fake news affinity: the share of a user's engagements that target fake
//! articles, restricted to active users, plus histogram export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ActivityMeasure, Dataset, FAKE};
use crate::matrix::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FnaEntry {
    pub engagement_count: u64,
    pub fake_count: u64,
    pub fna: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FnaTable {
    entries: BTreeMap<String, FnaEntry>,
    pub t_u: u64,
    pub measure: ActivityMeasure,
}

impl FnaTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&FnaEntry> {
        self.entries.get(user_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FnaEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Writes "user_id,engagement_count,fake_count,fna".
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "user_id,engagement_count,fake_count,fna")?;
        for (u, e) in &self.entries {
            writeln!(w, "{u},{},{},{}", e.engagement_count, e.fake_count, fmt_f64(e.fna))?;
        }
        Ok(())
    }
}

/// FNA for every user whose activity under `measure` is at least `t_u`.
///
/// Every article any user engaged with must carry a gold label.
pub fn compute_fna(dataset: &Dataset, t_u: u64, measure: ActivityMeasure) -> Result<FnaTable> {
    if t_u < 1 {
        return Err(Error::InvalidParameter("t_u must be at least 1".into()));
    }
    let unlabeled: BTreeSet<&str> = dataset
        .links()
        .iter()
        .filter(|l| dataset.label_at(l.article).is_none())
        .map(|l| dataset.id_of(l.article))
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::Unlabeled(unlabeled.into_iter().map(str::to_string).collect()));
    }

    let mut totals = vec![(0u64, 0u64); dataset.n_users()];
    for l in dataset.links() {
        let w = measure.weight(l.reposts);
        let t = &mut totals[l.user];
        t.0 += w;
        if dataset.label_at(l.article) == Some(FAKE) {
            t.1 += w;
        }
    }

    let entries = dataset
        .users()
        .iter()
        .zip(totals)
        .filter(|(_, (total, _))| *total >= t_u)
        .map(|(u, (total, fake))| {
            (
                u.clone(),
                FnaEntry {
                    engagement_count: total,
                    fake_count: fake,
                    fna: fake as f64 / total as f64,
                },
            )
        })
        .collect();
    Ok(FnaTable { entries, t_u, measure })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Users in the first and last bins.
    pub fn extreme_mass(&self) -> u64 {
        match self.counts.as_slice() {
            [] => 0,
            [only] => *only,
            [first, .., last] => first + last,
        }
    }

    /// Writes "bin_lo,bin_hi,count" rows followed by a `#` summary line.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(
                w,
                "{},{},{c}",
                fmt_f64(self.bin_edges[i]),
                fmt_f64(self.bin_edges[i + 1])
            )?;
        }
        writeln!(
            w,
            "# users={} bins={} extreme={}",
            self.total(),
            self.counts.len(),
            self.extreme_mass()
        )
    }
}

/// Uniform bins on [0, 1]; every bin is right-exclusive except the last.
///
/// Bin membership is decided on the integer counts, not the rounded ratio,
/// so values sitting exactly on an edge always land in the upper bin.
pub fn fna_histogram(table: &FnaTable, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidParameter("bins must be at least 2".into()));
    }
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for (_, e) in table.iter() {
        let bin = (u128::from(e.fake_count) * bins as u128 / u128::from(e.engagement_count)) as usize;
        counts[bin.min(bins - 1)] += 1;
    }
    Ok(Histogram { bin_edges, counts })
}
