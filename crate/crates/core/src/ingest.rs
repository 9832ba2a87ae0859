//! Articles, gold labels, engagement records and splits: loading, validation
//! and the dense article index every matrix downstream is keyed by.
//!
//! Dense indices follow lexicographic article id order, never file order, so
//! shuffled inputs produce identical matrices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Number of veracity classes.
pub const NUM_CLASSES: usize = 2;
pub const REAL: usize = 0;
pub const FAKE: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Article {
    pub id: String,
    pub text: String,
}

/// Article id → class index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels(BTreeMap<String, usize>);

impl GoldLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, class: usize) -> Result<()> {
        check_class(class)?;
        self.0.insert(id.into(), class);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.0.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Labels with every class flipped (binary only).
    pub fn swapped(&self) -> Self {
        Self(self.0.iter().map(|(k, &v)| (k.clone(), NUM_CLASSES - 1 - v)).collect())
    }
}

impl FromIterator<(String, usize)> for GoldLabels {
    fn from_iter<T: IntoIterator<Item = (String, usize)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

fn check_class(class: usize) -> Result<()> {
    if class >= NUM_CLASSES {
        return Err(Error::InvalidClass {
            class,
            classes: NUM_CLASSES,
        });
    }
    Ok(())
}

/// Articles in file order plus whatever gold labels the file carried.
#[derive(Debug, Clone, Default)]
pub struct ArticleSet {
    pub articles: Vec<Article>,
    pub labels: GoldLabels,
}

#[derive(Serialize, Deserialize)]
struct ArticleRow {
    id: String,
    #[serde(default)]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

pub fn load_articles(path: impl AsRef<Path>) -> Result<ArticleSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_articles(BufReader::new(file), &path.display().to_string())
}

/// Reads line-delimited JSON article records. Blank lines are skipped.
pub fn read_articles(reader: impl BufRead, context: &str) -> Result<ArticleSet> {
    let mut set = ArticleSet::default();
    let mut seen = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ArticleRow = serde_json::from_str(&line).map_err(|e| Error::parse(context, lineno + 1, e))?;
        if row.id.is_empty() {
            return Err(Error::EmptyId);
        }
        if !seen.insert(row.id.clone()) {
            return Err(Error::DuplicateId(row.id));
        }
        if let Some(label) = row.label {
            set.labels.insert(row.id.clone(), label)?;
        }
        set.articles.push(Article {
            id: row.id,
            text: row.text,
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub user_id: String,
    pub article_id: String,
    pub reposts: u64,
}

/// Merged engagement records, sorted by (user, article).
#[derive(Debug, Clone, Default)]
pub struct EngagementLog {
    pub records: Vec<EngagementRecord>,
    /// Data rows in the source before merging duplicates.
    pub raw_rows: usize,
}

/// Sums repost counts of identical (user, article) pairs.
pub fn merge_engagements(records: impl IntoIterator<Item = EngagementRecord>) -> Vec<EngagementRecord> {
    let mut merged: BTreeMap<(String, String), u64> = BTreeMap::new();
    for r in records {
        *merged.entry((r.user_id, r.article_id)).or_default() += r.reposts;
    }
    merged
        .into_iter()
        .map(|((user_id, article_id), reposts)| EngagementRecord {
            user_id,
            article_id,
            reposts,
        })
        .collect()
}

pub fn load_engagements(path: impl AsRef<Path>) -> Result<EngagementLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_engagements(file, &path.display().to_string())
}

const ENGAGEMENT_HEADER: [&str; 3] = ["user_id", "article_id", "reposts"];

pub fn read_engagements(reader: impl Read, context: &str) -> Result<EngagementLog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, 1, e))?.clone();
    // an empty file has no header at all; treat it as zero rows
    if !headers.is_empty() && headers.iter().map(str::trim).ne(ENGAGEMENT_HEADER) {
        return Err(Error::parse(
            context,
            1,
            format!("expected header {:?}", ENGAGEMENT_HEADER.join(",")),
        ));
    }
    let mut raw = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(context, line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let user_id = rec[0].trim().to_string();
        let article_id = rec[1].trim().to_string();
        if user_id.is_empty() || article_id.is_empty() {
            return Err(Error::parse(context, line, "empty id"));
        }
        let reposts: i64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| Error::parse(context, line, format!("reposts: {e}")))?;
        if reposts < 1 {
            return Err(Error::NonPositiveReposts {
                user_id,
                article_id,
                reposts,
            });
        }
        raw.push(EngagementRecord {
            user_id,
            article_id,
            reposts: reposts as u64,
        });
    }
    let raw_rows = raw.len();
    Ok(EngagementLog {
        records: merge_engagements(raw),
        raw_rows,
    })
}

/// What to do with engagements that reference articles not in the set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DanglingPolicy {
    #[default]
    Strict,
    /// Drop them and count the drops.
    Lenient,
}

/// How a user's engagement volume is counted, both for the activity
/// threshold and for fake news affinity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivityMeasure {
    /// Each engaged article counts once.
    #[default]
    ByArticle,
    /// Every repost counts.
    ByRepost,
}

impl ActivityMeasure {
    pub fn weight(self, reposts: u64) -> u64 {
        match self {
            ActivityMeasure::ByArticle => 1,
            ActivityMeasure::ByRepost => reposts,
        }
    }
}

/// Engagement with dense user and article indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub user: usize,
    pub article: usize,
    pub reposts: u64,
}

/// Immutable, fully indexed dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    articles: Vec<Article>,
    labels: GoldLabels,
    engagements: Vec<EngagementRecord>,
    links: Vec<Link>,
    article_index: HashMap<String, usize>,
    users: Vec<String>,
    dropped_engagements: usize,
}

impl Dataset {
    pub fn build(
        mut articles: Vec<Article>,
        labels: GoldLabels,
        engagements: Vec<EngagementRecord>,
        policy: DanglingPolicy,
    ) -> Result<Self> {
        if articles.iter().any(|a| a.id.is_empty()) {
            return Err(Error::EmptyId);
        }
        articles.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = articles.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id.clone()));
        }
        let article_index: HashMap<String, usize> =
            articles.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();

        let unknown_labels: Vec<String> = labels
            .iter()
            .filter(|(id, _)| !article_index.contains_key(*id))
            .map(|(id, _)| id.to_string())
            .collect();
        if !unknown_labels.is_empty() {
            return Err(Error::UnknownIds(unknown_labels));
        }

        let merged = merge_engagements(engagements);
        let (kept, dangling): (Vec<_>, Vec<_>) = merged
            .into_iter()
            .partition(|r| article_index.contains_key(&r.article_id));
        if !dangling.is_empty() && policy == DanglingPolicy::Strict {
            let ids: BTreeSet<String> = dangling.into_iter().map(|r| r.article_id).collect();
            return Err(Error::DanglingReferences(ids.into_iter().collect()));
        }

        let users: Vec<String> = kept
            .iter()
            .map(|r| r.user_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let user_index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let links = kept
            .iter()
            .map(|r| Link {
                user: user_index[r.user_id.as_str()],
                article: article_index[&r.article_id],
                reposts: r.reposts,
            })
            .collect();

        Ok(Self {
            articles,
            labels,
            links,
            engagements: kept,
            article_index,
            users,
            dropped_engagements: dangling.len(),
        })
    }

    pub fn load(articles: impl AsRef<Path>, engagements: impl AsRef<Path>, policy: DanglingPolicy) -> Result<Self> {
        let set = load_articles(articles)?;
        let log = load_engagements(engagements)?;
        Self::build(set.articles, set.labels, log.records, policy)
    }

    pub fn n_articles(&self) -> usize {
        self.articles.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Articles in dense index order.
    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn labels(&self) -> &GoldLabels {
        &self.labels
    }

    /// Merged engagements sorted by (user, article).
    pub fn engagements(&self) -> &[EngagementRecord] {
        &self.engagements
    }

    /// Same order as [`Dataset::engagements`].
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Sorted user ids; a user's dense index is its position here.
    pub fn users(&self) -> &[String] {
        &self.users
    }

    /// Activity per user, indexed like [`Dataset::users`].
    pub fn user_activity(&self, measure: ActivityMeasure) -> Vec<u64> {
        let mut activity = vec![0; self.users.len()];
        for l in &self.links {
            activity[l.user] += measure.weight(l.reposts);
        }
        activity
    }

    pub fn dropped_engagements(&self) -> usize {
        self.dropped_engagements
    }

    pub fn id_of(&self, index: usize) -> &str {
        &self.articles[index].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.article_index.get(id).copied()
    }

    pub fn label_at(&self, index: usize) -> Option<usize> {
        self.labels.get(&self.articles[index].id)
    }

    /// Dense indices of the given ids, or an error listing every unknown one.
    pub fn indices_of<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut unknown = Vec::new();
        for id in ids {
            match self.index_of(id) {
                Some(i) => out.push(i),
                None => unknown.push(id.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownIds(unknown));
        }
        Ok(out)
    }

    /// Canonical article file: dense order, labels included when known.
    pub fn write_articles(&self, mut w: impl Write) -> std::io::Result<()> {
        for a in &self.articles {
            let row = ArticleRow {
                id: a.id.clone(),
                text: a.text.clone(),
                label: self.labels.get(&a.id),
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Canonical engagement file: merged, sorted by (user, article).
    pub fn write_engagements(&self, w: impl Write) -> std::io::Result<()> {
        write_engagement_records(w, &self.engagements)
    }
}

pub fn write_engagement_records(w: impl Write, records: &[EngagementRecord]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ENGAGEMENT_HEADER)?;
    for r in records {
        wtr.write_record([r.user_id.as_str(), r.article_id.as_str(), &r.reposts.to_string()])?;
    }
    wtr.flush()
}

/// Labeled training articles and their classes, as parallel arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SplitFile", into = "SplitFile")]
pub struct SplitSpec {
    labeled_ids: Vec<String>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    labeled_ids: Vec<String>,
    labels: Vec<usize>,
}

impl TryFrom<SplitFile> for SplitSpec {
    type Error = Error;

    fn try_from(f: SplitFile) -> Result<Self> {
        SplitSpec::new(f.labeled_ids, f.labels)
    }
}

impl From<SplitSpec> for SplitFile {
    fn from(s: SplitSpec) -> Self {
        SplitFile {
            labeled_ids: s.labeled_ids,
            labels: s.labels,
        }
    }
}

impl SplitSpec {
    pub fn new(labeled_ids: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if labeled_ids.len() != labels.len() {
            return Err(Error::InvalidSplit(format!(
                "{} ids but {} labels",
                labeled_ids.len(),
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in &labeled_ids {
            if id.is_empty() {
                return Err(Error::EmptyId);
            }
            if !seen.insert(id) {
                return Err(Error::InvalidSplit(format!("duplicate id {id:?}")));
            }
        }
        for &c in &labels {
            check_class(c)?;
        }
        Ok(Self { labeled_ids, labels })
    }

    pub fn empty() -> Self {
        Self {
            labeled_ids: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labeled_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled_ids.is_empty()
    }

    pub fn labeled_ids(&self) -> &[String] {
        &self.labeled_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.labeled_ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
    }

    /// Y_L: one row per labeled article, a single 1 at its class.
    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), NUM_CLASSES);
        for (i, &c) in self.labels.iter().enumerate() {
            m.row_mut(i)[c] = 1.0;
        }
        m
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e))
    }

    pub fn write(&self, w: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(w, self).map_err(std::io::Error::other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    pub n: usize,
    pub real: usize,
    pub fake: usize,
    pub balanced: bool,
}

/// Checks every split id against the dataset and summarizes class balance.
pub fn validate_split(dataset: &Dataset, split: &SplitSpec) -> Result<SplitReport> {
    dataset.indices_of(split.labeled_ids())?;
    let [real, fake] = split.class_counts();
    Ok(SplitReport {
        n: split.len(),
        real,
        fake,
        balanced: real == fake,
    })
}
