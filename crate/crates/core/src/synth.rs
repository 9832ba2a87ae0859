//! Synthetic datasets with a tunable user veracity consistency.
//!
//! Each user prefers one class (uniformly at random) and engages with an
//! article of that class with probability `consistency`, otherwise with one
//! of the other class. Article texts are bags of tokens drawn either from a
//! shared pool (probability `class_token_overlap`) or from a pool owned by
//! the article's class.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Article, DanglingPolicy, Dataset, EngagementRecord, GoldLabels, FAKE, REAL};

/// Inclusive integer range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u64,
    pub max: u64,
}

impl CountRange {
    pub const fn new(min: u64, max: u64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.min == 0 || self.min > self.max {
            return Err(Error::InvalidParameter(format!(
                "{name}: need 1 <= min <= max, got {}..={}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_articles: usize,
    pub n_users: usize,
    pub consistency: f64,
    pub engagements_per_user: CountRange,
    pub reposts_per_engagement: CountRange,
    pub class_token_overlap: f64,
    pub tokens_per_article: CountRange,
    /// Distinct words in each of the shared, real and fake pools.
    pub vocabulary_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_articles: 600,
            n_users: 2000,
            consistency: 0.95,
            engagements_per_user: CountRange::new(2, 12),
            reposts_per_engagement: CountRange::new(1, 3),
            class_token_overlap: 0.6,
            tokens_per_article: CountRange::new(20, 40),
            vocabulary_size: 300,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.consistency) {
            return Err(Error::InvalidParameter(format!(
                "consistency {} not in [0.5, 1]",
                self.consistency
            )));
        }
        if !(0.0..=1.0).contains(&self.class_token_overlap) {
            return Err(Error::InvalidParameter(format!(
                "class_token_overlap {} not in [0, 1]",
                self.class_token_overlap
            )));
        }
        if self.n_articles < 2 || self.n_users == 0 || self.vocabulary_size == 0 {
            return Err(Error::InvalidParameter(
                "need at least 2 articles, 1 user and a non-empty vocabulary".into(),
            ));
        }
        self.engagements_per_user.check("engagements_per_user")?;
        self.reposts_per_engagement.check("reposts_per_engagement")?;
        self.tokens_per_article.check("tokens_per_article")?;
        let smallest_class = (self.n_articles / 2) as u64;
        if self.engagements_per_user.max > smallest_class {
            return Err(Error::InfeasibleConfig(format!(
                "up to {} engagements per user but only {smallest_class} articles per class",
                self.engagements_per_user.max
            )));
        }
        Ok(())
    }
}

fn random_words(rng: &mut impl Rng, count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let len = rng.gen_range(3..=8);
        let w: String = (0..len).map(|_| char::from(b'a' + rng.gen_range(0..26u8))).collect();
        if taken.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Labels alternate real, fake, real, ... in construction order, so an odd
/// article count gives the extra article to the real class.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut taken = HashSet::new();
    let shared = random_words(&mut rng, config.vocabulary_size, &mut taken);
    let own = [
        random_words(&mut rng, config.vocabulary_size, &mut taken),
        random_words(&mut rng, config.vocabulary_size, &mut taken),
    ];

    let width = config.n_articles.to_string().len();
    let mut articles = Vec::with_capacity(config.n_articles);
    let mut labels = GoldLabels::new();
    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for i in 0..config.n_articles {
        let class = if i % 2 == 0 { REAL } else { FAKE };
        let id = format!("n{i:0width$}");
        let len = config.tokens_per_article.sample(&mut rng);
        let tokens: Vec<&str> = (0..len)
            .map(|_| {
                let pool = if rng.gen_bool(config.class_token_overlap) {
                    &shared
                } else {
                    &own[class]
                };
                pool.choose(&mut rng).expect("non-empty pool").as_str()
            })
            .collect();
        labels.insert(id.clone(), class)?;
        by_class[class].push(id.clone());
        articles.push(Article {
            id,
            text: tokens.join(" "),
        });
    }

    let width = config.n_users.to_string().len();
    let mut engagements = Vec::new();
    for u in 0..config.n_users {
        let user_id = format!("u{u:0width$}");
        let preferred = if rng.gen_bool(0.5) { FAKE } else { REAL };
        let count = config.engagements_per_user.sample(&mut rng);
        let mut chosen = HashSet::new();
        for _ in 0..count {
            let class = if rng.gen_bool(config.consistency) {
                preferred
            } else {
                1 - preferred
            };
            let article = loop {
                let pick = by_class[class].choose(&mut rng).expect("non-empty class");
                if chosen.insert(pick.as_str()) {
                    break pick;
                }
            };
            engagements.push(EngagementRecord {
                user_id: user_id.clone(),
                article_id: article.clone(),
                reposts: config.reposts_per_engagement.sample(&mut rng),
            });
        }
    }

    Dataset::build(articles, labels, engagements, DanglingPolicy::Strict)
}
