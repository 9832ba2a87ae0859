#![allow(dead_code)]

use proptest::prelude::*;

use veralign::ingest::{Article, DanglingPolicy, Dataset, EngagementRecord, GoldLabels};

/// Raw ingredients of a small fully labeled dataset.
#[derive(Debug, Clone)]
pub struct Raw {
    pub articles: Vec<Article>,
    pub labels: Vec<(String, usize)>,
    pub engagements: Vec<EngagementRecord>,
}

impl Raw {
    pub fn build(&self) -> Dataset {
        Dataset::build(
            self.articles.clone(),
            self.labels.iter().cloned().collect::<GoldLabels>(),
            self.engagements.clone(),
            DanglingPolicy::Strict,
        )
        .expect("generated data is valid")
    }
}

prop_compose! {
    /// Up to `max_articles` labeled articles and raw (unmerged) engagement rows
    /// over up to `max_users` users.
    pub fn raw_dataset(max_articles: usize, max_users: usize)
        (n in 2..=max_articles, u in 1..=max_users)
        (labels in proptest::collection::vec(0..2usize, n),
         rows in proptest::collection::vec((0..u, 0..n, 1..4u64), 0..(4 * n)),
         words in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,4}", n))
        -> Raw
    {
        let articles = words
            .into_iter()
            .enumerate()
            .map(|(i, text)| Article { id: format!("a{i:02}"), text })
            .collect();
        let labels = labels.into_iter().enumerate().map(|(i, c)| (format!("a{i:02}"), c)).collect();
        let engagements = rows
            .into_iter()
            .map(|(user, article, reposts)| EngagementRecord {
                user_id: format!("u{user:02}"),
                article_id: format!("a{article:02}"),
                reposts,
            })
            .collect();
        Raw { articles, labels, engagements }
    }
}

pub fn approx_eq(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}
