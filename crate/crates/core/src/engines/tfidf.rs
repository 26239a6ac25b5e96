//! TF-IDF section retrieval with cosine ranking.
//!
//! Weight of term t in section d is `ln(1 + tf) * ln(N / df)`, tokens are
//! case-folded alphanumeric runs. Ties and zero-overlap queries fall back to
//! document order.

use std::collections::{HashMap, HashSet};

use crate::problem::ContextDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub doc: String,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub section: Section,
    pub score: f64,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits documents into blank-line separated sections, numbered globally.
pub fn sections(docs: &[ContextDoc]) -> Vec<Section> {
    let mut out = Vec::new();
    for doc in docs {
        let mut cur: Vec<&str> = Vec::new();
        let flush = |cur: &mut Vec<&str>, out: &mut Vec<Section>| {
            if !cur.is_empty() {
                out.push(Section {
                    doc: doc.name.clone(),
                    index: out.len(),
                    text: cur.join("\n"),
                });
                cur.clear();
            }
        };
        for line in doc.text.lines() {
            if line.trim().is_empty() {
                flush(&mut cur, &mut out);
            } else {
                cur.push(line);
            }
        }
        flush(&mut cur, &mut out);
    }
    out
}

type Vector = HashMap<String, f64>;

fn weights(tokens: &[String], idf: &HashMap<String, f64>) -> Vector {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *tf.entry(t).or_default() += 1;
    }
    tf.into_iter()
        .filter_map(|(t, n)| {
            let w = (1.0 + n as f64).ln() * idf.get(t).copied().unwrap_or(0.0);
            (w > 0.0).then(|| (t.to_string(), w))
        })
        .collect()
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    if dot == 0.0 {
        return 0.0;
    }
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Ranks `sections` against `query` and returns the best `top_n`.
pub fn rank_sections(query: &str, sections: &[Section], top_n: usize) -> Vec<Ranked> {
    let n = sections.len() as f64;
    let tokenized: Vec<Vec<String>> = sections.iter().map(|s| tokenize(&s.text)).collect();
    let mut df: HashMap<String, usize> = HashMap::new();
    for toks in &tokenized {
        for t in toks.iter().collect::<HashSet<_>>() {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    let idf: HashMap<String, f64> = df
        .into_iter()
        .map(|(t, d)| (t, (n / d as f64).ln()))
        .collect();
    let q = weights(&tokenize(query), &idf);
    let mut ranked: Vec<Ranked> = sections
        .iter()
        .zip(&tokenized)
        .map(|(s, toks)| Ranked {
            section: s.clone(),
            score: cosine(&q, &weights(toks, &idf)),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.section.index.cmp(&b.section.index))
    });
    ranked.truncate(top_n);
    ranked
}

pub fn tfidf_retrieve(query: &str, docs: &[ContextDoc], top_n: usize) -> Vec<Ranked> {
    rank_sections(query, &sections(docs), top_n)
}
