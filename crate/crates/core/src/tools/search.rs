//! In-memory TF-IDF retrieval over a small document collection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub body: String,
}

/// Lowercased whitespace tokens.
pub fn terms(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Smoothed inverse document frequency, always positive.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: u32,
}

/// Inverted index. Title and body terms are both indexed.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    n_docs: usize,
    postings: HashMap<String, Vec<Posting>>,
}

impl SearchIndex {
    pub fn build(docs: &[Document]) -> Self {
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (i, doc) in docs.iter().enumerate() {
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in terms(&doc.title).into_iter().chain(terms(&doc.body)) {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: i, tf });
            }
        }
        for list in postings.values_mut() {
            list.sort_by_key(|p| p.doc);
        }
        SearchIndex {
            n_docs: docs.len(),
            postings,
        }
    }

    /// Document indices with positive score, best first; ties go to the lower
    /// index. At most `k` results.
    pub fn search(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let mut scores = vec![0.0f64; self.n_docs];
        let mut touched = vec![false; self.n_docs];
        for term in terms(query) {
            if let Some(list) = self.postings.get(&term) {
                let w = idf(self.n_docs, list.len());
                for p in list {
                    scores[p.doc] += p.tf as f64 * w;
                    touched[p.doc] = true;
                }
            }
        }
        let mut hits: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(i, s)| touched[i] && s > 0.0)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(title: &str, body: &str) -> Document {
        Document {
            title: title.into(),
            body: body.into(),
        }
    }

    #[test]
    fn title_query_ranks_that_document_first() {
        let docs = vec![
            doc("kavo mentor", "kavo mentor lira"),
            doc("lira mentor", "lira mentor kavo"),
            doc("tesu rival", "tesu rival kavo"),
        ];
        let index = SearchIndex::build(&docs);
        let hits = index.search("lira mentor", 3);
        assert_eq!(hits[0].0, 1);
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn empty_and_disjoint_queries() {
        let docs = vec![doc("a b", "a b c")];
        let index = SearchIndex::build(&docs);
        assert!(index.search("", 3).is_empty());
        assert!(index.search("   ", 3).is_empty());
        assert!(index.search("zzz", 3).is_empty());
    }

    #[test]
    fn ties_break_to_lower_index_and_k_caps() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("x{i}"), "shared")).collect();
        let index = SearchIndex::build(&docs);
        let hits = index.search("shared", 3);
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn case_folding() {
        let docs = vec![doc("Kavo", "Kavo Mentor")];
        let index = SearchIndex::build(&docs);
        assert_eq!(index.search("KAVO", 1).len(), 1);
    }
}
