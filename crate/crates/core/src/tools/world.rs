//! Synthetic knowledge world: entities, functional relation triples, one
//! document per triple, multi-hop questions over relation chains and an
//! oracle that solves them with the search tool.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{Document, SearchIndex};
use super::{Observation, Tool};
use crate::error::{Error, Result};
use crate::grammar::{
    detect_violations, ANSWER_CLOSE, ANSWER_OPEN, INFO_CLOSE, INFO_OPEN, SEARCH_CLOSE, SEARCH_OPEN,
    THINK_CLOSE, THINK_OPEN,
};

pub const RELATION_LABELS: [&str; 8] = [
    "father", "mother", "mentor", "rival", "founder", "employer", "neighbor", "spouse",
];

/// Observation text injected when a search matches nothing.
pub const NO_RESULTS: &str = "no results";
/// Separates documents inside one observation.
pub const DOC_SEPARATOR: &str = ";";
pub const DEFAULT_TOP_K: usize = 3;

const QUESTION_WORDS: [&str; 5] = ["what", "is", "the", "of", "?"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn document(&self) -> Document {
        Document {
            title: format!("{} {}", self.subject, self.relation),
            body: format!("{} {} {}", self.subject, self.relation, self.object),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub entities: Vec<String>,
    pub relations: Vec<Triple>,
    pub corpus: Vec<Document>,
    index: SearchIndex,
    edges: HashMap<(String, String), String>,
}

impl PartialEq for SyntheticWorld {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.entities == other.entities && self.relations == other.relations
    }
}

fn name_pool() -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let reserved: HashSet<&str> = crate::curriculum::template_words()
        .into_iter()
        .chain(QUESTION_WORDS)
        .collect();
    let mut names = Vec::new();
    for &c1 in CONSONANTS {
        for &v1 in VOWELS {
            for &c2 in CONSONANTS {
                for &v2 in VOWELS {
                    let name = String::from_utf8(vec![c1, v1, c2, v2]).expect("ascii");
                    if !reserved.contains(name.as_str()) {
                        names.push(name);
                    }
                }
            }
        }
    }
    names
}

impl SyntheticWorld {
    /// Assemble a world from explicit parts. Triples must be functional in
    /// `(subject, relation)` and never self-referential.
    pub fn from_parts(seed: u64, entities: Vec<String>, relations: Vec<Triple>) -> Result<Self> {
        let known: HashSet<&str> = entities.iter().map(String::as_str).collect();
        if known.len() != entities.len() {
            return Err(Error::config("entity names must be unique"));
        }
        let mut edges = HashMap::new();
        for t in &relations {
            if !known.contains(t.subject.as_str()) || !known.contains(t.object.as_str()) {
                return Err(Error::config(format!("triple {t:?} names an unknown entity")));
            }
            if t.subject == t.object {
                return Err(Error::config(format!("triple {t:?} is self-referential")));
            }
            if edges
                .insert((t.subject.clone(), t.relation.clone()), t.object.clone())
                .is_some()
            {
                return Err(Error::config(format!(
                    "duplicate (subject, relation) pair in {t:?}"
                )));
            }
        }
        let corpus: Vec<Document> = relations.iter().map(Triple::document).collect();
        let index = SearchIndex::build(&corpus);
        Ok(SyntheticWorld {
            seed,
            entities,
            relations,
            corpus,
            index,
            edges,
        })
    }

    /// Top-`k` documents for `query`.
    pub fn search(&self, query: &str, k: usize) -> Vec<&Document> {
        self.search_indices(query, k)
            .into_iter()
            .map(|i| &self.corpus[i])
            .collect()
    }

    pub fn search_indices(&self, query: &str, k: usize) -> Vec<usize> {
        self.index.search(query, k).into_iter().map(|(i, _)| i).collect()
    }

    pub fn follow(&self, subject: &str, relation: &str) -> Option<&str> {
        self.edges
            .get(&(subject.to_string(), relation.to_string()))
            .map(String::as_str)
    }

    /// Relation labels in use, in canonical order.
    pub fn relation_labels(&self) -> Vec<&'static str> {
        let used: HashSet<&str> = self.relations.iter().map(|t| t.relation.as_str()).collect();
        RELATION_LABELS
            .iter()
            .copied()
            .filter(|l| used.contains(l))
            .collect()
    }

    /// Every word the world can put in front of the policy.
    pub fn words(&self) -> Vec<String> {
        let mut words: Vec<String> = self.entities.clone();
        words.extend(RELATION_LABELS.iter().map(|s| s.to_string()));
        words
    }

    /// Write the line-oriented world file: one header line carrying the seed
    /// and entity list, then `subject<TAB>relation<TAB>object` per triple.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# seed={} entities={}", self.seed, self.entities.join(",")).unwrap();
        for t in &self.relations {
            writeln!(out, "{}\t{}\t{}", t.subject, t.relation, t.object).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("world file is empty"))?;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::config("world file header must start with '# '"))?;
        let mut seed = None;
        let mut entities = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|_| Error::config("bad seed in world header"))?)
                }
                Some(("entities", v)) => {
                    entities = Some(v.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
                }
                _ => return Err(Error::config(format!("unknown world header field {field:?}"))),
            }
        }
        let seed = seed.ok_or_else(|| Error::config("world header lacks seed"))?;
        let entities = entities.ok_or_else(|| Error::config("world header lacks entities"))?;
        let mut relations = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::config(format!("world line {} is not a triple", n + 2)));
            }
            relations.push(Triple {
                subject: parts[0].into(),
                relation: parts[1].into(),
                object: parts[2].into(),
            });
        }
        SyntheticWorld::from_parts(seed, entities, relations)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SyntheticWorld::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Build a reproducible world. The first two triples form a chain whenever
/// there is room for one, so multi-hop questions always exist.
pub fn generate_world(seed: u64, n_entities: usize, n_relations: usize) -> Result<SyntheticWorld> {
    if n_entities < 2 {
        return Err(Error::config("n_entities must be at least 2"));
    }
    if n_relations < 1 {
        return Err(Error::config("n_relations must be at least 1"));
    }
    let capacity = n_entities * RELATION_LABELS.len();
    if n_relations > capacity {
        return Err(Error::config(format!(
            "n_relations {n_relations} exceeds the {capacity} available (subject, relation) pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = name_pool();
    if n_entities > pool.len() {
        return Err(Error::config(format!("n_entities is limited to {}", pool.len())));
    }
    let entities: Vec<String> = pool.choose_multiple(&mut rng, n_entities).cloned().collect();

    let mut relations = Vec::with_capacity(n_relations);
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    if n_relations >= 2 {
        let a = 0;
        let b = 1;
        let c = if n_entities >= 3 { 2 } else { 0 };
        let r1 = rng.gen_range(0..RELATION_LABELS.len());
        let r2 = rng.gen_range(0..RELATION_LABELS.len());
        for (s, r, o) in [(a, r1, b), (b, r2, c)] {
            used.insert((s, r));
            relations.push(Triple {
                subject: entities[s].clone(),
                relation: RELATION_LABELS[r].to_string(),
                object: entities[o].clone(),
            });
        }
    }
    let mut free: Vec<(usize, usize)> = (0..n_entities)
        .flat_map(|s| (0..RELATION_LABELS.len()).map(move |r| (s, r)))
        .filter(|p| !used.contains(p))
        .collect();
    free.shuffle(&mut rng);
    for (s, r) in free.into_iter().take(n_relations - relations.len()) {
        let mut o = rng.gen_range(0..n_entities - 1);
        if o >= s {
            o += 1;
        }
        relations.push(Triple {
            subject: entities[s].clone(),
            relation: RELATION_LABELS[r].to_string(),
            object: entities[o].clone(),
        });
    }
    SyntheticWorld::from_parts(seed, entities, relations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: usize,
    pub prompt_text: String,
    pub gold_answer: String,
    pub hop_count: usize,
    pub world_seed: u64,
    pub head: String,
    /// Relations in the order they must be followed from `head`.
    pub relations: Vec<String>,
}

/// `what is the rN of the ... of the r1 of head ?`
pub fn question_text(head: &str, relations: &[String]) -> String {
    let mut text = String::from("what is");
    for r in relations.iter().rev() {
        write!(text, " the {r} of").unwrap();
    }
    write!(text, " {head} ?").unwrap();
    text
}

fn chains(world: &SyntheticWorld, hops: usize) -> Vec<Vec<&Triple>> {
    let mut by_subject: HashMap<&str, Vec<&Triple>> = HashMap::new();
    for t in &world.relations {
        by_subject.entry(t.subject.as_str()).or_default().push(t);
    }
    let mut out = Vec::new();
    let mut stack: Vec<Vec<&Triple>> = world.relations.iter().map(|t| vec![t]).collect();
    stack.reverse();
    while let Some(path) = stack.pop() {
        if path.len() == hops {
            out.push(path);
            continue;
        }
        let last = path.last().expect("non-empty").object.as_str();
        if let Some(next) = by_subject.get(last) {
            for t in next.iter().rev() {
                let seen = path.iter().any(|p| p.subject == t.object) || t.object == path[0].subject;
                if !seen {
                    let mut p = path.clone();
                    p.push(t);
                    stack.push(p);
                }
            }
        }
    }
    out
}

/// All admissible questions with exactly `hops` hops, in a canonical order.
///
/// A chain qualifies when its entities are distinct and, for two or more
/// hops, searching the question text itself does not surface the answer in
/// the top results, so every hop has to be looked up.
pub fn enumerate_questions(world: &SyntheticWorld, hops: usize) -> Vec<Question> {
    if hops == 0 {
        return Vec::new();
    }
    chains(world, hops)
        .into_iter()
        .filter_map(|chain| {
            let head = chain[0].subject.clone();
            let relations: Vec<String> = chain.iter().map(|t| t.relation.clone()).collect();
            let gold = chain.last().expect("non-empty").object.clone();
            let prompt_text = question_text(&head, &relations);
            if hops >= 2 {
                let leaks = world
                    .search(&prompt_text, DEFAULT_TOP_K)
                    .iter()
                    .any(|d| d.body.split_whitespace().any(|w| w == gold));
                if leaks {
                    return None;
                }
            }
            Some((head, relations, gold, prompt_text))
        })
        .enumerate()
        .map(|(id, (head, relations, gold_answer, prompt_text))| Question {
            id,
            prompt_text,
            gold_answer,
            hop_count: hops,
            world_seed: world.seed,
            head,
            relations,
        })
        .collect()
}

pub fn generate_question(world: &SyntheticWorld, hops: usize, seed: u64) -> Result<Question> {
    let candidates = enumerate_questions(world, hops);
    if candidates.is_empty() {
        return Err(Error::Generation(format!("no admissible {hops}-hop chain in world")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = rng.gen_range(0..candidates.len());
    Ok(candidates.into_iter().nth(pick).expect("in range"))
}

/// Render search results the way the interaction loop injects them.
pub fn render_documents(docs: &[&Document]) -> String {
    docs.iter()
        .map(|d| d.body.as_str())
        .collect::<Vec<_>>()
        .join(&format!(" {DOC_SEPARATOR} "))
}

/// Keyword search over a world, returning the top `k` document bodies.
#[derive(Debug, Clone, Copy)]
pub struct SearchTool<'w> {
    pub world: &'w SyntheticWorld,
    pub k: usize,
}

impl<'w> SearchTool<'w> {
    pub fn new(world: &'w SyntheticWorld) -> Self {
        SearchTool {
            world,
            k: DEFAULT_TOP_K,
        }
    }
}

impl Tool for SearchTool<'_> {
    fn name(&self) -> &str {
        "search"
    }

    fn call(&self, query: &str) -> Observation {
        let docs = self.world.search(query, self.k);
        if docs.is_empty() {
            Observation {
                text: NO_RESULTS.to_string(),
                valid: false,
            }
        } else {
            Observation {
                text: render_documents(&docs),
                valid: true,
            }
        }
    }
}

/// Worked solution: one think/search/information round per hop, then a
/// final think and the answer.
pub fn oracle_solve(world: &SyntheticWorld, question: &Question) -> Result<String> {
    let tool = SearchTool::new(world);
    let mut out = String::new();
    let mut current = question.head.clone();
    for relation in &question.relations {
        let next = world.follow(&current, relation).ok_or_else(|| {
            Error::Generation(format!("no {relation} edge from {current} in question {}", question.id))
        })?;
        let query = format!("{current} {relation}");
        let top = world.search_indices(&query, 1);
        let expected = Triple {
            subject: current.clone(),
            relation: relation.clone(),
            object: next.to_string(),
        }
        .document();
        if top.first().map(|&i| &world.corpus[i]) != Some(&expected) {
            return Err(Error::Generation(format!(
                "search for {query:?} does not rank its own fact first"
            )));
        }
        let obs = tool.call(&query);
        write!(
            out,
            "{THINK_OPEN}{query}{THINK_CLOSE}{SEARCH_OPEN}{query}{SEARCH_CLOSE}{INFO_OPEN}{}{INFO_CLOSE}",
            obs.text
        )
        .unwrap();
        current = next.to_string();
    }
    write!(
        out,
        "{THINK_OPEN}{current}{THINK_CLOSE}{ANSWER_OPEN}{current}{ANSWER_CLOSE}"
    )
    .unwrap();
    if current != question.gold_answer {
        return Err(Error::Generation(format!(
            "oracle reached {current} but gold answer is {}",
            question.gold_answer
        )));
    }
    let violations = detect_violations(&out);
    if !violations.is_empty() && question.hop_count > 0 {
        return Err(Error::Generation(format!("oracle transcript has violations {violations:?}")));
    }
    Ok(out)
}

pub fn question_words() -> [&'static str; 5] {
    QUESTION_WORDS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_transcript, SegmentKind};

    #[test]
    fn determinism() {
        assert_eq!(generate_world(7, 20, 30).unwrap(), generate_world(7, 20, 30).unwrap());
        assert_ne!(
            generate_world(7, 20, 30).unwrap().relations,
            generate_world(8, 20, 30).unwrap().relations
        );
    }

    #[test]
    fn bounds() {
        assert!(generate_world(0, 1, 1).is_err());
        assert!(generate_world(0, 2, 0).is_err());
        assert!(generate_world(0, 2, 17).is_err());
        let w = generate_world(0, 2, 1).unwrap();
        assert_eq!(w.relations.len(), 1);
        assert!(enumerate_questions(&w, 1).len() == 1);
        assert!(generate_question(&w, 2, 0).is_err());
    }

    #[test]
    fn every_triple_in_exactly_one_document() {
        let w = generate_world(3, 30, 60).unwrap();
        for t in &w.relations {
            let needle = format!("{} {} {}", t.subject, t.relation, t.object);
            assert_eq!(w.corpus.iter().filter(|d| d.body == needle).count(), 1);
        }
    }

    #[test]
    fn two_hop_chain_exists() {
        let w = generate_world(1, 50, 80).unwrap();
        let found = w.relations.iter().any(|a| {
            w.relations
                .iter()
                .any(|b| b.subject == a.object && b.object != a.subject)
        });
        assert!(found);
    }

    #[test]
    fn question_hides_intermediate_entities() {
        let w = generate_world(1, 50, 80).unwrap();
        let q = generate_question(&w, 2, 5).unwrap();
        let mid = w.follow(&q.head, &q.relations[0]).unwrap();
        assert!(!q.prompt_text.split_whitespace().any(|t| t == mid));
        assert!(q.prompt_text.contains(&q.head));
        assert_eq!(generate_question(&w, 2, 5).unwrap(), q);
    }

    #[test]
    fn oracle_structure() {
        let w = generate_world(1, 50, 80).unwrap();
        for hops in [1, 2] {
            let q = generate_question(&w, hops, 11).unwrap();
            let text = oracle_solve(&w, &q).unwrap();
            let segs = parse_transcript(&text);
            let searches = segs.iter().filter(|s| s.kind == SegmentKind::Search).count();
            assert_eq!(searches, hops);
            assert!(detect_violations(&text).is_empty());
            let answer = segs.iter().find(|s| s.kind == SegmentKind::Answer).unwrap();
            assert_eq!(answer.content, q.gold_answer);
        }
    }

    #[test]
    fn world_file_round_trip() {
        let w = generate_world(9, 12, 20).unwrap();
        let text = w.to_text();
        assert!(text.starts_with("# seed=9 "));
        assert_eq!(text.lines().count(), 21);
        assert_eq!(SyntheticWorld::from_text(&text).unwrap(), w);
    }

    #[test]
    fn no_results_observation() {
        let w = generate_world(1, 10, 10).unwrap();
        let obs = SearchTool::new(&w).call("nothing matches here");
        assert!(!obs.valid);
        assert_eq!(obs.text, NO_RESULTS);
    }
}
