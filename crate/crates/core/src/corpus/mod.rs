//! Question instances, candidate reasoning chains, and their file formats.

mod synth;

pub use synth::{generate_synthetic, DecoyMix, SynthConfig, SynthVariant};

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: passage {passage:?} mention {start}..{end} outside {len} tokens")]
    MentionRange {
        line: usize,
        passage: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: passage id {passage:?} repeated within instance")]
    DuplicatePassage { line: usize, passage: String },
    #[error("line {line}: instance id {id:?} already seen")]
    DuplicateInstance { line: usize, id: String },
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub tokens: Vec<usize>,
    pub mentions: Vec<Mention>,
}

impl Passage {
    pub fn mentions_entity(&self, entity: &str) -> bool {
        self.mentions.iter().any(|m| m.entity == entity)
    }

    /// Distinct mentioned entities in sorted order.
    pub fn entities(&self) -> BTreeSet<&str> {
        self.mentions.iter().map(|m| m.entity.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Answer {
    Entity(String),
    Tokens(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionInstance {
    pub id: String,
    pub question: Vec<usize>,
    pub answer: Answer,
    pub query_entities: Vec<String>,
    pub passages: Vec<Passage>,
    /// Some query entity is never mentioned in the pool.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    id: String,
    question: Vec<usize>,
    answer_entity: Option<String>,
    answer_tokens: Option<Vec<usize>>,
    query_entities: Vec<String>,
    passages: Vec<Passage>,
}

impl QuestionInstance {
    pub fn passage_index(&self, id: &str) -> Option<usize> {
        self.passages.iter().position(|p| p.id == id)
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.id == id)
    }

    /// Largest token id used anywhere in the instance.
    pub fn max_token(&self) -> usize {
        let answer = match &self.answer {
            Answer::Tokens(t) => t.iter().copied().max().unwrap_or(0),
            Answer::Entity(_) => 0,
        };
        self.passages
            .iter()
            .flat_map(|p| p.tokens.iter())
            .chain(&self.question)
            .copied()
            .max()
            .unwrap_or(0)
            .max(answer)
    }

    fn from_raw(raw: RawInstance, line: usize) -> Result<Self> {
        let schema = |message: String| CorpusError::Schema { line, message };
        let answer = match (raw.answer_entity, raw.answer_tokens) {
            (Some(e), None) => Answer::Entity(e),
            (None, Some(t)) if !t.is_empty() => Answer::Tokens(t),
            (None, Some(_)) => return Err(schema("answer_tokens is empty".into())),
            _ => {
                return Err(schema(
                    "exactly one of answer_entity and answer_tokens must be non-null".into(),
                ))
            }
        };
        if raw.passages.is_empty() {
            return Err(schema("instance has no passages".into()));
        }
        let mut seen = HashSet::new();
        for p in &raw.passages {
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicatePassage {
                    line,
                    passage: p.id.clone(),
                });
            }
            if p.tokens.is_empty() {
                return Err(schema(format!("passage {:?} has no tokens", p.id)));
            }
            for m in &p.mentions {
                if m.start >= m.end || m.end > p.tokens.len() {
                    return Err(CorpusError::MentionRange {
                        line,
                        passage: p.id.clone(),
                        start: m.start,
                        end: m.end,
                        len: p.tokens.len(),
                    });
                }
            }
        }
        let degenerate = raw
            .query_entities
            .iter()
            .any(|q| !raw.passages.iter().any(|p| p.mentions_entity(q)));
        Ok(QuestionInstance {
            id: raw.id,
            question: raw.question,
            answer,
            query_entities: raw.query_entities,
            passages: raw.passages,
            degenerate,
        })
    }

    fn to_raw(&self) -> RawInstance {
        let (answer_entity, answer_tokens) = match &self.answer {
            Answer::Entity(e) => (Some(e.clone()), None),
            Answer::Tokens(t) => (None, Some(t.clone())),
        };
        RawInstance {
            id: self.id.clone(),
            question: self.question.clone(),
            answer_entity,
            answer_tokens,
            query_entities: self.query_entities.clone(),
            passages: self.passages.clone(),
        }
    }
}

/// An ordered path of passages with the entities linking neighbours.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateChain {
    pub passages: Vec<String>,
    pub links: Vec<String>,
}

impl CandidateChain {
    pub fn hops(&self) -> usize {
        self.passages.len()
    }

    /// Interleaved `[p0, e0, p1, e1, ...]`, the canonical ordering key.
    pub fn sort_key(&self) -> Vec<&str> {
        let mut key = Vec::with_capacity(self.passages.len() + self.links.len());
        for (i, p) in self.passages.iter().enumerate() {
            key.push(p.as_str());
            if let Some(e) = self.links.get(i) {
                key.push(e.as_str());
            }
        }
        key
    }

    pub fn head(&self) -> &str {
        &self.passages[0]
    }

    pub fn tail(&self) -> &str {
        self.passages.last().expect("chain has passages")
    }

    /// Checks the structural invariants against `inst`.
    pub fn validate(&self, inst: &QuestionInstance) -> std::result::Result<(), String> {
        let n = self.passages.len();
        if !(2..=3).contains(&n) {
            return Err(format!("chain has {n} passages"));
        }
        if self.links.len() != n - 1 {
            return Err(format!("{} links for {n} passages", self.links.len()));
        }
        let distinct: HashSet<&String> = self.passages.iter().collect();
        if distinct.len() != n {
            return Err("chain repeats a passage".into());
        }
        let ps: Vec<&Passage> = self
            .passages
            .iter()
            .map(|id| inst.passage(id).ok_or(format!("unknown passage {id:?}")))
            .collect::<std::result::Result<_, _>>()?;
        for (i, e) in self.links.iter().enumerate() {
            if !ps[i].mentions_entity(e) || !ps[i + 1].mentions_entity(e) {
                return Err(format!("link {e:?} not shared by neighbours {i} and {}", i + 1));
            }
        }
        if !contains_answer(ps[n - 1], inst) {
            return Err("final passage lacks the answer".into());
        }
        Ok(())
    }
}

fn canonical(mut chains: Vec<CandidateChain>) -> Vec<CandidateChain> {
    chains.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    chains.dedup();
    chains
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub id: String,
    pub ambiguous: bool,
    pub gold_chains: Vec<CandidateChain>,
}

/// A 2-passage gold chain has no readable order when both passages, or
/// neither, contain the answer. Longer chains are never flagged.
pub fn order_ambiguous(inst: &QuestionInstance, chain: &CandidateChain) -> bool {
    if chain.passages.len() != 2 {
        return false;
    }
    let holding = chain
        .passages
        .iter()
        .filter(|id| inst.passage(id).is_some_and(|p| contains_answer(p, inst)))
        .count();
    holding != 1
}

/// True when `p` mentions the answer entity, or contains the answer tokens
/// as a contiguous run.
pub fn contains_answer(p: &Passage, inst: &QuestionInstance) -> bool {
    match &inst.answer {
        Answer::Entity(e) => p.mentions_entity(e),
        Answer::Tokens(t) => !t.is_empty() && p.tokens.windows(t.len()).any(|w| w == t.as_slice()),
    }
}

/// All `(head, entity, tail)` chains: the tail holds the answer, the head is
/// a different passage, and the entity is mentioned in both.
pub fn extract_chains_2hop(inst: &QuestionInstance) -> Vec<CandidateChain> {
    let ents: Vec<BTreeSet<&str>> = inst.passages.iter().map(Passage::entities).collect();
    let mut out = Vec::new();
    for (t, tail) in inst.passages.iter().enumerate() {
        if !contains_answer(tail, inst) {
            continue;
        }
        for (h, head) in inst.passages.iter().enumerate() {
            if h == t {
                continue;
            }
            for e in ents[h].intersection(&ents[t]) {
                out.push(CandidateChain {
                    passages: vec![head.id.clone(), tail.id.clone()],
                    links: vec![e.to_string()],
                });
            }
        }
    }
    canonical(out)
}

/// All `(head, e1, middle, e2, tail)` chains over three distinct passages:
/// the head mentions a query entity, the tail holds the answer, and each
/// link is shared by its neighbours.
pub fn extract_chains_3hop(inst: &QuestionInstance) -> Vec<CandidateChain> {
    let ents: Vec<BTreeSet<&str>> = inst.passages.iter().map(Passage::entities).collect();
    let heads: Vec<usize> = (0..inst.passages.len())
        .filter(|&i| inst.query_entities.iter().any(|q| ents[i].contains(q.as_str())))
        .collect();
    let tails: Vec<usize> = (0..inst.passages.len())
        .filter(|&i| contains_answer(&inst.passages[i], inst))
        .collect();
    let mut out = Vec::new();
    for &h in &heads {
        for m in 0..inst.passages.len() {
            if m == h {
                continue;
            }
            let first: Vec<&&str> = ents[h].intersection(&ents[m]).collect();
            if first.is_empty() {
                continue;
            }
            for &t in &tails {
                if t == h || t == m {
                    continue;
                }
                for e2 in ents[m].intersection(&ents[t]) {
                    for e1 in &first {
                        out.push(CandidateChain {
                            passages: vec![
                                inst.passages[h].id.clone(),
                                inst.passages[m].id.clone(),
                                inst.passages[t].id.clone(),
                            ],
                            links: vec![e1.to_string(), e2.to_string()],
                        });
                    }
                }
            }
        }
    }
    canonical(out)
}

pub fn extract_chains(inst: &QuestionInstance, hops: usize) -> Vec<CandidateChain> {
    match hops {
        3 => extract_chains_3hop(inst),
        _ => extract_chains_2hop(inst),
    }
}

/// Head and tail passage ids over a candidate set.
pub fn head_tail_sets(chains: &[CandidateChain]) -> (BTreeSet<String>, BTreeSet<String>) {
    let heads = chains.iter().map(|c| c.head().to_string()).collect();
    let tails = chains.iter().map(|c| c.tail().to_string()).collect();
    (heads, tails)
}

/// Reads JSON lines, keeping each record's 1-based line number. Blank lines
/// are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        let record = serde_json::from_value(value).map_err(|e| CorpusError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_corpus(path: &Path) -> Result<Vec<QuestionInstance>> {
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in read_jsonl::<RawInstance>(path)? {
        let inst = QuestionInstance::from_raw(raw, line)?;
        if !ids.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateInstance { line, id: inst.id });
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, instances: &[QuestionInstance]) -> Result<()> {
    let raw: Vec<RawInstance> = instances.iter().map(QuestionInstance::to_raw).collect();
    write_jsonl(path, &raw)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>> {
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (line, gold) in read_jsonl::<GoldAnnotation>(path)? {
        if !ids.insert(gold.id.clone()) {
            return Err(CorpusError::DuplicateInstance { line, id: gold.id });
        }
        out.push(gold);
    }
    Ok(out)
}

pub fn save_gold(path: &Path, gold: &[GoldAnnotation]) -> Result<()> {
    write_jsonl(path, gold)
}

#[cfg(test)]
mod tests;
