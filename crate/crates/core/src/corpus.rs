//! Reasoning questions and chain-of-thought query sets.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::content_hash;

/// Zero-shot plan-and-solve prompt appended to every question.
pub const DEFAULT_COT_PROMPT: &str = "Let's first understand the problem and devise a plan to solve it. Then, let's carry out the plan and solve the problem step by step.";

/// Joins the question text and the CoT prompt.
pub const PROMPT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: question text is empty")]
    EmptyText { line: usize },
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("requested {requested} queries but only {available} questions are available")]
    NotEnoughQuestions { requested: usize, available: usize },
    #[error("query count must be at least 1")]
    ZeroQueries,
    #[error("CoT prompt must not be empty")]
    EmptyPrompt,
    #[error("query set file is missing its header record")]
    MissingHeader,
    #[error("query set declares {declared} queries but contains {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("query `{0}` does not end with the CoT prompt")]
    BadRendering(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningQuestion {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTQuery {
    pub id: String,
    pub question_id: String,
    pub question: String,
    pub rendered_prompt: String,
}

impl CoTQuery {
    pub fn render(id: String, question: &ReasoningQuestion, cot_prompt: &str) -> Self {
        let rendered_prompt = format!("{}{}{}", question.text, PROMPT_SEPARATOR, cot_prompt);
        Self {
            id,
            question_id: question.id.clone(),
            question: question.text.clone(),
            rendered_prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub cot_prompt: String,
    pub selection_seed: u64,
    pub queries: Vec<CoTQuery>,
}

impl QuerySet {
    /// Number of queries, `I`.
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Stable digest of ids and rendered prompts, recorded in corpus headers.
    pub fn content_hash(&self) -> String {
        content_hash(self.queries.iter().flat_map(|q| {
            [q.id.as_bytes(), q.rendered_prompt.as_bytes()]
        }))
    }

    pub fn get(&self, query_id: &str) -> Option<&CoTQuery> {
        self.queries.iter().find(|q| q.id == query_id)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = Vec::new();
        let header = QuerySetHeader {
            kind: QUERY_SET_KIND.to_string(),
            cot_prompt: self.cot_prompt.clone(),
            seed: self.selection_seed,
            count: self.queries.len(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for q in &self.queries {
            serde_json::to_writer(&mut out, q).expect("query serializes");
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        file.write_all(&out).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: QuerySetHeader = loop {
            match lines.next() {
                None => return Err(CorpusError::MissingHeader),
                Some((_, line)) => {
                    let line = line.map_err(io_err(path))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let header: QuerySetHeader =
                        serde_json::from_str(&line).map_err(|_| CorpusError::MissingHeader)?;
                    if header.kind != QUERY_SET_KIND {
                        return Err(CorpusError::MissingHeader);
                    }
                    break header;
                }
            }
        };
        let mut queries = Vec::with_capacity(header.count);
        for (idx, line) in lines {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let q: CoTQuery = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if !q.rendered_prompt.ends_with(&header.cot_prompt) {
                return Err(CorpusError::BadRendering(q.id));
            }
            queries.push(q);
        }
        if queries.len() != header.count {
            return Err(CorpusError::CountMismatch {
                declared: header.count,
                found: queries.len(),
            });
        }
        if queries.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self {
            cot_prompt: header.cot_prompt,
            selection_seed: header.seed,
            queries,
        })
    }
}

const QUERY_SET_KIND: &str = "query_set";

#[derive(Debug, Serialize, Deserialize)]
struct QuerySetHeader {
    kind: String,
    cot_prompt: String,
    seed: u64,
    count: usize,
}

#[derive(Deserialize)]
struct QuestionLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

/// Read line-delimited JSON questions (`{"id"?: ..., "text": ...}`).
///
/// Records without an id get `Q{line:05}` in file order. Blank lines are skipped.
pub fn load_questions(path: &Path) -> Result<Vec<ReasoningQuestion>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QuestionLine = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: lineno });
        }
        let id = rec.id.unwrap_or_else(|| format!("Q{:05}", out.len() + 1));
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        out.push(ReasoningQuestion { id, text: rec.text });
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(out)
}

pub fn save_questions(path: &Path, questions: &[ReasoningQuestion]) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for q in questions {
        serde_json::to_writer(&mut out, q).expect("question serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn seeded_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Select `count` questions by a seeded shuffle and render them as CoT queries.
///
/// Query ids are `q0001..` in selection order.
pub fn build_query_set(
    questions: &[ReasoningQuestion],
    cot_prompt: &str,
    count: usize,
    selection_seed: u64,
) -> Result<QuerySet, CorpusError> {
    Ok(build_query_sets(questions, cot_prompt, count, 0, selection_seed)?.0)
}

/// Like [`build_query_set`], but additionally returns a disjoint holdout set of
/// `holdout` queries taken from the same shuffle.
pub fn build_query_sets(
    questions: &[ReasoningQuestion],
    cot_prompt: &str,
    count: usize,
    holdout: usize,
    selection_seed: u64,
) -> Result<(QuerySet, Option<QuerySet>), CorpusError> {
    if cot_prompt.trim().is_empty() {
        return Err(CorpusError::EmptyPrompt);
    }
    if count == 0 {
        return Err(CorpusError::ZeroQueries);
    }
    if count + holdout > questions.len() {
        return Err(CorpusError::NotEnoughQuestions {
            requested: count + holdout,
            available: questions.len(),
        });
    }
    let order = seeded_order(questions.len(), selection_seed);
    let render = |slots: &[usize], prefix: &str| -> Vec<CoTQuery> {
        slots
            .iter()
            .enumerate()
            .map(|(pos, &qi)| {
                CoTQuery::render(format!("{prefix}{:04}", pos + 1), &questions[qi], cot_prompt)
            })
            .collect()
    };
    let main = QuerySet {
        cot_prompt: cot_prompt.to_string(),
        selection_seed,
        queries: render(&order[..count], "q"),
    };
    let held = (holdout > 0).then(|| QuerySet {
        cot_prompt: cot_prompt.to_string(),
        selection_seed,
        queries: render(&order[count..count + holdout], "h"),
    });
    Ok((main, held))
}

const NAMES: [&str; 12] = [
    "Maya", "Tom", "Priya", "Jonas", "Aiko", "Carlos", "Fatima", "Liam", "Noor", "Olga", "Ravi",
    "Sofia",
];
const ITEMS: [&str; 10] = [
    "apples", "marbles", "books", "stamps", "pencils", "cookies", "tickets", "shells", "coins",
    "stickers",
];

/// Deterministic arithmetic word problems used when no question file is given.
pub fn synthetic_questions(count: usize, seed: u64) -> Vec<ReasoningQuestion> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let name = NAMES[rng.random_range(0..NAMES.len())];
            let other = NAMES[rng.random_range(0..NAMES.len())];
            let item = ITEMS[rng.random_range(0..ITEMS.len())];
            let a: u32 = rng.random_range(3..60);
            let b: u32 = rng.random_range(2..30);
            let c: u32 = rng.random_range(2..9);
            let text = match i % 6 {
                0 => format!("{name} has {a} {item} and buys {b} more. How many {item} does {name} have now?"),
                1 => format!("{name} had {a} {item} and gave {b} of them to {other}. How many {item} are left?"),
                2 => format!("A box holds {c} {item}. {name} fills {a} boxes. How many {item} are there in total?"),
                3 => format!("{name} shares {} {item} equally among {c} friends. How many {item} does each friend get?", a * c),
                4 => format!("{name} earns {b} dollars per hour and works {c} hours each day for {a} days. How much does {name} earn?"),
                _ => format!("{name} reads {b} pages on Monday and twice as many on Tuesday. If the book has {} pages, how many pages remain?", 3 * b + a),
            };
            ReasoningQuestion { id: format!("S{:05}", i + 1), text }
        })
        .collect()
}
