//! Structured antonym/synonym prompts `s1 ⊕ s2`, tokenization with
//! context/query index tracking, and sample grouping.
//!
//! Rendered form: `Example:good->Bad, no-Yes; Query:bad->`. The context `s1`
//! runs through the `"; "` separator; the query `s2` is `Query:<word>->`.

mod lexicon;
mod tokenizer;

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lexicon::{builtin_antonyms, builtin_synonyms};
pub use tokenizer::{Vocab, CHAR_VOCAB_SIZE};

use crate::error::{Error, Result};

const CONTEXT_PREFIX: &str = "Example:";
const SEPARATOR: &str = "; ";
const QUERY_PREFIX: &str = "Query:";
const ARROW: &str = "->";

pub type WordPair = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredPrompt {
    pub text: String,
    /// Byte range of `s1`, including the trailing `"; "`.
    pub context_span: Range<usize>,
    /// Byte range of `s2`.
    pub query_span: Range<usize>,
    pub pairs: Vec<WordPair>,
    pub query_word: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub token_ids: Vec<usize>,
    /// Positions whose characters overlap `s1` (`I_c`), ascending.
    pub context_indices: Vec<usize>,
    /// Remaining positions (`I_q`), ascending.
    pub query_indices: Vec<usize>,
    /// 1-based group label; 0 until assigned.
    pub group_id: usize,
}

impl TokenizedSample {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }
}

fn check_word(word: &str) -> Result<()> {
    if word.is_empty() {
        return Err(Error::invalid("empty word"));
    }
    if let Some(c) = word
        .chars()
        .find(|c| !c.is_ascii_graphic() || matches!(c, ',' | ';' | '-' | '>' | ':'))
    {
        return Err(Error::invalid(format!(
            "word {word:?} contains reserved character {c:?}"
        )));
    }
    Ok(())
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

fn decapitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_ascii_lowercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

/// Renders `Example:<a1>-><B1>, <a2>-<B2>; Query:<q>->`.
pub fn build_prompt(pair1: (&str, &str), pair2: (&str, &str), query_word: &str) -> Result<StructuredPrompt> {
    for w in [pair1.0, pair1.1, pair2.0, pair2.1, query_word] {
        check_word(w)?;
    }
    let context = format!(
        "{CONTEXT_PREFIX}{}{ARROW}{}, {}-{}{SEPARATOR}",
        pair1.0,
        capitalize(pair1.1),
        pair2.0,
        capitalize(pair2.1)
    );
    let query = format!("{QUERY_PREFIX}{query_word}{ARROW}");
    let text = format!("{context}{query}");
    Ok(StructuredPrompt {
        context_span: 0..context.len(),
        query_span: context.len()..text.len(),
        text,
        pairs: vec![
            (pair1.0.to_string(), pair1.1.to_string()),
            (pair2.0.to_string(), pair2.1.to_string()),
        ],
        query_word: query_word.to_string(),
    })
}

/// Inverse of [`build_prompt`]. Second words come back with their first
/// letter lowercased.
pub fn parse_prompt(text: &str) -> Result<StructuredPrompt> {
    let bad = || Error::invalid(format!("not a structured prompt: {text:?}"));
    let body = text.strip_prefix(CONTEXT_PREFIX).ok_or_else(bad)?;
    let split = format!("{SEPARATOR}{QUERY_PREFIX}");
    let (examples, query) = body.split_once(&split).ok_or_else(bad)?;
    let query_word = query.strip_suffix(ARROW).ok_or_else(bad)?;
    let (first, second) = examples.split_once(", ").ok_or_else(bad)?;
    let (a1, b1) = first.split_once(ARROW).ok_or_else(bad)?;
    let (a2, b2) = second.split_once('-').ok_or_else(bad)?;
    let prompt = build_prompt((a1, &decapitalize(b1)), (a2, &decapitalize(b2)), query_word)?;
    if prompt.text != text {
        return Err(bad());
    }
    Ok(prompt)
}

/// Maps the prompt onto token ids. A token whose characters overlap the
/// context span belongs to `I_c`, including one that straddles the boundary.
pub fn tokenize(prompt: &StructuredPrompt, vocab: &Vocab) -> Result<TokenizedSample> {
    let tokens = vocab.encode_with_spans(&prompt.text)?;
    let mut sample = TokenizedSample {
        token_ids: Vec::with_capacity(tokens.len()),
        context_indices: Vec::new(),
        query_indices: Vec::new(),
        group_id: 0,
    };
    for (pos, (id, span)) in tokens.into_iter().enumerate() {
        sample.token_ids.push(id);
        if span.start < prompt.context_span.end && span.end > prompt.context_span.start {
            sample.context_indices.push(pos);
        } else {
            sample.query_indices.push(pos);
        }
    }
    if sample.token_ids.is_empty() {
        return Err(Error::invalid("prompt produced no tokens"));
    }
    Ok(sample)
}

/// Splits `samples` into `n_groups` contiguous equal-size groups, preserving
/// order. Group `g` (0-based in the result) is labelled `g + 1`.
pub fn group_samples<T: Clone>(samples: &[T], n_groups: usize) -> Result<Vec<Vec<T>>> {
    let size = group_size(samples.len(), n_groups)?;
    Ok(samples.chunks(size).map(<[T]>::to_vec).collect())
}

/// 1-based group label of each of `n` samples.
pub fn group_ids(n: usize, n_groups: usize) -> Result<Vec<usize>> {
    let size = group_size(n, n_groups)?;
    Ok((0..n).map(|i| i / size + 1).collect())
}

fn group_size(n: usize, n_groups: usize) -> Result<usize> {
    if n_groups == 0 || n == 0 || !n.is_multiple_of(n_groups) {
        return Err(Error::invalid(format!(
            "{n} samples cannot be split evenly into {n_groups} groups"
        )));
    }
    Ok(n / n_groups)
}

/// Reads `word1,word2` lines. Blank lines and `#` comments are skipped; any
/// further comma-separated fields (relation labels) are ignored.
pub fn read_pairs(path: &Path) -> Result<Vec<WordPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

pub fn parse_pairs(text: &str) -> Result<Vec<WordPair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (fields.next(), fields.next()) else {
            return Err(Error::invalid(format!("line {}: expected word1,word2", n + 1)));
        };
        check_word(a)?;
        check_word(b)?;
        pairs.push((a.to_string(), b.to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no word pairs"));
    }
    Ok(pairs)
}

/// Deterministically generates `n` prompts. Sample `i` uses pair `i mod P`
/// as the first demonstration, a different seeded-random pair as the second,
/// and the first pair's second word as the query.
pub fn generate_prompts(pairs: &[WordPair], n: usize, seed: u64) -> Result<Vec<StructuredPrompt>> {
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two word pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let first = i % pairs.len();
            let mut second = rng.random_range(0..pairs.len() - 1);
            if second >= first {
                second += 1;
            }
            let (p1, p2) = (&pairs[first], &pairs[second]);
            build_prompt((&p1.0, &p1.1), (&p2.0, &p2.1), &p1.1)
        })
        .collect()
}

/// Prompt plus the expected completion (the first pair's first word,
/// capitalized), used for language-model corpora.
pub fn completed_line(prompt: &StructuredPrompt) -> String {
    format!("{}{}", prompt.text, capitalize(&prompt.pairs[0].0))
}

/// One entry of the JSON sample dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub text: String,
    pub context_span: [usize; 2],
    pub query_span: [usize; 2],
    pub token_ids: Vec<usize>,
    pub context_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub group_id: usize,
}

impl SampleRecord {
    pub fn new(prompt: &StructuredPrompt, sample: &TokenizedSample) -> Self {
        SampleRecord {
            text: prompt.text.clone(),
            context_span: [prompt.context_span.start, prompt.context_span.end],
            query_span: [prompt.query_span.start, prompt.query_span.end],
            token_ids: sample.token_ids.clone(),
            context_indices: sample.context_indices.clone(),
            query_indices: sample.query_indices.clone(),
            group_id: sample.group_id,
        }
    }
}

/// Prompts tokenized and labelled with 1-based group ids.
pub fn tokenize_grouped(
    prompts: &[StructuredPrompt],
    vocab: &Vocab,
    n_groups: usize,
) -> Result<Vec<TokenizedSample>> {
    let ids = group_ids(prompts.len(), n_groups)?;
    prompts
        .iter()
        .zip(ids)
        .map(|(p, g)| {
            let mut s = tokenize(p, vocab)?;
            s.group_id = g;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests;
