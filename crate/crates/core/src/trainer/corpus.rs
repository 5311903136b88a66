use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prompt::{builtin_antonyms, builtin_synonyms, completed_line, generate_prompts, Vocab, WordPair};

/// A flat token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCorpus {
    pub name: String,
    pub tokens: Vec<usize>,
}

impl TokenCorpus {
    pub fn from_lines(name: &str, lines: &[String], vocab: &Vocab) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in lines {
            tokens.extend(vocab.encode(line)?);
            tokens.extend(vocab.encode("\n")?);
        }
        Ok(Self {
            name: name.to_string(),
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `batch` windows of `seq_len + 1` tokens at uniformly drawn offsets,
    /// split into (inputs, targets).
    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, batch: usize, seq_len: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let span = self.tokens.len() - seq_len;
        (0..batch)
            .map(|_| {
                let start = rng.random_range(0..span);
                let w = &self.tokens[start..start + seq_len + 1];
                (w[..seq_len].to_vec(), w[1..].to_vec())
            })
            .collect()
    }

    /// Consecutive windows with stride `seq_len` covering every token once
    /// as a prediction target, the last one possibly shorter.
    pub fn eval_windows(&self, seq_len: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start + 1 < self.tokens.len() {
            let end = (start + seq_len + 1).min(self.tokens.len());
            let w = &self.tokens[start..end];
            out.push((w[..w.len() - 1].to_vec(), w[1..].to_vec()));
            start += seq_len;
        }
        out
    }

    pub fn check_trainable(&self, batch: usize, seq_len: usize) -> Result<()> {
        if self.tokens.len() < (batch * seq_len).max(seq_len + 1) {
            return Err(Error::invalid(format!(
                "corpus {} has {} tokens, need at least {} for batch {batch} x {seq_len}",
                self.name,
                self.tokens.len(),
                (batch * seq_len).max(seq_len + 1)
            )));
        }
        Ok(())
    }
}

/// Training and held-out streams for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainCorpus {
    pub train: TokenCorpus,
    pub held_out: TokenCorpus,
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

/// Antonym prompts completed with their answer, one per line.
pub fn antonym_lines(pairs: &[WordPair], n: usize, seed: u64) -> Result<Vec<String>> {
    Ok(generate_prompts(pairs, n, seed)?.iter().map(completed_line).collect())
}

/// Synonym lines in a shifted template:
/// `Similar:big=Large, quick=Fast; Ask:large=>Big`.
pub fn synonym_lines(pairs: &[WordPair], n: usize, seed: u64) -> Result<Vec<String>> {
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two word pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let first = &pairs[i % pairs.len()];
            let mut j = rng.random_range(0..pairs.len() - 1);
            if j >= i % pairs.len() {
                j += 1;
            }
            let second = &pairs[j];
            format!(
                "Similar:{}={}, {}={}; Ask:{}=>{}",
                first.0,
                capitalize(&first.1),
                second.0,
                capitalize(&second.1),
                first.1,
                capitalize(&first.0)
            )
        })
        .collect())
}

fn split_domain(name: &str, lines: Vec<String>, held_out_fraction: f64, vocab: &Vocab) -> Result<DomainCorpus> {
    let n_held = ((lines.len() as f64) * held_out_fraction).round() as usize;
    let n_held = n_held.clamp(1, lines.len().saturating_sub(1).max(1));
    let (train, held) = lines.split_at(lines.len() - n_held);
    Ok(DomainCorpus {
        train: TokenCorpus::from_lines(&format!("{name}-train"), train, vocab)?,
        held_out: TokenCorpus::from_lines(&format!("{name}-heldout"), held, vocab)?,
    })
}

/// Original-domain corpus A: completed antonym prompts.
pub fn corpus_a(n_lines: usize, seed: u64, held_out_fraction: f64) -> Result<DomainCorpus> {
    let lines = antonym_lines(&builtin_antonyms(), n_lines, seed)?;
    split_domain("A", lines, held_out_fraction, &Vocab::Char)
}

/// New-domain corpus B: synonym lines in a different template.
pub fn corpus_b(n_lines: usize, seed: u64, held_out_fraction: f64) -> Result<DomainCorpus> {
    let lines = synonym_lines(&builtin_synonyms(), n_lines, seed)?;
    split_domain("B", lines, held_out_fraction, &Vocab::Char)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_and_corpora() {
        let lines = synonym_lines(&builtin_synonyms(), 3, 0).unwrap();
        assert!(lines[0].starts_with("Similar:big=Large, "));
        assert!(lines[0].ends_with("; Ask:large=>Big"));
        let a = corpus_a(100, 1, 0.1).unwrap();
        assert!(a.train.len() > 9 * a.held_out.len() / 2);
        assert_eq!(a, corpus_a(100, 1, 0.1).unwrap());
        assert_eq!(*a.train.tokens.last().unwrap(), 0);
        assert!(a.train.tokens.iter().all(|t| *t < 96));
    }

    #[test]
    fn batches_are_seeded_and_shifted() {
        let c = TokenCorpus {
            name: "t".into(),
            tokens: (0..50).collect(),
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let b1 = c.sample_batch(&mut r1, 4, 8);
        assert_eq!(b1, c.sample_batch(&mut r2, 4, 8));
        for (x, y) in &b1 {
            assert_eq!(x.len(), 8);
            assert_eq!(&x[1..], &y[..7]);
            assert_eq!(y[7], x[7] + 1);
        }
        assert!(c.check_trainable(4, 8).is_ok());
        assert!(c.check_trainable(8, 8).is_err());
    }

    #[test]
    fn eval_windows_cover_each_target_once() {
        let c = TokenCorpus {
            name: "t".into(),
            tokens: (0..11).collect(),
        };
        let targets: Vec<usize> = c.eval_windows(4).into_iter().flat_map(|(_, y)| y).collect();
        assert_eq!(targets, (1..11).collect::<Vec<_>>());
    }
}
