use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `'\n'` plus the 95 printable ASCII characters.
pub const CHAR_VOCAB_SIZE: usize = 96;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Vocab {
    /// `'\n'` is 0, `' '..='~'` map to 1..=95.
    Char,
    /// Whitespace-separated words, ids in list order.
    Word { words: Vec<String> },
}

impl Vocab {
    /// Word vocabulary over every whitespace-separated word in `texts`,
    /// sorted so ids do not depend on input order.
    pub fn words_from<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .map(str::to_string)
            .collect();
        words.sort();
        words.dedup();
        Vocab::Word { words }
    }

    pub fn size(&self) -> usize {
        match self {
            Vocab::Char => CHAR_VOCAB_SIZE,
            Vocab::Word { words } => words.len(),
        }
    }

    pub fn char_id(c: char) -> Result<usize> {
        match c {
            '\n' => Ok(0),
            ' '..='~' => Ok(c as usize - ' ' as usize + 1),
            _ => Err(Error::UnknownToken(c.to_string())),
        }
    }

    /// Token ids paired with the byte range each token covers.
    pub fn encode_with_spans(&self, text: &str) -> Result<Vec<(usize, Range<usize>)>> {
        match self {
            Vocab::Char => text
                .char_indices()
                .map(|(i, c)| Ok((Self::char_id(c)?, i..i + c.len_utf8())))
                .collect(),
            Vocab::Word { words } => {
                let index: BTreeMap<&str, usize> =
                    words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
                let mut out = Vec::new();
                let mut start = None;
                for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
                    match (c.is_whitespace(), start) {
                        (false, None) => start = Some(i),
                        (true, Some(s)) => {
                            let word = &text[s..i];
                            let id = *index
                                .get(word)
                                .ok_or_else(|| Error::UnknownToken(word.to_string()))?;
                            out.push((id, s..i));
                            start = None;
                        }
                        _ => {}
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        Ok(self.encode_with_spans(text)?.into_iter().map(|(id, _)| id).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (n, &id) in ids.iter().enumerate() {
            match self {
                Vocab::Char => match id {
                    0 => out.push('\n'),
                    1..=95 => out.push((b' ' + (id - 1) as u8) as char),
                    _ => return Err(Error::UnknownToken(format!("#{id}"))),
                },
                Vocab::Word { words } => {
                    let w = words.get(id).ok_or_else(|| Error::UnknownToken(format!("#{id}")))?;
                    if n > 0 {
                        out.push(' ');
                    }
                    out.push_str(w);
                }
            }
        }
        Ok(out)
    }
}
