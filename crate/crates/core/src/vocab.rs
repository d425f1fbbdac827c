//! Word-level vocabulary shared by the tools, the prompt builder and the policy.
//!
//! Ids `0..8` are the tag literals, in the order of
//! [`TAG_LITERALS`](crate::grammar::TAG_LITERALS), followed by `<bos>` and
//! `<unk>`. Everything after that is a word or a glue character. Rendering
//! puts one space between neighbouring tokens except next to a tag or
//! between two glue characters, so `what is 2+3 ?` and `<think>a b</think>`
//! survive a round trip.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::TAG_LITERALS;

pub type TokenId = u32;

pub const THINK_OPEN: TokenId = 0;
pub const THINK_CLOSE: TokenId = 1;
pub const SEARCH_OPEN: TokenId = 2;
pub const SEARCH_CLOSE: TokenId = 3;
pub const INFO_OPEN: TokenId = 4;
pub const INFO_CLOSE: TokenId = 5;
pub const ANSWER_OPEN: TokenId = 6;
pub const ANSWER_CLOSE: TokenId = 7;
pub const BOS: TokenId = 8;
pub const UNK: TokenId = 9;

pub const MAX_VOCAB: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenClass {
    Tag,
    Special,
    Word,
    Glue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pieces: Vec<String>,
    classes: Vec<TokenClass>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl VocabSpec {
    /// Vocabulary holding the reserved tokens plus `words` (space separated
    /// when rendered) and `glue` characters (rendered without spaces).
    pub fn new<'a>(
        words: impl IntoIterator<Item = &'a str>,
        glue: impl IntoIterator<Item = char>,
    ) -> Result<Self> {
        let mut vocab = VocabSpec {
            pieces: Vec::new(),
            classes: Vec::new(),
            index: HashMap::new(),
        };
        for lit in TAG_LITERALS {
            vocab.push(lit, TokenClass::Tag)?;
        }
        vocab.push("<bos>", TokenClass::Special)?;
        vocab.push("<unk>", TokenClass::Special)?;
        for w in words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid vocabulary word {w:?}")));
            }
            vocab.push(w, TokenClass::Word)?;
        }
        for c in glue {
            let s = c.to_string();
            if c.is_whitespace() {
                return Err(Error::config("whitespace cannot be a glue token"));
            }
            vocab.push(&s, TokenClass::Glue)?;
        }
        if vocab.pieces.len() > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocabulary has {} entries, limit is {MAX_VOCAB}",
                vocab.pieces.len()
            )));
        }
        Ok(vocab)
    }

    fn push(&mut self, piece: &str, class: TokenClass) -> Result<()> {
        if self.index.contains_key(piece) {
            return Err(Error::config(format!("duplicate vocabulary entry {piece:?}")));
        }
        self.index.insert(piece.to_string(), self.pieces.len() as TokenId);
        self.pieces.push(piece.to_string());
        self.classes.push(class);
        Ok(())
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as TokenId))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> &str {
        &self.pieces[id as usize]
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.classes[id as usize]
    }

    pub fn is_tag(id: TokenId) -> bool {
        id < 8
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Split text into tokens. Unknown words fall back to glue characters
    /// when every character is a glue token, otherwise to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some(tag) = TAG_LITERALS.iter().position(|lit| rest.starts_with(lit)) {
                out.push(tag as TokenId);
                rest = &rest[TAG_LITERALS[tag].len()..];
                continue;
            }
            let ch = rest.chars().next().expect("non-empty");
            if ch.is_whitespace() {
                rest = &rest[ch.len_utf8()..];
                continue;
            }
            let mut end = 0;
            for (i, c) in rest.char_indices() {
                if c.is_whitespace() || (i > 0 && TAG_LITERALS.iter().any(|l| rest[i..].starts_with(l))) {
                    break;
                }
                end = i + c.len_utf8();
            }
            let chunk = &rest[..end];
            self.tokenize_chunk(chunk, &mut out);
            rest = &rest[end..];
        }
        out
    }

    fn tokenize_chunk(&self, chunk: &str, out: &mut Vec<TokenId>) {
        if let Some(id) = self.id(chunk) {
            out.push(id);
            return;
        }
        let glue: Option<Vec<TokenId>> = chunk
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.id(c.encode_utf8(&mut buf))
                    .filter(|&id| self.class(id) == TokenClass::Glue)
            })
            .collect();
        match glue {
            Some(ids) => out.extend(ids),
            None => out.push(UNK),
        }
    }

    /// Render tokens back to text; inverse of [`tokenize`](Self::tokenize) on
    /// in-vocabulary text.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev: Option<TokenClass> = None;
        for &t in tokens {
            let class = self.class(t);
            let spaced = !matches!(
                (prev, class),
                (None, _) | (Some(TokenClass::Tag), _) | (_, TokenClass::Tag) | (Some(TokenClass::Glue), TokenClass::Glue)
            );
            if spaced {
                out.push(' ');
            }
            out.push_str(self.piece(t));
            prev = Some(class);
        }
        out
    }
}
