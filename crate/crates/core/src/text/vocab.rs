//! Byte-pair style subword vocabulary.
//!
//! Words are split on whitespace and prefixed with [`WORD_START`]; merges are
//! learned greedily by pair frequency (ties broken by the lexicographically
//! smallest pair) and stop when no pair occurs at least twice. Entity type
//! tokens such as `TYPE:ARTIST` are whole-word atoms and never produced by
//! splitting.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const TYPE_UNK: usize = 4;
pub const WORD_START: char = '\u{2581}';
pub const TYPE_PREFIX: &str = "TYPE:";

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "TYPE:UNK"];
const MIN_PAIR_COUNT: usize = 2;

/// On-disk form; indexes are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
    num_reserved: usize,
    merges: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    pieces: Vec<String>,
    num_reserved: usize,
    merges: Vec<(String, String)>,
    piece_ids: HashMap<String, usize>,
    type_ids: HashMap<String, usize>,
    merge_rank: HashMap<(String, String), usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.num_reserved == other.num_reserved && self.merges == other.merges
    }
}

/// Canonical type token for an entity type string.
pub fn type_token_name(entity_type: &str) -> String {
    format!("{TYPE_PREFIX}{}", entity_type.trim().to_uppercase())
}

fn word_symbols(word: &str) -> Vec<String> {
    std::iter::once(WORD_START)
        .chain(word.chars())
        .map(String::from)
        .collect()
}

fn is_type_word(w: &str) -> bool {
    w.len() > TYPE_PREFIX.len() && w.starts_with(TYPE_PREFIX)
}

impl Vocabulary {
    fn from_parts(pieces: Vec<String>, num_reserved: usize, merges: Vec<(String, String)>) -> Result<Self> {
        if num_reserved < SPECIALS.len() || num_reserved > pieces.len() {
            return Err(Error::Validation("vocabulary has a malformed reserved block".into()));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if pieces[i] != *s {
                return Err(Error::Validation(format!("vocabulary id {i} should be `{s}`")));
            }
        }
        let type_ids = (TYPE_UNK..num_reserved).map(|i| (pieces[i].clone(), i)).collect();
        let mut piece_ids = HashMap::new();
        for (i, p) in pieces.iter().enumerate().skip(num_reserved) {
            piece_ids.entry(p.clone()).or_insert(i);
        }
        let merge_rank = merges.iter().cloned().enumerate().map(|(r, m)| (m, r)).collect();
        Ok(Self {
            pieces,
            num_reserved,
            merges,
            piece_ids,
            type_ids,
            merge_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn num_reserved(&self) -> usize {
        self.num_reserved
    }

    /// Ids of `TYPE:UNK` followed by every registered type token.
    pub fn type_ids(&self) -> std::ops::Range<usize> {
        TYPE_UNK..self.num_reserved
    }

    pub fn is_type_token(&self, id: usize) -> bool {
        self.type_ids().contains(&id)
    }

    /// Id of the type token for `entity_type`, or `None` if unregistered.
    pub fn type_id(&self, entity_type: &str) -> Option<usize> {
        self.type_ids.get(&type_token_name(entity_type)).copied()
    }

    /// Entity type name (without prefix) of a type token id.
    pub fn type_of(&self, id: usize) -> Option<&str> {
        if self.is_type_token(id) {
            self.pieces[id].strip_prefix(TYPE_PREFIX)
        } else {
            None
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let text = text.replace(WORD_START, " ");
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            if let Some(&id) = self.type_ids.get(w) {
                out.push(id);
                continue;
            }
            for s in self.encode_word(w) {
                out.push(self.piece_ids.get(&s).copied().unwrap_or(UNK));
            }
        }
        out
    }

    fn encode_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.merge_rank.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            syms = merge_pair(&syms, a, b);
        }
        syms
    }

    /// Inverse of [`tokenize`](Self::tokenize) up to whitespace; PAD, BOS and
    /// EOS are dropped and UNK renders as `<unk>`.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => s.push_str(" <unk> "),
                _ if self.is_type_token(id) => {
                    s.push(' ');
                    s.push_str(&self.pieces[id]);
                    s.push(' ');
                }
                _ => match self.pieces.get(id) {
                    Some(p) => s.push_str(&p.replace(WORD_START, " ")),
                    None => s.push_str(" <unk> "),
                },
            }
        }
        crate::text::words::normalize_ws(&s)
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            pieces: self.pieces.clone(),
            num_reserved: self.num_reserved,
            merges: self.merges.clone(),
        };
        serde_json::to_string_pretty(&f).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        Self::from_parts(f.pieces, f.num_reserved, f.merges)
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn merge_pair(syms: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns a vocabulary of at most `max_size` entries from `corpus`.
///
/// `entity_types` registers one atomic type token each. Words already of the
/// form `TYPE:X` are skipped during merge learning.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], entity_types: &[String], max_size: usize) -> Result<Vocabulary> {
    let types: BTreeSet<String> = entity_types
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| type_token_name(t))
        .filter(|t| t != SPECIALS[TYPE_UNK])
        .collect();
    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend(types);
    let num_reserved = pieces.len();

    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        let line = line.as_ref().replace(WORD_START, " ");
        for w in line.split_whitespace().filter(|w| !is_type_word(w)) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (word_symbols(&w), c)).collect();
    words.sort();

    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    if max_size < num_reserved + alphabet.len() {
        return Err(Error::Config(format!(
            "max vocabulary size {max_size} is below the {} reserved tokens plus {} distinct characters",
            num_reserved,
            alphabet.len()
        )));
    }
    pieces.extend(alphabet.iter().cloned());
    let mut known: BTreeSet<String> = alphabet;

    let mut merges = Vec::new();
    while pieces.len() < max_size {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *pair_counts.entry((p[0].as_str(), p[1].as_str())).or_default() += c;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((a, b), count)) = best else { break };
        if count < MIN_PAIR_COUNT {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        for (syms, _) in words.iter_mut() {
            *syms = merge_pair(syms, &a, &b);
        }
        let merged = format!("{a}{b}");
        if known.insert(merged.clone()) {
            pieces.push(merged);
        }
        merges.push((a, b));
    }
    Vocabulary::from_parts(pieces, num_reserved, merges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn types(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tiny_corpus_merges_aa() {
        let v = build_vocab(&["aa aa", "aa"], &[], 30).unwrap();
        assert!(v.piece_ids.contains_key("aa"));
        // ("a","a") beats ("▁","a") on the lexicographic tie-break, then
        // ("▁","aa") follows
        assert_eq!(v.merges[0], ("a".to_string(), "a".to_string()));
        assert_eq!(v.tokenize("aa").len(), 1);
    }

    #[test]
    fn empty_corpus_gives_only_specials() {
        let v = build_vocab(&[""], &[], 100).unwrap();
        assert_eq!(v.len(), SPECIALS.len());
    }

    #[test]
    fn respects_max_size() {
        let corpus = ["the cat sat on the mat", "the dog sat on the log", "cats and dogs"];
        let v = build_vocab(&corpus, &[], 25).unwrap();
        assert!(v.len() <= 25);
        assert!(build_vocab(&corpus, &[], 8).is_err());
    }

    #[test]
    fn type_tokens_are_atomic() {
        let v = build_vocab(&["TYPE:ARTIST performs on stage"], &types(&["artist", "film"]), 100).unwrap();
        let ids = v.tokenize("TYPE:ARTIST performs");
        assert_eq!(ids[0], v.type_id("ARTIST").unwrap());
        assert!(ids[1..].iter().all(|&i| !v.is_type_token(i)));
        assert_eq!(v.type_of(v.type_id("film").unwrap()), Some("FILM"));
        assert_eq!(v.detokenize(&ids), "TYPE:ARTIST performs");
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = build_vocab(&["abc"], &[], 50).unwrap();
        assert!(v.tokenize("abz").contains(&UNK));
    }

    #[test]
    fn json_round_trip() {
        let v = build_vocab(&["hello world", "hello there"], &types(&["city"]), 50).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.tokenize("hello there"), v.tokenize("hello there"));
        assert_eq!(back.sha256(), v.sha256());
    }
}
