//! Selective hypernymization of alt-text into ground-truth captions.
//!
//! A fine-grained mention is kept only when the input labels cover it;
//! otherwise it is replaced by its hypernym, or deleted when none is known.
//!
//! Mention candidates, picked longest-first without overlap, in priority
//! order:
//! 1. occurrences of a label name (web entity or object),
//! 2. occurrences of a hypernym-map key,
//! 3. runs of capitalized words (digits may join a run), excluding a lone
//!    capitalized word at the start of a sentence.

use std::collections::{BTreeMap, BTreeSet};

use crate::text::labels::{ObjectLabel, WebEntity};
use crate::text::vocab::TYPE_PREFIX;
use crate::text::words::{strip_punct, word_set};

const LEADING_STOPWORDS: &[&str] = &["a", "an", "the", "at", "in", "on", "this", "these", "during", "with"];
const DANGLING: &[&str] = &[
    "at", "in", "on", "of", "from", "by", "near", "with", "during", "to", "for", "the", "a", "an", "inside", "outside",
];
const MAX_DANGLING: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrepStats {
    pub retained: usize,
    pub substituted: usize,
    pub removed: usize,
}

impl std::ops::AddAssign for PrepStats {
    fn add_assign(&mut self, o: Self) {
        self.retained += o.retained;
        self.substituted += o.substituted;
        self.removed += o.removed;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurjectivityReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Label names and hypernym keys normalized to lowercase core words.
struct Matcher {
    label_sets: Vec<BTreeSet<String>>,
    label_seqs: Vec<Vec<String>>,
    hyper_seqs: Vec<(Vec<String>, String)>,
}

fn core_words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| strip_punct(&w.to_lowercase()))
        .filter(|w| !w.is_empty())
        .collect()
}

impl Matcher {
    fn new(entities: &[WebEntity], objects: &[ObjectLabel], hypernyms: &BTreeMap<String, String>) -> Self {
        let names = entities
            .iter()
            .map(|e| e.name.as_str())
            .chain(objects.iter().map(|o| o.name.as_str()));
        let label_seqs: Vec<Vec<String>> = names.map(core_words).filter(|s| !s.is_empty()).collect();
        let label_sets = label_seqs.iter().map(|s| s.iter().cloned().collect()).collect();
        let values: BTreeSet<Vec<String>> = hypernyms.values().map(|v| core_words(v)).collect();
        let hyper_seqs = hypernyms
            .iter()
            .map(|(k, v)| (core_words(k), v.trim().to_lowercase()))
            .filter(|(k, _)| !k.is_empty() && !values.contains(k))
            .collect();
        Self {
            label_sets,
            label_seqs,
            hyper_seqs,
        }
    }

    fn retained(&self, mention: &[String]) -> bool {
        let set: BTreeSet<String> = mention.iter().cloned().collect();
        self.label_sets.iter().any(|l| set.is_subset(l))
    }

    fn hypernym(&self, mention: &[String]) -> Option<&str> {
        self.hyper_seqs
            .iter()
            .find(|(k, _)| k == mention)
            .map(|(_, v)| v.as_str())
    }
}

fn is_type_token(w: &str) -> bool {
    w.starts_with(TYPE_PREFIX)
}

fn is_capitalized(w: &str) -> bool {
    !is_type_token(w) && w.chars().find(|c| c.is_alphanumeric()).is_some_and(char::is_uppercase)
}

fn is_numeric(w: &str) -> bool {
    let c = strip_punct(w);
    !c.is_empty() && c.chars().all(|ch| ch.is_ascii_digit())
}

fn ends_clause(w: &str) -> bool {
    w.ends_with([',', '.', ';', ':', '!', '?'])
}

fn ends_sentence(w: &str) -> bool {
    w.ends_with(['.', '!', '?'])
}

fn occurrences(core: &[String], seq: &[String]) -> Vec<(usize, usize)> {
    if seq.is_empty() || seq.len() > core.len() {
        return Vec::new();
    }
    (0..=core.len() - seq.len())
        .filter(|&i| core[i..i + seq.len()] == *seq)
        .map(|i| (i, i + seq.len()))
        .collect()
}

/// Picks non-overlapping spans longest-first (then leftmost) from `cands`.
fn pick(cands: Vec<(usize, usize)>, taken: &mut [bool], out: &mut Vec<(usize, usize)>) {
    let mut cands = cands;
    cands.sort_by_key(|&(s, e)| (std::cmp::Reverse(e - s), s));
    cands.dedup();
    for (s, e) in cands {
        if taken[s..e].iter().all(|t| !t) {
            taken[s..e].iter_mut().for_each(|t| *t = true);
            out.push((s, e));
        }
    }
}

fn find_mentions(words: &[&str], core: &[String], m: &Matcher) -> Vec<(usize, usize)> {
    // a punctuation-only word cannot be part of a mention
    let blocked: Vec<bool> = core.iter().map(|c| c.is_empty()).collect();
    let valid = |(s, e): &(usize, usize)| !blocked[*s..*e].iter().any(|&b| b);
    let mut taken = vec![false; words.len()];
    let mut out = Vec::new();

    let labels = m
        .label_seqs
        .iter()
        .flat_map(|l| occurrences(core, l))
        .filter(valid)
        .collect();
    pick(labels, &mut taken, &mut out);
    let hyper = m
        .hyper_seqs
        .iter()
        .flat_map(|(k, _)| occurrences(core, k))
        .filter(valid)
        .collect();
    pick(hyper, &mut taken, &mut out);

    // runs of capitalized/numeric words, split at clause punctuation and at
    // already-taken words
    let mut runs = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let joinable = |j: usize| !taken[j] && !blocked[j] && (is_capitalized(words[j]) || is_numeric(words[j]));
        if !joinable(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < words.len() && joinable(i) {
            i += 1;
            if ends_clause(words[i - 1]) {
                break;
            }
        }
        runs.push((start, i));
    }
    for (mut s, e) in runs {
        while s < e && LEADING_STOPWORDS.contains(&core[s].as_str()) {
            s += 1;
        }
        if e - s == 1 && (s == 0 || ends_sentence(words[s - 1])) {
            continue;
        }
        if s < e && (s..e).any(|j| is_capitalized(words[j])) {
            out.push((s, e));
        }
    }
    out.sort();
    out
}

fn trailing_punct(w: &str) -> &str {
    let keep = w.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
    &w[keep..]
}

/// Rewrites `alt_text` so that every fine-grained mention is either covered
/// by an input label, replaced by its lowercased hypernym, or deleted
/// together with a dangling preposition or determiner.
pub fn selective_hypernymize(
    alt_text: &str,
    entities: &[WebEntity],
    objects: &[ObjectLabel],
    hypernyms: &BTreeMap<String, String>,
) -> (String, PrepStats) {
    let m = Matcher::new(entities, objects, hypernyms);
    let words: Vec<&str> = alt_text.split_whitespace().collect();
    let core: Vec<String> = words.iter().map(|w| strip_punct(&w.to_lowercase())).collect();
    let mentions = find_mentions(&words, &core, &m);

    let mut stats = PrepStats::default();
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    let mut next = 0;
    for (s, e) in mentions {
        out.extend(words[next..s].iter().map(|w| w.to_string()));
        next = e;
        let mention = &core[s..e];
        let punct = trailing_punct(words[e - 1]);
        if m.retained(mention) {
            stats.retained += 1;
            out.extend(words[s..e].iter().map(|w| w.to_string()));
        } else if let Some(h) = m.hypernym(mention) {
            stats.substituted += 1;
            let mut h = h.to_string();
            h.push_str(punct);
            out.push(h);
        } else {
            stats.removed += 1;
            let mut dropped = 0;
            while dropped < MAX_DANGLING
                && out
                    .last()
                    .is_some_and(|w| !ends_clause(w) && DANGLING.contains(&strip_punct(&w.to_lowercase()).as_str()))
            {
                out.pop();
                dropped += 1;
            }
            if let Some(last) = out.last_mut() {
                if !punct.is_empty() && !ends_clause(last) {
                    last.push_str(punct);
                }
            }
        }
    }
    out.extend(words[next..].iter().map(|w| w.to_string()));
    (out.join(" "), stats)
}

/// Checks that every fine-grained mention in `caption` is covered by an
/// input label.
pub fn verify_surjectivity(
    caption: &str,
    entities: &[WebEntity],
    objects: &[ObjectLabel],
    hypernyms: &BTreeMap<String, String>,
) -> SurjectivityReport {
    let m = Matcher::new(entities, objects, hypernyms);
    let words: Vec<&str> = caption.split_whitespace().collect();
    let core: Vec<String> = words.iter().map(|w| strip_punct(&w.to_lowercase())).collect();
    let violations: Vec<String> = find_mentions(&words, &core, &m)
        .into_iter()
        .filter(|&(s, e)| !m.retained(&core[s..e]))
        .map(|(s, e)| words[s..e].join(" "))
        .collect();
    SurjectivityReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Replaces case-insensitive whole-word occurrences of web-entity names with
/// their type tokens, longest name first.
pub fn to_type_caption(caption: &str, entities: &[WebEntity]) -> String {
    let words: Vec<&str> = caption.split_whitespace().collect();
    let core: Vec<String> = words.iter().map(|w| strip_punct(&w.to_lowercase())).collect();
    let mut cands: Vec<(usize, usize, usize)> = Vec::new();
    for (k, e) in entities.iter().enumerate() {
        for (s, t) in occurrences(&core, &core_words(&e.name)) {
            cands.push((s, t, k));
        }
    }
    cands.sort_by_key(|&(s, e, k)| (std::cmp::Reverse(e - s), s, k));
    let mut taken = vec![false; words.len()];
    let mut chosen = Vec::new();
    for (s, e, k) in cands {
        if taken[s..e].iter().all(|t| !t) {
            taken[s..e].iter_mut().for_each(|t| *t = true);
            chosen.push((s, e, k));
        }
    }
    chosen.sort();
    let mut out = Vec::new();
    let mut next = 0;
    for (s, e, k) in chosen {
        out.extend(words[next..s].iter().map(|w| w.to_string()));
        out.push(crate::text::vocab::type_token_name(&entities[k].entity_type));
        next = e;
    }
    out.extend(words[next..].iter().map(|w| w.to_string()));
    out.join(" ")
}

/// Unique lowercased caption words that belong to web-entity names.
pub fn entity_words(entities: &[WebEntity]) -> BTreeSet<String> {
    entities.iter().flat_map(|e| word_set(&e.name)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig6() -> (Vec<WebEntity>, Vec<ObjectLabel>) {
        let we = vec![
            WebEntity::new("Eric Clapton", "ARTIST", 0.9),
            WebEntity::new("musician", "PROFESSION", 0.6),
            WebEntity::new("crossroads guitar festival 2013", "EVENT", 0.5),
        ];
        let obj = ["guitarist", "music artist", "performance", "stage", "concert"]
            .iter()
            .enumerate()
            .map(|(i, n)| ObjectLabel::new(*n, 0.9 - 0.1 * i as f64))
            .collect();
        (we, obj)
    }

    #[test]
    fn unlabeled_venue_is_removed() {
        let (we, obj) = fig6();
        let alt = "Eric Clapton performs on stage during the 2013 Crossroads Guitar Festival at Madison Square Garden";
        let (cap, stats) = selective_hypernymize(alt, &we, &obj, &BTreeMap::new());
        assert_eq!(
            cap,
            "Eric Clapton performs on stage during the 2013 Crossroads Guitar Festival"
        );
        assert_eq!(stats.removed, 1);
        assert!(verify_surjectivity(&cap, &we, &obj, &BTreeMap::new()).ok);
    }

    #[test]
    fn labeled_entity_is_retained_verbatim() {
        let (we, obj) = fig6();
        let (cap, stats) = selective_hypernymize("Eric Clapton plays guitar", &we, &obj, &BTreeMap::new());
        assert_eq!(cap, "Eric Clapton plays guitar");
        assert_eq!(stats.retained, 1);
    }

    #[test]
    fn unlabeled_city_becomes_hypernym() {
        let (we, obj) = fig6();
        let hyp = BTreeMap::from([("Los Angeles".to_string(), "city".to_string())]);
        let (cap, stats) = selective_hypernymize("Eric Clapton performs in Los Angeles.", &we, &obj, &hyp);
        assert_eq!(cap, "Eric Clapton performs in city.");
        assert_eq!(stats.substituted, 1);
    }

    #[test]
    fn deletion_moves_punctuation_back() {
        let (we, obj) = fig6();
        let (cap, _) = selective_hypernymize("Eric Clapton at Wembley Arena, with fans.", &we, &obj, &BTreeMap::new());
        assert_eq!(cap, "Eric Clapton, with fans.");
    }

    #[test]
    fn lone_sentence_initial_word_is_not_a_mention() {
        let (cap, stats) = selective_hypernymize("Crowds gather outside", &[], &[], &BTreeMap::new());
        assert_eq!(cap, "Crowds gather outside");
        assert_eq!(stats, PrepStats::default());
    }

    #[test]
    fn surjectivity_flags_injected_entity() {
        let (we, obj) = fig6();
        let r = verify_surjectivity("Eric Clapton meets Bob Dylan", &we, &obj, &BTreeMap::new());
        assert!(!r.ok);
        assert_eq!(r.violations, vec!["Bob Dylan".to_string()]);
        assert!(verify_surjectivity("", &we, &obj, &BTreeMap::new()).ok);
    }

    #[test]
    fn idempotent_on_examples() {
        let (we, obj) = fig6();
        let hyp = BTreeMap::from([("Los Angeles".to_string(), "city".to_string())]);
        for alt in [
            "At Madison Square Garden, Eric Clapton performs in Los Angeles.",
            "The Rolling Stones play near Hyde Park in London",
            "Eric Clapton performs on stage during the 2013 Crossroads Guitar Festival at Madison Square Garden",
        ] {
            let (once, _) = selective_hypernymize(alt, &we, &obj, &hyp);
            let (twice, _) = selective_hypernymize(&once, &we, &obj, &hyp);
            assert_eq!(once, twice, "{alt}");
        }
    }

    #[test]
    fn type_caption_replaces_names() {
        let we = vec![
            WebEntity::new("Eric Clapton", "artist", 0.9),
            WebEntity::new("Apollo Theater", "THEATER", 0.7),
        ];
        assert_eq!(
            to_type_caption("eric clapton performs at apollo theater", &we),
            "TYPE:ARTIST performs at TYPE:THEATER"
        );
    }
}
