//! Base CIDEr: tf-idf weighted n-gram cosine similarity, n = 1..4, scaled
//! by 10, with no length penalty and no count clipping.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::text::words::words;

pub const CIDER_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

type Counts = BTreeMap<Vec<String>, f64>;

fn ngrams(toks: &[String], n: usize) -> Counts {
    let mut out = Counts::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    out
}

fn weighted(counts: &Counts, df: &BTreeMap<Vec<String>, usize>, log_n: f64) -> Counts {
    counts
        .iter()
        .map(|(g, &c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g.clone(), c * (log_n - d.ln()))
        })
        .collect()
}

fn cosine(a: &Counts, b: &Counts) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Corpus CIDEr and per-example scores. Document frequency counts the
/// examples whose reference set contains an n-gram.
pub fn cider_scores(candidates: &[String], references: &[Vec<String>], exec: Execution) -> Result<(f64, Vec<f64>)> {
    if candidates.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(Error::Validation(format!("example {i} has no reference captions")));
    }
    if candidates.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| words(r)).collect())
        .collect();
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| words(c)).collect();
    let mut df: Vec<BTreeMap<Vec<String>, usize>> = vec![BTreeMap::new(); CIDER_N];
    for rs in &refs {
        for (n, df_n) in df.iter_mut().enumerate() {
            let seen: BTreeSet<Vec<String>> = rs.iter().flat_map(|r| ngrams(r, n + 1).into_keys()).collect();
            for g in seen {
                *df_n.entry(g).or_insert(0) += 1;
            }
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let per = exec.map(&cands, |i, cand| {
        let mut total = 0.0;
        for (n, df_n) in df.iter().enumerate() {
            let c = weighted(&ngrams(cand, n + 1), df_n, log_n);
            let sims: f64 = refs[i]
                .iter()
                .map(|r| cosine(&c, &weighted(&ngrams(r, n + 1), df_n, log_n)))
                .sum();
            total += sims / refs[i].len() as f64;
        }
        CIDER_SCALE * total / CIDER_N as f64
    });
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

pub fn cider(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    Ok(cider_scores(candidates, references, Execution::Sequential)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identical_two_doc_corpus_scores_ten() {
        let c = s(&["a man rides a red horse", "two dogs play in the snow"]);
        let r = vec![s(&["a man rides a red horse"]), s(&["two dogs play in the snow"])];
        let (_, per) = cider_scores(&c, &r, Execution::Sequential).unwrap();
        assert!((per[0] - 10.0).abs() < 1e-9);
        assert!((per[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_scores_zero() {
        let c = s(&["x y z", "p q"]);
        let r = vec![s(&["a b c"]), s(&["d e"])];
        assert_eq!(cider(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn empty_candidate_contributes_zero() {
        let c = s(&["", "d e"]);
        let r = vec![s(&["a b c"]), s(&["d e"])];
        let (_, per) = cider_scores(&c, &r, Execution::Sequential).unwrap();
        assert_eq!(per[0], 0.0);
    }

    #[test]
    fn missing_references_rejected() {
        assert!(cider(&s(&["a"]), &[vec![]]).is_err());
        assert!(cider(&s(&["a", "b"]), &[s(&["a"])]).is_err());
    }
}
