//! Corpus coverage and CIDEr report over captions keyed by example id.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::cider::cider_scores;
use crate::model::coverage::compute_coverage;
use crate::par::Execution;
use crate::text::dataset::Example;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub example_id: String,
    pub caption: String,
    pub cov_obj: f64,
    pub cov_we: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cider: f64,
    pub mean_cov_we: f64,
    pub mean_cov_obj: f64,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Scores `captions` (id → text) against the examples' target captions.
/// Every example must have exactly one caption and vice versa.
pub fn coverage_report(
    examples: &[Example],
    captions: &BTreeMap<String, String>,
    exec: Execution,
) -> Result<EvalReport> {
    let mut missing: Vec<String> = examples
        .iter()
        .filter(|e| !captions.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    let known: std::collections::BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    missing.extend(captions.keys().filter(|k| !known.contains(k.as_str())).cloned());
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let cands: Vec<String> = examples.iter().map(|e| captions[&e.id].clone()).collect();
    let refs: Vec<Vec<String>> = examples.iter().map(|e| vec![e.target_text().to_string()]).collect();
    let (cider, per) = cider_scores(&cands, &refs, exec)?;
    let rows: Vec<ReportRow> = examples
        .iter()
        .zip(cands)
        .zip(per)
        .map(|((e, caption), c)| {
            let cov = compute_coverage(&caption, &e.object_labels, &e.web_entities);
            ReportRow {
                example_id: e.id.clone(),
                caption,
                cov_obj: cov.cov_obj,
                cov_we: cov.cov_we,
                cider: c,
            }
        })
        .collect();
    let n = rows.len().max(1) as f64;
    Ok(EvalReport {
        cider,
        mean_cov_we: rows.iter().map(|r| r.cov_we).sum::<f64>() / n,
        mean_cov_obj: rows.iter().map(|r| r.cov_obj).sum::<f64>() / n,
        rows,
        config: serde_json::Value::Null,
    })
}

impl EvalReport {
    /// Aligned-column table: a summary line followed by one row per example.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "CIDEr {:.4}  Cov_we {:.4}  Cov_obj {:.4}  examples {}",
            self.cider,
            self.mean_cov_we,
            self.mean_cov_obj,
            self.rows.len()
        );
        let w = self
            .rows
            .iter()
            .map(|r| r.example_id.len())
            .max()
            .unwrap_or(0)
            .max("example_id".len());
        let _ = writeln!(
            out,
            "{:<w$}  {:>8}  {:>8}  {:>8}  caption",
            "example_id", "cider", "cov_we", "cov_obj"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:>8.4}  {:>8.4}  {:>8.4}  {}",
                r.example_id, r.cider, r.cov_we, r.cov_obj, r.caption
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::labels::{ObjectLabel, WebEntity};
    use entcap_tensor::Tensor;

    fn ex(id: &str, caption: &str) -> Example {
        Example {
            id: id.into(),
            image_features: Tensor::zeros(&[1, 1]),
            object_labels: vec![ObjectLabel::new("stage", 0.9)],
            web_entities: vec![WebEntity::new("Eric Clapton", "ARTIST", 0.9)],
            alt_text: caption.into(),
            caption: Some(caption.into()),
            hypernyms: BTreeMap::new(),
        }
    }

    #[test]
    fn single_example_matches_coverage() {
        let e = ex("a", "eric clapton on stage");
        let caps = BTreeMap::from([("a".to_string(), "eric clapton on stage".to_string())]);
        let r = coverage_report(std::slice::from_ref(&e), &caps, Execution::Sequential).unwrap();
        let c = compute_coverage("eric clapton on stage", &e.object_labels, &e.web_entities);
        assert_eq!((r.mean_cov_obj, r.mean_cov_we), (c.cov_obj, c.cov_we));
        assert!(r.to_table().contains("eric clapton on stage"));
    }

    #[test]
    fn empty_captions_give_zero_means() {
        let exs = [ex("a", "eric clapton"), ex("b", "a stage")];
        let caps = BTreeMap::from([("a".to_string(), String::new()), ("b".to_string(), String::new())]);
        let r = coverage_report(&exs, &caps, Execution::Sequential).unwrap();
        assert_eq!((r.mean_cov_obj, r.mean_cov_we, r.cider), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned_ids_are_listed() {
        let exs = [ex("a", "x"), ex("b", "y")];
        let caps = BTreeMap::from([("a".to_string(), "x".to_string()), ("z".to_string(), "y".to_string())]);
        match coverage_report(&exs, &caps, Execution::Sequential) {
            Err(Error::MissingIds(ids)) => assert_eq!(ids, vec!["b".to_string(), "z".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
