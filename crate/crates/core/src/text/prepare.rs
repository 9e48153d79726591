//! Record preparation: selective hypernymization with a surjectivity check.

use crate::error::{Error, Result};
use crate::text::dataset::Record;
use crate::text::hypernym::{selective_hypernymize, verify_surjectivity, PrepStats};

/// Sets `rec.caption` from its alt-text. Returns the entity statistics and
/// whether the caption changed.
pub fn prepare_record(rec: &mut Record) -> Result<(PrepStats, bool)> {
    let (caption, stats) = selective_hypernymize(&rec.alt_text, &rec.web_entities, &rec.object_labels, &rec.hypernyms);
    let report = verify_surjectivity(&caption, &rec.web_entities, &rec.object_labels, &rec.hypernyms);
    if !report.ok {
        return Err(Error::Validation(format!(
            "prepared caption `{caption}` still mentions unlabeled entities: {}",
            report.violations.join(", ")
        )));
    }
    let changed = rec.caption.as_deref() != Some(caption.as_str());
    rec.caption = Some(caption);
    Ok((stats, changed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::dataset::FeatureSource;
    use crate::text::labels::{ObjectLabel, WebEntity};
    use std::collections::BTreeMap;

    #[test]
    fn second_pass_changes_nothing() {
        let mut r = Record {
            example_id: None,
            image_features: FeatureSource::Inline(vec![vec![0.0]]),
            object_labels: vec![ObjectLabel::new("stage", 0.8)],
            web_entities: vec![WebEntity::new("Eric Clapton", "ARTIST", 0.9)],
            alt_text: "Eric Clapton performs in Los Angeles".into(),
            caption: None,
            hypernyms: BTreeMap::from([("Los Angeles".into(), "city".into())]),
        };
        let (s, changed) = prepare_record(&mut r).unwrap();
        assert!(changed);
        assert_eq!((s.retained, s.substituted), (1, 1));
        assert_eq!(r.caption.as_deref(), Some("Eric Clapton performs in city"));
        assert!(!prepare_record(&mut r).unwrap().1);
    }
}
