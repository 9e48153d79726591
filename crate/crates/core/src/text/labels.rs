use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WebEntity {
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub score: f64,
}

fn check_score(what: &str, name: &str, score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Validation(format!(
            "{what} `{name}` has score {score} outside [0, 1]"
        )));
    }
    Ok(())
}

impl ObjectLabel {
    pub fn new(name: impl Into<String>, score: f64) -> Self {
        Self {
            name: name.into(),
            score,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("object label with empty name".into()));
        }
        check_score("object label", &self.name, self.score)
    }
}

impl WebEntity {
    pub fn new(name: impl Into<String>, entity_type: impl Into<String>, score: f64) -> Self {
        Self {
            name: name.into(),
            entity_type: entity_type.into(),
            score,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("web entity with empty name".into()));
        }
        if self.entity_type.trim().is_empty() {
            return Err(Error::Validation(format!(
                "web entity `{}` has an empty type",
                self.name
            )));
        }
        check_score("web entity", &self.name, self.score)
    }
}

/// Stable sort by descending score; equal scores keep input order.
pub fn sort_objects(labels: &mut [ObjectLabel]) {
    labels.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Stable sort by descending score; equal scores keep input order.
pub fn sort_entities(entities: &mut [WebEntity]) {
    entities.sort_by(|a, b| b.score.total_cmp(&a.score));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sort_is_stable_for_ties() {
        let mut l = vec![
            ObjectLabel::new("a", 0.5),
            ObjectLabel::new("b", 0.9),
            ObjectLabel::new("c", 0.5),
            ObjectLabel::new("d", 0.5),
        ];
        sort_objects(&mut l);
        let names: Vec<_> = l.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["b", "a", "c", "d"]);
    }

    #[test]
    fn validation() {
        assert!(ObjectLabel::new(" ", 0.5).validate().is_err());
        assert!(ObjectLabel::new("x", 1.5).validate().is_err());
        assert!(WebEntity::new("x", "", 0.5).validate().is_err());
        assert!(WebEntity::new("x", "CITY", 0.5).validate().is_ok());
    }

    #[test]
    fn entity_type_serializes_as_type() {
        let e: WebEntity = serde_json::from_str(r#"{"name":"Paris","type":"CITY","score":0.4}"#).unwrap();
        assert_eq!(e.entity_type, "CITY");
    }
}
