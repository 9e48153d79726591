//! Side-by-side human rating aggregation.

use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    BaselineMuchBetter,
    BaselineSlightlyBetter,
    Equal,
    OursSlightlyBetter,
    OursMuchBetter,
}

impl Judgment {
    pub fn score(self) -> f64 {
        match self {
            Judgment::BaselineMuchBetter => -1.0,
            Judgment::BaselineSlightlyBetter => -0.5,
            Judgment::Equal => 0.0,
            Judgment::OursSlightlyBetter => 0.5,
            Judgment::OursMuchBetter => 1.0,
        }
    }
}

impl FromStr for Judgment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "baseline_much_better" => Judgment::BaselineMuchBetter,
            "baseline_slightly_better" => Judgment::BaselineSlightlyBetter,
            "equal" => Judgment::Equal,
            "ours_slightly_better" => Judgment::OursSlightlyBetter,
            "ours_much_better" => Judgment::OursMuchBetter,
            other => return Err(Error::Validation(format!("unknown judgment `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Informativeness,
    Correctness,
    Fluency,
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "informativeness" => Dimension::Informativeness,
            "correctness" => Dimension::Correctness,
            "fluency" => Dimension::Fluency,
            other => return Err(Error::Validation(format!("unknown rating dimension `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub example_id: String,
    pub dimension: Dimension,
    pub judgment: Judgment,
}

/// Mean score per dimension, in [-1, 1].
pub fn aggregate_ratings(records: &[RatingRecord]) -> Result<BTreeMap<Dimension, f64>> {
    if records.is_empty() {
        return Err(Error::Validation("no rating records".into()));
    }
    let mut acc: BTreeMap<Dimension, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.dimension).or_insert((0.0, 0));
        e.0 += r.judgment.score();
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect())
}

/// Formats a mean score as a signed percentage, e.g. `+12.50%`.
pub fn signed_percent(score: f64) -> String {
    format!("{:+.2}%", score * 100.0)
}

#[derive(Deserialize)]
struct Row {
    example_id: String,
    dimension: String,
    judgment: String,
}

/// Reads CSV with header `example_id,dimension,judgment`.
pub fn read_ratings<R: Read>(r: R) -> Result<Vec<RatingRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(csv_err(1))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["example_id", "dimension", "judgment"] {
        return Err(Error::Schema {
            line: 1,
            msg: "expected header `example_id,dimension,judgment`".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(csv_err(line))?;
        let wrap = |e: Error| Error::Schema {
            line,
            msg: e.to_string(),
        };
        out.push(RatingRecord {
            example_id: row.example_id,
            dimension: row.dimension.parse().map_err(wrap)?,
            judgment: row.judgment.parse().map_err(wrap)?,
        });
    }
    Ok(out)
}

fn csv_err(line: usize) -> impl Fn(csv::Error) -> Error {
    move |e| Error::Parse {
        line,
        msg: e.to_string(),
    }
}
