//! JSON-lines dataset records.
//!
//! Each line holds `image_features` (inline `[R][D]` array or a
//! `{path, offset}` reference into a little-endian f32 file, relative to the
//! dataset file), `object_labels`, `web_entities`, `alt_text` and optional
//! `caption`, `hypernyms` and `example_id`.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use entcap_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::text::labels::{sort_entities, sort_objects, ObjectLabel, WebEntity};

const CHUNK_LINES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSource {
    Inline(Vec<Vec<f32>>),
    File { path: String, offset: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub image_features: FeatureSource,
    #[serde(default)]
    pub object_labels: Vec<ObjectLabel>,
    #[serde(default)]
    pub web_entities: Vec<WebEntity>,
    pub alt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hypernyms: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// `[R, D]`
    pub image_features: Tensor<f32>,
    /// Descending by score.
    pub object_labels: Vec<ObjectLabel>,
    /// Descending by score.
    pub web_entities: Vec<WebEntity>,
    pub alt_text: String,
    pub caption: Option<String>,
    pub hypernyms: BTreeMap<String, String>,
}

impl Example {
    /// Prepared caption if present, else the raw alt-text.
    pub fn target_text(&self) -> &str {
        self.caption.as_deref().unwrap_or(&self.alt_text)
    }
}

/// Expected feature grid shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub rows: usize,
    pub dim: usize,
}

pub fn parse_record(line: &str, line_no: usize) -> Result<Record> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })
}

fn schema(line: usize, msg: impl Into<String>) -> Error {
    Error::Schema { line, msg: msg.into() }
}

fn read_features(src: &FeatureSource, shape: FeatureShape, base: &Path, line: usize) -> Result<Tensor<f32>> {
    let FeatureShape { rows, dim } = shape;
    let data = match src {
        FeatureSource::Inline(grid) => {
            if grid.len() != rows || grid.iter().any(|r| r.len() != dim) {
                let got = grid.first().map_or(0, Vec::len);
                return Err(schema(
                    line,
                    format!("expected {rows}x{dim} image features, got {}x{got}", grid.len()),
                ));
            }
            grid.concat()
        }
        FeatureSource::File { path, offset } => {
            let full = base.join(path);
            let mut f = File::open(&full).map_err(|e| schema(line, format!("{}: {e}", full.display())))?;
            f.seek(SeekFrom::Start(*offset))?;
            let mut buf = vec![0u8; rows * dim * 4];
            f.read_exact(&mut buf).map_err(|e| {
                schema(
                    line,
                    format!(
                        "{}: cannot read {rows}x{dim} features at offset {offset}: {e}",
                        full.display()
                    ),
                )
            })?;
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(schema(line, "non-finite image feature"));
    }
    Ok(Tensor::new(vec![rows, dim], data)?)
}

/// Validates a record and converts it into an [`Example`].
pub fn to_example(rec: Record, shape: FeatureShape, base: &Path, line: usize) -> Result<Example> {
    let image_features = read_features(&rec.image_features, shape, base, line)?;
    for o in &rec.object_labels {
        o.validate().map_err(|e| schema(line, e.to_string()))?;
    }
    for w in &rec.web_entities {
        w.validate().map_err(|e| schema(line, e.to_string()))?;
    }
    let mut object_labels = rec.object_labels;
    let mut web_entities = rec.web_entities;
    sort_objects(&mut object_labels);
    sort_entities(&mut web_entities);
    Ok(Example {
        id: rec.example_id.unwrap_or_else(|| format!("line-{line}")),
        image_features,
        object_labels,
        web_entities,
        alt_text: rec.alt_text,
        caption: rec.caption,
        hypernyms: rec.hypernyms,
    })
}

/// Streaming, order-preserving reader. Lines are parsed in parallel chunks.
pub struct DatasetReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    base: PathBuf,
    shape: FeatureShape,
    exec: Execution,
    pending: VecDeque<Result<Example>>,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R, base: PathBuf, shape: FeatureShape, exec: Execution) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            base,
            shape,
            exec,
            pending: VecDeque::new(),
        }
    }

    fn fill(&mut self) {
        let mut chunk = Vec::with_capacity(CHUNK_LINES);
        while chunk.len() < CHUNK_LINES {
            match self.lines.next() {
                None => break,
                Some(Err(e)) => {
                    self.line_no += 1;
                    chunk.push((self.line_no, Err(e)));
                    break;
                }
                Some(Ok(l)) => {
                    self.line_no += 1;
                    if !l.trim().is_empty() {
                        chunk.push((self.line_no, Ok(l)));
                    }
                }
            }
        }
        let (base, shape) = (&self.base, self.shape);
        let parsed = self.exec.map(&chunk, |_, (n, l)| match l {
            Ok(l) => parse_record(l, *n).and_then(|r| to_example(r, shape, base, *n)),
            Err(e) => Err(Error::Parse {
                line: *n,
                msg: e.to_string(),
            }),
        });
        self.pending.extend(parsed);
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pending.is_empty() {
            self.fill();
        }
        self.pending.pop_front()
    }
}

pub fn open_dataset(path: &Path, shape: FeatureShape, exec: Execution) -> Result<DatasetReader<BufReader<File>>> {
    let f = File::open(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetReader::new(BufReader::new(f), base, shape, exec))
}

pub fn load_dataset(path: &Path, shape: FeatureShape, exec: Execution) -> Result<Vec<Example>> {
    open_dataset(path, shape, exec)?.collect()
}

/// Reads raw records with their line numbers, without feature validation.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Record)>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_record(&line, i + 1)?));
    }
    Ok(out)
}

pub fn write_records<'a, W: Write>(mut w: W, records: impl IntoIterator<Item = &'a Record>) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const SHAPE: FeatureShape = FeatureShape { rows: 2, dim: 2 };

    fn line(id: &str, grid: &str) -> String {
        format!(
            r#"{{"example_id":"{id}","image_features":{grid},"object_labels":[{{"name":"dog","score":0.2}},{{"name":"cat","score":0.9}}],"web_entities":[],"alt_text":"a cat"}}"#
        )
    }

    fn read(text: &str) -> Vec<Result<Example>> {
        DatasetReader::new(
            Cursor::new(text.to_string()),
            PathBuf::new(),
            SHAPE,
            Execution::Parallel,
        )
        .collect()
    }

    #[test]
    fn three_lines_in_order() {
        let text = ["a", "b", "c"].map(|i| line(i, "[[1,2],[3,4]]")).join("\n");
        let ex: Vec<Example> = read(&text).into_iter().map(Result::unwrap).collect();
        let ids: Vec<_> = ex.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(ex[0].object_labels[0].name, "cat");
        assert_eq!(ex[0].image_features.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_line() {
        let text = format!("{}\n{}", line("a", "[[1,2],[3,4]]"), line("b", "[[1,2,3]]"));
        let out = read(&text);
        assert!(out[0].is_ok());
        match &out[1] {
            Err(Error::Schema { line, .. }) => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_names_line() {
        let out = read("{not json}");
        assert!(matches!(out[0], Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(read("").is_empty());
    }

    #[test]
    fn feature_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<u8> = [9.0f32, 1.0, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        std::fs::write(dir.path().join("feats.bin"), vals).unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, line("x", r#"{"path":"feats.bin","offset":4}"#)).unwrap();
        let ex = load_dataset(&path, SHAPE, Execution::Sequential).unwrap();
        assert_eq!(ex[0].image_features.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn record_round_trip() {
        let r = parse_record(&line("a", "[[1,2],[3,4]]"), 1).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, [&r]).unwrap();
        let back = parse_record(std::str::from_utf8(&buf).unwrap().trim(), 1).unwrap();
        assert_eq!(back, r);
    }
}
