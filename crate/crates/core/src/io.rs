//! File formats: embedding CSV / JSONL, score dumps, curve points,
//! pseudo-label dumps and active-learning traces.
//!
//! Embedding CSV has the header `id,label,split,v0,...,v{dim-1}`; `label` is an
//! integer or `?`, `split` one of `train`, `observed`, `test`, `-`. Embedding
//! JSONL has one `{"id", "label", "vector"}` object per line. In every format
//! read here, lines starting with `#` are comments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::active_learning::{AlTrace, Snapshot, TraceStep};
use crate::embedding::{Embedding, Label, LabeledEmbedding, LabeledSet, UnlabeledPool};
use crate::error::{Error, Result};
use crate::evaluation::CurvePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "jsonl" => Ok(FileFormat::Jsonl),
            _ => Err(Error::invalid(format!("unknown file format `{s}`"))),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Observed,
    Test,
    Unassigned,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Observed => "observed",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "-",
        }
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "observed" => Ok(SplitTag::Observed),
            "test" => Ok(SplitTag::Test),
            "-" => Ok(SplitTag::Unassigned),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub embedding: Embedding,
    pub label: Option<Label>,
    pub split: SplitTag,
}

/// Parsed embedding file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecords {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingRecords {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every record must carry a label.
    pub fn into_labeled_set(self) -> Result<LabeledSet> {
        let members = self
            .records
            .into_iter()
            .map(|r| match r.label {
                Some(l) => Ok(LabeledEmbedding::new(r.embedding, l)),
                None => Err(Error::invalid(format!(
                    "record `{}` has no label",
                    r.embedding.id()
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::from_members(members)
    }

    /// Builds a pool; labels are kept as hidden truth and are required, since
    /// the simulated oracle and the evaluator read them.
    pub fn into_pool(self, known: &BTreeSet<Label>) -> Result<UnlabeledPool> {
        let members = self
            .records
            .into_iter()
            .map(|r| match r.label {
                Some(l) => Ok((r.embedding, l)),
                None => Err(Error::invalid(format!(
                    "pool record `{}` has no ground-truth label",
                    r.embedding.id()
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        UnlabeledPool::new(members, known)
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    label: Option<Label>,
    vector: Vec<f64>,
    #[serde(default)]
    split: Option<String>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_label(s: &str, line: usize) -> Result<Option<Label>> {
    if s == "?" {
        return Ok(None);
    }
    s.parse::<Label>()
        .map(Some)
        .map_err(|_| parse_error(line, format!("bad label `{s}`")))
}

fn push_record(
    out: &mut EmbeddingRecords,
    seen: &mut BTreeSet<String>,
    record: EmbeddingRecord,
) -> Result<()> {
    if out.records.is_empty() {
        out.dim = record.embedding.dim();
    } else if record.embedding.dim() != out.dim {
        return Err(Error::DimensionMismatch {
            expected: out.dim,
            found: record.embedding.dim(),
        });
    }
    if !seen.insert(record.embedding.id().to_owned()) {
        return Err(Error::DuplicateId(record.embedding.id().to_owned()));
    }
    out.records.push(record);
    Ok(())
}

fn csv_reader(content: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(content)
}

fn record_line(r: &csv::StringRecord) -> usize {
    r.position().map_or(0, |p| p.line() as usize)
}

/// Parses an embedding file. The dimension is taken from the first record.
pub fn parse_embedding_file(content: &[u8], format: FileFormat) -> Result<EmbeddingRecords> {
    let mut out = EmbeddingRecords {
        dim: 0,
        records: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    match format {
        FileFormat::Csv => {
            let mut reader = csv_reader(content);
            let header = reader
                .headers()
                .map_err(|e| parse_error(1, e.to_string()))?
                .clone();
            if header.is_empty() || header.iter().all(str::is_empty) {
                return Err(Error::Empty("embedding file"));
            }
            if header.len() < 4
                || &header[0] != "id"
                || &header[1] != "label"
                || &header[2] != "split"
            {
                return Err(parse_error(1, "header must be `id,label,split,v0,...`"));
            }
            for row in reader.records() {
                let row = row.map_err(|e| parse_error(0, e.to_string()))?;
                let line = record_line(&row);
                if row.len() < 4 {
                    return Err(parse_error(
                        line,
                        "expected id, label, split and coordinates",
                    ));
                }
                let vector = row
                    .iter()
                    .skip(3)
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| parse_error(line, format!("bad coordinate `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let record = EmbeddingRecord {
                    embedding: Embedding::new(&row[0], vector)?,
                    label: parse_label(&row[1], line)?,
                    split: row[2]
                        .parse()
                        .map_err(|e: Error| parse_error(line, e.to_string()))?,
                };
                push_record(&mut out, &mut seen, record)?;
            }
        }
        FileFormat::Jsonl => {
            let text = std::str::from_utf8(content).map_err(|e| parse_error(0, e.to_string()))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let raw: JsonRecord =
                    serde_json::from_str(line).map_err(|e| parse_error(n + 1, e.to_string()))?;
                let split = match raw.split.as_deref() {
                    Some(s) => s
                        .parse()
                        .map_err(|e: Error| parse_error(n + 1, e.to_string()))?,
                    None => SplitTag::Unassigned,
                };
                let record = EmbeddingRecord {
                    embedding: Embedding::new(raw.id, raw.vector)?,
                    label: raw.label,
                    split,
                };
                push_record(&mut out, &mut seen, record)?;
            }
        }
    }
    if out.records.is_empty() {
        return Err(Error::Empty("embedding file"));
    }
    Ok(out)
}

fn comment_lines(out: &mut String, comments: &[String]) {
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.starts_with('#') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Serialises embedding records. `comments` become leading `#` lines.
pub fn write_embedding_records<'a, I>(
    records: I,
    dim: usize,
    format: FileFormat,
    comments: &[String],
) -> String
where
    I: IntoIterator<Item = (&'a Embedding, Option<Label>, SplitTag)>,
{
    let mut out = String::new();
    comment_lines(&mut out, comments);
    match format {
        FileFormat::Csv => {
            out.push_str("id,label,split");
            for i in 0..dim {
                out.push_str(&format!(",v{i}"));
            }
            out.push('\n');
            for (e, label, split) in records {
                out.push_str(&csv_field(e.id()));
                out.push(',');
                match label {
                    Some(l) => out.push_str(&l.to_string()),
                    None => out.push('?'),
                }
                out.push(',');
                out.push_str(split.as_str());
                for v in e.vector() {
                    out.push(',');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
        }
        FileFormat::Jsonl => {
            for (e, label, split) in records {
                let line = json!({
                    "id": e.id(),
                    "label": label,
                    "split": split.as_str(),
                    "vector": e.vector(),
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_labeled_set(
    set: &LabeledSet,
    split: SplitTag,
    format: FileFormat,
    comments: &[String],
) -> String {
    write_embedding_records(
        set.members()
            .iter()
            .map(|m| (&m.embedding, Some(m.label), split)),
        set.dim(),
        format,
        comments,
    )
}

/// Writes a pool including its ground-truth labels.
pub fn write_pool(
    pool: &UnlabeledPool,
    split: SplitTag,
    format: FileFormat,
    comments: &[String],
) -> String {
    write_embedding_records(
        pool.members()
            .iter()
            .zip(pool.hidden_truth())
            .map(|(e, t)| (e, Some(t.label), split)),
        pool.dim(),
        format,
        comments,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub score: f64,
    pub is_novel: bool,
}

/// `id,score,is_novel` with `is_novel` as 0/1.
pub fn write_scores(rows: &[ScoreRow], comments: &[String]) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comments);
    out.push_str("id,score,is_novel\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            csv_field(&r.id),
            r.score,
            u8::from(r.is_novel)
        ));
    }
    out
}

pub fn parse_scores(content: &[u8]) -> Result<Vec<ScoreRow>> {
    let mut reader = csv_reader(content);
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| parse_error(0, e.to_string()))?;
        let line = record_line(&row);
        if row.len() != 3 {
            return Err(parse_error(line, "expected id,score,is_novel"));
        }
        let score = row[1]
            .parse::<f64>()
            .map_err(|_| parse_error(line, format!("bad score `{}`", &row[1])))?;
        let is_novel = match &row[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(parse_error(line, format!("bad is_novel `{other}`"))),
        };
        rows.push(ScoreRow {
            id: row[0].to_owned(),
            score,
            is_novel,
        });
    }
    Ok(rows)
}

/// Curve points as `x,y`.
pub fn write_curve(points: &[CurvePoint], comments: &[String]) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comments);
    out.push_str("x,y\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    out
}

pub fn parse_curve(content: &[u8]) -> Result<Vec<CurvePoint>> {
    let mut reader = csv_reader(content);
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| parse_error(0, e.to_string()))?;
        let line = record_line(&row);
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_error(line, "expected x,y"))
        };
        points.push(CurvePoint {
            x: num(0)?,
            y: num(1)?,
        });
    }
    Ok(points)
}

/// `id,pseudo_label`.
pub fn write_pseudo_labels<'a, I>(rows: I, comments: &[String]) -> String
where
    I: IntoIterator<Item = (&'a str, Label)>,
{
    let mut out = String::new();
    comment_lines(&mut out, comments);
    out.push_str("id,pseudo_label\n");
    for (id, l) in rows {
        out.push_str(&format!("{},{l}\n", csv_field(id)));
    }
    out
}

pub fn parse_pseudo_labels(content: &[u8]) -> Result<Vec<(String, Label)>> {
    let mut reader = csv_reader(content);
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| parse_error(0, e.to_string()))?;
        let line = record_line(&row);
        if row.len() != 2 {
            return Err(parse_error(line, "expected id,pseudo_label"));
        }
        let label = row[1]
            .parse()
            .map_err(|_| parse_error(line, format!("bad label `{}`", &row[1])))?;
        rows.push((row[0].to_owned(), label));
    }
    Ok(rows)
}

/// JSON number for finite values, otherwise the strings `inf`, `-inf`, `nan`.
pub fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(v.to_string().to_lowercase())
    }
}

fn f64_from_json(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Trace as JSONL: an optional header object, then one `step` record per
/// query and one `snapshot` record per evaluation, in the order they happened.
pub fn write_trace(trace: &AlTrace, header: Option<&Value>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let mut h = h.clone();
        if let Value::Object(map) = &mut h {
            map.insert("kind".into(), json!("header"));
        }
        out.push_str(&h.to_string());
        out.push('\n');
    }
    let mut snapshots = trace.snapshots.iter().peekable();
    let mut emit_snapshots_through = |step: usize, out: &mut String| {
        while let Some(s) = snapshots.next_if(|s| s.step <= step) {
            let rec = json!({
                "kind": "snapshot",
                "step": s.step,
                "novel_acc": json_f64(s.novel_acc),
                "combined_acc": json_f64(s.combined_acc),
                "novel_degenerate": s.novel_degenerate,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
    };
    emit_snapshots_through(0, &mut out);
    for s in &trace.steps {
        let rec = json!({
            "kind": "step",
            "step": s.step,
            "id": s.id,
            "score": json_f64(s.score),
            "label": s.label,
            "was_novel": s.was_novel,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
        emit_snapshots_through(s.step, &mut out);
    }
    emit_snapshots_through(usize::MAX, &mut out);
    out
}

/// Reads a trace written by [`write_trace`], returning the header (if any).
pub fn parse_trace(content: &[u8]) -> Result<(Option<Value>, AlTrace)> {
    let text = std::str::from_utf8(content).map_err(|e| parse_error(0, e.to_string()))?;
    let mut header = None;
    let mut trace = AlTrace::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| parse_error(n + 1, format!("bad trace record: {what}"));
        let v: Value = serde_json::from_str(line).map_err(|e| parse_error(n + 1, e.to_string()))?;
        let step = || {
            v["step"]
                .as_u64()
                .map(|s| s as usize)
                .ok_or_else(|| bad("step"))
        };
        match v["kind"].as_str() {
            Some("header") => header = Some(v.clone()),
            Some("step") => trace.steps.push(TraceStep {
                step: step()?,
                id: v["id"].as_str().ok_or_else(|| bad("id"))?.to_owned(),
                score: f64_from_json(&v["score"]).ok_or_else(|| bad("score"))?,
                label: v["label"]
                    .as_u64()
                    .and_then(|l| Label::try_from(l).ok())
                    .ok_or_else(|| bad("label"))?,
                was_novel: v["was_novel"].as_bool().ok_or_else(|| bad("was_novel"))?,
            }),
            Some("snapshot") => trace.snapshots.push(Snapshot {
                step: step()?,
                novel_acc: f64_from_json(&v["novel_acc"]).ok_or_else(|| bad("novel_acc"))?,
                combined_acc: f64_from_json(&v["combined_acc"])
                    .ok_or_else(|| bad("combined_acc"))?,
                novel_degenerate: v["novel_degenerate"].as_bool().unwrap_or(false),
            }),
            _ => return Err(bad("kind")),
        }
    }
    Ok((header, trace))
}
