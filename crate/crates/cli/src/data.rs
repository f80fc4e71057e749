//! File formats: UCI bag-of-words, LIBSVM and dense 0/1 CSV.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use vips_core::blr::BlrDataset;
use vips_core::lda::{Corpus, Doc};
use vips_core::sbn::SbnData;

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Numbered, trimmed lines, skipping blanks.
fn content_lines<'a, R: BufRead + 'a>(reader: R, path: &'a Path) -> impl Iterator<Item = CliResult<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l.trim().to_string())).map_err(|e| CliError::io(path, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.is_empty()))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, path: &Path, line: usize) -> CliResult<T> {
    let tok = tok.ok_or_else(|| CliError::parse(path, line, format!("missing {what}")))?;
    tok.parse().map_err(|_| CliError::parse(path, line, format!("invalid {what} `{tok}`")))
}

/// UCI bag-of-words: header lines D, W, NNZ then `docID wordID count` triples, 1-indexed.
pub fn parse_bow<R: BufRead>(reader: R, path: &Path) -> CliResult<Corpus> {
    let mut lines = content_lines(reader, path);
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["document count", "vocabulary size", "non-zero count"]) {
        let (line, text) = lines.next().transpose()?.ok_or_else(|| CliError::parse(path, 0, format!("missing {what}")))?;
        let mut toks = text.split_whitespace();
        *slot = parse_field(toks.next(), what, path, line)?;
        if toks.next().is_some() {
            return Err(CliError::parse(path, line, format!("trailing tokens after {what}")));
        }
    }
    let [d, w, nnz] = header;
    if w == 0 {
        return Err(CliError::parse(path, 2, "vocabulary size must be positive"));
    }
    let mut words: Vec<Vec<(u32, u32)>> = vec![Vec::new(); d];
    let mut seen = HashSet::new();
    let mut triples = 0usize;
    for item in lines {
        let (line, text) = item?;
        let mut toks = text.split_whitespace();
        let doc: usize = parse_field(toks.next(), "docID", path, line)?;
        let word: usize = parse_field(toks.next(), "wordID", path, line)?;
        let count: u32 = parse_field(toks.next(), "count", path, line)?;
        if toks.next().is_some() {
            return Err(CliError::parse(path, line, "expected exactly three fields"));
        }
        if doc == 0 || doc > d {
            return Err(CliError::parse(path, line, format!("docID {doc} outside 1..={d}")));
        }
        if word == 0 || word > w {
            return Err(CliError::parse(path, line, format!("wordID {word} outside 1..={w}")));
        }
        if count == 0 {
            return Err(CliError::parse(path, line, "count must be positive"));
        }
        if !seen.insert((doc, word)) {
            return Err(CliError::parse(path, line, format!("duplicate entry for doc {doc}, word {word}")));
        }
        words[doc - 1].push((word as u32 - 1, count));
        triples += 1;
    }
    if triples != nnz {
        return Err(CliError::parse(path, 3, format!("header declares {nnz} entries, found {triples}")));
    }
    let docs = words.into_iter().map(Doc::new).collect::<vips_core::Result<Vec<_>>>()?;
    Ok(Corpus::new(docs, w)?)
}

pub fn load_bow(path: &Path) -> CliResult<Corpus> {
    parse_bow(open(path)?, path)
}

pub fn write_bow<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    let nnz: usize = corpus.docs.iter().map(|d| d.words.len()).sum();
    writeln!(out, "{}\n{}\n{nnz}", corpus.docs.len(), corpus.vocab_size)?;
    for (i, doc) in corpus.docs.iter().enumerate() {
        for (w, c) in &doc.words {
            writeln!(out, "{} {} {c}", i + 1, w + 1)?;
        }
    }
    Ok(())
}

/// One term per line; blank lines are kept as empty terms.
pub fn load_vocab(path: &Path) -> CliResult<Vec<String>> {
    open(path)?
        .lines()
        .map(|l| l.map(|l| l.trim_end().to_string()).map_err(|e| CliError::io(path, e)))
        .collect()
}

/// Sparse LIBSVM rows before densification.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmRows {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<u8>,
    /// Largest feature index seen (1-indexed).
    pub max_index: usize,
}

/// `label idx:val ...` with labels in {+1, −1} or {1, 0}; `#` starts a comment.
pub fn parse_libsvm<R: BufRead>(reader: R, path: &Path) -> CliResult<LibsvmRows> {
    let mut out = LibsvmRows { rows: Vec::new(), labels: Vec::new(), max_index: 0 };
    for item in content_lines(reader, path) {
        let (line, text) = item?;
        let body = text.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label: f64 = parse_field(toks.next(), "label", path, line)?;
        let label = match label {
            l if l == 1.0 => 1,
            l if l == -1.0 || l == 0.0 => 0,
            l => return Err(CliError::parse(path, line, format!("label {l} is not binary"))),
        };
        let mut row = Vec::new();
        let mut seen = HashSet::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| CliError::parse(path, line, format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = parse_field(Some(i), "feature index", path, line)?;
            let val: f64 = parse_field(Some(v), "feature value", path, line)?;
            if idx == 0 {
                return Err(CliError::parse(path, line, "feature indices are 1-based"));
            }
            if !val.is_finite() {
                return Err(CliError::parse(path, line, format!("feature value {val} is not finite")));
            }
            if !seen.insert(idx) {
                return Err(CliError::parse(path, line, format!("duplicate feature index {idx}")));
            }
            out.max_index = out.max_index.max(idx);
            row.push((idx, val));
        }
        out.rows.push(row);
        out.labels.push(label);
    }
    if out.rows.is_empty() {
        return Err(CliError::parse(path, 0, "no data rows"));
    }
    Ok(out)
}

/// Dataset scaled into the unit ball, with the factor that was divided out.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDataset {
    pub data: BlrDataset,
    pub scale: f64,
}

/// Densifies into `dim` columns and divides by `scale`, or by the largest row
/// norm when that exceeds one. Rows still outside the unit ball after a fixed
/// scale are projected onto it.
pub fn densify(rows: &LibsvmRows, dim: usize, scale: Option<f64>, path: &Path) -> CliResult<ScaledDataset> {
    if dim == 0 {
        return Err(CliError::parse(path, 0, "rows have no features"));
    }
    if rows.max_index > dim {
        return Err(CliError::parse(path, 0, format!("feature index {} exceeds dimension {dim}", rows.max_index)));
    }
    let mut inputs: Vec<DVector<f64>> = rows
        .rows
        .iter()
        .map(|r| {
            let mut x = DVector::zeros(dim);
            r.iter().for_each(|&(i, v)| x[i - 1] = v);
            x
        })
        .collect();
    let scale = scale.unwrap_or_else(|| inputs.iter().map(|x| x.norm()).fold(1.0, f64::max));
    for x in inputs.iter_mut() {
        *x /= scale;
        let n = x.norm();
        if n > 1.0 {
            *x /= n;
        }
    }
    Ok(ScaledDataset { data: BlrDataset::new(inputs, rows.labels.clone())?, scale })
}

pub fn load_libsvm(path: &Path) -> CliResult<ScaledDataset> {
    let rows = parse_libsvm(open(path)?, path)?;
    densify(&rows, rows.max_index, None, path)
}

/// Loads a test file with the training dimension and scale.
pub fn load_libsvm_like(path: &Path, dim: usize, scale: f64) -> CliResult<ScaledDataset> {
    let rows = parse_libsvm(open(path)?, path)?;
    densify(&rows, dim, Some(scale), path)
}

pub fn write_libsvm<W: Write>(data: &BlrDataset, mut out: W) -> std::io::Result<()> {
    for (x, y) in data.inputs().iter().zip(data.labels()) {
        write!(out, "{}", if *y == 1 { "+1" } else { "-1" })?;
        for (i, v) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            write!(out, " {}:{v}", i + 1)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Dense comma-separated 0/1 rows.
pub fn parse_binary_csv<R: BufRead>(reader: R, path: &Path) -> CliResult<SbnData> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for item in content_lines(reader, path) {
        let (line, text) = item?;
        let row = text
            .split(',')
            .map(|t| match t.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(CliError::parse(path, line, format!("expected 0 or 1, got `{other}`"))),
            })
            .collect::<CliResult<Vec<u8>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::parse(path, line, format!("expected {} columns, got {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::parse(path, 0, "no data rows"));
    }
    Ok(SbnData::new(rows)?)
}

pub fn load_binary_csv(path: &Path) -> CliResult<SbnData> {
    parse_binary_csv(open(path)?, path)
}

pub fn write_binary_csv<W: Write>(data: &SbnData, mut out: W) -> std::io::Result<()> {
    for row in data.rows() {
        let text: Vec<&str> = row.iter().map(|v| if *v == 1 { "1" } else { "0" }).collect();
        writeln!(out, "{}", text.join(","))?;
    }
    Ok(())
}
