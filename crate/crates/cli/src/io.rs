use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

/// The sentence on one input line: the `text`, `literal` or `sentence`
/// field of a JSON object, or the trimmed line itself. Blank lines give
/// `None`.
pub fn line_text(line: &str, number: usize) -> Result<Option<String>> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    if !line.starts_with('{') {
        return Ok(Some(line.to_string()));
    }
    let value: serde_json::Value =
        serde_json::from_str(line).with_context(|| format!("line {number}: invalid JSON"))?;
    ["text", "literal", "sentence"]
        .iter()
        .find_map(|k| value.get(k).and_then(|v| v.as_str()))
        .map(|s| Some(s.trim().to_string()))
        .with_context(|| format!("line {number}: no text, literal or sentence field"))
}

pub fn read_texts(reader: impl BufRead) -> impl Iterator<Item = Result<String>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(line) => line_text(&line, i + 1).transpose(),
        Err(e) => Some(Err(e.into())),
    })
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> impl Iterator<Item = Result<T>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(line) if line.trim().is_empty() => None,
        Ok(line) => Some(serde_json::from_str(&line).with_context(|| format!("line {}: invalid record", i + 1))),
        Err(e) => Some(Err(e.into())),
    })
}

pub fn write_jsonl<T: Serialize>(out: &mut dyn Write, item: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, item)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Maps `items` through `f` on `pool` one chunk at a time and hands the
/// results to `sink` in input order. Stops at the first error.
pub fn ordered_map<T, U, F, S>(
    pool: &rayon::ThreadPool,
    items: impl Iterator<Item = Result<T>>,
    chunk_size: usize,
    f: F,
    mut sink: S,
) -> Result<()>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Result<U> + Sync + Send,
    S: FnMut(U) -> Result<()>,
{
    let mut items = items.peekable();
    while items.peek().is_some() {
        let chunk = items.by_ref().take(chunk_size.max(1)).collect::<Result<Vec<T>>>()?;
        let results: Vec<Result<U>> = pool.install(|| chunk.into_par_iter().map(&f).collect());
        for r in results {
            sink(r?)?;
        }
    }
    Ok(())
}
