use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{detokenize, tokenize, ParallelCorpus, Style, StyledCorpus};
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyledRecord {
    pub text: String,
    pub style: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelRecord {
    pub src: String,
    pub tgt: String,
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), n + 1),
            source,
        })?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads `{"text", "style"}` records. With `style_names` given, records of
/// other styles are rejected; otherwise the two names are taken in order of
/// first appearance.
pub fn read_styled_jsonl(path: &Path, style_names: Option<&[String; 2]>) -> Result<StyledCorpus> {
    let records: Vec<StyledRecord> = read_jsonl(path)?;
    let names = match style_names {
        Some(n) => n.clone(),
        None => {
            let mut names: Vec<String> = Vec::new();
            for r in &records {
                if !names.contains(&r.style) {
                    names.push(r.style.clone());
                }
            }
            match <[String; 2]>::try_from(names) {
                Ok(n) => n,
                Err(names) => {
                    return Err(Error::InvalidArgument(format!(
                        "{} must contain exactly two styles, found {names:?}",
                        path.display()
                    )))
                }
            }
        }
    };
    let mut corpus = StyledCorpus::new(names);
    for r in records {
        let style = corpus
            .style_by_name(&r.style)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown style `{}` in {}", r.style, path.display())))?;
        corpus.push(tokenize(&r.text)?, style)?;
    }
    Ok(corpus)
}

pub fn write_styled_jsonl(path: &Path, corpus: &StyledCorpus) -> Result<()> {
    write_jsonl(
        path,
        corpus.sentences.iter().zip(&corpus.labels).map(|(s, &l): (_, &Style)| StyledRecord {
            text: detokenize(s),
            style: corpus.style_name(l).to_string(),
        }),
    )
}

pub fn read_parallel_jsonl(path: &Path) -> Result<ParallelCorpus> {
    let records: Vec<ParallelRecord> = read_jsonl(path)?;
    let mut corpus = ParallelCorpus::default();
    for r in records {
        corpus.push(tokenize(&r.src)?, tokenize(&r.tgt)?)?;
    }
    Ok(corpus)
}

pub fn write_parallel_jsonl(path: &Path, corpus: &ParallelCorpus) -> Result<()> {
    write_jsonl(
        path,
        corpus.pairs.iter().map(|(a, b)| ParallelRecord {
            src: detokenize(a),
            tgt: detokenize(b),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styled_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let long = vec!["w"; 60].join(" ");
        fs::write(
            &path,
            format!(
                "{{\"text\":\"Hello, World!\",\"style\":\"dem\"}}\n{{\"text\":\"{long}\",\"style\":\"rep\"}}\n"
            ),
        )
        .unwrap();
        let c = read_styled_jsonl(&path, None).unwrap();
        assert_eq!(c.style_names, ["dem".to_string(), "rep".to_string()]);
        assert_eq!(c.sentences[0], ["hello", ",", "world", "!"]);
        assert_eq!(c.sentences[1].len(), 50);
        let out = dir.path().join("d.jsonl");
        write_styled_jsonl(&out, &c).unwrap();
        assert_eq!(read_styled_jsonl(&out, None).unwrap(), c);
    }

    #[test]
    fn three_styles_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            "{\"text\":\"a\",\"style\":\"x\"}\n{\"text\":\"b\",\"style\":\"y\"}\n{\"text\":\"c\",\"style\":\"z\"}\n",
        )
        .unwrap();
        assert!(read_styled_jsonl(&path, None).is_err());
    }

    #[test]
    fn parallel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let mut p = ParallelCorpus::default();
        p.push(vec!["a".into(), "b".into()], vec!["c".into()]).unwrap();
        write_parallel_jsonl(&path, &p).unwrap();
        assert_eq!(read_parallel_jsonl(&path).unwrap(), p);
    }
}
