//! Text formats: token datasets, token corpora and plain CSV tables.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hmm_data::TokenSequence;

/// Parsed `#L=<L> <key>=<V>` header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub l: usize,
    pub vocab: usize,
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Parses a header line; `vocab_key` is `n_voc` for datasets and `vocab` for corpora.
/// Either key is accepted so both formats load through the same reader.
pub fn parse_header(line: &str, line_no: usize) -> Result<Header> {
    let body = match line.trim().strip_prefix('#') {
        Some(b) => b,
        None => return parse_err(line_no, "missing header `#L=<L> vocab=<V>`"),
    };
    let (mut l, mut vocab) = (None, None);
    for field in body.split_whitespace() {
        let (k, v) = match field.split_once('=') {
            Some(kv) => kv,
            None => return parse_err(line_no, format!("malformed header field `{field}`")),
        };
        let v: usize = match v.parse() {
            Ok(v) => v,
            Err(_) => return parse_err(line_no, format!("header value `{v}` is not an integer")),
        };
        match k {
            "L" => l = Some(v),
            "vocab" | "n_voc" => vocab = Some(v),
            _ => return parse_err(line_no, format!("unknown header key `{k}`")),
        }
    }
    match (l, vocab) {
        (Some(l), Some(vocab)) if l > 0 && vocab > 0 => Ok(Header { l, vocab }),
        _ => parse_err(line_no, "header needs positive L and vocab"),
    }
}

/// Header plus token rows with their 1-based line numbers. Blank lines are skipped.
pub struct TokenTable {
    pub header: Header,
    pub rows: Vec<(usize, Vec<u32>)>,
}

pub fn read_token_table<R: Read>(reader: R) -> Result<TokenTable> {
    let mut lines = BufReader::new(reader).lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return parse_err(1, "empty file"),
    };
    let header = parse_header(&first, 1)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let id: u32 = match tok.parse() {
                Ok(v) => v,
                Err(_) => return parse_err(line_no, format!("token `{tok}` is not a non-negative integer")),
            };
            if id as usize >= header.vocab {
                return parse_err(
                    line_no,
                    format!("token {id} outside vocabulary of size {}", header.vocab),
                );
            }
            row.push(id);
        }
        rows.push((line_no, row));
    }
    Ok(TokenTable { header, rows })
}

/// Writes sequences in the dataset format: header `#L=<L> n_voc=<n>`, then
/// the `L + 2` tokens of each sequence with the label token last.
pub fn write_dataset<W: Write>(mut w: W, seqs: &[TokenSequence]) -> Result<()> {
    let first = match seqs.first() {
        Some(s) => s,
        None => return Err(Error::InvalidArgument("cannot write an empty dataset".into())),
    };
    if seqs.iter().any(|s| s.l != first.l || s.n_voc != first.n_voc) {
        return Err(Error::InvalidArgument("sequences differ in L or vocabulary".into()));
    }
    writeln!(w, "#L={} n_voc={}", first.l, first.n_voc)?;
    for s in seqs {
        let line: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<TokenSequence>> {
    let t = read_token_table(reader)?;
    let Header { l, vocab } = t.header;
    if vocab > 256 {
        return parse_err(1, format!("dataset vocabulary {vocab} exceeds 256"));
    }
    t.rows
        .into_iter()
        .map(|(line_no, row)| {
            if row.len() != l + 2 {
                return parse_err(line_no, format!("expected {} tokens, got {}", l + 2, row.len()));
            }
            TokenSequence::new(row.into_iter().map(|v| v as u8).collect(), l, vocab).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn save_dataset(path: &Path, seqs: &[TokenSequence]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, seqs)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<TokenSequence>> {
    read_dataset(fs::File::open(path)?)
}

/// Writes a CSV table. Floats should be pre-formatted by the caller so output is byte-stable.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        writeln!(w, "{}", r.join(","))?;
    }
    Ok(())
}

pub fn save_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Shortest round-trip representation of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let a = TokenSequence::new(vec![0, 1, 1, 0], 2, 2).unwrap();
        let b = TokenSequence::new(vec![1, 1, 0, 0], 2, 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "#L=2 n_voc=2\n0 1 1 0\n1 1 0 0\n"
        );
        assert_eq!(read_dataset(&buf[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "#L=2 n_voc=2\n0 1 1 0\n\n0 1 x 0\n";
        match read_dataset(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match read_dataset("#L=2 n_voc=2\n0 1 2 0\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match read_dataset("#L=2 n_voc=2\n0 1 1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_dataset("0 1 1 0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_rows_must_match_header() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &["a", "b"], &[vec!["1".into(), "2".into()]]).unwrap();
        assert_eq!(buf, b"a,b\n1,2\n");
        assert!(write_csv(Vec::new(), &["a"], &[vec![]]).is_err());
    }
}
