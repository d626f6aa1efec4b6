//! Text embedding files: a `n d` header followed by `n` lines of
//! `word v1 ... vd`, single-space separated, LF line endings.
//!
//! Floats are written in the shortest decimal form that reads back to the
//! identical `f32`, so a save/load round trip is lossless.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{EmbeddingMatrix, SignSignature};

/// Which columns of a row to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Whole,
    X,
    Y,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Whole, Part::X, Part::Y];

    /// Column range for a row of width `d`. `X` and `Y` need a signature of
    /// the same width.
    pub fn columns(self, d: usize, sig: Option<&SignSignature>) -> Result<Range<usize>> {
        if self == Part::Whole {
            return Ok(0..d);
        }
        let sig =
            sig.ok_or_else(|| Error::Config(format!("part {self} requires a split index")))?;
        if sig.dim() != d {
            return Err(Error::Config(format!(
                "split signature has width {} but vectors have width {d}",
                sig.dim()
            )));
        }
        Ok(match self {
            Part::X => 0..sig.split_index(),
            _ => sig.split_index()..d,
        })
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Whole => "whole",
            Part::X => "x",
            Part::Y => "y",
        })
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" | "w" => Ok(Part::Whole),
            "x" => Ok(Part::X),
            "y" => Ok(Part::Y),
            other => Err(Error::Config(format!(
                "unknown part '{other}', expected whole, x or y"
            ))),
        }
    }
}

/// Word vectors with a word → row lookup.
#[derive(Clone, Debug)]
pub struct Embeddings {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: EmbeddingMatrix<f32>,
}

impl Embeddings {
    pub fn new(words: Vec<String>, matrix: EmbeddingMatrix<f32>) -> Result<Self> {
        if words.len() != matrix.rows() {
            return Err(Error::Config(format!(
                "{} words for {} embedding rows",
                words.len(),
                matrix.rows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            // First occurrence wins on duplicates.
            index.entry(w.clone()).or_insert(id);
        }
        Ok(Embeddings {
            words,
            index,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &EmbeddingMatrix<f32> {
        &self.matrix
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.id(word).map(|i| self.matrix.row(i))
    }

    /// Copy restricted to the columns of `part`.
    pub fn select(&self, part: Part, sig: Option<&SignSignature>) -> Result<Embeddings> {
        let cols = part.columns(self.dim(), sig)?;
        if cols == (0..self.dim()) {
            return Ok(self.clone());
        }
        Ok(Embeddings {
            words: self.words.clone(),
            index: self.index.clone(),
            matrix: self.matrix.columns(cols),
        })
    }
}

/// Write the `part` columns of `matrix` with one word per row.
pub fn save<S: AsRef<str>>(
    matrix: &EmbeddingMatrix<f32>,
    words: &[S],
    path: impl AsRef<Path>,
    part: Part,
    sig: Option<&SignSignature>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_embeddings(&mut out, matrix, words, part, sig)
        .and_then(|_| out.flush())
        .map_err(|e| match e.downcast() {
            Ok(err) => err,
            Err(e) => Error::io(path, e),
        })
}

/// Write the text format to any writer.
pub fn write_embeddings<W: Write, S: AsRef<str>>(
    out: &mut W,
    matrix: &EmbeddingMatrix<f32>,
    words: &[S],
    part: Part,
    sig: Option<&SignSignature>,
) -> std::io::Result<()> {
    let cols = part
        .columns(matrix.dim(), sig)
        .map_err(std::io::Error::other)?;
    if words.len() != matrix.rows() {
        return Err(std::io::Error::other(Error::Config(format!(
            "{} words for {} embedding rows",
            words.len(),
            matrix.rows()
        ))));
    }
    writeln!(out, "{} {}", matrix.rows(), cols.len())?;
    for (i, word) in words.iter().enumerate() {
        out.write_all(word.as_ref().as_bytes())?;
        for v in &matrix.row(i)[cols.clone()] {
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string())
}

/// Parse the text format; `name` labels parse errors.
pub fn read_embeddings<R: BufRead>(reader: R, name: &str) -> Result<Embeddings> {
    let mut lines = reader.lines().enumerate();
    let read_err = |line: usize, e: std::io::Error| Error::parse(name, line, e.to_string());

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| read_err(1, e))?,
        None => return Err(Error::parse(name, 1, "empty file, expected header 'n d'")),
    };
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(name, 1, format!("malformed header '{header}'")))?;
    let (n, d) = match dims[..] {
        [n, d] if d > 0 => (n, d),
        _ => {
            return Err(Error::parse(
                name,
                1,
                format!("malformed header '{header}'"),
            ))
        }
    };

    let mut words = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| read_err(lineno, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if words.len() == n {
            return Err(Error::parse(
                name,
                lineno,
                format!("more vectors than the {n} declared in the header"),
            ));
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("nonblank line has a field");
        let before = data.len();
        for field in fields {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::parse(name, lineno, format!("invalid number '{field}'")))?;
            data.push(v);
        }
        let width = data.len() - before;
        if width != d {
            return Err(Error::parse(
                name,
                lineno,
                format!("expected {d} values, found {width}"),
            ));
        }
        words.push(word.to_owned());
    }
    if words.len() != n {
        return Err(Error::parse(
            name,
            n + 1,
            format!("header declares {n} vectors but file has {}", words.len()),
        ));
    }

    let matrix = EmbeddingMatrix::from_vec(n, d, data)?;
    Embeddings::new(words, matrix)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> (EmbeddingMatrix<f32>, Vec<String>) {
        let m = EmbeddingMatrix::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, -0.5, 0.25, 1e-7, -3.5])
            .unwrap();
        (m, vec!["alpha".into(), "beta".into()])
    }

    fn to_string(part: Part, sig: Option<&SignSignature>) -> String {
        let (m, words) = sample();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &m, &words, part, sig).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn x_part_writes_first_half() {
        let sig = SignSignature::half(4).unwrap();
        assert_eq!(
            to_string(Part::X, Some(&sig)),
            "2 2\nalpha 1 2\nbeta -0.5 0.25\n"
        );
    }

    #[test]
    fn y_part_writes_second_half() {
        let sig = SignSignature::half(4).unwrap();
        assert_eq!(
            to_string(Part::Y, Some(&sig)),
            "2 2\nalpha 3 4\nbeta 0.0000001 -3.5\n"
        );
    }

    #[test]
    fn subvector_parts_need_a_signature() {
        let (m, words) = sample();
        let mut buf = Vec::new();
        assert!(write_embeddings(&mut buf, &m, &words, Part::X, None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let (m, words) = sample();
        save(&m, &words, &path, Part::Whole, None).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.words(), &words[..]);
        assert_eq!(loaded.matrix(), &m);
    }

    #[test]
    fn short_line_is_reported_with_its_number() {
        let err = read_embeddings("2 3\na 1 2 3\nb 1 2\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_and_bad_headers() {
        assert!(matches!(
            read_embeddings("".as_bytes(), "t"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(read_embeddings("two 3\n".as_bytes(), "t").is_err());
        assert!(read_embeddings("2\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn vector_count_must_match_header() {
        assert!(read_embeddings("2 1\na 1\n".as_bytes(), "t").is_err());
        assert!(read_embeddings("1 1\na 1\nb 2\n".as_bytes(), "t").is_err());
        assert!(read_embeddings("1 1\na x\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn select_slices_columns() {
        let (m, words) = sample();
        let e = Embeddings::new(words, m).unwrap();
        let sig = SignSignature::half(4).unwrap();
        let y = e.select(Part::Y, Some(&sig)).unwrap();
        assert_eq!(y.vector("alpha").unwrap(), &[3.0, 4.0]);
        assert!(e
            .select(Part::X, Some(&SignSignature::half(6).unwrap()))
            .is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(values in proptest::collection::vec(-1e4f32..1e4, 12)) {
            let m = EmbeddingMatrix::from_vec(3, 4, values).unwrap();
            let words = ["a", "b", "c"];
            let mut buf = Vec::new();
            write_embeddings(&mut buf, &m, &words, Part::Whole, None).unwrap();
            let back = read_embeddings(buf.as_slice(), "t").unwrap();
            prop_assert_eq!(back.matrix(), &m);
        }
    }
}
