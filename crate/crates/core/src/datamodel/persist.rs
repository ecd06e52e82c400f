//! Text embedding export and the binary model file.
//!
//! Text embeddings: a `"<count> <dim>"` header line, then one line per label
//! `"<name> v_1 ... v_n"`. Floats are written with the shortest decimal
//! representation that parses back to the same value.
//!
//! Model file (`PHCLE1`): the 6-byte magic, where the trailing byte is the
//! format version, then little-endian `u64` dim/labels/contexts/attributes,
//! row-major `f64` payloads for `W`, `C`, `U`, length-prefixed name tables
//! for labels, contexts and attributes, and finally the hyperparameters as a
//! length-prefixed `key=value` block.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{EmbeddingModel, HyperParams, Vocabulary, VocabularyMaps};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 6] = b"PHCLE1";
const MAGIC_PREFIX: &[u8; 5] = b"PHCLE";

/// Embeddings read back from the text format, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings {
    pub dim: usize,
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl TextEmbeddings {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vectors[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub fn write_embeddings<W: Write>(mut out: W, model: &EmbeddingModel, labels: &Vocabulary) -> Result<()> {
    if model.w.ncols() != labels.len() {
        return Err(Error::shape(format!(
            "W has {} columns but there are {} labels",
            model.w.ncols(),
            labels.len()
        )));
    }
    writeln!(out, "{} {}", labels.len(), model.dim())?;
    for (j, name) in labels.names().iter().enumerate() {
        write!(out, "{name}")?;
        for v in model.w.column(j) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, model: &EmbeddingModel, vocab: &VocabularyMaps) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_embeddings(file, model, &vocab.labels)
}

pub fn read_embeddings<R: BufRead>(input: R) -> Result<TextEmbeddings> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "missing header"))??;
    let mut fields = header.split_whitespace();
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(c), Some(d), None) => {
            let c: usize = c.parse().map_err(|_| Error::parse(1, format!("bad count '{c}'")))?;
            let d: usize = d.parse().map_err(|_| Error::parse(1, format!("bad dimension '{d}'")))?;
            (c, d)
        }
        _ => return Err(Error::parse(1, "header must be '<count> <dim>'")),
    };

    let mut names = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for row in 0..count {
        let line = row + 2;
        let text = lines
            .next()
            .ok_or_else(|| Error::parse(line, format!("expected {count} rows, found {row}")))??;
        let mut tokens = text.split_whitespace();
        let name = tokens.next().ok_or_else(|| Error::parse(line, "empty row"))?;
        let vector = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(line, format!("non-numeric token '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vector.len() != dim {
            return Err(Error::parse(
                line,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        if names.iter().any(|n| n == name) {
            return Err(Error::parse(line, format!("duplicate label '{name}'")));
        }
        names.push(name.to_owned());
        vectors.push(vector);
    }
    for (row, extra) in lines.enumerate() {
        if !extra?.trim().is_empty() {
            return Err(Error::parse(count + 2 + row, "more rows than the header count"));
        }
    }
    Ok(TextEmbeddings { dim, names, vectors })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<TextEmbeddings> {
    read_embeddings(BufReader::new(File::open(path)?))
}

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    // iter() walks in logical row-major order regardless of memory layout
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u64(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

pub fn model_to_bytes(model: &EmbeddingModel, vocab: &VocabularyMaps, hyper: &HyperParams) -> Result<Vec<u8>> {
    model.validate(vocab)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    for v in [
        model.dim(),
        vocab.labels.len(),
        vocab.contexts.len(),
        vocab.attributes.len(),
    ] {
        put_u64(&mut buf, v);
    }
    put_matrix(&mut buf, &model.w);
    put_matrix(&mut buf, &model.c);
    put_matrix(&mut buf, &model.u);
    for table in [&vocab.labels, &vocab.contexts, &vocab.attributes] {
        for name in table.names() {
            put_str(&mut buf, name);
        }
    }
    put_str(&mut buf, &hyper.to_config_string());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let raw = self.take(8, what)?;
        let v = u64::from_le_bytes(raw.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} out of range")))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("{what} dimensions overflow")))?;
        let raw = self.take(len, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked above"))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u64(what)?;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(EmbeddingModel, VocabularyMaps, HyperParams)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MODEL_MAGIC.len(), "magic")?;
    if &magic[..MAGIC_PREFIX.len()] != MAGIC_PREFIX {
        return Err(Error::Format("missing PHCLE magic".into()));
    }
    if magic != MODEL_MAGIC {
        return Err(Error::UnsupportedVersion(
            String::from_utf8_lossy(&magic[MAGIC_PREFIX.len()..]).into_owned(),
        ));
    }
    let dim = cur.u64("dimension")?;
    let labels = cur.u64("label count")?;
    let contexts = cur.u64("context count")?;
    let attributes = cur.u64("attribute count")?;
    let w = cur.matrix(dim, labels, "W")?;
    let c = cur.matrix(dim, contexts, "C")?;
    let u = cur.matrix(dim, attributes, "U")?;

    let mut table = |n: usize, what: &str| -> Result<Vocabulary> {
        let names = (0..n).map(|_| cur.string(what)).collect::<Result<Vec<_>>>()?;
        Vocabulary::new(names).map_err(|e| Error::Format(format!("{what}: {e}")))
    };
    let vocab = VocabularyMaps::new(
        table(labels, "label names")?,
        table(contexts, "context names")?,
        table(attributes, "attribute names")?,
    );
    let config = cur.string("hyperparameters")?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - cur.pos
        )));
    }
    let (hyper, _) = HyperParams::from_config_str(&config)
        .map_err(|e| Error::Format(format!("hyperparameters: {e}")))?;
    let model = EmbeddingModel { w, c, u };
    model.validate(&vocab)?;
    Ok((model, vocab, hyper))
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &EmbeddingModel,
    vocab: &VocabularyMaps,
    hyper: &HyperParams,
) -> Result<()> {
    let bytes = model_to_bytes(model, vocab, hyper)?;
    let mut file = File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(EmbeddingModel, VocabularyMaps, HyperParams)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, InitScheme};
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn vocab(labels: &[&str], contexts: &[&str], attrs: &[&str]) -> VocabularyMaps {
        VocabularyMaps::new(
            Vocabulary::new(labels.iter().copied()).unwrap(),
            Vocabulary::new(contexts.iter().copied()).unwrap(),
            Vocabulary::new(attrs.iter().copied()).unwrap(),
        )
    }

    #[test]
    fn zero_vector_text_format() {
        let v = vocab(&["cat"], &[], &[]);
        let model = EmbeddingModel {
            w: Array2::zeros((2, 1)),
            c: Array2::zeros((2, 0)),
            u: Array2::zeros((2, 0)),
        };
        let mut out = Vec::new();
        write_embeddings(&mut out, &model, &v.labels).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "1 2\ncat 0 0\n");
    }

    #[test]
    fn text_structure_errors_name_the_line() {
        let err = read_embeddings("2 3\ncat 1 2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = read_embeddings("1 2\ncat 1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_embeddings("1 2\ncat 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_embeddings("one 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = read_embeddings("1 1\na 1\nb 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn header_without_trailing_newline_loads() {
        let e = read_embeddings("1 2\ncat 0 0".as_bytes()).unwrap();
        assert_eq!(e.get("cat"), Some(&[0.0, 0.0][..]));
    }

    #[test]
    fn model_bytes_round_trip() {
        let v = vocab(&["a", "b", "c"], &["x", "y"], &["p"]);
        let model = init_model(&v, 3, InitScheme::UniformRandom(1.0), 9).unwrap();
        let hyper = HyperParams {
            lambda2: 0.123,
            ..HyperParams::default()
        };
        let bytes = model_to_bytes(&model, &v, &hyper).unwrap();
        assert_eq!(&bytes[..6], b"PHCLE1");
        let (m2, v2, h2) = model_from_bytes(&bytes).unwrap();
        assert_eq!(m2, model);
        assert_eq!(v2, v);
        assert_eq!(h2, hyper);
    }

    #[test]
    fn truncated_or_versioned_files_are_rejected() {
        let v = vocab(&["a"], &["x"], &["p"]);
        let model = EmbeddingModel {
            w: array![[1.0]],
            c: array![[2.0]],
            u: array![[3.0]],
        };
        let bytes = model_to_bytes(&model, &v, &HyperParams::default()).unwrap();
        for cut in [0, 3, 6, 20, 50, bytes.len() - 1] {
            assert!(matches!(model_from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[5] = b'2';
        assert!(matches!(model_from_bytes(&wrong), Err(Error::UnsupportedVersion(v)) if v == "2"));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(model_from_bytes(&trailing).is_err());
    }

    proptest! {
        #[test]
        fn random_models_round_trip_bitwise(
            n in 1usize..4, nw in 1usize..5, nc in 0usize..4, m in 0usize..4,
            seed in any::<u64>(), scale in 0.0f64..1e6,
        ) {
            let names = |p: &str, k: usize| Vocabulary::new((0..k).map(|i| format!("{p}{i}"))).unwrap();
            let v = VocabularyMaps::new(names("l", nw), names("c", nc), names("a", m));
            let model = init_model(&v, n, InitScheme::UniformRandom(scale), seed).unwrap();
            let hyper = HyperParams { seed, ..HyperParams::default() };
            let (back, v2, h2) = model_from_bytes(&model_to_bytes(&model, &v, &hyper).unwrap()).unwrap();
            for (a, b) in back.w.iter().chain(back.c.iter()).chain(back.u.iter())
                .zip(model.w.iter().chain(model.c.iter()).chain(model.u.iter())) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(&v2, &v);
            prop_assert_eq!(h2, hyper);

            let mut text = Vec::new();
            write_embeddings(&mut text, &model, &v.labels).unwrap();
            let loaded = read_embeddings(text.as_slice()).unwrap();
            prop_assert_eq!(loaded.dim, n);
            for (j, name) in v.labels.names().iter().enumerate() {
                let got = loaded.get(name).unwrap();
                for (g, w) in got.iter().zip(model.w.column(j)) {
                    prop_assert_eq!(g.to_bits(), w.to_bits());
                }
            }
        }
    }
}
