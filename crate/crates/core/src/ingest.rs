//! Building the relational co-occurrence matrix, reading attribute tables
//! and computing the negative-sample bound.
//!
//! File formats (tab separated, LF, blank lines and `#` lines skipped):
//!
//! * relations: `label<TAB>context[<TAB>weight]`, weight defaults to 1
//! * hierarchy: `parent<TAB>child`
//! * attributes: header `label<TAB>attr_1...<TAB>attr_m`, then one row per
//!   label with `m` numbers or `NA`
//! * sparse co-occurrence: `context<TAB>label<TAB>value`

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;

use crate::datamodel::{AttributeContext, CooccurrenceMatrix, NegativeBoundMatrix, Vocabulary, VocabularyMaps};
use crate::error::{Error, Result};

/// One weighted (label, context) observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationRecord {
    pub label: String,
    pub context: String,
    pub weight: f64,
}

impl RelationRecord {
    pub fn new(label: impl Into<String>, context: impl Into<String>, weight: f64) -> Self {
        RelationRecord {
            label: label.into(),
            context: context.into(),
            weight,
        }
    }
}

/// Sums record weights into `D[context, label]`.
///
/// Weights landing in the same cell are added in sorted order so the result
/// does not depend on record order.
pub fn build_cooccurrence(records: &[RelationRecord], vocab: &VocabularyMaps) -> Result<CooccurrenceMatrix> {
    let mut cells: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        if !(rec.weight.is_finite() && rec.weight > 0.0) {
            return Err(Error::invalid(format!(
                "record {i} ({} -> {}): weight must be positive, got {}",
                rec.label, rec.context, rec.weight
            )));
        }
        let w = vocab.labels.lookup("label", &rec.label)?;
        let c = vocab.contexts.lookup("context", &rec.context)?;
        cells.entry((c, w)).or_default().push(rec.weight);
    }
    let mut d = Array2::zeros((vocab.contexts.len(), vocab.labels.len()));
    for (idx, mut weights) in cells {
        weights.sort_by(f64::total_cmp);
        d[idx] = weights.iter().sum();
    }
    CooccurrenceMatrix::new(d)
}

/// Label and context vocabularies in order of first appearance.
pub fn relation_vocabulary(records: &[RelationRecord]) -> Result<(Vocabulary, Vocabulary)> {
    let mut labels = Vec::new();
    let mut contexts = Vec::new();
    let mut seen_l = HashMap::new();
    let mut seen_c = HashMap::new();
    for rec in records {
        if seen_l.insert(rec.label.clone(), ()).is_none() {
            labels.push(rec.label.clone());
        }
        if seen_c.insert(rec.context.clone(), ()).is_none() {
            contexts.push(rec.context.clone());
        }
    }
    Ok((Vocabulary::new(labels)?, Vocabulary::new(contexts)?))
}

/// Node names of a hierarchy in order of first appearance.
pub fn hierarchy_labels(edges: &[(String, String)]) -> Result<Vocabulary> {
    let mut names = Vec::new();
    let mut seen = HashMap::new();
    for (p, c) in edges {
        for n in [p, c] {
            if seen.insert(n.clone(), ()).is_none() {
                names.push(n.clone());
            }
        }
    }
    Vocabulary::new(names)
}

/// Turns hierarchy edges into label–label relations: every ordered pair of
/// distinct nodes within `radius` undirected hops gets weight
/// `decay^(distance - 1)`. Labels serve as their own contexts.
pub fn hierarchy_to_relations(edges: &[(String, String)], radius: usize, decay: f64) -> Result<Vec<RelationRecord>> {
    if radius == 0 {
        return Err(Error::invalid("radius must be >= 1"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid(format!("decay must be in (0, 1], got {decay}")));
    }
    if let Some((p, _)) = edges.iter().find(|(p, c)| p == c) {
        return Err(Error::invalid(format!("self-loop edge on '{p}'")));
    }
    let nodes = hierarchy_labels(edges)?;
    let mut adj = vec![Vec::new(); nodes.len()];
    for (p, c) in edges {
        let (p, c) = (nodes.index_of(p).unwrap(), nodes.index_of(c).unwrap());
        adj[p].push(c);
        adj[c].push(p);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    let mut records = Vec::new();
    let mut dist = vec![usize::MAX; nodes.len()];
    let mut queue = VecDeque::new();
    for src in 0..nodes.len() {
        dist.fill(usize::MAX);
        dist[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            if dist[v] == radius {
                continue;
            }
            for &nb in &adj[v] {
                if dist[nb] == usize::MAX {
                    dist[nb] = dist[v] + 1;
                    queue.push_back(nb);
                }
            }
        }
        for (dst, &d) in dist.iter().enumerate() {
            if dst != src && d != usize::MAX {
                let weight = decay.powi((d - 1) as i32);
                records.push(RelationRecord::new(nodes.name(src), nodes.name(dst), weight));
            }
        }
    }
    Ok(records)
}

/// Parsed attribute table: column names plus values and mask over `labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable {
    pub attributes: Vocabulary,
    pub context: AttributeContext,
}

pub const MISSING_VALUE: &str = "NA";

/// Reads an attribute TSV against `labels`. Labels absent from the file get
/// a fully masked row; `NA` cells are masked individually.
pub fn read_attribute_table<R: BufRead>(input: R, labels: &Vocabulary) -> Result<AttributeTable> {
    let mut lines = data_lines(input);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header row"))??;
    let mut cols = header.split('\t');
    cols.next();
    let attributes = Vocabulary::new(cols.map(str::trim)).map_err(|e| Error::parse(hline, e.to_string()))?;
    let m = attributes.len();

    let mut assoc = Array2::zeros((labels.len(), m));
    let mut mask = Array2::from_elem((labels.len(), m), false);
    let mut seen = vec![false; labels.len()];
    for item in lines {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != m + 1 {
            return Err(Error::parse(
                line,
                format!("expected {} columns, found {}", m + 1, fields.len()),
            ));
        }
        let name = fields[0].trim();
        let row = labels.lookup("label", name).map_err(|e| Error::parse(line, e.to_string()))?;
        if std::mem::replace(&mut seen[row], true) {
            return Err(Error::parse(line, format!("duplicate row for label '{name}'")));
        }
        for (j, cell) in fields[1..].iter().map(|s| s.trim()).enumerate() {
            if cell == MISSING_VALUE {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(line, format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite value '{cell}'")));
            }
            assoc[(row, j)] = v;
            mask[(row, j)] = true;
        }
    }
    Ok(AttributeTable {
        attributes,
        context: AttributeContext::new(assoc, mask)?,
    })
}

pub fn load_attribute_table(path: impl AsRef<Path>, vocab: &VocabularyMaps) -> Result<AttributeTable> {
    read_attribute_table(BufReader::new(File::open(path)?), &vocab.labels)
}

/// `Q[c, w] = k * rowsum(D)[c] * colsum(D)[w] / sum(D) + D[c, w]`, or `D`
/// itself when `D` has no mass.
pub fn compute_negative_bound(d: &CooccurrenceMatrix, k: u32) -> NegativeBoundMatrix {
    let d = d.values();
    let total: f64 = d.sum();
    if total == 0.0 || k == 0 {
        return NegativeBoundMatrix::new(d.clone()).expect("D is nonnegative");
    }
    let context_mass = d.sum_axis(ndarray::Axis(1));
    let label_mass = d.sum_axis(ndarray::Axis(0));
    let k = f64::from(k);
    let q = Array2::from_shape_fn(d.dim(), |(c, w)| k * (context_mass[c] * label_mass[w]) / total + d[(c, w)]);
    NegativeBoundMatrix::new(q).expect("Q built from nonnegative terms")
}

/// Yields `(line_number, line)` for non-blank, non-comment lines.
fn data_lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) => {
                let t = l.trim_end_matches('\r');
                if t.trim().is_empty() || t.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, t.to_owned())))
                }
            }
        })
}

pub fn read_relations<R: BufRead>(input: R) -> Result<Vec<RelationRecord>> {
    let mut out = Vec::new();
    for item in data_lines(input) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        let weight = match fields.len() {
            2 => 1.0,
            3 => fields[2]
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad weight '{}'", fields[2])))?,
            n => return Err(Error::parse(line, format!("expected 2 or 3 columns, found {n}"))),
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(line, "empty name"));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::parse(line, format!("weight must be positive, got {weight}")));
        }
        out.push(RelationRecord::new(fields[0], fields[1], weight));
    }
    Ok(out)
}

pub fn read_hierarchy<R: BufRead>(input: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for item in data_lines(input) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [p, c] if !p.is_empty() && !c.is_empty() => {
                if p == c {
                    return Err(Error::parse(line, format!("self-loop edge on '{p}'")));
                }
                out.push((p.to_string(), c.to_string()));
            }
            _ => return Err(Error::parse(line, "expected 'parent<TAB>child'")),
        }
    }
    Ok(out)
}

/// Writes the nonzero entries of `D` as `context<TAB>label<TAB>value`,
/// contexts outer, labels inner.
pub fn write_sparse_cooccurrence<W: Write>(mut out: W, d: &CooccurrenceMatrix, vocab: &VocabularyMaps) -> Result<()> {
    for ((c, w), &v) in d.values().indexed_iter() {
        if v != 0.0 {
            writeln!(out, "{}\t{}\t{}", vocab.contexts.name(c), vocab.labels.name(w), v)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a sparse co-occurrence file. Vocabularies are taken in order of
/// first appearance (labels from the second column, contexts from the first).
pub fn read_sparse_cooccurrence<R: BufRead>(input: R) -> Result<(CooccurrenceMatrix, Vocabulary, Vocabulary)> {
    let mut entries = Vec::new();
    for item in data_lines(input) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        let [context, label, value] = fields.as_slice() else {
            return Err(Error::parse(line, format!("expected 3 columns, found {}", fields.len())));
        };
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(line, format!("non-numeric value '{value}'")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::parse(line, format!("value must be finite and >= 0, got {v}")));
        }
        entries.push((line, context.to_string(), label.to_string(), v));
    }
    let records: Vec<RelationRecord> = entries
        .iter()
        .map(|(_, c, l, _)| RelationRecord::new(l.clone(), c.clone(), 1.0))
        .collect();
    let (labels, contexts) = relation_vocabulary(&records)?;
    let mut d = Array2::zeros((contexts.len(), labels.len()));
    for (line, c, l, v) in &entries {
        let idx = (contexts.index_of(c).unwrap(), labels.index_of(l).unwrap());
        if d[idx] != 0.0 {
            return Err(Error::parse(*line, format!("duplicate entry for ({c}, {l})")));
        }
        d[idx] = *v;
    }
    Ok((CooccurrenceMatrix::new(d)?, labels, contexts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn maps(labels: &[&str], contexts: &[&str]) -> VocabularyMaps {
        VocabularyMaps::new(
            Vocabulary::new(labels.iter().copied()).unwrap(),
            Vocabulary::new(contexts.iter().copied()).unwrap(),
            Vocabulary::default(),
        )
    }

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn pairs(records: &[RelationRecord]) -> Vec<(String, String, f64)> {
        let mut v: Vec<_> = records
            .iter()
            .map(|r| (r.label.clone(), r.context.clone(), r.weight))
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn repeated_records_accumulate() {
        let v = maps(&["cat"], &["feline"]);
        let recs = [RelationRecord::new("cat", "feline", 1.0), RelationRecord::new("cat", "feline", 2.0)];
        let d = build_cooccurrence(&recs, &v).unwrap();
        assert_eq!(d.values()[(0, 0)], 3.0);
    }

    #[test]
    fn empty_records_give_zero_matrix() {
        let v = maps(&["a", "b"], &["x"]);
        let d = build_cooccurrence(&[], &v).unwrap();
        assert_eq!(d.values(), &Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn unknown_label_is_named() {
        let v = maps(&["cat"], &["feline"]);
        let err = build_cooccurrence(&[RelationRecord::new("dog", "feline", 1.0)], &v).unwrap_err();
        assert!(err.to_string().contains("label 'dog' unknown"), "{err}");
        let err = build_cooccurrence(&[RelationRecord::new("cat", "feline", 0.0)], &v).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn chain_radius_one() {
        let recs = hierarchy_to_relations(&edges(&[("a", "b"), ("b", "c")]), 1, 1.0).unwrap();
        let expect = vec![
            ("a".into(), "b".into(), 1.0),
            ("b".into(), "a".into(), 1.0),
            ("b".into(), "c".into(), 1.0),
            ("c".into(), "b".into(), 1.0),
        ];
        assert_eq!(pairs(&recs), expect);
    }

    #[test]
    fn chain_radius_two_with_decay() {
        // BFS distances on a-b-c: d(a,b)=d(b,c)=1, d(a,c)=2 -> weight 0.5^1
        let recs = hierarchy_to_relations(&edges(&[("a", "b"), ("b", "c")]), 2, 0.5).unwrap();
        let expect = vec![
            ("a".into(), "b".into(), 1.0),
            ("a".into(), "c".into(), 0.5),
            ("b".into(), "a".into(), 1.0),
            ("b".into(), "c".into(), 1.0),
            ("c".into(), "a".into(), 0.5),
            ("c".into(), "b".into(), 1.0),
        ];
        assert_eq!(pairs(&recs), expect);
    }

    #[test]
    fn hierarchy_edge_cases() {
        assert!(hierarchy_to_relations(&[], 2, 0.5).unwrap().is_empty());
        assert!(hierarchy_to_relations(&edges(&[("a", "a")]), 1, 1.0).is_err());
        assert!(hierarchy_to_relations(&edges(&[("a", "b")]), 0, 1.0).is_err());
        assert!(hierarchy_to_relations(&edges(&[("a", "b")]), 1, 0.0).is_err());
    }

    #[test]
    fn attribute_table_masks_missing_rows_and_cells() {
        let labels = Vocabulary::new(["a", "b", "c"]).unwrap();
        let text = "label\tfurry\tstripes\nb\t1\t0.5\n";
        let t = read_attribute_table(text.as_bytes(), &labels).unwrap();
        assert_eq!(t.attributes.names(), &["furry", "stripes"]);
        let full_rows = t.context.mask().rows().into_iter().filter(|r| r.iter().all(|&m| m)).count();
        assert_eq!(full_rows, 1);
        assert_eq!(t.context.unobserved_labels(), vec![0, 2]);

        let text = "label\tfurry\tstripes\na\tNA\t2\n";
        let t = read_attribute_table(text.as_bytes(), &labels).unwrap();
        assert!(!t.context.mask()[(0, 0)]);
        assert!(t.context.mask()[(0, 1)]);
        assert_eq!(t.context.assoc()[(0, 1)], 2.0);
    }

    #[test]
    fn attribute_table_errors() {
        let labels = Vocabulary::new(["a"]).unwrap();
        let err = read_attribute_table("label\tx\ty\na\t1\n".as_bytes(), &labels).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_attribute_table("label\tx\nzebra\t1\n".as_bytes(), &labels).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("zebra"));
        let err = read_attribute_table("label\tx\na\tyes\n".as_bytes(), &labels).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn eighty_five_attribute_columns() {
        let labels = Vocabulary::new(["zebra"]).unwrap();
        let header: Vec<String> = (0..85).map(|i| format!("att{i}")).collect();
        let row: Vec<String> = (0..85).map(|i| format!("{}", i as f64 / 10.0)).collect();
        let text = format!("label\t{}\nzebra\t{}\n", header.join("\t"), row.join("\t"));
        let t = read_attribute_table(text.as_bytes(), &labels).unwrap();
        assert_eq!(t.context.num_attributes(), 85);
    }

    #[test]
    fn negative_bound_scalar_and_k_zero() {
        let d = CooccurrenceMatrix::new(array![[2.0]]).unwrap();
        assert_eq!(compute_negative_bound(&d, 1).values(), &array![[4.0]]);
        let d = CooccurrenceMatrix::new(array![[1.0, 0.0], [3.0, 2.0]]).unwrap();
        assert_eq!(compute_negative_bound(&d, 0).values(), d.values());
        let z = CooccurrenceMatrix::new(Array2::zeros((2, 3))).unwrap();
        assert_eq!(compute_negative_bound(&z, 10).values(), z.values());
    }

    /// Direct per-entry evaluation of the bound written in label/context
    /// indices: Q_{w,c} = k (sum_i d_{i,c})(sum_j d_{w,j}) / sum_ij d_{i,j} + d_{w,c}.
    fn bound_oracle(d: &[[f64; 2]; 2], k: f64, c: usize, w: usize) -> f64 {
        let entry = |label: usize, ctx: usize| d[ctx][label];
        let ctx_mass: f64 = (0..2).map(|i| entry(i, c)).sum();
        let label_mass: f64 = (0..2).map(|j| entry(w, j)).sum();
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                total += entry(i, j);
            }
        }
        k * ctx_mass * label_mass / total + entry(w, c)
    }

    #[test]
    fn negative_bound_two_by_two_matches_oracle() {
        let raw = [[1.0, 0.0], [1.0, 2.0]];
        let d = CooccurrenceMatrix::new(array![[1.0, 0.0], [1.0, 2.0]]).unwrap();
        let q = compute_negative_bound(&d, 2);
        // frozen from the oracle: rows sums (1, 3), column sums (2, 2), total 4
        let frozen = array![[2.0, 1.0], [4.0, 5.0]];
        for c in 0..2 {
            for w in 0..2 {
                let o = bound_oracle(&raw, 2.0, c, w);
                assert_eq!(frozen[(c, w)], o);
                assert!((q.values()[(c, w)] - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_cooccurrence_round_trips() {
        let v = maps(&["a", "b"], &["x", "y"]);
        let d = CooccurrenceMatrix::new(array![[1.5, 0.0], [0.0, 2.0]]).unwrap();
        let mut out = Vec::new();
        write_sparse_cooccurrence(&mut out, &d, &v).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), "x\ta\t1.5\ny\tb\t2\n");
        let (d2, labels, contexts) = read_sparse_cooccurrence(out.as_slice()).unwrap();
        assert_eq!(d2, d);
        assert_eq!(labels.names(), &["a", "b"]);
        assert_eq!(contexts.names(), &["x", "y"]);
    }

    #[test]
    fn relation_file_parses_optional_weight() {
        let recs = read_relations("a\tb\n# note\n\nc\td\t2.5\n".as_bytes()).unwrap();
        assert_eq!(recs, vec![RelationRecord::new("a", "b", 1.0), RelationRecord::new("c", "d", 2.5)]);
        let err = read_relations("a\tb\nc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn bound_dominates_counts(vals in proptest::collection::vec(0.0f64..50.0, 12), k in 0u32..20) {
            let d = CooccurrenceMatrix::new(Array2::from_shape_vec((3, 4), vals).unwrap()).unwrap();
            let q = compute_negative_bound(&d, k);
            for (qv, dv) in q.values().iter().zip(d.values()) {
                prop_assert!(qv >= dv);
            }
        }

        #[test]
        fn cooccurrence_ignores_record_order(
            raw in proptest::collection::vec((0usize..3, 0usize..2, 0.01f64..10.0), 0..20),
            seed in any::<u64>(),
        ) {
            let v = maps(&["a", "b", "c"], &["x", "y"]);
            let mut recs: Vec<_> = raw.iter()
                .map(|&(l, c, w)| RelationRecord::new(v.labels.name(l), v.contexts.name(c), w))
                .collect();
            let d1 = build_cooccurrence(&recs, &v).unwrap();
            // deterministic shuffle
            let mut s = seed;
            for i in (1..recs.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                recs.swap(i, (s >> 33) as usize % (i + 1));
            }
            let d2 = build_cooccurrence(&recs, &v).unwrap();
            prop_assert_eq!(d1, d2);
        }

        #[test]
        fn hierarchy_relations_are_symmetric(
            raw in proptest::collection::vec((0usize..6, 0usize..6), 0..10),
            radius in 1usize..4,
        ) {
            let es: Vec<(String, String)> = raw.iter()
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (format!("n{a}"), format!("n{b}")))
                .collect();
            let recs = hierarchy_to_relations(&es, radius, 0.5).unwrap();
            let mut fwd = pairs(&recs);
            let mut rev: Vec<_> = fwd.iter().map(|(a, b, w)| (b.clone(), a.clone(), *w)).collect();
            rev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            fwd.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(fwd, rev);
        }
    }
}
