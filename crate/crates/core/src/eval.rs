//! Evaluation procedures on a trained model: nearest-label retrieval,
//! correlation matrices with agglomerative ordering, and describing an
//! external embedding by related labels and predicted attributes.

use std::io::Write;

use ndarray::{Array2, ArrayView1};

use crate::datamodel::{EmbeddingModel, VocabularyMaps};
use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

/// Cosine similarity, 0 when either vector has (near) zero norm.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return 0.0;
    }
    (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub label: String,
    pub similarity: f64,
}

/// Descending similarity, ties by ascending index.
fn rank_desc(scores: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The `topk` labels closest to `query` by cosine similarity, query excluded.
pub fn retrieve_labels(model: &EmbeddingModel, vocab: &VocabularyMaps, query: &str, topk: usize) -> Result<Vec<Neighbor>> {
    let q = vocab.labels.lookup("label", query)?;
    let qv = model.w.column(q);
    let scores: Vec<(usize, f64)> = (0..model.w.ncols())
        .filter(|&j| j != q)
        .map(|j| (j, cosine_similarity(qv, model.w.column(j))))
        .collect();
    Ok(rank_desc(&scores)
        .into_iter()
        .take(topk)
        .map(|(index, similarity)| Neighbor {
            index,
            label: vocab.labels.name(index).to_owned(),
            similarity,
        })
        .collect())
}

/// Pairwise cosine similarities of the given `W` columns; exactly
/// symmetric, with unit diagonal for nonzero columns.
pub fn correlation_of_columns(w: &Array2<f64>, columns: &[usize]) -> Array2<f64> {
    let n = columns.len();
    let mut corr = Array2::zeros((n, n));
    for a in 0..n {
        let va = w.column(columns[a]);
        corr[(a, a)] = if va.dot(&va).sqrt() < NORM_FLOOR { 0.0 } else { 1.0 };
        for b in a + 1..n {
            let s = cosine_similarity(va, w.column(columns[b]));
            corr[(a, b)] = s;
            corr[(b, a)] = s;
        }
    }
    corr
}

pub fn correlation_matrix<S: AsRef<str>>(model: &EmbeddingModel, vocab: &VocabularyMaps, subset: &[S]) -> Result<Array2<f64>> {
    let cols = subset
        .iter()
        .map(|s| vocab.labels.lookup("label", s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(correlation_of_columns(&model.w, &cols))
}

/// Square TSV with label names on the header row and first column.
pub fn write_correlation_tsv<W: Write, S: AsRef<str>>(mut out: W, names: &[S], corr: &Array2<f64>) -> Result<()> {
    write!(out, "label")?;
    for n in names {
        write!(out, "\t{}", n.as_ref())?;
    }
    writeln!(out)?;
    for (i, n) in names.iter().enumerate() {
        write!(out, "{}", n.as_ref())?;
        for v in corr.row(i) {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterOrdering {
    /// Leaf order of the dendrogram.
    pub order: Vec<usize>,
    /// Cluster id per item at the requested cluster count; ids follow the
    /// smallest member index.
    pub assignments: Vec<usize>,
}

/// Average-linkage agglomerative clustering on `1 - corr`.
///
/// The closest pair of clusters merges first, ties going to the smallest
/// (first, second) pair of minimum member indices; the merged cluster keeps
/// the smaller cluster's leaves first.
pub fn cluster_order(corr: &Array2<f64>, clusters: usize) -> Result<ClusterOrdering> {
    let n = corr.nrows();
    if corr.ncols() != n {
        return Err(Error::shape(format!("correlation matrix is {:?}", corr.dim())));
    }
    if n == 0 || clusters == 0 || clusters > n {
        return Err(Error::invalid(format!("cluster count must be in 1..={n}, got {clusters}")));
    }
    if corr.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation matrix".into()));
    }
    let mut dist = corr.mapv(|c| 1.0 - c);
    // slot i holds the cluster whose smallest member is i
    let mut leaves: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut active = n;
    let mut assignments = vec![0; n];
    let snapshot = |leaves: &[Option<Vec<usize>>], assignments: &mut Vec<usize>| {
        for (id, members) in leaves.iter().flatten().enumerate() {
            for &m in members {
                assignments[m] = id;
            }
        }
    };
    if active == clusters {
        snapshot(&leaves, &mut assignments);
    }
    while active > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if leaves[a].is_none() {
                continue;
            }
            for b in a + 1..n {
                if leaves[b].is_none() {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| dist[(a, b)] < d) {
                    best = Some((dist[(a, b)], a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two active clusters");
        let right = leaves[b].take().unwrap();
        let (size_a, size_b) = (leaves[a].as_ref().unwrap().len() as f64, right.len() as f64);
        for k in 0..n {
            if k == a || leaves[k].is_none() {
                continue;
            }
            let merged = (size_a * dist[(a, k)] + size_b * dist[(b, k)]) / (size_a + size_b);
            dist[(a, k)] = merged;
            dist[(k, a)] = merged;
        }
        leaves[a].as_mut().unwrap().extend(right);
        active -= 1;
        if active == clusters {
            snapshot(&leaves, &mut assignments);
        }
    }
    let order = leaves.into_iter().flatten().next().unwrap();
    Ok(ClusterOrdering { order, assignments })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelatedLabel {
    pub index: usize,
    pub label: String,
    pub similarity: f64,
    /// Share of the selected similarity mass, in percent.
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeScore {
    pub index: usize,
    pub attribute: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Description {
    pub related: Vec<RelatedLabel>,
    pub attributes: Vec<AttributeScore>,
}

pub const DEFAULT_COVERAGE: f64 = 0.8;
pub const DEFAULT_TOP_ATTRIBUTES: usize = 6;

/// Describes an embedding `w_star` by (1) the shortest list of most similar
/// labels whose clamped cosine similarities reach `coverage` of the total
/// clamped similarity, normalized to percentages, and (2) the `top_attrs`
/// highest-scoring attributes of `w_starᵀU`.
///
/// When no label has positive similarity the related list is empty.
pub fn describe_embedding(
    model: &EmbeddingModel,
    vocab: &VocabularyMaps,
    w_star: &[f64],
    coverage: f64,
    top_attrs: usize,
) -> Result<Description> {
    if w_star.len() != model.dim() {
        return Err(Error::shape(format!(
            "vector has {} entries, model dimension is {}",
            w_star.len(),
            model.dim()
        )));
    }
    if w_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query vector".into()));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid(format!("coverage must be in (0, 1], got {coverage}")));
    }
    let star = ArrayView1::from(w_star);
    let sims: Vec<(usize, f64)> = (0..model.w.ncols())
        .map(|j| (j, cosine_similarity(star, model.w.column(j)).max(0.0)))
        .collect();
    let ranked = rank_desc(&sims);
    // running sums in ranked order; the last one is the total
    let cumulative: Vec<f64> = ranked
        .iter()
        .scan(0.0, |acc, &(_, s)| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    let total = cumulative.last().copied().unwrap_or(0.0);
    let mut related = Vec::new();
    if total > 0.0 {
        let target = coverage * total;
        let len = cumulative.iter().position(|&c| c >= target).unwrap_or(ranked.len() - 1) + 1;
        let mass = cumulative[len - 1];
        related = ranked[..len]
            .iter()
            .map(|&(index, similarity)| RelatedLabel {
                index,
                label: vocab.labels.name(index).to_owned(),
                similarity,
                percent: similarity / mass * 100.0,
            })
            .collect();
    }

    let scores = star.dot(&model.u);
    let indexed: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    let attributes = rank_desc(&indexed)
        .into_iter()
        .take(top_attrs)
        .map(|(index, score)| AttributeScore {
            index,
            attribute: vocab.attributes.name(index).to_owned(),
            score,
        })
        .collect();
    Ok(Description { related, attributes })
}
