//! Core value types shared by every stage: vocabularies, the relational and
//! descriptive data matrices, the embedding model and its hyperparameters.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod config;
mod persist;

pub use persist::{
    load_embeddings, load_model, model_from_bytes, model_to_bytes, read_embeddings, save_embeddings,
    save_model, write_embeddings, TextEmbeddings, MODEL_MAGIC,
};

/// An ordered list of unique names with a name → index lookup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Names must be non-empty, whitespace-free and unique.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for name in names {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::invalid("empty name in vocabulary"));
            }
            if name.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("name '{name}' contains whitespace")));
            }
            if vocab.index.contains_key(&name) {
                return Err(Error::invalid(format!("duplicate name '{name}' in vocabulary")));
            }
            vocab.index.insert(name.clone(), vocab.names.len());
            vocab.names.push(name);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Up to `limit` vocabulary names closest to `name` by edit distance.
    pub fn suggestions(&self, name: &str, limit: usize) -> Vec<String> {
        let mut scored: Vec<(usize, usize)> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (strsim::levenshtein(name, n), i))
            .collect();
        scored.sort_unstable();
        scored
            .into_iter()
            .take(limit)
            .map(|(_, i)| self.names[i].clone())
            .collect()
    }

    pub(crate) fn lookup(&self, kind: &'static str, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::Unknown {
            kind,
            name: name.to_owned(),
            suggestions: self.suggestions(name, 3),
        })
    }
}

/// Label, relational-context and attribute vocabularies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabularyMaps {
    pub labels: Vocabulary,
    pub contexts: Vocabulary,
    pub attributes: Vocabulary,
}

impl VocabularyMaps {
    pub fn new(labels: Vocabulary, contexts: Vocabulary, attributes: Vocabulary) -> Self {
        VocabularyMaps {
            labels,
            contexts,
            attributes,
        }
    }
}

fn check_nonnegative(what: &str, values: &Array2<f64>) -> Result<()> {
    for (&v, (r, c)) in values.iter().zip(ndarray::indices(values.dim())) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{what}[{r},{c}] = {v}")));
        }
        if v < 0.0 {
            return Err(Error::invalid(format!("{what}[{r},{c}] = {v} is negative")));
        }
    }
    Ok(())
}

/// Relational co-occurrence counts `D`, contexts × labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMatrix(Array2<f64>);

impl CooccurrenceMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_nonnegative("D", &values)?;
        Ok(CooccurrenceMatrix(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn num_contexts(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.0.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Per-(context, label) upper bound `Q` on the co-occurrence count, stored
/// with the same orientation as `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeBoundMatrix(Array2<f64>);

impl NegativeBoundMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_nonnegative("Q", &values)?;
        Ok(NegativeBoundMatrix(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Label–attribute associations `A` (labels × attributes) with the
/// observation mask `I`. Values under a `false` mask entry are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeContext {
    assoc: Array2<f64>,
    mask: Array2<bool>,
}

impl AttributeContext {
    pub fn new(assoc: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if assoc.dim() != mask.dim() {
            return Err(Error::shape(format!(
                "attribute values are {:?} but mask is {:?}",
                assoc.dim(),
                mask.dim()
            )));
        }
        for ((r, c), &v) in assoc.indexed_iter() {
            if mask[(r, c)] && !v.is_finite() {
                return Err(Error::NonFinite(format!("A[{r},{c}] = {v}")));
            }
        }
        Ok(AttributeContext { assoc, mask })
    }

    /// Every entry observed.
    pub fn fully_observed(assoc: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(assoc.dim(), true);
        Self::new(assoc, mask)
    }

    pub fn assoc(&self) -> &Array2<f64> {
        &self.assoc
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn num_labels(&self) -> usize {
        self.assoc.nrows()
    }

    pub fn num_attributes(&self) -> usize {
        self.assoc.ncols()
    }

    /// Labels whose attribute row is entirely unobserved.
    pub fn unobserved_labels(&self) -> Vec<usize> {
        self.mask
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, row)| row.iter().all(|&m| !m))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Label embedding `W` (dim × labels), context embedding `C`
/// (dim × contexts) and attribute embedding `U` (dim × attributes).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub w: Array2<f64>,
    pub c: Array2<f64>,
    pub u: Array2<f64>,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Checks the four shape relations against `vocab` and that every entry
    /// is finite.
    pub fn validate(&self, vocab: &VocabularyMaps) -> Result<()> {
        let n = self.dim();
        let expect = [
            ("W", self.w.dim(), (n, vocab.labels.len())),
            ("C", self.c.dim(), (n, vocab.contexts.len())),
            ("U", self.u.dim(), (n, vocab.attributes.len())),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        for (name, m) in [("W", &self.w), ("C", &self.c), ("U", &self.u)] {
            if let Some(v) = m.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} contains {v}")));
            }
        }
        Ok(())
    }

    /// Embedding of label `index` (column of `W`).
    pub fn label_vector(&self, index: usize) -> ndarray::ArrayView1<'_, f64> {
        self.w.column(index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Every entry 1.0.
    Ones,
    /// I.i.d. uniform on `[-scale, scale]`.
    UniformRandom(f64),
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::UniformRandom(0.1)
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Ones => f.write_str("ones"),
            InitScheme::UniformRandom(s) => write!(f, "uniform_random({s})"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ones" {
            return Ok(InitScheme::Ones);
        }
        let inner = s
            .strip_prefix("uniform_random(")
            .or_else(|| s.strip_prefix("uniform("))
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| Error::invalid(format!("unknown init scheme '{s}'")))?;
        let scale: f64 = inner
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad init scale '{inner}'")))?;
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::invalid(format!("init scale must be >= 0, got {scale}")));
        }
        Ok(InitScheme::UniformRandom(scale))
    }
}

/// Step size rule for the gradient blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StepRule {
    /// Every column moves by `eta` times its gradient.
    #[default]
    Fixed,
    /// Column `j` moves by `eta / L_j` times its gradient, where `L_j`
    /// bounds the curvature of the objective in that column. With C and U
    /// fixed the `W` objective separates over columns (likewise `C` given
    /// `W`), so `eta <= 1` guarantees monotone descent.
    Lipschitz,
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepRule::Fixed => "fixed",
            StepRule::Lipschitz => "lipschitz",
        })
    }
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" => Ok(StepRule::Fixed),
            "lipschitz" => Ok(StepRule::Lipschitz),
            other => Err(Error::invalid(format!("unknown step rule '{other}'"))),
        }
    }
}

/// Training hyperparameters. Defaults follow the reference experimental
/// setup (`K = 50`, `d = 100`, 50 FISTA iterations, step `1e-5`, `k = 10`,
/// `epsilon = 1e-4`).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Weight of the masked descriptive loss.
    pub lambda1: f64,
    /// l1 weight on `U`.
    pub lambda2: f64,
    /// Squared-l2 weight on `W` and `U`.
    pub lambda3: f64,
    /// Negative samples per label.
    pub k: u32,
    pub dim: usize,
    /// Gradient step for the `C` and `W` blocks.
    pub eta: f64,
    pub outer_iters: usize,
    pub inner_steps_c: usize,
    pub inner_steps_w: usize,
    /// FISTA iteration budget per outer iteration.
    pub inner_max_iter: usize,
    /// Relative-decrease tolerance for stopping FISTA.
    pub epsilon: f64,
    pub seed: u64,
    pub init: InitScheme,
    /// How `eta` turns into per-column steps for `C` and `W`.
    pub step_rule: StepRule,
    /// Relational context weights (one per co-occurrence matrix).
    pub alpha: Vec<f64>,
    /// Descriptive context weights (one per attribute table).
    pub beta: Vec<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda1: 1.0,
            lambda2: 0.01,
            lambda3: 0.01,
            k: 10,
            dim: 100,
            eta: 1e-5,
            outer_iters: 50,
            inner_steps_c: 5,
            inner_steps_w: 5,
            inner_max_iter: 50,
            epsilon: 1e-4,
            seed: 0,
            init: InitScheme::default(),
            step_rule: StepRule::Fixed,
            alpha: vec![1.0],
            beta: vec![1.0],
        }
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!("step must be > 0, got {}", self.eta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        for (name, v) in [
            ("dim", self.dim),
            ("outer_iters", self.outer_iters),
            ("inner_steps_c", self.inner_steps_c),
            ("inner_steps_w", self.inner_steps_w),
            ("inner_fista", self.inner_max_iter),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if let InitScheme::UniformRandom(s) = self.init {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("init scale must be >= 0, got {s}")));
            }
        }
        self.validate_weights(self.alpha.len(), self.beta.len())
    }

    /// Checks `alpha`/`beta` against the number of relational and
    /// descriptive contexts actually supplied.
    pub fn validate_weights(&self, relational: usize, descriptive: usize) -> Result<()> {
        check_simplex("alpha", &self.alpha, relational, true)?;
        check_simplex("beta", &self.beta, descriptive, false)
    }
}

fn check_simplex(name: &str, weights: &[f64], expected: usize, nonneg: bool) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::invalid(format!(
            "{name} has {} weights but {expected} contexts were given",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("{name} weights must be finite")));
    }
    if nonneg && weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid(format!("{name} weights must be >= 0")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!("{name} weights must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Fills `W`, `C`, `U` (in that order) for the given vocabulary sizes.
pub fn init_model(vocab: &VocabularyMaps, dim: usize, scheme: InitScheme, seed: u64) -> Result<EmbeddingModel> {
    if vocab.labels.is_empty() {
        return Err(Error::invalid("label vocabulary is empty"));
    }
    let mut mats = init_matrices(
        dim,
        &[vocab.labels.len(), vocab.contexts.len(), vocab.attributes.len()],
        scheme,
        seed,
    )?
    .into_iter();
    let (w, c, u) = (mats.next().unwrap(), mats.next().unwrap(), mats.next().unwrap());
    Ok(EmbeddingModel { w, c, u })
}

/// One `dim × cols` matrix per entry of `cols`, drawn in order from a single
/// generator seeded with `seed`.
pub fn init_matrices(dim: usize, cols: &[usize], scheme: InitScheme, seed: u64) -> Result<Vec<Array2<f64>>> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be >= 1"));
    }
    match scheme {
        InitScheme::Ones => Ok(cols.iter().map(|&n| Array2::ones((dim, n))).collect()),
        InitScheme::UniformRandom(scale) => {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::invalid(format!("init scale must be >= 0, got {scale}")));
            }
            if scale == 0.0 {
                return Ok(cols.iter().map(|&n| Array2::zeros((dim, n))).collect());
            }
            let dist = Uniform::new_inclusive(-scale, scale)
                .map_err(|e| Error::invalid(format!("uniform init: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(cols
                .iter()
                .map(|&n| Array2::from_shape_simple_fn((dim, n), || dist.sample(&mut rng)))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(labels: &[&str], contexts: &[&str], attrs: &[&str]) -> VocabularyMaps {
        VocabularyMaps::new(
            Vocabulary::new(labels.iter().copied()).unwrap(),
            Vocabulary::new(contexts.iter().copied()).unwrap(),
            Vocabulary::new(attrs.iter().copied()).unwrap(),
        )
    }

    #[test]
    fn vocabulary_round_trips_and_rejects_duplicates() {
        let v = Vocabulary::new(["cat", "dog", "cow"]).unwrap();
        for (i, n) in v.names().iter().enumerate() {
            assert_eq!(v.index_of(n), Some(i));
            assert_eq!(v.name(i), n);
        }
        assert!(Vocabulary::new(["a", "b", "a"]).is_err());
        assert!(Vocabulary::new(["a b"]).is_err());
        assert!(Vocabulary::new([""]).is_err());
    }

    #[test]
    fn unknown_name_suggests_neighbours() {
        let v = Vocabulary::new(["teapot", "coffeepot", "vase"]).unwrap();
        let err = v.lookup("label", "cofeepot").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("label 'cofeepot' unknown"), "{msg}");
        assert!(msg.contains("coffeepot"));
    }

    #[test]
    fn ones_init_fills_with_ones() {
        let v = vocab(&["a", "b"], &["x"], &["p", "q", "r"]);
        let m = init_model(&v, 3, InitScheme::Ones, 0).unwrap();
        assert_eq!(m.w, Array2::<f64>::ones((3, 2)));
        assert_eq!(m.c.dim(), (3, 1));
        assert_eq!(m.u.dim(), (3, 3));
        m.validate(&v).unwrap();
    }

    #[test]
    fn zero_scale_random_init_is_zero() {
        let v = vocab(&["a", "b"], &["x", "y"], &["p"]);
        let m = init_model(&v, 4, InitScheme::UniformRandom(0.0), 7).unwrap();
        assert!(m.w.iter().chain(m.c.iter()).chain(m.u.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn random_init_is_deterministic_and_bounded() {
        let v = vocab(&["a", "b", "c"], &["x", "y"], &["p", "q"]);
        let a = init_model(&v, 4, InitScheme::UniformRandom(0.1), 42).unwrap();
        let b = init_model(&v, 4, InitScheme::UniformRandom(0.1), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.w.iter().all(|x| x.abs() <= 0.1));
        let c = init_model(&v, 4, InitScheme::UniformRandom(0.1), 43).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn init_rejects_degenerate_inputs() {
        let v = vocab(&["a"], &[], &[]);
        assert!(init_model(&v, 0, InitScheme::Ones, 0).is_err());
        assert!(init_model(&VocabularyMaps::default(), 3, InitScheme::Ones, 0).is_err());
    }

    #[test]
    fn validator_catches_shape_mismatch() {
        let v = vocab(&["a", "b"], &["x"], &["p"]);
        let mut m = init_model(&v, 2, InitScheme::Ones, 0).unwrap();
        m.c = Array2::zeros((2, 3));
        assert!(matches!(m.validate(&v), Err(Error::Shape(_))));
    }

    #[test]
    fn init_scheme_parses() {
        assert_eq!("ones".parse::<InitScheme>().unwrap(), InitScheme::Ones);
        assert_eq!(
            "uniform_random(0.25)".parse::<InitScheme>().unwrap(),
            InitScheme::UniformRandom(0.25)
        );
        assert_eq!("uniform(1)".parse::<InitScheme>().unwrap(), InitScheme::UniformRandom(1.0));
        assert!("gaussian".parse::<InitScheme>().is_err());
        let s = InitScheme::UniformRandom(0.1);
        assert_eq!(s.to_string().parse::<InitScheme>().unwrap(), s);
    }

    #[test]
    fn hyperparam_weights_must_be_simplex() {
        let mut h = HyperParams::default();
        h.validate().unwrap();
        h.alpha = vec![0.5, 0.6];
        assert!(h.validate().is_err());
        h.alpha = vec![1.5, -0.5];
        assert!(h.validate().is_err());
        h.alpha = vec![0.5, 0.5];
        h.validate().unwrap();
        h.eta = 0.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn masked_attribute_values_may_be_anything() {
        let assoc = ndarray::array![[1.0, f64::NAN], [2.0, 3.0]];
        let mask = ndarray::array![[true, false], [true, true]];
        let ctx = AttributeContext::new(assoc.clone(), mask).unwrap();
        assert!(ctx.unobserved_labels().is_empty());
        assert!(AttributeContext::fully_observed(assoc).is_err());
    }
}
