//! Alternating minimization of the joint objective
//!
//! ```text
//! EMF(D, CᵀW) + λ1/2 ‖I ⊙ (A - WᵀU)‖²_F + λ2 ‖U‖₁ + λ3/2 (‖W‖²_F + ‖U‖²_F)
//! ```
//!
//! Each outer iteration takes `inner_steps_c` full-batch gradient steps on
//! `C`, `inner_steps_w` on `W`, then re-solves `U` with FISTA. The
//! multi-context variant weights each relational term by `α_i` and each
//! descriptive term by `λ1·β_j`.

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis, Zip};

use crate::datamodel::{
    init_matrices, init_model, AttributeContext, CooccurrenceMatrix, EmbeddingModel, HyperParams, NegativeBoundMatrix,
    StepRule, VocabularyMaps,
};
use crate::descriptive::{descriptive_objective, fista_solve_u, grad_w_descriptive, FistaOutcome, FistaParams};
use crate::error::{Error, Result};
use crate::ingest::compute_negative_bound;
use crate::relational::{emf_objective, grad_c, grad_w_relational};

/// Objective above this multiple of its starting value counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub emf: f64,
    pub descriptive: f64,
    /// `λ2 ‖U‖₁`
    pub l1: f64,
    /// `λ3/2 ‖W‖²`
    pub l2_w: f64,
    /// `λ3/2 ‖U‖²`
    pub l2_u: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.emf + self.descriptive + self.l1 + self.l2_w + self.l2_u
    }
}

fn sq_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn l1_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

pub fn objective_terms(
    d: &CooccurrenceMatrix,
    q: &NegativeBoundMatrix,
    ctx: &AttributeContext,
    model: &EmbeddingModel,
    hyper: &HyperParams,
) -> Result<ObjectiveTerms> {
    Ok(ObjectiveTerms {
        emf: emf_objective(d, q, &model.c, &model.w)?,
        descriptive: descriptive_objective(ctx, &model.w, &model.u, hyper.lambda1)?,
        l1: hyper.lambda2 * l1_norm(&model.u),
        l2_w: 0.5 * hyper.lambda3 * sq_norm(&model.w),
        l2_u: 0.5 * hyper.lambda3 * sq_norm(&model.u),
    })
}

pub fn full_objective(
    d: &CooccurrenceMatrix,
    q: &NegativeBoundMatrix,
    ctx: &AttributeContext,
    model: &EmbeddingModel,
    hyper: &HyperParams,
) -> Result<f64> {
    Ok(objective_terms(d, q, ctx, model, hyper)?.total())
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// 0 for the initial point.
    pub iteration: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub fista_iterations: usize,
    pub duration: Duration,
}

/// One record for the initial point plus one per completed outer iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainingHistory {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn initial_objective(&self) -> Option<f64> {
        self.records.first().map(|r| r.objective)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("iteration\tobjective\temf\tdescriptive\tl1\tl2_w\tl2_u\tfista_iterations\tseconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                r.iteration,
                r.objective,
                r.terms.emf,
                r.terms.descriptive,
                r.terms.l1,
                r.terms.l2_w,
                r.terms.l2_u,
                r.fista_iterations,
                r.duration.as_secs_f64()
            );
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    fn push(&mut self, terms: ObjectiveTerms, fista_iterations: usize, duration: Duration) -> Result<()> {
        let iteration = self.records.len();
        let objective = terms.total();
        if let Some(initial) = self.initial_objective() {
            if !objective.is_finite() || (initial > 0.0 && objective > DIVERGENCE_FACTOR * initial) {
                return Err(Error::Diverged { iteration, objective });
            }
        } else if !objective.is_finite() {
            return Err(Error::NonFinite("objective at the initial point".into()));
        }
        self.records.push(IterationRecord {
            iteration,
            objective,
            terms,
            fista_iterations,
            duration,
        });
        Ok(())
    }
}

const CURVATURE_FLOOR: f64 = 1e-12;

/// Squared norm of every column.
fn column_sq_norms(m: &Array2<f64>) -> Array1<f64> {
    m.map_axis(Axis(0), |col| col.dot(&col))
}

/// Curvature bound per context column of `C` at fixed `W`:
/// `1/4 Σ_w Q[c, w] ‖w_w‖²`, since `σ' <= 1/4`.
fn context_curvature(q: &NegativeBoundMatrix, w: &Array2<f64>) -> Array1<f64> {
    q.values().dot(&column_sq_norms(w)) * 0.25
}

/// Curvature bound per label column of `W` at fixed `C`s and `U`s:
/// weighted relational bounds, plus `coef · Σ_observed ‖u_a‖²` per
/// descriptive context, plus `λ3`.
fn label_curvature(
    relational: &[(f64, &NegativeBoundMatrix, &Array2<f64>)],
    descriptive: &[(f64, &AttributeContext, &Array2<f64>)],
    lambda3: f64,
    labels: usize,
) -> Array1<f64> {
    let mut bound = Array1::zeros(labels);
    for &(weight, q, c) in relational {
        let rel = q.values().t().dot(&column_sq_norms(c)) * 0.25;
        bound.scaled_add(weight, &rel);
    }
    for &(coef, ctx, u) in descriptive {
        let unorm = column_sq_norms(u);
        let mask = ctx.mask().mapv(|m| if m { 1.0 } else { 0.0 });
        bound.scaled_add(coef, &mask.dot(&unorm));
    }
    bound + lambda3
}

/// `m -= step_j · g_j` column by column with `step_j = eta / L_j`.
fn scaled_column_step(m: &mut Array2<f64>, grad: &Array2<f64>, eta: f64, curvature: &Array1<f64>) {
    Zip::from(m.columns_mut())
        .and(grad.columns())
        .and(curvature)
        .for_each(|mut col, g, &l| col.scaled_add(-eta / l.max(CURVATURE_FLOOR), &g));
}

fn check_finite(iteration: usize, mats: &[&Array2<f64>]) -> Result<()> {
    if mats.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            iteration,
            objective: f64::NAN,
        });
    }
    Ok(())
}

/// Trains from the initialization described by `hyper`.
pub fn train(
    d: &CooccurrenceMatrix,
    ctx: &AttributeContext,
    hyper: &HyperParams,
    vocab: &VocabularyMaps,
) -> Result<(EmbeddingModel, TrainingHistory)> {
    hyper.validate()?;
    let model = init_model(vocab, hyper.dim, hyper.init, hyper.seed)?;
    model.validate(vocab)?;
    train_from(model, d, ctx, hyper)
}

/// Trains starting from `model`.
pub fn train_from(
    mut model: EmbeddingModel,
    d: &CooccurrenceMatrix,
    ctx: &AttributeContext,
    hyper: &HyperParams,
) -> Result<(EmbeddingModel, TrainingHistory)> {
    hyper.validate()?;
    if d.num_labels() != model.w.ncols() || d.num_contexts() != model.c.ncols() {
        return Err(Error::shape(format!(
            "D is {:?} but the model has {} contexts and {} labels",
            d.values().dim(),
            model.c.ncols(),
            model.w.ncols()
        )));
    }
    if ctx.num_labels() != model.w.ncols() || ctx.num_attributes() != model.u.ncols() {
        return Err(Error::shape(format!(
            "A is {:?} but the model has {} labels and {} attributes",
            ctx.assoc().dim(),
            model.w.ncols(),
            model.u.ncols()
        )));
    }
    let q = compute_negative_bound(d, hyper.k);
    let fista = FistaParams::from(hyper);
    let eta = hyper.eta;

    let mut history = TrainingHistory::default();
    history.push(objective_terms(d, &q, ctx, &model, hyper)?, 0, Duration::ZERO)?;

    for it in 1..=hyper.outer_iters {
        let start = Instant::now();
        for _ in 0..hyper.inner_steps_c {
            let g = grad_c(d, &q, &model.c, &model.w)?;
            match hyper.step_rule {
                StepRule::Fixed => model.c.scaled_add(-eta, &g),
                StepRule::Lipschitz => {
                    let l = context_curvature(&q, &model.w);
                    scaled_column_step(&mut model.c, &g, eta, &l);
                }
            }
        }
        for _ in 0..hyper.inner_steps_w {
            let mut g = grad_w_relational(d, &q, &model.c, &model.w)?;
            g += &grad_w_descriptive(ctx, &model.w, &model.u, hyper.lambda1)?;
            g.scaled_add(hyper.lambda3, &model.w);
            match hyper.step_rule {
                StepRule::Fixed => model.w.scaled_add(-eta, &g),
                StepRule::Lipschitz => {
                    let l = label_curvature(
                        &[(1.0, &q, &model.c)],
                        &[(hyper.lambda1, ctx, &model.u)],
                        hyper.lambda3,
                        model.w.ncols(),
                    );
                    scaled_column_step(&mut model.w, &g, eta, &l);
                }
            }
        }
        check_finite(it, &[&model.c, &model.w])?;
        let out = fista_solve_u(ctx, &model.w, &model.u, &fista)?;
        model.u = out.u;
        history.push(objective_terms(d, &q, ctx, &model, hyper)?, out.iterations, start.elapsed())?;
    }
    Ok((model, history))
}

/// Shared label embedding with one context embedding per relational
/// context and one attribute embedding per descriptive context.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiContextModel {
    pub w: Array2<f64>,
    pub contexts: Vec<Array2<f64>>,
    pub descriptions: Vec<Array2<f64>>,
}

impl MultiContextModel {
    /// Draws `W`, each `C_i`, then each `U_j` from one generator, so a
    /// single-context model matches [`init_model`] bitwise.
    pub fn init(
        dim: usize,
        labels: usize,
        context_sizes: &[usize],
        attribute_sizes: &[usize],
        hyper: &HyperParams,
    ) -> Result<Self> {
        if labels == 0 {
            return Err(Error::invalid("label vocabulary is empty"));
        }
        let mut cols = vec![labels];
        cols.extend_from_slice(context_sizes);
        cols.extend_from_slice(attribute_sizes);
        let mut mats = init_matrices(dim, &cols, hyper.init, hyper.seed)?;
        let descriptions = mats.split_off(1 + context_sizes.len());
        let contexts = mats.split_off(1);
        Ok(MultiContextModel {
            w: mats.pop().unwrap(),
            contexts,
            descriptions,
        })
    }

    /// Attribute embeddings side by side (dim × Σ m_j).
    pub fn concatenated_descriptions(&self) -> Array2<f64> {
        let views: Vec<_> = self.descriptions.iter().map(|u| u.view()).collect();
        if views.is_empty() {
            return Array2::zeros((self.w.nrows(), 0));
        }
        ndarray::concatenate(ndarray::Axis(1), &views).expect("descriptions share the embedding dimension")
    }
}

fn descriptive_params(hyper: &HyperParams, beta: f64) -> FistaParams {
    FistaParams {
        lambda1: hyper.lambda1 * beta,
        ..FistaParams::from(hyper)
    }
}

/// Weighted objective terms of the multi-context model.
pub fn generalized_objective_terms(
    ds: &[CooccurrenceMatrix],
    qs: &[NegativeBoundMatrix],
    attrs: &[AttributeContext],
    model: &MultiContextModel,
    hyper: &HyperParams,
) -> Result<ObjectiveTerms> {
    let mut emf = 0.0;
    for (i, (d, q)) in ds.iter().zip(qs).enumerate() {
        emf += hyper.alpha[i] * emf_objective(d, q, &model.contexts[i], &model.w)?;
    }
    let mut descriptive = 0.0;
    let (mut l1, mut sq_u) = (0.0, 0.0);
    for (j, ctx) in attrs.iter().enumerate() {
        let u = &model.descriptions[j];
        descriptive += descriptive_objective(ctx, &model.w, u, hyper.lambda1 * hyper.beta[j])?;
        l1 += l1_norm(u);
        sq_u += sq_norm(u);
    }
    Ok(ObjectiveTerms {
        emf,
        descriptive,
        l1: hyper.lambda2 * l1,
        l2_w: 0.5 * hyper.lambda3 * sq_norm(&model.w),
        l2_u: 0.5 * hyper.lambda3 * sq_u,
    })
}

/// Independent FISTA solve for every attribute embedding at fixed `W`.
pub fn solve_descriptions(
    attrs: &[AttributeContext],
    w: &Array2<f64>,
    descriptions: &[Array2<f64>],
    hyper: &HyperParams,
) -> Result<Vec<FistaOutcome>> {
    attrs
        .iter()
        .zip(descriptions)
        .enumerate()
        .map(|(j, (ctx, u))| fista_solve_u(ctx, w, u, &descriptive_params(hyper, hyper.beta[j])))
        .collect()
}

pub fn train_generalized(
    ds: &[CooccurrenceMatrix],
    attrs: &[AttributeContext],
    hyper: &HyperParams,
) -> Result<(MultiContextModel, TrainingHistory)> {
    hyper.validate()?;
    hyper.validate_weights(ds.len(), attrs.len())?;
    let labels = ds
        .first()
        .map(CooccurrenceMatrix::num_labels)
        .ok_or_else(|| Error::invalid("at least one relational context is required"))?;
    let cs: Vec<usize> = ds.iter().map(CooccurrenceMatrix::num_contexts).collect();
    let ms: Vec<usize> = attrs.iter().map(AttributeContext::num_attributes).collect();
    let model = MultiContextModel::init(hyper.dim, labels, &cs, &ms, hyper)?;
    train_generalized_from(model, ds, attrs, hyper)
}

/// Multi-context training from a given starting point.
///
/// `C_i` steps follow the gradient of its own unweighted term: the blocks
/// are independent given `W`, so `α_i` only scales how much context `i`
/// pulls on `W`.
pub fn train_generalized_from(
    mut model: MultiContextModel,
    ds: &[CooccurrenceMatrix],
    attrs: &[AttributeContext],
    hyper: &HyperParams,
) -> Result<(MultiContextModel, TrainingHistory)> {
    hyper.validate()?;
    hyper.validate_weights(ds.len(), attrs.len())?;
    let labels = model.w.ncols();
    if model.contexts.len() != ds.len() || model.descriptions.len() != attrs.len() {
        return Err(Error::shape("model and context lists differ in length"));
    }
    for (i, (d, c)) in ds.iter().zip(&model.contexts).enumerate() {
        if d.num_labels() != labels || d.num_contexts() != c.ncols() || c.nrows() != model.w.nrows() {
            return Err(Error::shape(format!("relational context {i} does not match the model")));
        }
    }
    for (j, (a, u)) in attrs.iter().zip(&model.descriptions).enumerate() {
        if a.num_labels() != labels || a.num_attributes() != u.ncols() || u.nrows() != model.w.nrows() {
            return Err(Error::shape(format!("descriptive context {j} does not match the model")));
        }
    }

    let qs: Vec<NegativeBoundMatrix> = ds.iter().map(|d| compute_negative_bound(d, hyper.k)).collect();
    let eta = hyper.eta;
    let mut history = TrainingHistory::default();
    history.push(generalized_objective_terms(ds, &qs, attrs, &model, hyper)?, 0, Duration::ZERO)?;

    for it in 1..=hyper.outer_iters {
        let start = Instant::now();
        for (i, (d, q)) in ds.iter().zip(&qs).enumerate() {
            for _ in 0..hyper.inner_steps_c {
                let g = grad_c(d, q, &model.contexts[i], &model.w)?;
                match hyper.step_rule {
                    StepRule::Fixed => model.contexts[i].scaled_add(-eta, &g),
                    StepRule::Lipschitz => {
                        let l = context_curvature(q, &model.w);
                        scaled_column_step(&mut model.contexts[i], &g, eta, &l);
                    }
                }
            }
        }
        for _ in 0..hyper.inner_steps_w {
            let mut g = grad_w_relational(&ds[0], &qs[0], &model.contexts[0], &model.w)? * hyper.alpha[0];
            for i in 1..ds.len() {
                let gi = grad_w_relational(&ds[i], &qs[i], &model.contexts[i], &model.w)?;
                g.scaled_add(hyper.alpha[i], &gi);
            }
            for (j, ctx) in attrs.iter().enumerate() {
                g += &grad_w_descriptive(ctx, &model.w, &model.descriptions[j], hyper.lambda1 * hyper.beta[j])?;
            }
            g.scaled_add(hyper.lambda3, &model.w);
            match hyper.step_rule {
                StepRule::Fixed => model.w.scaled_add(-eta, &g),
                StepRule::Lipschitz => {
                    let rel: Vec<_> = qs
                        .iter()
                        .zip(&model.contexts)
                        .zip(&hyper.alpha)
                        .map(|((q, c), &a)| (a, q, c))
                        .collect();
                    let desc: Vec<_> = attrs
                        .iter()
                        .zip(&model.descriptions)
                        .zip(&hyper.beta)
                        .map(|((ctx, u), &b)| (hyper.lambda1 * b, ctx, u))
                        .collect();
                    let l = label_curvature(&rel, &desc, hyper.lambda3, labels);
                    scaled_column_step(&mut model.w, &g, eta, &l);
                }
            }
        }
        let mut all: Vec<&Array2<f64>> = model.contexts.iter().collect();
        all.push(&model.w);
        check_finite(it, &all)?;

        let outcomes = solve_descriptions(attrs, &model.w, &model.descriptions, hyper)?;
        let mut fista_iterations = 0;
        for (u, out) in model.descriptions.iter_mut().zip(outcomes) {
            fista_iterations += out.iterations;
            *u = out.u;
        }
        history.push(
            generalized_objective_terms(ds, &qs, attrs, &model, hyper)?,
            fista_iterations,
            start.elapsed(),
        )?;
    }
    Ok((model, history))
}
