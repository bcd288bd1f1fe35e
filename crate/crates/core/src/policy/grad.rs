//! Reverse-mode gradients of losses that decompose over teacher-forced
//! sequences.
//!
//! Per-sequence gradients are accumulated in chunks of [`CHUNK`] sequences,
//! possibly in parallel, and the chunk sums are added in chunk order. The
//! result therefore does not depend on thread scheduling.

use rayon::prelude::*;

use crate::error::{Result, UrpError};
use crate::numeric::Real;

use super::model::Session;
use super::params::PolicyParams;
use super::prompt::Prompt;

pub const CHUNK: usize = 8;

/// Contribution of one sequence: its loss term and the derivative of that term
/// with respect to each of its target-predicting logit rows.
#[derive(Debug, Clone)]
pub struct SequenceTerm<T> {
    pub loss: f64,
    pub dlogits: Vec<T>,
    /// Objective-specific statistics summed alongside the loss.
    pub aux: [f64; 4],
}

/// A loss of the form `sum_i term_i(logits of sequence i)`.
pub trait SequenceObjective<T: Real>: Sync {
    fn num_sequences(&self) -> usize;
    fn prompt(&self, i: usize) -> &Prompt;
    fn targets(&self, i: usize) -> &[usize];
    /// `logits` holds `targets(i).len()` rows of width V; row t predicts target t.
    fn term(&self, i: usize, logits: &[T]) -> Result<SequenceTerm<T>>;
}

#[derive(Debug, Clone)]
pub struct Gradient<T> {
    pub loss: f64,
    pub grad: Vec<T>,
    pub aux: [f64; 4],
}

fn finite_check<T: Real>(loss: f64, grad: &[T]) -> Result<()> {
    if !loss.is_finite() {
        return Err(UrpError::Numeric(format!("non-finite loss {loss}")));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(UrpError::Numeric("non-finite gradient".into()));
    }
    Ok(())
}

fn accumulate<T: Real, O: SequenceObjective<T>>(
    params: &PolicyParams<T>,
    obj: &O,
    range: std::ops::Range<usize>,
    with_grad: bool,
) -> Result<Gradient<T>> {
    let v = params.config.vocab_size;
    let mut out = Gradient {
        loss: 0.0,
        grad: if with_grad { vec![T::zero(); params.data.len()] } else { Vec::new() },
        aux: [0.0; 4],
    };
    for i in range {
        let targets = obj.targets(i);
        if targets.is_empty() {
            continue;
        }
        let (session, first) = Session::teacher_forced(params, obj.prompt(i), targets)?;
        let rows: Vec<T> = (0..targets.len())
            .flat_map(|t| session.logits_row(first + t).iter().copied())
            .collect();
        let term = obj.term(i, &rows)?;
        debug_assert_eq!(term.dlogits.len(), targets.len() * v);
        out.loss += term.loss;
        for (a, b) in out.aux.iter_mut().zip(term.aux) {
            *a += b;
        }
        if with_grad {
            session.backward(first, &term.dlogits, &mut out.grad);
        }
    }
    Ok(out)
}

fn reduce<T: Real, O: SequenceObjective<T>>(params: &PolicyParams<T>, obj: &O, with_grad: bool) -> Result<Gradient<T>> {
    let n = obj.num_sequences();
    let chunks: Vec<Result<Gradient<T>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| accumulate(params, obj, c * CHUNK..((c + 1) * CHUNK).min(n), with_grad))
        .collect();
    let mut total = Gradient {
        loss: 0.0,
        grad: if with_grad { vec![T::zero(); params.data.len()] } else { Vec::new() },
        aux: [0.0; 4],
    };
    for chunk in chunks {
        let chunk = chunk?;
        total.loss += chunk.loss;
        for (a, b) in total.aux.iter_mut().zip(chunk.aux) {
            *a += b;
        }
        for (g, c) in total.grad.iter_mut().zip(&chunk.grad) {
            *g += *c;
        }
    }
    finite_check(total.loss, &total.grad)?;
    Ok(total)
}

/// Loss and exact gradient with respect to every parameter.
pub fn grad<T: Real, O: SequenceObjective<T>>(params: &PolicyParams<T>, obj: &O) -> Result<Gradient<T>> {
    reduce(params, obj, true)
}

/// Loss and aux statistics without the backward pass.
pub fn loss_only<T: Real, O: SequenceObjective<T>>(params: &PolicyParams<T>, obj: &O) -> Result<(f64, [f64; 4])> {
    let g = reduce(params, obj, false)?;
    Ok((g.loss, g.aux))
}
