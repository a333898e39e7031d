//! Evaluation of expressions files in negative-log space.
//!
//! An event `y|x` evaluates to `-ln m(y|x)`, a product to the sum of its
//! children and a sum to the stable `-ln sum exp(-t)` of its children. An
//! empty product is probability one (0 nats) and an empty sum probability
//! zero (`+inf`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::checker::{verify, Report};
use crate::formats::{
    format_real, ConditionalEvent, EventsFile, Expression, ExpressionsFile, ParametersFile,
    Product, ProductTerm, Sum, SumTerm,
};
use crate::model::{Model, ModelError};
use crate::numeric::CompensatedSum;

/// A probability stored as its negative natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NatValue(pub f64);

impl NatValue {
    pub const ONE: NatValue = NatValue(0.0);
    pub const ZERO: NatValue = NatValue(f64::INFINITY);

    pub fn from_probability(p: f64) -> Self {
        NatValue(-p.ln())
    }

    pub fn probability(self) -> f64 {
        (-self.0).exp()
    }

    pub fn nats(self) -> f64 {
        self.0
    }
}

impl fmt::Display for NatValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else {
            f.write_str(&format_real(self.0))
        }
    }
}

/// `-ln(sum_j exp(-t_j))`, shifted on the smallest term.
pub fn neglog_sum(terms: &[NatValue]) -> NatValue {
    let Some(min) = terms.iter().map(|t| t.0).reduce(f64::min) else {
        return NatValue::ZERO;
    };
    if min == f64::INFINITY {
        return NatValue::ZERO;
    }
    let mut skipped = false;
    let mut rest = CompensatedSum::new();
    for t in terms {
        if !skipped && t.0 == min {
            skipped = true;
            continue;
        }
        rest.add((min - t.0).exp());
    }
    NatValue((min - rest.value().ln_1p()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("files are incompatible ({} error(s))", .0.errors().count())]
    IncompatibleInputs(Report),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Evaluator<'a> {
    model: &'a Model,
    ln_z: HashMap<u64, f64>,
}

impl Evaluator<'_> {
    fn event(&self, e: &ConditionalEvent) -> Result<NatValue, ModelError> {
        let w = self.model.weight_with(e.symbol, &e.features)?;
        let v = self.ln_z[&e.context] - w.ln();
        Ok(NatValue(v.max(0.0)))
    }

    fn product(&self, p: &Product) -> Result<NatValue, ModelError> {
        let mut total = CompensatedSum::new();
        for t in &p.terms {
            let v = match t {
                ProductTerm::Event(e) => self.event(e)?,
                ProductTerm::Sum(s) => self.sum(s)?,
            };
            if v.0 == f64::INFINITY {
                return Ok(NatValue::ZERO);
            }
            total.add(v.0);
        }
        Ok(NatValue(total.value()))
    }

    fn sum(&self, s: &Sum) -> Result<NatValue, ModelError> {
        let values = s
            .terms
            .iter()
            .map(|t| match t {
                SumTerm::Event(e) => self.event(e),
                SumTerm::Product(p) => self.product(p),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(neglog_sum(&values))
    }

    fn expression(&self, x: &Expression) -> Result<NatValue, ModelError> {
        match x {
            Expression::Event(e) => self.event(e),
            Expression::Product(p) => self.product(p),
            Expression::Sum(s) => self.sum(s),
        }
    }
}

/// Evaluates every expression against `model`, in input order.
///
/// The model must have been built from the events file that accompanies the
/// expressions; `Z(x)` is taken from its records for context `x`.
pub fn evaluate(model: &Model, expressions: &ExpressionsFile) -> Result<Vec<NatValue>, EvalError> {
    let mut contexts = BTreeSet::new();
    for x in &expressions.expressions {
        x.for_each_event(&mut |e| {
            contexts.insert(e.context);
        });
    }
    let contexts: Vec<u64> = contexts.into_iter().collect();
    let ln_z = contexts
        .par_iter()
        .map(|&x| (x, model.partition(x).ln()))
        .collect();
    let ev = Evaluator { model, ln_z };
    let values = expressions
        .expressions
        .par_iter()
        .map(|x| ev.expression(x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(values)
}

/// Verifies the three files in evaluation mode, then evaluates.
pub fn evaluate_documents(
    params: &ParametersFile,
    events: &EventsFile,
    expressions: &ExpressionsFile,
) -> Result<(Vec<NatValue>, Report), EvalError> {
    let report = verify(Some(params), Some(events), Some(expressions)).expect("inputs supplied");
    if !report.compatible() {
        return Err(EvalError::IncompatibleInputs(report));
    }
    let model = Model::build(params, events)?;
    Ok((evaluate(&model, expressions)?, report))
}
