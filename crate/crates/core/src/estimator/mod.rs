//! Improved iterative scaling.
//!
//! Each iteration computes, for every feature `i`, the coefficients
//!
//! ```text
//! b_{i,k} = sum_{x,y : M(x,y) = k} f(x) m(y|x) g_i(x,y)
//! ```
//!
//! where `M(x,y) = n(y) + n(x,y)` is the total (marginal plus conditional)
//! activation of the pair, then solves `sum_k b_{i,k} beta_i^k = a_i` and
//! scales `alpha_i` by `beta_i`. All sums run over observed contexts and the
//! pairs listed in the events file; pairs that are not listed are handled
//! in aggregate through the marginal table, so no step enumerates the full
//! `X x Y` space.

mod newton;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::formats::EventsFile;
use crate::model::{FeatureClass, Model, Slot};
use crate::numeric::CompensatedSum;

pub use newton::{newton_update, SolveError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("the events file has zero total count")]
    EmptyCorpus,
    #[error("feature {index} is active but its target expectation is zero")]
    ZeroTarget { index: u64 },
    #[error("feature {index} has invalid target {target}")]
    InvalidTarget { index: u64, target: f64 },
}

/// Corpus statistics read off the events file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSummary {
    /// `T`, the sum of all conditional event counts.
    pub total_count: u64,
    /// `f(x) = c(x) / T` for every context with positive count.
    pub context_freq: BTreeMap<u64, f64>,
    /// Empirical expectation `f[g_i]` of every feature that occurs.
    pub targets_empirical: BTreeMap<u64, f64>,
}

/// Computes `T`, `f(x)` and the empirical feature expectations.
pub fn summarize_empirical(events: &EventsFile) -> Result<EmpiricalSummary, EstimateError> {
    let total_count = events.total_count();
    if total_count == 0 {
        return Err(EstimateError::EmptyCorpus);
    }
    let total = total_count as f64;
    let marginal: HashMap<u64, &[u64]> = events
        .marginal
        .iter()
        .map(|e| (e.symbol, e.features.as_slice()))
        .collect();

    let mut context_counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut expectations: BTreeMap<u64, CompensatedSum> = BTreeMap::new();
    for e in &events.conditional {
        if e.count == 0 {
            continue;
        }
        *context_counts.entry(e.context).or_default() += e.count;
        let weight = e.count as f64 / total;
        let marg = marginal.get(&e.symbol).copied().unwrap_or(&[]);
        for &i in e.features.iter().chain(marg) {
            expectations.entry(i).or_default().add(weight);
        }
    }
    Ok(EmpiricalSummary {
        total_count,
        context_freq: context_counts
            .into_iter()
            .map(|(x, c)| (x, c as f64 / total))
            .collect(),
        targets_empirical: expectations
            .into_iter()
            .map(|(i, s)| (i, s.value()))
            .collect(),
    })
}

/// What to do with a feature that is active but has target zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroTargetPolicy {
    /// Fail the iteration with [`EstimateError::ZeroTarget`].
    #[default]
    Reject,
    /// Drive the weight to the clamp bound `exp(-lambda_clamp)` and warn.
    Pin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Stop (and undo the last update) as soon as the codelength increases.
    pub monotonic: bool,
    pub newton_tol: f64,
    pub newton_max_steps: usize,
    /// Bound on `|ln alpha|`.
    pub lambda_clamp: f64,
    pub compute_entropy: bool,
    pub zero_targets: ZeroTargetPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            monotonic: false,
            newton_tol: 1e-12,
            newton_max_steps: 100,
            lambda_clamp: 30.0,
            compute_entropy: false,
            zero_targets: ZeroTargetPolicy::Reject,
        }
    }
}

/// Convergence figures for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub iteration: usize,
    /// Euclidean distance between model and target expectations, measured
    /// before the update.
    pub distance: f64,
    /// Euclidean norm of the applied `lambda` update.
    pub update_norm: f64,
    /// Largest `alpha` after the update.
    pub max_alpha: f64,
    /// Corpus codelength in nats after the update.
    pub codelength: f64,
    /// Conditional entropy `H(m|f)` in nats after the update, when requested.
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The feature is never active on an observed context; its weight is left alone.
    InactiveFeature {
        index: u64,
    },
    NonConvergence {
        index: u64,
        steps: usize,
    },
    /// The update hit the `|ln alpha|` bound.
    Clamped {
        index: u64,
    },
    ZeroTargetPinned {
        index: u64,
    },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::InactiveFeature { index } => {
                write!(f, "feature {index} is never active on an observed context")
            }
            Warning::NonConvergence { index, steps } => {
                write!(
                    f,
                    "update of feature {index} unresolved after {steps} Newton steps"
                )
            }
            Warning::Clamped { index } => write!(f, "weight of feature {index} clamped"),
            Warning::ZeroTargetPinned { index } => write!(
                f,
                "feature {index} has target 0; its weight is pinned at the lower bound"
            ),
        }
    }
}

/// Multiplicative update applied to one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureUpdate {
    pub index: u64,
    /// Root of the update equation, before clamping.
    pub beta: f64,
    /// `ln` of the factor actually applied.
    pub applied_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub diagnostics: Diagnostics,
    pub updates: Vec<FeatureUpdate>,
    pub warnings: Vec<Warning>,
}

/// Per-feature update polynomials `(k, b_k)`, indexed by slot.
#[derive(Debug, Clone)]
pub struct Coefficients {
    per_slot: Vec<BTreeMap<u32, CompensatedSum>>,
}

impl Coefficients {
    pub fn polynomial(&self, slot: Slot) -> Vec<(u32, f64)> {
        self.per_slot[slot]
            .iter()
            .map(|(&k, s)| (k, s.value().max(0.0)))
            .collect()
    }

    /// `m[g_i] = sum_k b_{i,k}`.
    pub fn expectation(&self, slot: Slot) -> f64 {
        self.per_slot[slot]
            .values()
            .map(|s| s.value().max(0.0))
            .collect::<CompensatedSum>()
            .value()
    }

    fn is_active(&self, slot: Slot) -> bool {
        self.per_slot[slot]
            .iter()
            .any(|(&k, s)| k >= 1 && s.value() > 0.0)
    }
}

struct ContextPass {
    freq_over_z: f64,
    /// `f(x) r(y|x) / Z(x)` for each listed pair, in entry order.
    pair_mass: Vec<f64>,
}

/// Builds the update coefficients of every feature under the current model.
///
/// Per-context work runs in parallel; the reduction is sequential in context
/// order, so results do not depend on the number of worker threads.
pub fn coefficients(model: &Model, summary: &EmpiricalSummary) -> Coefficients {
    let observed: Vec<(u64, f64)> = summary.context_freq.iter().map(|(&x, &f)| (x, f)).collect();
    let passes: Vec<ContextPass> = observed
        .par_iter()
        .map(|&(x, f)| {
            let z = model.partition(x);
            let pair_mass = model
                .context_entries(x)
                .iter()
                .map(|p| f * model.marginal_weight(p.symbol) * model.product_of(&p.slots) / z)
                .collect();
            ContextPass {
                freq_over_z: f / z,
                pair_mass,
            }
        })
        .collect();

    let mut per_slot: Vec<BTreeMap<u32, CompensatedSum>> =
        vec![BTreeMap::new(); model.features().len()];
    let mut total_freq_over_z = CompensatedSum::new();
    let mut listed_freq_over_z: HashMap<u64, CompensatedSum> = HashMap::new();

    let marginal: HashMap<u64, &[Slot]> = model
        .marginal_entries()
        .map(|(y, e)| (y, e.slots.as_slice()))
        .collect();

    for (&(x, _), pass) in observed.iter().zip(&passes) {
        total_freq_over_z.add(pass.freq_over_z);
        for (pair, &mass) in model.context_entries(x).iter().zip(&pass.pair_mass) {
            let marg_slots = marginal.get(&pair.symbol).copied().unwrap_or(&[]);
            if pair.slots.is_empty() && marg_slots.is_empty() {
                continue;
            }
            let k = (marg_slots.len() + pair.slots.len()) as u32;
            for &slot in pair.slots.iter().chain(marg_slots) {
                per_slot[slot].entry(k).or_default().add(mass);
            }
            if !marg_slots.is_empty() {
                listed_freq_over_z
                    .entry(pair.symbol)
                    .or_default()
                    .add(pass.freq_over_z);
            }
        }
    }

    // Marginal features on pairs that are not listed: there M(x,y) = n(y)
    // and r(y|x) = r(y).
    let total = total_freq_over_z.value();
    for (y, entry) in model.marginal_entries() {
        if entry.slots.is_empty() {
            continue;
        }
        let listed = listed_freq_over_z.get(&y).map_or(0.0, |s| s.value());
        let unlisted = (total - listed).max(0.0);
        if unlisted == 0.0 {
            continue;
        }
        let mass = entry.weight * unlisted;
        let k = entry.slots.len() as u32;
        for &slot in &entry.slots {
            per_slot[slot].entry(k).or_default().add(mass);
        }
    }
    Coefficients { per_slot }
}

/// Model feature expectations `m[g_i] = sum_x f(x) sum_y m(y|x) g_i(x,y)`.
pub fn model_expectations(model: &Model, summary: &EmpiricalSummary) -> BTreeMap<u64, f64> {
    let coeffs = coefficients(model, summary);
    model
        .features()
        .iter()
        .enumerate()
        .map(|(slot, f)| (f.index, coeffs.expectation(slot)))
        .collect()
}

/// Corpus codelength `-sum c(x,y) ln m(y|x)` in nats.
pub fn codelength(model: &Model) -> f64 {
    let per_context: Vec<f64> = model
        .contexts()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(x, entries)| {
            if entries.iter().all(|p| p.count == 0) {
                return 0.0;
            }
            let ln_z = model.partition(x).ln();
            entries
                .iter()
                .filter(|p| p.count > 0)
                .map(|p| {
                    let r = model.marginal_weight(p.symbol) * model.product_of(&p.slots);
                    p.count as f64 * (ln_z - r.ln())
                })
                .collect::<CompensatedSum>()
                .value()
        })
        .collect();
    per_context.into_iter().collect::<CompensatedSum>().value()
}

/// Conditional entropy `H(m|f) = -sum_x f(x) sum_y m(y|x) ln m(y|x)` in nats.
pub fn conditional_entropy(model: &Model, summary: &EmpiricalSummary) -> f64 {
    let terms: Vec<f64> = summary
        .context_freq
        .iter()
        .map(|(&x, &f)| (x, f))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(x, f)| f * model.context_entropy(x))
        .collect();
    terms.into_iter().collect::<CompensatedSum>().value()
}

fn max_alpha(model: &Model) -> f64 {
    model
        .features()
        .iter()
        .map(|f| f.alpha)
        .fold(None, |acc: Option<f64>, a| {
            Some(acc.map_or(a, |m| m.max(a)))
        })
        .unwrap_or(1.0)
}

/// One improved-iterative-scaling iteration. On error the model is unchanged.
pub fn iis_step(
    model: &mut Model,
    summary: &EmpiricalSummary,
    config: &TrainConfig,
    iteration: usize,
) -> Result<StepReport, EstimateError> {
    let coeffs = coefficients(model, summary);
    let n = model.features().len();

    let mut distance = CompensatedSum::new();
    for (slot, f) in model.features().iter().enumerate() {
        if !(f.target.is_finite() && f.target >= 0.0) {
            return Err(EstimateError::InvalidTarget {
                index: f.index,
                target: f.target,
            });
        }
        let d = coeffs.expectation(slot) - f.target;
        distance.add(d * d);
        if f.target == 0.0
            && coeffs.is_active(slot)
            && config.zero_targets == ZeroTargetPolicy::Reject
        {
            return Err(EstimateError::ZeroTarget { index: f.index });
        }
    }

    let clamp = config.lambda_clamp;
    let mut warnings = Vec::new();
    let mut updates = Vec::with_capacity(n);
    let mut new_alphas = Vec::with_capacity(n);
    for (slot, f) in model.features().iter().enumerate() {
        let lambda = f.alpha.ln();
        if !coeffs.is_active(slot) {
            warnings.push(Warning::InactiveFeature { index: f.index });
            new_alphas.push(f.alpha);
            continue;
        }
        let (beta, proposed) = if f.target == 0.0 {
            warnings.push(Warning::ZeroTargetPinned { index: f.index });
            (0.0, -clamp)
        } else {
            let poly = coeffs.polynomial(slot);
            let beta =
                match newton_update(&poly, f.target, config.newton_tol, config.newton_max_steps) {
                    Ok(beta) => beta,
                    Err(SolveError::NonConvergence { estimate, steps }) => {
                        warnings.push(Warning::NonConvergence {
                            index: f.index,
                            steps,
                        });
                        estimate
                    }
                    // `is_active` and a positive target rule out the other cases
                    Err(_) => 1.0,
                };
            (beta, lambda + beta.ln())
        };
        let bounded = proposed.clamp(-clamp, clamp);
        if bounded != proposed && f.target != 0.0 {
            warnings.push(Warning::Clamped { index: f.index });
        }
        // keep alpha exactly where it was for a unit update
        let alpha = if beta == 1.0 && bounded == proposed {
            f.alpha
        } else {
            bounded.exp()
        };
        updates.push(FeatureUpdate {
            index: f.index,
            beta,
            applied_log: alpha.ln() - lambda,
        });
        new_alphas.push(alpha);
    }

    for (slot, alpha) in new_alphas.into_iter().enumerate() {
        model.set_alpha_slot(slot, alpha);
    }
    model.refresh();

    let update_norm = updates
        .iter()
        .map(|u| u.applied_log * u.applied_log)
        .collect::<CompensatedSum>()
        .value()
        .sqrt();
    let diagnostics = Diagnostics {
        iteration,
        distance: distance.value().sqrt(),
        update_norm,
        max_alpha: max_alpha(model),
        codelength: codelength(model),
        entropy: config
            .compute_entropy
            .then(|| conditional_entropy(model, summary)),
    };
    Ok(StepReport {
        diagnostics,
        updates,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Diagnostics of every retained iteration.
    pub history: Vec<Diagnostics>,
    /// Codelength of the starting model.
    pub initial_codelength: f64,
    /// Set when the monotonic option stopped estimation early.
    pub stopped_early: bool,
    /// Distinct warnings raised across all iterations, first occurrence order.
    pub warnings: Vec<Warning>,
}

/// Runs up to `config.iterations` scaling iterations.
pub fn train(
    model: &mut Model,
    summary: &EmpiricalSummary,
    config: &TrainConfig,
) -> Result<TrainReport, EstimateError> {
    train_with(model, summary, config, |_| {})
}

/// Like [`train`], calling `on_iteration` with each retained row as it is
/// produced.
pub fn train_with(
    model: &mut Model,
    summary: &EmpiricalSummary,
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&Diagnostics),
) -> Result<TrainReport, EstimateError> {
    let initial_codelength = codelength(model);
    let mut previous = initial_codelength;
    let mut history = Vec::new();
    let mut warnings: Vec<Warning> = Vec::new();
    let mut stopped_early = false;

    for iteration in 1..=config.iterations {
        let saved: Vec<f64> = model.features().iter().map(|f| f.alpha).collect();
        let report = iis_step(model, summary, config, iteration)?;
        for w in report.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let current = report.diagnostics.codelength;
        // ignore increases at the level of rounding noise
        let slack = 4.0 * f64::EPSILON * previous.abs();
        if config.monotonic && current > previous + slack {
            for (slot, alpha) in saved.into_iter().enumerate() {
                model.set_alpha_slot(slot, alpha);
            }
            model.refresh();
            stopped_early = true;
            break;
        }
        on_iteration(&report.diagnostics);
        history.push(report.diagnostics);
        previous = current;
    }
    Ok(TrainReport {
        history,
        initial_codelength,
        stopped_early,
        warnings,
    })
}

/// Whether `index` names a marginal feature of `model`.
pub fn is_marginal(model: &Model, index: u64) -> bool {
    model
        .slot(index)
        .is_some_and(|s| model.features()[s].class == FeatureClass::Marginal)
}
