//! The conditional exponential model `m(y|x) = r(y|x) / Z(x)`.
//!
//! Features are split into marginal ones (activation depends on `y` only) and
//! conditional ones. Writing `r(y)` for the product of marginal weights on
//! `y`, the partition function is evaluated as
//!
//! ```text
//! Z(x) = Z_marg + sum_{y in Y_x+} (r(y|x) - r(y)),    Z_marg = sum_{y in Y} r(y)
//! ```
//!
//! where `Y_x+` holds the symbols listed for context `x` in the events file.
//! `Z_marg` is cached, so each `Z(x)` costs `O(|Y_x+|)` rather than `O(|Y|)`.
//! When the listed symbols carry nearly all of `Z_marg` the difference is
//! cancellation-prone, and the unlisted symbols are summed directly.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::formats::{EventsFile, Parameter, ParametersFile};
use crate::numeric::{neg_p_ln_p, CompensatedSum};

/// When listed symbols hold all but this fraction of `Z_marg`, the
/// subtraction `Z_marg - sum r(y)` loses too many digits and the unlisted
/// remainder is summed directly instead.
const CANCELLATION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("feature {index} is used by the events file but has no parameter")]
    UnknownFeature { index: u64 },
    #[error("{class} feature {index} is listed in a {listed_in} event")]
    ClassMismatch {
        index: u64,
        class: FeatureClass,
        listed_in: FeatureClass,
    },
    #[error("symbol {symbol} is outside the alphabet of size {alphabet_size}")]
    SymbolOutOfRange { symbol: u64, alphabet_size: u64 },
    #[error("event {0} appears more than once")]
    DuplicateEvent(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureClass {
    Marginal,
    Conditional,
}

impl std::fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureClass::Marginal => "marginal",
            FeatureClass::Conditional => "conditional",
        })
    }
}

/// Dense position of a feature inside a [`Model`].
pub type Slot = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub index: u64,
    pub alpha: f64,
    pub target: f64,
    pub class: FeatureClass,
}

/// Marginal features active on one symbol; slots repeat for n-ary values.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MarginalEntry {
    pub slots: Vec<Slot>,
    pub weight: f64,
}

/// One listed pair `y|x` of the events file.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub symbol: u64,
    pub count: u64,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
pub struct Model {
    alphabet_size: u64,
    features: Vec<Feature>,
    slot_of: HashMap<u64, Slot>,
    marginal: BTreeMap<u64, MarginalEntry>,
    contexts: BTreeMap<u64, Vec<PairEntry>>,
    marginal_mass: f64,
    /// `r(y)` values of symbols with marginal activations, with multiplicities.
    marginal_groups: Vec<(f64, u64)>,
}

impl Model {
    /// Builds a model from a parameters file and the events file describing
    /// feature behavior.
    pub fn build(params: &ParametersFile, events: &EventsFile) -> Result<Self, ModelError> {
        if params.alphabet_size == 0 {
            return Err(ModelError::InvalidParameters(
                "alphabet size is zero".into(),
            ));
        }
        let mut features = Vec::with_capacity(params.len());
        let mut slot_of = HashMap::with_capacity(params.len());
        let blocks: [(&[Parameter], FeatureClass); 2] = [
            (&params.marginal, FeatureClass::Marginal),
            (&params.conditional, FeatureClass::Conditional),
        ];
        for (block, class) in blocks {
            for p in block {
                if p.index == 0 {
                    return Err(ModelError::InvalidParameters("index 0 is reserved".into()));
                }
                if !(p.alpha.is_finite() && p.alpha > 0.0) {
                    return Err(ModelError::InvalidParameters(format!(
                        "alpha of feature {} is {}",
                        p.index, p.alpha
                    )));
                }
                if slot_of.insert(p.index, features.len()).is_some() {
                    return Err(ModelError::InvalidParameters(format!(
                        "feature {} appears twice",
                        p.index
                    )));
                }
                features.push(Feature {
                    index: p.index,
                    alpha: p.alpha,
                    target: p.target,
                    class,
                });
            }
        }

        let alphabet_size = params.alphabet_size;
        let check_symbol = |symbol: u64| {
            if symbol >= alphabet_size {
                Err(ModelError::SymbolOutOfRange {
                    symbol,
                    alphabet_size,
                })
            } else {
                Ok(())
            }
        };
        let resolve = |indices: &[u64], expected: FeatureClass| -> Result<Vec<Slot>, ModelError> {
            indices
                .iter()
                .map(|&index| {
                    let slot = *slot_of
                        .get(&index)
                        .ok_or(ModelError::UnknownFeature { index })?;
                    let class = features[slot].class;
                    if class != expected {
                        return Err(ModelError::ClassMismatch {
                            index,
                            class,
                            listed_in: expected,
                        });
                    }
                    Ok(slot)
                })
                .collect()
        };

        let mut marginal = BTreeMap::new();
        for e in &events.marginal {
            check_symbol(e.symbol)?;
            let slots = resolve(&e.features, FeatureClass::Marginal)?;
            let entry = MarginalEntry { slots, weight: 1.0 };
            if marginal.insert(e.symbol, entry).is_some() {
                return Err(ModelError::DuplicateEvent(format!("marginal {}", e.symbol)));
            }
        }

        let mut contexts: BTreeMap<u64, Vec<PairEntry>> = BTreeMap::new();
        for e in &events.conditional {
            check_symbol(e.symbol)?;
            let slots = resolve(&e.features, FeatureClass::Conditional)?;
            contexts.entry(e.context).or_default().push(PairEntry {
                symbol: e.symbol,
                count: e.count,
                slots,
            });
        }
        for (context, entries) in contexts.iter_mut() {
            entries.sort_by_key(|p| p.symbol);
            if let Some(w) = entries.windows(2).find(|w| w[0].symbol == w[1].symbol) {
                return Err(ModelError::DuplicateEvent(format!(
                    "conditional {}|{}",
                    w[0].symbol, context
                )));
            }
        }

        let mut model = Self {
            alphabet_size,
            features,
            slot_of,
            marginal,
            contexts,
            marginal_mass: alphabet_size as f64,
            marginal_groups: Vec::new(),
        };
        model.refresh();
        Ok(model)
    }

    /// Recomputes the cached marginal weights `r(y)` and `Z_marg` after
    /// alpha updates.
    pub fn refresh(&mut self) {
        let features = &self.features;
        let mut mass = CompensatedSum::new();
        let mut groups: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
        for entry in self.marginal.values_mut() {
            entry.weight = entry.slots.iter().map(|&s| features[s].alpha).product();
            mass.add(entry.weight);
            groups
                .entry(entry.weight.to_bits())
                .or_insert((entry.weight, 0))
                .1 += 1;
        }
        let unweighted = self.alphabet_size - self.marginal.len() as u64;
        mass.add(unweighted as f64);
        self.marginal_mass = mass.value();
        self.marginal_groups = groups.into_values().collect();
    }

    pub fn alphabet_size(&self) -> u64 {
        self.alphabet_size
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn slot(&self, index: u64) -> Option<Slot> {
        self.slot_of.get(&index).copied()
    }

    pub fn alpha(&self, index: u64) -> Option<f64> {
        self.slot(index).map(|s| self.features[s].alpha)
    }

    /// Sets `alpha_i`. Cached marginal quantities are stale until
    /// [`Model::refresh`] is called.
    pub fn set_alpha(&mut self, index: u64, alpha: f64) -> Option<f64> {
        let slot = self.slot(index)?;
        Some(std::mem::replace(&mut self.features[slot].alpha, alpha))
    }

    pub(crate) fn set_alpha_slot(&mut self, slot: Slot, alpha: f64) {
        self.features[slot].alpha = alpha;
    }

    /// Cached `Z_marg = sum_y r(y)`.
    pub fn marginal_mass(&self) -> f64 {
        self.marginal_mass
    }

    /// Contexts with listed conditional events, ascending.
    pub fn contexts(&self) -> impl Iterator<Item = (u64, &[PairEntry])> {
        self.contexts.iter().map(|(&x, v)| (x, v.as_slice()))
    }

    pub fn context_entries(&self, context: u64) -> &[PairEntry] {
        self.contexts.get(&context).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn marginal_entries(&self) -> impl Iterator<Item = (u64, &MarginalEntry)> {
        self.marginal.iter().map(|(&y, e)| (y, e))
    }

    /// Marginal activation `n(y)`.
    pub fn marginal_activation(&self, symbol: u64) -> usize {
        self.marginal.get(&symbol).map_or(0, |e| e.slots.len())
    }

    pub(crate) fn product_of(&self, slots: &[Slot]) -> f64 {
        slots.iter().map(|&s| self.features[s].alpha).product()
    }

    fn check_symbol(&self, symbol: u64) -> Result<(), ModelError> {
        if symbol < self.alphabet_size {
            Ok(())
        } else {
            Err(ModelError::SymbolOutOfRange {
                symbol,
                alphabet_size: self.alphabet_size,
            })
        }
    }

    /// Cached `r(y)`, without range checking.
    pub(crate) fn marginal_weight(&self, symbol: u64) -> f64 {
        self.marginal.get(&symbol).map_or(1.0, |e| e.weight)
    }

    /// `r(y)`: product of the marginal weights active on `symbol`.
    pub fn weight_marg(&self, symbol: u64) -> Result<f64, ModelError> {
        self.check_symbol(symbol)?;
        Ok(self.marginal_weight(symbol))
    }

    fn find_pair(&self, context: u64, symbol: u64) -> Option<&PairEntry> {
        let entries = self.contexts.get(&context)?;
        entries
            .binary_search_by_key(&symbol, |p| p.symbol)
            .ok()
            .map(|i| &entries[i])
    }

    /// Conditional activations listed for `y|x`, if the pair is listed.
    pub fn pair(&self, context: u64, symbol: u64) -> Option<&PairEntry> {
        self.find_pair(context, symbol)
    }

    /// `r(y|x)`.
    pub fn weight_cond(&self, context: u64, symbol: u64) -> Result<f64, ModelError> {
        self.check_symbol(symbol)?;
        let marg = self.marginal_weight(symbol);
        Ok(match self.find_pair(context, symbol) {
            Some(p) => marg * self.product_of(&p.slots),
            None => marg,
        })
    }

    /// `r(y|x)` with the conditional activations given explicitly as
    /// feature indices rather than looked up in the events data.
    pub fn weight_with(&self, symbol: u64, conditional: &[u64]) -> Result<f64, ModelError> {
        self.check_symbol(symbol)?;
        let mut w = self.marginal_weight(symbol);
        for &index in conditional {
            let slot = self
                .slot(index)
                .ok_or(ModelError::UnknownFeature { index })?;
            let f = &self.features[slot];
            if f.class != FeatureClass::Conditional {
                return Err(ModelError::ClassMismatch {
                    index,
                    class: f.class,
                    listed_in: FeatureClass::Conditional,
                });
            }
            w *= f.alpha;
        }
        Ok(w)
    }

    /// `Z(x)` through the sparse decomposition.
    pub fn partition(&self, context: u64) -> f64 {
        let entries = self.context_entries(context);
        let mut listed = CompensatedSum::new();
        let mut listed_marg = CompensatedSum::new();
        for p in entries.iter().filter(|p| !p.slots.is_empty()) {
            let marg = self.marginal_weight(p.symbol);
            listed.add(marg * self.product_of(&p.slots));
            listed_marg.add(marg);
        }
        let mut rest = self.marginal_mass - listed_marg.value();
        if rest < CANCELLATION * self.marginal_mass {
            rest = self
                .unlisted_terms(entries)
                .map(|(w, n)| w * n as f64)
                .sum();
        }
        listed.add(rest);
        listed.value()
    }

    /// `r(y)` of every symbol without a conditional feature in `entries`,
    /// grouped as `(weight, multiplicity)`. Costs `O(|Y+| + |Y_x+|)`.
    fn unlisted_terms<'a>(
        &'a self,
        entries: &'a [PairEntry],
    ) -> impl Iterator<Item = (f64, u64)> + 'a {
        let featured = |y: u64| {
            entries
                .binary_search_by_key(&y, |p| p.symbol)
                .is_ok_and(|i| !entries[i].slots.is_empty())
        };
        let listed_plain = entries
            .iter()
            .filter(|p| !p.slots.is_empty() && !self.marginal.contains_key(&p.symbol))
            .count() as u64;
        let unweighted = self.alphabet_size - self.marginal.len() as u64 - listed_plain;
        self.marginal
            .iter()
            .filter(move |(&y, _)| !featured(y))
            .map(|(_, e)| (e.weight, 1))
            .chain(std::iter::once((1.0, unweighted)))
    }

    /// `Z(x)` as the naive sum of `r(y|x)` over the whole alphabet.
    pub fn partition_bruteforce(&self, context: u64) -> f64 {
        let mut z = CompensatedSum::new();
        for y in 0..self.alphabet_size {
            z.add(self.weight_cond(context, y).expect("symbol in range"));
        }
        z.value()
    }

    /// `m(y|x)`.
    pub fn cond_prob(&self, context: u64, symbol: u64) -> Result<f64, ModelError> {
        Ok(self.weight_cond(context, symbol)? / self.partition(context))
    }

    /// `-sum_y m(y|x) ln m(y|x)` for one context, in `O(|Y_x+| + #distinct r(y))`.
    pub fn context_entropy(&self, context: u64) -> f64 {
        let z = self.partition(context);
        let entries = self.context_entries(context);
        let mut h = CompensatedSum::new();
        let mut listed_marg = CompensatedSum::new();
        for p in entries.iter().filter(|p| !p.slots.is_empty()) {
            let marg = self.marginal_weight(p.symbol);
            h.add(neg_p_ln_p(marg * self.product_of(&p.slots) / z));
            listed_marg.add(marg);
        }
        if self.marginal_mass - listed_marg.value() < CANCELLATION * self.marginal_mass {
            for (w, n) in self.unlisted_terms(entries) {
                h.add(n as f64 * neg_p_ln_p(w / z));
            }
        } else {
            for &(weight, n) in &self.marginal_groups {
                h.add(n as f64 * neg_p_ln_p(weight / z));
            }
            let unweighted = self.alphabet_size - self.marginal.len() as u64;
            h.add(unweighted as f64 * neg_p_ln_p(1.0 / z));
            for p in entries.iter().filter(|p| !p.slots.is_empty()) {
                h.add(-neg_p_ln_p(self.marginal_weight(p.symbol) / z));
            }
        }
        h.value().max(0.0)
    }

    /// Exports the current weights as a parameters file, keeping the original
    /// block membership, order and targets.
    pub fn to_parameters(&self) -> ParametersFile {
        let mut out = ParametersFile {
            alphabet_size: self.alphabet_size,
            marginal: Vec::new(),
            conditional: Vec::new(),
        };
        for f in &self.features {
            let p = Parameter::new(f.index, f.alpha, f.target);
            match f.class {
                FeatureClass::Marginal => out.marginal.push(p),
                FeatureClass::Conditional => out.conditional.push(p),
            }
        }
        out
    }
}
