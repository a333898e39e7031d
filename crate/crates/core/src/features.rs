//! Markov and trigger features from a token corpus.
//!
//! A history `x^t` is mapped to the context `<last n symbols, d_1 .. d_l>`
//! where `d_w` records whether trigger word `w` has occurred anywhere in the
//! history. Histories shorter than `n` are padded with [`BOUNDARY`]. The
//! feature `g_<w^i,z>` is active on `(x, z)` when the history ends in `w^i`;
//! the trigger feature `(w, z)` is active when `d_w` is set.
//!
//! In complemented mode a lower-order Markov feature applies to `(x, z)` only
//! if no higher-order complemented feature predicting `z` applies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::estimator::summarize_empirical;
use crate::formats::{
    ConditionalEvent, EventsFile, Expression, ExpressionsFile, MarginalEvent, Parameter,
    ParametersFile, Product, ProductTerm,
};

/// Padding symbol for positions before the start of the corpus.
pub const BOUNDARY: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeaturesError {
    #[error("corpus must start with `alphabet <k>`")]
    MissingHeader,
    #[error("alphabet size must be positive")]
    ZeroAlphabet,
    #[error("token {position}: `{token}` is not a symbol id")]
    BadToken { token: String, position: usize },
    #[error("token {position}: symbol {symbol} outside alphabet of size {alphabet_size}")]
    SymbolOutOfRange {
        symbol: u64,
        position: usize,
        alphabet_size: u64,
    },
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("trigger {0} listed twice")]
    DuplicateTrigger(u64),
    #[error("trigger {trigger} outside alphabet of size {alphabet_size}")]
    TriggerOutOfRange { trigger: u64, alphabet_size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub alphabet_size: u64,
    pub tokens: Vec<u64>,
}

impl Corpus {
    pub fn new(alphabet_size: u64, tokens: Vec<u64>) -> Result<Self, FeaturesError> {
        if alphabet_size == 0 {
            return Err(FeaturesError::ZeroAlphabet);
        }
        if tokens.is_empty() {
            return Err(FeaturesError::EmptyCorpus);
        }
        if let Some((position, &symbol)) =
            tokens.iter().enumerate().find(|(_, &s)| s >= alphabet_size)
        {
            return Err(FeaturesError::SymbolOutOfRange {
                symbol,
                position: position + 1,
                alphabet_size,
            });
        }
        Ok(Self {
            alphabet_size,
            tokens,
        })
    }

    /// Parses `alphabet <k>` followed by whitespace-separated symbol ids.
    pub fn parse(text: &str) -> Result<Self, FeaturesError> {
        let mut fields = text.split_ascii_whitespace();
        if fields.next() != Some("alphabet") {
            return Err(FeaturesError::MissingHeader);
        }
        let k = fields
            .next()
            .and_then(|f| f.parse::<u64>().ok())
            .ok_or(FeaturesError::MissingHeader)?;
        let tokens = fields
            .enumerate()
            .map(|(i, f)| {
                f.parse::<u64>().map_err(|_| FeaturesError::BadToken {
                    token: f.to_string(),
                    position: i + 1,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(k, tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    /// Only order-`n` features.
    #[default]
    Basic,
    /// All orders `0..=n`, each active independently.
    Overlapping,
    /// All orders `0..=n`; only the highest applicable order is active.
    Complemented,
    /// Overlapping and complemented copies side by side.
    Heterogeneous,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(Mode::Basic),
            "overlapping" => Ok(Mode::Overlapping),
            "complemented" => Ok(Mode::Complemented),
            "heterogeneous" => Ok(Mode::Heterogeneous),
            _ => Err(format!(
                "unknown mode `{s}` (basic, overlapping, complemented, heterogeneous)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Basic => "basic",
            Mode::Overlapping => "overlapping",
            Mode::Complemented => "complemented",
            Mode::Heterogeneous => "heterogeneous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSpec {
    pub order: usize,
    pub mode: Mode,
    /// Features are kept when their corpus count is strictly greater.
    pub c_min: u64,
    pub triggers: Vec<u64>,
}

impl FeatureSpec {
    pub fn validate(&self, alphabet_size: u64) -> Result<(), FeaturesError> {
        let mut seen = HashSet::new();
        for &w in &self.triggers {
            if w >= alphabet_size {
                return Err(FeaturesError::TriggerOutOfRange {
                    trigger: w,
                    alphabet_size,
                });
            }
            if !seen.insert(w) {
                return Err(FeaturesError::DuplicateTrigger(w));
            }
        }
        Ok(())
    }

    fn orders(&self) -> std::ops::RangeInclusive<usize> {
        match self.mode {
            Mode::Basic => self.order..=self.order,
            _ => 0..=self.order,
        }
    }

    fn families(&self) -> &'static [bool] {
        match self.mode {
            Mode::Basic | Mode::Overlapping => &[false],
            Mode::Complemented => &[true],
            Mode::Heterogeneous => &[false, true],
        }
    }
}

/// A history equivalence class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey {
    /// Last `n` symbols, oldest first; [`BOUNDARY`] before the corpus start.
    pub suffix: Vec<u64>,
    /// `d_w` for each trigger, in specification order.
    pub triggers: Vec<bool>,
}

impl ContextKey {
    fn tail(&self, len: usize) -> &[u64] {
        &self.suffix[self.suffix.len() - len..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextTable {
    /// Keys by context id.
    pub keys: Vec<ContextKey>,
    /// Number of corpus positions per context id.
    pub counts: Vec<u64>,
    /// Context id of the history at each corpus position.
    pub positions: Vec<u64>,
    ids: HashMap<ContextKey, u64>,
}

impl ContextTable {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn id(&self, key: &ContextKey) -> Option<u64> {
        self.ids.get(key).copied()
    }
}

fn history_keys<'a>(
    corpus: &'a Corpus,
    spec: &'a FeatureSpec,
) -> impl Iterator<Item = ContextKey> + 'a {
    let mut seen = vec![false; spec.triggers.len()];
    corpus.tokens.iter().enumerate().map(move |(t, &token)| {
        let suffix = (1..=spec.order)
            .rev()
            .map(|j| {
                if t >= j {
                    corpus.tokens[t - j]
                } else {
                    BOUNDARY
                }
            })
            .collect();
        let key = ContextKey {
            suffix,
            triggers: seen.clone(),
        };
        for (bit, &w) in seen.iter_mut().zip(&spec.triggers) {
            *bit |= w == token;
        }
        key
    })
}

/// Assigns context ids in order of first occurrence and counts positions.
pub fn intern_contexts(corpus: &Corpus, spec: &FeatureSpec) -> ContextTable {
    let mut table = ContextTable::default();
    for key in history_keys(corpus, spec) {
        let id = match table.ids.get(&key) {
            Some(&id) => id,
            None => {
                let id = table.keys.len() as u64;
                table.ids.insert(key.clone(), id);
                table.keys.push(key);
                table.counts.push(0);
                id
            }
        };
        table.counts[id as usize] += 1;
        table.positions.push(id);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKind {
    Markov {
        complemented: bool,
        order: usize,
        /// The `order` history symbols, oldest first.
        suffix: Vec<u64>,
        symbol: u64,
    },
    Trigger {
        word: u64,
        symbol: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDef {
    pub id: u64,
    pub kind: FeatureKind,
    /// Corpus frequency of the feature's pattern.
    pub count: u64,
    pub is_marginal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSet {
    pub alphabet_size: u64,
    pub features: Vec<FeatureDef>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn marginal_count(&self) -> usize {
        self.features.iter().filter(|f| f.is_marginal).count()
    }
}

/// Counts candidate features and keeps those with count above `c_min`.
///
/// Ids run from 1: overlapping Markov features, then complemented ones, then
/// triggers, each block ordered by (order, suffix, symbol) or (word, symbol).
pub fn extract_features(corpus: &Corpus, spec: &FeatureSpec) -> FeatureSet {
    let mut markov: BTreeMap<(usize, Vec<u64>, u64), u64> = BTreeMap::new();
    let mut trigger: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for (key, &z) in history_keys(corpus, spec).zip(&corpus.tokens) {
        for i in spec.orders() {
            *markov.entry((i, key.tail(i).to_vec(), z)).or_default() += 1;
        }
        for (&bit, &w) in key.triggers.iter().zip(&spec.triggers) {
            if bit {
                *trigger.entry((w, z)).or_default() += 1;
            }
        }
    }

    let mut kinds: Vec<(FeatureKind, u64)> = Vec::new();
    for &complemented in spec.families() {
        for ((order, suffix, symbol), &count) in &markov {
            if count > spec.c_min {
                let kind = FeatureKind::Markov {
                    complemented,
                    order: *order,
                    suffix: suffix.clone(),
                    symbol: *symbol,
                };
                kinds.push((kind, count));
            }
        }
    }
    for (&(word, symbol), &count) in &trigger {
        if count > spec.c_min {
            kinds.push((FeatureKind::Trigger { word, symbol }, count));
        }
    }

    let features = kinds
        .into_iter()
        .enumerate()
        .map(|(n, (kind, count))| {
            // A complemented order-0 feature is switched off wherever a
            // higher-order one applies, so it depends on the context.
            let is_marginal = match &kind {
                FeatureKind::Markov {
                    complemented,
                    order: 0,
                    ..
                } => !complemented || spec.order == 0,
                _ => false,
            };
            FeatureDef {
                id: n as u64 + 1,
                kind,
                count,
                is_marginal,
            }
        })
        .collect();
    FeatureSet {
        alphabet_size: corpus.alphabet_size,
        features,
    }
}

/// `(order, suffix) -> [(symbol, id, complemented)]`
type MarkovIndex<'a> = HashMap<(usize, &'a [u64]), Vec<(u64, u64, bool)>>;

/// Lookup of the conditional features active on a context.
struct ActiveIndex<'a> {
    spec: &'a FeatureSpec,
    markov: MarkovIndex<'a>,
    /// trigger position -> [(symbol, id)]
    trigger: Vec<Vec<(u64, u64)>>,
}

impl<'a> ActiveIndex<'a> {
    fn new(spec: &'a FeatureSpec, fs: &'a FeatureSet) -> Self {
        let mut markov = MarkovIndex::new();
        let mut trigger = vec![Vec::new(); spec.triggers.len()];
        let slot: HashMap<u64, usize> = spec
            .triggers
            .iter()
            .enumerate()
            .map(|(i, &w)| (w, i))
            .collect();
        for f in fs.features.iter().filter(|f| !f.is_marginal) {
            match &f.kind {
                FeatureKind::Markov {
                    complemented,
                    order,
                    suffix,
                    symbol,
                } => markov
                    .entry((*order, suffix.as_slice()))
                    .or_default()
                    .push((*symbol, f.id, *complemented)),
                FeatureKind::Trigger { word, symbol } => {
                    trigger[slot[word]].push((*symbol, f.id));
                }
            }
        }
        Self {
            spec,
            markov,
            trigger,
        }
    }

    /// Active conditional feature ids per symbol, ascending in both.
    fn active(&self, key: &ContextKey) -> BTreeMap<u64, Vec<u64>> {
        let mut plain: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        // highest-order complemented feature per symbol
        let mut best: BTreeMap<u64, (usize, u64)> = BTreeMap::new();
        for i in self.spec.orders() {
            let Some(list) = self.markov.get(&(i, key.tail(i))) else {
                continue;
            };
            for &(z, id, complemented) in list {
                if complemented {
                    let e = best.entry(z).or_insert((i, id));
                    if i >= e.0 {
                        *e = (i, id);
                    }
                } else {
                    plain.entry(z).or_default().push(id);
                }
            }
        }
        for (z, (_, id)) in best {
            plain.entry(z).or_default().push(id);
        }
        for (bit, list) in key.triggers.iter().zip(&self.trigger) {
            if *bit {
                for &(z, id) in list {
                    plain.entry(z).or_default().push(id);
                }
            }
        }
        for ids in plain.values_mut() {
            ids.sort_unstable();
        }
        plain
    }
}

/// Marginal events for order-0 marginal features, and one conditional event
/// per observed pair or feature-active pair in an observed context.
pub fn emit_events(
    corpus: &Corpus,
    spec: &FeatureSpec,
    table: &ContextTable,
    fs: &FeatureSet,
) -> EventsFile {
    let mut marginal: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for f in fs.features.iter().filter(|f| f.is_marginal) {
        if let FeatureKind::Markov { symbol, .. } = f.kind {
            marginal.entry(symbol).or_default().push(f.id);
        }
    }

    let mut observed: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); table.len()];
    for (&x, &z) in table.positions.iter().zip(&corpus.tokens) {
        *observed[x as usize].entry(z).or_default() += 1;
    }

    let index = ActiveIndex::new(spec, fs);
    let mut conditional = Vec::new();
    for (x, key) in table.keys.iter().enumerate() {
        let mut active = index.active(key);
        for &z in observed[x].keys() {
            active.entry(z).or_default();
        }
        for (z, features) in active {
            let count = observed[x].get(&z).copied().unwrap_or(0);
            conditional.push(ConditionalEvent::new(x as u64, z, count, features));
        }
    }
    EventsFile {
        marginal: marginal
            .into_iter()
            .map(|(symbol, features)| MarginalEvent { symbol, features })
            .collect(),
        conditional,
    }
}

/// Every feature with `alpha = 1` and its empirical expectation as target.
pub fn emit_parameters(fs: &FeatureSet, events: &EventsFile) -> ParametersFile {
    let targets = summarize_empirical(events)
        .map(|s| s.targets_empirical)
        .unwrap_or_default();
    let mut out = ParametersFile {
        alphabet_size: fs.alphabet_size,
        marginal: Vec::new(),
        conditional: Vec::new(),
    };
    for f in &fs.features {
        let p = Parameter::new(f.id, 1.0, targets.get(&f.id).copied().unwrap_or(0.0));
        if f.is_marginal {
            out.marginal.push(p);
        } else {
            out.conditional.push(p);
        }
    }
    out
}

/// A single product over every corpus position: the probability of the
/// corpus under the model (its codelength, in nats).
pub fn emit_expressions(
    corpus: &Corpus,
    spec: &FeatureSpec,
    table: &ContextTable,
    fs: &FeatureSet,
) -> ExpressionsFile {
    let index = ActiveIndex::new(spec, fs);
    let active: Vec<BTreeMap<u64, Vec<u64>>> = table.keys.iter().map(|k| index.active(k)).collect();
    let terms = table
        .positions
        .iter()
        .zip(&corpus.tokens)
        .map(|(&x, &z)| {
            let features = active[x as usize].get(&z).cloned().unwrap_or_default();
            ProductTerm::Event(ConditionalEvent::new(x, z, 1, features))
        })
        .collect();
    ExpressionsFile {
        expressions: vec![Expression::Product(Product { terms })],
    }
}

/// Everything the builder produces for one corpus and specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Build {
    pub table: ContextTable,
    pub features: FeatureSet,
    pub events: EventsFile,
    pub parameters: ParametersFile,
}

pub fn build(corpus: &Corpus, spec: &FeatureSpec) -> Result<Build, FeaturesError> {
    spec.validate(corpus.alphabet_size)?;
    let table = intern_contexts(corpus, spec);
    let features = extract_features(corpus, spec);
    let events = emit_events(corpus, spec, &table, &features);
    let parameters = emit_parameters(&features, &events);
    Ok(Build {
        table,
        features,
        events,
        parameters,
    })
}
