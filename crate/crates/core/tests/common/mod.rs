//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use maxent::checker::{verify, Code, Report};
use maxent::estimator::{summarize_empirical, train, TrainConfig, ZeroTargetPolicy};
use maxent::features::{build, emit_expressions, Corpus, FeatureSpec, Mode};
use maxent::formats::{
    ConditionalEvent, EventsFile, Expression, ExpressionsFile, MarginalEvent, Parameter,
    ParametersFile, Product, ProductTerm, Sum, SumTerm,
};
use maxent::model::Model;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two symbols, one context; conditional feature 1 on `1|0`, counts 3 and 1.
pub fn t1(alpha: f64) -> (ParametersFile, EventsFile) {
    (
        ParametersFile {
            alphabet_size: 2,
            marginal: vec![],
            conditional: vec![Parameter::new(1, alpha, 0.25)],
        },
        EventsFile {
            marginal: vec![],
            conditional: vec![
                ConditionalEvent::new(0, 0, 3, vec![]),
                ConditionalEvent::new(0, 1, 1, vec![1]),
            ],
        },
    )
}

/// A training instance with empirical targets: every context observes every
/// symbol, so the maximum likelihood weights are finite.
///
/// `|Y| <= 6`, at most 8 contexts and 12 binary features, some marginal.
pub fn random_training_instance(seed: u64) -> (ParametersFile, EventsFile) {
    let mut r = rng(seed);
    let k: u64 = r.gen_range(2..=6);
    let n_ctx: u64 = r.gen_range(1..=8);
    let n_feat: u64 = r.gen_range(1..=12);

    let mut marginal: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut pairs: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    let mut params = ParametersFile {
        alphabet_size: k,
        marginal: vec![],
        conditional: vec![],
    };
    for id in 1..=n_feat {
        if r.gen_bool(0.25) {
            // marginal feature on a random non-empty symbol subset
            let mut ys: Vec<u64> = (0..k).filter(|_| r.gen_bool(0.4)).collect();
            if ys.is_empty() {
                ys.push(r.gen_range(0..k));
            }
            for y in ys {
                marginal.entry(y).or_default().push(id);
            }
            params.marginal.push(Parameter::new(id, 1.0, 0.0));
        } else {
            let placements = r.gen_range(1..=4);
            for _ in 0..placements {
                let x = r.gen_range(0..n_ctx);
                let y = r.gen_range(0..k);
                let list = pairs.entry((x, y)).or_default();
                if !list.contains(&id) {
                    list.push(id);
                }
            }
            params.conditional.push(Parameter::new(id, 1.0, 0.0));
        }
    }
    let mut conditional = Vec::new();
    for x in 0..n_ctx {
        for y in 0..k {
            let count = r.gen_range(1..=5);
            let features = pairs.remove(&(x, y)).unwrap_or_default();
            conditional.push(ConditionalEvent::new(x, y, count, features));
        }
    }
    let events = EventsFile {
        marginal: marginal
            .into_iter()
            .map(|(symbol, features)| MarginalEvent { symbol, features })
            .collect(),
        conditional,
    };
    set_empirical_targets(&mut params, &events);
    (params, events)
}

pub fn set_empirical_targets(params: &mut ParametersFile, events: &EventsFile) {
    let s = summarize_empirical(events).unwrap();
    for p in params
        .marginal
        .iter_mut()
        .chain(params.conditional.iter_mut())
    {
        p.target = s.targets_empirical.get(&p.index).copied().unwrap_or(0.0);
    }
}

/// A model with random weights and sparse, possibly n-ary, feature placement:
/// `|Y| <= 64`, alphas log-uniform in `[e^-3, e^3]`. Some contexts list only
/// part of the alphabet, and some listed pairs have no features.
pub fn random_model_instance(seed: u64) -> (ParametersFile, EventsFile) {
    let mut r = rng(seed);
    let k: u64 = r.gen_range(1..=64);
    let n_ctx: u64 = r.gen_range(1..=10);
    let n_marg: u64 = r.gen_range(0..=6);
    let n_cond: u64 = r.gen_range(1..=10);
    let alpha = |r: &mut ChaCha8Rng| r.gen_range(-3.0f64..=3.0).exp();

    let mut params = ParametersFile {
        alphabet_size: k,
        marginal: vec![],
        conditional: vec![],
    };
    let mut marginal: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for id in 1..=n_marg {
        params.marginal.push(Parameter::new(id, alpha(&mut r), 0.1));
        for _ in 0..r.gen_range(1..=4) {
            let y = r.gen_range(0..k);
            marginal.entry(y).or_default().push(id);
        }
    }
    let mut pairs: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    for id in n_marg + 1..=n_marg + n_cond {
        params
            .conditional
            .push(Parameter::new(id, alpha(&mut r), 0.1));
        for _ in 0..r.gen_range(1..=5) {
            let key = (r.gen_range(0..n_ctx), r.gen_range(0..k));
            pairs.entry(key).or_default().push(id);
        }
    }
    for x in 0..n_ctx {
        // plain observed pairs without features
        for _ in 0..r.gen_range(1..=3) {
            pairs.entry((x, r.gen_range(0..k))).or_default();
        }
    }
    let conditional = pairs
        .into_iter()
        .map(|((x, y), f)| ConditionalEvent::new(x, y, r.gen_range(1..=4), f))
        .collect();
    let events = EventsFile {
        marginal: marginal
            .into_iter()
            .map(|(symbol, features)| MarginalEvent { symbol, features })
            .collect(),
        conditional,
    };
    (params, events)
}

/// Instances where every marginal symbol and every listed pair carries total
/// activation exactly 1.
pub fn random_unit_activation_instance(seed: u64) -> (ParametersFile, EventsFile) {
    let mut r = rng(seed);
    let k: u64 = r.gen_range(3..=8);
    let n_ctx: u64 = r.gen_range(1..=6);
    let mut symbols: Vec<u64> = (0..k).collect();
    symbols.shuffle(&mut r);
    let n_marg = r.gen_range(1..k as usize - 1);
    let (marg_syms, cond_syms) = symbols.split_at(n_marg);

    let mut params = ParametersFile {
        alphabet_size: k,
        marginal: vec![],
        conditional: vec![],
    };
    let mut next = 1u64;
    let mut marginal = Vec::new();
    let mut shared = Vec::new();
    for &y in marg_syms {
        // two symbols may share a marginal feature
        let id = match shared.last() {
            Some(&id) if r.gen_bool(0.3) => id,
            _ => {
                params.marginal.push(Parameter::new(next, 1.0, 0.0));
                next += 1;
                next - 1
            }
        };
        shared.push(id);
        marginal.push(MarginalEvent {
            symbol: y,
            features: vec![id],
        });
    }
    marginal.sort_by_key(|m| m.symbol);
    let n_cond = r.gen_range(1..=6);
    let first_cond = next;
    for _ in 0..n_cond {
        params.conditional.push(Parameter::new(next, 1.0, 0.0));
        next += 1;
    }
    let mut conditional = Vec::new();
    for x in 0..n_ctx {
        for &y in cond_syms {
            let id = r.gen_range(first_cond..next);
            conditional.push(ConditionalEvent::new(x, y, r.gen_range(1..=5), vec![id]));
        }
        for &y in marg_syms {
            conditional.push(ConditionalEvent::new(x, y, r.gen_range(1..=5), vec![]));
        }
    }
    let events = EventsFile {
        marginal,
        conditional,
    };
    set_empirical_targets(&mut params, &events);
    // drop features that ended up unused
    let used: std::collections::HashSet<u64> = events
        .conditional
        .iter()
        .flat_map(|c| c.features.iter().copied())
        .collect();
    params.conditional.retain(|p| used.contains(&p.index));
    (params, events)
}

/// Direct evaluation of the model from the documents, without the sparse
/// machinery: `r(y|x)` for every symbol of the alphabet.
pub struct Dense {
    pub alphabet_size: u64,
    alpha: HashMap<u64, f64>,
    marginal: HashMap<u64, Vec<u64>>,
    pairs: HashMap<(u64, u64), (u64, Vec<u64>)>,
}

impl Dense {
    pub fn new(p: &ParametersFile, e: &EventsFile) -> Self {
        Self {
            alphabet_size: p.alphabet_size,
            alpha: p.iter().map(|q| (q.index, q.alpha)).collect(),
            marginal: e
                .marginal
                .iter()
                .map(|m| (m.symbol, m.features.clone()))
                .collect(),
            pairs: e
                .conditional
                .iter()
                .map(|c| ((c.context, c.symbol), (c.count, c.features.clone())))
                .collect(),
        }
    }

    /// All features active on `(x, y)`, with multiplicity.
    pub fn active(&self, x: u64, y: u64) -> Vec<u64> {
        let mut f = self.marginal.get(&y).cloned().unwrap_or_default();
        if let Some((_, g)) = self.pairs.get(&(x, y)) {
            f.extend(g);
        }
        f
    }

    pub fn weight(&self, x: u64, y: u64) -> f64 {
        self.active(x, y).iter().map(|i| self.alpha[i]).product()
    }

    pub fn partition(&self, x: u64) -> f64 {
        (0..self.alphabet_size).map(|y| self.weight(x, y)).sum()
    }

    pub fn prob(&self, x: u64, y: u64) -> f64 {
        self.weight(x, y) / self.partition(x)
    }

    /// `f(x)` over contexts with positive count.
    pub fn context_freq(&self) -> BTreeMap<u64, f64> {
        let mut c: BTreeMap<u64, u64> = BTreeMap::new();
        for (&(x, _), &(n, _)) in &self.pairs {
            *c.entry(x).or_default() += n;
        }
        let total: u64 = c.values().sum();
        c.into_iter()
            .filter(|&(_, n)| n > 0)
            .map(|(x, n)| (x, n as f64 / total as f64))
            .collect()
    }

    /// `sum_x f(x) sum_y m(y|x) g_i(x,y)` over observed contexts and the
    /// whole alphabet.
    pub fn expectations(&self) -> BTreeMap<u64, f64> {
        let mut out: BTreeMap<u64, f64> = self.alpha.keys().map(|&i| (i, 0.0)).collect();
        for (x, f) in self.context_freq() {
            let z = self.partition(x);
            for y in 0..self.alphabet_size {
                let m = self.weight(x, y) / z;
                for i in self.active(x, y) {
                    *out.get_mut(&i).unwrap() += f * m;
                }
            }
        }
        out
    }

    pub fn codelength(&self) -> f64 {
        self.pairs
            .iter()
            .filter(|(_, (n, _))| *n > 0)
            .map(|(&(x, y), &(n, _))| -(n as f64) * self.prob(x, y).ln())
            .sum()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_real(r: &mut ChaCha8Rng) -> f64 {
    match r.gen_range(0..4) {
        0 => r.gen_range(-40.0f64..40.0).exp(),
        1 => r.gen_range(1..1000) as f64,
        2 => r.gen::<f64>(),
        _ => 10f64.powi(r.gen_range(-300..300)),
    }
}

/// A valid parameters file with distinct indices across both blocks.
pub fn random_parameters(r: &mut ChaCha8Rng) -> ParametersFile {
    let mut ids: Vec<u64> = (1..=40).map(|i| i * r.gen_range(1..1000)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(r);
    let n = r.gen_range(0..=ids.len().min(12));
    let split = r.gen_range(0..=n);
    let param = |r: &mut ChaCha8Rng, i: u64| {
        let target = if r.gen_bool(0.2) { 0.0 } else { random_real(r) };
        Parameter::new(i, random_real(r), target)
    };
    ParametersFile {
        alphabet_size: r.gen_range(1..=u64::from(u32::MAX)),
        marginal: ids[..split].iter().map(|&i| param(r, i)).collect(),
        conditional: ids[split..n].iter().map(|&i| param(r, i)).collect(),
    }
}

fn random_features(r: &mut ChaCha8Rng) -> Vec<u64> {
    (0..r.gen_range(0..5)).map(|_| r.gen_range(1..50)).collect()
}

/// A valid events file: distinct marginal symbols and distinct pairs.
pub fn random_events(r: &mut ChaCha8Rng) -> EventsFile {
    let mut symbols: Vec<u64> = (0..r.gen_range(0..8)).map(|_| r.gen_range(0..20)).collect();
    symbols.sort_unstable();
    symbols.dedup();
    let mut pairs: Vec<(u64, u64)> = (0..r.gen_range(0..15))
        .map(|_| (r.gen_range(0..10), r.gen_range(0..20)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs.shuffle(r);
    EventsFile {
        marginal: symbols
            .into_iter()
            .map(|symbol| MarginalEvent {
                symbol,
                features: random_features(r),
            })
            .collect(),
        conditional: pairs
            .into_iter()
            .map(|(x, y)| ConditionalEvent::new(x, y, r.gen_range(0..100), random_features(r)))
            .collect(),
    }
}

fn random_leaf(r: &mut ChaCha8Rng) -> ConditionalEvent {
    ConditionalEvent::new(
        r.gen_range(0..10),
        r.gen_range(0..20),
        1,
        random_features(r),
    )
}

fn random_product(r: &mut ChaCha8Rng, depth: usize) -> Product {
    Product {
        terms: (0..r.gen_range(0..4))
            .map(|_| {
                if depth > 0 && r.gen_bool(0.4) {
                    ProductTerm::Sum(random_sum(r, depth - 1))
                } else {
                    ProductTerm::Event(random_leaf(r))
                }
            })
            .collect(),
    }
}

fn random_sum(r: &mut ChaCha8Rng, depth: usize) -> Sum {
    Sum {
        terms: (0..r.gen_range(0..4))
            .map(|_| {
                if depth > 0 && r.gen_bool(0.4) {
                    SumTerm::Product(random_product(r, depth - 1))
                } else {
                    SumTerm::Event(random_leaf(r))
                }
            })
            .collect(),
    }
}

/// A valid expressions file with alternating nesting up to depth 5.
pub fn random_expressions(r: &mut ChaCha8Rng) -> ExpressionsFile {
    ExpressionsFile {
        expressions: (0..r.gen_range(1..6))
            .map(|_| match r.gen_range(0..3) {
                0 => Expression::Event(random_leaf(r)),
                1 => Expression::Product(random_product(r, 5)),
                _ => Expression::Sum(random_sum(r, 5)),
            })
            .collect(),
    }
}

/// A set of documents handed to the checker together.
#[derive(Debug, Clone, Default)]
pub struct Docs {
    pub p: Option<ParametersFile>,
    pub e: Option<EventsFile>,
    pub x: Option<ExpressionsFile>,
}

impl Docs {
    pub fn report(&self) -> Report {
        verify(self.p.as_ref(), self.e.as_ref(), self.x.as_ref()).unwrap()
    }
}

fn product_of(events: Vec<ConditionalEvent>) -> ExpressionsFile {
    ExpressionsFile {
        expressions: vec![Expression::Product(Product {
            terms: events.into_iter().map(ProductTerm::Event).collect(),
        })],
    }
}

/// Three symbols; marginal feature 1 on `y=0`, conditional features 2 and 3.
pub fn checker_base() -> Docs {
    let e = EventsFile {
        marginal: vec![MarginalEvent {
            symbol: 0,
            features: vec![1],
        }],
        conditional: vec![
            ConditionalEvent::new(0, 0, 2, vec![2]),
            ConditionalEvent::new(0, 1, 1, vec![3]),
            ConditionalEvent::new(1, 2, 1, vec![]),
        ],
    };
    let mut p = ParametersFile {
        alphabet_size: 3,
        marginal: vec![Parameter::new(1, 1.0, 0.0)],
        conditional: vec![Parameter::new(2, 1.0, 0.0), Parameter::new(3, 1.0, 0.0)],
    };
    set_empirical_targets(&mut p, &e);
    let x = product_of(vec![
        ConditionalEvent::new(0, 0, 1, vec![2]),
        ConditionalEvent::new(1, 2, 1, vec![]),
        ConditionalEvent::new(9, 1, 1, vec![]),
    ]);
    Docs {
        p: Some(p),
        e: Some(e),
        x: Some(x),
    }
}

/// One minimal corruption per error code. Each fixture supplies only the
/// documents its code needs.
pub fn corrupted_fixtures() -> Vec<(Code, Docs)> {
    let base = checker_base();
    let p = base.p.clone().unwrap();
    let e = base.e.clone().unwrap();
    let only_p = |p: ParametersFile| Docs {
        p: Some(p),
        ..Docs::default()
    };
    let p_and_e = |e: EventsFile| Docs {
        p: Some(p.clone()),
        e: Some(e),
        x: None,
    };
    let only_e = |e: EventsFile| Docs {
        e: Some(e),
        ..Docs::default()
    };
    let e_and_x = |x: ExpressionsFile| Docs {
        e: Some(e.clone()),
        x: Some(x),
        ..Docs::default()
    };
    let only_x = |x: ExpressionsFile| Docs {
        x: Some(x),
        ..Docs::default()
    };

    let mut out = Vec::new();
    let mut q = p.clone();
    q.alphabet_size = 0;
    out.push((Code::EmptyAlphabet, only_p(q)));
    let mut q = p.clone();
    q.conditional.push(Parameter::new(0, 1.0, 0.5));
    out.push((Code::ZeroIndex, only_p(q)));
    let mut q = p.clone();
    q.conditional.push(q.conditional[0]);
    out.push((Code::DuplicateIndex, only_p(q)));
    let mut q = p.clone();
    q.conditional.push(Parameter::new(1, 1.0, 0.5));
    out.push((Code::OverlappingIndex, only_p(q)));
    let mut q = p.clone();
    q.conditional[0].alpha = -1.0;
    out.push((Code::NonPositiveAlpha, only_p(q)));
    let mut q = p.clone();
    q.conditional[0].target = f64::NAN;
    out.push((Code::InvalidTarget, only_p(q)));

    let mut f = e.clone();
    f.conditional.push(f.conditional[2].clone());
    out.push((Code::DuplicateEvent, only_e(f)));
    let mut f = e.clone();
    f.conditional.push(ConditionalEvent::new(1, 5, 1, vec![]));
    out.push((Code::SymbolOutOfRange, p_and_e(f)));
    let mut f = e.clone();
    f.conditional[2].features.push(9);
    out.push((Code::UnknownFeature, p_and_e(f)));
    let mut f = e.clone();
    f.conditional[2].features.push(1);
    out.push((Code::MisplacedMarginal, p_and_e(f)));
    let mut f = e.clone();
    f.marginal[0].features.push(2);
    out.push((Code::MisplacedConditional, p_and_e(f)));
    let mut f = e.clone();
    f.conditional.push(ConditionalEvent::new(0, 2, 0, vec![]));
    out.push((Code::OrphanZeroCountEvent, only_e(f)));
    let mut f = e.clone();
    f.conditional.clear();
    out.push((
        Code::NoConditionalEvents,
        Docs {
            e: Some(f),
            x: Some(product_of(vec![ConditionalEvent::new(0, 0, 1, vec![])])),
            ..Docs::default()
        },
    ));
    let mut f = e.clone();
    f.marginal[0].features.clear();
    for c in &mut f.conditional {
        c.features.clear();
    }
    out.push((Code::NoActiveFeature, only_e(f)));

    out.push((
        Code::NoExpressions,
        only_x(ExpressionsFile {
            expressions: vec![],
        }),
    ));
    out.push((
        Code::NonUnitFrequency,
        only_x(product_of(vec![ConditionalEvent::new(0, 0, 2, vec![])])),
    ));
    out.push((
        Code::FeatureMismatch,
        e_and_x(product_of(vec![ConditionalEvent::new(0, 0, 1, vec![])])),
    ));
    out.push((
        Code::MissingEvent,
        e_and_x(product_of(vec![ConditionalEvent::new(7, 1, 1, vec![2])])),
    ));
    out
}

/// Documents that must draw no error: the base fixture in every
/// combination, the T1 pair, random training instances and builder output.
pub fn valid_fixtures() -> Vec<Docs> {
    let base = checker_base();
    let mut out = Vec::new();
    for mask in 1..8u8 {
        out.push(Docs {
            p: base.p.clone().filter(|_| mask & 1 != 0),
            e: base.e.clone().filter(|_| mask & 2 != 0),
            x: base.x.clone().filter(|_| mask & 4 != 0),
        });
    }
    let (p, e) = t1(0.5);
    out.push(Docs {
        p: Some(p),
        e: Some(e),
        x: None,
    });
    for seed in 0..30 {
        let (p, e) = random_training_instance(seed);
        out.push(Docs {
            p: Some(p),
            e: Some(e),
            x: None,
        });
    }
    for (tokens, mode, order) in [
        (vec![0, 1, 0, 1], Mode::Overlapping, 1),
        (vec![0, 1, 0, 1], Mode::Basic, 1),
        (vec![0, 1, 2, 0, 1, 1, 2, 0], Mode::Complemented, 2),
        (vec![0, 1, 2, 0, 1, 1, 2, 0], Mode::Heterogeneous, 1),
    ] {
        let corpus = Corpus::new(3, tokens).unwrap();
        let spec = FeatureSpec {
            order,
            mode,
            c_min: 0,
            triggers: vec![2],
        };
        let b = build(&corpus, &spec).unwrap();
        let x = emit_expressions(&corpus, &spec, &b.table, &b.features);
        out.push(Docs {
            p: Some(b.parameters.clone()),
            e: Some(b.events.clone()),
            x: None,
        });
        out.push(Docs {
            p: Some(b.parameters),
            e: Some(b.events),
            x: Some(x),
        });
    }
    out
}

/// A corpus drawn from a random first-order Markov chain with a sparse
/// transition table, so some bigrams never occur. Symbols are relabeled so
/// the alphabet is exactly the corpus vocabulary.
pub fn synthetic_corpus(seed: u64, alphabet_size: u64, len: usize) -> Corpus {
    let mut r = rng(seed);
    let k = alphabet_size as usize;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..k)
                .map(|_| if r.gen_bool(0.6) { r.gen::<f64>() } else { 0.0 })
                .collect()
        })
        .collect();
    let mut tokens = vec![r.gen_range(0..alphabet_size)];
    while tokens.len() < len {
        let row = &rows[*tokens.last().unwrap() as usize];
        let total: f64 = row.iter().sum();
        let next = if total == 0.0 {
            r.gen_range(0..alphabet_size)
        } else {
            let mut u = r.gen::<f64>() * total;
            let mut pick = k - 1;
            for (z, &w) in row.iter().enumerate() {
                if u < w {
                    pick = z;
                    break;
                }
                u -= w;
            }
            pick as u64
        };
        tokens.push(next);
    }
    let mut vocab: Vec<u64> = tokens.clone();
    vocab.sort_unstable();
    vocab.dedup();
    let tokens = tokens
        .iter()
        .map(|t| vocab.binary_search(t).unwrap() as u64)
        .collect();
    Corpus::new(vocab.len() as u64, tokens).unwrap()
}

/// Trains a complemented model on a synthetic corpus and returns the worst
/// deviation of `m(z|x)` from `f(z|x)` over feature-active observed pairs.
pub fn complemented_deviation(seed: u64) -> f64 {
    let corpus = synthetic_corpus(seed, 5, 200);
    let spec = FeatureSpec {
        order: 1,
        mode: Mode::Complemented,
        c_min: 0,
        triggers: vec![],
    };
    let b = build(&corpus, &spec).unwrap();
    let mut model = Model::build(&b.parameters, &b.events).unwrap();
    let summary = summarize_empirical(&b.events).unwrap();
    let config = TrainConfig {
        iterations: 50,
        zero_targets: ZeroTargetPolicy::Pin,
        ..TrainConfig::default()
    };
    train(&mut model, &summary, &config).unwrap();
    let mut context_total: BTreeMap<u64, u64> = BTreeMap::new();
    for c in &b.events.conditional {
        *context_total.entry(c.context).or_default() += c.count;
    }
    b.events
        .conditional
        .iter()
        .filter(|c| !c.features.is_empty() && c.count > 0)
        .map(|c| {
            let f = c.count as f64 / context_total[&c.context] as f64;
            (model.cond_prob(c.context, c.symbol).unwrap() - f).abs()
        })
        .fold(0.0, f64::max)
}

/// Runs the built binary and returns `(exit code, stdout, stderr)`.
pub fn maxent(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_maxent"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Every artifact of one build, check, estimate, check, evaluate run.
#[derive(Debug, PartialEq, Eq)]
pub struct PipelineRun {
    pub exit_codes: Vec<i32>,
    pub stdout: Vec<String>,
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Runs the whole pipeline in a fresh directory on `corpus` (in corpus-file
/// syntax) with extra build flags.
pub fn pipeline(corpus: &str, build_flags: &[&str], threads: usize) -> PipelineRun {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    std::fs::write(path("corpus.txt"), corpus).unwrap();
    let threads = threads.to_string();
    let corpus_path = path("corpus.txt");
    let prefix = path("model");
    let mut build = vec!["build", "--corpus", &corpus_path];
    build.extend(["--out", &prefix, "--with-expressions"]);
    build.extend(build_flags);
    let (params, events, exprs, trained, results) = (
        path("model.params"),
        path("model.events"),
        path("model.expressions"),
        path("trained.params"),
        path("results.txt"),
    );
    let steps: Vec<Vec<&str>> = vec![
        build,
        vec!["check", "-p", &params, "-e", &events],
        vec![
            "estimate",
            "-m",
            "--pin-zero-targets",
            "--threads",
            &threads,
            &params,
            &events,
            "40",
            &trained,
        ],
        vec!["check", "-p", &trained, "-e", &events, "-x", &exprs],
        vec![
            "evaluate",
            "--threads",
            &threads,
            &trained,
            &events,
            &exprs,
            &results,
        ],
    ];
    let mut run = PipelineRun {
        exit_codes: vec![],
        stdout: vec![],
        files: BTreeMap::new(),
    };
    for step in steps {
        let (code, stdout, _) = maxent(&step);
        run.exit_codes.push(code);
        run.stdout
            .push(stdout.replace(dir.path().to_str().unwrap(), "DIR"));
        if code != 0 {
            break;
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        run.files
            .insert(name.clone(), std::fs::read(dir.path().join(&name)).unwrap());
    }
    run
}

/// Two contexts, three symbols, marginal feature 1 on `y=0` and conditional
/// feature 2 on `1|0` and `2|1`.
pub fn ml_instance() -> (ParametersFile, EventsFile) {
    let mut p = ParametersFile {
        alphabet_size: 3,
        marginal: vec![Parameter::new(1, 1.0, 0.0)],
        conditional: vec![Parameter::new(2, 1.0, 0.0)],
    };
    let e = EventsFile {
        marginal: vec![MarginalEvent {
            symbol: 0,
            features: vec![1],
        }],
        conditional: vec![
            ConditionalEvent::new(0, 0, 3, vec![]),
            ConditionalEvent::new(0, 1, 2, vec![2]),
            ConditionalEvent::new(0, 2, 1, vec![]),
            ConditionalEvent::new(1, 0, 1, vec![]),
            ConditionalEvent::new(1, 1, 2, vec![]),
            ConditionalEvent::new(1, 2, 4, vec![2]),
        ],
    };
    set_empirical_targets(&mut p, &e);
    (p, e)
}

/// Maximizes the corpus log-likelihood over `(lambda_1, lambda_2)` with a
/// damped Newton iteration on the exact gradient and Hessian.
#[allow(clippy::needless_range_loop)]
pub fn direct_ml(e: &EventsFile) -> [f64; 2] {
    let counts: Vec<[u64; 3]> = (0..2)
        .map(|x| {
            let mut c = [0; 3];
            for ev in e.conditional.iter().filter(|ev| ev.context == x) {
                c[ev.symbol as usize] = ev.count;
            }
            c
        })
        .collect();
    // feature vectors g(x, y)
    let g = |x: usize, y: usize| -> [f64; 2] {
        let g1 = if y == 0 { 1.0 } else { 0.0 };
        let g2 = if (x, y) == (0, 1) || (x, y) == (1, 2) {
            1.0
        } else {
            0.0
        };
        [g1, g2]
    };
    let loglik = |l: [f64; 2]| -> f64 {
        let mut ll = 0.0;
        for x in 0..2 {
            let s: Vec<f64> = (0..3)
                .map(|y| l[0] * g(x, y)[0] + l[1] * g(x, y)[1])
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for y in 0..3 {
                ll += counts[x][y] as f64 * (s[y] - z.ln());
            }
        }
        ll
    };
    let mut l = [0.0, 0.0];
    for _ in 0..100 {
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for x in 0..2 {
            let n: f64 = counts[x].iter().sum::<u64>() as f64;
            let w: Vec<f64> = (0..3)
                .map(|y| (l[0] * g(x, y)[0] + l[1] * g(x, y)[1]).exp())
                .collect();
            let z: f64 = w.iter().sum();
            let mut mean = [0.0; 2];
            for y in 0..3 {
                for i in 0..2 {
                    mean[i] += w[y] / z * g(x, y)[i];
                    grad[i] += counts[x][y] as f64 * g(x, y)[i];
                }
            }
            for i in 0..2 {
                grad[i] -= n * mean[i];
                for j in 0..2 {
                    let mut cov = 0.0;
                    for y in 0..3 {
                        cov += w[y] / z * (g(x, y)[i] - mean[i]) * (g(x, y)[j] - mean[j]);
                    }
                    hess[i][j] -= n * cov;
                }
            }
        }
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        let step = [
            -(hess[1][1] * grad[0] - hess[0][1] * grad[1]) / det,
            -(-hess[1][0] * grad[0] + hess[0][0] * grad[1]) / det,
        ];
        let mut t = 1.0;
        let base = loglik(l);
        while loglik([l[0] + t * step[0], l[1] + t * step[1]]) < base && t > 1e-12 {
            t *= 0.5;
        }
        l = [l[0] + t * step[0], l[1] + t * step[1]];
        if grad[0].abs() + grad[1].abs() < 1e-14 {
            break;
        }
    }
    l
}

/// Targets summing past the achievable mass force codelength up eventually.
pub fn inconsistent_instance() -> (ParametersFile, EventsFile) {
    (
        ParametersFile {
            alphabet_size: 3,
            marginal: vec![],
            conditional: vec![Parameter::new(1, 1.0, 0.6), Parameter::new(2, 1.0, 0.5)],
        },
        EventsFile {
            marginal: vec![],
            conditional: vec![
                ConditionalEvent::new(0, 0, 3, vec![1]),
                ConditionalEvent::new(0, 1, 1, vec![2]),
                ConditionalEvent::new(0, 2, 2, vec![]),
            ],
        },
    )
}
