//! Consistency checks for parameters, events and expressions files.
//!
//! Findings are collected into a [`Report`]; a set of files is compatible
//! when no finding has error severity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::estimator::summarize_empirical;
use crate::formats::{ConditionalEvent, EventsFile, ExpressionsFile, ParametersFile};
use crate::model::FeatureClass;

/// `alpha` values at or beyond these bounds draw an [`Code::ExtremeAlpha`] warning.
pub const EXTREME_ALPHA_LOW: f64 = 1e-9;
pub const EXTREME_ALPHA_HIGH: f64 = 1e9;

const TARGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Code {
    // errors
    EmptyAlphabet,
    ZeroIndex,
    DuplicateIndex,
    OverlappingIndex,
    NonPositiveAlpha,
    InvalidTarget,
    DuplicateEvent,
    SymbolOutOfRange,
    UnknownFeature,
    MisplacedMarginal,
    MisplacedConditional,
    OrphanZeroCountEvent,
    NoConditionalEvents,
    NoActiveFeature,
    NoExpressions,
    NonUnitFrequency,
    FeatureMismatch,
    MissingEvent,
    // warnings
    ExtremeAlpha,
    TargetAboveOne,
    ZeroTarget,
    EmptyMarginalBlock,
    InactiveFeature,
    TargetDiffersFromEmpirical,
}

impl Code {
    pub const ERRORS: [Code; 18] = [
        Code::EmptyAlphabet,
        Code::ZeroIndex,
        Code::DuplicateIndex,
        Code::OverlappingIndex,
        Code::NonPositiveAlpha,
        Code::InvalidTarget,
        Code::DuplicateEvent,
        Code::SymbolOutOfRange,
        Code::UnknownFeature,
        Code::MisplacedMarginal,
        Code::MisplacedConditional,
        Code::OrphanZeroCountEvent,
        Code::NoConditionalEvents,
        Code::NoActiveFeature,
        Code::NoExpressions,
        Code::NonUnitFrequency,
        Code::FeatureMismatch,
        Code::MissingEvent,
    ];

    pub const WARNINGS: [Code; 6] = [
        Code::ExtremeAlpha,
        Code::TargetAboveOne,
        Code::ZeroTarget,
        Code::EmptyMarginalBlock,
        Code::InactiveFeature,
        Code::TargetDiffersFromEmpirical,
    ];

    pub fn severity(self) -> Severity {
        if Code::WARNINGS.contains(&self) {
            Severity::Warning
        } else {
            Severity::Error
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub code: Code,
    /// File and record the finding refers to, e.g. `events:3|1`.
    pub location: String,
    pub message: String,
    /// Longer explanation shown in verbose mode.
    pub detail: Option<String>,
}

impl Finding {
    fn new(code: Code, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            location: location.into(),
            message: message.into(),
            detail: None,
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn severity(&self) -> Severity {
        self.code.severity()
    }

    /// One diagnostic line: `SEVERITY CODE location message`.
    pub fn render(&self, verbose: bool) -> String {
        let mut line = format!(
            "{} {} {} {}",
            self.severity(),
            self.code,
            self.location,
            self.message
        );
        if verbose {
            if let Some(d) = &self.detail {
                line.push_str(" (");
                line.push_str(d);
                line.push(')');
            }
        }
        line
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub findings: Vec<Finding>,
}

impl Report {
    pub fn compatible(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity() == Severity::Warning)
    }

    pub fn has(&self, code: Code) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    /// Distinct error codes, sorted.
    pub fn error_codes(&self) -> Vec<Code> {
        let mut codes: Vec<Code> = self.errors().map(|f| f.code).collect();
        codes.sort();
        codes.dedup();
        codes
    }

    pub fn extend(&mut self, other: Report) {
        self.findings.extend(other.findings);
    }

    fn push(&mut self, finding: Finding) {
        self.findings.push(finding);
    }

    /// `N error(s), M warning(s): compatible|incompatible`.
    pub fn summary(&self) -> String {
        format!(
            "{} error(s), {} warning(s): {}",
            self.errors().count(),
            self.warnings().count(),
            if self.compatible() {
                "compatible"
            } else {
                "incompatible"
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("no file to check")]
    NoInput,
}

fn param_location(index: u64) -> String {
    format!("parameters:{index}")
}

fn event_location(e: &ConditionalEvent) -> String {
    format!("events:{}|{}", e.symbol, e.context)
}

pub fn check_parameters(p: &ParametersFile) -> Report {
    let mut report = Report::default();
    if p.alphabet_size == 0 {
        report.push(Finding::new(
            Code::EmptyAlphabet,
            "parameters",
            "alphabet size is zero",
        ));
    }
    let mut seen: HashMap<u64, FeatureClass> = HashMap::new();
    let blocks = [
        (&p.marginal, FeatureClass::Marginal),
        (&p.conditional, FeatureClass::Conditional),
    ];
    for (block, class) in blocks {
        for param in block.iter() {
            let loc = param_location(param.index);
            if param.index == 0 {
                report.push(
                    Finding::new(Code::ZeroIndex, &loc, "feature index 0 is reserved")
                        .with_detail("index 0 denotes the slack constraint"),
                );
            }
            match seen.get(&param.index) {
                Some(&c) if c == class => report.push(Finding::new(
                    Code::DuplicateIndex,
                    &loc,
                    format!("index appears twice in the {class} block"),
                )),
                Some(_) => report.push(Finding::new(
                    Code::OverlappingIndex,
                    &loc,
                    "index appears in both the marginal and conditional blocks",
                )),
                None => {
                    seen.insert(param.index, class);
                }
            }
            if !(param.alpha.is_finite() && param.alpha > 0.0) {
                report.push(Finding::new(
                    Code::NonPositiveAlpha,
                    &loc,
                    format!("alpha {} is not a positive finite number", param.alpha),
                ));
            } else if param.alpha <= EXTREME_ALPHA_LOW || param.alpha >= EXTREME_ALPHA_HIGH {
                report.push(
                    Finding::new(
                        Code::ExtremeAlpha,
                        &loc,
                        format!("alpha is {}", param.alpha),
                    )
                    .with_detail("a weight this far from 1 usually signals divergence"),
                );
            }
            if !(param.target.is_finite() && param.target >= 0.0) {
                report.push(Finding::new(
                    Code::InvalidTarget,
                    &loc,
                    format!("target {} is not a non-negative number", param.target),
                ));
            } else if param.target > 1.0 {
                report.push(
                    Finding::new(
                        Code::TargetAboveOne,
                        &loc,
                        format!("target {} exceeds 1", param.target),
                    )
                    .with_detail("only possible for features taking values above 1"),
                );
            } else if param.target == 0.0 {
                report.push(
                    Finding::new(Code::ZeroTarget, &loc, "target is 0")
                        .with_detail("estimation would drive alpha to 0"),
                );
            }
        }
    }
    report
}

fn class_map(p: &ParametersFile) -> HashMap<u64, FeatureClass> {
    let mut map = HashMap::new();
    for q in &p.conditional {
        map.insert(q.index, FeatureClass::Conditional);
    }
    for q in &p.marginal {
        map.insert(q.index, FeatureClass::Marginal);
    }
    map
}

/// Index, range and class checks shared by events and expression records.
fn check_indices(
    report: &mut Report,
    loc: &str,
    features: &[u64],
    expected: FeatureClass,
    classes: Option<&HashMap<u64, FeatureClass>>,
) {
    let mut reported = HashSet::new();
    for &i in features {
        if !reported.insert(i) {
            continue;
        }
        if i == 0 {
            report.push(Finding::new(
                Code::ZeroIndex,
                loc,
                "feature index 0 is reserved",
            ));
            continue;
        }
        let Some(classes) = classes else { continue };
        match classes.get(&i) {
            None => report.push(Finding::new(
                Code::UnknownFeature,
                loc,
                format!("feature {i} has no parameter"),
            )),
            Some(&c) if c != expected => {
                let code = match c {
                    FeatureClass::Marginal => Code::MisplacedMarginal,
                    FeatureClass::Conditional => Code::MisplacedConditional,
                };
                report.push(Finding::new(
                    code,
                    loc,
                    format!("{c} feature {i} listed in a {expected} event"),
                ));
            }
            Some(_) => {}
        }
    }
}

fn check_symbol(report: &mut Report, loc: &str, symbol: u64, p: Option<&ParametersFile>) {
    if let Some(p) = p {
        if symbol >= p.alphabet_size {
            report.push(Finding::new(
                Code::SymbolOutOfRange,
                loc,
                format!(
                    "symbol {symbol} is outside the alphabet of size {}",
                    p.alphabet_size
                ),
            ));
        }
    }
}

/// Checks an events file, optionally against its parameters file.
///
/// In evaluation mode the rules that only make sense for training data
/// (positive frequencies, empirical targets, feature coverage) are skipped.
pub fn check_events(e: &EventsFile, p: Option<&ParametersFile>, evaluation_mode: bool) -> Report {
    let mut report = Report::default();
    let classes = p.map(class_map);

    let mut symbols = HashSet::new();
    for m in &e.marginal {
        let loc = format!("events:{}", m.symbol);
        if !symbols.insert(m.symbol) {
            report.push(Finding::new(
                Code::DuplicateEvent,
                &loc,
                "marginal event appears more than once",
            ));
        }
        check_symbol(&mut report, &loc, m.symbol, p);
        check_indices(
            &mut report,
            &loc,
            &m.features,
            FeatureClass::Marginal,
            classes.as_ref(),
        );
    }

    if e.conditional.is_empty() {
        report.push(Finding::new(
            Code::NoConditionalEvents,
            "events",
            "the events file has no conditional events",
        ));
    }
    let mut pairs = HashSet::new();
    let mut context_count: HashMap<u64, u64> = HashMap::new();
    for c in &e.conditional {
        let loc = event_location(c);
        if !pairs.insert((c.context, c.symbol)) {
            report.push(Finding::new(
                Code::DuplicateEvent,
                &loc,
                "conditional event appears more than once",
            ));
        }
        *context_count.entry(c.context).or_default() += c.count;
        check_symbol(&mut report, &loc, c.symbol, p);
        check_indices(
            &mut report,
            &loc,
            &c.features,
            FeatureClass::Conditional,
            classes.as_ref(),
        );
    }

    if e.marginal.is_empty() {
        report.push(
            Finding::new(Code::EmptyMarginalBlock, "events", "no marginal events")
                .with_detail("without marginal features m(y|x) is uniform on novel contexts"),
        );
    }

    if evaluation_mode {
        return report;
    }

    let positive = |x: u64| context_count.get(&x).is_some_and(|&c| c > 0);
    for c in &e.conditional {
        if c.count == 0 && (c.features.is_empty() || !positive(c.context)) {
            report.push(
                Finding::new(
                    Code::OrphanZeroCountEvent,
                    event_location(c),
                    "zero-count event without an active feature in an observed context",
                )
                .with_detail(
                    "an event must have positive frequency or activate a conditional \
                     feature in a context with positive frequency",
                ),
            );
        }
    }

    let any_positive = context_count.values().any(|&c| c > 0);
    let marginal_active = e.marginal.iter().any(|m| !m.features.is_empty());
    let conditional_active = e
        .conditional
        .iter()
        .any(|c| !c.features.is_empty() && positive(c.context));
    if !(any_positive && (marginal_active || conditional_active)) {
        report.push(Finding::new(
            Code::NoActiveFeature,
            "events",
            "no context with positive frequency activates a feature",
        ));
    }

    if let Some(p) = p {
        let used: HashSet<u64> = e
            .marginal
            .iter()
            .flat_map(|m| m.features.iter())
            .chain(e.conditional.iter().flat_map(|c| c.features.iter()))
            .copied()
            .collect();
        for q in p.iter() {
            if !used.contains(&q.index) {
                report.push(Finding::new(
                    Code::InactiveFeature,
                    param_location(q.index),
                    "feature is never active in the events file",
                ));
            }
        }
        if let Ok(summary) = summarize_empirical(e) {
            for q in p.iter().filter(|q| used.contains(&q.index)) {
                let empirical = summary
                    .targets_empirical
                    .get(&q.index)
                    .copied()
                    .unwrap_or(0.0);
                if (q.target - empirical).abs() > TARGET_TOLERANCE * empirical.max(1.0) {
                    report.push(
                        Finding::new(
                            Code::TargetDiffersFromEmpirical,
                            param_location(q.index),
                            format!("target {} but empirical expectation {empirical}", q.target),
                        )
                        .with_detail("non-empirical targets may make estimation diverge"),
                    );
                }
            }
        }
    }
    report
}

/// Checks an expressions file, optionally against the events and parameters
/// files it will be evaluated with.
pub fn check_expressions(
    x: &ExpressionsFile,
    e: Option<&EventsFile>,
    p: Option<&ParametersFile>,
) -> Report {
    let mut report = Report::default();
    if x.expressions.is_empty() {
        report.push(Finding::new(
            Code::NoExpressions,
            "expressions",
            "the expressions file is empty",
        ));
    }
    let classes = p.map(class_map);
    let listed: Option<BTreeMap<(u64, u64), Vec<u64>>> = e.map(|e| {
        e.conditional
            .iter()
            .map(|c| {
                let mut f = c.features.clone();
                f.sort_unstable();
                ((c.context, c.symbol), f)
            })
            .collect()
    });

    for (n, expr) in x.expressions.iter().enumerate() {
        expr.for_each_event(&mut |ev| {
            let loc = format!("expressions:{}:{}|{}", n + 1, ev.symbol, ev.context);
            if ev.count != 1 {
                report.push(Finding::new(
                    Code::NonUnitFrequency,
                    &loc,
                    format!("embedded event has count {}", ev.count),
                ));
            }
            check_symbol(&mut report, &loc, ev.symbol, p);
            check_indices(
                &mut report,
                &loc,
                &ev.features,
                FeatureClass::Conditional,
                classes.as_ref(),
            );
            if let Some(listed) = &listed {
                let mut f = ev.features.clone();
                f.sort_unstable();
                match listed.get(&(ev.context, ev.symbol)) {
                    Some(g) if *g != f => report.push(
                        Finding::new(
                            Code::FeatureMismatch,
                            &loc,
                            "features differ from the events file record",
                        )
                        .with_detail(format!("expression lists {f:?}, events file lists {g:?}")),
                    ),
                    None if !f.is_empty() => report.push(
                        Finding::new(
                            Code::MissingEvent,
                            &loc,
                            "event activates conditional features but is absent from the events file",
                        )
                        .with_detail("Z(x) would miss this event's contribution"),
                    ),
                    _ => {}
                }
            }
        });
    }
    report
}

/// Runs every check applicable to the supplied files. Supplying an
/// expressions file switches the events checks to evaluation mode.
pub fn verify(
    p: Option<&ParametersFile>,
    e: Option<&EventsFile>,
    x: Option<&ExpressionsFile>,
) -> Result<Report, CheckError> {
    if p.is_none() && e.is_none() && x.is_none() {
        return Err(CheckError::NoInput);
    }
    let mut report = Report::default();
    if let Some(p) = p {
        report.extend(check_parameters(p));
    }
    if let Some(e) = e {
        report.extend(check_events(e, p, x.is_some()));
    }
    if let Some(x) = x {
        report.extend(check_expressions(x, e, p));
    }
    Ok(report)
}
