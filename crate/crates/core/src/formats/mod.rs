//! The three ASCII documents consumed and produced by the toolkit.
//!
//! * A [`ParametersFile`] holds the alphabet size and, for every feature, its
//!   weight `alpha_i` and target expectation `a_i`, split into marginal and
//!   conditional blocks.
//! * An [`EventsFile`] describes how the features behave on the observed
//!   data: marginal events `y` and conditional events `y|x` with their counts.
//! * An [`ExpressionsFile`] describes probability computations built from
//!   conditional events combined by products and sums.
//!
//! All three are keyword-delimited token streams. Tokens are separated by
//! arbitrary runs of ASCII whitespace, so line structure carries no meaning
//! on input. The writers emit one record per line with single spaces, and
//! floating point values in their shortest round-trip form.

mod parse;
mod tokens;
mod write;

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

pub use parse::MAX_NESTING;

/// Keyword tokens of the grammars.
pub(crate) mod kw {
    pub const BEGIN_PARAMETERS: &str = "begin.parameters";
    pub const END_PARAMETERS: &str = "end.parameters";
    pub const BEGIN_EVENTS: &str = "begin.events";
    pub const END_EVENTS: &str = "end.events";
    pub const BEGIN_MARGINAL: &str = "begin.marginal";
    pub const END_MARGINAL: &str = "end.marginal";
    pub const BEGIN_CONDITIONAL: &str = "begin.conditional";
    pub const END_CONDITIONAL: &str = "end.conditional";
    pub const BEGIN_EXPRESSIONS: &str = "begin.expressions";
    pub const END_EXPRESSIONS: &str = "end.expressions";
    pub const BEGIN_PRODUCT: &str = "begin.product";
    pub const END_PRODUCT: &str = "end.product";
    pub const BEGIN_SUM: &str = "begin.sum";
    pub const END_SUM: &str = "end.sum";
}

/// Errors raised while reading or writing a document.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: expected `{expected}`, found {found}")]
    MalformedHeader {
        expected: String,
        found: String,
        line: usize,
    },
    #[error("line {line}: {section} declares {declared} entries but contains {found}")]
    CountMismatch {
        section: &'static str,
        declared: u64,
        found: u64,
        line: usize,
    },
    #[error("line {line}: feature index 0 is reserved")]
    ZeroIndex { line: usize },
    #[error("line {line}: feature index {index} appears more than once")]
    DuplicateIndex { index: u64, line: usize },
    #[error("line {line}: alpha of feature {index} must be positive and finite")]
    NonPositiveAlpha { index: u64, line: usize },
    #[error("line {line}: target of feature {index} must be non-negative and finite")]
    InvalidTarget { index: u64, line: usize },
    #[error("line {line}: alphabet size must be positive")]
    ZeroAlphabet { line: usize },
    #[error("line {line}: expected a number, found `{token}`")]
    NonNumericToken { token: String, line: usize },
    #[error("line {line}: duplicate event {event}")]
    DuplicateEvent { event: String, line: usize },
    #[error("line {line}: record should hold {declared} values but holds {found}")]
    ArityMismatch {
        declared: u64,
        found: u64,
        line: usize,
    },
    #[error("line {line}: a {inner} may not appear directly inside a {outer}")]
    IllegalNesting {
        outer: &'static str,
        inner: &'static str,
        line: usize,
    },
    #[error("line {line}: expression events must have frequency 1, found {count}")]
    NonUnitFrequency { count: u64, line: usize },
    #[error("line {line}: expressions nested deeper than {max}")]
    NestingTooDeep { max: usize, line: usize },
    #[error("expressions file contains no expressions")]
    NoExpressions,
    #[error("line {line}: unexpected `{token}` after the end of the document")]
    TrailingInput { token: String, line: usize },
    #[error("line {line}: token exceeds {max} bytes")]
    TokenTooLong { max: usize, line: usize },
    #[error("document violates its invariants: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One feature weight with its target expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameter {
    pub index: u64,
    pub alpha: f64,
    pub target: f64,
}

impl Parameter {
    pub fn new(index: u64, alpha: f64, target: f64) -> Self {
        Self {
            index,
            alpha,
            target,
        }
    }

    /// `lambda_i = ln alpha_i`.
    pub fn lambda(&self) -> f64 {
        self.alpha.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametersFile {
    pub alphabet_size: u64,
    pub marginal: Vec<Parameter>,
    pub conditional: Vec<Parameter>,
}

impl ParametersFile {
    pub fn len(&self) -> usize {
        self.marginal.len() + self.conditional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters, marginal block first.
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.marginal.iter().chain(self.conditional.iter())
    }
}

/// A symbol `y` together with the marginal features active on it.
///
/// An n-ary feature of value `k` is listed `k` times, so the activation
/// `n(y)` is always `features.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginalEvent {
    pub symbol: u64,
    pub features: Vec<u64>,
}

impl MarginalEvent {
    pub fn activation(&self) -> u64 {
        self.features.len() as u64
    }
}

/// A pair `y|x` with its observed count and active conditional features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionalEvent {
    pub context: u64,
    pub symbol: u64,
    pub count: u64,
    pub features: Vec<u64>,
}

impl ConditionalEvent {
    pub fn new(context: u64, symbol: u64, count: u64, features: Vec<u64>) -> Self {
        Self {
            context,
            symbol,
            count,
            features,
        }
    }

    pub fn activation(&self) -> u64 {
        self.features.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventsFile {
    pub marginal: Vec<MarginalEvent>,
    pub conditional: Vec<ConditionalEvent>,
}

impl EventsFile {
    pub fn len(&self) -> usize {
        self.marginal.len() + self.conditional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total count `T` over all conditional events.
    pub fn total_count(&self) -> u64 {
        self.conditional.iter().map(|e| e.count).sum()
    }
}

/// A top-level expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Event(ConditionalEvent),
    Product(Product),
    Sum(Sum),
}

/// Product of events and sums. The empty product is one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Product {
    pub terms: Vec<ProductTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProductTerm {
    Event(ConditionalEvent),
    Sum(Sum),
}

/// Sum of events and products. The empty sum is zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sum {
    pub terms: Vec<SumTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SumTerm {
    Event(ConditionalEvent),
    Product(Product),
}

impl Expression {
    /// Visits every leaf event in document order.
    pub fn for_each_event<'a>(&'a self, f: &mut impl FnMut(&'a ConditionalEvent)) {
        match self {
            Expression::Event(e) => f(e),
            Expression::Product(p) => p.for_each_event(f),
            Expression::Sum(s) => s.for_each_event(f),
        }
    }
}

impl Product {
    pub fn for_each_event<'a>(&'a self, f: &mut impl FnMut(&'a ConditionalEvent)) {
        for term in &self.terms {
            match term {
                ProductTerm::Event(e) => f(e),
                ProductTerm::Sum(s) => s.for_each_event(f),
            }
        }
    }

    fn depth(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| match t {
                ProductTerm::Event(_) => 0,
                ProductTerm::Sum(s) => s.depth(),
            })
            .max()
            .unwrap_or(0)
    }
}

impl Sum {
    pub fn for_each_event<'a>(&'a self, f: &mut impl FnMut(&'a ConditionalEvent)) {
        for term in &self.terms {
            match term {
                SumTerm::Event(e) => f(e),
                SumTerm::Product(p) => p.for_each_event(f),
            }
        }
    }

    fn depth(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| match t {
                SumTerm::Event(_) => 0,
                SumTerm::Product(p) => p.depth(),
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpressionsFile {
    pub expressions: Vec<Expression>,
}

/// Common surface of the three document kinds.
pub trait Document: Sized {
    /// Reads a document from a buffered byte stream in a single pass.
    fn parse<R: BufRead>(reader: R) -> Result<Self, FormatError>;

    /// Reads a document enforcing only the grammar. Content restrictions
    /// (index 0, duplicates, value ranges, unit frequencies) are left for the
    /// checker to report.
    fn parse_lenient<R: BufRead>(reader: R) -> Result<Self, FormatError>;

    /// Checks the invariants the parser enforces, for documents built in memory.
    fn validate(&self) -> Result<(), FormatError>;

    /// Writes the canonical text without validating.
    fn write_unchecked<W: Write>(&self, out: W) -> io::Result<()>;

    fn parse_str(text: &str) -> Result<Self, FormatError> {
        Self::parse(text.as_bytes())
    }

    /// Validates, then writes the canonical text.
    fn write_to<W: Write>(&self, out: W) -> Result<(), FormatError> {
        self.validate()?;
        self.write_unchecked(out)?;
        Ok(())
    }

    /// Validates, then renders the canonical text.
    fn serialize(&self) -> Result<String, FormatError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("writers emit ASCII"))
    }
}

pub fn parse_parameters(text: &str) -> Result<ParametersFile, FormatError> {
    ParametersFile::parse_str(text)
}

pub fn parse_events(text: &str) -> Result<EventsFile, FormatError> {
    EventsFile::parse_str(text)
}

pub fn parse_expressions(text: &str) -> Result<ExpressionsFile, FormatError> {
    ExpressionsFile::parse_str(text)
}

fn violation(msg: impl Into<String>) -> FormatError {
    FormatError::InvariantViolation(msg.into())
}

impl Document for ParametersFile {
    fn parse<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::parameters(reader, true)
    }

    fn parse_lenient<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::parameters(reader, false)
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.alphabet_size == 0 {
            return Err(violation("alphabet size is zero"));
        }
        let mut seen = HashSet::new();
        for p in self.iter() {
            if p.index == 0 {
                return Err(violation("parameter with index 0"));
            }
            if !seen.insert(p.index) {
                return Err(violation(format!("index {} appears twice", p.index)));
            }
            if !(p.alpha.is_finite() && p.alpha > 0.0) {
                return Err(violation(format!("alpha of {} is {}", p.index, p.alpha)));
            }
            if !(p.target.is_finite() && p.target >= 0.0) {
                return Err(violation(format!("target of {} is {}", p.index, p.target)));
            }
        }
        Ok(())
    }

    fn write_unchecked<W: Write>(&self, out: W) -> io::Result<()> {
        write::parameters(self, out)
    }
}

impl Document for EventsFile {
    fn parse<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::events(reader, true)
    }

    fn parse_lenient<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::events(reader, false)
    }

    fn validate(&self) -> Result<(), FormatError> {
        let mut symbols = HashSet::new();
        for e in &self.marginal {
            if e.features.contains(&0) {
                return Err(violation("marginal event lists index 0"));
            }
            if !symbols.insert(e.symbol) {
                return Err(violation(format!("marginal event {} twice", e.symbol)));
            }
        }
        let mut pairs = HashSet::new();
        for e in &self.conditional {
            if e.features.contains(&0) {
                return Err(violation("conditional event lists index 0"));
            }
            if !pairs.insert((e.context, e.symbol)) {
                return Err(violation(format!(
                    "conditional event {}|{} twice",
                    e.symbol, e.context
                )));
            }
        }
        Ok(())
    }

    fn write_unchecked<W: Write>(&self, out: W) -> io::Result<()> {
        write::events(self, out)
    }
}

impl Document for ExpressionsFile {
    fn parse<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::expressions(reader, true)
    }

    fn parse_lenient<R: BufRead>(reader: R) -> Result<Self, FormatError> {
        parse::expressions(reader, false)
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.expressions.is_empty() {
            return Err(FormatError::NoExpressions);
        }
        let mut bad = None;
        for expr in &self.expressions {
            let depth = match expr {
                Expression::Event(_) => 0,
                Expression::Product(p) => p.depth(),
                Expression::Sum(s) => s.depth(),
            };
            if depth > MAX_NESTING {
                return Err(violation(format!("nesting depth {depth}")));
            }
            expr.for_each_event(&mut |e| {
                if bad.is_none() {
                    if e.count != 1 {
                        bad = Some(format!(
                            "event {}|{} has count {}",
                            e.symbol, e.context, e.count
                        ));
                    } else if e.features.contains(&0) {
                        bad = Some("event lists index 0".to_string());
                    }
                }
            });
        }
        match bad {
            Some(msg) => Err(violation(msg)),
            None => Ok(()),
        }
    }

    fn write_unchecked<W: Write>(&self, out: W) -> io::Result<()> {
        write::expressions(self, out)
    }
}

/// Shortest decimal text that parses back to exactly `value`.
pub fn format_real(value: f64) -> String {
    let magnitude = value.abs();
    if value == 0.0 || (1e-5..1e16).contains(&magnitude) || !value.is_finite() {
        format!("{value}")
    } else {
        format!("{value:e}")
    }
}
