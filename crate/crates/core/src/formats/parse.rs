use std::collections::HashSet;
use std::io::BufRead;
use std::str::FromStr;

use super::kw;
use super::tokens::{Token, Tokenizer};
use super::{
    ConditionalEvent, EventsFile, Expression, ExpressionsFile, FormatError, MarginalEvent,
    Parameter, ParametersFile, Product, ProductTerm, Sum, SumTerm,
};

/// Deepest product/sum nesting accepted by the expressions parser.
pub const MAX_NESTING: usize = 128;

struct Parser<R> {
    tokens: Tokenizer<R>,
    /// Enforce the content restrictions, not just the grammar.
    strict: bool,
}

fn describe(tok: Option<&Token>) -> String {
    match tok {
        Some(t) => format!("`{}`", t.text()),
        None => "end of input".to_string(),
    }
}

impl<R: BufRead> Parser<R> {
    fn new(reader: R, strict: bool) -> Self {
        Self {
            tokens: Tokenizer::new(reader),
            strict,
        }
    }

    fn expect(&mut self, keyword: &str) -> Result<(), FormatError> {
        let line = self.tokens.line();
        match self.tokens.next_token()? {
            Some(t) if t.is(keyword) => Ok(()),
            other => Err(FormatError::MalformedHeader {
                expected: keyword.to_string(),
                found: describe(other.as_ref()),
                line: other.map_or(line, |t| t.line),
            }),
        }
    }

    fn number<T: FromStr>(&mut self) -> Result<(T, usize), FormatError> {
        let line = self.tokens.line();
        let tok = self
            .tokens
            .next_token()?
            .ok_or_else(|| FormatError::NonNumericToken {
                token: "end of input".to_string(),
                line,
            })?;
        let parsed = std::str::from_utf8(&tok.bytes)
            .ok()
            .and_then(|s| s.parse::<T>().ok());
        match parsed {
            Some(v) => Ok((v, tok.line)),
            None => Err(FormatError::NonNumericToken {
                token: tok.text(),
                line: tok.line,
            }),
        }
    }

    /// Consumes `end_keyword` if it is next; errors on any other keyword.
    fn at_block_end(&mut self, end_keyword: &str) -> Result<bool, FormatError> {
        let line = self.tokens.line();
        match self.tokens.peek()? {
            Some(t) if t.is(end_keyword) => {
                self.tokens.next_token()?;
                Ok(false)
            }
            Some(t) if t.is_keyword() => Err(FormatError::MalformedHeader {
                expected: end_keyword.to_string(),
                found: describe(Some(t)),
                line: t.line,
            }),
            Some(_) => Ok(true),
            None => Err(FormatError::MalformedHeader {
                expected: end_keyword.to_string(),
                found: describe(None),
                line,
            }),
        }
    }

    /// Reads `activation` feature indices; `fixed` is the number of leading
    /// fields already consumed, used for arity reporting.
    fn indices(&mut self, activation: u64, fixed: u64) -> Result<Vec<u64>, FormatError> {
        let mut out = Vec::new();
        for read in 0..activation {
            let line = self.tokens.line();
            match self.tokens.peek()? {
                Some(t) if !t.is_keyword() => {}
                _ => {
                    return Err(FormatError::ArityMismatch {
                        declared: activation.saturating_add(fixed),
                        found: fixed + read,
                        line,
                    })
                }
            }
            let (index, line): (u64, _) = self.number()?;
            if self.strict && index == 0 {
                return Err(FormatError::ZeroIndex { line });
            }
            out.push(index);
        }
        Ok(out)
    }

    /// Reads the leading field of a record, or reports a truncated record.
    fn field<T: FromStr>(&mut self, declared: u64, found: u64) -> Result<T, FormatError> {
        let line = self.tokens.line();
        match self.tokens.peek()? {
            Some(t) if !t.is_keyword() => Ok(self.number()?.0),
            _ => Err(FormatError::ArityMismatch {
                declared,
                found,
                line,
            }),
        }
    }

    fn finish(&mut self) -> Result<(), FormatError> {
        match self.tokens.next_token()? {
            None => Ok(()),
            Some(t) => Err(FormatError::TrailingInput {
                token: t.text(),
                line: t.line,
            }),
        }
    }

    fn parameter_block(
        &mut self,
        begin: &str,
        end: &str,
        seen: &mut HashSet<u64>,
    ) -> Result<(Vec<Parameter>, u64, usize), FormatError> {
        self.expect(begin)?;
        let (declared, line): (u64, _) = self.number()?;
        let mut params = Vec::new();
        while self.at_block_end(end)? {
            let (index, line): (u64, _) = self.number()?;
            let alpha: f64 = self.field(3, 1)?;
            let target: f64 = self.field(3, 2)?;
            if !self.strict {
                params.push(Parameter::new(index, alpha, target));
                continue;
            }
            if index == 0 {
                return Err(FormatError::ZeroIndex { line });
            }
            if !seen.insert(index) {
                return Err(FormatError::DuplicateIndex { index, line });
            }
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(FormatError::NonPositiveAlpha { index, line });
            }
            if !(target.is_finite() && target >= 0.0) {
                return Err(FormatError::InvalidTarget { index, line });
            }
            params.push(Parameter::new(index, alpha, target));
        }
        Ok((params, declared, line))
    }
}

fn check_count(
    section: &'static str,
    declared: u64,
    found: usize,
    line: usize,
) -> Result<(), FormatError> {
    if declared == found as u64 {
        Ok(())
    } else {
        Err(FormatError::CountMismatch {
            section,
            declared,
            found: found as u64,
            line,
        })
    }
}

pub(super) fn parameters<R: BufRead>(
    reader: R,
    strict: bool,
) -> Result<ParametersFile, FormatError> {
    let mut p = Parser::new(reader, strict);
    p.expect(kw::BEGIN_PARAMETERS)?;
    let (alphabet_size, line): (u64, _) = p.number()?;
    if strict && alphabet_size == 0 {
        return Err(FormatError::ZeroAlphabet { line });
    }
    let (declared_total, total_line): (u64, _) = p.number()?;
    let mut seen = HashSet::new();
    let (marginal, declared, line) =
        p.parameter_block(kw::BEGIN_MARGINAL, kw::END_MARGINAL, &mut seen)?;
    check_count("marginal parameters", declared, marginal.len(), line)?;
    let (conditional, declared, line) =
        p.parameter_block(kw::BEGIN_CONDITIONAL, kw::END_CONDITIONAL, &mut seen)?;
    check_count("conditional parameters", declared, conditional.len(), line)?;
    p.expect(kw::END_PARAMETERS)?;
    check_count(
        "parameters",
        declared_total,
        marginal.len() + conditional.len(),
        total_line,
    )?;
    p.finish()?;
    Ok(ParametersFile {
        alphabet_size,
        marginal,
        conditional,
    })
}

pub(super) fn events<R: BufRead>(reader: R, strict: bool) -> Result<EventsFile, FormatError> {
    let mut p = Parser::new(reader, strict);
    p.expect(kw::BEGIN_EVENTS)?;
    let (declared_total, total_line): (u64, _) = p.number()?;

    p.expect(kw::BEGIN_MARGINAL)?;
    let (declared, block_line): (u64, _) = p.number()?;
    let mut marginal = Vec::new();
    let mut symbols = HashSet::new();
    while p.at_block_end(kw::END_MARGINAL)? {
        let (symbol, line): (u64, _) = p.number()?;
        let activation: u64 = p.field(2, 1)?;
        let features = p.indices(activation, 2)?;
        if !symbols.insert(symbol) && strict {
            return Err(FormatError::DuplicateEvent {
                event: format!("marginal {symbol}"),
                line,
            });
        }
        marginal.push(MarginalEvent { symbol, features });
    }
    check_count("marginal events", declared, marginal.len(), block_line)?;

    p.expect(kw::BEGIN_CONDITIONAL)?;
    let (declared, block_line): (u64, _) = p.number()?;
    let mut conditional = Vec::new();
    let mut pairs = HashSet::new();
    while p.at_block_end(kw::END_CONDITIONAL)? {
        let (event, line) = conditional_record(&mut p)?;
        if !pairs.insert((event.context, event.symbol)) && strict {
            return Err(FormatError::DuplicateEvent {
                event: format!("conditional {}|{}", event.symbol, event.context),
                line,
            });
        }
        conditional.push(event);
    }
    check_count(
        "conditional events",
        declared,
        conditional.len(),
        block_line,
    )?;
    p.expect(kw::END_EVENTS)?;
    check_count(
        "events",
        declared_total,
        marginal.len() + conditional.len(),
        total_line,
    )?;
    p.finish()?;
    Ok(EventsFile {
        marginal,
        conditional,
    })
}

fn conditional_record<R: BufRead>(
    p: &mut Parser<R>,
) -> Result<(ConditionalEvent, usize), FormatError> {
    let (context, line): (u64, _) = p.number()?;
    let symbol: u64 = p.field(4, 1)?;
    let count: u64 = p.field(4, 2)?;
    let activation: u64 = p.field(4, 3)?;
    let features = p.indices(activation, 4)?;
    Ok((
        ConditionalEvent {
            context,
            symbol,
            count,
            features,
        },
        line,
    ))
}

fn expression_event<R: BufRead>(p: &mut Parser<R>) -> Result<ConditionalEvent, FormatError> {
    let (event, line) = conditional_record(p)?;
    if p.strict && event.count != 1 {
        return Err(FormatError::NonUnitFrequency {
            count: event.count,
            line,
        });
    }
    Ok(event)
}

fn product<R: BufRead>(p: &mut Parser<R>, depth: usize) -> Result<Product, FormatError> {
    let line = p.tokens.line();
    if depth > MAX_NESTING {
        return Err(FormatError::NestingTooDeep {
            max: MAX_NESTING,
            line,
        });
    }
    p.expect(kw::BEGIN_PRODUCT)?;
    let (declared, line): (u64, _) = p.number()?;
    let mut terms = Vec::new();
    loop {
        let tok_line = p.tokens.line();
        let next = p.tokens.peek()?.map(|t| (t.is_keyword(), t.bytes.clone()));
        match next {
            Some((true, kw_bytes)) if kw_bytes == kw::END_PRODUCT.as_bytes() => {
                p.tokens.next_token()?;
                break;
            }
            Some((true, kw_bytes)) if kw_bytes == kw::BEGIN_SUM.as_bytes() => {
                terms.push(ProductTerm::Sum(sum(p, depth + 1)?));
            }
            Some((true, kw_bytes)) if kw_bytes == kw::BEGIN_PRODUCT.as_bytes() => {
                return Err(FormatError::IllegalNesting {
                    outer: "product",
                    inner: "product",
                    line: tok_line,
                });
            }
            Some((false, _)) => terms.push(ProductTerm::Event(expression_event(p)?)),
            other => {
                return Err(FormatError::MalformedHeader {
                    expected: kw::END_PRODUCT.to_string(),
                    found: other.map_or("end of input".to_string(), |(_, b)| {
                        format!("`{}`", String::from_utf8_lossy(&b))
                    }),
                    line: tok_line,
                })
            }
        }
    }
    check_count("product", declared, terms.len(), line)?;
    Ok(Product { terms })
}

fn sum<R: BufRead>(p: &mut Parser<R>, depth: usize) -> Result<Sum, FormatError> {
    let line = p.tokens.line();
    if depth > MAX_NESTING {
        return Err(FormatError::NestingTooDeep {
            max: MAX_NESTING,
            line,
        });
    }
    p.expect(kw::BEGIN_SUM)?;
    let (declared, line): (u64, _) = p.number()?;
    let mut terms = Vec::new();
    loop {
        let tok_line = p.tokens.line();
        let next = p.tokens.peek()?.map(|t| (t.is_keyword(), t.bytes.clone()));
        match next {
            Some((true, kw_bytes)) if kw_bytes == kw::END_SUM.as_bytes() => {
                p.tokens.next_token()?;
                break;
            }
            Some((true, kw_bytes)) if kw_bytes == kw::BEGIN_PRODUCT.as_bytes() => {
                terms.push(SumTerm::Product(product(p, depth + 1)?));
            }
            Some((true, kw_bytes)) if kw_bytes == kw::BEGIN_SUM.as_bytes() => {
                return Err(FormatError::IllegalNesting {
                    outer: "sum",
                    inner: "sum",
                    line: tok_line,
                });
            }
            Some((false, _)) => terms.push(SumTerm::Event(expression_event(p)?)),
            other => {
                return Err(FormatError::MalformedHeader {
                    expected: kw::END_SUM.to_string(),
                    found: other.map_or("end of input".to_string(), |(_, b)| {
                        format!("`{}`", String::from_utf8_lossy(&b))
                    }),
                    line: tok_line,
                })
            }
        }
    }
    check_count("sum", declared, terms.len(), line)?;
    Ok(Sum { terms })
}

pub(super) fn expressions<R: BufRead>(
    reader: R,
    strict: bool,
) -> Result<ExpressionsFile, FormatError> {
    let mut p = Parser::new(reader, strict);
    p.expect(kw::BEGIN_EXPRESSIONS)?;
    let (declared, line): (u64, _) = p.number()?;
    let mut expressions = Vec::new();
    loop {
        let tok_line = p.tokens.line();
        let next = p.tokens.peek()?.map(|t| (t.is_keyword(), t.bytes.clone()));
        match next {
            Some((true, b)) if b == kw::END_EXPRESSIONS.as_bytes() => {
                p.tokens.next_token()?;
                break;
            }
            Some((true, b)) if b == kw::BEGIN_PRODUCT.as_bytes() => {
                expressions.push(Expression::Product(product(&mut p, 1)?));
            }
            Some((true, b)) if b == kw::BEGIN_SUM.as_bytes() => {
                expressions.push(Expression::Sum(sum(&mut p, 1)?));
            }
            Some((false, _)) => expressions.push(Expression::Event(expression_event(&mut p)?)),
            other => {
                return Err(FormatError::MalformedHeader {
                    expected: kw::END_EXPRESSIONS.to_string(),
                    found: other.map_or("end of input".to_string(), |(_, b)| {
                        format!("`{}`", String::from_utf8_lossy(&b))
                    }),
                    line: tok_line,
                })
            }
        }
    }
    check_count("expressions", declared, expressions.len(), line)?;
    p.finish()?;
    if strict && expressions.is_empty() {
        return Err(FormatError::NoExpressions);
    }
    Ok(ExpressionsFile { expressions })
}
