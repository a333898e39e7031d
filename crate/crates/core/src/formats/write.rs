use std::io::{self, BufWriter, Write};

use super::kw;
use super::{
    format_real, ConditionalEvent, EventsFile, Expression, ExpressionsFile, ParametersFile,
    Product, ProductTerm, Sum, SumTerm,
};

fn indices<W: Write>(out: &mut W, features: &[u64]) -> io::Result<()> {
    for i in features {
        write!(out, " {i}")?;
    }
    writeln!(out)
}

pub(super) fn parameters<W: Write>(doc: &ParametersFile, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(
        out,
        "{} {} {}",
        kw::BEGIN_PARAMETERS,
        doc.alphabet_size,
        doc.len()
    )?;
    for (begin, end, block) in [
        (kw::BEGIN_MARGINAL, kw::END_MARGINAL, &doc.marginal),
        (kw::BEGIN_CONDITIONAL, kw::END_CONDITIONAL, &doc.conditional),
    ] {
        writeln!(out, "{begin} {}", block.len())?;
        for p in block {
            writeln!(
                out,
                "{} {} {}",
                p.index,
                format_real(p.alpha),
                format_real(p.target)
            )?;
        }
        writeln!(out, "{end}")?;
    }
    writeln!(out, "{}", kw::END_PARAMETERS)?;
    out.flush()
}

fn conditional_event<W: Write>(out: &mut W, e: &ConditionalEvent) -> io::Result<()> {
    write!(
        out,
        "{} {} {} {}",
        e.context,
        e.symbol,
        e.count,
        e.activation()
    )?;
    indices(out, &e.features)
}

pub(super) fn events<W: Write>(doc: &EventsFile, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {}", kw::BEGIN_EVENTS, doc.len())?;
    writeln!(out, "{} {}", kw::BEGIN_MARGINAL, doc.marginal.len())?;
    for e in &doc.marginal {
        write!(out, "{} {}", e.symbol, e.activation())?;
        indices(&mut out, &e.features)?;
    }
    writeln!(out, "{}", kw::END_MARGINAL)?;
    writeln!(out, "{} {}", kw::BEGIN_CONDITIONAL, doc.conditional.len())?;
    for e in &doc.conditional {
        conditional_event(&mut out, e)?;
    }
    writeln!(out, "{}", kw::END_CONDITIONAL)?;
    writeln!(out, "{}", kw::END_EVENTS)?;
    out.flush()
}

fn product<W: Write>(out: &mut W, p: &Product) -> io::Result<()> {
    writeln!(out, "{} {}", kw::BEGIN_PRODUCT, p.terms.len())?;
    for term in &p.terms {
        match term {
            ProductTerm::Event(e) => conditional_event(out, e)?,
            ProductTerm::Sum(s) => sum(out, s)?,
        }
    }
    writeln!(out, "{}", kw::END_PRODUCT)
}

fn sum<W: Write>(out: &mut W, s: &Sum) -> io::Result<()> {
    writeln!(out, "{} {}", kw::BEGIN_SUM, s.terms.len())?;
    for term in &s.terms {
        match term {
            SumTerm::Event(e) => conditional_event(out, e)?,
            SumTerm::Product(p) => product(out, p)?,
        }
    }
    writeln!(out, "{}", kw::END_SUM)
}

pub(super) fn expressions<W: Write>(doc: &ExpressionsFile, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {}", kw::BEGIN_EXPRESSIONS, doc.expressions.len())?;
    for expr in &doc.expressions {
        match expr {
            Expression::Event(e) => conditional_event(&mut out, e)?,
            Expression::Product(p) => product(&mut out, p)?,
            Expression::Sum(s) => sum(&mut out, s)?,
        }
    }
    writeln!(out, "{}", kw::END_EXPRESSIONS)?;
    out.flush()
}
