//! Command-line front end.
//!
//! Every subcommand returns an [`InvocationResult`] instead of printing, so
//! the binary and the tests share one code path. Exit codes: 0 success,
//! 1 incompatible files (`check` only), 2 usage, input or parse errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checker::{verify, Report};
use crate::estimator::{
    summarize_empirical, train_with, Diagnostics, TrainConfig, ZeroTargetPolicy,
};
use crate::evaluator::evaluate;
use crate::features::{self, Corpus, FeatureSpec, Mode};
use crate::formats::{Document, EventsFile, ExpressionsFile, ParametersFile};
use crate::model::Model;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCOMPATIBLE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InvocationResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl InvocationResult {
    fn fail(mut self, message: impl std::fmt::Display) -> Self {
        let _ = writeln!(self.stderr, "error: {message}");
        self.exit_code = EXIT_ERROR;
        self
    }

    fn findings(&mut self, report: &Report, verbose: bool) {
        for f in &report.findings {
            let _ = writeln!(self.stderr, "{}", f.render(verbose));
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "maxent",
    version,
    about = "Conditional maximum entropy modeling toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify parameters, events and expressions files.
    #[command(alias = "me.checker")]
    Check(CheckArgs),
    /// Run improved iterative scaling on a parameters/events pair.
    #[command(alias = "me.estimate")]
    Estimate(EstimateArgs),
    /// Evaluate an expressions file against a model.
    #[command(alias = "me.evaluate")]
    Evaluate(EvaluateArgs),
    /// Build events and parameters files from a token corpus.
    Build(BuildArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Explain each finding in more detail.
    #[arg(short)]
    pub verbose: bool,
    /// Parameters file.
    #[arg(short = 'p', value_name = "MODEL")]
    pub model: Option<PathBuf>,
    /// Events file.
    #[arg(short = 'e', value_name = "EVENTS")]
    pub events: Option<PathBuf>,
    /// Expressions file.
    #[arg(short = 'x', value_name = "EXPRESSIONS")]
    pub expressions: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Stop as soon as the corpus codelength increases.
    #[arg(short = 'm')]
    pub monotonic: bool,
    /// Report the conditional entropy H(m|f) each iteration.
    #[arg(long)]
    pub entropy: bool,
    /// Drive the weights of zero-target features to the lower bound instead
    /// of failing.
    #[arg(long)]
    pub pin_zero_targets: bool,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(value_name = "MODEL.IN")]
    pub model_in: PathBuf,
    #[arg(value_name = "EVENTS")]
    pub events: PathBuf,
    /// Number of iterations.
    #[arg(value_name = "N")]
    pub iterations: usize,
    #[arg(value_name = "MODEL.OUT")]
    pub model_out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(value_name = "MODEL")]
    pub model: PathBuf,
    #[arg(value_name = "EVENTS")]
    pub events: PathBuf,
    #[arg(value_name = "EXPRESSIONS")]
    pub expressions: PathBuf,
    #[arg(value_name = "RESULTS")]
    pub results: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// Corpus file: `alphabet <k>` followed by symbol ids.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Markov order n.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// basic, overlapping, complemented or heterogeneous.
    #[arg(long, default_value = "basic")]
    pub mode: Mode,
    /// Keep features seen more than this many times.
    #[arg(long, default_value_t = 0)]
    pub cmin: u64,
    /// Trigger word (repeatable).
    #[arg(long = "trigger", value_name = "SYMBOL")]
    pub triggers: Vec<u64>,
    /// Output prefix; writes PREFIX.params and PREFIX.events.
    #[arg(long, value_name = "PREFIX")]
    pub out: PathBuf,
    /// Also write PREFIX.expressions, a product over every corpus position.
    #[arg(long)]
    pub with_expressions: bool,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> InvocationResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                InvocationResult {
                    exit_code: EXIT_ERROR,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                InvocationResult {
                    exit_code: EXIT_OK,
                    stdout: text,
                    stderr: String::new(),
                }
            }
        }
    }
}

pub fn dispatch(command: Command) -> InvocationResult {
    match command {
        Command::Check(a) => run_check(&a),
        Command::Estimate(a) => with_threads(a.threads, || run_estimate(&a)),
        Command::Evaluate(a) => with_threads(a.threads, || run_evaluate(&a)),
        Command::Build(a) => run_build(&a),
    }
}

fn with_threads(
    threads: Option<usize>,
    f: impl FnOnce() -> InvocationResult + Send,
) -> InvocationResult {
    let Some(n) = threads else { return f() };
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(f),
        Err(e) => InvocationResult::default().fail(format!("thread pool: {e}")),
    }
}

fn load<D: Document>(path: &Path) -> Result<D, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    D::parse(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
}

/// Grammar-only parse, so `check` can report content problems as findings.
fn load_lenient<D: Document>(path: &Path) -> Result<D, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    D::parse_lenient(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames,
/// so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_document<D: Document>(path: &Path, doc: &D) -> Result<(), String> {
    let text = doc
        .serialize()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    write_atomic(path, text.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn run_check(args: &CheckArgs) -> InvocationResult {
    let mut out = InvocationResult::default();
    if args.model.is_none() && args.events.is_none() && args.expressions.is_none() {
        return out.fail(
            "nothing to check; usage: maxent check [-v] [-p MODEL] [-e EVENTS] [-x EXPRESSIONS]",
        );
    }
    let params = match args
        .model
        .as_deref()
        .map(load_lenient::<ParametersFile>)
        .transpose()
    {
        Ok(p) => p,
        Err(e) => return out.fail(e),
    };
    let events = match args
        .events
        .as_deref()
        .map(load_lenient::<EventsFile>)
        .transpose()
    {
        Ok(e) => e,
        Err(e) => return out.fail(e),
    };
    let exprs = match args
        .expressions
        .as_deref()
        .map(load_lenient::<ExpressionsFile>)
        .transpose()
    {
        Ok(x) => x,
        Err(e) => return out.fail(e),
    };
    let report = verify(params.as_ref(), events.as_ref(), exprs.as_ref()).expect("input supplied");
    out.findings(&report, args.verbose);
    let _ = writeln!(out.stdout, "{}", report.summary());
    out.exit_code = if report.compatible() {
        EXIT_OK
    } else {
        EXIT_INCOMPATIBLE
    };
    out
}

/// Column layout of the `estimate` diagnostics table.
pub fn diagnostics_header(entropy: bool) -> String {
    let mut s = format!(
        "{:>5} {:>13} {:>13} {:>13} {:>13}",
        "iter", "d(m[g],a)", "|Update|", "Max(alpha)", "L(C|m)"
    );
    if entropy {
        let _ = write!(s, " {:>13}", "H(m|f)");
    }
    s
}

pub fn diagnostics_row(d: &Diagnostics) -> String {
    let mut s = format!(
        "{:>5} {:>13.5e} {:>13.5e} {:>13.5e} {:>13.5e}",
        d.iteration, d.distance, d.update_norm, d.max_alpha, d.codelength
    );
    if let Some(h) = d.entropy {
        let _ = write!(s, " {h:>13.5e}");
    }
    s
}

pub fn run_estimate(args: &EstimateArgs) -> InvocationResult {
    let mut out = InvocationResult::default();
    let params: ParametersFile = match load(&args.model_in) {
        Ok(p) => p,
        Err(e) => return out.fail(e),
    };
    let events: EventsFile = match load(&args.events) {
        Ok(e) => e,
        Err(e) => return out.fail(e),
    };
    let report = verify(Some(&params), Some(&events), None).expect("input supplied");
    out.findings(&report, false);
    if !report.compatible() {
        return out.fail("model and events are incompatible");
    }
    let mut model = match Model::build(&params, &events) {
        Ok(m) => m,
        Err(e) => return out.fail(e),
    };
    let summary = match summarize_empirical(&events) {
        Ok(s) => s,
        Err(e) => return out.fail(e),
    };
    let config = TrainConfig {
        iterations: args.iterations,
        monotonic: args.monotonic,
        compute_entropy: args.entropy,
        zero_targets: if args.pin_zero_targets {
            ZeroTargetPolicy::Pin
        } else {
            ZeroTargetPolicy::Reject
        },
        ..TrainConfig::default()
    };

    let _ = writeln!(out.stdout, "{}", diagnostics_header(args.entropy));
    let mut rows = String::new();
    let trained = train_with(&mut model, &summary, &config, |d| {
        let _ = writeln!(rows, "{}", diagnostics_row(d));
    });
    out.stdout.push_str(&rows);
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            let hint = if matches!(e, crate::estimator::EstimateError::ZeroTarget { .. }) {
                " (use --pin-zero-targets to pin such weights at the lower bound)"
            } else {
                ""
            };
            return out.fail(format!("{e}{hint}"));
        }
    };
    for w in &trained.warnings {
        let _ = writeln!(out.stderr, "warning: {w}");
    }
    if trained.stopped_early {
        let _ = writeln!(
            out.stderr,
            "codelength increased at iteration {}; last update reverted",
            trained.history.len() + 1
        );
    }
    if let Err(e) = write_document(&args.model_out, &model.to_parameters()) {
        return out.fail(e);
    }
    out
}

pub fn run_evaluate(args: &EvaluateArgs) -> InvocationResult {
    let mut out = InvocationResult::default();
    let params: ParametersFile = match load(&args.model) {
        Ok(p) => p,
        Err(e) => return out.fail(e),
    };
    let events: EventsFile = match load(&args.events) {
        Ok(e) => e,
        Err(e) => return out.fail(e),
    };
    let exprs: ExpressionsFile = match load(&args.expressions) {
        Ok(x) => x,
        Err(e) => return out.fail(e),
    };
    let report = verify(Some(&params), Some(&events), Some(&exprs)).expect("input supplied");
    out.findings(&report, false);
    if !report.compatible() {
        return out.fail("model, events and expressions are incompatible");
    }
    let model = match Model::build(&params, &events) {
        Ok(m) => m,
        Err(e) => return out.fail(e),
    };
    let values = match evaluate(&model, &exprs) {
        Ok(v) => v,
        Err(e) => return out.fail(e),
    };
    let mut text = String::new();
    for v in &values {
        let _ = writeln!(text, "{v}");
    }
    if let Err(e) = write_atomic(&args.results, text.as_bytes()) {
        return out.fail(format!("{}: {e}", args.results.display()));
    }
    let _ = writeln!(out.stdout, "evaluated {} expression(s)", values.len());
    out
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn run_build(args: &BuildArgs) -> InvocationResult {
    let mut out = InvocationResult::default();
    let text = match std::fs::read_to_string(&args.corpus) {
        Ok(t) => t,
        Err(e) => return out.fail(format!("{}: {e}", args.corpus.display())),
    };
    let corpus = match Corpus::parse(&text) {
        Ok(c) => c,
        Err(e) => return out.fail(format!("{}: {e}", args.corpus.display())),
    };
    let spec = FeatureSpec {
        order: args.order,
        mode: args.mode,
        c_min: args.cmin,
        triggers: args.triggers.clone(),
    };
    let built = match features::build(&corpus, &spec) {
        Ok(b) => b,
        Err(e) => return out.fail(e),
    };
    if built.features.is_empty() {
        return out.fail(format!(
            "no feature occurs more than {} time(s)",
            spec.c_min
        ));
    }
    let params_path = with_suffix(&args.out, "params");
    let events_path = with_suffix(&args.out, "events");
    if let Err(e) = write_document(&params_path, &built.parameters)
        .and_then(|_| write_document(&events_path, &built.events))
    {
        return out.fail(e);
    }
    if args.with_expressions {
        let x = features::emit_expressions(&corpus, &spec, &built.table, &built.features);
        if let Err(e) = write_document(&with_suffix(&args.out, "expressions"), &x) {
            return out.fail(e);
        }
    }
    let _ = writeln!(
        out.stdout,
        "features {} (marginal {}, conditional {}), contexts {}, events {}",
        built.features.len(),
        built.features.marginal_count(),
        built.features.len() - built.features.marginal_count(),
        built.table.len(),
        built.events.len()
    );
    out
}
