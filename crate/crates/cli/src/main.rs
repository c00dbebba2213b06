//! `stla`: analyze, simulate and verify attainability certificates.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stla_core::catalog;
use stla_core::config::{parse_config, Problem};
use stla_core::report::AnalysisReport;
use stla_core::spectral::{classify, AttainabilityCertificate, Verdict};
use stla_core::study::{
    bch_study, bracket3_study, configure_threads, decay_study_with, halving_times, min_time_probe, prop1_study,
    prop2_same_field_study, prop2_study, ConvergenceStudy, DECAY_LIMIT_TOL, DECAY_ORDER_MIN, EXPANSION_ORDER_MIN,
    EXPONENT_BAND, MAX_CENSORED_FRACTION,
};
use stla_core::system::{Control, DerivativeOracle};
use stla_core::trajectory::{integrate, sci, SwitchSchedule, DEFAULT_STEPS_PER_SEGMENT};

const EXIT_INCONCLUSIVE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "stla",
    version,
    about = "Small-time local attainability certificates for symmetric control systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the analysis point and print the certificate.
    Analyze(AnalyzeArgs),
    /// Integrate a one-switch trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a convergence study or the minimum-time probe.
    Verify(VerifyArgs),
    /// List or print the built-in example systems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML problem description.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in example name (see `stla catalog list`).
    #[arg(long, value_name = "NAME")]
    catalog: Option<String>,
}

#[derive(Args)]
struct ProblemArgs {
    #[command(flatten)]
    source: Source,
    /// Analysis point as comma-separated reals; overrides the configured point.
    #[arg(long, value_name = "X1,X2,..", allow_hyphen_values = true)]
    point: Option<String>,
    /// Base factor of the first-order threshold.
    #[arg(long)]
    tol_petrov: Option<f64>,
    /// Base factor of the symmetry threshold on S.
    #[arg(long)]
    tol_sym: Option<f64>,
    /// Absolute eigenvalue threshold.
    #[arg(long)]
    tol_eig: Option<f64>,
    /// Use central differences instead of dual numbers for derivatives.
    #[arg(long)]
    finite_differences: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Control applied on the first segment, comma-separated.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "from_certificate")]
    a1: Option<String>,
    /// Control applied on the second segment; defaults to `a1`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "from_certificate")]
    a2: Option<String>,
    /// Follow the certificate's crossing trajectory (`a2` of the report first, then `a1`).
    #[arg(long)]
    from_certificate: bool,
    /// Duration of each of the two segments.
    #[arg(long, default_value_t = 0.1)]
    t: f64,
    /// RK4 steps per segment.
    #[arg(long, default_value_t = DEFAULT_STEPS_PER_SEGMENT)]
    steps: usize,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    Prop1,
    Prop2,
    Prop3,
    Bch,
    Bracket3,
    Mintime,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    study: Study,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Largest `t`; the study uses `t0·2^-k`.
    #[arg(long, default_value_t = 0.1)]
    t0: f64,
    #[arg(long, default_value_t = 9)]
    levels: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS_PER_SEGMENT)]
    steps: usize,
    /// Control applied first; defaults to the certificate's crossing order (e1 when inconclusive).
    #[arg(long, allow_hyphen_values = true)]
    a1: Option<String>,
    /// Control applied second; defaults to the certificate's crossing order (e2 when inconclusive).
    #[arg(long, allow_hyphen_values = true)]
    a2: Option<String>,
    /// prop2 only: check the `f ≡ g` specialization with control `a1`.
    #[arg(long)]
    same_field: bool,
    /// bracket3 only: 1-based field indices.
    #[arg(long, default_value_t = 1)]
    i: usize,
    #[arg(long, default_value_t = 2)]
    j: usize,
    /// mintime only: sphere radii.
    #[arg(long, default_value = "1e-2,1e-3,1e-4,1e-5")]
    deltas: String,
    /// mintime only: start points per radius.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CatalogAction {
    List,
    Show { name: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match threads_from_env().and_then(|n| {
        configure_threads(n);
        run(cli)
    }) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("STLA_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("STLA_THREADS must be a count, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Simulate(args) => simulate(args),
        Command::Verify(args) => verify(args),
        Command::Catalog { action } => catalog_cmd(action),
    }
}

struct Loaded {
    name: String,
    problem: Problem,
    point: Vec<f64>,
    oracle: DerivativeOracle,
}

impl Loaded {
    fn certify(&self) -> Result<AttainabilityCertificate> {
        let p = &self.problem;
        Ok(classify(
            &p.system,
            &p.target,
            &self.oracle,
            &self.point,
            &p.tolerances,
        )?)
    }
}

fn parse_reals(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid number `{}` in {what}", v.trim()))
        })
        .collect()
}

fn load(args: &ProblemArgs) -> Result<Loaded> {
    let mut problem = match (&args.source.config, &args.source.catalog) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        (None, Some(name)) => catalog::lookup(name)?,
        (None, None) => bail!("one of --config or --catalog is required"),
    };
    problem.tolerances = problem
        .tolerances
        .with_overrides(args.tol_petrov, args.tol_sym, args.tol_eig)?;
    let point = match &args.point {
        Some(s) => parse_reals(s, "--point")?,
        None => problem.point()?.to_vec(),
    };
    let n = problem.system.state_dim();
    if point.len() != n {
        bail!("--point has {} coordinates but the system has {n} states", point.len());
    }
    let oracle = if args.finite_differences {
        DerivativeOracle::central_difference()
    } else {
        DerivativeOracle::Dual
    };
    Ok(Loaded {
        name: problem.system.name.clone(),
        problem,
        point,
        oracle,
    })
}

fn control(s: &str, what: &str, m: usize) -> Result<Control> {
    let v = parse_reals(s, what)?;
    if v.len() != m {
        bail!("{what} has {} components but the system has {m} controls", v.len());
    }
    Ok(Control::new(v)?)
}

fn analyze(args: AnalyzeArgs) -> Result<u8> {
    let loaded = load(&args.problem)?;
    let cert = loaded.certify()?;
    let report = AnalysisReport::from_certificate(&loaded.name, &cert);
    let mut out = io::stdout().lock();
    match args.format {
        Format::Json => writeln!(out, "{}", report.to_json())?,
        Format::Text => write!(out, "{}", report.to_text())?,
    }
    Ok(verdict_code(cert.kind))
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
        _ => 0,
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| sci(*x)).collect::<Vec<_>>().join(",")
}

/// Writes to `path`, or to stdout when absent.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)
                .and_then(|_| w.flush())
                .with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            let mut w = io::stdout().lock();
            f(&mut w).and_then(|_| w.flush()).context("cannot write to stdout")
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let loaded = load(&args.problem)?;
    let sys = &loaded.problem.system;
    let m = sys.control_dim();
    let (a1, a2) = if args.from_certificate {
        let cert = loaded.certify()?;
        cert.switch_order()
            .ok_or_else(|| anyhow!("the certificate at this point is inconclusive and carries no controls"))?
    } else {
        let a1 = control(
            args.a1
                .as_deref()
                .ok_or_else(|| anyhow!("give --a1 or --from-certificate"))?,
            "--a1",
            m,
        )?;
        let a2 = match &args.a2 {
            Some(s) => control(s, "--a2", m)?,
            None => a1.clone(),
        };
        (a1, a2)
    };
    let schedule = SwitchSchedule::one_switch(&a1, &a2, args.t)?;
    let record = integrate(sys, &schedule, &loaded.point, args.steps, Some(&loaded.problem.target))?;
    with_output(args.out.as_deref(), |w| record.write_csv(w))?;

    let u0 = record.u_values[0];
    let u1 = *record.u_values.last().expect("record holds x0");
    let summary = format!("endpoint={}\nu_drop={}\n", fmt_vec(record.endpoint()), sci(u0 - u1));
    if args.out.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(0)
}

fn study_controls(args: &VerifyArgs, loaded: &Loaded) -> Result<(Control, Control)> {
    let m = loaded.problem.system.control_dim();
    let (mut a1, mut a2) = match loaded.certify()?.switch_order() {
        Some(pair) => pair,
        None => (Control::basis(m, 0), Control::basis(m, 1.min(m - 1))),
    };
    if let Some(s) = &args.a1 {
        a1 = control(s, "--a1", m)?;
    }
    if let Some(s) = &args.a2 {
        a2 = control(s, "--a2", m)?;
    }
    Ok((a1, a2))
}

fn expansion_verdict(name: &str, study: &ConvergenceStudy) -> (bool, String) {
    let pass = study.fitted_order >= EXPANSION_ORDER_MIN;
    let order = if study.is_exact() {
        "inf (exact)".to_string()
    } else {
        format!("{:.4}", study.fitted_order)
    };
    (pass, format!("{name} order={order} required>={EXPANSION_ORDER_MIN}"))
}

fn verify(args: VerifyArgs) -> Result<u8> {
    let loaded = load(&args.problem)?;
    let p = &loaded.problem;
    let (sys, tf, oracle, x) = (&p.system, &p.target, &loaded.oracle, loaded.point.as_slice());
    if args.levels < 2 {
        bail!("--levels must be at least 2");
    }
    if !(args.t0 > 0.0 && args.t0.is_finite()) {
        bail!("--t0 must be positive");
    }
    let t = halving_times(args.t0, args.levels);
    let out = args.out.as_deref();

    let (pass, line) = match args.study {
        Study::Prop1 | Study::Prop2 | Study::Bch => {
            let (a1, a2) = study_controls(&args, &loaded)?;
            let (name, study) = match args.study {
                Study::Prop1 => ("prop1", prop1_study(sys, oracle, &a1, &a2, x, &t, args.steps)?),
                Study::Prop2 if args.same_field => (
                    "prop2 (f=g)",
                    prop2_same_field_study(sys, tf, oracle, &a1, x, &t, args.steps)?,
                ),
                Study::Prop2 => ("prop2", prop2_study(sys, tf, oracle, &a1, &a2, x, &t, args.steps)?),
                _ => ("bch", bch_study(sys, oracle, &a1, &a2, x, &t, args.steps)?),
            };
            with_output(out, |w| study.write_csv(w))?;
            expansion_verdict(name, &study)
        }
        Study::Bracket3 => {
            let m = sys.control_dim();
            if args.i == 0 || args.j == 0 || args.i > m || args.j > m {
                bail!("--i and --j must lie in 1..={m}");
            }
            let study = bracket3_study(sys, oracle, args.i - 1, args.j - 1, x, &t, args.steps)?;
            with_output(out, |w| study.write_csv(w))?;
            expansion_verdict("bracket3", &study)
        }
        Study::Prop3 => {
            let cert = loaded.certify()?;
            if cert.kind != Verdict::SecondOrder {
                bail!("prop3 needs a second-order certificate, got {}", cert.kind.as_str());
            }
            let (mut a1, mut a2) = cert.switch_order().expect("second-order certificates carry controls");
            let m = sys.control_dim();
            if let Some(s) = &args.a1 {
                a1 = control(s, "--a1", m)?;
            }
            if let Some(s) = &args.a2 {
                a2 = control(s, "--a2", m)?;
            }
            let decay = decay_study_with(sys, tf, &a1, &a2, cert.lambda_min, x, &t, args.steps)?;
            with_output(out, |w| decay.write_csv(w))?;
            let gap = (decay.limit() - cert.lambda_min).abs();
            let order_ok = decay.study.fitted_order >= DECAY_ORDER_MIN;
            (
                order_ok && gap <= DECAY_LIMIT_TOL,
                format!(
                    "prop3 limit={:.6} lambda_min={:.6} gap={:.3e} order={:.4} required: gap<={DECAY_LIMIT_TOL:e}, order>={DECAY_ORDER_MIN}",
                    decay.limit(),
                    cert.lambda_min,
                    gap,
                    decay.study.fitted_order
                ),
            )
        }
        Study::Mintime => {
            let cert = loaded.certify()?;
            let expected = match cert.kind {
                Verdict::FirstOrder => 1.0,
                Verdict::SecondOrder => 0.5,
                Verdict::Inconclusive => bail!("mintime needs a first- or second-order certificate"),
            };
            let deltas = parse_reals(&args.deltas, "--deltas")?;
            if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                bail!("--deltas needs at least two positive radii");
            }
            let probe = min_time_probe(sys, tf, &cert, x, &deltas, args.samples, args.seed, args.steps)?;
            with_output(out, |w| probe.write_csv(w))?;
            let pass = (probe.fitted_exponent - expected).abs() <= EXPONENT_BAND
                && probe.censored_fraction() <= MAX_CENSORED_FRACTION;
            (
                pass,
                format!(
                    "mintime exponent={:.4} expected={expected}±{EXPONENT_BAND} censored={:.3}",
                    probe.fitted_exponent,
                    probe.censored_fraction()
                ),
            )
        }
    };
    println!("{} {line}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { 0 } else { EXIT_INCONCLUSIVE })
}

fn catalog_cmd(action: CatalogAction) -> Result<u8> {
    match action {
        CatalogAction::List => {
            for e in catalog::ENTRIES.iter() {
                println!("{:<16}{}", e.name, e.summary);
            }
        }
        CatalogAction::Show { name } => print!("{}", catalog::entry(&name)?.config),
    }
    Ok(0)
}
