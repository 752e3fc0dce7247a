use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use robust_search::calibrate::{self, CalibrationOptions, Loss, Support};
use robust_search::derive::derive_rule;
use robust_search::rules::rho;
use robust_search::simulator::{estimate_value, simulate_paths, SimOptions};
use robust_search::verifier::{compute_l, EnvClass, RatioOptions, RatioReport};
use robust_search::{CostModel, Environment, StoppingRule};
use serde_json::Value;

use robust_search_cli::format::{round_json, sig};
use robust_search_cli::rule_spec::{self, parse_xbar, RuleContext, RuleSpec};
use robust_search_cli::service::{self, RatioRequest};
use robust_search_cli::session::SessionStore;
use robust_search_cli::AppError;

const STATE_ENV: &str = "ROBUST_SEARCH_STATE";

#[derive(Parser)]
#[command(name = "robust-search", version, about = "Robust stopping rules for sequential search")]
struct Cli {
    /// Significant digits in printed numbers.
    #[arg(long, global = true, default_value_t = 6, value_parser = clap::value_parser!(u8).range(1..=15))]
    precision: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Operations on a single rule.
    Rule {
        #[command(subcommand)]
        action: RuleAction,
    },
    /// Worst-case performance ratio of a rule.
    Ratio(RatioArgs),
    /// rho(x) at the tabulated starting values.
    Table1,
    /// Calibrated linear rules.
    Table2(TableArgs),
    /// Calibrated square-root rules.
    Table3(TableArgs),
    /// Build a rule that guarantees ratio `r`.
    Derive {
        #[arg(long)]
        r: f64,
        #[arg(long)]
        delta: f64,
        /// Cells per discount interval.
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Lowest start where the robust rule still attains its bound against two-point environments.
    #[command(name = "compute-L", alias = "compute-l")]
    ComputeL {
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1e-4)]
        resolution: f64,
    },
    /// Monte Carlo estimate of a rule's payoff.
    Simulate(SimulateArgs),
    /// Read offers from stdin and recommend stop or continue.
    Advise(AdviseArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Append-only session log, replayed on start.
        #[arg(long)]
        state_file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RuleAction {
    /// Print p(y).
    Eval {
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long)]
        y: f64,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long, default_value = "1", value_parser = parse_xbar)]
        xbar: f64,
    },
}

#[derive(Args)]
struct RuleArgs {
    /// constant, pstar, binary_robust, linear, sqrt, piecewise or dynamic_robust.
    #[arg(long = "rule", visible_alias = "family")]
    family: String,
    /// JSON object with family parameters, e.g. '{"alpha": 1.19}'.
    #[arg(long)]
    params: Option<String>,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
}

impl RuleArgs {
    fn cost(&self) -> Result<CostModel, AppError> {
        Ok(CostModel::new(self.delta, self.kappa)?)
    }

    fn build(&self, x0: Option<f64>, xbar: f64) -> Result<StoppingRule, AppError> {
        let params = rule_spec::parse_params(self.params.as_deref())?;
        if params.contains_key("family") {
            let rule: StoppingRule = serde_json::from_value(Value::Object(params))
                .map_err(|e| AppError::Input(format!("params: {e}")))?;
            rule.validate()?;
            return Ok(rule);
        }
        rule_spec::build(&self.family, &params, &RuleContext { cost: self.cost()?, x0, xbar })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Binary,
    General,
}

#[derive(Args)]
struct RatioArgs {
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    x0: f64,
    /// Upper bound on alternatives; `inf` for unbounded.
    #[arg(long, value_parser = parse_xbar)]
    xbar: f64,
    #[arg(long, value_enum, default_value_t = ClassArg::General)]
    class: ClassArg,
    #[arg(long)]
    y_points: Option<usize>,
    /// Also search two-point environments.
    #[arg(long)]
    two_point: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum SupportArg {
    Interval,
    Endpoints,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Absolute,
    Relative,
}

#[derive(Args)]
struct TableArgs {
    /// Comma-separated discount factors.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0 / 89.0)]
    x0_low: f64,
    #[arg(long, value_enum, default_value_t = SupportArg::Interval)]
    support: SupportArg,
    #[arg(long, value_enum, default_value_t = LossArg::Absolute)]
    loss: LossArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Environment as JSON, e.g. '{"type":"Binary","z":1,"sigma":0.3}'.
    #[arg(long)]
    env: String,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value = "1", value_parser = parse_xbar)]
    xbar: f64,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Print every path as CSV instead of the estimate.
    #[arg(long)]
    paths: bool,
}

#[derive(Args)]
struct AdviseArgs {
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    x0: f64,
    #[arg(long, default_value = "1", value_parser = parse_xbar)]
    xbar: f64,
    /// Drawn at random and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

struct Out {
    digits: usize,
    buf: String,
}

impl Out {
    fn num(&self, v: f64) -> String {
        sig(v, self.digits)
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.buf.push_str(s.as_ref());
        self.buf.push('\n');
    }

    fn json<T: Serialize>(&mut self, v: &T) {
        let mut v = serde_json::to_value(v).expect("serializable");
        round_json(&mut v, self.digits);
        self.line(serde_json::to_string_pretty(&v).unwrap());
    }
}

fn ratio_csv(out: &mut Out, rep: &RatioReport) {
    out.line("y,ratio,argmin_z,argmin_sigma,scenario");
    for p in &rep.curve {
        let z = p.z.map(|z| out.num(z)).unwrap_or_default();
        let row = format!("{},{},{},{},{}", out.num(p.y), out.num(p.ratio), z, out.num(p.sigma), p.scenario.as_str());
        out.line(row);
    }
}

const TABLE1: [(&str, f64); 8] = [
    ("1/89", 1.0 / 89.0),
    ("1/20", 1.0 / 20.0),
    ("1/10", 0.1),
    ("1/6", 1.0 / 6.0),
    ("1/5", 0.2),
    ("1/4", 0.25),
    ("1/3", 1.0 / 3.0),
    ("1/2", 0.5),
];
const TABLE2_DELTAS: [f64; 12] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999];
const TABLE3_DELTAS: [f64; 4] = [0.9, 0.95, 0.99, 0.999];

fn table(out: &mut Out, args: &TableArgs, default: &[f64], sqrt: bool) -> Result<(), AppError> {
    let opts = CalibrationOptions {
        x0_low: args.x0_low,
        support: match args.support {
            SupportArg::Interval => Support::Interval,
            SupportArg::Endpoints => Support::Endpoints,
        },
        loss: match args.loss {
            LossArg::Absolute => Loss::Absolute,
            LossArg::Relative => Loss::Relative,
        },
        ..Default::default()
    };
    out.line("delta,param_star,eps_star");
    for &d in args.deltas.as_deref().unwrap_or(default) {
        let c = if sqrt {
            calibrate::calibrate_sqrt(d, &opts)?
        } else {
            calibrate::calibrate_linear(d, &opts)?
        };
        let row = format!("{},{},{}", out.num(d), out.num(c.param), out.num(c.loss));
        out.line(row);
    }
    Ok(())
}

fn parse_env(text: &str) -> Result<Environment, AppError> {
    let env: Environment =
        serde_json::from_str(text).map_err(|e| AppError::Input(format!("env: {e}")))?;
    env.validate()?;
    Ok(env)
}

/// Uniform draw for `round` under `seed`, one ChaCha stream per round.
fn advice_draw(seed: u64, round: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng.random::<f64>()
}

fn advise(args: &AdviseArgs, digits: usize) -> Result<(), AppError> {
    let rule = args.rule.build(Some(args.x0), args.xbar)?;
    if !(args.x0 >= 0.0 && args.x0.is_finite()) {
        return Err(AppError::Input(format!("x0 must be finite and nonnegative, got {}", args.x0)));
    }
    let seed = args.seed.unwrap_or_else(|| rand::rng().random());
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let report = |w: &mut io::StdoutLock, round: u64, y: f64| -> io::Result<()> {
        let p = rule.prob(y);
        let draw = advice_draw(seed, round);
        let advice = if draw < p { "stop" } else { "continue" };
        writeln!(
            w,
            "round={round} y={} p={} seed={seed} draw={} advice={advice}",
            sig(y, digits),
            sig(p, digits),
            sig(draw, digits)
        )?;
        w.flush()
    };
    let mut y = args.x0;
    let mut round = 0;
    report(&mut w, round, y)?;
    for line in io::stdin().lock().lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t == "q" || t == "quit" {
            break;
        }
        match t.parse::<f64>() {
            Ok(x) if x.is_finite() && x >= 0.0 => {
                round += 1;
                y = y.max(x);
                report(&mut w, round, y)?;
            }
            _ => {
                let e = AppError::Input(format!("not an offer: {t:?}"));
                eprintln!("{}", e.to_json());
            }
        }
    }
    Ok(())
}

fn serve(port: u16, host: &str, state_file: Option<PathBuf>) -> Result<(), AppError> {
    let path = std::env::var_os(STATE_ENV).map(PathBuf::from).or(state_file);
    let store = match &path {
        Some(p) => SessionStore::open(p)?,
        None => SessionStore::in_memory(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        io::stdout().flush()?;
        axum::serve(listener, service::router(store))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn run(cli: Cli) -> Result<String, AppError> {
    let digits = cli.precision as usize;
    let mut out = Out { digits, buf: String::new() };
    match cli.command {
        Command::Rule { action: RuleAction::Eval { rule, y, x0, xbar } } => {
            let r = rule.build(x0, xbar)?;
            let p = service::evaluate(&r, y)?;
            out.line(out.num(p));
        }
        Command::Ratio(a) => {
            let req = RatioRequest {
                rule: RuleSpec::Named(a.rule.family.clone()),
                params: rule_spec::parse_params(a.rule.params.as_deref())?,
                x0: a.x0,
                xbar: a.xbar.is_finite().then_some(a.xbar),
                delta: a.rule.delta,
                kappa: a.rule.kappa,
                class: match a.class {
                    ClassArg::Binary => EnvClass::Binary,
                    ClassArg::General => EnvClass::General,
                },
                y_points: a.y_points,
                two_point: a.two_point,
            };
            let rep = service::run_ratio(&req)?;
            match a.format {
                Format::Json => out.json(&rep),
                Format::Csv => ratio_csv(&mut out, &rep),
            }
        }
        Command::Table1 => {
            out.line("x0_over_xbar,rho");
            for (label, x) in TABLE1 {
                let row = format!("{label},{}", out.num(rho(x)));
                out.line(row);
            }
        }
        Command::Table2(a) => table(&mut out, &a, &TABLE2_DELTAS, false)?,
        Command::Table3(a) => table(&mut out, &a, &TABLE3_DELTAS, true)?,
        Command::Derive { r, delta, grid, format } => {
            let d = derive_rule(r, delta, grid, Default::default())?;
            match format {
                Format::Json => out.json(&d),
                Format::Csv => {
                    let StoppingRule::Piecewise { knots, probs } = &d.rule else { unreachable!() };
                    out.line("y_lo,y_hi,p");
                    for i in 0..knots.len() {
                        let hi = knots.get(i + 1).copied().unwrap_or(1.0);
                        let row = format!("{},{},{}", out.num(knots[i]), out.num(hi), out.num(probs[i]));
                        out.line(row);
                    }
                }
            }
        }
        Command::ComputeL { delta, resolution } => {
            let l = compute_l(delta, resolution, &RatioOptions::default())?;
            out.line(out.num(l));
        }
        Command::Simulate(a) => {
            let env = parse_env(&a.env)?;
            let rule = a.rule.build(Some(a.x0), a.xbar)?;
            let cost = a.rule.cost()?;
            let opts = SimOptions { max_rounds: a.max_rounds, ..Default::default() };
            if a.paths {
                out.line("path_id,stop_round,y_at_stop,payoff");
                for (i, p) in simulate_paths(&env, &rule, a.x0, &cost, a.n, a.seed, &opts)?.iter().enumerate() {
                    let row = format!("{i},{},{},{}", p.stop_round, out.num(p.y_at_stop), out.num(p.payoff));
                    out.line(row);
                }
            } else {
                let est = estimate_value(&env, &rule, a.x0, &cost, a.n, a.seed, &opts)?;
                out.json(&serde_json::json!({
                    "mean": est.mean,
                    "standard_error": est.standard_error,
                    "n_paths": est.n_paths,
                    "seed": a.seed,
                }));
            }
        }
        Command::Advise(a) => advise(&a, digits)?,
        Command::Serve { port, host, state_file } => serve(port, &host, state_file)?,
    }
    Ok(out.buf)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            let text = text.join(" ");
            let text = text.trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({"error": text, "kind": "usage"}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(if matches!(e, AppError::Io(_)) { 1 } else { 2 })
        }
    }
}
