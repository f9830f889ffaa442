//! Command-line front end. `run` returns the process exit code:
//! 0 ok, 1 bad arguments or config, 2 failed validation or a violated bound,
//! 3 Green-function non-convergence, 4 enumeration cap exceeded.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use serde_json::json;

use crate::annealed::AnnealedModel;
use crate::config::{parse_beta_grid, parse_count, RunConfig};
use crate::error::{Error, Result};
use crate::green::{self, GreenTable};
use crate::lace::{self, LaceOptions, LaceTable};
use crate::simulate::{self, Method, SimConfig, SpeedEstimate};
use crate::VERSION;

#[derive(Parser, Debug)]
#[command(name = "rwpre", version, about = "Random walks in partially random environments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Cmd {
    /// Check the environment assumptions.
    Validate,
    /// Green-function diagnostics of the q-walk.
    Green,
    /// Enumerate lace-expansion coefficients and the speed series.
    Lace,
    /// Monte Carlo speed estimate at one β.
    Simulate,
    /// Speed estimates over a β grid.
    Sweep,
    /// Compare the truncated series with its bounds.
    VerifyBounds,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON spec, q-walk or example config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the result here; otherwise stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Master seed for walk and environment streams.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; falls back to RWPRE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Steps per replica, e.g. 1e6 [default: 1e6].
    #[arg(long, global = true)]
    steps: Option<String>,
    /// Independent replicas [default: 30].
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Longest lace diagram length.
    #[arg(long = "m-max", global = true)]
    m_max: Option<usize>,
    /// Most lace pieces.
    #[arg(long = "n-max", global = true)]
    n_max: Option<usize>,
    /// Override β (or the example parameter).
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// start:end:step, endpoints included.
    #[arg(long = "beta-grid", global = true)]
    beta_grid: Option<String>,
    /// Convolution powers in Green sums [default: 300].
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// Half-width of the convolution box [default: K].
    #[arg(long = "box-radius", global = true)]
    box_radius: Option<usize>,
    /// q-steps excluded at each end when looking for cuts [default: 200].
    #[arg(long, global = true)]
    guard: Option<usize>,
    /// Exact rational arithmetic for `lace`.
    #[arg(long, global = true)]
    rational: bool,
    /// naive, regeneration or series.
    #[arg(long, global = true, default_value = "naive")]
    method: String,
}

struct Outcome {
    body: String,
    summary: String,
    code: i32,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverging { .. } => 3,
        Error::CapExceeded { .. } => 4,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.common.threads.or_else(|| std::env::var("RWPRE_THREADS").ok().and_then(|v| v.parse().ok()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let result = pool.install(|| dispatch(&cli));
    match result {
        Ok(out) => {
            if let Err(e) = write_body(&cli.common, &out.body) {
                eprintln!("error: {e}");
                return 1;
            }
            if cli.common.out.is_some() {
                println!("{}", out.summary);
            } else {
                eprintln!("{}", out.summary);
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_body(c: &Common, body: &str) -> Result<()> {
    match &c.out {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let c = &cli.common;
    let path = c.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    match cli.cmd {
        Cmd::Validate => validate(c, &cfg),
        Cmd::Green => green_cmd(c, &cfg),
        Cmd::Lace => lace_cmd(c, &cfg),
        Cmd::Simulate => simulate_cmd(c, &cfg),
        Cmd::Sweep => sweep_cmd(c, &cfg),
        Cmd::VerifyBounds => bounds_cmd(c, &cfg),
    }
}

fn preamble(cfg: &RunConfig) -> String {
    format!("# rwpre {VERSION}\n# config_sha256 {}\n", cfg.hash)
}

fn csv_text(cfg: &RunConfig, header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(preamble(cfg) + &String::from_utf8(body).expect("csv is utf-8"))
}

fn json_text(cfg: &RunConfig, payload: serde_json::Value) -> String {
    let v = json!({ "version": VERSION, "config_sha256": cfg.hash, "result": payload });
    serde_json::to_string_pretty(&v).expect("json serializes") + "\n"
}

fn hdr(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn validate(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let spec = c.beta.map_or_else(|| spec.clone(), |b| spec.with_beta(b));
    let report = spec.validate();
    let body = match c.format {
        Format::Json => json_text(cfg, serde_json::to_value(&report)?),
        Format::Csv => {
            let rows: Vec<Vec<String>> =
                report.checks.iter().map(|k| vec![k.name.clone(), k.pass.to_string(), k.detail.clone()]).collect();
            csv_text(cfg, &hdr(&["check", "pass", "detail"]), &rows)?
        }
    };
    let fails: Vec<&str> = report.failures().iter().map(|k| k.name.as_str()).collect();
    let summary = if fails.is_empty() {
        format!("validate: all {} checks pass", report.checks.len())
    } else {
        format!("validate: {} of {} checks fail ({})", fails.len(), report.checks.len(), fails.join(", "))
    };
    Ok(Outcome { body, summary, code: if fails.is_empty() { 0 } else { 2 } })
}

fn green_table(c: &Common, cfg: &RunConfig) -> Result<(GreenTable, f64)> {
    let (q, delta) = cfg.walk()?;
    let k = c.k.unwrap_or(green::DEFAULT_K);
    let r = c.box_radius.unwrap_or(k);
    Ok((GreenTable::compute(&q, k, r)?, delta))
}

fn green_cmd(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    let (table, delta) = green_table(c, cfg)?;
    let rows = green::rows(&table, delta);
    let a3 = green::a3_report(&table);
    let grid: Vec<f64> = (0..=1000).map(|i| 0.5 + i as f64 * 0.0005).collect();
    let dq = green::delta_q_surrogate(&table, &grid);
    let body = match c.format {
        Format::Json => json_text(
            cfg,
            json!({ "rows": rows, "a3": a3, "route": table.route, "mass_deficit": table.mass_deficit, "delta_q_surrogate": dq }),
        ),
        Format::Csv => {
            let rs: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.i.to_string(),
                        r.k.to_string(),
                        r.sup_estimate.to_string(),
                        r.tail_ratio.to_string(),
                        r.converged.to_string(),
                        r.g_at_origin.to_string(),
                        r.alpha.to_string(),
                    ]
                })
                .collect();
            csv_text(cfg, &hdr(&["i", "K", "sup_estimate", "tail_ratio", "converged", "G_at_origin", "alpha"]), &rs)?
        }
    };
    let needed = table.stat(1).converged && table.stat(2).converged;
    let summary = format!(
        "green: G(o)={:.6} (<2: {}), converged i=1..4: {:?}, alpha={}",
        a3.g_origin,
        a3.g_origin_lt_2,
        table.stats.iter().map(|s| s.converged).collect::<Vec<_>>(),
        rows[0].alpha
    );
    Ok(Outcome { body, summary, code: if needed { 0 } else { 3 } })
}

fn warn_invalid(spec: &crate::environment::EnvironmentSpec) {
    let report = spec.validate();
    if !report.all_pass() {
        let names: Vec<&str> = report.failures().iter().map(|k| k.name.as_str()).collect();
        eprintln!("warning: spec fails {}", names.join(", "));
    }
}

fn lace_opts(c: &Common, default_m: usize) -> LaceOptions {
    let m = c.m_max.unwrap_or(default_m);
    LaceOptions::new(m, c.n_max.unwrap_or(m.saturating_sub(1)).clamp(1, lace::MAX_N))
}

fn lace_cmd(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let spec = c.beta.map_or_else(|| spec.clone(), |b| spec.with_beta(b));
    warn_invalid(&spec);
    let opts = lace_opts(c, 6);
    let table: LaceTable<f64> = if c.rational {
        lace::pi_table_model(&AnnealedModel::<BigRational>::new(&spec), opts, spec.beta)?.to_f64()
    } else {
        lace::pi_table_model(&AnnealedModel::<f64>::new(&spec), opts, spec.beta)?
    };
    let series = lace::speed_series(&table);
    let summary_rows = table.summary();
    let body = match c.format {
        Format::Json => {
            let entries: Vec<serde_json::Value> = table
                .coeffs
                .iter()
                .flat_map(|(&(m, n), t)| {
                    t.iter().map(move |((x, u), coef)| {
                        let d = table.d;
                        let y = x.shifted(*u);
                        json!({
                            "m": m, "N": n,
                            "x": x.coords(d), "y": y.coords(d),
                            "pi": coef.pi, "phi": coef.phi,
                        })
                    })
                })
                .collect();
            json_text(
                cfg,
                json!({ "m_max": opts.m_max, "n_max": opts.n_max, "beta": spec.beta, "rational": c.rational,
                        "summary": summary_rows, "speed": series, "entries": entries }),
            )
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = summary_rows
                .iter()
                .map(|r| vec![r.m.to_string(), r.n.to_string(), r.drift_sum.to_string(), r.abs_sum.to_string()])
                .collect();
            let mut text = csv_text(cfg, &hdr(&["m", "N", "drift_sum", "abs_sum"]), &rows)?;
            // speed partial sums follow as a second table
            text.push('\n');
            let mut names = vec!["m".to_string()];
            names.extend((1..=table.d).map(|a| format!("v_{a}")));
            names.push("dv1_dbeta".into());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&names).map_err(|e| Error::Io(e.to_string()))?;
            let mut rec = vec!["1".to_string()];
            rec.extend(series.mean_step.iter().map(|x| x.to_string()));
            rec.push(table.mean_step_dbeta[0].to_string());
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
            for (i, p) in series.partial.iter().enumerate() {
                let mut rec = vec![(i + 2).to_string()];
                rec.extend(p.iter().map(|x| x.to_string()));
                rec.push(series.dbeta_partial[i].to_string());
                w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
            }
            text.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).unwrap());
            text
        }
    };
    let summary = format!(
        "lace: m_max={} n_max={} beta={} v1={:.12e} max|row sum|={:.3e}",
        opts.m_max,
        opts.n_max,
        spec.beta,
        series.v1(),
        table.max_abs_row_sum()
    );
    Ok(Outcome { body, summary, code: 0 })
}

fn sim_config(c: &Common) -> Result<SimConfig> {
    let n = parse_count(c.steps.as_deref().unwrap_or("1e6"))?;
    let reps = c.reps.unwrap_or(30);
    if n == 0 || reps == 0 {
        return Err(Error::Config("--steps and --reps must be positive".into()));
    }
    let mut s = SimConfig::new(n, reps, c.seed);
    if let Some(g) = c.guard {
        s.guard = g;
    }
    Ok(s)
}

fn estimate(c: &Common, cfg: &RunConfig, beta: Option<f64>, method: Method, sim: &SimConfig) -> Result<SpeedEstimate> {
    match method {
        Method::Series => {
            let spec = cfg.spec()?;
            let spec = beta.map_or_else(|| spec.clone(), |b| spec.with_beta(b));
            let o = lace_opts(c, 6);
            simulate::series_estimate(&spec, o.m_max, o.n_max)
        }
        _ => simulate::speed_estimate(&cfg.law(beta)?, sim, method),
    }
}

fn speed_header(d: usize) -> Vec<String> {
    let mut h = hdr(&["beta", "method", "n", "reps"]);
    h.extend((1..=d).map(|a| format!("v_{a}")));
    h.extend((1..=d).map(|a| format!("ci_{a}")));
    h.push("cuts_per_kstep".into());
    h.push("mean_dtau".into());
    h
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn speed_row(beta: Option<f64>, e: &SpeedEstimate) -> Vec<String> {
    let mut r = vec![opt(beta), e.method.name().into(), e.n.to_string(), e.reps.to_string()];
    r.extend(e.point.iter().map(|x| x.to_string()));
    r.extend(e.ci_halfwidth.iter().map(|x| x.to_string()));
    r.push(opt(e.cuts_per_kstep));
    r.push(opt(e.mean_dtau));
    r
}

fn target_beta(cfg: &RunConfig, beta: Option<f64>) -> Option<f64> {
    beta.or(match &cfg.target {
        crate::config::Target::Spec(s) => Some(s.beta),
        crate::config::Target::Example { param, .. } => Some(*param),
        crate::config::Target::Walk { .. } => None,
    })
}

fn simulate_cmd(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    if let Ok(s) = cfg.spec() {
        warn_invalid(s);
    }
    let method = Method::parse(&c.method)?;
    let sim = sim_config(c)?;
    let e = estimate(c, cfg, c.beta, method, &sim)?;
    let beta = target_beta(cfg, c.beta);
    let body = match c.format {
        Format::Json => json_text(cfg, json!({ "beta": beta, "estimate": e })),
        Format::Csv => csv_text(cfg, &speed_header(e.point.len()), &[speed_row(beta, &e)])?,
    };
    let mut summary = String::from("simulate:");
    for (a, (p, ci)) in e.point.iter().zip(&e.ci_halfwidth).enumerate() {
        let _ = write!(summary, " v_{}={:.6}±{:.6}", a + 1, p, ci);
    }
    Ok(Outcome { body, summary, code: 0 })
}

fn sweep_cmd(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    let grid = parse_beta_grid(c.beta_grid.as_deref().ok_or_else(|| Error::Config("--beta-grid is required".into()))?)?;
    if let Ok(s) = cfg.spec() {
        warn_invalid(s);
    }
    let method = Method::parse(&c.method)?;
    let sim = sim_config(c)?;
    let mut ests = Vec::new();
    for &b in &grid {
        ests.push((b, estimate(c, cfg, Some(b), method, &sim)?));
    }
    let d = ests[0].1.point.len();
    let body = match c.format {
        Format::Json => {
            let rows: Vec<serde_json::Value> = ests.iter().map(|(b, e)| json!({ "beta": b, "estimate": e })).collect();
            json_text(cfg, json!(rows))
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = ests.iter().map(|(b, e)| speed_row(Some(*b), e)).collect();
            csv_text(cfg, &speed_header(d), &rows)?
        }
    };
    let v1: Vec<f64> = ests.iter().map(|(_, e)| e.point[0]).collect();
    let monotone = v1.windows(2).all(|w| w[1] >= w[0]);
    let summary = format!("sweep: {} grid points, v_1 nondecreasing: {monotone}", grid.len());
    Ok(Outcome { body, summary, code: 0 })
}

fn bounds_cmd(c: &Common, cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let spec = c.beta.map_or_else(|| spec.clone(), |b| spec.with_beta(b));
    warn_invalid(&spec);
    let opts = lace_opts(c, 8);
    let opts = LaceOptions { n_max: c.n_max.unwrap_or(3).clamp(1, lace::MAX_N), ..opts };
    let (gt, _) = green_table(c, cfg)?;
    let table = lace::pi_table_model(&AnnealedModel::<f64>::new(&spec), opts, spec.beta)?;
    let report = lace::verify_bounds(&spec, &table, &gt.constants())?;
    let body = match c.format {
        Format::Json => json_text(cfg, json!({ "green": gt.constants(), "report": report })),
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .checks
                .iter()
                .map(|k| {
                    vec![k.name.clone(), k.n.to_string(), k.k.to_string(), k.lhs.to_string(), k.rhs.to_string(), k.slack.to_string(), k.pass.to_string()]
                })
                .collect();
            csv_text(cfg, &hdr(&["bound", "N", "k", "lhs", "rhs", "slack", "pass"]), &rows)?
        }
    };
    let failed = report.checks.iter().filter(|k| !k.pass).count();
    let c2 = green::c2_surrogate(spec.delta, &gt.constants());
    let summary = format!(
        "verify-bounds: {} checks, {} violated; alpha={:.6}; F+J+H truncated total {:.3e} vs kappa*rho {:.3e}; C2 surrogate {:.4}",
        report.checks.len(),
        failed,
        report.alpha,
        report.fjh_total,
        report.kappa_rho,
        c2
    );
    Ok(Outcome { body, summary, code: if failed == 0 { 0 } else { 2 } })
}
