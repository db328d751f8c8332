use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eunomia::harness::config::{ExperimentConfig, Protocol};
use eunomia::harness::metrics::summarize;
use eunomia::harness::oracle::{check_causal, Verdict};
use eunomia::harness::suites::{run_suite, SuiteName};
use eunomia::harness::trace::{oracle_events, parse_trace};
use eunomia::harness::{run_with_trace, MetricsReport};
use eunomia::Error;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "eunomia", version, about = "Causal geo-replication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics, summary and trace.
    Run {
        /// TOML experiment config; defaults to the built-in three-datacenter setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "EUNOMIA_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Skip writing the JSON-lines trace.
        #[arg(long)]
        no_trace: bool,
    },
    /// Run a named multi-protocol suite and write comparison tables.
    Suite {
        #[arg(long)]
        suite: SuiteName,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Seeds as `a-b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "1-5", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, env = "EUNOMIA_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
    },
    /// Re-run the causal checker on a persisted trace.
    Check { trace: PathBuf },
    /// Validate a config file and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the built-in config for a protocol.
    Config {
        #[arg(long, default_value = "eunomia")]
        protocol: Protocol,
    },
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("`{s}` is not `a-b` or a comma-separated list of seeds");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(Seeds(seeds))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            protocol,
            no_trace,
        } => cmd_run(config.as_deref(), seed, &out_dir, protocol, !no_trace),
        Command::Suite {
            suite,
            jobs,
            seeds,
            out_dir,
        } => cmd_suite(suite, &seeds.0, jobs, &out_dir),
        Command::Check { trace } => cmd_check(&trace),
        Command::Validate { config } => load_config(&config).map(|cfg| {
            print!("{}", cfg.to_toml());
            EXIT_OK
        }),
        Command::Config { protocol } => {
            print!("{}", ExperimentConfig::preset(protocol).to_toml());
            Ok(EXIT_OK)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ExperimentConfig::from_toml(&text).map_err(|e| format!("invalid config {}:\n{e}", path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(
    config: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
    protocol: Option<Protocol>,
    trace: bool,
) -> Result<u8, String> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    let out = run_with_trace(&cfg, trace).map_err(|e| match e {
        Error::Config(errs) => format!("invalid config:\n{errs}"),
        other => other.to_string(),
    })?;
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let r = &out.report;
    write(out_dir, "config.toml", &cfg.to_toml())?;
    write(out_dir, "visibility.csv", &r.visibility_csv())?;
    write(out_dir, "ops.csv", &r.ops_csv())?;
    write(out_dir, "summary.csv", &r.summary_csv())?;
    let summary = run_summary(r);
    write(out_dir, "summary.txt", &summary)?;
    if let Some(t) = &out.trace {
        write(out_dir, "trace.jsonl", t)?;
    }
    print!("{summary}");
    println!("outputs written to {}", out_dir.display());
    Ok(verdict_code(&r.verdict))
}

fn run_summary(r: &MetricsReport) -> String {
    let c = &r.counters;
    let mut s = String::new();
    let _ = writeln!(s, "protocol: {}  seed: {}", r.protocol, r.seed);
    let _ = writeln!(s, "reads: {}  updates: {}  remote applies: {}", c.reads, c.updates, c.remote_applies);
    let _ = writeln!(s, "update latency (us): {}", summarize(&r.update_latencies()));
    let m = r.emissions.len();
    for o in 0..m {
        for d in (0..m).filter(|&d| d != o) {
            let _ = writeln!(s, "extra visibility dc{o}->dc{d} (us): {}", summarize(&r.extra_delays(o, d)));
        }
    }
    let _ = writeln!(
        s,
        "metadata messages: {}  stream violations: {}  still pending: {}",
        c.metadata_messages, c.stream_violations, c.still_pending
    );
    let _ = writeln!(s, "trace digest: {}", r.trace_digest);
    s.push_str(&verdict_text(&r.verdict));
    s
}

fn verdict_text(v: &Verdict) -> String {
    let mut s = String::new();
    if v.passed() {
        let _ = writeln!(s, "causal check: pass ({} events)", v.events);
    } else {
        let _ = writeln!(s, "causal check: {} violation(s)", v.violations.len());
        for x in v.violations.iter().take(10) {
            let _ = writeln!(s, "  {} visible at dc{} before {}", x.update, x.dc, x.missing);
        }
    }
    s
}

fn verdict_code(v: &Verdict) -> u8 {
    if v.passed() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn cmd_suite(suite: SuiteName, seeds: &[u64], jobs: usize, out_dir: &Path) -> Result<u8, String> {
    let out = run_suite(suite, seeds, jobs).map_err(|e| e.to_string())?;
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    for (name, csv) in &out.tables {
        write(out_dir, name, csv)?;
    }
    println!("suite {suite}: {} runs, {} tables", out.runs, out.tables.len());
    if let Some((name, csv)) = out.tables.first() {
        println!("{name}:\n{csv}");
    }
    println!("causal violations under causal protocols: {}", out.violations);
    println!("outputs written to {}", out_dir.display());
    Ok(if out.violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_check(path: &Path) -> Result<u8, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let records = parse_trace(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let events = oracle_events(&records);
    if events.is_empty() {
        println!("no events");
        return Ok(EXIT_OK);
    }
    let verdict = check_causal(&events).map_err(|e| format!("{}: {e}", path.display()))?;
    print!("{}", verdict_text(&verdict));
    Ok(verdict_code(&verdict))
}
