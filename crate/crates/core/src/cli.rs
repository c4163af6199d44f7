//! Command-line runner: single sessions (`run`), parameter sweeps
//! (`sweep`), and the brute-force verification suite (`verify`).
//!
//! Exit codes: 0 success, 1 verification or agreement failure, 2 usage
//! error.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::gf2::BitString;
use crate::hashing::RoundBasis;
use crate::oracle;
use crate::pairstate::{ChannelParams, Sampling};
use crate::rates::{key_rate, tagged_key_rate, RateInputs};
use crate::session::{run_session, Mode, SessionConfig};

#[derive(Parser)]
#[command(name = "bdsw", version, about = "Key-distillation protocol simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one or more full sessions and emit one record per run.
    Run(RunArgs),
    /// Run a cartesian grid over error and tag rates.
    Sweep(SweepArgs),
    /// Run the brute-force oracle suite.
    Verify(VerifyArgs),
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} outside [0, 0.5)"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} outside [0, 1)"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ent,
    Pm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Exact,
    Bernoulli,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Raw pair count before the error test.
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_rate)]
    delta_b: f64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_rate)]
    delta_p: f64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_fraction)]
    tag_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    test_fraction: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Ent)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SamplingArg::Exact)]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 10)]
    ec_slack: usize,
    #[arg(long, default_value_t = 10)]
    pa_slack: usize,
    #[arg(long, env = "BDSW_SEED", default_value_t = 0)]
    seed: u64,
    /// Alias for --seed: both protocol modes share randomness streams,
    /// so a pm run paired with an ent run of the same seed yields the
    /// identical key.
    #[arg(long)]
    paired_seed: Option<u64>,
    /// Number of independent sessions (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Comma-separated grid values.
    #[arg(long, value_parser = parse_rate, value_delimiter = ',', default_value = "0.05")]
    delta_b: Vec<f64>,
    #[arg(long, value_parser = parse_rate, value_delimiter = ',', default_value = "0.05")]
    delta_p: Vec<f64>,
    #[arg(long, value_parser = parse_fraction, value_delimiter = ',', default_value = "0")]
    tag_fraction: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    test_fraction: f64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Exact)]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 10)]
    ec_slack: usize,
    #[arg(long, default_value_t = 10)]
    pa_slack: usize,
    #[arg(long, env = "BDSW_SEED", default_value_t = 0)]
    seed: u64,
    /// Sessions per grid point.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest pair count for the exhaustive protocol check.
    #[arg(long, default_value_t = 3)]
    max_pairs: usize,
    /// Trials per channel for the tagged-phase independence check.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, env = "BDSW_SEED", default_value_t = 0)]
    seed: u64,
}

/// One emitted record per session. CSV column order matches the field
/// order here.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n: usize,
    pub delta_b: f64,
    pub delta_p: f64,
    pub tag_fraction: f64,
    pub mode: String,
    /// Asymptotic rate recomputed from the closed forms.
    pub formula_rate: f64,
    pub realized_rate: f64,
    pub key_len: usize,
    pub agreed: bool,
    pub abort_reason: Option<String>,
    pub wall_time_ms: u64,
}

pub const CSV_HEADER: &str = "seed,n,delta_b,delta_p,tag_fraction,mode,formula_rate,\
realized_rate,key_len,agreed,abort_reason,wall_time_ms";

impl RunRecord {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.delta_b,
            self.delta_p,
            self.tag_fraction,
            self.mode,
            self.formula_rate,
            self.realized_rate,
            self.key_len,
            self.agreed,
            self.abort_reason.as_deref().unwrap_or(""),
            self.wall_time_ms,
        )
    }
}

fn formula_rate(delta_b: f64, delta_p: f64, tag_fraction: f64) -> f64 {
    let inputs = match RateInputs::new(delta_b, delta_p, tag_fraction, 1) {
        Ok(i) => i,
        Err(_) => return 0.0,
    };
    if tag_fraction > 0.0 {
        tagged_key_rate(&inputs).map(|t| t.rf).unwrap_or(0.0)
    } else {
        key_rate(&inputs).unwrap_or(0.0)
    }
}

fn session_config(
    n: usize,
    delta_b: f64,
    delta_p: f64,
    tag_fraction: f64,
    test_fraction: f64,
    sampling: SamplingArg,
    mode: ModeArg,
    ec_slack: usize,
    pa_slack: usize,
    seed: u64,
) -> Result<SessionConfig, String> {
    let mut channel =
        ChannelParams::new(delta_b, delta_p, tag_fraction).map_err(|e| e.to_string())?;
    channel.sampling = match sampling {
        SamplingArg::Exact => Sampling::ExactCount,
        SamplingArg::Bernoulli => Sampling::Bernoulli,
    };
    let mode = match mode {
        ModeArg::Ent => Mode::Entanglement,
        ModeArg::Pm => Mode::PrepareMeasure,
    };
    let mut cfg = SessionConfig::new(n, channel, mode, seed);
    cfg.test_fraction = test_fraction;
    cfg.ec_slack = ec_slack;
    cfg.pa_slack = pa_slack;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn execute(cfg: &SessionConfig) -> RunRecord {
    let start = Instant::now();
    let result = run_session(cfg).expect("config validated before dispatch");
    let mode = match cfg.mode {
        Mode::Entanglement => "ent",
        Mode::PrepareMeasure => "pm",
    };
    RunRecord {
        seed: cfg.seed,
        n: cfg.n_raw,
        delta_b: cfg.channel.delta_b,
        delta_p: cfg.channel.delta_p,
        tag_fraction: cfg.channel.tag_fraction,
        mode: mode.to_string(),
        formula_rate: formula_rate(
            cfg.channel.delta_b,
            cfg.channel.delta_p,
            cfg.channel.tag_fraction,
        ),
        realized_rate: result.realized_rate,
        key_len: result.key_alice.len(),
        agreed: result.agreed,
        abort_reason: result.abort_reason.map(|r| format!("{r:?}")),
        wall_time_ms: start.elapsed().as_millis() as u64,
    }
}

fn emit(records: &[RunRecord], format: FormatArg, out: &Option<PathBuf>) -> Result<(), String> {
    let mut body = String::new();
    if matches!(format, FormatArg::Csv) {
        body.push_str(CSV_HEADER);
        body.push('\n');
    }
    for r in records {
        match format {
            FormatArg::Jsonl => {
                body.push_str(&serde_json::to_string(r).map_err(|e| e.to_string())?)
            }
            FormatArg::Csv => body.push_str(&r.to_csv()),
        }
        body.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| e.to_string()),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32, String> {
    let seed = args.paired_seed.unwrap_or(args.seed);
    let configs: Vec<SessionConfig> = (0..args.runs.max(1))
        .map(|k| {
            session_config(
                args.n,
                args.delta_b,
                args.delta_p,
                args.tag_fraction,
                args.test_fraction,
                args.sampling,
                args.mode,
                args.ec_slack,
                args.pa_slack,
                seed.wrapping_add(k as u64),
            )
        })
        .collect::<Result<_, _>>()?;
    let records: Vec<RunRecord> = configs.par_iter().map(execute).collect();
    emit(&records, args.format, &args.out)?;
    Ok(if records.iter().all(|r| r.agreed) { 0 } else { 1 })
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, String> {
    if args.delta_b.is_empty() || args.delta_p.is_empty() || args.tag_fraction.is_empty() {
        return Err("empty sweep grid".to_string());
    }
    let mut configs = Vec::new();
    let mut seed = args.seed;
    for &db in &args.delta_b {
        for &dp in &args.delta_p {
            for &tf in &args.tag_fraction {
                for _ in 0..args.runs.max(1) {
                    configs.push(session_config(
                        args.n,
                        db,
                        dp,
                        tf,
                        args.test_fraction,
                        args.sampling,
                        ModeArg::Ent,
                        args.ec_slack,
                        args.pa_slack,
                        seed,
                    )?);
                    seed = seed.wrapping_add(1);
                }
            }
        }
    }
    let records: Vec<RunRecord> = configs.par_iter().map(execute).collect();
    emit(&records, args.format, &args.out)?;

    // per-point summary of formula vs realized, on stderr so stdout
    // stays a clean record stream
    let runs = args.runs.max(1);
    eprintln!("delta_b  delta_p  tag      formula    mean_realized  agreed");
    for chunk in records.chunks(runs) {
        let mean: f64 =
            chunk.iter().map(|r| r.realized_rate).sum::<f64>() / chunk.len() as f64;
        let agreed = chunk.iter().filter(|r| r.agreed).count();
        let r0 = &chunk[0];
        eprintln!(
            "{:<8} {:<8} {:<8} {:<10.6} {:<14.6} {}/{}",
            r0.delta_b, r0.delta_p, r0.tag_fraction, r0.formula_rate, mean, agreed, runs
        );
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32, String> {
    use rand::SeedableRng;
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}{}", if ok { "ok  " } else { "FAIL" }, detail);
        if !ok {
            failures += 1;
        }
    };

    // 1. truth table against the label algebra, entry by entry
    let mut bad_entry = None;
    for (input, output) in oracle::bicnot_truth_table() {
        let ((a, b), (ap, bp)) = input;
        let (ctrl, tgt) = crate::hashing::bicnot(
            crate::pairstate::PairState::new(a, b),
            crate::pairstate::PairState::new(ap, bp),
        );
        if output != (ctrl.label(), tgt.label()) {
            bad_entry = Some(input);
            break;
        }
    }
    check(
        "bicnot-truth-table",
        bad_entry.is_none(),
        bad_entry.map(|e| format!(" (first mismatch at {e:?})")).unwrap_or_default(),
    );

    // 2. exhaustive protocol agreement for every size up to the cap
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(args.seed);
    for n in 2..=args.max_pairs.min(oracle::MAX_QUBITS / 2) {
        let all = BitString::from_bits(std::iter::repeat(true).take(n));
        let front = BitString::from_bits((0..n).map(|i| i < 2));
        let script = vec![
            oracle::ScriptedRound { basis: RoundBasis::Z, subset: all, dest: n - 1 },
            oracle::ScriptedRound { basis: RoundBasis::X, subset: front, dest: 0 },
        ];
        let script = &script[..if n > 2 { 2 } else { 1 }];
        match oracle::exhaustive_protocol_check(n, script, &mut rng) {
            Ok(report) => check(
                &format!("exhaustive-protocol n={n}"),
                report.agreements == report.cases,
                format!(" ({}/{} cases)", report.agreements, report.cases),
            ),
            Err(e) => check(&format!("exhaustive-protocol n={n}"), false, format!(" ({e})")),
        }
    }

    // 3. tagged-phase independence across a few channels, 5 sigma
    let sigma5 = 5.0 * 0.5 / (args.trials as f64).sqrt();
    let channels = [
        ("identity", [1.0, 0.0, 0.0, 0.0]),
        ("depolarizing", [0.25, 0.25, 0.25, 0.25]),
        ("biased", [0.6, 0.3, 0.05, 0.05]),
    ];
    for (name, weights) in channels {
        let ch = oracle::StochasticChannel::pauli_mixture(weights)
            .map_err(|e| e.to_string())?;
        let f = oracle::tagged_phase_independence(&ch, args.trials, &mut rng);
        check(
            &format!("tagged-phase {name}"),
            (f - 0.5).abs() <= sigma5,
            format!(" (fraction {f:.5}, tolerance {sigma5:.5})"),
        );
    }

    Ok(if failures == 0 { 0 } else { 1 })
}

/// Parse `args` and dispatch; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
