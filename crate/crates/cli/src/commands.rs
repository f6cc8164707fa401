use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use adaptive_pir::field::FieldModulus;
use adaptive_pir::framework::{certify_framework, BasisSet, FrameworkKind};
use adaptive_pir::params::{default_modulus, derive_system, select_parameters, SystemParams};
use adaptive_pir::protocol::{check_privacy, check_secrecy, format_ratio, rate_and_cost, SubsetSelection};
use adaptive_pir::query_array::{build_for_lambda, build_query_array, column_specs, verify_conditions};
use adaptive_pir::simulator::{run_session, sweep_rates, SessionConfig, SimError};

use crate::{ArrayFormat, AuditMode, Command, SystemArgs, TextFormat};

pub const SCHEMA_VERSION: u32 = 1;

pub struct Outcome {
    pub stdout: String,
    pub passed: bool,
}

impl Outcome {
    fn pass(stdout: String) -> Self {
        Outcome { stdout, passed: true }
    }
}

type CmdResult = Result<Outcome, String>;

fn system(args: &SystemArgs) -> Result<SystemParams, String> {
    derive_system(args.n, args.k, args.x, args.t, args.m).map_err(|e| e.to_string())
}

fn basis(params: &SystemParams, kind: FrameworkKind, q: Option<u64>) -> Result<BasisSet, String> {
    let modulus = match q {
        Some(q) => FieldModulus::new(q).map_err(|e| e.to_string())?,
        None => default_modulus(params),
    };
    let enc = select_parameters(params, modulus).map_err(|e| e.to_string())?;
    BasisSet::new(kind, enc, params.clone()).map_err(|e| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn status(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Params { system: args, format } => params(&args, format),
        Command::Qarray {
            lambda,
            n,
            k,
            x,
            t,
            verify,
            format,
        } => {
            let lambda = match (lambda, n, k, x, t) {
                (Some(l), ..) => l,
                (None, Some(n), Some(k), Some(x), Some(t)) => {
                    derive_system(n, k, x, t, 1).map_err(|e| e.to_string())?.lambda()
                }
                _ => return Err("give either --lambda or all of -N -K -X -T".into()),
            };
            qarray(lambda, verify, format)
        }
        Command::Certify {
            system: args,
            framework,
            q,
            trials,
            seed,
            out,
        } => certify(&args, framework.into(), q, trials, seed.seed, out),
        Command::Simulate { config, out } => simulate(&config, out),
        Command::Rates {
            system: args,
            framework,
            trials,
            seed,
            out,
        } => rates(&args, framework.into(), trials, seed.seed, out),
        Command::Audit {
            system: args,
            framework,
            mode,
            draws,
            sample,
            seed,
            out,
        } => audit(&args, framework.into(), mode, draws, sample, seed.seed, out),
    }
}

#[derive(Serialize)]
struct ParamsDoc<'a> {
    params: &'a SystemParams,
    lambda: usize,
    #[serde(rename = "P")]
    p: usize,
    gamma: &'a [usize],
    thresholds: &'a [usize],
    q: u64,
    rates: Vec<String>,
}

fn params(args: &SystemArgs, format: TextFormat) -> CmdResult {
    let p = system(args)?;
    let q = default_modulus(&p).q();
    let rates = (0..p.lambda())
        .map(|s| rate_and_cost(&p, s).map(|rc| format_ratio(rc.rate)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    if format == TextFormat::Json {
        let doc = ParamsDoc {
            params: &p,
            lambda: p.lambda(),
            p: p.p(),
            gamma: p.gamma(),
            thresholds: p.thresholds(),
            q,
            rates,
        };
        return Ok(Outcome::pass(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"));
    }
    let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    let _ = writeln!(out, "N={} K={} X={} T={} M={}", p.n(), p.k(), p.x(), p.t(), p.m());
    let _ = writeln!(out, "lambda={}", p.lambda());
    let _ = writeln!(out, "P={}", p.p());
    let _ = writeln!(out, "gamma={}", join(p.gamma()));
    let _ = writeln!(out, "thresholds={}", join(p.thresholds()));
    let _ = writeln!(out, "q={q}");
    for (s, r) in rates.iter().enumerate() {
        let _ = writeln!(out, "rate S={s}: {r}");
    }
    Ok(Outcome::pass(out))
}

fn qarray(lambda: usize, verify: bool, format: ArrayFormat) -> CmdResult {
    let arr = build_for_lambda(lambda).map_err(|e| e.to_string())?;
    let report = verify.then(|| verify_conditions(&arr));
    let passed = report.as_ref().is_none_or(|r| r.all_hold());
    let stdout = match format {
        ArrayFormat::Json => {
            let doc = serde_json::json!({ "array": arr, "conditions": report });
            serde_json::to_string(&doc).expect("serializes") + "\n"
        }
        ArrayFormat::Pretty => {
            let mut out = arr.to_pretty();
            if let Some(r) = &report {
                for (name, c) in [("C0", &r.c0), ("C1", &r.c1), ("C2", &r.c2), ("C3", &r.c3)] {
                    match c.column {
                        None => {
                            let _ = writeln!(out, "{name}: pass");
                        }
                        Some(col) => {
                            let _ = writeln!(out, "{name}: FAIL at column {col}");
                        }
                    }
                }
            }
            out
        }
    };
    Ok(Outcome { stdout, passed })
}

fn certify(
    args: &SystemArgs,
    kind: FrameworkKind,
    q: Option<u64>,
    trials: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> CmdResult {
    let p = system(args)?;
    let b = basis(&p, kind, q)?;
    let cert = certify_framework(&b, trials, seed).map_err(|e| e.to_string())?;
    if let Some(path) = out {
        write_file(&path, &(cert.to_json() + "\n"))?;
    }
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{kind} framework over GF({}), N={} K={} X={} T={}",
        b.enc().modulus().q(),
        p.n(),
        p.k(),
        p.x(),
        p.t()
    );
    for (name, ok) in [("F0", cert.f0), ("F1", cert.f1), ("F2", cert.f2), ("F3", cert.f3)] {
        let _ = writeln!(text, "{name}: {}", status(ok));
    }
    for w in &cert.witnesses {
        let _ = writeln!(text, "witness {}: servers {:?} rows {:?} known {:?}: {}", w.condition, w.servers, w.rows, w.known, w.detail);
    }
    Ok(Outcome {
        stdout: text,
        passed: cert.all_hold(),
    })
}

/// Versioned experiment description for `simulate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub session: SessionConfig,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub verbose: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
}

fn simulate(path: &Path, out: Option<PathBuf>) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        ));
    }
    cfg.session.record_transcript |= cfg.output.transcript.is_some();
    let (body, passed) = match run_session(&cfg.session) {
        Ok(report) => {
            if let Some(t) = &cfg.output.transcript {
                write_file(t, &report.transcript_jsonl())?;
            }
            if cfg.verbose {
                eprintln!(
                    "committed S={} rate {} after {} ticks",
                    report.committed_s,
                    format_ratio(report.rate),
                    report.ticks
                );
            }
            let ok = report.decode_ok;
            let mut doc = serde_json::to_value(&report).expect("serializes");
            doc["transcript"] = serde_json::Value::Null;
            (doc, ok)
        }
        Err(SimError::DecodeExhausted { ticks, delivered }) => (
            serde_json::json!({ "decode_ok": false, "error": "decode exhausted", "ticks": ticks, "delivered": delivered }),
            false,
        ),
        Err(SimError::InvalidConfig(msg)) => return Err(format!("invalid config: {msg}")),
        Err(e) => return Err(e.to_string()),
    };
    let mut json = serde_json::to_string_pretty(&body).expect("serializes");
    json.push('\n');
    match out.or(cfg.output.report) {
        Some(p) => {
            write_file(&p, &json)?;
            Ok(Outcome {
                stdout: String::new(),
                passed,
            })
        }
        None => Ok(Outcome { stdout: json, passed }),
    }
}

fn rates(args: &SystemArgs, kind: FrameworkKind, trials: usize, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let p = system(args)?;
    let table = sweep_rates(&p, kind, 0..p.lambda(), trials, seed).map_err(|e| e.to_string())?;
    let csv = table.to_csv();
    if let Some(path) = out {
        write_file(&path, &csv)?;
    }
    Ok(Outcome {
        stdout: csv,
        passed: table.all_pass(),
    })
}

fn audit(
    args: &SystemArgs,
    kind: FrameworkKind,
    mode: AuditMode,
    draws: usize,
    sample: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> CmdResult {
    let p = system(args)?;
    let b = basis(&p, kind, None)?;
    let selection = match sample {
        Some(count) => SubsetSelection::Sample { count, seed },
        None => SubsetSelection::All,
    };
    let mut text = String::new();
    let mut passed = true;
    let mut doc = serde_json::Map::new();
    if mode != AuditMode::Privacy {
        let rep = check_secrecy(&b, selection, draws, seed).map_err(|e| e.to_string())?;
        let _ = writeln!(
            text,
            "secrecy: {} noise matrices checked, nonsingular: {}",
            rep.subsets_checked,
            status(rep.matrices_nonsingular)
        );
        if let Some(e) = &rep.empirical {
            let _ = writeln!(
                text,
                "secrecy: {} chi-square over {} draws, min p = {:.6}: {}",
                e.method, e.draws, e.min_p_value, status(e.passed)
            );
        }
        passed &= rep.passed();
        doc.insert("secrecy".into(), serde_json::to_value(&rep).expect("serializes"));
    }
    if mode != AuditMode::Secrecy {
        let specs = column_specs(&build_query_array(&p)).map_err(|e| e.to_string())?;
        let rep = check_privacy(&b, &specs, selection, draws, seed).map_err(|e| e.to_string())?;
        let _ = writeln!(
            text,
            "privacy: {} query matrices checked, nonsingular: {}",
            rep.subsets_checked,
            status(rep.matrices_nonsingular)
        );
        if let Some(e) = &rep.empirical {
            let _ = writeln!(
                text,
                "privacy: {} chi-square over {} draws, min p = {:.6}: {}",
                e.method, e.draws, e.min_p_value, status(e.passed)
            );
        }
        passed &= rep.passed();
        doc.insert("privacy".into(), serde_json::to_value(&rep).expect("serializes"));
    }
    if let Some(path) = out {
        write_file(&path, &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"))?;
    }
    let _ = writeln!(text, "overall: {}", status(passed));
    Ok(Outcome { stdout: text, passed })
}
