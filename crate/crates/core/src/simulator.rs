//! Deterministic tick-based simulation of retrieval sessions with stragglers.
//!
//! Each tick every server that is currently fast sends its next response, in
//! server-index order. Stragglers send nothing unless a slow latency is
//! configured, in which case they send one response every `slow_latency`
//! ticks. A server always resumes from its next unsent response.

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framework::{BasisSet, FrameworkError, FrameworkKind};
use crate::params::{default_modulus, select_parameters, ParamsError, SystemParams};
use crate::protocol::{
    encode_storage, format_ratio, make_queries, rate_and_cost, server_answer, AdaptiveDecoder,
    Dataset, DecodeStatus, ProtocolError, ResponseBundle,
};
use crate::query_array::{build_query_array, column_specs, ColumnSpec, QueryArrayError};
use crate::wire;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("every response stream stalled after {ticks} ticks without a decode")]
    DecodeExhausted { ticks: u64, delivered: Vec<usize> },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Framework(#[from] FrameworkError),
    #[error(transparent)]
    QueryArray(#[from] QueryArrayError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Which servers are slow at each tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StragglerModel {
    None,
    FixedSet { servers: Vec<usize> },
    /// A fresh uniform `count`-subset every `reshuffle_every` ticks.
    FixedCount { count: usize, reshuffle_every: u64 },
    /// `schedule[t mod len]` is the slow set at tick `t` (ticks start at 0).
    Adversarial { schedule: Vec<Vec<usize>> },
}

impl StragglerModel {
    fn validate(&self, n: usize) -> Result<()> {
        let check_set = |s: &[usize]| {
            let mut sorted = s.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != s.len() || sorted.iter().any(|&v| v >= n) {
                Err(SimError::InvalidConfig(format!(
                    "straggler set {s:?} must hold distinct servers below {n}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            StragglerModel::None => Ok(()),
            StragglerModel::FixedSet { servers } => check_set(servers),
            StragglerModel::FixedCount {
                count,
                reshuffle_every,
            } => {
                if *reshuffle_every == 0 || *count >= n {
                    Err(SimError::InvalidConfig(format!(
                        "fixed count needs count < {n} and reshuffle_every >= 1"
                    )))
                } else {
                    Ok(())
                }
            }
            StragglerModel::Adversarial { schedule } => {
                if schedule.is_empty() {
                    return Err(SimError::InvalidConfig("empty adversarial schedule".into()));
                }
                schedule.iter().try_for_each(|s| check_set(s))
            }
        }
    }

    fn period(&self) -> u64 {
        match self {
            StragglerModel::None | StragglerModel::FixedSet { .. } => 1,
            StragglerModel::FixedCount { reshuffle_every, .. } => *reshuffle_every,
            StragglerModel::Adversarial { schedule } => schedule.len() as u64,
        }
    }
}

fn default_fast_latency() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub params: SystemParams,
    pub framework: FrameworkKind,
    pub theta: usize,
    pub file_seed: u64,
    pub noise_seed: u64,
    #[serde(default)]
    pub model_seed: u64,
    pub model: StragglerModel,
    /// Ticks between responses of a fast server.
    #[serde(default = "default_fast_latency")]
    pub fast_latency: u64,
    /// Ticks between responses of a straggler; `None` means it stays silent.
    #[serde(default)]
    pub slow_latency: Option<u64>,
    #[serde(default)]
    pub record_transcript: bool,
}

impl SessionConfig {
    pub fn new(params: SystemParams, framework: FrameworkKind, model: StragglerModel) -> Self {
        SessionConfig {
            params,
            framework,
            theta: 0,
            file_seed: 0,
            noise_seed: 0,
            model_seed: 0,
            model,
            fast_latency: 1,
            slow_latency: None,
            record_transcript: false,
        }
    }
}

/// A change in the slow set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: u64,
    pub slow: Vec<usize>,
}

/// One delivered response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub tick: u64,
    pub server: usize,
    pub column: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionReport {
    pub committed_s: usize,
    pub decode_ok: bool,
    pub ticks: u64,
    /// Responses the decoder used from each server.
    pub consumed: Vec<usize>,
    /// Responses each server had delivered when decoding finished.
    pub delivered: Vec<usize>,
    /// Responses received per column when decoding finished.
    pub column_counts: Vec<usize>,
    pub download: u64,
    pub expected_download: u64,
    pub rate: Ratio<u64>,
    pub expected_rate: Ratio<u64>,
    pub straggler_trace: Vec<TraceEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub transcript: Vec<TranscriptEvent>,
}

impl SessionReport {
    /// Every column in the committed layers gathered at least `N − S` responses.
    pub fn threshold_met(&self, params: &SystemParams) -> bool {
        let need = params.n() - self.committed_s;
        self.column_counts[..params.threshold(self.committed_s)]
            .iter()
            .all(|&c| c >= need)
    }

    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

/// Everything a session needs besides the straggler model.
pub struct Prepared {
    pub basis: BasisSet,
    pub specs: Vec<ColumnSpec>,
    pub data: Dataset,
    pub answers: Vec<Vec<ResponseBundle>>,
}

pub fn prepare(
    params: &SystemParams,
    framework: FrameworkKind,
    theta: usize,
    file_seed: u64,
    noise_seed: u64,
) -> Result<Prepared> {
    let modulus = default_modulus(params);
    let enc = select_parameters(params, modulus)?;
    let basis = BasisSet::new(framework, enc, params.clone())?;
    let specs = column_specs(&build_query_array(params))?;
    let data = Dataset::random(params, modulus, file_seed);
    let shares = encode_storage(&basis, &data, noise_seed)?;
    let queries = make_queries(&basis, &specs, theta, noise_seed)?;
    let answers = shares
        .par_iter()
        .zip(&queries)
        .map(|(s, q)| server_answer(s, q))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Prepared {
        basis,
        specs,
        data,
        answers,
    })
}

pub fn run_session(cfg: &SessionConfig) -> Result<SessionReport> {
    let params = &cfg.params;
    if cfg.theta >= params.m() {
        return Err(SimError::InvalidConfig(format!("theta={} but M={}", cfg.theta, params.m())));
    }
    if cfg.fast_latency == 0 || cfg.slow_latency == Some(0) {
        return Err(SimError::InvalidConfig("latencies must be at least one tick".into()));
    }
    cfg.model.validate(params.n())?;
    let prep = prepare(params, cfg.framework, cfg.theta, cfg.file_seed, cfg.noise_seed)?;
    simulate(cfg, &prep)
}

/// Runs the delivery loop over precomputed answers.
pub fn simulate(cfg: &SessionConfig, prep: &Prepared) -> Result<SessionReport> {
    let params = &cfg.params;
    let n = params.n();
    let mut decoder = AdaptiveDecoder::new(&prep.basis, &prep.specs, cfg.theta)?;
    let mut model_rng = ChaCha20Rng::seed_from_u64(cfg.model_seed);
    let mut slow: Vec<usize> = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut transcript = Vec::new();
    let mut sent = vec![0usize; n];
    let idle_limit = 64 * cfg.model.period() * cfg.fast_latency.max(cfg.slow_latency.unwrap_or(1));
    let mut idle = 0u64;

    for tick in 0u64.. {
        let current = match &cfg.model {
            StragglerModel::None => Vec::new(),
            StragglerModel::FixedSet { servers } => servers.clone(),
            StragglerModel::FixedCount {
                count,
                reshuffle_every,
            } => {
                if tick % reshuffle_every == 0 {
                    let mut s = sample(&mut model_rng, n, *count).into_vec();
                    s.sort_unstable();
                    s
                } else {
                    slow.clone()
                }
            }
            StragglerModel::Adversarial { schedule } => {
                let mut s = schedule[(tick % schedule.len() as u64) as usize].clone();
                s.sort_unstable();
                s
            }
        };
        if tick == 0 || current != slow {
            trace.push(TraceEntry {
                tick,
                slow: current.clone(),
            });
        }
        slow = current;

        let mut emitted = false;
        for server in 0..n {
            if sent[server] >= params.p() {
                continue;
            }
            let latency = if slow.contains(&server) {
                match cfg.slow_latency {
                    Some(l) => l,
                    None => continue,
                }
            } else {
                cfg.fast_latency
            };
            if (tick + 1) % latency != 0 {
                continue;
            }
            let response = prep.answers[server][sent[server]].clone();
            sent[server] += 1;
            emitted = true;
            if cfg.record_transcript {
                transcript.push(TranscriptEvent {
                    tick,
                    server,
                    column: response.column,
                    digest: wire::digest(&wire::encode_response(&response)),
                });
            }
            if let DecodeStatus::Decoded(out) = decoder.push(response)? {
                let s = out.stragglers;
                let rc = rate_and_cost(params, s)?;
                let expected_download = *rc.download.numer();
                return Ok(SessionReport {
                    committed_s: s,
                    decode_ok: &out.file == prep.data.file(cfg.theta),
                    ticks: tick + 1,
                    consumed: out.consumed,
                    delivered: sent,
                    column_counts: decoder.column_counts(),
                    download: out.download,
                    expected_download,
                    rate: Ratio::new((params.p() * params.k()) as u64, out.download),
                    expected_rate: rc.rate,
                    straggler_trace: trace,
                    transcript,
                });
            }
        }

        if sent.iter().all(|&c| c >= params.p()) {
            return Err(SimError::DecodeExhausted {
                ticks: tick + 1,
                delivered: sent,
            });
        }
        idle = if emitted { 0 } else { idle + 1 };
        if idle > idle_limit {
            return Err(SimError::DecodeExhausted {
                ticks: tick + 1,
                delivered: sent,
            });
        }
    }
    unreachable!("the tick loop only exits by returning")
}

/// One row of a rate sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateRow {
    pub s: usize,
    pub trials: usize,
    pub successes: usize,
    /// Rate measured in the trials, if every trial measured the same one.
    pub measured_rate: Option<Ratio<u64>>,
    pub expected_rate: Ratio<u64>,
    pub responses_per_server: usize,
    pub download: u64,
}

impl RateRow {
    pub fn success_fraction(&self) -> Ratio<u64> {
        Ratio::new(self.successes as u64, self.trials.max(1) as u64)
    }

    pub fn exact(&self) -> bool {
        self.measured_rate == Some(self.expected_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateTable {
    pub params: SystemParams,
    pub framework: FrameworkKind,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "S,measured_rate,measured_decimal,expected_rate,expected_decimal,download,responses_per_server,trials,decode_success\n",
        );
        for r in &self.rows {
            let (measured, measured_dec) = match r.measured_rate {
                Some(m) => (format!("{}/{}", m.numer(), m.denom()), format!("{:.6}", ratio_f64(m))),
                None => ("mixed".into(), "".into()),
            };
            out.push_str(&format!(
                "{},{},{},{}/{},{:.6},{},{},{},{:.6}\n",
                r.s,
                measured,
                measured_dec,
                r.expected_rate.numer(),
                r.expected_rate.denom(),
                ratio_f64(r.expected_rate),
                r.download,
                r.responses_per_server,
                r.trials,
                ratio_f64(r.success_fraction()),
            ));
        }
        out
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.exact() && r.successes == r.trials)
    }

    pub fn summary(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "S={} rate {} expected {} success {}/{}\n",
                    r.s,
                    r.measured_rate.map_or("mixed".into(), format_ratio),
                    format_ratio(r.expected_rate),
                    r.successes,
                    r.trials
                )
            })
            .collect()
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn trial_seeds(seed: u64, s: usize, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((s as u64) << 32) | trial as u64);
    rng
}

/// For each `S`, runs `trials` sessions with a random fixed straggler set of
/// size `S`, random files and a random desired index.
pub fn sweep_rates(
    params: &SystemParams,
    framework: FrameworkKind,
    s_range: std::ops::Range<usize>,
    trials: usize,
    seed: u64,
) -> Result<RateTable> {
    if s_range.end > params.lambda() {
        return Err(SimError::InvalidConfig(format!(
            "straggler counts must stay below λ={}",
            params.lambda()
        )));
    }
    let mut rows = Vec::new();
    for s in s_range {
        let reports = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_seeds(seed, s, trial);
                let mut servers = sample(&mut rng, params.n(), s).into_vec();
                servers.sort_unstable();
                let mut cfg = SessionConfig::new(params.clone(), framework, StragglerModel::FixedSet { servers });
                cfg.theta = rng.random_range(0..params.m());
                cfg.file_seed = rng.random();
                cfg.noise_seed = rng.random();
                run_session(&cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let rc = rate_and_cost(params, s)?;
        let first = reports.first().map(|r| r.rate);
        let measured_rate = first.filter(|f| reports.iter().all(|r| r.rate == *f && r.committed_s == s));
        rows.push(RateRow {
            s,
            trials,
            successes: reports.iter().filter(|r| r.decode_ok).count(),
            measured_rate,
            expected_rate: rc.rate,
            responses_per_server: params.threshold(s),
            download: *rc.download.numer(),
        });
    }
    Ok(RateTable {
        params: params.clone(),
        framework,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnRow {
    /// `None` keeps the first random straggler set for the whole session.
    pub reshuffle_every: Option<u64>,
    pub trials: usize,
    pub decode_ok: usize,
    pub exhausted: usize,
    /// Sessions whose committed layers all met the per-column threshold.
    pub threshold_met: usize,
    /// How often each straggler count was committed.
    pub committed_s: Vec<usize>,
}

impl ChurnRow {
    pub fn decode_ok_fraction(&self) -> Ratio<u64> {
        Ratio::new(self.decode_ok as u64, self.trials.max(1) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnReport {
    pub params: SystemParams,
    pub framework: FrameworkKind,
    pub stragglers: usize,
    pub rows: Vec<ChurnRow>,
}

impl ChurnReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("reshuffle_every,trials,decode_ok,exhausted,threshold_met");
        for s in 0..self.params.lambda() {
            out.push_str(&format!(",committed_s{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            let every = r.reshuffle_every.map_or("never".to_string(), |e| e.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}",
                every, r.trials, r.decode_ok, r.exhausted, r.threshold_met
            ));
            for c in &r.committed_s {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs sessions whose `stragglers` slow servers are reshuffled every
/// `reshuffle_every` ticks, for each interval in the grid. A `None` interval
/// disables churn.
pub fn stress_identity_churn(
    params: &SystemParams,
    framework: FrameworkKind,
    reshuffle_grid: &[Option<u64>],
    stragglers: usize,
    trials: usize,
    seed: u64,
) -> Result<ChurnReport> {
    if reshuffle_grid.contains(&Some(0)) {
        return Err(SimError::InvalidConfig("reshuffle intervals must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for (g, &every) in reshuffle_grid.iter().enumerate() {
        let outcomes = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_seeds(seed, g, trial);
                let model = match every {
                    Some(reshuffle_every) => StragglerModel::FixedCount {
                        count: stragglers,
                        reshuffle_every,
                    },
                    None => {
                        let mut servers = sample(&mut rng, params.n(), stragglers).into_vec();
                        servers.sort_unstable();
                        StragglerModel::FixedSet { servers }
                    }
                };
                let mut cfg = SessionConfig::new(params.clone(), framework, model);
                cfg.theta = rng.random_range(0..params.m());
                cfg.file_seed = rng.random();
                cfg.noise_seed = rng.random();
                cfg.model_seed = rng.random();
                match run_session(&cfg) {
                    Ok(r) => Ok(Some(r)),
                    Err(SimError::DecodeExhausted { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut committed_s = vec![0; params.lambda()];
        for r in outcomes.iter().flatten() {
            committed_s[r.committed_s] += 1;
        }
        rows.push(ChurnRow {
            reshuffle_every: every,
            trials,
            decode_ok: outcomes.iter().flatten().filter(|r| r.decode_ok).count(),
            exhausted: outcomes.iter().filter(|r| r.is_none()).count(),
            threshold_met: outcomes.iter().flatten().filter(|r| r.threshold_met(params)).count(),
            committed_s,
        });
    }
    Ok(ChurnReport {
        params: params.clone(),
        framework,
        stragglers,
        rows,
    })
}
