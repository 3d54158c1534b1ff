//! Live collection and live control against a text-generation service.
//!
//! Each branch alternates between continuation requests (extend the
//! reasoning prefix by one probe interval) and probe requests (force an
//! answer off a copy of the prefix). Probe output is never appended to
//! the reasoning prefix, so probing cannot contaminate the chain; a
//! collected pool therefore replays bit-for-bit under the offline
//! controller.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::answer::{canonicalize, mode_keys, Answer, AnswerKey};
use crate::policy::{ConsensusController, PolicyConfig, PolicyError, RunOutcome, StopReason};
use crate::pool::{BranchTrace, PoolError, ProblemPool};

/// Environment variable holding the bearer credential for live runs.
pub const API_KEY_VAR: &str = "PROBE_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("missing credential: set the {API_KEY_VAR} environment variable")]
    MissingCredential,
    #[error("invalid driver configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("branch {branch} failed after retries: {source}")]
    BranchFailed {
        branch: usize,
        source: TransportError,
    },
    #[error("all {count} branches failed; first error: {first}")]
    AllBranchesFailed { count: usize, first: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("http status {status}: {detail}")]
    Status { status: u16, detail: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Sampling parameters forwarded with every generation request.
/// `max_new_tokens` is the per-branch trajectory ceiling: a branch
/// that reaches it is closed and probed for its final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.6,
            top_p: 0.95,
            max_new_tokens: 30_000,
        }
    }
}

/// Where and how to reach the generation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Bearer credential; redacted from serialized manifests.
    #[serde(skip_serializing, default)]
    pub api_key: String,
    pub max_concurrent_requests: usize,
    pub request_timeout_secs: u64,
    pub sampling: SamplingConfig,
    /// Transport attempts per request, including the first.
    pub max_attempts: u32,
    pub retry_initial_backoff_ms: u64,
}

impl EndpointConfig {
    /// Builds a config with the credential taken from the environment.
    /// Fails before any network activity when the variable is unset.
    pub fn from_env(base_url: &str, model_name: &str) -> Result<Self, DriverError> {
        let api_key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(DriverError::MissingCredential)?;
        Ok(EndpointConfig {
            base_url: base_url.to_string(),
            model_name: model_name.to_string(),
            api_key,
            max_concurrent_requests: 16,
            request_timeout_secs: 120,
            sampling: SamplingConfig::default(),
            max_attempts: 3,
            retry_initial_backoff_ms: 200,
        })
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |reason: &str| {
            Err(DriverError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if self.max_concurrent_requests < 1 {
            return fail("max_concurrent_requests must be at least 1");
        }
        if self.max_attempts < 1 {
            return fail("max_attempts must be at least 1");
        }
        if self.sampling.max_new_tokens < 1 {
            return fail("sampling.max_new_tokens must be at least 1");
        }
        Ok(())
    }
}

/// Probing protocol: interval, branch count, and the answer-forcing
/// request shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProtocolConfig {
    pub probe_interval_tokens: u64,
    pub branches: usize,
    /// Appended to a copy of the prefix to force an answer.
    pub answer_forcing_suffix: String,
    pub answer_max_tokens: u64,
    pub stop_sequences: Vec<String>,
    /// Per-branch request seed is base_seed + branch_id.
    pub base_seed: u64,
}

impl Default for ProbeProtocolConfig {
    fn default() -> Self {
        ProbeProtocolConfig {
            probe_interval_tokens: 500,
            branches: 128,
            answer_forcing_suffix: "</think> The final answer is".to_string(),
            answer_max_tokens: 32,
            stop_sequences: vec!["\n".to_string()],
            base_seed: 0,
        }
    }
}

impl ProbeProtocolConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |reason: &str| {
            Err(DriverError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if self.probe_interval_tokens < 1 {
            return fail("probe_interval_tokens must be at least 1");
        }
        if self.branches < 1 {
            return fail("branches must be at least 1");
        }
        if self.answer_max_tokens < 1 {
            return fail("answer_max_tokens must be at least 1");
        }
        Ok(())
    }
}

/// One problem to collect or control live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRequest {
    pub problem_id: String,
    pub prompt: String,
    pub gold_answer: Option<Answer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    /// Extend the reasoning prefix.
    Continuation,
    /// Force an answer off a copy of the prefix.
    Probe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub kind: RequestKind,
    pub prompt: String,
    pub max_new_tokens: u64,
    pub stop: Vec<String>,
    pub temperature: f64,
    pub top_p: f64,
    /// Stable per-branch sampling seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    /// Generated token count as reported by the service. When absent
    /// the driver approximates from whitespace and flags the pool.
    pub tokens: Option<u64>,
    /// The service signaled a natural end of generation.
    pub finished: bool,
}

pub trait Transport: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, TransportError>;
}

/// Completions-style HTTP transport with bearer authentication.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    completions_url: String,
    model_name: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(endpoint: &EndpointConfig) -> Result<Self, DriverError> {
        endpoint.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.request_timeout_secs))
            .no_proxy()
            .build()
            .map_err(|e| DriverError::InvalidConfig {
                reason: format!("http client: {e}"),
            })?;
        Ok(HttpTransport {
            client,
            completions_url: format!(
                "{}/v1/completions",
                endpoint.base_url.trim_end_matches('/')
            ),
            model_name: endpoint.model_name.clone(),
            api_key: endpoint.api_key.clone(),
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, TransportError> {
        let mut body = serde_json::json!({
            "model": self.model_name,
            "prompt": request.prompt,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "seed": request.seed,
            "stream": false,
        });
        if !request.stop.is_empty() {
            body["stop"] = serde_json::json!(request.stop);
        }
        let response = self
            .client
            .post(&self.completions_url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                detail: response.text().unwrap_or_default(),
            });
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| TransportError::Malformed(e.to_string()))?;
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| TransportError::Malformed("no choices in response".to_string()))?;
        let text = choice
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| TransportError::Malformed("choice has no text".to_string()))?;
        let finish_reason = choice
            .get("finish_reason")
            .and_then(|f| f.as_str())
            .unwrap_or("");
        let tokens = value
            .get("usage")
            .and_then(|u| u.get("completion_tokens"))
            .and_then(|t| t.as_u64());
        Ok(GenerationResponse {
            text: text.to_string(),
            tokens,
            finished: matches!(finish_reason, "stop" | "eos" | "stop_sequence"),
        })
    }
}

/// Counting semaphore bounding in-flight transport requests.
struct RequestGate {
    permits: Mutex<usize>,
    released: Condvar,
}

impl RequestGate {
    fn new(permits: usize) -> Self {
        RequestGate {
            permits: Mutex::new(permits),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.released.wait(permits).expect("gate lock");
        }
        *permits -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a RequestGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate lock");
        *permits += 1;
        self.gate.released.notify_one();
    }
}

fn approx_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn request_with_retries(
    transport: &dyn Transport,
    gate: &RequestGate,
    endpoint: &EndpointConfig,
    request: &GenerationRequest,
) -> Result<GenerationResponse, TransportError> {
    let mut delay = endpoint.retry_initial_backoff_ms;
    let mut last = None;
    for attempt in 1..=endpoint.max_attempts {
        let outcome = {
            let _permit = gate.acquire();
            transport.complete(request)
        };
        match outcome {
            Ok(response) => return Ok(response),
            Err(e) => {
                log::warn!("attempt {attempt}/{}: {e}", endpoint.max_attempts);
                last = Some(e);
                if attempt < endpoint.max_attempts {
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
    Err(last.expect("at least one attempt was made"))
}

/// Per-branch progress shared between a worker and the control loop.
#[derive(Debug, Default)]
struct BranchSlot {
    probe_answers: Vec<Answer>,
    cumulative_tokens: Vec<u64>,
    final_answer: Option<Answer>,
    finished: bool,
    errored: Option<TransportError>,
    /// Set by the control loop; the worker stops generating.
    halted: bool,
    delivered_tokens: u64,
    overhead_tokens: u64,
    approximate_counts: bool,
}

struct LiveState {
    slots: Vec<BranchSlot>,
    /// Workers may generate chunk t+1 once this reaches t.
    proceed_step: usize,
}

struct LiveShared {
    state: Mutex<LiveState>,
    /// Signals workers after a control verdict.
    verdict: Condvar,
    /// Signals the control loop after a worker delivery.
    delivery: Condvar,
}

/// One branch's generate-then-probe loop. Chunk t+1 starts only after
/// the control loop has processed step t (or immediately when the
/// control loop pre-grants all steps, as collection does).
#[allow(clippy::too_many_arguments)]
fn branch_worker(
    branch: usize,
    prompt: &str,
    endpoint: &EndpointConfig,
    protocol: &ProbeProtocolConfig,
    transport: &dyn Transport,
    gate: &RequestGate,
    shared: &LiveShared,
) {
    let interval = protocol.probe_interval_tokens;
    let ceiling = endpoint.sampling.max_new_tokens;
    let seed = protocol.base_seed + branch as u64;
    let mut prefix = prompt.to_string();
    let mut delivered: u64 = 0;
    let mut chunks_done: usize = 0;
    let mut approximate = false;

    let fail = |error: TransportError| {
        let mut state = shared.state.lock().expect("state lock");
        state.slots[branch].errored = Some(error);
        shared.delivery.notify_all();
    };

    let probe = |prefix: &str, approximate: &mut bool| -> Result<(Answer, u64), TransportError> {
        let request = GenerationRequest {
            kind: RequestKind::Probe,
            prompt: format!("{prefix}{}", protocol.answer_forcing_suffix),
            max_new_tokens: protocol.answer_max_tokens,
            stop: protocol.stop_sequences.clone(),
            temperature: endpoint.sampling.temperature,
            top_p: endpoint.sampling.top_p,
            seed,
        };
        let response = request_with_retries(transport, gate, endpoint, &request)?;
        let tokens = response.tokens.unwrap_or_else(|| {
            *approximate = true;
            approx_token_count(&response.text)
        });
        Ok((canonicalize(response.text.trim()), tokens))
    };

    loop {
        {
            let mut state = shared.state.lock().expect("state lock");
            while !(state.slots[branch].halted || state.proceed_step >= chunks_done) {
                state = shared.verdict.wait(state).expect("state lock");
            }
            if state.slots[branch].halted {
                state.slots[branch].delivered_tokens = delivered;
                state.slots[branch].approximate_counts = approximate;
                shared.delivery.notify_all();
                return;
            }
        }

        let target = (delivered + interval).min(ceiling);
        let mut finished = false;
        while delivered < target && !finished {
            let request = GenerationRequest {
                kind: RequestKind::Continuation,
                prompt: prefix.clone(),
                max_new_tokens: target - delivered,
                stop: Vec::new(),
                temperature: endpoint.sampling.temperature,
                top_p: endpoint.sampling.top_p,
                seed,
            };
            let response = match request_with_retries(transport, gate, endpoint, &request) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let got = response.tokens.unwrap_or_else(|| {
                approximate = true;
                approx_token_count(&response.text)
            });
            if got > target - delivered {
                return fail(TransportError::Malformed(format!(
                    "service returned {got} tokens for a request capped at {}",
                    target - delivered
                )));
            }
            if got == 0 && !response.finished {
                return fail(TransportError::Malformed(
                    "service made no progress".to_string(),
                ));
            }
            delivered += got;
            prefix.push_str(&response.text);
            finished = response.finished;
        }

        if finished || delivered >= ceiling {
            if delivered == 0 {
                return fail(TransportError::Malformed(
                    "branch produced no tokens".to_string(),
                ));
            }
            let (answer, tokens) = match probe(&prefix, &mut approximate) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            let mut state = shared.state.lock().expect("state lock");
            let slot = &mut state.slots[branch];
            slot.final_answer = Some(answer);
            slot.finished = true;
            slot.delivered_tokens = delivered;
            slot.overhead_tokens += tokens;
            slot.approximate_counts = approximate;
            shared.delivery.notify_all();
            return;
        }

        let (answer, tokens) = match probe(&prefix, &mut approximate) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        chunks_done += 1;
        let mut state = shared.state.lock().expect("state lock");
        let slot = &mut state.slots[branch];
        slot.probe_answers.push(answer);
        slot.cumulative_tokens.push(delivered);
        slot.delivered_tokens = delivered;
        slot.overhead_tokens += tokens;
        slot.approximate_counts = approximate;
        shared.delivery.notify_all();
    }
}

/// A collected pool plus collection-quality notes.
#[derive(Debug, Clone)]
pub struct CollectedPool {
    pub pool: ProblemPool,
    /// True when any token count had to be approximated from text
    /// because the service reported no usage.
    pub approximate_token_counts: bool,
}

/// Samples `protocol.branches` full trajectories with interval probes
/// and freezes them into a pool. Branch errors propagate after the
/// configured retries.
pub fn collect_pool(
    problem: &ProblemRequest,
    endpoint: &EndpointConfig,
    protocol: &ProbeProtocolConfig,
    transport: &dyn Transport,
) -> Result<CollectedPool, DriverError> {
    endpoint.validate()?;
    protocol.validate()?;
    let width = protocol.branches;
    let gate = RequestGate::new(endpoint.max_concurrent_requests);
    let shared = LiveShared {
        state: Mutex::new(LiveState {
            slots: (0..width).map(|_| BranchSlot::default()).collect(),
            proceed_step: usize::MAX,
        }),
        verdict: Condvar::new(),
        delivery: Condvar::new(),
    };

    std::thread::scope(|scope| {
        for branch in 0..width {
            let shared = &shared;
            let gate = &gate;
            scope.spawn(move || {
                branch_worker(
                    branch,
                    &problem.prompt,
                    endpoint,
                    protocol,
                    transport,
                    gate,
                    shared,
                );
            });
        }
    });

    let state = shared.state.into_inner().expect("workers have exited");
    let mut branches = Vec::with_capacity(width);
    let mut approximate = false;
    for (i, slot) in state.slots.into_iter().enumerate() {
        if let Some(error) = slot.errored {
            return Err(DriverError::BranchFailed {
                branch: i,
                source: error,
            });
        }
        approximate |= slot.approximate_counts;
        branches.push(BranchTrace {
            branch_id: i as u32,
            probe_answers: slot.probe_answers,
            cumulative_tokens: slot.cumulative_tokens,
            final_answer: slot.final_answer.expect("finished branch has a final"),
            natural_length_tokens: slot.delivered_tokens,
            probe_overhead_tokens: Some(slot.overhead_tokens),
        });
    }
    let pool = ProblemPool {
        problem_id: problem.problem_id.clone(),
        gold_answer: problem.gold_answer.clone(),
        probe_interval_tokens: protocol.probe_interval_tokens,
        branches,
    };
    crate::pool::validate_pool(&pool)?;
    Ok(CollectedPool {
        pool,
        approximate_token_counts: approximate,
    })
}

/// Runs the consensus controller over live branches. Pruned branches
/// stop issuing generation requests; a stop halts every branch. All
/// verdicts are issued while every active worker is parked at the step
/// barrier, so no request is ever in flight when its branch is halted.
///
/// A branch whose transport fails permanently is dropped from the vote;
/// the run fails only when no branch remains. If `max_steps` cuts the
/// run off, unfinished branches contribute their latest probe answer as
/// their final answer.
pub fn run_live(
    problem: &ProblemRequest,
    endpoint: &EndpointConfig,
    protocol: &ProbeProtocolConfig,
    cfg: &PolicyConfig,
    transport: &dyn Transport,
) -> Result<RunOutcome, DriverError> {
    endpoint.validate()?;
    protocol.validate()?;
    let width = cfg.width;
    let mut controller = ConsensusController::new(cfg)?;
    let gate = RequestGate::new(endpoint.max_concurrent_requests);
    let shared = LiveShared {
        state: Mutex::new(LiveState {
            slots: (0..width).map(|_| BranchSlot::default()).collect(),
            proceed_step: 0,
        }),
        verdict: Condvar::new(),
        delivery: Condvar::new(),
    };

    let verdict = std::thread::scope(|scope| {
        for branch in 0..width {
            let shared = &shared;
            let gate = &gate;
            scope.spawn(move || {
                branch_worker(
                    branch,
                    &problem.prompt,
                    endpoint,
                    protocol,
                    transport,
                    gate,
                    shared,
                );
            });
        }
        let verdict = control_loop(&mut controller, cfg, &shared, width);
        // Releases any still-parked workers (halted flags are set).
        shared.verdict.notify_all();
        verdict
    });
    let (stop_step, stop_reason, predicted) = verdict?;

    let state = shared.state.into_inner().expect("workers have exited");
    let consumed_tokens: Vec<u64> = state.slots.iter().map(|s| s.delivered_tokens).collect();
    Ok(RunOutcome {
        predicted,
        stop_step,
        stop_reason,
        seq_tokens: consumed_tokens.iter().copied().max().unwrap_or(0),
        total_tokens: consumed_tokens.iter().sum(),
        consumed_tokens,
        pruned_at: controller.pruned_at().clone(),
        guard_steps: controller.guard_steps().to_vec(),
    })
}

type Verdict = Result<(usize, StopReason, Answer), DriverError>;

fn control_loop(
    controller: &mut ConsensusController,
    cfg: &PolicyConfig,
    shared: &LiveShared,
    width: usize,
) -> Verdict {
    let mut t = 0usize;
    loop {
        t += 1;

        // Step barrier: every branch the controller still listens to
        // must deliver its step-t answer, finish, or error out.
        let mut state = shared.state.lock().expect("state lock");
        loop {
            let pending = (0..width).any(|i| {
                controller.active()[i]
                    && state.slots[i].errored.is_none()
                    && !state.slots[i].finished
                    && state.slots[i].probe_answers.len() < t
            });
            if !pending {
                break;
            }
            state = shared.delivery.wait(state).expect("state lock");
        }

        for i in 0..width {
            if controller.active()[i] && state.slots[i].errored.is_some() {
                controller.retire(i);
                log::warn!(
                    "branch {i} dropped at step {t}: {}",
                    state.slots[i].errored.as_ref().expect("checked above")
                );
            }
        }
        let survivors: Vec<usize> = (0..width).filter(|&i| controller.active()[i]).collect();
        if survivors.is_empty() {
            let first = (0..width)
                .find_map(|i| state.slots[i].errored.as_ref())
                .map_or_else(|| "no branches".to_string(), |e| e.to_string());
            for slot in state.slots.iter_mut() {
                slot.halted = true;
            }
            return Err(DriverError::AllBranchesFailed { count: width, first });
        }

        let placeholder = Answer::abstain();
        let cells_owned: Vec<Answer> = (0..width)
            .map(|i| {
                let slot = &state.slots[i];
                if !controller.active()[i] {
                    placeholder.clone()
                } else if t <= slot.probe_answers.len() {
                    slot.probe_answers[t - 1].clone()
                } else {
                    slot.final_answer
                        .clone()
                        .expect("barrier admits only finished branches past their probes")
                }
            })
            .collect();
        drop(state);

        let cells: Vec<&AnswerKey> = cells_owned.iter().map(|a| a.key()).collect();
        let action = controller.observe_step(&cells);

        let mut state = shared.state.lock().expect("state lock");
        for &i in &action.prune_set {
            state.slots[i].halted = true;
        }
        if action.stop {
            for slot in state.slots.iter_mut() {
                slot.halted = true;
            }
            shared.verdict.notify_all();
            return Ok((
                t,
                StopReason::ConsensusStable,
                action.predicted.expect("stop carries a prediction"),
            ));
        }

        let survivors: Vec<usize> = (0..width).filter(|&i| controller.active()[i]).collect();
        let all_finished = survivors.iter().all(|&i| state.slots[i].finished);
        let budget_hit = cfg.max_steps.is_some_and(|m| t >= m);
        if all_finished || budget_hit {
            for slot in state.slots.iter_mut() {
                slot.halted = true;
            }
            shared.verdict.notify_all();
            let (winner, _) = mode_keys(survivors.iter().map(|&i| {
                let slot = &state.slots[i];
                slot.final_answer
                    .as_ref()
                    .unwrap_or_else(|| {
                        slot.probe_answers
                            .last()
                            .expect("unfinished survivor has probed")
                    })
                    .key()
            }))
            .expect("at least one survivor");
            let reason = if all_finished {
                StopReason::AllBranchesFinished
            } else {
                StopReason::BudgetExhausted
            };
            return Ok((t, reason, winner));
        }

        state.proceed_step = t;
        shared.verdict.notify_all();
    }
}

/// Deterministic scripted transport for tests: per-branch scripts are
/// keyed by the request seed, and every call is logged.
#[derive(Debug, Clone)]
pub struct BranchScript {
    pub natural_tokens: u64,
    /// Interval probe replies, in order; exhausted entries fall back to
    /// the final reply.
    pub probe_replies: Vec<String>,
    pub final_reply: String,
    /// Fail this many requests (of any kind) before behaving.
    pub fail_requests: usize,
}

impl BranchScript {
    pub fn new(natural_tokens: u64, probe_replies: &[&str], final_reply: &str) -> Self {
        BranchScript {
            natural_tokens,
            probe_replies: probe_replies.iter().map(|s| s.to_string()).collect(),
            final_reply: final_reply.to_string(),
            fail_requests: 0,
        }
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    delivered: u64,
    probes_served: usize,
    failures_served: usize,
}

#[derive(Debug, Clone)]
pub struct LoggedRequest {
    pub seed: u64,
    pub kind: RequestKind,
    pub prompt: String,
    pub max_new_tokens: u64,
}

pub struct ScriptedTransport {
    scripts: HashMap<u64, BranchScript>,
    state: Mutex<HashMap<u64, ScriptState>>,
    log: Mutex<Vec<LoggedRequest>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    latency: Option<Duration>,
}

impl ScriptedTransport {
    pub fn new(scripts: HashMap<u64, BranchScript>) -> Self {
        ScriptedTransport {
            scripts,
            state: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            latency: None,
        }
    }

    /// Adds a per-request delay so overlapping requests are observable.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn log(&self) -> Vec<LoggedRequest> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn max_concurrent_seen(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests_for(&self, seed: u64, kind: RequestKind) -> usize {
        self.log()
            .iter()
            .filter(|r| r.seed == seed && r.kind == kind)
            .count()
    }

    /// Forgets one branch's delivery state so its script can serve a
    /// fresh run; the request log is kept.
    pub fn reset_seed(&self, seed: u64) {
        self.state.lock().expect("state lock").remove(&seed);
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, TransportError> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(current, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let result = self.serve(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

impl ScriptedTransport {
    fn serve(&self, request: &GenerationRequest) -> Result<GenerationResponse, TransportError> {
        self.log.lock().expect("log lock").push(LoggedRequest {
            seed: request.seed,
            kind: request.kind,
            prompt: request.prompt.clone(),
            max_new_tokens: request.max_new_tokens,
        });
        let script = self.scripts.get(&request.seed).ok_or_else(|| {
            TransportError::Malformed(format!("no script for seed {}", request.seed))
        })?;
        let mut states = self.state.lock().expect("state lock");
        let state = states.entry(request.seed).or_default();
        if state.failures_served < script.fail_requests {
            state.failures_served += 1;
            return Err(TransportError::Network("scripted failure".to_string()));
        }
        match request.kind {
            RequestKind::Continuation => {
                let grant = request
                    .max_new_tokens
                    .min(script.natural_tokens - state.delivered);
                state.delivered += grant;
                Ok(GenerationResponse {
                    text: " x".repeat(grant as usize),
                    tokens: Some(grant),
                    finished: state.delivered >= script.natural_tokens,
                })
            }
            RequestKind::Probe => {
                let reply = if state.delivered >= script.natural_tokens {
                    &script.final_reply
                } else {
                    let reply = script
                        .probe_replies
                        .get(state.probes_served)
                        .unwrap_or(&script.final_reply);
                    state.probes_served += 1;
                    reply
                };
                Ok(GenerationResponse {
                    text: reply.clone(),
                    tokens: Some(approx_token_count(reply).max(1)),
                    finished: true,
                })
            }
        }
    }
}
