//! Trial and experiment runners, regret aggregation, slope fits and Wald bands.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{stream_rng, DemandKind, DemandNoise, EnvSpec, Stream};
use crate::error::{PricingError, Result};
use crate::likelihood::{nll, Observation, ParamPair};
use crate::link::{LinkModel, PricingConstants};
use crate::ons::OnsHyper;
use crate::policies::{
    OraclePolicy, PolicyDiagnostics, PolicyKind, PricingPolicy, PwpPolicy, Rmlp2Policy,
};

/// Number of log-spaced checkpoints between round 16 and the horizon.
pub const CHECKPOINTS: usize = 64;
const FIRST_CHECKPOINT: usize = 16;
/// Slope fits use rounds `>= T / FIT_WINDOW_DIVISOR`.
pub const FIT_WINDOW_DIVISOR: usize = 64;
const WALD_Z: f64 = 1.96;

/// Knobs shared by every policy in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    pub c_beta: f64,
    /// `None` runs ONS with the step size and regularizer from the regret analysis.
    pub ons: Option<OnsHyper>,
    /// Norm of each block of the all-ones starting point.
    pub init_radius: f64,
    pub mle_restarts: usize,
    /// Keep a per-round record in every trial.
    pub trace: bool,
}

impl PolicySettings {
    pub fn new(c_beta: f64) -> Self {
        Self {
            c_beta,
            ons: None,
            init_radius: 0.5,
            mle_restarts: 8,
            trace: false,
        }
    }
}

/// One row of a per-round trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub price: f64,
    pub bought: bool,
    pub regret: f64,
    pub cum_regret: f64,
    /// Running `sum_s [l_s(params_s) - l_s(truth)]`; absent when the policy's
    /// hypothesis space does not contain the truth.
    pub surrogate_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    /// Rounds whose posted price sat on `c1` or `c2`.
    pub prices_at_bounds: usize,
    pub policy: PolicyDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    pub cum_regret: Vec<f64>,
    pub final_params: Option<ParamPair>,
    pub diagnostics: TrialDiagnostics,
    /// Largest running surrogate gap over all rounds, when it is tracked.
    pub max_surrogate_gap: Option<f64>,
    pub trace: Option<Vec<RoundRecord>>,
}

impl TrialResult {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub policy: PolicyKind,
    pub checkpoints: Vec<usize>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub trials: usize,
}

impl RegretCurve {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_half_width(&self) -> f64 {
        self.half_width.last().copied().unwrap_or(0.0)
    }
}

/// `CHECKPOINTS` log-spaced rounds from 16 to `horizon`, deduplicated, always ending at `horizon`.
pub fn checkpoint_grid(horizon: usize) -> Vec<usize> {
    if horizon <= FIRST_CHECKPOINT {
        return (1..=horizon).collect();
    }
    let ratio = (horizon as f64 / FIRST_CHECKPOINT as f64).ln();
    let mut grid: Vec<usize> = (0..CHECKPOINTS)
        .map(|i| {
            let frac = i as f64 / (CHECKPOINTS - 1) as f64;
            ((FIRST_CHECKPOINT as f64) * (ratio * frac).exp()).round() as usize
        })
        .map(|t| t.clamp(FIRST_CHECKPOINT, horizon))
        .collect();
    grid.push(horizon);
    grid.dedup();
    grid
}

/// Builds the policy for one trial. Policy randomness comes from its own stream so the
/// context and demand streams stay shared across policies.
pub fn build_policy(
    kind: PolicyKind,
    spec: &EnvSpec,
    constants: &PricingConstants,
    settings: &PolicySettings,
    seed: u64,
) -> Result<Box<dyn PricingPolicy>> {
    let link = spec.link()?;
    let dim = spec.policy_dim();
    let start = ParamPair::uniform(dim, settings.init_radius);
    let rng = stream_rng(seed, Stream::Policy as u64 + policy_stream_offset(kind));
    Ok(match kind {
        PolicyKind::Pwp => {
            let hyper = match settings.ons {
                Some(h) => h,
                None => OnsHyper::from_constants(constants)?,
            };
            Box::new(PwpPolicy::new(link, *constants, hyper, start, rng)?)
        }
        PolicyKind::Oracle => {
            if spec.expansion.is_some() {
                return Err(PricingError::InvalidArgument(
                    "the oracle policy prices raw contexts and cannot be combined with an expansion"
                        .into(),
                ));
            }
            Box::new(OraclePolicy {
                truth: ParamPair::new(spec.theta_star.clone(), spec.eta_star.clone())?,
                demand: spec.demand_kind,
                link,
            })
        }
        other => {
            let variant = other.rmlp2_variant().expect("remaining kinds are RMLP-2");
            let mut policy = Rmlp2Policy::new(variant, link, *constants, start, rng);
            policy.mle_options.restarts = settings.mle_restarts;
            Box::new(policy)
        }
    })
}

fn policy_stream_offset(kind: PolicyKind) -> u64 {
    match kind {
        PolicyKind::Pwp => 0,
        PolicyKind::Rmlp2Modified => 1,
        PolicyKind::Rmlp2Homoscedastic => 2,
        PolicyKind::Rmlp2Valuation => 3,
        PolicyKind::Oracle => 4,
    }
}

/// Runs `horizon` rounds of `policy` against `spec` with the shared streams of `seed`.
pub fn run_policy_trial(
    spec: &EnvSpec,
    policy: &mut dyn PricingPolicy,
    kind: PolicyKind,
    constants: &PricingConstants,
    horizon: usize,
    seed: u64,
    trace: bool,
) -> Result<TrialResult> {
    let link = spec.link()?;
    let mut contexts = stream_rng(seed, Stream::Contexts as u64);
    let mut noise = stream_rng(seed, Stream::DemandNoise as u64);
    let checkpoints = checkpoint_grid(horizon);
    let truth = ParamPair::new(spec.theta_star.clone(), spec.eta_star.clone())?;
    let track_gap =
        spec.expansion.is_none() && spec.demand_kind != DemandKind::MisspecifiedValuation;

    let mut cum_regret = Vec::with_capacity(checkpoints.len());
    let mut records = trace.then(|| Vec::with_capacity(horizon));
    let mut diagnostics = TrialDiagnostics::default();
    let mut total = 0.0;
    let mut gap = 0.0;
    let mut max_gap = f64::NEG_INFINITY;
    let mut next_checkpoint = 0;

    for t in 1..=horizon {
        let wrap = |e: PricingError| PricingError::Trial {
            seed,
            round: t,
            source: Box::new(e),
        };
        let raw = spec.context(t, &mut contexts).map_err(wrap)?;
        // Drawn every round, whatever the policy, so all policies see the same stream.
        let round_noise = DemandNoise::draw(&mut noise);
        let x = match &spec.expansion {
            Some(exp) => exp.apply(&raw).map_err(wrap)?,
            None => raw.clone(),
        };
        let estimate = if track_gap { policy.params() } else { None };
        let price = policy.price(&x).map_err(wrap)?;
        if price <= constants.c1 || price >= constants.c2 {
            diagnostics.prices_at_bounds += 1;
        }
        let bought = spec.decide(&link, &raw, price, round_noise).map_err(wrap)?;
        let (u, beta) = spec.truth_indices(&raw);
        let regret = spec
            .demand_kind
            .regret(&link, u, beta, price)
            .map_err(wrap)?;
        total += regret;
        let obs = Observation::new(x, price, bought);
        let surrogate = match estimate {
            Some(params) => {
                gap += nll(&link, &params, &obs) - nll(&link, &truth, &obs);
                max_gap = max_gap.max(gap);
                Some(gap)
            }
            None => None,
        };
        policy.update(&obs).map_err(wrap)?;

        if let Some(records) = records.as_mut() {
            records.push(RoundRecord {
                t,
                price,
                bought,
                regret,
                cum_regret: total,
                surrogate_gap: surrogate,
            });
        }
        if next_checkpoint < checkpoints.len() && checkpoints[next_checkpoint] == t {
            cum_regret.push(total);
            next_checkpoint += 1;
        }
    }
    diagnostics.policy = policy.diagnostics();
    Ok(TrialResult {
        policy: kind,
        seed,
        checkpoints,
        cum_regret,
        final_params: policy.params(),
        diagnostics,
        max_surrogate_gap: (max_gap > f64::NEG_INFINITY).then_some(max_gap),
        trace: records,
    })
}

/// Builds `kind` and runs it for one seed.
pub fn run_trial(
    spec: &EnvSpec,
    kind: PolicyKind,
    constants: &PricingConstants,
    horizon: usize,
    seed: u64,
    settings: &PolicySettings,
) -> Result<TrialResult> {
    let mut policy = build_policy(kind, spec, constants, settings, seed)?;
    run_policy_trial(
        spec,
        policy.as_mut(),
        kind,
        constants,
        horizon,
        seed,
        settings.trace,
    )
}

/// Every `(policy, trial)` pair of an experiment, in policy-major order.
#[derive(Debug)]
pub struct TrialBatch {
    pub policies: Vec<PolicyKind>,
    pub trials: usize,
    pub base_seed: u64,
    /// `results[i][j]`: policy `i`, seed `base_seed + j`.
    pub results: Vec<Vec<Result<TrialResult>>>,
}

impl TrialBatch {
    pub fn first_error(&self) -> Option<&PricingError> {
        self.results.iter().flatten().find_map(|r| r.as_ref().err())
    }

    pub fn is_complete(&self) -> bool {
        self.first_error().is_none()
    }

    /// Successful trials of one policy, in seed order.
    pub fn successes(&self, policy_index: usize) -> Vec<&TrialResult> {
        self.results[policy_index]
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .collect()
    }
}

/// Runs all trials on the current rayon pool. Results are placed by index, so the
/// outcome does not depend on completion order.
pub fn run_trials(
    spec: &EnvSpec,
    policies: &[PolicyKind],
    constants: &PricingConstants,
    horizon: usize,
    trials: usize,
    base_seed: u64,
    settings: &PolicySettings,
) -> TrialBatch {
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|i| (0..trials).map(move |j| (i, j)))
        .collect();
    let flat: Vec<Result<TrialResult>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            run_trial(
                spec,
                policies[i],
                constants,
                horizon,
                base_seed.wrapping_add(j as u64),
                settings,
            )
        })
        .collect();
    let mut flat = flat.into_iter();
    let results = (0..policies.len())
        .map(|_| flat.by_ref().take(trials).collect())
        .collect();
    TrialBatch {
        policies: policies.to_vec(),
        trials,
        base_seed,
        results,
    }
}

/// Mean curve, Wald band and log-log slope over a set of trials of one policy.
pub fn aggregate(policy: PolicyKind, trials: &[&TrialResult]) -> Result<RegretCurve> {
    let first = trials.first().ok_or_else(|| {
        PricingError::InvalidArgument(format!("no successful trials to aggregate for {policy}"))
    })?;
    let checkpoints = first.checkpoints.clone();
    if trials.iter().any(|t| t.checkpoints != checkpoints) {
        return Err(PricingError::InvalidArgument(
            "trials disagree on the checkpoint grid".into(),
        ));
    }
    let samples: Vec<Vec<f64>> = (0..checkpoints.len())
        .map(|c| trials.iter().map(|t| t.cum_regret[c]).collect())
        .collect();
    let (mean, half_width) = wald_band(&samples)?;
    // A policy with no regret at all (the oracle) has a flat curve rather than a power law.
    let (slope, slope_stderr) = if mean.iter().all(|&m| m == 0.0) {
        (0.0, 0.0)
    } else {
        loglog_slope(&checkpoints, &mean)?
    };
    Ok(RegretCurve {
        policy,
        checkpoints,
        mean,
        half_width,
        slope,
        slope_stderr,
        trials: trials.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub horizon: usize,
    pub curves: Vec<RegretCurve>,
    pub trials: Vec<Vec<TrialResult>>,
}

impl ExperimentResult {
    pub fn curve(&self, policy: PolicyKind) -> Option<&RegretCurve> {
        self.curves.iter().find(|c| c.policy == policy)
    }
}

/// Runs every policy for `trials` seeds with common random numbers and aggregates.
pub fn run_experiment(
    spec: &EnvSpec,
    policies: &[PolicyKind],
    constants: &PricingConstants,
    horizon: usize,
    trials: usize,
    base_seed: u64,
    settings: &PolicySettings,
) -> Result<ExperimentResult> {
    if trials < 2 {
        return Err(PricingError::InvalidArgument(format!(
            "an experiment needs at least 2 trials, got {trials}"
        )));
    }
    let batch = run_trials(
        spec, policies, constants, horizon, trials, base_seed, settings,
    );
    let mut all = Vec::with_capacity(policies.len());
    for per_policy in batch.results {
        all.push(per_policy.into_iter().collect::<Result<Vec<_>>>()?);
    }
    let curves = policies
        .iter()
        .zip(&all)
        .map(|(&kind, runs)| aggregate(kind, &runs.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        horizon,
        curves,
        trials: all,
    })
}

/// OLS slope of `log2(value)` on `log2(round)` over rounds `>= T/64`, with its standard error.
pub fn loglog_slope(rounds: &[usize], values: &[f64]) -> Result<(f64, f64)> {
    if rounds.len() != values.len() {
        return Err(PricingError::InvalidArgument(
            "rounds and values differ in length".into(),
        ));
    }
    let horizon = rounds.iter().copied().max().unwrap_or(0);
    let start = horizon / FIT_WINDOW_DIVISOR;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in rounds.iter().zip(values) {
        if t >= start.max(1) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PricingError::Domain {
                    what: "regret value inside the slope window",
                    value: v,
                });
            }
            xs.push((t as f64).log2());
            ys.push(v.log2());
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(PricingError::InvalidArgument(format!(
            "slope fit needs at least 3 points in the window, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(PricingError::InvalidArgument(
            "slope window has no spread in rounds".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

/// Per checkpoint: sample mean and `1.96 * sd / sqrt(n)`.
pub fn wald_band(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::with_capacity(samples.len());
    let mut half = Vec::with_capacity(samples.len());
    for row in samples {
        let n = row.len();
        if n < 2 {
            return Err(PricingError::InvalidArgument(format!(
                "a Wald band needs at least 2 samples, got {n}"
            )));
        }
        let nf = n as f64;
        let m = row.iter().sum::<f64>() / nf;
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nf - 1.0);
        mean.push(m);
        half.push(WALD_Z * var.sqrt() / nf.sqrt());
    }
    Ok((mean, half))
}

/// Writes `trial,t,cum_regret`, one row per trial and checkpoint.
pub fn write_trial_csv<W: Write>(out: W, trials: &[&TrialResult], base_seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "t", "cum_regret"])?;
    for trial in trials {
        let index = trial.seed.wrapping_sub(base_seed);
        for (t, v) in trial.checkpoints.iter().zip(&trial.cum_regret) {
            w.write_record([index.to_string(), t.to_string(), format_real(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub env: String,
    pub trials: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub slope: f64,
    pub slope_stderr: f64,
    pub final_mean: f64,
    pub final_halfwidth: f64,
}

impl SummaryRow {
    pub fn from_curve(curve: &RegretCurve, env: &str, horizon: usize) -> Self {
        Self {
            policy: curve.policy.label().to_string(),
            env: env.to_string(),
            trials: curve.trials,
            horizon,
            slope: curve.slope,
            slope_stderr: curve.slope_stderr,
            final_mean: curve.final_mean(),
            final_halfwidth: curve.final_half_width(),
        }
    }
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "policy",
    "env",
    "trials",
    "T",
    "slope",
    "slope_stderr",
    "final_mean",
    "final_halfwidth",
];

/// Writes `policy,env,trials,T,slope,slope_stderr,final_mean,final_halfwidth`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.env.clone(),
            r.trials.to_string(),
            r.horizon.to_string(),
            format_real(r.slope),
            format_real(r.slope_stderr),
            format_real(r.final_mean),
            format_real(r.final_halfwidth),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(SUMMARY_HEADER.iter().copied()) {
        return Err(PricingError::InvalidArgument(format!(
            "summary header must be {}, got {}",
            SUMMARY_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

/// Per-trial rows `(trial, t, cum_regret)` as written by [`write_trial_csv`].
pub fn read_trial_csv<R: std::io::Read>(input: R) -> Result<Vec<(u64, usize, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(["trial", "t", "cum_regret"]) {
        return Err(PricingError::InvalidArgument(
            "trial header must be trial,t,cum_regret".into(),
        ));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Shortest representation that parses back to the same bits.
fn format_real(v: f64) -> String {
    format!("{v:?}")
}

/// The log-log fit line `2^(intercept) t^slope` over the fit window, for plotting.
pub fn fit_intercept(rounds: &[usize], values: &[f64], slope: f64) -> Option<f64> {
    let horizon = rounds.iter().copied().max()?;
    let start = (horizon / FIT_WINDOW_DIVISOR).max(1);
    let pts: Vec<(f64, f64)> = rounds
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= start && **v > 0.0)
        .map(|(t, v)| ((*t as f64).log2(), v.log2()))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    Some(my - slope * mx)
}

/// Convenience for examples: greedy-price regret of a fixed price along the context stream.
pub fn constant_price_regret(
    spec: &EnvSpec,
    link: &LinkModel,
    price: f64,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let mut contexts = stream_rng(seed, Stream::Contexts as u64);
    let mut total = 0.0;
    for t in 1..=horizon {
        let x: DVector<f64> = spec.context(t, &mut contexts)?;
        let (u, beta) = spec.truth_indices(&x);
        total += spec.demand_kind.regret(link, u, beta, price)?;
    }
    Ok(total)
}
