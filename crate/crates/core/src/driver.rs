//! Top-level alternation: compute settings against beamforming, with a
//! per-iteration latency trace. Both phases are accepted only when they do
//! not worsen the weighted latency, so the trace is non-increasing by
//! construction; a rejected phase ends the loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::compute;
use crate::config::SystemConfig;
use crate::error::Result;
use crate::fractional;
use crate::linalg::derive_seed;
use crate::metrics::{self, BeamformingState, ComputeState, LatencyReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub weighted_latency: f64,
    pub per_ue: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: BeamformingState,
    pub compute: ComputeState,
    pub report: LatencyReport,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
}

/// Options for the baseline variants of the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct DriverOptions {
    /// Optimize RIS phases (false holds the initial draw fixed).
    pub optimize_ris: bool,
    /// Force full offloading (`v_k = V_k`) instead of the partial split.
    pub full_offload: bool,
}

impl Default for DriverOptions {
    fn default() -> Self {
        DriverOptions { optimize_ris: true, full_offload: false }
    }
}

/// Joint optimization of compute settings and beamforming for one
/// realization. `init_seed` drives every random initialization choice.
pub fn algorithm4(ch: &ChannelSet, cfg: &SystemConfig, init_seed: u64) -> Result<Solution> {
    algorithm4_with(ch, cfg, init_seed, DriverOptions::default())
}

pub fn algorithm4_with(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    init_seed: u64,
    opts: DriverOptions,
) -> Result<Solution> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(init_seed, 0x696e6974)); // "init"
    let mut state = crate::beamforming::initialize(ch, cfg, &mut rng)?;
    let mut cfg_inner = cfg.clone();
    if !opts.optimize_ris {
        // Freeze the phase block: the inner loop skips the MM step entirely.
        cfg_inner.ris_elements = 0;
    }

    let compute_phase = |state: &BeamformingState,
                         previous: Option<&ComputeState>|
     -> Result<(ComputeState, LatencyReport)> {
        let rates = metrics::rates(ch, state, cfg)?;
        let fresh = if opts.full_offload {
            compute::full_offload_allocation(cfg, &rates)?
        } else {
            compute::alternate_compute_with_rates(&rates, cfg)?
        };
        let fresh_report = metrics::latency_with_rates(&rates, &fresh, cfg)?;
        if let Some(prev) = previous {
            let prev_report = metrics::latency_with_rates(&rates, prev, cfg)?;
            if prev_report.weighted_total < fresh_report.weighted_total {
                return Ok((prev.clone(), prev_report));
            }
        }
        Ok((fresh, fresh_report))
    };

    let (mut compute_state, mut report) = compute_phase(&state, None)?;
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 0..cfg.max_iters.outer {
        iterations = t + 1;
        // Beamforming phase at fixed compute settings; reject a pass that
        // does not improve the weighted latency.
        let theta_frozen = state.theta.clone();
        let (candidate, _info) =
            fractional::outer_loop_with_tol(ch, state.clone(), &compute_state, &cfg_inner, 1e-4)?;
        let mut candidate = candidate;
        if !opts.optimize_ris {
            candidate.theta = theta_frozen;
        }
        let cand_report = metrics::latency(ch, &candidate, &compute_state, cfg)?;
        let accepted = cand_report.weighted_total <= report.weighted_total;
        if accepted {
            state = candidate;
            report = cand_report;
        }

        // Compute phase at the (possibly new) rates.
        let (next_compute, next_report) = compute_phase(&state, Some(&compute_state))?;
        compute_state = next_compute;
        report = next_report;

        trace.push(TracePoint {
            iteration: t,
            weighted_latency: report.weighted_total,
            per_ue: report.per_ue.clone(),
        });
        if t > 0 {
            let prev = trace[t - 1].weighted_latency;
            let cur = report.weighted_total;
            if (prev - cur).abs() <= cfg.epsilon * cur.abs().max(1e-300) {
                converged = true;
                break;
            }
        }
        if !accepted {
            // No further beamforming progress is possible from this state.
            converged = true;
            break;
        }
    }

    Ok(Solution { state, compute: compute_state, report, trace, iterations, converged })
}
