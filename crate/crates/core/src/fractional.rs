//! Sum-of-ratios handling for the weighted offload-latency objective.
//!
//! The weighted latency `sum_k xi_k v_k / R_k` is driven to a stationary
//! point through auxiliary variables `delta_k` (reciprocal rates) and
//! `lambda_k` (epigraph values). At the fixed point `delta_k = 1/R_k` and
//! `lambda_k = xi_k v_k / R_k`; between beamforming solves the auxiliaries
//! move by a damped Newton step on the residuals
//! `chi_k = delta_k R_k - 1`, `kappa_k = lambda_k R_k - xi_k v_k`.

use crate::beamforming;
use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, BeamformingState, ComputeState};

/// Convergence tolerance on the max-norm of the residuals.
pub const FIXED_POINT_TOL: f64 = 1e-6;

/// Hard cap on the damped-step search exponent.
const STEP_SEARCH_CAP: u32 = 60;

#[derive(Debug, Clone, Copy)]
pub struct FracInfo {
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed-point initialization of the auxiliaries from current rates.
pub fn init_aux(rates: &[f64], weights: &[f64], volumes: &[u64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut delta = Vec::with_capacity(rates.len());
    let mut lambda = Vec::with_capacity(rates.len());
    for k in 0..rates.len() {
        if !(rates[k] > 0.0) {
            return Err(Error::Degenerate(format!("UE {k} has non-positive rate")));
        }
        delta.push(1.0 / rates[k]);
        lambda.push(weights[k] * volumes[k] as f64 / rates[k]);
    }
    Ok((delta, lambda))
}

/// Residuals of the fixed-point equations at the given rates.
pub fn residuals(
    delta: &[f64],
    lambda: &[f64],
    rates: &[f64],
    weights: &[f64],
    volumes: &[u64],
) -> (Vec<f64>, Vec<f64>) {
    let chi = delta.iter().zip(rates).map(|(&d, &r)| d * r - 1.0).collect();
    let kappa = lambda
        .iter()
        .zip(rates)
        .zip(weights.iter().zip(volumes))
        .map(|((&l, &r), (&w, &v))| l * r - w * v as f64)
        .collect();
    (chi, kappa)
}

fn residual_norm_sq(chi: &[f64], kappa: &[f64]) -> f64 {
    chi.iter().map(|x| x * x).sum::<f64>() + kappa.iter().map(|x| x * x).sum::<f64>()
}

/// One damped Newton update of the auxiliaries. Returns the new values and
/// the accepted damping exponent `i` (step `zeta^i`).
pub fn newton_step(
    delta: &[f64],
    lambda: &[f64],
    rates: &[f64],
    weights: &[f64],
    volumes: &[u64],
    zeta: f64,
    eps3: f64,
) -> Result<(Vec<f64>, Vec<f64>, u32)> {
    assert!(zeta > 0.0 && zeta < 1.0, "damping base must lie in (0,1)");
    let (chi, kappa) = residuals(delta, lambda, rates, weights, volumes);
    let current = residual_norm_sq(&chi, &kappa);
    if current == 0.0 {
        return Ok((delta.to_vec(), lambda.to_vec(), 0));
    }
    for k in 0..rates.len() {
        if !(rates[k] > 0.0) {
            return Err(Error::Degenerate(format!("UE {k} has non-positive rate")));
        }
    }
    for i in 0..=STEP_SEARCH_CAP {
        let step = zeta.powi(i as i32);
        let new_delta: Vec<f64> = delta
            .iter()
            .zip(chi.iter().zip(rates))
            .map(|(&d, (&c, &r))| d - step * c / r)
            .collect();
        let new_lambda: Vec<f64> = lambda
            .iter()
            .zip(kappa.iter().zip(rates))
            .map(|(&l, (&c, &r))| l - step * c / r)
            .collect();
        let (nchi, nkappa) = residuals(&new_delta, &new_lambda, rates, weights, volumes);
        let bound = (1.0 - eps3 * step).powi(2) * current;
        if residual_norm_sq(&nchi, &nkappa) <= bound {
            return Ok((new_delta, new_lambda, i));
        }
    }
    Err(Error::StepSearchStalled)
}

/// Alternates the inner beamforming solve with auxiliary updates until the
/// fixed point holds to [`FIXED_POINT_TOL`]. Only UEs that actually offload
/// participate; the rest keep `lambda = 0` so their rate carries no weight.
pub fn outer_loop(
    ch: &ChannelSet,
    state: BeamformingState,
    compute: &ComputeState,
    cfg: &SystemConfig,
) -> Result<(BeamformingState, FracInfo)> {
    outer_loop_with_tol(ch, state, compute, cfg, FIXED_POINT_TOL)
}

/// [`outer_loop`] with an explicit residual tolerance (the driver trades a
/// looser fixed point for speed; its own stop rule operates at the weighted
/// latency level).
///
/// The convergence measure is dimensionless: `chi_k` already is, and
/// `kappa_k` is divided by its natural scale `xi_k v_k`.
pub fn outer_loop_with_tol(
    ch: &ChannelSet,
    mut state: BeamformingState,
    compute: &ComputeState,
    cfg: &SystemConfig,
    tol: f64,
) -> Result<(BeamformingState, FracInfo)> {
    let k_all = cfg.num_ues;
    let participants: Vec<usize> =
        (0..k_all).filter(|&k| compute.offload_bits[k] > 0).collect();
    if participants.is_empty() {
        state.frac_delta = vec![0.0; k_all];
        state.frac_lambda = vec![0.0; k_all];
        return Ok((state, FracInfo { residual: 0.0, iterations: 0, converged: true }));
    }
    let gather = |full: &[f64]| -> Vec<f64> { participants.iter().map(|&k| full[k]).collect() };
    let volumes: Vec<u64> = participants.iter().map(|&k| compute.offload_bits[k]).collect();
    let weights: Vec<f64> = gather(&cfg.weights);

    let mut rates_full = metrics::rates(ch, &state, cfg)?;
    let mut rates = gather(&rates_full);
    let (mut delta, mut lambda) = init_aux(&rates, &weights, &volumes)?;

    let offload_objective = |rates_p: &[f64]| -> f64 {
        rates_p
            .iter()
            .zip(weights.iter().zip(&volumes))
            .map(|(&r, (&w, &v))| w * v as f64 / r)
            .sum()
    };

    let mut best_obj = offload_objective(&rates);
    let mut best_state = state.clone();
    let mut best_rates = rates.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for t in 0..cfg.max_iters.fractional {
        iterations = t + 1;
        // Tighten the inner solve as the fixed point approaches so the rate
        // drift between passes can actually fall below the tolerance.
        let qcqp_tol = if residual > 1e-3 { 1e-6 } else { 1e-8 };
        let inner_eps = (tol * 0.3).max(1e-10);
        let mut weights_dl = vec![0.0; k_all];
        for (p, &k) in participants.iter().enumerate() {
            weights_dl[k] = delta[p] * lambda[p];
        }
        let (next, _) = beamforming::inner_loop_eps(ch, state, &weights_dl, cfg, qcqp_tol, inner_eps)?;
        state = next;
        rates_full = metrics::rates(ch, &state, cfg)?;
        rates = gather(&rates_full);

        let obj = offload_objective(&rates);
        if obj < best_obj {
            best_obj = obj;
            best_state = state.clone();
            best_rates = rates.clone();
        }

        let (chi, kappa) = residuals(&delta, &lambda, &rates, &weights, &volumes);
        residual = 0.0f64;
        for p in 0..participants.len() {
            residual = residual.max(chi[p].abs());
            residual = residual.max(kappa[p].abs() / (weights[p] * volumes[p] as f64));
        }
        if residual < tol {
            converged = true;
            break;
        }
        let (nd, nl, _) = newton_step(&delta, &lambda, &rates, &weights, &volumes, cfg.newton_step, cfg.newton_eps)?;
        delta = nd;
        lambda = nl;
    }

    let (final_state, final_rates) = if converged {
        (state, rates)
    } else {
        (best_state, best_rates)
    };
    let mut state = final_state;
    // Park the auxiliaries exactly on the fixed point of the returned rates
    // (a full Newton step at fixed rates lands there in one move).
    state.frac_delta = vec![0.0; k_all];
    state.frac_lambda = vec![0.0; k_all];
    for (p, &k) in participants.iter().enumerate() {
        state.frac_delta[k] = 1.0 / final_rates[p];
        state.frac_lambda[k] = weights[p] * volumes[p] as f64 / final_rates[p];
    }
    for k in 0..k_all {
        if !participants.contains(&k) {
            if rates_full[k] > 0.0 {
                state.frac_delta[k] = 1.0 / rates_full[k];
            }
            state.frac_lambda[k] = 0.0;
        }
    }
    Ok((state, FracInfo { residual, iterations, converged }))
}
