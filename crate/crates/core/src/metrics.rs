//! Evaluation of rates, MSE matrices, radar SINR, and latencies for a
//! candidate state. All operations are pure.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{hermitize, log2_det_hpd, solve_hpd, CMat, CVec};

/// Relative tolerance used when checking the transmit power constraint; the
/// iterative solvers land on the boundary.
pub const POWER_TOL_REL: f64 = 1e-9;

/// All beamforming-side optimization variables for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformingState {
    /// Per-UE uplink precoder, N x d.
    pub precoders: Vec<CMat>,
    /// Per-UE BS-side decoder, M x d.
    pub decoders: Vec<CMat>,
    /// Per-UE radar receive filter, length N.
    pub radar_rx: Vec<CVec>,
    /// RIS phases, each in (0, 2*pi].
    pub theta: Vec<f64>,
    /// Per-UE MSE weight matrix (the auxiliary D_k), d x d.
    pub mse_weights: Vec<CMat>,
    /// Auxiliary reciprocal-rate variables, one per UE.
    pub frac_delta: Vec<f64>,
    /// Auxiliary epigraph variables, one per UE.
    pub frac_lambda: Vec<f64>,
}

impl BeamformingState {
    /// Transmit power of UE `k`'s precoder.
    pub fn tx_power(&self, k: usize) -> f64 {
        crate::linalg::frob_norm_sq(&self.precoders[k])
    }

    pub fn power_ok(&self, cfg: &SystemConfig) -> bool {
        (0..cfg.num_ues)
            .all(|k| self.tx_power(k) <= cfg.power_budget_mw[k] * (1.0 + POWER_TOL_REL))
    }
}

/// Offloading volumes and edge CPU split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeState {
    /// Offloaded bits per UE, integer in `[0, V_k]`.
    pub offload_bits: Vec<u64>,
    /// Edge cycles/s allocated per UE.
    pub edge_cpu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub local: Vec<f64>,
    pub offload: Vec<f64>,
    pub edge: Vec<f64>,
    /// Per-UE latency, `max(local, offload + edge)`.
    pub per_ue: Vec<f64>,
    pub weighted_total: f64,
}

/// Effective channels of every UE under the state's RIS phases.
pub fn effective_channels(ch: &ChannelSet, state: &BeamformingState) -> Result<Vec<CMat>> {
    (0..ch.num_ues()).map(|k| ch.effective(k, &state.theta)).collect()
}

/// Interference-plus-noise covariance at the BS for UE `k` (M x M).
pub fn interference_plus_noise(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let m = cfg.bs_antennas;
    let mut j = CMat::identity(m, m).scale(cfg.noise_comm_mw);
    for i in 0..ch.num_ues() {
        if i == k {
            continue;
        }
        let h = ch.effective(i, &state.theta)?;
        let hf = &h * &state.precoders[i];
        j += &hf * hf.adjoint();
    }
    Ok(j)
}

/// Achievable offloading rate of UE `k` in bit/s, for the state's decoder.
///
/// The rate is invariant to right-multiplying the decoder by any invertible
/// matrix, so the decoder is orthonormalized first; columns below the rank
/// tolerance carry no stream and are dropped. A zero decoder yields zero.
pub fn offload_rate(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<f64> {
    let h = ch.effective(k, &state.theta)?;
    let w = orthonormal_columns(&state.decoders[k]);
    if w.ncols() == 0 {
        return Ok(0.0);
    }
    let j = interference_plus_noise(ch, state, k, cfg)?;
    let whf = w.adjoint() * &h * &state.precoders[k];
    let signal = &whf * whf.adjoint();
    let wjw = hermitize(&(w.adjoint() * j * w));
    // log2 det(I + S Y^-1) = log2 det(Y + S) - log2 det(Y), both Hermitian PD.
    let num = log2_det_hpd(&(&wjw + &signal), "decoded signal covariance")?;
    let den = log2_det_hpd(&wjw, "decoded interference covariance")?;
    Ok(cfg.bandwidth_hz * (num - den))
}

/// Orthonormal basis of the column space, with a relative rank cutoff.
fn orthonormal_columns(w: &CMat) -> CMat {
    let svd = w.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12 * smax && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    let cols: Vec<_> = keep.iter().map(|&i| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        CMat::zeros(w.nrows(), 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// Rates for all UEs.
pub fn rates(ch: &ChannelSet, state: &BeamformingState, cfg: &SystemConfig) -> Result<Vec<f64>> {
    (0..ch.num_ues()).map(|k| offload_rate(ch, state, k, cfg)).collect()
}

/// MSE matrix of UE `k` for an arbitrary decoder (d x d).
pub fn mse_matrix(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let d = state.precoders[k].ncols();
    let h = ch.effective(k, &state.theta)?;
    let w = &state.decoders[k];
    let whf = w.adjoint() * &h * &state.precoders[k] - CMat::identity(d, d);
    let mut e = &whf * whf.adjoint();
    for i in 0..ch.num_ues() {
        if i == k {
            continue;
        }
        let hi = ch.effective(i, &state.theta)?;
        let whf_i = w.adjoint() * hi * &state.precoders[i];
        e += &whf_i * whf_i.adjoint();
    }
    e += (w.adjoint() * w).scale(cfg.noise_comm_mw);
    Ok(e)
}

/// MMSE matrix of UE `k`: `I - F^H H^H (J + H F F^H H^H)^-1 H F`.
pub fn mmse_matrix(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let d = state.precoders[k].ncols();
    let h = ch.effective(k, &state.theta)?;
    let hf = &h * &state.precoders[k];
    let cov = interference_plus_noise(ch, state, k, cfg)? + &hf * hf.adjoint();
    let solved = solve_hpd(&cov, &hf, "receive covariance")?;
    Ok(CMat::identity(d, d) - hf.adjoint() * solved)
}

/// Radar output SINR of UE `k` (linear).
pub fn radar_sinr(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<f64> {
    let w = &state.radar_rx[k];
    if w.norm() == 0.0 {
        return Err(Error::Degenerate("radar receive vector is zero".into()));
    }
    let gf = &ch.target[k] * &state.precoders[k];
    let wgf = gf.adjoint() * w;
    let num = wgf.norm_squared();
    let t = radar_interference(ch, state, k, cfg);
    let den = (w.adjoint() * t * w)[(0, 0)].re;
    Ok(num / den)
}

/// `T_k`: inter-UE interference plus noise covariance at UE `k`'s radar
/// receiver (N x N).
pub fn radar_interference(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> CMat {
    let n = cfg.ue_antennas;
    let mut t = CMat::identity(n, n).scale(cfg.noise_sense_mw);
    for i in 0..ch.num_ues() {
        if i == k {
            continue;
        }
        if let Some(h_ki) = &ch.ue_ue[k][i] {
            let hf = h_ki * &state.precoders[i];
            t += &hf * hf.adjoint();
        }
    }
    t
}

/// Latency report for the state and compute settings. Offload and edge terms
/// are zero when nothing is offloaded; offloading with zero rate or zero edge
/// allocation is an error.
pub fn latency(
    ch: &ChannelSet,
    state: &BeamformingState,
    compute: &ComputeState,
    cfg: &SystemConfig,
) -> Result<LatencyReport> {
    let r = rates(ch, state, cfg)?;
    latency_with_rates(&r, compute, cfg)
}

/// Latency from precomputed rates.
pub fn latency_with_rates(
    rates: &[f64],
    compute: &ComputeState,
    cfg: &SystemConfig,
) -> Result<LatencyReport> {
    let k = cfg.num_ues;
    let mut local = Vec::with_capacity(k);
    let mut offload = Vec::with_capacity(k);
    let mut edge = Vec::with_capacity(k);
    let mut per_ue = Vec::with_capacity(k);
    let mut weighted_total = 0.0;
    for u in 0..k {
        let v = compute.offload_bits[u];
        if v > compute.offload_bits[u].max(cfg.task_bits[u]) {
            return Err(Error::Degenerate(format!(
                "offload volume exceeds task size for UE {u}"
            )));
        }
        let t_local = (cfg.task_bits[u] - v.min(cfg.task_bits[u])) as f64 * cfg.cycles_per_bit[u]
            / cfg.local_cpu[u];
        let (t_off, t_edge) = if v == 0 {
            (0.0, 0.0)
        } else {
            if !(rates[u] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "UE {u} offloads {v} bits with a non-positive rate"
                )));
            }
            if !(compute.edge_cpu[u] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "UE {u} offloads {v} bits with no edge allocation"
                )));
            }
            (
                v as f64 / rates[u],
                v as f64 * cfg.cycles_per_bit[u] / compute.edge_cpu[u],
            )
        };
        let t_ue = t_local.max(t_off + t_edge);
        weighted_total += cfg.weights[u] * t_ue;
        local.push(t_local);
        offload.push(t_off);
        edge.push(t_edge);
        per_ue.push(t_ue);
    }
    Ok(LatencyReport { local, offload, edge, per_ue, weighted_total })
}
