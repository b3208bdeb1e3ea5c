//! Offloading volumes and edge-CPU allocation.
//!
//! For a fixed edge allocation the latency-minimizing offload volume has a
//! closed form (local and edge branches equalize); the integer optimum is the
//! better of floor/ceil. For fixed volumes the edge split solves a convex
//! per-UE water-filling via its KKT conditions and a bisection on the
//! multiplier. The two steps alternate until the weighted latency settles.

use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, BeamformingState, ComputeState};

/// Relative tolerance of the bisection on the resource-sum residual.
const SUM_TOL_REL: f64 = 1e-9;

/// Latency of one UE at offload volume `v` (bits may be fractional here; the
/// integer search and the equalization check share this evaluation).
pub fn ue_latency(task_bits: f64, v: f64, cycles: f64, f_local: f64, f_edge: f64, rate: f64) -> f64 {
    let local = if task_bits > v {
        if f_local > 0.0 { (task_bits - v) * cycles / f_local } else { f64::INFINITY }
    } else {
        0.0
    };
    let remote = if v > 0.0 {
        let off = if rate > 0.0 { v / rate } else { f64::INFINITY };
        let edge = if f_edge > 0.0 { v * cycles / f_edge } else { f64::INFINITY };
        off + edge
    } else {
        0.0
    };
    local.max(remote)
}

/// Continuous offload volume at which local and edge latencies equalize.
pub fn optimal_offload_fraction(
    task_bits: u64,
    cycles: f64,
    f_local: f64,
    f_edge: f64,
    rate: f64,
) -> Result<f64> {
    let v = task_bits as f64;
    let numerator = v * cycles * rate * f_edge;
    if numerator == 0.0 {
        return Ok(if f_local > 0.0 {
            0.0
        } else if rate > 0.0 && f_edge > 0.0 {
            v
        } else if v == 0.0 {
            0.0
        } else {
            return Err(Error::Degenerate(
                "offload optimum undefined: no local CPU, no usable uplink".into(),
            ));
        });
    }
    let denominator = f_edge * f_local + cycles * rate * (f_edge + f_local);
    if denominator == 0.0 {
        return Err(Error::Degenerate("offload optimum denominator is zero".into()));
    }
    Ok(numerator / denominator)
}

/// Integer offload volume: better of floor/ceil of the continuous optimum,
/// clamped to `[0, V]`; ties go to the floor.
pub fn integer_offload(
    task_bits: u64,
    cycles: f64,
    f_local: f64,
    f_edge: f64,
    rate: f64,
) -> Result<u64> {
    let cont = optimal_offload_fraction(task_bits, cycles, f_local, f_edge, rate)?;
    let lo = (cont.floor().max(0.0) as u64).min(task_bits);
    let hi = (cont.ceil().max(0.0) as u64).min(task_bits);
    let t_lo = ue_latency(task_bits as f64, lo as f64, cycles, f_local, f_edge, rate);
    let t_hi = ue_latency(task_bits as f64, hi as f64, cycles, f_local, f_edge, rate);
    Ok(if t_lo <= t_hi { lo } else { hi })
}

/// Per-UE inputs of the edge-allocation subproblem.
#[derive(Debug, Clone, Copy)]
pub struct EdgeUe {
    pub weight: f64,
    pub task_bits: u64,
    pub cycles: f64,
    pub local_cpu: f64,
    pub rate: f64,
}

fn kkt_allocation(ue: &EdgeUe, mu: f64) -> f64 {
    let v = ue.task_bits as f64;
    let root = (ue.weight * v * ue.cycles.powi(3) * ue.rate * ue.rate / mu).sqrt();
    let num = root - ue.cycles * ue.rate * ue.local_cpu;
    (num / (ue.local_cpu + ue.cycles * ue.rate)).max(0.0)
}

/// Objective of the allocation subproblem at the equalized offload volume.
pub fn edge_objective(ues: &[EdgeUe], alloc: &[f64]) -> f64 {
    ues.iter()
        .zip(alloc)
        .map(|(u, &f_e)| {
            let v = u.task_bits as f64;
            let num = v * u.cycles * u.cycles * u.rate + v * u.cycles * f_e;
            let den = f_e * u.local_cpu + u.cycles * u.rate * (f_e + u.local_cpu);
            if den == 0.0 { 0.0 } else { u.weight * num / den }
        })
        .sum()
}

/// Stationarity residual of the KKT condition for one UE at (`f_e`, `mu`).
pub fn kkt_residual(ue: &EdgeUe, f_e: f64, mu: f64) -> f64 {
    let v = ue.task_bits as f64;
    let den = ue.cycles * ue.rate * ue.local_cpu + (ue.local_cpu + ue.cycles * ue.rate) * f_e;
    mu - ue.weight * v * ue.cycles.powi(3) * ue.rate * ue.rate / (den * den)
}

/// Splits the edge CPU budget across UEs. Requires a strictly positive rate
/// for every UE passed in; callers exclude UEs that cannot offload.
pub fn edge_allocation(ues: &[EdgeUe], f_total: f64) -> Result<Vec<f64>> {
    if !(f_total > 0.0) {
        return Err(Error::Degenerate("edge CPU budget must be positive".into()));
    }
    for (i, u) in ues.iter().enumerate() {
        if !(u.rate > 0.0) {
            return Err(Error::Degenerate(format!("UE {i} has non-positive rate")));
        }
    }
    if ues.is_empty() {
        return Ok(vec![]);
    }
    if ues.len() == 1 {
        // Objective strictly decreasing in the allocation: hand over everything.
        return Ok(vec![f_total]);
    }
    // The sum of allocations decreases monotonically in mu. Above
    // max_k (xi V c / f_l^2) every UE clips to zero, so the root is bracketed.
    let mu_hi_start = ues
        .iter()
        .map(|u| u.weight * u.task_bits as f64 * u.cycles / (u.local_cpu * u.local_cpu))
        .fold(0.0f64, f64::max);
    if mu_hi_start == 0.0 {
        return Ok(vec![0.0; ues.len()]);
    }
    let sum_at = |mu: f64| -> f64 { ues.iter().map(|u| kkt_allocation(u, mu)).sum() };
    let mut mu_lo = mu_hi_start * 1e-30;
    let mut mu_hi = mu_hi_start;
    // Grow the lower edge until the sum exceeds the budget.
    while sum_at(mu_lo) < f_total {
        mu_lo *= 0.5;
        if mu_lo < f64::MIN_POSITIVE * 1e10 {
            break;
        }
    }
    let mut mu = mu_hi;
    for _ in 0..200 {
        mu = 0.5 * (mu_lo + mu_hi);
        let s = sum_at(mu);
        if (s - f_total).abs() <= SUM_TOL_REL * f_total {
            break;
        }
        if s > f_total {
            mu_lo = mu;
        } else {
            mu_hi = mu;
        }
    }
    let mut alloc: Vec<f64> = ues.iter().map(|u| kkt_allocation(u, mu)).collect();
    // Land the sum exactly on the budget; the allocation is within the
    // bisection tolerance of the KKT point, so this is a relative 1e-9 nudge.
    let s: f64 = alloc.iter().sum();
    if s > 0.0 {
        let scale = f_total / s;
        for a in &mut alloc {
            *a *= scale;
        }
    }
    Ok(alloc)
}

/// Joint offloading/allocation alternation for the current beamforming state.
pub fn alternate_compute(
    ch: &ChannelSet,
    state: &BeamformingState,
    cfg: &SystemConfig,
) -> Result<ComputeState> {
    let rates = metrics::rates(ch, state, cfg)?;
    alternate_compute_with_rates(&rates, cfg)
}

/// Same, for precomputed rates. UEs with no usable uplink (or empty tasks)
/// stay local and receive no edge cycles.
pub fn alternate_compute_with_rates(rates: &[f64], cfg: &SystemConfig) -> Result<ComputeState> {
    let k = cfg.num_ues;
    let active: Vec<usize> = (0..k)
        .filter(|&u| rates[u] > 0.0 && cfg.task_bits[u] > 0)
        .collect();
    let mut compute = ComputeState { offload_bits: vec![0; k], edge_cpu: vec![0.0; k] };
    if active.is_empty() {
        return Ok(compute);
    }
    let ues: Vec<EdgeUe> = active
        .iter()
        .map(|&u| EdgeUe {
            weight: cfg.weights[u],
            task_bits: cfg.task_bits[u],
            cycles: cfg.cycles_per_bit[u],
            local_cpu: cfg.local_cpu[u],
            rate: rates[u],
        })
        .collect();

    // Start from a uniform split.
    for &u in &active {
        compute.edge_cpu[u] = cfg.edge_cpu_total / active.len() as f64;
    }
    let mut prev_obj = f64::INFINITY;
    for _ in 0..cfg.max_iters.compute {
        for &u in &active {
            compute.offload_bits[u] = integer_offload(
                cfg.task_bits[u],
                cfg.cycles_per_bit[u],
                cfg.local_cpu[u],
                compute.edge_cpu[u],
                rates[u],
            )?;
        }
        let alloc = edge_allocation(&ues, cfg.edge_cpu_total)?;
        for (&u, &f_e) in active.iter().zip(alloc.iter()) {
            compute.edge_cpu[u] = f_e;
            if f_e == 0.0 {
                compute.offload_bits[u] = 0;
            }
        }
        let obj = metrics::latency_with_rates(rates, &compute, cfg)?.weighted_total;
        debug_assert!(obj <= prev_obj * (1.0 + 1e-12) + 1e-300);
        if prev_obj.is_finite() && (prev_obj - obj).abs() <= cfg.epsilon * obj.abs().max(1e-300) {
            break;
        }
        prev_obj = obj;
    }
    Ok(compute)
}

/// Allocation for the full-offloading baseline (every bit goes to the edge):
/// the weighted edge time is minimized by splitting proportionally to
/// `sqrt(xi V c)`.
pub fn full_offload_allocation(cfg: &SystemConfig, rates: &[f64]) -> Result<ComputeState> {
    let k = cfg.num_ues;
    for u in 0..k {
        if cfg.task_bits[u] > 0 && !(rates[u] > 0.0) {
            return Err(Error::Degenerate(format!(
                "full offloading impossible for UE {u}: no usable uplink"
            )));
        }
    }
    let roots: Vec<f64> = (0..k)
        .map(|u| (cfg.weights[u] * cfg.task_bits[u] as f64 * cfg.cycles_per_bit[u]).sqrt())
        .collect();
    let total: f64 = roots.iter().sum();
    let mut compute = ComputeState { offload_bits: cfg.task_bits.clone(), edge_cpu: vec![0.0; k] };
    if total == 0.0 {
        compute.offload_bits = vec![0; k];
        return Ok(compute);
    }
    for u in 0..k {
        compute.edge_cpu[u] = cfg.edge_cpu_total * roots[u] / total;
        if cfg.task_bits[u] == 0 {
            compute.edge_cpu[u] = 0.0;
        }
    }
    Ok(compute)
}
