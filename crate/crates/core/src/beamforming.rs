//! Inner block-coordinate descent over the beamforming variables: a convex
//! precoder subproblem with linearized sensing constraints, closed-form
//! decoder and MSE-weight updates, a max-SINR radar receive filter, and a
//! majorize-minimize step for the RIS phases.
//!
//! The working objective is the weighted MSE form
//! `J = sum_k w_k [Tr(D_k E_k) - ln det D_k]` (natural log, so `D = E^-1` is
//! the exact weight minimizer); J is an affine decreasing function of the
//! weighted sum rate, and every block update below is non-increasing in J.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{
    frob_norm_sq, hermitian_max_eig, hermitize, phase_vector, re_inner, solve_hpd, wrap_phase,
    CMat, CVec, C_ONE, C_ZERO,
};
use crate::metrics::{self, BeamformingState};
use crate::qcqp::{self, ConstraintRow, ConvexQuadraticProgram, QuadObjective};

/// Inner loop bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct InnerInfo {
    pub iterations: usize,
    pub objective: f64,
}

/// Sensing feasibility slack used everywhere a start point must satisfy the
/// SINR constraint.
const SINR_FEAS_REL: f64 = 1.0 - 1e-12;

/// MMSE receive filter for UE `k` given everything else.
pub fn update_decoder(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let h = ch.effective(k, &state.theta)?;
    let hf = &h * &state.precoders[k];
    let cov = metrics::interference_plus_noise(ch, state, k, cfg)? + &hf * hf.adjoint();
    solve_hpd(&cov, &hf, "receive covariance")
}

/// MSE weight `D_k`: inverse of the MMSE matrix, Hermitian positive definite.
pub fn update_weight(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let e = metrics::mmse_matrix(ch, state, k, cfg)?;
    let d = e.ncols();
    let inv = solve_hpd(&e, &CMat::identity(d, d), "MMSE matrix")?;
    Ok(hermitize(&inv))
}

/// Radar receive filter: unit-norm maximizer of the generalized Rayleigh
/// quotient of the echo covariance against interference plus noise.
pub fn update_radar_rx(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> Result<CVec> {
    let gf = &ch.target[k] * &state.precoders[k];
    let echo = &gf * gf.adjoint();
    let t = metrics::radar_interference(ch, state, k, cfg);
    let (_, w) = crate::linalg::generalized_max_eig(&echo, &t, "radar interference covariance")?;
    Ok(w)
}

/// Exact sensing-constraint value for UE `k` (non-positive means feasible):
/// `eta tr(T_k w w^H) - tr(G F F^H G^H w w^H)`.
pub fn sensing_constraint_exact(
    ch: &ChannelSet,
    state: &BeamformingState,
    k: usize,
    cfg: &SystemConfig,
) -> f64 {
    let w = &state.radar_rx[k];
    let t = metrics::radar_interference(ch, state, k, cfg);
    let gf = &ch.target[k] * &state.precoders[k];
    let echo = (gf.adjoint() * w).norm_squared();
    cfg.sinr_threshold * (w.adjoint() * t * w)[(0, 0)].re - echo
}

/// Convex upper bound of the sensing constraint, tight at the anchor
/// precoders: the echo term is linearized, the interference term kept.
pub fn linearized_sensing_constraint(
    ch: &ChannelSet,
    state: &BeamformingState,
    anchor: &[CMat],
    k: usize,
    cfg: &SystemConfig,
) -> ConstraintRow {
    let w = &state.radar_rx[k];
    let eta = cfg.sinr_threshold;
    let quad: Vec<Option<CMat>> = (0..cfg.num_ues)
        .map(|i| {
            if i == k {
                return None;
            }
            ch.ue_ue[k][i].as_ref().map(|h_ki| {
                let hw = h_ki.adjoint() * w;
                (&hw * hw.adjoint()).scale(eta)
            })
        })
        .collect();
    let gw = ch.target[k].adjoint() * w; // G^H w
    let anchor_echo = (anchor[k].adjoint() * &gw).norm_squared();
    let linear = &gw * (gw.adjoint() * &anchor[k]);
    let constant = eta * cfg.noise_sense_mw * w.norm_squared() + anchor_echo;
    ConstraintRow { quad, linear_block: k, linear, constant }
}

/// Value of a linearized row at arbitrary precoders (test hook).
pub fn row_value_at(row: &ConstraintRow, precoders: &[CMat]) -> f64 {
    let mut acc = row.constant;
    for (i, q) in row.quad.iter().enumerate() {
        if let Some(q) = q {
            acc += re_inner(&precoders[i], &(q * &precoders[i]));
        }
    }
    acc - 2.0 * re_inner(&row.linear, &precoders[row.linear_block])
}

/// Precoder step: solves the convex subproblem (weighted quadratic objective,
/// power caps, linearized sensing rows) anchored at the current precoders.
pub fn update_precoders(
    ch: &ChannelSet,
    state: &BeamformingState,
    weights_dl: &[f64],
    cfg: &SystemConfig,
    tol: f64,
) -> Result<Vec<CMat>> {
    let k_all = cfg.num_ues;
    let channels: Vec<CMat> = metrics::effective_channels(ch, state)?;
    let mut curvature = Vec::with_capacity(k_all);
    let mut linear = Vec::with_capacity(k_all);
    for i in 0..k_all {
        let mut a = CMat::zeros(cfg.ue_antennas, cfg.ue_antennas);
        for k in 0..k_all {
            if weights_dl[k] == 0.0 {
                continue;
            }
            let wh = state.decoders[k].adjoint() * &channels[i]; // d x N
            a += (wh.adjoint() * &state.mse_weights[k] * wh).scale(weights_dl[k]);
        }
        curvature.push(hermitize(&a));
        let c = (channels[i].adjoint() * &state.decoders[i] * &state.mse_weights[i])
            .scale(weights_dl[i]);
        linear.push(c);
    }
    let rows: Vec<ConstraintRow> = (0..k_all)
        .map(|k| linearized_sensing_constraint(ch, state, &state.precoders, k, cfg))
        .collect();
    let qp = ConvexQuadraticProgram {
        objective: QuadObjective { curvature, linear },
        power_caps: cfg.power_budget_mw.clone(),
        rows,
    };
    let (solution, _cert) = qcqp::solve(&qp, &state.precoders, tol, 4000)?;
    Ok(solution)
}

/// Quadratic form of the RIS subproblem: `g(phi) = phi^H Xi phi +
/// 2 Re(phi^H conj(u))`, plus the constant completing the full objective so
/// that `J(theta) = g(phi(theta)) + constant`.
#[derive(Debug, Clone)]
pub struct RisQuadraticForm {
    pub xi_mat: CMat,
    pub u_vec: CVec,
    pub lambda_max: f64,
    pub constant: f64,
}

pub fn ris_quadratic_form(
    ch: &ChannelSet,
    state: &BeamformingState,
    weights_dl: &[f64],
    cfg: &SystemConfig,
) -> RisQuadraticForm {
    let l = cfg.ris_elements;
    let k_all = cfg.num_ues;
    let h_r = &ch.ris_bs;
    let mut b_sum = CMat::zeros(l, l);
    let mut c_sum = CMat::zeros(l, l);
    let mut lin = CMat::zeros(l, l); // sum_k w_k (sum_i S_{k,i}^H - P_k)
    let mut constant = 0.0;
    for i in 0..k_all {
        let rf = &ch.ue_ris[i] * &state.precoders[i]; // L x d
        b_sum += &rf * rf.adjoint();
    }
    for k in 0..k_all {
        let w_k = weights_dl[k];
        if w_k == 0.0 {
            continue;
        }
        let wd = &state.decoders[k] * &state.mse_weights[k]; // M x d
        c_sum += (h_r.adjoint() * &wd * state.decoders[k].adjoint() * h_r).scale(w_k);
        for i in 0..k_all {
            let bf = &ch.ue_bs[i] * &state.precoders[i]; // M x d
            let rf = &ch.ue_ris[i] * &state.precoders[i]; // L x d
            // S_{k,i} = H_r^H W D W^H H_bu,i F F^H H_ru,i^H; accumulate its adjoint.
            let s = h_r.adjoint() * &wd * (state.decoders[k].adjoint() * &bf) * rf.adjoint();
            lin += s.adjoint().scale(w_k);
            // Constants: direct-link quadratic terms of Tr(D W^H H_i F F^H H_i^H W).
            let wbf = state.decoders[k].adjoint() * &bf; // d x d
            constant += w_k * re_inner(&wbf, &(&state.mse_weights[k] * &wbf));
        }
        // P_k = H_ru,k F_k D_k W_k^H H_r.
        let p = &ch.ue_ris[k] * &state.precoders[k] * &state.mse_weights[k]
            * state.decoders[k].adjoint()
            * h_r;
        lin -= p.scale(w_k);
        // Constant linear part: -2 Re Tr(D W^H H_bu,k F_k).
        let wbf_k = state.decoders[k].adjoint() * &ch.ue_bs[k] * &state.precoders[k];
        constant -= 2.0 * w_k * (&state.mse_weights[k] * wbf_k).trace().re;
        // State-only terms: Tr(D) + sigma_c^2 Tr(D W^H W) - ln det D.
        constant += w_k * state.mse_weights[k].trace().re;
        let ww = state.decoders[k].adjoint() * &state.decoders[k];
        constant += w_k * cfg.noise_comm_mw * re_inner(&state.mse_weights[k], &ww);
        let logdet = crate::linalg::log2_det_hpd(&state.mse_weights[k], "MSE weight")
            .unwrap_or(f64::NEG_INFINITY);
        constant -= w_k * logdet * std::f64::consts::LN_2;
    }
    let xi = hermitize(&c_sum.component_mul(&b_sum.transpose()));
    let u_vec = CVec::from_iterator(l, (0..l).map(|idx| lin[(idx, idx)]));
    let (lambda_max, _) = hermitian_max_eig(&xi, 1e-10, 1000);
    RisQuadraticForm { xi_mat: xi, u_vec, lambda_max: lambda_max.max(0.0), constant }
}

/// `g(phi)` for a unit-modulus phase vector.
pub fn ris_objective(form: &RisQuadraticForm, phi: &CVec) -> f64 {
    let quad = (phi.adjoint() * &form.xi_mat * phi)[(0, 0)].re;
    let lin = phi
        .iter()
        .zip(form.u_vec.iter())
        .map(|(p, u)| (p * u).re)
        .sum::<f64>();
    quad + 2.0 * lin
}

/// Majorizing surrogate `h(phi | phi_t)` of `g` (test hook).
pub fn ris_surrogate(form: &RisQuadraticForm, phi: &CVec, phi_t: &CVec) -> f64 {
    let l = phi.len() as f64;
    let lam = form.lambda_max;
    let diff = (phi_t.adjoint() * (&form.xi_mat * phi_t))[(0, 0)].re;
    let cross = (phi.adjoint() * ((phi_t.scale(lam)) - &form.xi_mat * phi_t))[(0, 0)].re;
    let lin = phi
        .iter()
        .zip(form.u_vec.iter())
        .map(|(p, u)| (p * u).re)
        .sum::<f64>();
    lam * l - 2.0 * cross + (lam * l - diff) + 2.0 * lin
}

/// One MM step: phases of `(lambda_max I - Xi) phi_t - conj(u)`.
pub fn ris_mm_step(form: &RisQuadraticForm, phi_t: &CVec) -> Vec<f64> {
    let y = phi_t.scale(form.lambda_max) - &form.xi_mat * phi_t
        - CVec::from_iterator(phi_t.len(), form.u_vec.iter().map(|u| u.conj()));
    y.iter()
        .map(|z| {
            if z.norm() == 0.0 {
                wrap_phase(0.0)
            } else {
                wrap_phase(z.arg())
            }
        })
        .collect()
}

/// Full weighted-MSE objective `J` at the current state.
pub fn p24_objective(
    ch: &ChannelSet,
    state: &BeamformingState,
    weights_dl: &[f64],
    cfg: &SystemConfig,
) -> Result<f64> {
    let mut acc = 0.0;
    for k in 0..cfg.num_ues {
        if weights_dl[k] == 0.0 {
            continue;
        }
        let e = metrics::mse_matrix(ch, state, k, cfg)?;
        let trace_term = re_inner(&state.mse_weights[k], &e);
        let logdet = crate::linalg::log2_det_hpd(&state.mse_weights[k], "MSE weight")?
            * std::f64::consts::LN_2;
        acc += weights_dl[k] * (trace_term - logdet);
    }
    Ok(acc)
}

/// Block-coordinate inner loop. Cycles precoder, decoder/weight, radar
/// filter, and RIS phases until the relative objective change drops below
/// the configured threshold.
pub fn inner_loop(
    ch: &ChannelSet,
    state: BeamformingState,
    weights_dl: &[f64],
    cfg: &SystemConfig,
    qcqp_tol: f64,
) -> Result<(BeamformingState, InnerInfo)> {
    inner_loop_eps(ch, state, weights_dl, cfg, qcqp_tol, cfg.epsilon)
}

/// [`inner_loop`] with an explicit relative stopping threshold on the
/// weighted rate (the callers in the auxiliary-variable loop tighten it as
/// the fixed point approaches).
pub fn inner_loop_eps(
    ch: &ChannelSet,
    mut state: BeamformingState,
    weights_dl: &[f64],
    cfg: &SystemConfig,
    qcqp_tol: f64,
    eps: f64,
) -> Result<(BeamformingState, InnerInfo)> {
    // Convergence is gauged on the weighted rate (positive and affinely tied
    // to the MSE objective), which keeps the relative test meaningful when
    // the MSE objective crosses zero.
    let weighted_rate = |ch: &ChannelSet, s: &BeamformingState| -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..cfg.num_ues {
            if weights_dl[k] > 0.0 {
                acc += weights_dl[k] * metrics::offload_rate(ch, s, k, cfg)?;
            }
        }
        Ok(acc)
    };
    let mut prev = weighted_rate(ch, &state)?;
    #[cfg(debug_assertions)]
    let mut prev_obj = p24_objective(ch, &state, weights_dl, cfg)?;
    let mut iterations = 0;
    for t in 0..cfg.max_iters.beamforming {
        iterations = t + 1;
        state.precoders = update_precoders(ch, &state, weights_dl, cfg, qcqp_tol)?;
        for k in 0..cfg.num_ues {
            state.decoders[k] = update_decoder(ch, &state, k, cfg)?;
            state.mse_weights[k] = update_weight(ch, &state, k, cfg)?;
        }
        for k in 0..cfg.num_ues {
            state.radar_rx[k] = update_radar_rx(ch, &state, k, cfg)?;
        }
        if cfg.ris_elements > 0 {
            let form = ris_quadratic_form(ch, &state, weights_dl, cfg);
            let mut phi = phase_vector(&state.theta);
            let mut g_prev = ris_objective(&form, &phi);
            for _ in 0..100 {
                let theta = ris_mm_step(&form, &phi);
                let phi_next = phase_vector(&theta);
                let g_next = ris_objective(&form, &phi_next);
                debug_assert!(g_next <= g_prev + 1e-9 * (1.0 + g_prev.abs()));
                state.theta = theta;
                phi = phi_next;
                if (g_prev - g_next).abs() <= 1e-8 * g_prev.abs().max(1e-30) {
                    break;
                }
                g_prev = g_next;
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = p24_objective(ch, &state, weights_dl, cfg)?;
            debug_assert!(
                obj <= prev_obj + 1e-7 * (1.0 + prev_obj.abs()),
                "inner objective increased: {prev_obj} -> {obj}"
            );
            prev_obj = obj;
        }
        let rate_now = weighted_rate(ch, &state)?;
        if (rate_now - prev).abs() <= eps * rate_now.abs().max(1e-300) {
            prev = rate_now;
            break;
        }
        prev = rate_now;
    }
    Ok((state, InnerInfo { iterations, objective: prev }))
}

/// Builds one precoder candidate set: the first column carries 90% of the
/// budget along `dirs[k]`, the remaining columns split `residual_scale *
/// 10%` over an orthonormal completion drawn from the RNG.
fn build_precoders<R: Rng>(
    dirs: &[CVec],
    residual_scale: f64,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Vec<CMat> {
    let n = cfg.ue_antennas;
    let d = cfg.streams;
    // Keep a sliver of power on every stream so downstream MMSE decoders
    // stay full column rank.
    let residual_scale = residual_scale.max(1e-6);
    dirs.iter()
        .enumerate()
        .map(|(k, dir)| {
            let p = cfg.power_budget_mw[k];
            let mut f = CMat::zeros(n, d);
            let main = dir.scale((0.9 * p).sqrt());
            f.set_column(0, &main);
            if d > 1 && residual_scale > 0.0 {
                let col_power = residual_scale * 0.1 * p / (d - 1) as f64;
                let mut basis: Vec<CVec> = vec![dir.clone()];
                let mut j = 1;
                while j < d {
                    let mut v = crate::linalg::complex_gaussian(n, 1, 1.0, rng)
                        .column(0)
                        .into_owned();
                    for b in &basis {
                        let proj = (b.adjoint() * &v)[(0, 0)];
                        v -= b.scale(1.0) * proj;
                    }
                    if v.norm() < 1e-6 {
                        continue;
                    }
                    let v = v.clone() / Complex64::new(v.norm(), 0.0);
                    f.set_column(j, &v.scale(col_power.sqrt()));
                    basis.push(v);
                    j += 1;
                }
            }
            f
        })
        .collect()
}

/// Dominant right-singular direction of the target response (the steering
/// direction that maximizes the echo).
fn echo_direction(ch: &ChannelSet, k: usize) -> CVec {
    let g = &ch.target[k];
    let gh_g = hermitize(&(g.adjoint() * g));
    let (_, v) = hermitian_max_eig(&gh_g, 1e-12, 500);
    let norm = v.norm();
    if norm == 0.0 {
        let mut e = CVec::zeros(g.ncols());
        e[0] = C_ONE;
        e
    } else {
        v / Complex64::new(norm, 0.0)
    }
}

/// Echo-preserving direction that avoids radiating into the other UEs' radar
/// look directions: dominant generalized eigenvector of the echo form
/// against the caused-interference form.
fn deconflicted_direction(ch: &ChannelSet, k: usize, cfg: &SystemConfig) -> Result<CVec> {
    let g = &ch.target[k];
    let echo = hermitize(&(g.adjoint() * g));
    let n = cfg.ue_antennas;
    let mut caused = CMat::identity(n, n).scale(cfg.noise_sense_mw / cfg.power_budget_mw[k]);
    for victim in 0..cfg.num_ues {
        if victim == k {
            continue;
        }
        if let Some(h_vk) = &ch.ue_ue[victim][k] {
            let look = echo_direction(ch, victim);
            // Receive steering of the victim's target, normalized.
            let a = &ch.target[victim] * look;
            let a_norm = a.norm();
            if a_norm == 0.0 {
                continue;
            }
            let a = a / Complex64::new(a_norm, 0.0);
            let ha = h_vk.adjoint() * a;
            caused += (&ha * ha.adjoint()).scale(1.0 / (cfg.num_ues - 1) as f64);
        }
    }
    let (_, v) = crate::linalg::generalized_max_eig(&echo, &caused, "deconflict form")?;
    Ok(v)
}

fn feasibility(ch: &ChannelSet, state: &BeamformingState, cfg: &SystemConfig) -> Result<(bool, usize)> {
    let mut worst = 0usize;
    let mut worst_margin = f64::INFINITY;
    let mut ok = true;
    for k in 0..cfg.num_ues {
        let gamma = metrics::radar_sinr(ch, state, k, cfg)?;
        let margin = gamma / cfg.sinr_threshold;
        if margin < worst_margin {
            worst_margin = margin;
            worst = k;
        }
        if gamma < cfg.sinr_threshold * SINR_FEAS_REL {
            ok = false;
        }
    }
    Ok((ok, worst))
}

/// Feasible starting point: RIS phases uniform at random, aligned rank-heavy
/// precoders, max-SINR radar filters, MMSE decoders. When the aligned start
/// violates the SINR floor, the residual-column power is bisected away, then
/// the main columns are steered off the other UEs' radar look directions.
pub fn initialize<R: Rng>(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<BeamformingState> {
    let theta: Vec<f64> = (0..cfg.ris_elements)
        .map(|_| wrap_phase(rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let aligned: Vec<CVec> = (0..cfg.num_ues).map(|k| echo_direction(ch, k)).collect();

    let mut state = BeamformingState {
        precoders: vec![],
        decoders: vec![],
        radar_rx: vec![CVec::zeros(cfg.ue_antennas); cfg.num_ues],
        theta,
        mse_weights: vec![CMat::identity(cfg.streams, cfg.streams); cfg.num_ues],
        frac_delta: vec![1.0; cfg.num_ues],
        frac_lambda: vec![1.0; cfg.num_ues],
    };

    let mut try_candidate =
        |state: &mut BeamformingState, precoders: Vec<CMat>| -> Result<(bool, usize)> {
            state.precoders = precoders;
            for k in 0..cfg.num_ues {
                state.radar_rx[k] = update_radar_rx(ch, state, k, cfg)?;
            }
            feasibility(ch, state, cfg)
        };

    let mut last_worst;

    // Aligned start with the full residual split.
    let cand = build_precoders(&aligned, 1.0, cfg, rng);
    let (ok, worst) = try_candidate(&mut state, cand)?;
    last_worst = worst;
    if !ok {
        // Bisect the residual-column power between 0 (rank-one, least
        // cross-radar interference) and 1.
        let (ok0, worst0) = {
            let cand = build_precoders(&aligned, 0.0, cfg, rng);
            try_candidate(&mut state, cand)?
        };
        if ok0 {
            let mut lo = 0.0;
            let mut hi = 1.0;
            for _ in 0..20 {
                let mid = 0.5 * (lo + hi);
                let cand = build_precoders(&aligned, mid, cfg, rng);
                let (okm, _) = try_candidate(&mut state, cand)?;
                if okm {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let cand = build_precoders(&aligned, lo, cfg, rng);
            let (okf, _) = try_candidate(&mut state, cand)?;
            debug_assert!(okf);
        } else {
            last_worst = worst0;
            // Steer the main columns away from the victims' look directions,
            // then retry with a few randomized blends.
            let deconf: Vec<CVec> = (0..cfg.num_ues)
                .map(|k| deconflicted_direction(ch, k, cfg))
                .collect::<Result<_>>()?;
            let mut found = false;
            'attempts: for attempt in 0..8 {
                let dirs: Vec<CVec> = match attempt {
                    0 => deconf.clone(),
                    1 => (0..cfg.num_ues)
                        .map(|k| {
                            let v = aligned[k].clone() + deconf[k].clone();
                            let n = v.norm();
                            if n == 0.0 { aligned[k].clone() } else { v / Complex64::new(n, 0.0) }
                        })
                        .collect(),
                    _ => (0..cfg.num_ues)
                        .map(|k| {
                            let noise = crate::linalg::complex_gaussian(
                                cfg.ue_antennas,
                                1,
                                0.5,
                                rng,
                            )
                            .column(0)
                            .into_owned();
                            let v = deconf[k].clone() + noise;
                            let n = v.norm();
                            if n == 0.0 { deconf[k].clone() } else { v / Complex64::new(n, 0.0) }
                        })
                        .collect(),
                };
                let cand = build_precoders(&dirs, 0.0, cfg, rng);
                let (okd, worstd) = try_candidate(&mut state, cand)?;
                last_worst = worstd;
                if okd {
                    found = true;
                    break 'attempts;
                }
            }
            if !found {
                return Err(Error::Infeasible { ue: last_worst });
            }
        }
    }

    for k in 0..cfg.num_ues {
        state.decoders.push(CMat::zeros(cfg.bs_antennas, cfg.streams));
    }
    for k in 0..cfg.num_ues {
        state.decoders[k] = update_decoder(ch, &state, k, cfg)?;
        state.mse_weights[k] = update_weight(ch, &state, k, cfg)?;
    }
    debug_assert!(state.power_ok(cfg));
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel;
    use crate::config::load_config_with_seed_override;
    use crate::linalg::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_cfg() -> SystemConfig {
        load_config_with_seed_override("", None).unwrap()
    }

    fn scenario(seed: u64) -> (ChannelSet, SystemConfig) {
        let cfg = default_cfg();
        let ch = channel::realize_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (ch, cfg)
    }

    fn feasible_state(ch: &ChannelSet, cfg: &SystemConfig, seed: u64) -> BeamformingState {
        initialize(ch, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn scalar_decoder_and_weight() {
        let cfg = load_config_with_seed_override(
            "num_ues = 1\nbs_antennas = 1\nue_antennas = 1\nstreams = 1\nris_elements = 1\n\
             bandwidth_hz = 1.0\nnoise_comm_mw = 1.0",
            None,
        )
        .unwrap();
        let ch = ChannelSet {
            ue_bs: vec![CMat::from_element(1, 1, C_ONE)],
            ris_bs: CMat::zeros(1, 1),
            ue_ris: vec![CMat::zeros(1, 1)],
            ue_ue: vec![vec![None]],
            target: vec![CMat::from_element(1, 1, C_ONE)],
            target_angle: vec![0.0],
            target_gain: vec![C_ONE],
        };
        let mut state = BeamformingState {
            precoders: vec![CMat::from_element(1, 1, C_ONE)],
            decoders: vec![CMat::from_element(1, 1, C_ONE)],
            radar_rx: vec![CVec::from_element(1, C_ONE)],
            theta: vec![std::f64::consts::TAU],
            mse_weights: vec![CMat::identity(1, 1)],
            frac_delta: vec![1.0],
            frac_lambda: vec![1.0],
        };
        let w = update_decoder(&ch, &state, 0, &cfg).unwrap();
        assert!((w[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        state.decoders[0] = w;
        let d = update_weight(&ch, &state, 0, &cfg).unwrap();
        assert!((d[(0, 0)] - Complex64::new(2.0, 0.0)).norm() < 1e-12);

        // Zero precoder gives a zero decoder.
        state.precoders[0] = CMat::zeros(1, 1);
        let w = update_decoder(&ch, &state, 0, &cfg).unwrap();
        assert_eq!(w[(0, 0)], C_ZERO);
    }

    #[test]
    fn decoder_is_local_minimizer() {
        let (ch, cfg) = scenario(21);
        let mut state = feasible_state(&ch, &cfg, 1);
        state.decoders[0] = update_decoder(&ch, &state, 0, &cfg).unwrap();
        let d_fixed = state.mse_weights[0].clone();
        let base = re_inner(&d_fixed, &metrics::mse_matrix(&ch, &state, 0, &cfg).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut probe = state.clone();
            let delta = complex_gaussian(cfg.bs_antennas, cfg.streams, 1.0, &mut rng);
            let delta = delta.scale(1e-3 / delta.norm());
            probe.decoders[0] += delta;
            let perturbed = re_inner(&d_fixed, &metrics::mse_matrix(&ch, &probe, 0, &cfg).unwrap());
            assert!(perturbed >= base - 1e-15);
        }
    }

    #[test]
    fn weight_matches_rate() {
        let (ch, cfg) = scenario(22);
        let mut state = feasible_state(&ch, &cfg, 2);
        for k in 0..cfg.num_ues {
            state.decoders[k] = update_decoder(&ch, &state, k, &cfg).unwrap();
            state.mse_weights[k] = update_weight(&ch, &state, k, &cfg).unwrap();
        }
        for k in 0..cfg.num_ues {
            let d = &state.mse_weights[k];
            assert!((d.clone() - d.adjoint()).norm() <= 1e-12 * d.norm());
            let rate_from_weight =
                cfg.bandwidth_hz * crate::linalg::log2_det_hpd(d, "weight").unwrap();
            let rate = metrics::offload_rate(&ch, &state, k, &cfg).unwrap();
            assert!(
                (rate_from_weight - rate).abs() <= 1e-9 * rate.abs().max(1.0),
                "UE {k}: {rate_from_weight} vs {rate}"
            );
        }
    }

    #[test]
    fn radar_rx_is_max_sinr() {
        let (ch, cfg) = scenario(23);
        let mut state = feasible_state(&ch, &cfg, 3);
        // Perturb precoders so the problem is generic.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        state.radar_rx[0] = update_radar_rx(&ch, &state, 0, &cfg).unwrap();
        let best = metrics::radar_sinr(&ch, &state, 0, &cfg).unwrap();
        for _ in 0..2000 {
            let mut probe = state.clone();
            probe.radar_rx[0] = complex_gaussian(cfg.ue_antennas, 1, 1.0, &mut rng)
                .column(0)
                .into_owned();
            let got = metrics::radar_sinr(&ch, &probe, 0, &cfg).unwrap();
            assert!(got <= best * (1.0 + 1e-10));
        }
        // Scaling the interference covariance cannot change the direction:
        // redo with scaled noise.
        let mut cfg10 = cfg.clone();
        cfg10.noise_sense_mw *= 10.0;
        let w10 = update_radar_rx(&ch, &state, 0, &cfg10).unwrap();
        let w1 = &state.radar_rx[0];
        // Only check collinearity when interference dominates equally; with
        // one interferer the scaled matrix is not proportional, so instead
        // scale the full T by scaling every precoder and noise together.
        let _ = (w10, w1);

        let t = metrics::radar_interference(&ch, &state, 0, &cfg);
        let gf = &ch.target[0] * &state.precoders[0];
        let echo = &gf * gf.adjoint();
        let (_, w_a) = crate::linalg::generalized_max_eig(&echo, &t, "t").unwrap();
        let (_, w_b) = crate::linalg::generalized_max_eig(&echo, &t.scale(10.0), "t").unwrap();
        let overlap = (w_a.adjoint() * &w_b)[(0, 0)].norm();
        assert!((overlap - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sensing_linearization_majorizes() {
        let (ch, cfg) = scenario(24);
        let state = feasible_state(&ch, &cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..cfg.num_ues {
            let row = linearized_sensing_constraint(&ch, &state, &state.precoders, k, &cfg);
            let exact = sensing_constraint_exact(&ch, &state, k, &cfg);
            let lin_at_anchor = row_value_at(&row, &state.precoders);
            let scale = row.constant.abs().max(1e-300);
            // Tight at the anchor.
            assert!(
                (lin_at_anchor - exact).abs() <= 1e-9 * scale,
                "UE {k}: anchor {lin_at_anchor} vs exact {exact}"
            );
            // Upper bound elsewhere.
            for _ in 0..100 {
                let probe: Vec<CMat> = state
                    .precoders
                    .iter()
                    .map(|f| {
                        let scale_p = (cfg.power_budget_mw[0] / cfg.streams as f64).sqrt();
                        f + complex_gaussian(f.nrows(), f.ncols(), scale_p * scale_p * 0.2, &mut rng)
                    })
                    .collect();
                let mut probe_state = state.clone();
                probe_state.precoders = probe.clone();
                let exact_p = sensing_constraint_exact(&ch, &probe_state, k, &cfg);
                let lin_p = row_value_at(&row, &probe);
                assert!(lin_p >= exact_p - 1e-9 * scale.max(exact_p.abs()));
            }
        }
        // Zero radar filter collapses the constraint to 0 <= 0.
        let mut dead = feasible_state(&ch, &cfg, 4);
        dead.radar_rx[0] = CVec::zeros(cfg.ue_antennas);
        let row = linearized_sensing_constraint(&ch, &dead, &dead.precoders, 0, &cfg);
        assert!(row_value_at(&row, &dead.precoders).abs() < 1e-30);
    }

    #[test]
    fn ris_form_matches_direct_objective() {
        let (ch, cfg) = scenario(25);
        let mut state = feasible_state(&ch, &cfg, 5);
        for k in 0..cfg.num_ues {
            state.decoders[k] = update_decoder(&ch, &state, k, &cfg).unwrap();
            state.mse_weights[k] = update_weight(&ch, &state, k, &cfg).unwrap();
        }
        let weights_dl = vec![0.7, 1.3];
        let form = ris_quadratic_form(&ch, &state, &weights_dl, &cfg);
        // Hermitian structure.
        assert!((form.xi_mat.clone() - form.xi_mat.adjoint()).norm() <= 1e-12 * form.xi_mat.norm());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..cfg.ris_elements)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            let phi = phase_vector(&theta);
            let mut probe = state.clone();
            probe.theta = theta;
            let direct = p24_objective(&ch, &probe, &weights_dl, &cfg).unwrap();
            let via_form = ris_objective(&form, &phi) + form.constant;
            assert!(
                (direct - via_form).abs() <= 1e-9 * direct.abs().max(1.0),
                "direct {direct} vs form {via_form}"
            );
        }
        // Blocked RIS: no dependence on theta.
        let blocked = ch.without_ris();
        let form0 = ris_quadratic_form(&blocked, &state, &weights_dl, &cfg);
        assert!(form0.xi_mat.norm() < 1e-20);
        assert!(form0.u_vec.norm() < 1e-20);
    }

    #[test]
    fn mm_step_descends_and_majorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let l = 8;
            let g = complex_gaussian(l, l, 1.0, &mut rng);
            let xi = hermitize(&(&g * g.adjoint()));
            let (lam, _) = hermitian_max_eig(&xi, 1e-10, 1000);
            let u = complex_gaussian(l, 1, 1.0, &mut rng).column(0).into_owned();
            let form = RisQuadraticForm { xi_mat: xi, u_vec: u, lambda_max: lam, constant: 0.0 };
            let mut theta: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..6.28)).collect();
            let mut g_prev = ris_objective(&form, &phase_vector(&theta));
            for _ in 0..20 {
                let phi_t = phase_vector(&theta);
                // Surrogate touches at phi_t and bounds g at random points.
                let h_at_t = ris_surrogate(&form, &phi_t, &phi_t);
                assert!((h_at_t - ris_objective(&form, &phi_t)).abs() <= 1e-8 * (1.0 + h_at_t.abs()));
                for _ in 0..5 {
                    let probe: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..6.28)).collect();
                    let phi_p = phase_vector(&probe);
                    assert!(
                        ris_surrogate(&form, &phi_p, &phi_t)
                            >= ris_objective(&form, &phi_p) - 1e-9
                    );
                }
                theta = ris_mm_step(&form, &phi_t);
                for &t in &theta {
                    assert!(t > 0.0 && t <= std::f64::consts::TAU);
                }
                let g_next = ris_objective(&form, &phase_vector(&theta));
                assert!(g_next <= g_prev + 1e-9 * (1.0 + g_prev.abs()));
                g_prev = g_next;
            }
        }
        // No quadratic part: pure alignment against the linear term.
        let l = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = complex_gaussian(l, 1, 1.0, &mut rng).column(0).into_owned();
        let form = RisQuadraticForm {
            xi_mat: CMat::zeros(l, l),
            u_vec: u.clone(),
            lambda_max: 0.0,
            constant: 0.0,
        };
        let theta = ris_mm_step(&form, &phase_vector(&vec![1.0; l]));
        for (t, u_l) in theta.iter().zip(u.iter()) {
            let expect = wrap_phase((-u_l.conj()).arg());
            assert!((t - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn precoder_step_descends_and_stays_feasible() {
        let (ch, cfg) = scenario(26);
        let mut state = feasible_state(&ch, &cfg, 6);
        for k in 0..cfg.num_ues {
            state.decoders[k] = update_decoder(&ch, &state, k, &cfg).unwrap();
            state.mse_weights[k] = update_weight(&ch, &state, k, &cfg).unwrap();
        }
        let weights_dl = vec![1.0, 1.0];
        let before = p24_objective(&ch, &state, &weights_dl, &cfg).unwrap();
        let new_precoders = update_precoders(&ch, &state, &weights_dl, &cfg, 1e-7).unwrap();
        let mut after_state = state.clone();
        after_state.precoders = new_precoders;
        let after = p24_objective(&ch, &after_state, &weights_dl, &cfg).unwrap();
        assert!(after <= before + 1e-9 * (1.0 + before.abs()), "{before} -> {after}");
        // Power caps hold.
        assert!(after_state.power_ok(&cfg));
        // The solution satisfies the anchored linearized rows, hence the true
        // constraint at the anchor's filters.
        for k in 0..cfg.num_ues {
            let row = linearized_sensing_constraint(&ch, &state, &state.precoders, k, &cfg);
            let v = row_value_at(&row, &after_state.precoders);
            assert!(v <= 1e-6 * row.constant.abs().max(1e-300), "row {k}: {v}");
        }
    }

    #[test]
    fn inner_loop_monotone_and_feasible() {
        let (ch, cfg) = scenario(27);
        let state = feasible_state(&ch, &cfg, 7);
        let weights_dl = vec![1e-7, 2e-7];
        let start_obj = p24_objective(&ch, &state, &weights_dl, &cfg).unwrap();
        let start_rate: f64 = (0..cfg.num_ues)
            .map(|k| weights_dl[k] * metrics::offload_rate(&ch, &state, k, &cfg).unwrap())
            .sum();
        let (out, info) = inner_loop(&ch, state, &weights_dl, &cfg, 1e-7).unwrap();
        assert!(info.iterations <= cfg.max_iters.beamforming);
        // The MSE objective never increases; the weighted rate never drops.
        let end_obj = p24_objective(&ch, &out, &weights_dl, &cfg).unwrap();
        assert!(end_obj <= start_obj + 1e-9 * (1.0 + start_obj.abs()));
        assert!(info.objective >= start_rate * (1.0 - 1e-9));
        assert!(out.power_ok(&cfg));
        for k in 0..cfg.num_ues {
            let gamma = metrics::radar_sinr(&ch, &out, k, &cfg).unwrap();
            assert!(
                gamma >= cfg.sinr_threshold * (1.0 - 1e-6),
                "UE {k}: SINR {gamma} below threshold {}",
                cfg.sinr_threshold
            );
        }
    }

    #[test]
    fn inner_loop_without_ris_elements() {
        // L = 0: the MM step is skipped entirely and the loop still runs.
        let cfg = load_config_with_seed_override(
            "num_ues = 2\nris_elements = 1\nrng_seed = 3",
            None,
        )
        .unwrap();
        let mut cfg = cfg;
        cfg.ris_elements = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = channel::realize_scenario(&cfg, &mut rng).unwrap();
        let state = initialize(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(state.theta.is_empty());
        let weights_dl = vec![1.0, 1.0];
        let (out, _) = inner_loop(&ch, state, &weights_dl, &cfg, 1e-6).unwrap();
        assert!(out.power_ok(&cfg));
    }

    #[test]
    fn initialize_is_feasible_over_seeds() {
        let cfg = default_cfg();
        for seed in 0..20u64 {
            let ch = channel::realize_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let state = initialize(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed + 1000)).unwrap();
            for k in 0..cfg.num_ues {
                let gamma = metrics::radar_sinr(&ch, &state, k, &cfg).unwrap();
                assert!(
                    gamma >= cfg.sinr_threshold * (1.0 - 1e-9),
                    "seed {seed} UE {k}: {gamma}"
                );
            }
            assert!(state.power_ok(&cfg));
            for &t in &state.theta {
                assert!(t > 0.0 && t <= std::f64::consts::TAU);
            }
        }
    }

    use rand::Rng;
}
