//! Closed-form single-UE, single-stream pipeline: offload split, MRC
//! decoders, a two-ray precoder with exact case analysis, and phase-aligning
//! RIS updates. Every step has a closed form, so one iteration is cheap and
//! the loop settles within a few passes.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelSet;
use crate::compute;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{wrap_phase, CMat, CVec, C_ONE};
use crate::metrics::{self, BeamformingState, ComputeState, LatencyReport};

/// Which branch of the two-ray precoder produced the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PrecoderCase {
    /// Sensing constraint inactive: full power along the communication ray.
    CommOnly,
    /// Sensing constraint active: power shared between the two rays.
    Shared,
}

#[derive(Debug, Clone)]
pub struct SingleUeSolution {
    pub state: BeamformingState,
    pub compute: ComputeState,
    pub report: LatencyReport,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub cases: Vec<PrecoderCase>,
}

/// Integer offload volume when the whole edge CPU serves the single UE.
pub fn su_offload(task_bits: u64, cycles: f64, f_local: f64, f_total: f64, rate: f64) -> Result<u64> {
    compute::integer_offload(task_bits, cycles, f_local, f_total, rate)
}

/// Maximum-ratio combiners: communication decoder `H f` and radar filter `G f`.
pub fn mrc_decoders(h_eff: &CMat, g: &CMat, f: &CVec) -> Result<(CVec, CVec)> {
    if f.norm() == 0.0 {
        return Err(Error::Degenerate("zero precoder has no MRC decoder".into()));
    }
    Ok((h_eff * f, g * f))
}

/// Two-ray precoder `f = a h + b g` maximizing `|h^H f|^2` under the power
/// budget and the sensing floor `|g^H f|^2 >= eta`. The three regimes are
/// separated exactly by `P |g^H h|^2 / ||h||^2` and `P ||g||^2`.
pub fn two_ray_precoder(
    h: &CVec,
    g: &CVec,
    power: f64,
    eta: f64,
) -> Result<(CVec, PrecoderCase)> {
    let h_norm_sq = f64::max(h.norm_squared(), 0.0);
    if h_norm_sq == 0.0 {
        return Err(Error::Degenerate("communication ray is zero".into()));
    }
    let g_norm_sq = g.norm_squared();
    let hg = (h.adjoint() * g)[(0, 0)]; // h^H g
    let thr_comm = power * hg.norm_sqr() / h_norm_sq;
    let thr_feas = power * g_norm_sq;

    if eta <= thr_comm {
        let f = h.scale((power / h_norm_sq).sqrt());
        return Ok((f, PrecoderCase::CommOnly));
    }
    if eta > thr_feas {
        return Err(Error::Infeasible { ue: 0 });
    }
    let denom = h_norm_sq * g_norm_sq - hg.norm_sqr();
    if denom <= 1e-12 * h_norm_sq * g_norm_sq {
        // Nearly collinear rays: the middle regime is empty up to rounding,
        // so the communication-only solution already meets the floor.
        let f = h.scale((power / h_norm_sq).sqrt());
        return Ok((f, PrecoderCase::CommOnly));
    }
    let a_mag = ((thr_feas - eta) / denom).sqrt();
    let b_mag = ((eta.sqrt() - hg.norm() * a_mag) / g_norm_sq).max(0.0);
    // Phase lock: ang(a) - ang(b) = ang(h^H g); fix ang(a) = 0.
    let a = Complex64::new(a_mag, 0.0);
    let b = Complex64::from_polar(b_mag, -hg.arg());
    let f = h.scale(1.0) * a + g.scale(1.0) * b;
    Ok((f, PrecoderCase::Shared))
}

/// Phase-aligning RIS update: every reflected term is rotated onto the
/// direct term's phase, so the composite magnitudes add.
pub fn su_ris_phase(w_c: &CVec, h_bu: &CMat, h_r: &CMat, h_ru: &CMat, f: &CVec) -> Vec<f64> {
    let direct = (w_c.adjoint() * h_bu * f)[(0, 0)];
    let row = w_c.adjoint() * h_r; // 1 x L
    let reflected = h_ru * f; // L x 1
    let arg_or_zero = |z: Complex64| if z.norm() == 0.0 { 0.0 } else { z.arg() };
    let direct_arg = arg_or_zero(direct);
    (0..h_r.ncols())
        .map(|l| {
            let cascade = row[(0, l)] * reflected[l];
            wrap_phase(direct_arg - arg_or_zero(cascade))
        })
        .collect()
}

/// Rate of the single-stream link for a given decoder.
fn link_rate(cfg: &SystemConfig, h_eff: &CMat, w_c: &CVec, f: &CVec) -> f64 {
    let w_norm_sq = w_c.norm_squared();
    if w_norm_sq == 0.0 {
        return 0.0;
    }
    let sig = (w_c.adjoint() * h_eff * f)[(0, 0)].norm_sqr();
    cfg.bandwidth_hz * (1.0 + sig / (cfg.noise_comm_mw * w_norm_sq)).log2()
}

/// Joint single-UE optimization loop.
pub fn algorithm5<R: Rng>(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<SingleUeSolution> {
    algorithm5_with(ch, cfg, rng, true)
}

/// Same loop with the RIS phase step optionally frozen (random-phase and
/// blocked-RIS baselines).
pub fn algorithm5_with<R: Rng>(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    rng: &mut R,
    optimize_ris: bool,
) -> Result<SingleUeSolution> {
    algorithm5_full(ch, cfg, rng, optimize_ris, false)
}

/// Full-control variant: RIS step optionally frozen, offload volume
/// optionally pinned to the whole task (full-offloading baseline).
pub fn algorithm5_full<R: Rng>(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    rng: &mut R,
    optimize_ris: bool,
    full_offload: bool,
) -> Result<SingleUeSolution> {
    if cfg.num_ues != 1 || cfg.streams != 1 {
        return Err(Error::Degenerate(
            "single-UE pipeline requires num_ues = 1 and streams = 1".into(),
        ));
    }
    let p = cfg.power_budget_mw[0];
    let g_mat = &ch.target[0];
    let mut theta: Vec<f64> = (0..cfg.ris_elements)
        .map(|_| wrap_phase(rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();

    // Random feasible-power start; fall back to the echo direction if the
    // draw happens to kill the radar filter.
    let mut f = crate::linalg::complex_gaussian(cfg.ue_antennas, 1, 1.0, rng)
        .column(0)
        .into_owned();
    if (g_mat * &f).norm() < 1e-12 * f.norm().max(1e-300) {
        let gh_g = crate::linalg::hermitize(&(g_mat.adjoint() * g_mat));
        let (_, v) = crate::linalg::hermitian_max_eig(&gh_g, 1e-12, 500);
        f = v;
    }
    f = f.scale((p / f.norm_squared()).sqrt());

    let mut w_c = CVec::zeros(cfg.bs_antennas);
    let mut w_s = CVec::zeros(cfg.ue_antennas);
    let mut volume = 0u64;
    let mut rate;
    let mut trace = Vec::new();
    let mut cases = Vec::new();
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for t in 0..cfg.max_iters.single_ue {
        iterations = t + 1;
        let h_eff = ch.effective(0, &theta)?;
        // Offload split from the current link quality.
        let r_now = if w_c.norm() > 0.0 {
            link_rate(cfg, &h_eff, &w_c, &f)
        } else {
            // First pass: MRC on the initial precoder.
            link_rate(cfg, &h_eff, &(&h_eff * &f), &f)
        };
        volume = if full_offload {
            cfg.task_bits[0]
        } else {
            su_offload(
                cfg.task_bits[0],
                cfg.cycles_per_bit[0],
                cfg.local_cpu[0],
                cfg.edge_cpu_total,
                r_now,
            )?
        };

        // Beamforming sub-cycle: every step is closed-form, so it is
        // iterated to settlement before the next offload update.
        let mut case = PrecoderCase::CommOnly;
        let mut gain_prev = -1.0;
        for _ in 0..25 {
            let h_now = ch.effective(0, &theta)?;
            let (wc_new, ws_new) = mrc_decoders(&h_now, g_mat, &f)?;
            w_c = wc_new;
            if ws_new.norm() > 0.0 {
                w_s = ws_new;
            }
            if w_s.norm() == 0.0 {
                return Err(Error::Degenerate("radar filter vanished".into()));
            }

            // Normalized composite rays.
            let h_ray = (h_now.adjoint() * &w_c)
                .scale(1.0 / (cfg.noise_comm_mw.sqrt() * w_c.norm()));
            let g_ray = (g_mat.adjoint() * &w_s)
                .scale(1.0 / (cfg.noise_sense_mw.sqrt() * w_s.norm()));
            let (f_new, case_new) = two_ray_precoder(&h_ray, &g_ray, p, cfg.sinr_threshold)?;
            f = f_new;
            case = case_new;

            if optimize_ris && cfg.ris_elements > 0 {
                theta = su_ris_phase(&w_c, &ch.ue_bs[0], &ch.ris_bs, &ch.ue_ris[0], &f);
            }
            let h_next = ch.effective(0, &theta)?;
            let gain = (w_c.adjoint() * &h_next * &f)[(0, 0)].norm_sqr() / w_c.norm_squared();
            if gain_prev >= 0.0 && (gain - gain_prev).abs() <= 1e-4 * gain.max(1e-300) {
                break;
            }
            gain_prev = gain;
        }
        let h_eff = ch.effective(0, &theta)?;
        rate = link_rate(cfg, &h_eff, &w_c, &f);
        let latency = compute::ue_latency(
            cfg.task_bits[0] as f64,
            volume as f64,
            cfg.cycles_per_bit[0],
            cfg.local_cpu[0],
            cfg.edge_cpu_total,
            rate,
        );
        trace.push(cfg.weights[0] * latency);
        if prev.is_finite() && (prev - trace[trace.len() - 1]).abs() <= cfg.epsilon * prev.abs() {
            converged = true;
            break;
        }
        prev = trace[trace.len() - 1];
    }

    let state = BeamformingState {
        precoders: vec![CMat::from_columns(&[f.clone()])],
        decoders: vec![CMat::from_columns(&[w_c.clone()])],
        radar_rx: vec![w_s.scale(1.0 / w_s.norm())],
        theta,
        mse_weights: vec![CMat::from_element(1, 1, C_ONE)],
        frac_delta: vec![1.0],
        frac_lambda: vec![1.0],
    };
    let compute_state = ComputeState {
        offload_bits: vec![volume],
        edge_cpu: vec![if volume > 0 { cfg.edge_cpu_total } else { 0.0 }],
    };
    // Report through the common evaluation path; the MRC decoder is a valid
    // (scale-invariant) decoder for the rate formula.
    let report = metrics::latency(ch, &state, &compute_state, cfg)?;
    Ok(SingleUeSolution {
        state,
        compute: compute_state,
        report,
        trace,
        iterations,
        converged,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel;
    use crate::config::load_config_with_seed_override;
    use crate::linalg::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_cfg(extra: &str) -> SystemConfig {
        load_config_with_seed_override(
            &format!("num_ues = 1\nstreams = 1\n{extra}"),
            None,
        )
        .unwrap()
    }

    #[test]
    fn su_offload_matches_multi_ue_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v: u64 = rng.gen_range(0..100_000);
            let c = rng.gen_range(1.0..1000.0);
            let f_l = rng.gen_range(1e6..1e9);
            let f_t = rng.gen_range(1e8..1e11);
            let r = rng.gen_range(0.0..1e7);
            assert_eq!(
                su_offload(v, c, f_l, f_t, r).unwrap(),
                compute::integer_offload(v, c, f_l, f_t, r).unwrap()
            );
        }
        assert_eq!(su_offload(1000, 1.0, 1e6, 1e9, 0.0).unwrap(), 0);
    }

    #[test]
    fn mrc_maximizes_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = complex_gaussian(4, 2, 1.0, &mut rng);
        let g = complex_gaussian(2, 2, 1.0, &mut rng);
        let f = complex_gaussian(2, 1, 1.0, &mut rng).column(0).into_owned();
        let (w_c, w_s) = mrc_decoders(&h, &g, &f).unwrap();
        // w_c collinear with H f.
        let hf = &h * &f;
        let cos = (w_c.adjoint() * &hf)[(0, 0)].norm() / (w_c.norm() * hf.norm());
        assert!((cos - 1.0).abs() < 1e-12);
        // Identity channel, basis precoder.
        let id = CMat::identity(2, 2);
        let e1 = CVec::from_column_slice(&[C_ONE, Complex64::new(0.0, 0.0)]);
        let (w, _) = mrc_decoders(&id, &g, &e1).unwrap();
        assert!((w - e1).norm() < 1e-15);
        // Ratio beats random probes.
        let ratio = |w: &CVec| (w.adjoint() * &hf)[(0, 0)].norm_sqr() / w.norm_squared();
        let best = ratio(&w_c);
        for _ in 0..10_000 {
            let probe = complex_gaussian(4, 1, 1.0, &mut rng).column(0).into_owned();
            assert!(ratio(&probe) <= best * (1.0 + 1e-9));
        }
        assert!(mrc_decoders(&h, &g, &CVec::zeros(2)).is_err());
    }

    #[test]
    fn two_ray_reference_cases() {
        // Orthogonal rays, even split.
        let h = CVec::from_column_slice(&[C_ONE, Complex64::new(0.0, 0.0)]);
        let g = CVec::from_column_slice(&[Complex64::new(0.0, 0.0), C_ONE]);
        let (f, case) = two_ray_precoder(&h, &g, 1.0, 0.5).unwrap();
        assert_eq!(case, PrecoderCase::Shared);
        assert!((f.norm_squared() - 1.0).abs() < 1e-12);
        assert!(((h.adjoint() * &f)[(0, 0)].norm_sqr() - 0.5).abs() < 1e-12);
        assert!(((g.adjoint() * &f)[(0, 0)].norm_sqr() - 0.5).abs() < 1e-12);

        // Aligned sensing: pure communication ray.
        let (f, case) = two_ray_precoder(&h, &h, 1.0, 0.5).unwrap();
        assert_eq!(case, PrecoderCase::CommOnly);
        let cos = (h.adjoint() * &f)[(0, 0)].norm() / f.norm();
        assert!((cos - 1.0).abs() < 1e-12);

        // Cauchy bound: infeasible.
        assert!(matches!(
            two_ray_precoder(&h, &g, 1.0, 2.0),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn two_ray_power_boundary_and_case_continuity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let h = complex_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
            let g = complex_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
            let p = rng.gen_range(0.5..4.0);
            let thr_comm = p * (h.adjoint() * &g)[(0, 0)].norm_sqr() / h.norm_squared();
            let thr_feas = p * g.norm_squared();
            for eta in [0.5 * thr_comm, 0.5 * (thr_comm + thr_feas), 0.999 * thr_feas] {
                let (f, _) = two_ray_precoder(&h, &g, p, eta).unwrap();
                assert!((f.norm_squared() - p).abs() <= 1e-9 * p, "power boundary");
                assert!((g.adjoint() * &f)[(0, 0)].norm_sqr() >= eta * (1.0 - 1e-9));
            }
            // Case-boundary continuity at thr_comm (only meaningful when the
            // two thresholds are separated; for collinear rays they coincide
            // and the shared regime is empty).
            if thr_comm >= 0.99 * thr_feas {
                continue;
            }
            let (f_lo, c_lo) = two_ray_precoder(&h, &g, p, thr_comm * (1.0 - 1e-9)).unwrap();
            let (f_hi, c_hi) = two_ray_precoder(&h, &g, p, thr_comm * (1.0 + 1e-9)).unwrap();
            assert_eq!(c_lo, PrecoderCase::CommOnly);
            assert_eq!(c_hi, PrecoderCase::Shared);
            let obj_lo = (h.adjoint() * &f_lo)[(0, 0)].norm_sqr();
            let obj_hi = (h.adjoint() * &f_hi)[(0, 0)].norm_sqr();
            assert!((obj_lo - obj_hi).abs() <= 1e-6 * obj_lo.max(1e-300));
        }
    }

    #[test]
    fn two_ray_beats_discretized_search() {
        // The optimum lies in span{h, g}: any orthogonal component can be
        // removed and its power folded back along h without touching either
        // constraint, so a grid over that plane is exhaustive.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..60 {
            let n = rng.gen_range(2..=4);
            let h = complex_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
            let g = complex_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
            let p = rng.gen_range(0.5..2.0);
            let thr_feas = p * g.norm_squared();
            let eta = rng.gen_range(0.0..thr_feas * 0.98);
            let (f, _) = two_ray_precoder(&h, &g, p, eta).unwrap();
            let ours = (h.adjoint() * &f)[(0, 0)].norm_sqr();

            // Orthonormal basis of span{h, g}.
            let e1 = h.scale(1.0 / h.norm());
            let mut e2 = g.clone() - e1.scale(1.0) * (e1.adjoint() * &g)[(0, 0)];
            let has_e2 = e2.norm() > 1e-9;
            if has_e2 {
                e2 /= Complex64::new(e2.norm(), 0.0);
            }
            let mut best = 0.0f64;
            let steps_r = 24;
            let steps_psi = 20;
            let steps_phase = 21;
            for ri in 0..=steps_r {
                let r = p.sqrt() * ri as f64 / steps_r as f64;
                for pi in 0..=steps_psi {
                    let psi = std::f64::consts::FRAC_PI_2 * pi as f64 / steps_psi as f64;
                    for qi in 0..steps_phase {
                        let ph = std::f64::consts::TAU * qi as f64 / steps_phase as f64;
                        let cand = e1.scale(r * psi.cos())
                            + if has_e2 {
                                e2.scale(r * psi.sin()) * Complex64::from_polar(1.0, ph)
                            } else {
                                CVec::zeros(n)
                            };
                        if (g.adjoint() * &cand)[(0, 0)].norm_sqr() >= eta {
                            best = best.max((h.adjoint() * &cand)[(0, 0)].norm_sqr());
                        }
                    }
                }
            }
            assert!(
                ours >= best * (1.0 - 0.01),
                "trial {trial}: ours {ours} vs grid {best}"
            );
        }
    }

    #[test]
    fn ris_phase_aligns_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 8;
        let (m, n) = (4, 2);
        let h_bu = complex_gaussian(m, n, 1.0, &mut rng);
        let h_r = complex_gaussian(m, l, 1.0, &mut rng);
        let h_ru = complex_gaussian(l, n, 1.0, &mut rng);
        let w = complex_gaussian(m, 1, 1.0, &mut rng).column(0).into_owned();
        let f = complex_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
        let theta = su_ris_phase(&w, &h_bu, &h_r, &h_ru, &f);
        for &t in &theta {
            assert!(t > 0.0 && t <= std::f64::consts::TAU);
        }
        let h_eff = channel::effective_channel(&h_bu, &h_r, &h_ru, &theta).unwrap();
        let comp = (w.adjoint() * &h_eff * &f)[(0, 0)].norm();
        let direct = (w.adjoint() * &h_bu * &f)[(0, 0)].norm();
        let row = w.adjoint() * &h_r;
        let refl = &h_ru * &f;
        let sum_mags: f64 = (0..l).map(|i| (row[(0, i)] * refl[i]).norm()).sum();
        assert!((comp - (direct + sum_mags)).abs() <= 1e-9 * comp);

        // Optimal against random draws.
        for _ in 0..10_000 {
            let probe: Vec<f64> = (0..l)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            let h_p = channel::effective_channel(&h_bu, &h_r, &h_ru, &probe).unwrap();
            let val = (w.adjoint() * &h_p * &f)[(0, 0)].norm();
            assert!(val <= comp * (1.0 + 1e-12));
        }

        // Blocked direct link: terms still align with each other.
        let theta0 = su_ris_phase(&w, &CMat::zeros(m, n), &h_r, &h_ru, &f);
        let h_eff0 =
            channel::effective_channel(&CMat::zeros(m, n), &h_r, &h_ru, &theta0).unwrap();
        let comp0 = (w.adjoint() * &h_eff0 * &f)[(0, 0)].norm();
        assert!((comp0 - sum_mags).abs() <= 1e-9 * comp0.max(1e-300));
    }

    #[test]
    fn loop_converges_quickly_and_descends() {
        let cfg = single_cfg("");
        for seed in 0..10u64 {
            let ch =
                channel::realize_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let sol =
                algorithm5(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed + 500)).unwrap();
            assert!(sol.converged, "seed {seed}");
            assert!(sol.iterations <= 10, "seed {seed}: {} iterations", sol.iterations);
            for w in sol.trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "seed {seed}: trace not descending");
            }
            // Power boundary at exit.
            let p = crate::linalg::frob_norm_sq(&sol.state.precoders[0]);
            assert!((p - cfg.power_budget_mw[0]).abs() <= 1e-9 * cfg.power_budget_mw[0]);
            // Sensing constraint holds.
            let gamma = metrics::radar_sinr(&ch, &sol.state, 0, &cfg).unwrap();
            assert!(gamma >= cfg.sinr_threshold * (1.0 - 1e-9));
        }
    }

    #[test]
    fn zero_threshold_stays_comm_only() {
        let cfg = single_cfg("sinr_threshold_linear = 1e-30");
        let ch = channel::realize_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let sol = algorithm5(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(sol.cases.iter().all(|&c| c == PrecoderCase::CommOnly));
    }

    use rand::Rng;
}
