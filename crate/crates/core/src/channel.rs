//! Channel synthesis for one scenario realization.
//!
//! Direct UE-BS links and UE-UE interference links are Rayleigh; the two
//! RIS-adjacent links are Rician with geometry-derived LoS steering. Large
//! scale gains follow the log-distance model with a reference loss at 1 m,
//! applied as a linear power gain `10^(-(PL0 + 10 a log10(d/d0))/10)`.
//!
//! All draws come from a caller-supplied RNG; a fixed draw order makes a
//! realization a pure function of (config, seed). Independent realizations
//! derive their seeds with [`crate::linalg::derive_seed`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Geometry, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, phase_vector, CMat, CVec};

/// All channel matrices and target responses for one realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    /// Per-UE direct channel to the BS, M x N.
    pub ue_bs: Vec<CMat>,
    /// RIS to BS, M x L.
    pub ris_bs: CMat,
    /// Per-UE channel to the RIS, L x N.
    pub ue_ris: Vec<CMat>,
    /// `ue_ue[k][i]`: channel from UE i into UE k's radar receiver (N x N).
    /// `None` on the diagonal; self-interference is not modeled.
    pub ue_ue: Vec<Vec<Option<CMat>>>,
    /// Per-UE target response matrix, N x N, rank 1.
    pub target: Vec<CMat>,
    pub target_angle: Vec<f64>,
    pub target_gain: Vec<Complex64>,
}

/// Linear power gain of a link of length `distance_m` with exponent `exponent`.
pub fn pathloss_gain(distance_m: f64, exponent: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Degenerate(format!(
            "pathloss distance must be positive, got {distance_m}"
        )));
    }
    let loss_db = cfg.pathloss_ref_db + 10.0 * exponent * (distance_m / cfg.ref_distance_m).log10();
    Ok(10f64.powf(-loss_db / 10.0))
}

/// ULA steering vector, half-wavelength spacing: entry m is
/// `exp(j pi m sin(angle))`.
pub fn steering_vector(angle: f64, elements: usize) -> CVec {
    let phase = std::f64::consts::PI * angle.sin();
    CVec::from_fn(elements, |m, _| Complex64::from_polar(1.0, phase * m as f64))
}

/// i.i.d. Rayleigh block with per-entry power `gain`.
pub fn gen_rayleigh<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> CMat {
    complex_gaussian(rows, cols, gain, rng)
}

/// Rician block: LoS steering outer product plus Rayleigh scatter, mixed by
/// the K-factor and scaled so per-entry power is `gain`.
pub fn gen_rician<R: Rng>(
    rows: usize,
    cols: usize,
    gain: f64,
    k_factor: f64,
    aoa: f64,
    aod: f64,
    rng: &mut R,
) -> CMat {
    let los = steering_vector(aoa, rows) * steering_vector(aod, cols).adjoint();
    let nlos = complex_gaussian(rows, cols, 1.0, rng);
    let c_los = (k_factor / (1.0 + k_factor)).sqrt();
    let c_nlos = (1.0 / (1.0 + k_factor)).sqrt();
    (los.scale(c_los) + nlos.scale(c_nlos)).scale(gain.sqrt())
}

/// Rank-1 target response `alpha a(angle) a(angle)^H` for an N-antenna UE.
pub fn target_response(alpha: Complex64, angle: f64, n: usize) -> CMat {
    let a = steering_vector(angle, n);
    (&a * a.adjoint()) * alpha
}

/// RIS-composite effective channel `H_bu + H_r diag(e^{j theta}) H_ru`.
pub fn effective_channel(h_bu: &CMat, h_r: &CMat, h_ru: &CMat, theta: &[f64]) -> Result<CMat> {
    let (m, n) = h_bu.shape();
    let l = h_r.ncols();
    if h_r.nrows() != m || h_ru.nrows() != l || h_ru.ncols() != n || theta.len() != l {
        return Err(Error::Dimension(format!(
            "effective_channel: H_bu {m}x{n}, H_r {}x{l}, H_ru {}x{}, {} phases",
            h_r.nrows(),
            h_ru.nrows(),
            h_ru.ncols(),
            theta.len()
        )));
    }
    let phases = phase_vector(theta);
    // H_r * diag(phi) * H_ru without forming the diagonal matrix.
    let mut reflected = h_ru.clone();
    for (l_idx, mut row) in reflected.row_iter_mut().enumerate() {
        for x in row.iter_mut() {
            *x *= phases[l_idx];
        }
    }
    Ok(h_bu + h_r * reflected)
}

/// Draws every channel of one realization.
pub fn realize_scenario<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelSet> {
    let (k, m, n, l) = (cfg.num_ues, cfg.bs_antennas, cfg.ue_antennas, cfg.ris_elements);
    let geo = &cfg.geometry;

    // RIS-BS first, then per-UE blocks in index order; order is part of the
    // determinism contract.
    let d_rb = Geometry::distance(geo.ris, geo.bs);
    let g_rb = pathloss_gain(d_rb, cfg.exponents.ris_bs, cfg)?;
    let ris_bs = gen_rician(
        m,
        l,
        g_rb,
        cfg.rician_k,
        Geometry::angle(geo.bs, geo.ris),
        Geometry::angle(geo.ris, geo.bs),
        rng,
    );

    let mut ue_bs = Vec::with_capacity(k);
    let mut ue_ris = Vec::with_capacity(k);
    for u in 0..k {
        let g_bu = pathloss_gain(
            Geometry::distance(geo.ues[u], geo.bs),
            cfg.exponents.ue_bs,
            cfg,
        )?;
        ue_bs.push(gen_rayleigh(m, n, g_bu, rng));
        let g_ru = pathloss_gain(
            Geometry::distance(geo.ues[u], geo.ris),
            cfg.exponents.ue_ris,
            cfg,
        )?;
        ue_ris.push(gen_rician(
            l,
            n,
            g_ru,
            cfg.rician_k,
            Geometry::angle(geo.ris, geo.ues[u]),
            Geometry::angle(geo.ues[u], geo.ris),
            rng,
        ));
    }

    let mut ue_ue = vec![vec![None; k]; k];
    for rx in 0..k {
        for tx in 0..k {
            if rx == tx {
                continue;
            }
            let g_uu = pathloss_gain(
                Geometry::distance(geo.ues[tx], geo.ues[rx]),
                cfg.exponents.ue_ue,
                cfg,
            )?;
            ue_ue[rx][tx] = Some(gen_rayleigh(n, n, g_uu, rng));
        }
    }

    let mut target = Vec::with_capacity(k);
    let mut target_angle = Vec::with_capacity(k);
    let mut target_gain = Vec::with_capacity(k);
    for u in 0..k {
        let d_t = Geometry::distance(geo.ues[u], geo.targets[u]);
        // Two-way radar attenuation: square of the one-way linear gain.
        let one_way = pathloss_gain(d_t, cfg.exponents.target, cfg)?;
        let mag = one_way; // |alpha|^2 = one_way^2
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let alpha = Complex64::from_polar(mag, phase);
        let angle = Geometry::angle(geo.ues[u], geo.targets[u]);
        target.push(target_response(alpha, angle, n));
        target_angle.push(angle);
        target_gain.push(alpha);
    }

    Ok(ChannelSet { ue_bs, ris_bs, ue_ris, ue_ue, target, target_angle, target_gain })
}

impl ChannelSet {
    pub fn num_ues(&self) -> usize {
        self.ue_bs.len()
    }

    /// Effective channel of UE `k` under the given RIS phases.
    pub fn effective(&self, k: usize, theta: &[f64]) -> Result<CMat> {
        effective_channel(&self.ue_bs[k], &self.ris_bs, &self.ue_ris[k], theta)
    }

    /// Zeroes the RIS-adjacent links (blocked-RIS baseline).
    pub fn without_ris(&self) -> ChannelSet {
        let mut c = self.clone();
        c.ris_bs.fill(Complex64::new(0.0, 0.0));
        for h in &mut c.ue_ris {
            h.fill(Complex64::new(0.0, 0.0));
        }
        c
    }

    /// JSON container dump for replay tests (complex entries as re/im pairs).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("channel set serializes")
    }

    pub fn from_json(s: &str) -> Result<ChannelSet> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn check_finite(&self) -> bool {
        let finite = |m: &CMat| m.iter().all(|x| x.re.is_finite() && x.im.is_finite());
        self.ue_bs.iter().all(|m| finite(m))
            && finite(&self.ris_bs)
            && self.ue_ris.iter().all(|m| finite(m))
            && self
                .ue_ue
                .iter()
                .flatten()
                .all(|m| m.as_ref().map_or(true, |m| finite(m)))
            && self.target.iter().all(|m| finite(m))
    }
}
