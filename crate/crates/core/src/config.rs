//! Scenario configuration: typed parameters, file loading, validation.
//!
//! Configs are TOML documents. Every key is optional; missing keys fall back
//! to the default simulation settings. Unknown keys are rejected by name.
//! Per-UE task parameters (`task_bits`, `cycles_per_bit`, `local_cpu`) accept
//! a scalar (broadcast), a per-UE list, or `{ range = [lo, hi] }`, in which
//! case values are sampled uniformly per UE from the scenario seed.
//!
//! The radar SINR threshold is stored internally in linear scale; files give
//! it as `sinr_threshold_db` (or `sinr_threshold_linear`, exactly one).
//!
//! The environment variable `ICSC_SEED` overrides `rng_seed` at load time;
//! nothing else can be overridden from the environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::derive_seed;

/// Stream label for sampling task parameters from ranges.
const TASK_STREAM: u64 = 0x7461_736b; // "task"

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    pub ues: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

impl Geometry {
    pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Angle of the line from `a` to `b`, measured from the +x axis.
    /// Uniform linear arrays are laid out along the x axis.
    pub fn angle(a: [f64; 2], b: [f64; 2]) -> f64 {
        (b[1] - a[1]).atan2(b[0] - a[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterCaps {
    /// Offloading/edge-allocation alternation cap (t1).
    pub compute: usize,
    /// Auxiliary-variable outer loop cap (t2).
    pub fractional: usize,
    /// Beamforming inner loop cap (t3).
    pub beamforming: usize,
    /// Top-level alternation cap (t4).
    pub outer: usize,
    /// Single-UE loop cap (t5).
    pub single_ue: usize,
}

impl Default for IterCaps {
    fn default() -> Self {
        IterCaps { compute: 50, fractional: 300, beamforming: 50, outer: 30, single_ue: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossExponents {
    pub ue_bs: f64,
    pub ris_bs: f64,
    pub ue_ris: f64,
    pub ue_ue: f64,
    /// Exponent of the one-way UE-target path; the two-way target gain is
    /// the square of that path's linear gain.
    pub target: f64,
}

impl Default for PathlossExponents {
    fn default() -> Self {
        PathlossExponents { ue_bs: 3.75, ris_bs: 2.2, ue_ris: 2.2, ue_ue: 2.2, target: 1.8 }
    }
}

/// Every scalar parameter of one scenario. Immutable after construction and
/// safe to share across worker threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_ues: usize,
    pub bs_antennas: usize,
    pub ue_antennas: usize,
    pub ris_elements: usize,
    pub streams: usize,
    pub bandwidth_hz: f64,
    pub noise_comm_mw: f64,
    pub noise_sense_mw: f64,
    pub power_budget_mw: Vec<f64>,
    /// Radar SINR requirement, linear scale.
    pub sinr_threshold: f64,
    pub weights: Vec<f64>,
    pub pathloss_ref_db: f64,
    pub ref_distance_m: f64,
    pub exponents: PathlossExponents,
    pub rician_k: f64,
    pub geometry: Geometry,
    pub task_bits: Vec<u64>,
    pub cycles_per_bit: Vec<f64>,
    pub local_cpu: Vec<f64>,
    pub edge_cpu_total: f64,
    pub epsilon: f64,
    pub max_iters: IterCaps,
    pub newton_step: f64,
    pub newton_eps: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum PerUeSpec {
    Scalar(f64),
    List(Vec<f64>),
    Range { range: [f64; 2] },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    bs: Option<[f64; 2]>,
    ris: Option<[f64; 2]>,
    ues: Option<Vec<[f64; 2]>>,
    targets: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIterCaps {
    compute: Option<usize>,
    fractional: Option<usize>,
    beamforming: Option<usize>,
    outer: Option<usize>,
    single_ue: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExponents {
    ue_bs: Option<f64>,
    ris_bs: Option<f64>,
    ue_ris: Option<f64>,
    ue_ue: Option<f64>,
    target: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    num_ues: Option<usize>,
    bs_antennas: Option<usize>,
    ue_antennas: Option<usize>,
    ris_elements: Option<usize>,
    streams: Option<usize>,
    bandwidth_hz: Option<f64>,
    noise_comm_mw: Option<f64>,
    noise_sense_mw: Option<f64>,
    power_budget_mw: Option<PerUeSpec>,
    sinr_threshold_db: Option<f64>,
    sinr_threshold_linear: Option<f64>,
    weights: Option<Vec<f64>>,
    pathloss_ref_db: Option<f64>,
    ref_distance_m: Option<f64>,
    exponents: Option<RawExponents>,
    rician_k: Option<f64>,
    geometry: Option<RawGeometry>,
    task_bits: Option<PerUeSpec>,
    cycles_per_bit: Option<PerUeSpec>,
    local_cpu: Option<PerUeSpec>,
    edge_cpu_total: Option<f64>,
    epsilon: Option<f64>,
    max_iters: Option<RawIterCaps>,
    newton_step: Option<f64>,
    newton_eps: Option<f64>,
    rng_seed: Option<u64>,
}

/// Default UE/target layout for the two benchmark scenarios.
fn default_geometry(num_ues: usize) -> Result<Geometry> {
    let (ues, targets) = match num_ues {
        1 => (vec![[250.0, 50.0]], vec![[270.0, 50.0]]),
        2 => (
            vec![[240.0, 50.0], [250.0, -50.0]],
            vec![[260.0, 50.0], [250.0, -70.0]],
        ),
        _ => {
            return Err(Error::ConfigInvalid(
                "geometry: explicit UE/target coordinates required when num_ues > 2".into(),
            ))
        }
    };
    Ok(Geometry { bs: [0.0, 0.0], ris: [200.0, 0.0], ues, targets })
}

fn resolve_per_ue(
    spec: Option<PerUeSpec>,
    default_range: [f64; 2],
    k: usize,
    rng: &mut ChaCha8Rng,
    integer: bool,
    field: &str,
) -> Result<Vec<f64>> {
    let spec = spec.unwrap_or(PerUeSpec::Range { range: default_range });
    let sample = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> f64 {
        if integer {
            rng.gen_range(lo as u64..=hi as u64) as f64
        } else {
            rng.gen_range(lo..=hi)
        }
    };
    match spec {
        PerUeSpec::Scalar(x) => Ok(vec![x; k]),
        PerUeSpec::List(v) => {
            if v.len() != k {
                return Err(Error::ConfigInvalid(format!(
                    "{field}: expected {k} per-UE entries, got {}",
                    v.len()
                )));
            }
            Ok(v)
        }
        PerUeSpec::Range { range: [lo, hi] } => {
            if !(lo <= hi) {
                return Err(Error::ConfigInvalid(format!("{field}: empty range [{lo}, {hi}]")));
            }
            Ok((0..k).map(|_| sample(lo, hi, rng)).collect())
        }
    }
}

/// Parses and validates a configuration document.
pub fn load_config(source: &str) -> Result<SystemConfig> {
    let env_seed = match std::env::var("ICSC_SEED") {
        Ok(s) => Some(s.parse::<u64>().map_err(|_| {
            Error::ConfigParse(format!("ICSC_SEED is not a valid 64-bit seed: {s:?}"))
        })?),
        Err(_) => None,
    };
    load_config_with_seed_override(source, env_seed)
}

/// Same as [`load_config`] but with an explicit seed override (used by the
/// loader for the `ICSC_SEED` environment variable).
pub fn load_config_with_seed_override(source: &str, seed: Option<u64>) -> Result<SystemConfig> {
    let raw: RawConfig =
        toml::from_str(source).map_err(|e| Error::ConfigParse(e.to_string()))?;
    resolve(raw, seed)
}

fn resolve(raw: RawConfig, seed_override: Option<u64>) -> Result<SystemConfig> {
    let num_ues = raw.num_ues.unwrap_or(2);
    let rng_seed = seed_override.or(raw.rng_seed).unwrap_or(42);
    let mut task_rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, TASK_STREAM));

    let sinr_threshold = match (raw.sinr_threshold_db, raw.sinr_threshold_linear) {
        (Some(_), Some(_)) => {
            return Err(Error::ConfigInvalid(
                "give exactly one of sinr_threshold_db / sinr_threshold_linear".into(),
            ))
        }
        (Some(db), None) => db_to_linear(db),
        (None, Some(lin)) => lin,
        (None, None) => db_to_linear(10.0),
    };

    let geometry = match raw.geometry {
        None => default_geometry(num_ues)?,
        Some(g) => {
            let base = default_geometry(num_ues.min(2)).unwrap();
            Geometry {
                bs: g.bs.unwrap_or(base.bs),
                ris: g.ris.unwrap_or(base.ris),
                ues: match g.ues {
                    Some(u) => u,
                    None => default_geometry(num_ues)?.ues,
                },
                targets: match g.targets {
                    Some(t) => t,
                    None => default_geometry(num_ues)?.targets,
                },
            }
        }
    };

    let exps = raw.exponents.unwrap_or_default();
    let dexp = PathlossExponents::default();
    let exponents = PathlossExponents {
        ue_bs: exps.ue_bs.unwrap_or(dexp.ue_bs),
        ris_bs: exps.ris_bs.unwrap_or(dexp.ris_bs),
        ue_ris: exps.ue_ris.unwrap_or(dexp.ue_ris),
        ue_ue: exps.ue_ue.unwrap_or(dexp.ue_ue),
        target: exps.target.unwrap_or(dexp.target),
    };

    let caps = raw.max_iters.unwrap_or_default();
    let dcaps = IterCaps::default();
    let max_iters = IterCaps {
        compute: caps.compute.unwrap_or(dcaps.compute),
        fractional: caps.fractional.unwrap_or(dcaps.fractional),
        beamforming: caps.beamforming.unwrap_or(dcaps.beamforming),
        outer: caps.outer.unwrap_or(dcaps.outer),
        single_ue: caps.single_ue.unwrap_or(dcaps.single_ue),
    };

    let power_budget_mw = resolve_per_ue(
        raw.power_budget_mw.or(Some(PerUeSpec::Scalar(10.0))),
        [10.0, 10.0],
        num_ues,
        &mut task_rng,
        false,
        "power_budget_mw",
    )?;
    let task_bits_f = resolve_per_ue(
        raw.task_bits,
        [200_000.0, 300_000.0],
        num_ues,
        &mut task_rng,
        true,
        "task_bits",
    )?;
    let cycles_per_bit = resolve_per_ue(
        raw.cycles_per_bit,
        [500.0, 600.0],
        num_ues,
        &mut task_rng,
        false,
        "cycles_per_bit",
    )?;
    let local_cpu = resolve_per_ue(
        raw.local_cpu,
        [1e8, 2e8],
        num_ues,
        &mut task_rng,
        false,
        "local_cpu",
    )?;

    let weights = match raw.weights {
        Some(w) => w,
        None => vec![1.0 / num_ues as f64; num_ues],
    };

    let cfg = SystemConfig {
        num_ues,
        bs_antennas: raw.bs_antennas.unwrap_or(4),
        ue_antennas: raw.ue_antennas.unwrap_or(2),
        ris_elements: raw.ris_elements.unwrap_or(30),
        streams: raw.streams.unwrap_or(2),
        bandwidth_hz: raw.bandwidth_hz.unwrap_or(1e6),
        noise_comm_mw: raw.noise_comm_mw.unwrap_or(3.98e-12),
        noise_sense_mw: raw.noise_sense_mw.unwrap_or(3.98e-12),
        power_budget_mw,
        sinr_threshold,
        weights,
        pathloss_ref_db: raw.pathloss_ref_db.unwrap_or(30.0),
        ref_distance_m: raw.ref_distance_m.unwrap_or(1.0),
        exponents,
        rician_k: raw.rician_k.unwrap_or(3.0),
        geometry,
        task_bits: task_bits_f.iter().map(|&v| v as u64).collect(),
        cycles_per_bit,
        local_cpu,
        edge_cpu_total: raw.edge_cpu_total.unwrap_or(5e10),
        epsilon: raw.epsilon.unwrap_or(1e-3),
        max_iters,
        newton_step: raw.newton_step.unwrap_or(0.5),
        newton_eps: raw.newton_eps.unwrap_or(0.01),
        rng_seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl SystemConfig {
    pub fn default_config() -> SystemConfig {
        load_config_with_seed_override("", None).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.num_ues < 1 {
            return fail("num_ues must be at least 1".into());
        }
        for (name, v) in [
            ("bs_antennas", self.bs_antennas),
            ("ue_antennas", self.ue_antennas),
            ("ris_elements", self.ris_elements),
            ("streams", self.streams),
        ] {
            if v < 1 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.streams > self.bs_antennas.min(self.ue_antennas) {
            return fail("d exceeds min(M,N)".into());
        }
        for (name, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_comm_mw", self.noise_comm_mw),
            ("noise_sense_mw", self.noise_sense_mw),
            ("sinr_threshold", self.sinr_threshold),
            ("edge_cpu_total", self.edge_cpu_total),
            ("epsilon", self.epsilon),
            ("ref_distance_m", self.ref_distance_m),
            ("newton_eps", self.newton_eps),
        ] {
            if !(v > 0.0) {
                return fail(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.newton_step > 0.0 && self.newton_step < 1.0) {
            return fail(format!(
                "newton_step must lie in the open interval (0,1), got {}",
                self.newton_step
            ));
        }
        let k = self.num_ues;
        for (name, len) in [
            ("power_budget_mw", self.power_budget_mw.len()),
            ("weights", self.weights.len()),
            ("task_bits", self.task_bits.len()),
            ("cycles_per_bit", self.cycles_per_bit.len()),
            ("local_cpu", self.local_cpu.len()),
            ("geometry.ues", self.geometry.ues.len()),
            ("geometry.targets", self.geometry.targets.len()),
        ] {
            if len != k {
                return fail(format!("{name} must have one entry per UE ({k}), got {len}"));
            }
        }
        for (i, &p) in self.power_budget_mw.iter().enumerate() {
            if !(p > 0.0) {
                return fail(format!("power_budget_mw[{i}] must be strictly positive"));
            }
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0) {
                return fail(format!("weights[{i}] must be strictly positive"));
            }
        }
        for (i, &c) in self.cycles_per_bit.iter().enumerate() {
            if !(c > 0.0) {
                return fail(format!("cycles_per_bit[{i}] must be strictly positive"));
            }
        }
        for (i, &f) in self.local_cpu.iter().enumerate() {
            if !(f > 0.0) {
                return fail(format!("local_cpu[{i}] must be strictly positive"));
            }
        }
        Ok(())
    }

    /// Serializes to the file schema; `load_config` on the output reproduces
    /// this config exactly (the threshold is written in linear scale and all
    /// sampled per-UE values are written out resolved).
    pub fn to_file_string(&self) -> String {
        let raw = RawConfig {
            num_ues: Some(self.num_ues),
            bs_antennas: Some(self.bs_antennas),
            ue_antennas: Some(self.ue_antennas),
            ris_elements: Some(self.ris_elements),
            streams: Some(self.streams),
            bandwidth_hz: Some(self.bandwidth_hz),
            noise_comm_mw: Some(self.noise_comm_mw),
            noise_sense_mw: Some(self.noise_sense_mw),
            power_budget_mw: Some(PerUeSpec::List(self.power_budget_mw.clone())),
            sinr_threshold_db: None,
            sinr_threshold_linear: Some(self.sinr_threshold),
            weights: Some(self.weights.clone()),
            pathloss_ref_db: Some(self.pathloss_ref_db),
            ref_distance_m: Some(self.ref_distance_m),
            exponents: Some(RawExponents {
                ue_bs: Some(self.exponents.ue_bs),
                ris_bs: Some(self.exponents.ris_bs),
                ue_ris: Some(self.exponents.ue_ris),
                ue_ue: Some(self.exponents.ue_ue),
                target: Some(self.exponents.target),
            }),
            rician_k: Some(self.rician_k),
            geometry: Some(RawGeometry {
                bs: Some(self.geometry.bs),
                ris: Some(self.geometry.ris),
                ues: Some(self.geometry.ues.clone()),
                targets: Some(self.geometry.targets.clone()),
            }),
            task_bits: Some(PerUeSpec::List(
                self.task_bits.iter().map(|&v| v as f64).collect(),
            )),
            cycles_per_bit: Some(PerUeSpec::List(self.cycles_per_bit.clone())),
            local_cpu: Some(PerUeSpec::List(self.local_cpu.clone())),
            edge_cpu_total: Some(self.edge_cpu_total),
            epsilon: Some(self.epsilon),
            max_iters: Some(RawIterCaps {
                compute: Some(self.max_iters.compute),
                fractional: Some(self.max_iters.fractional),
                beamforming: Some(self.max_iters.beamforming),
                outer: Some(self.max_iters.outer),
                single_ue: Some(self.max_iters.single_ue),
            }),
            newton_step: Some(self.newton_step),
            newton_eps: Some(self.newton_eps),
            rng_seed: Some(self.rng_seed),
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_table_defaults() {
        let cfg = load_config_with_seed_override("", None).unwrap();
        assert_eq!(cfg.bs_antennas, 4);
        assert_eq!(cfg.ue_antennas, 2);
        assert_eq!(cfg.streams, 2);
        assert_eq!(cfg.ris_elements, 30);
        assert!((cfg.sinr_threshold - 10.0).abs() < 1e-12); // 10 dB
        assert_eq!(cfg.bandwidth_hz, 1e6);
        assert_eq!(cfg.noise_comm_mw, 3.98e-12);
        assert_eq!(cfg.num_ues, 2);
        assert_eq!(cfg.weights, vec![0.5, 0.5]);
        for (&v, (&c, &f)) in cfg
            .task_bits
            .iter()
            .zip(cfg.cycles_per_bit.iter().zip(cfg.local_cpu.iter()))
        {
            assert!((200_000..=300_000).contains(&v));
            assert!((500.0..=600.0).contains(&c));
            assert!((1e8..=2e8).contains(&f));
        }
    }

    #[test]
    fn stream_count_bound() {
        let err = load_config_with_seed_override("streams = 5", None).unwrap_err();
        assert!(err.to_string().contains("d exceeds min(M,N)"));
    }

    #[test]
    fn override_semantics() {
        let a = load_config_with_seed_override("ris_elements = 50\nrng_seed = 7", None).unwrap();
        let b = load_config_with_seed_override("rng_seed = 7", None).unwrap();
        assert_eq!(a.ris_elements, 50);
        let mut b2 = b.clone();
        b2.ris_elements = 50;
        assert_eq!(a, b2);
    }

    #[test]
    fn unknown_keys_rejected_by_name() {
        let err = load_config_with_seed_override("bogus_key = 1", None).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(10.0), 10.0);
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(30.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn dual_threshold_keys_rejected() {
        let err = load_config_with_seed_override(
            "sinr_threshold_db = 10.0\nsinr_threshold_linear = 10.0",
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("exactly one"));
    }

    #[test]
    fn serialize_roundtrip_exact() {
        for seed in [1u64, 7, 42, 9999] {
            let doc = format!("rng_seed = {seed}\nris_elements = 17\nnum_ues = 2");
            let cfg = load_config_with_seed_override(&doc, None).unwrap();
            let re = load_config_with_seed_override(&cfg.to_file_string(), None).unwrap();
            assert_eq!(cfg, re);
        }
    }

    #[test]
    fn env_seed_override() {
        std::env::set_var("ICSC_SEED", "123");
        let cfg = load_config("rng_seed = 7").unwrap();
        std::env::remove_var("ICSC_SEED");
        assert_eq!(cfg.rng_seed, 123);
    }

    #[test]
    fn per_ue_list_and_scalar_forms() {
        let cfg = load_config_with_seed_override(
            "num_ues = 2\ntask_bits = [1000, 2000]\ncycles_per_bit = 500.0",
            None,
        )
        .unwrap();
        assert_eq!(cfg.task_bits, vec![1000, 2000]);
        assert_eq!(cfg.cycles_per_bit, vec![500.0, 500.0]);
        let err = load_config_with_seed_override("num_ues = 2\ntask_bits = [1, 2, 3]", None)
            .unwrap_err();
        assert!(err.to_string().contains("task_bits"));
    }

    #[test]
    fn range_form_samples_within_bounds() {
        let cfg = load_config_with_seed_override(
            "num_ues = 2\ntask_bits = { range = [100, 200] }",
            None,
        )
        .unwrap();
        for &v in &cfg.task_bits {
            assert!((100..=200).contains(&v));
        }
        // Same seed, same samples.
        let cfg2 = load_config_with_seed_override(
            "num_ues = 2\ntask_bits = { range = [100, 200] }",
            None,
        )
        .unwrap();
        assert_eq!(cfg.task_bits, cfg2.task_bits);
    }
}
