//! Run configuration: a flat `key = value` text format with `[section]`
//! headers, parsed into a string map and then assembled into the typed
//! configuration structs with range checks before any run starts.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::conditioning::UpscaleMethod;
use crate::diffusion::{DiffusionConfig, SamplerSpec, ScheduleKind, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::network::ScoreNetConfig;
use crate::random::GrfSpec;
use crate::rollout::ClosureRunConfig;
use crate::solver::{ClosureKind, NsConfig, Protocol};

/// Parsed but untyped configuration: section-qualified keys to raw values.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `key = value` lines. `[section]` headers prefix the keys that
    /// follow as `section.key`; `#` and `;` start comments; later
    /// assignments to the same key win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find(['#', ';']) {
                Some(at) => &raw_line[..at],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(Error::Config(format!(
                        "line {}: unterminated section header '{raw_line}'",
                        lineno + 1
                    )));
                };
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw_line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            entries.insert(full, value.trim().to_string());
        }
        Ok(RawConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Insert or override one value; `key` is already section-qualified.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.trim().to_string(), value.trim().to_string());
    }

    /// Apply a `section.key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!(
                "override '{pair}' must look like section.key=value"
            )));
        };
        if key.trim().is_empty() {
            return Err(Error::Config(format!("override '{pair}' has an empty key")));
        }
        self.set(key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn get_parsed<T: FromStr>(&self, key: &str, default: T, what: &str) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("{key}: cannot parse '{v}' as {what}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.get_parsed(key, default, "a number")
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.get_parsed(key, default, "a non-negative integer")
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.get_parsed(key, default, "a non-negative integer")
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        self.get_parsed(key, default, "true or false")
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }
}

/// Which rollout arrangement a simulation uses: `I` is the no-closure
/// ablation; `II`–`IV` sample the closure with the fast adaptive, fast
/// uniform, and dense reference schedules respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RolloutSetting {
    I,
    II,
    III,
    IV,
}

impl RolloutSetting {
    pub const ALL: [RolloutSetting; 4] =
        [RolloutSetting::I, RolloutSetting::II, RolloutSetting::III, RolloutSetting::IV];

    /// The reverse-SDE schedule this setting runs, if it samples at all.
    pub fn sampler(self) -> Option<SamplerSpec> {
        match self {
            RolloutSetting::I => None,
            RolloutSetting::II => Some(SamplerSpec::fast_adaptive()),
            RolloutSetting::III => Some(SamplerSpec::fast_uniform()),
            RolloutSetting::IV => Some(SamplerSpec::reference()),
        }
    }
}

impl std::fmt::Display for RolloutSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RolloutSetting::I => "I",
            RolloutSetting::II => "II",
            RolloutSetting::III => "III",
            RolloutSetting::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for RolloutSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" => Ok(RolloutSetting::I),
            "II" => Ok(RolloutSetting::II),
            "III" => Ok(RolloutSetting::III),
            "IV" => Ok(RolloutSetting::IV),
            other => Err(Error::Config(format!(
                "unknown rollout setting '{other}' (expected I, II, III, or IV)"
            ))),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "physics.nu",
    "physics.beta",
    "physics.dt",
    "physics.L",
    "physics.forcing_amplitude",
    "physics.dealias",
    "physics.resolution",
    "physics.source_resolution",
    "physics.T_phy",
    "physics.warmup",
    "physics.record_every",
    "physics.trajectories",
    "physics.train_trajectories",
    "grf.variance_scale",
    "grf.laplacian_shift",
    "grf.spectral_decay",
    "diffusion.sigma",
    "diffusion.T",
    "diffusion.tau_floor",
    "diffusion.start",
    "diffusion.tau_min",
    "diffusion.rho",
    "diffusion.n_steps",
    "diffusion.schedule",
    "network.profile",
    "network.modes",
    "network.width",
    "network.embed",
    "network.head1",
    "network.head2",
    "network.layers",
    "network.gamma_std",
    "network.seed",
    "training.epochs",
    "training.batch",
    "training.lr",
    "training.lr_decay_every",
    "training.lr_decay_factor",
    "training.seed",
    "conditioning.sparse_n",
    "conditioning.upscale_method",
    "conditioning.with_sparse",
    "rollout.closure_kind",
    "rollout.sample_every_n",
    "rollout.setting",
    "rollout.hold_beta",
    "rollout.horizon",
    "rollout.warmup",
    "rollout.record_every",
    "rollout.seed",
];

/// The fully validated run configuration every command starts from.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub root_seed: u64,
    /// Solver configuration at the data-generation (source) resolution.
    pub ns: NsConfig,
    pub grf: GrfSpec,
    pub protocol: Protocol,
    pub diffusion: DiffusionConfig,
    /// Sampler built from the diffusion keys, used by the sample command.
    pub sampler: SamplerSpec,
    pub network: ScoreNetConfig,
    pub training: TrainConfig,
    pub upscale_method: UpscaleMethod,
    pub setting: RolloutSetting,
    pub rollout: ClosureRunConfig,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        for key in raw.keys() {
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown configuration key '{key}'")));
            }
        }

        let root_seed = raw.get_u64("run.seed", 0)?;

        let resolution = raw.get_usize("physics.resolution", 32)?;
        let source_resolution = raw.get_usize("physics.source_resolution", resolution)?;
        let length = raw.get_f64("physics.L", 1.0)?;
        if source_resolution < resolution {
            return Err(Error::Config(format!(
                "source resolution {source_resolution} is below the stored resolution {resolution}"
            )));
        }
        if source_resolution % resolution != 0 {
            return Err(Error::Config(format!(
                "source resolution {source_resolution} must be a multiple of {resolution}"
            )));
        }
        let source_grid = Grid2D::with_length(source_resolution, length)?;
        Grid2D::with_length(resolution, length)?;

        let mut ns = NsConfig::new(source_grid);
        ns.nu = raw.get_f64("physics.nu", ns.nu)?;
        ns.beta = raw.get_f64("physics.beta", ns.beta)?;
        ns.dt = raw.get_f64("physics.dt", ns.dt)?;
        ns.forcing_amplitude = raw.get_f64("physics.forcing_amplitude", ns.forcing_amplitude)?;
        ns.dealias = raw.get_bool("physics.dealias", ns.dealias)?;
        ns.validate()?;

        let grf_default = GrfSpec::default();
        let grf = GrfSpec {
            variance_scale: raw.get_f64("grf.variance_scale", grf_default.variance_scale)?,
            laplacian_shift: raw.get_f64("grf.laplacian_shift", grf_default.laplacian_shift)?,
            spectral_decay: raw.get_f64("grf.spectral_decay", grf_default.spectral_decay)?,
        };
        if !(grf.variance_scale > 0.0) || !(grf.laplacian_shift > 0.0) {
            return Err(Error::Config(
                "grf scale and shift must be positive".into(),
            ));
        }

        let sparse_n = raw.get_usize("conditioning.sparse_n", 8)?;
        if sparse_n == 0 || resolution % sparse_n != 0 {
            return Err(Error::Config(format!(
                "sparse lattice {sparse_n} must evenly divide the resolution {resolution}"
            )));
        }

        let horizon_time = raw.get_f64("physics.T_phy", 2.0)?;
        let warmup_time = raw.get_f64("physics.warmup", 5.0)?;
        let record_every = raw.get_usize("physics.record_every", 10)?;
        let trajectories = raw.get_usize("physics.trajectories", 2)?;
        let train_trajectories = raw.get_usize("physics.train_trajectories", 1)?;
        if !(horizon_time > 0.0) || warmup_time < 0.0 {
            return Err(Error::Config(
                "T_phy must be positive and warmup non-negative".into(),
            ));
        }
        if record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if trajectories == 0 || train_trajectories == 0 || train_trajectories > trajectories {
            return Err(Error::Config(format!(
                "need 1 ≤ train trajectories ≤ trajectories, got {train_trajectories}/{trajectories}"
            )));
        }
        let protocol = Protocol {
            source_n: source_resolution,
            target_n: resolution,
            sparse_n,
            trajectories,
            train_trajectories,
            warmup_time,
            horizon_time,
            record_every,
        };

        let diffusion = DiffusionConfig {
            sigma: raw.get_f64("diffusion.sigma", 25.0)?,
            horizon: raw.get_f64("diffusion.T", 1.0)?,
            tau_floor: raw.get_f64("diffusion.tau_floor", 1e-5)?,
        };
        diffusion.validate()?;

        let schedule: ScheduleKind = raw.get_str("diffusion.schedule", "adaptive").parse()?;
        let sampler = SamplerSpec {
            start: raw.get_f64("diffusion.start", 0.1)?,
            n_steps: raw.get_usize("diffusion.n_steps", 10)?,
            kind: schedule,
            tau_min: raw.get_f64("diffusion.tau_min", 1e-3)?,
            rho: raw.get_f64("diffusion.rho", 7.0)?,
        };
        sampler.schedule()?;

        let with_sparse = raw.get_bool("conditioning.with_sparse", true)?;
        let net_seed = raw.get_u64("network.seed", root_seed)?;
        let mut network = match raw.get_str("network.profile", "desk").as_str() {
            "paper" => ScoreNetConfig::paper_profile(net_seed),
            "desk" => ScoreNetConfig::desk(net_seed),
            "tiny" => ScoreNetConfig::tiny(net_seed),
            other => {
                return Err(Error::Config(format!(
                    "unknown network profile '{other}' (expected desk, tiny, or paper)"
                )))
            }
        };
        network.modes = raw.get_usize("network.modes", network.modes)?;
        network.width = raw.get_usize("network.width", network.width)?;
        network.embed_count = raw.get_usize("network.embed", network.embed_count)?;
        network.head_widths.0 = raw.get_usize("network.head1", network.head_widths.0)?;
        network.head_widths.1 = raw.get_usize("network.head2", network.head_widths.1)?;
        network.fourier_layers = raw.get_usize("network.layers", network.fourier_layers)?;
        network.gamma_std = raw.get_f64("network.gamma_std", network.gamma_std)?;
        network.with_sparse = with_sparse;
        network.validate()?;
        if network.min_grid() > resolution {
            return Err(Error::Config(format!(
                "network needs grids of at least {} points for {} modes, resolution is {resolution}",
                network.min_grid(),
                network.modes
            )));
        }

        let training = TrainConfig {
            epochs: raw.get_usize("training.epochs", 50)?,
            batch_size: raw.get_usize("training.batch", 20)?,
            learning_rate: raw.get_f64("training.lr", 1e-3)?,
            lr_decay_every: raw.get_usize("training.lr_decay_every", 50)?,
            lr_decay_factor: raw.get_f64("training.lr_decay_factor", 0.5)?,
            seed: raw.get_u64("training.seed", root_seed)?,
        };
        training.validate()?;

        let upscale_method: UpscaleMethod =
            raw.get_str("conditioning.upscale_method", "bicubic").parse()?;

        let setting: RolloutSetting = raw.get_str("rollout.setting", "II").parse()?;
        let kind: ClosureKind = raw.get_str("rollout.closure_kind", "G").parse()?;
        let rollout = ClosureRunConfig {
            kind,
            sample_every: raw.get_usize("rollout.sample_every_n", 5)?,
            sampler: setting.sampler().unwrap_or_else(SamplerSpec::fast_adaptive),
            hold_beta: raw.get_f64("rollout.hold_beta", ns.beta)?,
            warmup: raw.get_f64("rollout.warmup", 2.0)?,
            horizon: raw.get_f64("rollout.horizon", 5.0)?,
            record_every: raw.get_usize("rollout.record_every", 100)?,
            seed: raw.get_u64("rollout.seed", root_seed)?,
        };
        rollout.validate(ns.dt)?;

        Ok(RunConfig {
            root_seed,
            ns,
            grf,
            protocol,
            diffusion,
            sampler,
            network,
            training,
            upscale_method,
            setting,
            rollout,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_raw(&RawConfig::from_file(path)?)
    }

    /// Solver configuration at the stored (target) resolution.
    pub fn target_ns(&self) -> Result<NsConfig> {
        let grid = Grid2D::with_length(self.protocol.target_n, self.ns.grid.length())?;
        let mut ns = self.ns;
        ns.grid = grid;
        Ok(ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_overrides_parse() {
        let text = "
            # a comment
            [physics]
            nu = 2e-3      ; trailing comment
            resolution = 16

            [run]
            seed = 9
        ";
        let mut raw = RawConfig::parse(text).unwrap();
        assert_eq!(raw.get("physics.nu"), Some("2e-3"));
        assert_eq!(raw.get_u64("run.seed", 0).unwrap(), 9);

        raw.set_pair("physics.nu=3e-3").unwrap();
        assert_eq!(raw.get_f64("physics.nu", 0.0).unwrap(), 3e-3);
        assert!(raw.set_pair("no-equals-sign").is_err());
    }

    #[test]
    fn defaults_assemble_into_a_valid_run() {
        let cfg = RunConfig::from_raw(&RawConfig::new()).unwrap();
        assert_eq!(cfg.protocol.target_n, 32);
        assert_eq!(cfg.protocol.source_n, 32);
        assert_eq!(cfg.ns.nu, 1e-3);
        assert_eq!(cfg.diffusion.sigma, 25.0);
        assert_eq!(cfg.sampler.n_steps, 10);
        assert!(cfg.network.with_sparse);
        assert_eq!(cfg.setting, RolloutSetting::II);
        assert_eq!(cfg.target_ns().unwrap().grid.n(), 32);
    }

    #[test]
    fn typed_values_flow_through() {
        let text = "
            [physics]
            resolution = 16
            source_resolution = 32
            T_phy = 0.5
            [network]
            profile = tiny
            modes = 3
            [conditioning]
            sparse_n = 4
            with_sparse = false
            upscale_method = conv
            [rollout]
            setting = IV
            closure_kind = h
        ";
        let cfg = RunConfig::from_raw(&RawConfig::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.protocol.source_n, 32);
        assert_eq!(cfg.network.modes, 3);
        assert!(!cfg.network.with_sparse);
        assert_eq!(cfg.upscale_method, UpscaleMethod::Conv);
        assert_eq!(cfg.setting, RolloutSetting::IV);
        assert_eq!(cfg.rollout.sampler.n_steps, 1000);
        assert_eq!(cfg.rollout.kind, ClosureKind::H);
    }

    #[test]
    fn bad_values_are_rejected_with_the_key_name() {
        let mut raw = RawConfig::new();
        raw.set("physics.nu", "-1.0");
        let err = RunConfig::from_raw(&raw).unwrap_err();
        assert!(err.to_string().contains("viscosity"), "{err}");

        let mut raw = RawConfig::new();
        raw.set("physics.dt", "fast");
        let err = RunConfig::from_raw(&raw).unwrap_err();
        assert!(err.to_string().contains("physics.dt"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut raw = RawConfig::new();
        raw.set("physics.viscosity", "1e-3");
        let err = RunConfig::from_raw(&raw).unwrap_err();
        assert!(err.to_string().contains("physics.viscosity"), "{err}");
    }

    #[test]
    fn mismatched_lattices_are_rejected() {
        let mut raw = RawConfig::new();
        raw.set("conditioning.sparse_n", "5");
        assert!(RunConfig::from_raw(&raw).is_err());

        let mut raw = RawConfig::new();
        raw.set("physics.source_resolution", "48");
        assert!(RunConfig::from_raw(&raw).is_err());
    }

    #[test]
    fn settings_map_to_their_schedules() {
        assert!(RolloutSetting::I.sampler().is_none());
        let ii = RolloutSetting::II.sampler().unwrap();
        assert_eq!((ii.n_steps, ii.kind), (10, ScheduleKind::Adaptive));
        let iii = RolloutSetting::III.sampler().unwrap();
        assert_eq!((iii.n_steps, iii.kind), (10, ScheduleKind::Uniform));
        let iv = RolloutSetting::IV.sampler().unwrap();
        assert_eq!((iv.n_steps, iv.start), (1000, 1.0));
        assert_eq!("iii".parse::<RolloutSetting>().unwrap(), RolloutSetting::III);
        assert!("V".parse::<RolloutSetting>().is_err());
    }
}
