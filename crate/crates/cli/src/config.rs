//! Run-configuration files.
//!
//! A run file is TOML with a top-level `experiment` and `engine`, a
//! `[loop]` template, `[rates]`, `[integrator]` and `[sampling]` blocks,
//! and exactly one block named after the experiment carrying its grids.
//! Unknown keys are rejected rather than ignored, and template keys that
//! an experiment would silently override are rejected too, so a file says
//! exactly what runs.
//!
//! `plan` lowers a parsed file into core types, running every core
//! validator on the way; anything it returns as an error is a config
//! problem, not a runtime one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use epsim_core::protocols::{
    Engine, InterferometryOptions, Shots, Target, TomographyOptions, TransferMapOptions,
};
use epsim_core::{DissipationRates, Direction, IntegratorConfig, ParameterLoop};

use crate::CliError;

pub const DEFAULT_N_PAUSES: usize = 60;
pub const DEFAULT_N_PHASE_POINTS: usize = 21;
pub const DEFAULT_DT_US: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spectrum,
    Tomography,
    Phase,
    TransferMap,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Tomography => "tomography",
            Experiment::Phase => "phase",
            Experiment::TransferMap => "transfer_map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineSpec {
    Nh,
    Lindblad,
}

impl EngineSpec {
    pub fn to_core(self) -> Engine {
        match self {
            EngineSpec::Nh => Engine::Nh,
            EngineSpec::Lindblad => Engine::Lindblad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionSpec {
    Ccw,
    Cw,
}

impl DirectionSpec {
    pub fn to_core(self) -> Direction {
        match self {
            DirectionSpec::Ccw => Direction::Ccw,
            DirectionSpec::Cw => Direction::Cw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    PsiPlus,
    PsiMinus,
}

impl TargetSpec {
    pub fn to_core(self) -> Target {
        match self {
            TargetSpec::PsiPlus => Target::PsiPlus,
            TargetSpec::PsiMinus => Target::PsiMinus,
        }
    }
}

/// Loop template. `j_min`, `period_us` and `direction` are only meaningful
/// for experiments that do not scan them; the per-experiment rules in
/// `plan` reject them where a grid drives the value instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopBlock {
    pub j_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_min: Option<f64>,
    /// Magnitude of the detuning excursion, rad/us; `direction` sets the
    /// sign.
    pub delta_amp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionSpec>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesBlock {
    pub gamma_e: f64,
    pub gamma_f: f64,
    pub gamma_h: f64,
    pub gamma_2e: f64,
    pub gamma_2f: f64,
    pub gamma_2h: f64,
}

impl RatesBlock {
    pub fn to_core(self) -> DissipationRates {
        DissipationRates {
            gamma_e: self.gamma_e,
            gamma_f: self.gamma_f,
            gamma_h: self.gamma_h,
            gamma_2e: self.gamma_2e,
            gamma_2f: self.gamma_2f,
            gamma_2h: self.gamma_2h,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    pub dt_us: f64,
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        IntegratorBlock { dt_us: DEFAULT_DT_US }
    }
}

/// `shots = "exact"` or a positive shot count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotSpec {
    Count(u64),
    Word(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingBlock {
    pub shots: ShotSpec,
    pub seed: u64,
}

impl Default for SamplingBlock {
    fn default() -> Self {
        SamplingBlock {
            shots: ShotSpec::Word("exact".into()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyBlock {
    pub n_pauses: usize,
}

impl Default for TomographyBlock {
    fn default() -> Self {
        TomographyBlock { n_pauses: DEFAULT_N_PAUSES }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBlock {
    pub j_min_grid: Vec<f64>,
    #[serde(default = "both_targets")]
    pub targets: Vec<TargetSpec>,
    #[serde(default = "both_directions")]
    pub directions: Vec<DirectionSpec>,
    #[serde(default = "default_n_phase_points")]
    pub n_phase_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferMapBlock {
    pub j_min_grid: Vec<f64>,
    pub period_grid_us: Vec<f64>,
    #[serde(default = "both_directions")]
    pub directions: Vec<DirectionSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub j_min: f64,
    pub j_max: f64,
    pub n_j: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub n_delta: usize,
}

fn both_targets() -> Vec<TargetSpec> {
    vec![TargetSpec::PsiPlus, TargetSpec::PsiMinus]
}

fn both_directions() -> Vec<DirectionSpec> {
    vec![DirectionSpec::Ccw, DirectionSpec::Cw]
}

fn default_n_phase_points() -> usize {
    DEFAULT_N_PHASE_POINTS
}

fn default_engine() -> EngineSpec {
    EngineSpec::Nh
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_engine")]
    pub engine: EngineSpec,
    #[serde(rename = "loop", skip_serializing_if = "Option::is_none")]
    pub loop_: Option<LoopBlock>,
    #[serde(default)]
    pub rates: RatesBlock,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub sampling: SamplingBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_map: Option<TransferMapBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumBlock>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Phase-scan work order: the loop template plus the grids that rebuild
/// it per task.
#[derive(Debug, Clone)]
pub struct PhasePlan {
    pub j_max: f64,
    pub delta_amp: f64,
    pub period: f64,
    pub gamma: f64,
    pub j_min_grid: Vec<f64>,
    pub targets: Vec<Target>,
    pub directions: Vec<Direction>,
    /// Template options; `target` is replaced per task and a sampled seed
    /// is re-derived per task.
    pub opts: InterferometryOptions,
}

/// A validated run lowered into core types, ready to execute.
#[derive(Debug, Clone)]
pub enum Plan {
    Spectrum {
        j_grid: Vec<f64>,
        delta_grid: Vec<f64>,
        gamma: f64,
    },
    Tomography {
        lp: ParameterLoop,
        direction: Direction,
        opts: TomographyOptions,
    },
    Phase(PhasePlan),
    Transfer {
        j_min_grid: Vec<f64>,
        period_grid: Vec<f64>,
        directions: Vec<Direction>,
        opts: TransferMapOptions,
    },
}

/// Effective run metadata recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Effective {
    pub engine: &'static str,
    pub seed: u64,
    pub shots: String,
    pub dt_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pauses: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_phase_points: Option<usize>,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

fn require_finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        cfg_err(format!("{name} must be finite, got {v}"))
    }
}

fn require_unique(name: &str, grid: &[f64]) -> Result<(), CliError> {
    if grid.is_empty() {
        return cfg_err(format!("{name} must not be empty"));
    }
    for v in grid {
        require_finite(name, *v)?;
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return cfg_err(format!("{name} contains duplicate values"));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Validate a parsed config and lower it. `seed_override` replaces the
/// sampling seed (the `--seed` flag).
pub fn plan(cfg: &RunConfig, seed_override: Option<u64>) -> Result<(Plan, Effective), CliError> {
    let exp = cfg.experiment;

    // exactly the matching experiment block may be present
    let blocks: [(&str, bool, bool); 4] = [
        ("tomography", cfg.tomography.is_some(), exp == Experiment::Tomography),
        ("phase", cfg.phase.is_some(), exp == Experiment::Phase),
        ("transfer_map", cfg.transfer_map.is_some(), exp == Experiment::TransferMap),
        ("spectrum", cfg.spectrum.is_some(), exp == Experiment::Spectrum),
    ];
    for (name, present, wanted) in blocks {
        if present && !wanted {
            return cfg_err(format!(
                "config declares [{name}] but experiment is \"{}\"",
                exp.as_str()
            ));
        }
    }

    let rates = cfg.rates.to_core();
    rates.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let integrator = IntegratorConfig { dt: cfg.integrator.dt_us };
    integrator
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let seed = seed_override.unwrap_or(cfg.sampling.seed);
    let shots = match &cfg.sampling.shots {
        ShotSpec::Word(w) if w == "exact" => Shots::Exact,
        ShotSpec::Word(w) => {
            return cfg_err(format!("sampling.shots must be \"exact\" or a count, got {w:?}"))
        }
        ShotSpec::Count(0) => return cfg_err("sampling.shots must be positive"),
        ShotSpec::Count(n) => Shots::Sampled { shots: *n, seed },
    };
    if matches!(shots, Shots::Sampled { .. })
        && matches!(exp, Experiment::Spectrum | Experiment::TransferMap)
    {
        return cfg_err(format!(
            "sampled read-out applies to tomography and phase runs only, not {}",
            exp.as_str()
        ));
    }
    let shots_label = match shots {
        Shots::Exact => "exact".to_string(),
        Shots::Sampled { shots, .. } => shots.to_string(),
    };

    let lose_loop = |key: &str, driver: &str| -> CliError {
        CliError::Config(format!(
            "loop.{key} is driven by {driver} for experiment \"{}\"; remove it",
            exp.as_str()
        ))
    };

    let effective = |n_pauses, n_phase_points| Effective {
        engine: cfg.engine.to_core().as_str(),
        seed,
        shots: shots_label.clone(),
        dt_us: cfg.integrator.dt_us,
        n_pauses,
        n_phase_points,
    };

    match exp {
        Experiment::Spectrum => {
            if cfg.loop_.is_some() {
                return cfg_err("spectrum takes its grid from [spectrum]; remove the [loop] block");
            }
            let Some(sp) = cfg.spectrum else {
                return cfg_err("missing [spectrum] block");
            };
            for (name, v) in [
                ("spectrum.j_min", sp.j_min),
                ("spectrum.j_max", sp.j_max),
                ("spectrum.delta_min", sp.delta_min),
                ("spectrum.delta_max", sp.delta_max),
            ] {
                require_finite(name, v)?;
            }
            if sp.n_j == 0 || sp.n_delta == 0 {
                return cfg_err("spectrum grid counts must be positive");
            }
            if sp.n_j > 1 && sp.j_min >= sp.j_max {
                return cfg_err("spectrum.j_min must be below j_max for a multi-point grid");
            }
            if sp.n_delta > 1 && sp.delta_min >= sp.delta_max {
                return cfg_err("spectrum.delta_min must be below delta_max for a multi-point grid");
            }
            Ok((
                Plan::Spectrum {
                    j_grid: linspace(sp.j_min, sp.j_max, sp.n_j),
                    delta_grid: linspace(sp.delta_min, sp.delta_max, sp.n_delta),
                    gamma: cfg.rates.gamma_e,
                },
                effective(None, None),
            ))
        }
        Experiment::Tomography => {
            let Some(lb) = &cfg.loop_ else {
                return cfg_err("missing [loop] block");
            };
            let block = cfg.tomography.clone().unwrap_or_default();
            if block.n_pauses < 2 {
                return cfg_err("tomography.n_pauses must be at least 2");
            }
            let Some(j_min) = lb.j_min else {
                return cfg_err("loop.j_min is required for tomography");
            };
            let Some(period) = lb.period_us else {
                return cfg_err("loop.period_us is required for tomography");
            };
            if lb.delta_amp < 0.0 {
                return cfg_err("loop.delta_amp is a magnitude; set direction = \"cw\" instead");
            }
            let direction = lb.direction.unwrap_or(DirectionSpec::Ccw).to_core();
            let lp = ParameterLoop {
                j_max: lb.j_max,
                j_min,
                delta_amp: direction.sign() * lb.delta_amp,
                period,
                gamma: cfg.rates.gamma_e,
            };
            lp.validate().map_err(|e| CliError::Config(e.to_string()))?;
            Ok((
                Plan::Tomography {
                    lp,
                    direction,
                    opts: TomographyOptions {
                        n_pauses: block.n_pauses,
                        engine: cfg.engine.to_core(),
                        rates,
                        integrator,
                        shots,
                    },
                },
                effective(Some(block.n_pauses), None),
            ))
        }
        Experiment::Phase => {
            let Some(lb) = &cfg.loop_ else {
                return cfg_err("missing [loop] block");
            };
            let Some(block) = &cfg.phase else {
                return cfg_err("missing [phase] block");
            };
            if lb.j_min.is_some() {
                return Err(lose_loop("j_min", "[phase].j_min_grid"));
            }
            if lb.direction.is_some() {
                return Err(lose_loop("direction", "[phase].directions"));
            }
            let Some(period) = lb.period_us else {
                return cfg_err("loop.period_us is required for phase");
            };
            if lb.delta_amp < 0.0 {
                return cfg_err("loop.delta_amp is a magnitude; directions come from [phase].directions");
            }
            require_unique("phase.j_min_grid", &block.j_min_grid)?;
            if block.targets.is_empty() {
                return cfg_err("phase.targets must not be empty");
            }
            if block.directions.is_empty() {
                return cfg_err("phase.directions must not be empty");
            }
            for (name, len, uniq) in [
                ("phase.targets", block.targets.len(), dedup_len(&block.targets)),
                ("phase.directions", block.directions.len(), dedup_len(&block.directions)),
            ] {
                if len != uniq {
                    return cfg_err(format!("{name} contains duplicate entries"));
                }
            }
            if block.n_phase_points < 5 {
                return cfg_err("phase.n_phase_points must be at least 5");
            }
            // validate the template against every grid value up front so a
            // bad grid fails before any work runs
            for &jm in &block.j_min_grid {
                let lp = ParameterLoop {
                    j_max: lb.j_max,
                    j_min: jm,
                    delta_amp: lb.delta_amp,
                    period,
                    gamma: cfg.rates.gamma_e,
                };
                lp.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            Ok((
                Plan::Phase(PhasePlan {
                    j_max: lb.j_max,
                    delta_amp: lb.delta_amp,
                    period,
                    gamma: cfg.rates.gamma_e,
                    j_min_grid: block.j_min_grid.clone(),
                    targets: block.targets.iter().map(|t| t.to_core()).collect(),
                    directions: block.directions.iter().map(|d| d.to_core()).collect(),
                    opts: InterferometryOptions {
                        engine: cfg.engine.to_core(),
                        rates,
                        integrator,
                        target: Target::PsiPlus,
                        n_phases: block.n_phase_points,
                        shots,
                    },
                }),
                effective(None, Some(block.n_phase_points)),
            ))
        }
        Experiment::TransferMap => {
            let Some(lb) = &cfg.loop_ else {
                return cfg_err("missing [loop] block");
            };
            let Some(block) = &cfg.transfer_map else {
                return cfg_err("missing [transfer_map] block");
            };
            if lb.j_min.is_some() {
                return Err(lose_loop("j_min", "[transfer_map].j_min_grid"));
            }
            if lb.period_us.is_some() {
                return Err(lose_loop("period_us", "[transfer_map].period_grid_us"));
            }
            if lb.direction.is_some() {
                return Err(lose_loop("direction", "[transfer_map].directions"));
            }
            require_unique("transfer_map.j_min_grid", &block.j_min_grid)?;
            require_unique("transfer_map.period_grid_us", &block.period_grid_us)?;
            if block.directions.is_empty() {
                return cfg_err("transfer_map.directions must not be empty");
            }
            if block.directions.len() != dedup_len(&block.directions) {
                return cfg_err("transfer_map.directions contains duplicate entries");
            }
            if lb.delta_amp <= 0.0 {
                return cfg_err("loop.delta_amp must be positive for a transfer map");
            }
            for &jm in &block.j_min_grid {
                if jm > lb.j_max {
                    return cfg_err(format!(
                        "transfer_map.j_min_grid value {jm} exceeds loop.j_max {}",
                        lb.j_max
                    ));
                }
            }
            for &t in &block.period_grid_us {
                if t <= 0.0 {
                    return cfg_err(format!("transfer_map.period_grid_us value {t} must be positive"));
                }
            }
            Ok((
                Plan::Transfer {
                    j_min_grid: block.j_min_grid.clone(),
                    period_grid: block.period_grid_us.clone(),
                    directions: block.directions.iter().map(|d| d.to_core()).collect(),
                    opts: TransferMapOptions {
                        j_max: lb.j_max,
                        delta_amp: lb.delta_amp,
                        gamma: cfg.rates.gamma_e,
                        engine: cfg.engine.to_core(),
                        rates,
                        integrator,
                    },
                },
                effective(None, None),
            ))
        }
    }
}

fn dedup_len<T: PartialEq + Copy>(xs: &[T]) -> usize {
    let mut seen: Vec<T> = Vec::new();
    for &x in xs {
        if !seen.contains(&x) {
            seen.push(x);
        }
    }
    seen.len()
}
