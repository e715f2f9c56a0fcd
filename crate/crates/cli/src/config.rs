//! Scenario configuration. Every key carries its unit; unknown keys are
//! rejected. Missing sections fall back to the defaults below.

use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use dressed_ion::DressedState;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Master seed for Monte Carlo ensembles; `--seed` overrides it.
    pub seed: u64,
    /// Output file; `--out` overrides it, stdout when neither is given.
    pub out: Option<PathBuf>,
    pub constants: ConstantsConfig,
    pub field: FieldConfig,
    pub spectrum: SpectrumConfig,
    pub rabi: RabiConfig,
    pub stirap: StirapConfig,
    pub lifetime: LifetimeConfig,
    pub addressing: AddressingConfig,
    pub tomo: TomoConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            constants: ConstantsConfig::default(),
            field: FieldConfig::default(),
            spectrum: SpectrumConfig::default(),
            rabi: RabiConfig::default(),
            stirap: StirapConfig::default(),
            lifetime: LifetimeConfig::default(),
            addressing: AddressingConfig::default(),
            tomo: TomoConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsConfig {
    pub g_j: f64,
    pub ion_mass_amu: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            g_j: dressed_ion::atomphys::DEFAULT_G_J,
            ion_mass_amu: dressed_ion::atomphys::DEFAULT_ION_MASS_AMU,
        }
    }
}

/// Bias field, given by exactly one of its equivalent descriptions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    BGauss(f64),
    /// ω₋ − ω₊ of the two RF lines.
    SplittingKhz(f64),
    /// |0'⟩↔|+1⟩ line.
    PlusLineMhz(f64),
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::SplittingKhz(39.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum TargetName {
    #[serde(rename = "D")]
    Dark,
    #[serde(rename = "u")]
    Up,
    #[serde(rename = "d")]
    Down,
}

impl From<TargetName> for DressedState {
    fn from(t: TargetName) -> Self {
        match t {
            TargetName::Dark => DressedState::Dark,
            TargetName::Up => DressedState::Up,
            TargetName::Down => DressedState::Down,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Ω_μw/2π of each dressing field; 0 leaves the dressing off.
    pub mw_rabi_khz: f64,
    /// Ω_rf/2π.
    pub rf_rabi_khz: f64,
    pub duration_us: f64,
    /// Scan range as ω_rf − ω₊.
    pub detuning_start_khz: f64,
    pub detuning_stop_khz: f64,
    pub points: usize,
    /// Adds the sum-of-six-lines model column.
    pub include_model: bool,
    pub peak_threshold: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            mw_rabi_khz: 23.0 * SQRT_2,
            rf_rabi_khz: 0.63 * SQRT_2,
            duration_us: 800.0,
            detuning_start_khz: -30.0,
            detuning_stop_khz: 70.0,
            points: 401,
            include_model: true,
            peak_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RabiConfig {
    pub mw_rabi_khz: f64,
    pub rf_rabi_khz: f64,
    pub targets: Vec<TargetName>,
    pub duration_start_us: f64,
    pub duration_stop_us: f64,
    /// 0 gives an empty table.
    pub points: usize,
}

impl Default for RabiConfig {
    fn default() -> Self {
        Self {
            mw_rabi_khz: 31.0,
            rf_rabi_khz: 1.8 * SQRT_2,
            targets: vec![TargetName::Dark, TargetName::Up, TargetName::Down],
            duration_start_us: 0.0,
            duration_stop_us: 600.0,
            points: 301,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RampOrderName {
    MinusFirst,
    PlusFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct StirapConfig {
    pub peak_rabi_khz: f64,
    pub sigma_us: f64,
    pub separation_us: f64,
    pub truncation_sigmas: f64,
    pub order: RampOrderName,
    /// Multiplies σ and the separation; 0.01 gives the diabatic case.
    pub time_scale: f64,
    pub hold_us: f64,
    pub sample_us: f64,
    pub pump_infidelity: f64,
}

impl Default for StirapConfig {
    fn default() -> Self {
        Self {
            peak_rabi_khz: 30.0,
            sigma_us: 100.0,
            separation_us: 120.0,
            truncation_sigmas: 3.0,
            order: RampOrderName::MinusFirst,
            time_scale: 1.0,
            hold_us: 100.0,
            sample_us: 5.0,
            pump_infidelity: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeMode {
    /// Survival curves and fitted lifetimes per dressed state.
    Survival,
    /// Depletion of |D⟩ by a sinusoidal field modulation versus its frequency.
    ResonanceSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    Population,
    QubitFidelity,
}

/// One noise model. Amplitudes carry the unit of the enclosing key.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModelConfig {
    Sinusoid {
        amplitude: f64,
        frequency_khz: f64,
        /// Uniformly random per trajectory when absent.
        phase_rad: Option<f64>,
    },
    OrnsteinUhlenbeck {
        stddev: f64,
        correlation_time_us: f64,
    },
    Telegraph {
        amplitude: f64,
        switching_rate_per_s: f64,
    },
}

/// Noise on λ₀ (amplitude in kHz) or on the dressing amplitude (fraction).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    ZeemanKhz(NoiseModelConfig),
    DressingFraction(NoiseModelConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceSweepConfig {
    /// Modulation frequency range in units of Ω_μw/√2.
    pub start_ratio: f64,
    pub stop_ratio: f64,
    pub points: usize,
    pub amplitude_khz: f64,
    pub time_ms: f64,
    pub noise_dt_us: f64,
}

impl Default for ResonanceSweepConfig {
    fn default() -> Self {
        Self {
            start_ratio: 0.5,
            stop_ratio: 1.5,
            points: 21,
            amplitude_khz: 0.32,
            time_ms: 1.0,
            noise_dt_us: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct LifetimeConfig {
    pub mode: LifetimeMode,
    pub mw_rabi_khz: f64,
    pub states: Vec<TargetName>,
    pub observable: ObservableName,
    pub time_start_ms: f64,
    pub time_stop_ms: f64,
    pub points: usize,
    pub trajectories: usize,
    pub noise_dt_us: f64,
    pub noise: Vec<NoiseConfig>,
    pub sweep: ResonanceSweepConfig,
}

impl Default for LifetimeConfig {
    fn default() -> Self {
        Self {
            mode: LifetimeMode::Survival,
            mw_rabi_khz: 23.0 * SQRT_2,
            states: vec![TargetName::Dark, TargetName::Up, TargetName::Down],
            observable: ObservableName::QubitFidelity,
            time_start_ms: 2.0,
            time_stop_ms: 20.0,
            points: 10,
            trajectories: 200,
            noise_dt_us: 10.0,
            noise: vec![NoiseConfig::DressingFraction(NoiseModelConfig::OrnsteinUhlenbeck {
                stddev: 3e-3,
                correlation_time_us: 1000.0,
            })],
            sweep: ResonanceSweepConfig::default(),
        }
    }
}

/// Centre field of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AddressingField {
    BGauss(f64),
    /// Solve the centre field so ions 0 and 1 are split by this much.
    TunedSplittingKhz(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AddressingConfig {
    pub gradient_t_per_m: f64,
    pub secular_khz: f64,
    pub n_ions: usize,
    pub field: AddressingField,
    pub pi_time_us: f64,
    /// Scan range relative to the mean clock shift of the chain.
    pub offset_start_khz: f64,
    pub offset_stop_khz: f64,
    pub points: usize,
}

impl Default for AddressingConfig {
    fn default() -> Self {
        Self {
            gradient_t_per_m: 23.6,
            secular_khz: 268.0,
            n_ions: 2,
            field: AddressingField::TunedSplittingKhz(12.8),
            pi_time_us: 550.0,
            offset_start_khz: -15.0,
            offset_stop_khz: 15.0,
            points: 301,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TomoTarget {
    #[serde(rename = "D")]
    Dark,
    #[serde(rename = "u")]
    Up,
    #[serde(rename = "d")]
    Down,
    /// (|u⟩ + |d⟩)/√2 up to the phase set by the pulses.
    UdSuperposition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TomoConfig {
    pub mw_rabi_khz: f64,
    pub rf_rabi_khz: f64,
    pub target: TomoTarget,
}

impl Default for TomoConfig {
    fn default() -> Self {
        Self {
            mw_rabi_khz: 23.0 * SQRT_2,
            rf_rabi_khz: 0.2 * SQRT_2,
            target: TomoTarget::Dark,
        }
    }
}

pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ScenarioConfig)).expect("schema serializes")
}

/// Evenly spaced grid; one point gives `start`, zero points nothing.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
    }
}
