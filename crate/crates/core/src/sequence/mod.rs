//! Pulse sequences: protocol description, legality rules and the executor
//! that runs them through the propagator.

mod builders;
mod experiments;
mod tomography;

pub use builders::*;
pub use experiments::*;
pub use tomography::*;

use serde::{Deserialize, Serialize};

use crate::atomphys::{
    chi, solve_field, transition_frequencies, Branch, MagneticEnvironment, PhysicalConstants, TransitionFrequencies,
};
use crate::detection::FluorescenceModel;
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{
    resonance_table, Basis, Channel, Drive, Envelope, HamiltonianGenerator, PiecewiseSignal, ResonanceTable,
    SecondOrderZeeman, MINUS, PLUS, ZERO, ZERO_PRIME,
};
use crate::noise::{ensemble_map, sample_path_with, to_signal, NoiseModel, NoiseProcess, NoiseTarget};
use crate::propagator::{evolve_from, evolve_trajectory, f1_population, populations, PropagationControl, StateVector};
use crate::scalar::Real;

pub const PROTOCOL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StirapDirection {
    Prepare,
    Release,
}

/// Which dressing field is switched on first when preparing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampOrder {
    /// Ω₋ leads: |+1⟩ is carried into |D⟩, and |D⟩ is released into |−1⟩.
    #[default]
    MinusFirst,
    /// Ω₊ leads: |−1⟩ is carried into |D⟩, and |D⟩ is released into |+1⟩.
    PlusFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRampSpec<T> {
    #[serde(rename = "peak_rabi_rad_s")]
    pub peak_rabi: T,
    #[serde(rename = "sigma_s")]
    pub sigma: T,
    /// Delay between the centres of the two ramps.
    #[serde(rename = "pulse_separation_s")]
    pub pulse_separation: T,
    /// Ramp tails are cut this many σ before (or after) the centre.
    #[serde(rename = "truncation_sigmas")]
    pub truncation: T,
    #[serde(default)]
    pub order: RampOrder,
}

impl<T: Real> Default for GaussianRampSpec<T> {
    fn default() -> Self {
        Self {
            peak_rabi: T::TAU() * T::lit(30e3),
            sigma: T::lit(100e-6),
            pulse_separation: T::lit(120e-6),
            truncation: T::lit(3.0),
            order: RampOrder::MinusFirst,
        }
    }
}

impl<T: Real> GaussianRampSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero()) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(self.truncation >= T::two()) {
            return Err(invalid("truncation", "must be at least 2σ"));
        }
        if !(self.pulse_separation >= T::zero()) {
            return Err(invalid("pulse_separation", "must be non-negative"));
        }
        if !(self.peak_rabi >= T::zero() && self.peak_rabi.is_finite()) {
            return Err(invalid("peak_rabi", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Same shape with every time scaled by `factor`.
    pub fn time_scaled(&self, factor: T) -> Self {
        Self {
            sigma: self.sigma * factor,
            pulse_separation: self.pulse_separation * factor,
            ..*self
        }
    }

    pub fn duration(&self) -> T {
        self.truncation * self.sigma + self.pulse_separation
    }

    /// Ω_peak·σ; transfer is adiabatic when this is large.
    pub fn adiabaticity(&self) -> T {
        self.peak_rabi * self.sigma
    }

    pub fn is_adiabatic(&self) -> bool {
        self.adiabaticity() >= T::lit(10.0)
    }

    /// (leading, trailing) channels for preparation.
    fn channels(&self) -> (Channel, Channel) {
        match self.order {
            RampOrder::MinusFirst => (Channel::MwMinus, Channel::MwPlus),
            RampOrder::PlusFirst => (Channel::MwPlus, Channel::MwMinus),
        }
    }

    /// The two dressing drives for a ramp starting at `t0`.
    pub fn drives(&self, direction: StirapDirection, t0: T) -> [Drive<T>; 2] {
        let (lead, trail) = self.channels();
        let sigma = self.sigma;
        let edge = self.truncation * sigma;
        match direction {
            StirapDirection::Prepare => [
                Drive::new(lead, self.peak_rabi).with_envelope(Envelope::GaussianRise { center: t0 + edge, sigma }),
                Drive::new(trail, self.peak_rabi).with_envelope(Envelope::GaussianRise {
                    center: t0 + edge + self.pulse_separation,
                    sigma,
                }),
            ],
            StirapDirection::Release => [
                Drive::new(lead, self.peak_rabi).with_envelope(Envelope::GaussianFall { center: t0, sigma }),
                Drive::new(trail, self.peak_rabi).with_envelope(Envelope::GaussianFall {
                    center: t0 + self.pulse_separation,
                    sigma,
                }),
            ],
        }
    }
}

/// Gaussian switching edge applied to both dressing fields together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressingRamp<T> {
    #[serde(rename = "sigma_s")]
    pub sigma: T,
    #[serde(rename = "truncation_sigmas")]
    pub truncation: T,
}

impl<T: Real> DressingRamp<T> {
    pub fn duration(&self) -> T {
        self.sigma * self.truncation
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeemanLine {
    /// |0⟩↔|+1⟩
    Plus,
    /// |0⟩↔|−1⟩
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum SequenceStep<T> {
    /// Optical pumping into |0⟩, leaving `infidelity` spread evenly over F = 1.
    PreparePump { infidelity: T },
    /// π-pulse on |0⟩↔|0'⟩ of duration π/Ω.
    ClockPi {
        #[serde(rename = "rabi_rad_s")]
        rabi: T,
        #[serde(rename = "detuning_rad_s")]
        detuning: T,
        #[serde(rename = "phase_rad")]
        phase: T,
    },
    /// π-pulse on |0⟩↔|±1⟩ of duration π/Ω.
    MicrowavePi {
        line: ZeemanLine,
        #[serde(rename = "rabi_rad_s")]
        rabi: T,
        #[serde(rename = "detuning_rad_s")]
        detuning: T,
        #[serde(rename = "phase_rad")]
        phase: T,
    },
    DressingOn {
        #[serde(rename = "omega_mw_rad_s")]
        omega_mw: T,
        ramp: Option<DressingRamp<T>>,
    },
    DressingOff {
        ramp: Option<DressingRamp<T>>,
    },
    RfPulse {
        #[serde(rename = "rabi_rad_s")]
        rabi: T,
        #[serde(rename = "detuning_plus_rad_s")]
        detuning_plus: T,
        #[serde(rename = "phase_rad")]
        phase: T,
        #[serde(rename = "duration_s")]
        duration: T,
    },
    StirapRamp {
        spec: GaussianRampSpec<T>,
        direction: StirapDirection,
    },
    Wait {
        #[serde(rename = "duration_s")]
        duration: T,
    },
    MapAndMeasure,
}

impl<T: Real> SequenceStep<T> {
    pub fn duration(&self) -> T {
        match *self {
            SequenceStep::ClockPi { rabi, .. } | SequenceStep::MicrowavePi { rabi, .. } => {
                if rabi > T::zero() {
                    T::PI() / rabi
                } else {
                    T::zero()
                }
            }
            SequenceStep::DressingOn { ramp, .. } | SequenceStep::DressingOff { ramp } => {
                ramp.map_or(T::zero(), |r| r.duration())
            }
            SequenceStep::RfPulse { duration, .. } | SequenceStep::Wait { duration } => duration,
            SequenceStep::StirapRamp { spec, .. } => spec.duration(),
            SequenceStep::PreparePump { .. } | SequenceStep::MapAndMeasure => T::zero(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SequenceStep::PreparePump { .. } => "prepare_pump",
            SequenceStep::ClockPi { .. } => "clock_pi",
            SequenceStep::MicrowavePi { .. } => "microwave_pi",
            SequenceStep::DressingOn { .. } => "dressing_on",
            SequenceStep::DressingOff { .. } => "dressing_off",
            SequenceStep::RfPulse { .. } => "rf_pulse",
            SequenceStep::StirapRamp { .. } => "stirap_ramp",
            SequenceStep::Wait { .. } => "wait",
            SequenceStep::MapAndMeasure => "map_and_measure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol<T> {
    pub schema_version: u32,
    pub name: String,
    /// Free-form statement of what the protocol is meant to achieve.
    pub target: String,
    pub steps: Vec<SequenceStep<T>>,
}

impl<T: Real> Protocol<T> {
    pub fn new(name: impl Into<String>, target: impl Into<String>, steps: Vec<SequenceStep<T>>) -> Self {
        Self {
            schema_version: PROTOCOL_SCHEMA_VERSION,
            name: name.into(),
            target: target.into(),
            steps,
        }
    }

    /// Appends the steps of `other`.
    pub fn then(mut self, other: &Protocol<T>) -> Self {
        self.steps.extend(other.steps.iter().copied());
        self.name = format!("{}+{}", self.name, other.name);
        self
    }

    pub fn with_step(mut self, step: SequenceStep<T>) -> Self {
        self.steps.push(step);
        self
    }

    pub fn duration(&self) -> T {
        self.steps.iter().map(|s| s.duration()).fold(T::zero(), |a, b| a + b)
    }

    /// Checks step parameters and the dressing-state rules for a protocol
    /// starting with dressing off. Returns the dressing level left on at the
    /// end (`None` when off).
    pub fn validate(&self) -> Result<Option<T>> {
        self.validate_from(None)
    }

    /// Same as `validate` for a fragment that starts with dressing at
    /// `initial` (e.g. a detection sequence).
    pub fn validate_from(&self, initial: Option<T>) -> Result<Option<T>> {
        if self.schema_version != PROTOCOL_SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        let mut dressing: Option<T> = initial;
        for (index, step) in self.steps.iter().enumerate() {
            let illegal = |reason: &str| Error::IllegalStep {
                index,
                reason: reason.to_string(),
            };
            let nonneg = |x: T| x >= T::zero() && x.is_finite();
            match *step {
                SequenceStep::PreparePump { infidelity } => {
                    if !(T::zero()..=T::one()).contains(&infidelity) {
                        return Err(illegal("pump infidelity must be a probability"));
                    }
                    if dressing.is_some() {
                        return Err(illegal("pumping while dressing is on"));
                    }
                }
                SequenceStep::ClockPi { rabi, .. } | SequenceStep::MicrowavePi { rabi, .. } => {
                    if !(rabi > T::zero() && rabi.is_finite()) {
                        return Err(illegal("π-pulse Rabi frequency must be positive"));
                    }
                    if dressing.is_some() {
                        return Err(illegal("bare microwave pulse while dressing is on"));
                    }
                }
                SequenceStep::DressingOn { omega_mw, ramp } => {
                    if dressing.is_some() {
                        return Err(illegal("dressing is already on"));
                    }
                    if !nonneg(omega_mw) {
                        return Err(illegal("dressing Rabi frequency must be finite and non-negative"));
                    }
                    check_ramp(ramp).map_err(|r| illegal(r))?;
                    dressing = Some(omega_mw);
                }
                SequenceStep::DressingOff { ramp } => {
                    if dressing.is_none() {
                        return Err(illegal("dressing is already off"));
                    }
                    check_ramp(ramp).map_err(|r| illegal(r))?;
                    dressing = None;
                }
                SequenceStep::RfPulse { rabi, duration, .. } => {
                    if dressing.is_none() {
                        return Err(illegal("RF pulse needs dressing on"));
                    }
                    if !nonneg(rabi) || !nonneg(duration) {
                        return Err(illegal("RF Rabi frequency and duration must be non-negative"));
                    }
                }
                SequenceStep::StirapRamp { spec, direction } => {
                    spec.validate().map_err(|e| illegal(&e.to_string()))?;
                    match direction {
                        StirapDirection::Prepare => {
                            if dressing.is_some() {
                                return Err(illegal("STIRAP preparation starts with dressing off"));
                            }
                            dressing = Some(spec.peak_rabi);
                        }
                        StirapDirection::Release => match dressing {
                            Some(w) if (w - spec.peak_rabi).abs() <= T::lit(1e-9) * w.abs() => dressing = None,
                            Some(_) => return Err(illegal("STIRAP release must start from its own peak dressing")),
                            None => return Err(illegal("STIRAP release needs dressing on")),
                        },
                    }
                }
                SequenceStep::Wait { duration } => {
                    if !nonneg(duration) {
                        return Err(illegal("wait time must be non-negative"));
                    }
                }
                SequenceStep::MapAndMeasure => {}
            }
        }
        Ok(dressing)
    }
}

fn check_ramp<T: Real>(ramp: Option<DressingRamp<T>>) -> std::result::Result<(), &'static str> {
    match ramp {
        Some(r) if !(r.sigma > T::zero()) || !(r.truncation >= T::two()) => {
            Err("ramp needs σ > 0 and truncation ≥ 2σ")
        }
        _ => Ok(()),
    }
}

/// Physical setting shared by all protocols of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentModel<T> {
    pub constants: PhysicalConstants<T>,
    pub field: MagneticEnvironment<T>,
    pub frequencies: TransitionFrequencies<T>,
    pub control: PropagationControl<T>,
    /// Rabi frequency of bare microwave π-pulses (clock and Zeeman lines).
    pub mw_pi_rabi: T,
    /// Default leftover F = 1 population after optical pumping.
    pub pump_infidelity: T,
}

impl<T: Real> ExperimentModel<T> {
    pub fn from_field(b: T, constants: PhysicalConstants<T>) -> Result<Self> {
        constants.validate()?;
        let field = MagneticEnvironment::uniform(b);
        field.validate()?;
        let frequencies = transition_frequencies(b, &constants)?;
        Ok(Self {
            constants,
            field,
            frequencies,
            control: PropagationControl::default(),
            // 14 μs π-time
            mw_pi_rabi: T::PI() / T::lit(14e-6),
            pump_infidelity: T::lit(1e-4),
        })
    }

    /// Field chosen so that the |0'⟩↔|+1⟩ line sits at `omega_plus`.
    pub fn from_plus_line(omega_plus: T, constants: PhysicalConstants<T>) -> Result<Self> {
        let b = solve_field(omega_plus, Branch::Plus, &constants)?;
        Self::from_field(b, constants)
    }

    /// Field chosen so that ω_minus − ω_plus equals `splitting`.
    pub fn from_field_splitting(splitting: T, constants: PhysicalConstants<T>) -> Result<Self> {
        if !(splitting > T::zero()) {
            return Err(invalid("splitting", "must be positive"));
        }
        constants.validate()?;
        // ω₀(√(1+χ²) − 1) = s  ⇒  χ² = x(2 + x), x = s/ω₀
        let x = splitting / constants.omega0;
        let chi = (x * (T::two() + x)).sqrt();
        Self::from_field(chi / constants.chi_per_tesla(), constants)
    }

    pub fn with_pump_infidelity(mut self, infidelity: T) -> Self {
        self.pump_infidelity = infidelity;
        self
    }

    pub fn with_mw_pi_rabi(mut self, rabi: T) -> Self {
        self.mw_pi_rabi = rabi;
        self
    }

    pub fn with_control(mut self, control: PropagationControl<T>) -> Self {
        self.control = control;
        self
    }

    pub fn field_splitting(&self) -> T {
        self.frequencies.field_splitting()
    }

    pub fn resonance_table(&self, omega_mw: T) -> Result<ResonanceTable<T>> {
        resonance_table(omega_mw, &self.frequencies)
    }

    pub fn second_order(&self) -> Result<SecondOrderZeeman<T>> {
        Ok(SecondOrderZeeman {
            chi: chi(self.field.b_offset, &self.constants)?,
            omega0: self.constants.omega0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions<T> {
    pub noise: Vec<NoiseProcess<T>>,
    pub noise_dt: T,
    /// Monte Carlo trajectories; only used when `noise` is not empty.
    pub trajectories: usize,
    pub seed: u64,
    pub fluorescence: Option<FluorescenceModel>,
    /// Adds the second-order Zeeman response of |0⟩, |0'⟩ to field noise.
    pub second_order_zeeman: bool,
}

impl<T: Real> Default for RunOptions<T> {
    fn default() -> Self {
        Self {
            noise: Vec::new(),
            noise_dt: T::lit(1e-6),
            trajectories: 1,
            seed: 0,
            fluorescence: None,
            second_order_zeeman: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement<T> {
    pub step: usize,
    pub time: T,
    pub f1_population: T,
    pub bright_probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome<T> {
    /// Final bare-basis populations averaged over mixture and trajectories.
    pub populations: [T; 4],
    pub f1_population: T,
    pub bright_probability: Option<f64>,
    pub measurements: Vec<Measurement<T>>,
    pub duration: T,
    /// Final pure state when the run involved a single pure trajectory.
    pub final_state: Option<StateVector<T>>,
}

#[derive(Clone, Default)]
struct NoiseSignals<T> {
    zeeman: Option<PiecewiseSignal<T>>,
    amplitude: Option<PiecewiseSignal<T>>,
}

/// Populations recorded while tracing a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample<T> {
    pub time: T,
    pub bare: [T; 4],
    pub dressed: [T; 4],
}

struct Executor<'a, T> {
    model: &'a ExperimentModel<T>,
    signals: NoiseSignals<T>,
    second_order: Option<SecondOrderZeeman<T>>,
    sample_every: Option<T>,
}

struct TrajectoryResult<T> {
    components: Vec<(T, StateVector<T>)>,
    measurements: Vec<(usize, T, T)>,
    trace: Vec<TraceSample<T>>,
}

impl<'a, T: Real> Executor<'a, T> {
    fn generator(&self, dressed: Option<T>, bare_dressing: T) -> HamiltonianGenerator<T> {
        let split = self.model.field_splitting();
        let mut g = match dressed {
            Some(w) => HamiltonianGenerator::dressed(w, split),
            None => HamiltonianGenerator::bare(split).with_dressing(bare_dressing),
        };
        g.zeeman = self.signals.zeeman.clone();
        g.dressing_noise = self.signals.amplitude.clone();
        if g.zeeman.is_some() {
            g.second_order = self.second_order;
        }
        g
    }

    fn evolve_all(
        &self,
        comps: &mut [(T, StateVector<T>)],
        gen: &HamiltonianGenerator<T>,
        t: T,
        duration: T,
        trace: &mut Vec<TraceSample<T>>,
    ) -> Result<()> {
        if duration <= T::zero() {
            return Ok(());
        }
        let basis = gen.frame.basis();
        let ctrl = &self.model.control;
        let Some(every) = self.sample_every else {
            for (_, psi) in comps.iter_mut() {
                let start = psi.to_basis(basis);
                *psi = evolve_from(&start, gen, t, duration, ctrl)?.to_basis(Basis::Bare);
            }
            return Ok(());
        };
        let ctrl = ctrl.with_sampling(every);
        let first = trace.len();
        for (j, (w, psi)) in comps.iter_mut().enumerate() {
            let start = psi.to_basis(basis);
            let traj = evolve_trajectory(&start, gen, t, duration, &ctrl)?;
            // skip the initial sample, already recorded by the previous step
            for (k, (time, state)) in traj.times.iter().zip(&traj.states).enumerate().skip(1) {
                let bare = populations(state, Basis::Bare);
                let dressed = populations(state, Basis::Dressed);
                if j == 0 {
                    trace.push(TraceSample {
                        time: *time,
                        bare: [T::zero(); 4],
                        dressed: [T::zero(); 4],
                    });
                }
                let s = &mut trace[first + k - 1];
                for i in 0..4 {
                    s.bare[i] += *w * bare[i];
                    s.dressed[i] += *w * dressed[i];
                }
            }
            *psi = traj.states.last().copied().unwrap_or(start).to_basis(Basis::Bare);
        }
        Ok(())
    }

    fn snapshot(comps: &[(T, StateVector<T>)], time: T) -> TraceSample<T> {
        let mut s = TraceSample {
            time,
            bare: [T::zero(); 4],
            dressed: [T::zero(); 4],
        };
        for (w, psi) in comps {
            let b = populations(psi, Basis::Bare);
            let d = populations(psi, Basis::Dressed);
            for i in 0..4 {
                s.bare[i] += *w * b[i];
                s.dressed[i] += *w * d[i];
            }
        }
        s
    }

    fn run(&self, protocol: &Protocol<T>) -> Result<TrajectoryResult<T>> {
        let mut comps = vec![(T::one(), StateVector::bare(ZERO))];
        let mut measurements = Vec::new();
        let mut trace = Vec::new();
        let mut t = T::zero();
        let mut dressing: Option<T> = None;
        if self.sample_every.is_some() {
            trace.push(Self::snapshot(&comps, t));
        }
        for (index, step) in protocol.steps.iter().enumerate() {
            let wrap = |e: Error| Error::StepFailed {
                index,
                source: Box::new(e),
            };
            let duration = step.duration();
            let tr = &mut trace;
            match *step {
                SequenceStep::PreparePump { infidelity } => {
                    comps = pump_mixture(infidelity);
                    if self.sample_every.is_some() {
                        tr.push(Self::snapshot(&comps, t));
                    }
                }
                SequenceStep::ClockPi { rabi, detuning, phase } => {
                    let gen = self
                        .generator(None, T::zero())
                        .with_drive(Drive::new(Channel::Clock, rabi).with_detuning(detuning).with_phase(phase));
                    self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                }
                SequenceStep::MicrowavePi {
                    line,
                    rabi,
                    detuning,
                    phase,
                } => {
                    let channel = match line {
                        ZeemanLine::Plus => Channel::MwPlus,
                        ZeemanLine::Minus => Channel::MwMinus,
                    };
                    let gen = self
                        .generator(None, T::zero())
                        .with_drive(Drive::new(channel, rabi).with_detuning(detuning).with_phase(phase));
                    self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                }
                SequenceStep::DressingOn { omega_mw, ramp } => {
                    if let Some(r) = ramp {
                        let env = Envelope::GaussianRise {
                            center: t + r.duration(),
                            sigma: r.sigma,
                        };
                        let gen = self
                            .generator(None, T::zero())
                            .with_drive(Drive::new(Channel::MwPlus, omega_mw).with_envelope(env))
                            .with_drive(Drive::new(Channel::MwMinus, omega_mw).with_envelope(env));
                        self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                    }
                    dressing = Some(omega_mw);
                }
                SequenceStep::DressingOff { ramp } => {
                    let w = dressing.ok_or_else(|| Error::IllegalStep {
                        index,
                        reason: "dressing is already off".into(),
                    })?;
                    if let Some(r) = ramp {
                        let env = Envelope::GaussianFall { center: t, sigma: r.sigma };
                        let gen = self
                            .generator(None, T::zero())
                            .with_drive(Drive::new(Channel::MwPlus, w).with_envelope(env))
                            .with_drive(Drive::new(Channel::MwMinus, w).with_envelope(env));
                        self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                    }
                    dressing = None;
                }
                SequenceStep::RfPulse {
                    rabi,
                    detuning_plus,
                    phase,
                    duration,
                } => {
                    let w = dressing.ok_or_else(|| Error::IllegalStep {
                        index,
                        reason: "RF pulse needs dressing on".into(),
                    })?;
                    let frame = if w > T::zero() { Some(w) } else { None };
                    let gen = self
                        .generator(frame, T::zero())
                        .with_drive(Drive::rf(rabi, detuning_plus).with_phase(phase));
                    self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                }
                SequenceStep::StirapRamp { spec, direction } => {
                    let mut gen = self.generator(None, T::zero());
                    for d in spec.drives(direction, t) {
                        gen = gen.with_drive(d);
                    }
                    self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                    dressing = match direction {
                        StirapDirection::Prepare => Some(spec.peak_rabi),
                        StirapDirection::Release => None,
                    };
                }
                SequenceStep::Wait { duration } => {
                    let gen = self.generator(None, dressing.unwrap_or(T::zero()));
                    self.evolve_all(&mut comps, &gen, t, duration, tr).map_err(wrap)?;
                }
                SequenceStep::MapAndMeasure => {
                    let f1 = comps.iter().map(|(w, psi)| *w * f1_population(psi)).fold(T::zero(), |a, b| a + b);
                    measurements.push((index, t, f1));
                }
            }
            t += duration;
        }
        Ok(TrajectoryResult {
            components: comps,
            measurements,
            trace,
        })
    }
}

fn pump_mixture<T: Real>(infidelity: T) -> Vec<(T, StateVector<T>)> {
    let mut out = vec![(T::one() - infidelity, StateVector::bare(ZERO))];
    if infidelity > T::zero() {
        let w = infidelity / T::lit(3.0);
        for k in [ZERO_PRIME, PLUS, MINUS] {
            out.push((w, StateVector::bare(k)));
        }
    }
    out
}

fn noise_signals<T: Real, R: rand::Rng + ?Sized>(
    processes: &[NoiseProcess<T>],
    dt: T,
    horizon: T,
    rng: &mut R,
) -> NoiseSignals<T> {
    let n = (horizon / dt).ceil().to_usize().unwrap_or(0).max(1);
    let mut out = NoiseSignals::default();
    for p in processes {
        if matches!(p.model, NoiseModel::None) {
            continue;
        }
        let path = sample_path_with(&p.model, dt, n, rng);
        let sig = to_signal(&path, dt);
        let slot = match p.applies_to {
            NoiseTarget::ZeemanLambda0 => &mut out.zeeman,
            NoiseTarget::DressingAmplitudeFractional => &mut out.amplitude,
        };
        *slot = Some(match slot.take() {
            None => sig,
            Some(prev) => {
                let sum: Vec<T> = prev.values.iter().zip(sig.values.iter()).map(|(a, b)| *a + *b).collect();
                PiecewiseSignal::new(dt, sum)
            }
        });
    }
    out
}

/// Executes `protocol` from the global clock origin. With noise bound, the
/// result is the average over `options.trajectories` realizations, each
/// drawn from its own stream of `options.seed`.
pub fn run<T: Real>(protocol: &Protocol<T>, model: &ExperimentModel<T>, options: &RunOptions<T>) -> Result<RunOutcome<T>> {
    run_inner(protocol, model, options, None).map(|(o, _)| o)
}

fn run_inner<T: Real>(
    protocol: &Protocol<T>,
    model: &ExperimentModel<T>,
    options: &RunOptions<T>,
    sample_every: Option<T>,
) -> Result<(RunOutcome<T>, Vec<TraceSample<T>>)> {
    protocol.validate()?;
    model.control.validate()?;
    for p in &options.noise {
        p.validate()?;
    }
    let noisy = options.noise.iter().any(|p| !matches!(p.model, NoiseModel::None));
    if noisy && options.trajectories == 0 {
        return Err(invalid("trajectories", "need at least one trajectory"));
    }
    if noisy && !(options.noise_dt > T::zero()) {
        return Err(invalid("noise_dt", "must be positive"));
    }
    let second_order = if options.second_order_zeeman { Some(model.second_order()?) } else { None };
    let duration = protocol.duration();
    let results: Vec<TrajectoryResult<T>> = if noisy {
        let rs = ensemble_map(options.trajectories, options.seed, |_, rng| {
            let exec = Executor {
                model,
                signals: noise_signals(&options.noise, options.noise_dt, duration, rng),
                second_order,
                sample_every: None,
            };
            exec.run(protocol)
        });
        rs.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        let exec = Executor {
            model,
            signals: NoiseSignals::default(),
            second_order,
            sample_every,
        };
        vec![exec.run(protocol)?]
    };
    let n = T::from_usize(results.len()).unwrap();
    let mut pops = [T::zero(); 4];
    for r in &results {
        for (w, psi) in &r.components {
            let p = populations(psi, Basis::Bare);
            for k in 0..4 {
                pops[k] += *w * p[k] / n;
            }
        }
    }
    let f1 = T::one() - pops[ZERO];
    let bright = options.fluorescence.map(|m| m.bright_probability(f1.to_f64_lossy()));
    let measurements = results[0]
        .measurements
        .iter()
        .enumerate()
        .map(|(j, &(step, time, _))| {
            let f1 = results.iter().map(|r| r.measurements[j].2).fold(T::zero(), |a, b| a + b) / n;
            Measurement {
                step,
                time,
                f1_population: f1,
                bright_probability: options.fluorescence.map(|m| m.bright_probability(f1.to_f64_lossy())),
            }
        })
        .collect();
    let final_state = match results.as_slice() {
        [only] if only.components.len() == 1 => Some(only.components[0].1),
        _ => None,
    };
    let trace = results.into_iter().next().map(|r| r.trace).unwrap_or_default();
    Ok((
        RunOutcome {
            populations: pops,
            f1_population: f1,
            bright_probability: bright,
            measurements,
            duration,
            final_state,
        },
        trace,
    ))
}

/// Noiseless run that also records mixture-averaged bare and dressed
/// populations every `sample_every` seconds (plus step boundaries).
pub fn run_traced<T: Real>(
    protocol: &Protocol<T>,
    model: &ExperimentModel<T>,
    sample_every: T,
) -> Result<(RunOutcome<T>, Vec<TraceSample<T>>)> {
    if !(sample_every > T::zero()) {
        return Err(invalid("sample_every", "must be positive"));
    }
    run_inner(protocol, model, &RunOptions::default(), Some(sample_every))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn model() -> ExperimentModel<f64> {
        ExperimentModel::from_field_splitting(TAU * 39e3, PhysicalConstants::default())
            .unwrap()
            .with_pump_infidelity(0.0)
    }

    #[test]
    fn pump_only() {
        let p = Protocol::new("pump", "|0>", vec![SequenceStep::PreparePump { infidelity: 0.0 }]);
        let out = run(&p, &model(), &RunOptions::default()).unwrap();
        assert_eq!(out.populations, [1.0, 0.0, 0.0, 0.0]);
        let p = Protocol::new("pump", "|0>", vec![SequenceStep::PreparePump { infidelity: 3e-4 }]);
        let out = run(&p, &model(), &RunOptions::default()).unwrap();
        assert!((out.populations[ZERO] - (1.0 - 3e-4)).abs() < 1e-15);
        assert!((out.populations[PLUS] - 1e-4).abs() < 1e-15);
        assert!(out.final_state.is_none());
    }

    #[test]
    fn clock_pi_in_14_us() {
        let m = model();
        assert!((PI / m.mw_pi_rabi - 14e-6).abs() < 1e-15);
        assert!((m.mw_pi_rabi / TAU / 1e3 - 35.714).abs() < 1e-3);
        let p = Protocol::new(
            "clock",
            "|0'>",
            vec![
                SequenceStep::PreparePump { infidelity: 0.0 },
                SequenceStep::ClockPi {
                    rabi: m.mw_pi_rabi,
                    detuning: 0.0,
                    phase: 0.0,
                },
            ],
        );
        let out = run(&p, &m, &RunOptions::default()).unwrap();
        assert!(out.populations[ZERO_PRIME] >= 1.0 - 1e-6);
        assert!((out.duration - 14e-6).abs() < 1e-15);
    }

    #[test]
    fn model_from_splitting_and_plus_line() {
        let m = model();
        assert!((m.field_splitting() / TAU - 39e3).abs() < 1e-6);
        let k = PhysicalConstants::default();
        let m = ExperimentModel::from_plus_line(TAU * 15.622e6, k).unwrap();
        assert!((m.frequencies.omega_plus / TAU - 15.622e6).abs() < 1e-3);
    }

    #[test]
    fn legality_rules() {
        let rf = SequenceStep::RfPulse {
            rabi: 1.0,
            detuning_plus: 0.0,
            phase: 0.0,
            duration: 1.0,
        };
        let p = Protocol::new("bad", "", vec![rf]);
        assert!(matches!(p.validate(), Err(Error::IllegalStep { index: 0, .. })));
        let p = Protocol::new(
            "bad",
            "",
            vec![
                SequenceStep::DressingOn { omega_mw: 1.0, ramp: None },
                SequenceStep::ClockPi {
                    rabi: 1.0,
                    detuning: 0.0,
                    phase: 0.0,
                },
            ],
        );
        assert!(matches!(p.validate(), Err(Error::IllegalStep { index: 1, .. })));
        let p = Protocol::new("bad", "", vec![SequenceStep::<f64>::DressingOff { ramp: None }]);
        assert!(p.validate().is_err());
        let p = Protocol::new("bad", "", vec![SequenceStep::Wait { duration: -1.0 }]);
        assert!(p.validate().is_err());
        let ok = Protocol::new(
            "ok",
            "",
            vec![SequenceStep::DressingOn { omega_mw: 1.0, ramp: None }, rf, SequenceStep::DressingOff { ramp: None }],
        );
        assert_eq!(ok.validate().unwrap(), None);
    }

    #[test]
    fn protocol_json_round_trip() {
        let m = model();
        let p = build_clock_prepare(PrepTarget::Up, &m, TAU * 31e3, TAU * 1e3).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"step\":\"rf_pulse\""));
        assert!(text.contains("detuning_plus_rad_s"));
        assert!(text.contains("\"schema_version\":1"));
        let back: Protocol<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn ramped_dressing_leaves_clock_state_alone() {
        let m = model();
        let ramp = Some(DressingRamp {
            sigma: 50e-6,
            truncation: 3.0,
        });
        let p = Protocol::new(
            "ramp",
            "",
            vec![
                SequenceStep::PreparePump { infidelity: 0.0 },
                SequenceStep::ClockPi {
                    rabi: m.mw_pi_rabi,
                    detuning: 0.0,
                    phase: 0.0,
                },
                SequenceStep::DressingOn { omega_mw: TAU * 30e3, ramp },
                SequenceStep::Wait { duration: 100e-6 },
                SequenceStep::DressingOff { ramp },
                SequenceStep::MapAndMeasure,
            ],
        );
        let (out, trace) = run_traced(&p, &m, 10e-6).unwrap();
        assert_eq!(out.measurements.len(), 1);
        assert!((out.duration - 414e-6).abs() < 1e-12);
        assert!(out.populations[ZERO_PRIME] > 1.0 - 1e-6);
        assert!((trace.last().unwrap().time - out.duration).abs() < 1e-12);
        // pump snapshot, 2 clock samples, then 15 + 10 + 15
        assert_eq!(trace.len(), 1 + 1 + 2 + 15 + 10 + 15);
        for s in &trace[3..] {
            assert!((s.dressed[3] - 1.0).abs() < 1e-6);
        }
    }
}
