//! Simulated experiments built on the executor: RF spectra, Rabi traces,
//! π-pulse calibration, STIRAP transfer and gradient addressing.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_clock_detect, build_clock_prepare, build_stirap, rf_line, run, ExperimentModel, GaussianRampSpec,
    PrepTarget, Protocol, RunOptions, SequenceStep, StirapDirection,
};
use crate::atomphys::{
    chi, crosstalk_ratio, equilibrium_positions, solve_offset_for_splitting, IonChainGeometry, MagneticEnvironment,
    PhysicalConstants,
};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{
    Basis, Channel, DressedState, Drive, HamiltonianGenerator, ResonanceTable, DARK, DRESSED_ZERO_PRIME, ZERO,
    ZERO_PRIME,
};
use crate::linalg::least_squares;
use crate::optimize::golden_max;
use crate::propagator::{evolve_from, evolve_trajectory, populations, PropagationControl, StateVector};
use crate::scalar::Real;

/// Single-RF-pulse probe of the dressed manifold starting from |0'⟩.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfProbe<T> {
    pub omega_mw: T,
    pub rabi_rf: T,
    pub duration: T,
    pub phase: T,
}

impl<T: Real> RfProbe<T> {
    /// Prepare |0'⟩, dress, apply the RF pulse at angular frequency
    /// `rf_frequency`, undress and map |0'⟩ back to |0⟩.
    pub fn protocol(&self, model: &ExperimentModel<T>, rf_frequency: T) -> Result<Protocol<T>> {
        let prepare = build_clock_prepare(PrepTarget::QubitZeroPrime, model, self.omega_mw, self.rabi_rf)?;
        let pulse = SequenceStep::RfPulse {
            rabi: self.rabi_rf,
            detuning_plus: rf_frequency - model.frequencies.omega_plus,
            phase: self.phase,
            duration: self.duration,
        };
        let detect = build_clock_detect(PrepTarget::QubitZeroPrime, model, self.omega_mw, self.rabi_rf)?;
        let p = prepare.with_step(pulse).then(&detect);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint<T> {
    /// Absolute RF angular frequency.
    pub frequency: T,
    pub f1_population: T,
}

fn last_f1<T: Real>(p: &Protocol<T>, model: &ExperimentModel<T>, options: &RunOptions<T>) -> Result<T> {
    let out = run(p, model, options)?;
    Ok(out.measurements.last().map_or(out.f1_population, |m| m.f1_population))
}

/// One full simulation per grid point, run in parallel; results keep the
/// grid order.
pub fn scan_frequency<T: Real>(
    probe: &RfProbe<T>,
    frequencies: &[T],
    model: &ExperimentModel<T>,
    options: &RunOptions<T>,
) -> Result<Vec<ScanPoint<T>>> {
    frequencies
        .par_iter()
        .map(|&f| {
            let p = probe.protocol(model, f)?;
            Ok(ScanPoint {
                frequency: f,
                f1_population: last_f1(&p, model, options)?,
            })
        })
        .collect()
}

/// Golden-section search for the F = 1 maximum inside [lo, hi].
pub fn refine_peak<T: Real>(
    probe: &RfProbe<T>,
    model: &ExperimentModel<T>,
    options: &RunOptions<T>,
    lo: T,
    hi: T,
    tol: T,
) -> Result<ScanPoint<T>> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let eval = |f: T| -> T {
        match probe.protocol(model, f).and_then(|p| last_f1(&p, model, options)) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                T::neg_infinity()
            }
        }
    };
    let best = golden_max(eval, lo, hi, tol);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let p = probe.protocol(model, best)?;
    Ok(ScanPoint {
        frequency: best,
        f1_population: last_f1(&p, model, options)?,
    })
}

/// Local maxima of a scan above `min_height`.
pub fn find_peaks<T: Real>(points: &[ScanPoint<T>], min_height: T) -> Vec<ScanPoint<T>> {
    let n = points.len();
    (0..n)
        .filter(|&k| {
            let v = points[k].f1_population;
            let left = k == 0 || points[k - 1].f1_population < v;
            let right = k + 1 == n || points[k + 1].f1_population <= v;
            v >= min_height && left && right
        })
        .map(|k| points[k])
        .collect()
}

fn rabi_formula<T: Real>(rabi: T, detuning: T, duration: T) -> T {
    let g2 = rabi * rabi + detuning * detuning;
    if g2 == T::zero() {
        return T::zero();
    }
    let s = (g2.sqrt() * duration * T::half()).sin();
    rabi * rabi / g2 * s * s
}

/// Sum of the six independent two-level transition probabilities.
pub fn six_line_model<T: Real>(table: &ResonanceTable<T>, rabi_rf: T, duration: T, frequency: T) -> T {
    table
        .lines
        .iter()
        .map(|l| rabi_formula(l.rabi_factor * rabi_rf, frequency - l.frequency, duration))
        .fold(T::zero(), |a, b| a + b)
}

/// F = 1 population after prepare |0'⟩ → RF pulse of each duration on the
/// `target` line → detect. Durations may include zero.
pub fn rabi_trace<T: Real>(
    target: DressedState,
    durations: &[T],
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
    options: &RunOptions<T>,
) -> Result<Vec<(T, T)>> {
    if durations.iter().any(|&d| !(d >= T::zero() && d.is_finite())) {
        return Err(invalid("durations", "must be finite and non-negative"));
    }
    if durations.is_empty() {
        return Ok(Vec::new());
    }
    super::check_conditions(model, omega_mw, rabi_rf)?;
    let (detuning_plus, _) = rf_line(target, omega_mw);
    let prepare = build_clock_prepare(PrepTarget::QubitZeroPrime, model, omega_mw, rabi_rf)?;
    let detect = build_clock_detect(PrepTarget::QubitZeroPrime, model, omega_mw, rabi_rf)?;
    durations
        .par_iter()
        .map(|&duration| {
            let p = prepare
                .clone()
                .with_step(SequenceStep::RfPulse {
                    rabi: rabi_rf,
                    detuning_plus,
                    phase: T::zero(),
                    duration,
                })
                .then(&detect);
            Ok((duration, last_f1(&p, model, options)?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiFit<T> {
    /// Angular frequency of the population oscillation.
    pub rabi: T,
    pub offset: T,
    /// Peak-to-peak amplitude of the fitted sinusoid.
    pub contrast: T,
    pub rms_residual: T,
}

impl<T: Real> RabiFit<T> {
    pub fn period(&self) -> T {
        T::TAU() / self.rabi
    }
}

fn sinusoid_fit<T: Real>(t: &[T], y: &[T], w: T) -> Option<(T, T, T, T)> {
    let rows: Vec<Vec<T>> = t.iter().map(|&x| vec![T::one(), (w * x).cos(), (w * x).sin()]).collect();
    let coef = least_squares(&rows, y, T::epsilon() * T::lit(16.0))?;
    let ss = rows
        .iter()
        .zip(y)
        .map(|(r, &v)| {
            let m = coef[0] + coef[1] * r[1] + coef[2] * r[2];
            (m - v) * (m - v)
        })
        .fold(T::zero(), |a, b| a + b);
    Some((coef[0], coef[1], coef[2], ss))
}

/// Fits y = c + a·cos(Ωt) + b·sin(Ωt) by scanning Ω up to the grid's
/// Nyquist limit and refining the best candidate.
pub fn fit_rabi<T: Real>(times: &[T], values: &[T]) -> Result<RabiFit<T>> {
    if times.len() != values.len() || times.len() < 4 {
        return Err(invalid("times", "need at least four matching samples"));
    }
    let span = times.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
        - times.iter().fold(T::infinity(), |m, &x| m.min(x));
    if !(span > T::zero()) {
        return Err(invalid("times", "samples must span a positive interval"));
    }
    let n = T::from_usize(times.len()).unwrap();
    let w_max = T::PI() * (n - T::one()) / span;
    let w_min = T::PI() / span;
    let grid = 2000;
    let sse = |w: T| sinusoid_fit(times, values, w).map_or(T::infinity(), |f| f.3);
    let step = (w_max - w_min) / T::from_usize(grid).unwrap();
    let mut best = (w_min, T::infinity());
    for k in 0..=grid {
        let w = w_min + step * T::from_usize(k).unwrap();
        let s = sse(w);
        if s < best.1 {
            best = (w, s);
        }
    }
    let w = golden_max(|w| -sse(w), best.0 - step, best.0 + step, step * T::lit(1e-9));
    let (c, a, b, ss) = sinusoid_fit(times, values, w).ok_or(Error::SingularDesign)?;
    Ok(RabiFit {
        rabi: w,
        offset: c,
        contrast: T::two() * (a * a + b * b).sqrt(),
        rms_residual: (ss / n).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiPulseCalibration<T> {
    /// π/(effective Rabi frequency).
    pub nominal_time: T,
    pub nominal_infidelity: T,
    /// Pulse length maximizing the target population near the nominal time.
    pub calibrated_time: T,
    pub infidelity: T,
}

/// |0'⟩ → `target` π-pulse error from the other RF lines. The pulse length
/// is calibrated to the population maximum within ±5% of the nominal
/// π-time, as one would from a measured Rabi flop.
pub fn pi_pulse_infidelity<T: Real>(
    target: DressedState,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<PiPulseCalibration<T>> {
    super::check_conditions(model, omega_mw, rabi_rf)?;
    let (detuning_plus, factor) = rf_line(target, omega_mw);
    let gen = HamiltonianGenerator::dressed(omega_mw, model.field_splitting()).with_drive(Drive::rf(rabi_rf, detuning_plus));
    let ctrl = model.control;
    let psi0 = StateVector::dressed(DRESSED_ZERO_PRIME);
    let k = target.index();
    let nominal = T::PI() / (factor * rabi_rf);
    let lo = nominal * T::lit(0.95);
    let width = nominal * T::lit(0.1);
    let start = evolve_from(&psi0, &gen, T::zero(), lo, &ctrl)?;
    let samples = 400;
    let dt = width / T::from_usize(samples).unwrap();
    let traj = evolve_trajectory(&start, &gen, lo, width, &ctrl.with_sampling(dt))?;
    let pop = |psi: &StateVector<T>| populations(psi, Basis::Dressed)[k];
    let (best, _) = traj
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| (i, pop(s)))
        .fold((0, T::neg_infinity()), |b, c| if c.1 > b.1 { c } else { b });
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let at = |t: T| -> T {
        match evolve_from(&start, &gen, lo, t - lo, &ctrl) {
            Ok(s) => pop(&s),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                T::neg_infinity()
            }
        }
    };
    let t_best = traj.times[best];
    let a = (t_best - dt).max(lo);
    let b = (t_best + dt).min(lo + width);
    let t_cal = golden_max(&at, a, b, dt * T::lit(1e-4));
    let p_cal = at(t_cal).max(pop(&traj.states[best]));
    let p_nom = at(nominal);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(PiPulseCalibration {
        nominal_time: nominal,
        nominal_infidelity: T::one() - p_nom,
        calibrated_time: t_cal,
        infidelity: T::one() - p_cal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StirapReport<T> {
    pub adiabaticity: T,
    /// P(|D⟩) after preparation.
    pub dark_population: T,
    /// Population of the exit Zeeman level right after the release ramp.
    pub released_population: T,
    /// P(|0⟩) after prepare, hold, release and the final π-pulse.
    pub round_trip_population: T,
}

/// Runs the STIRAP preparation and the full round trip with `hold` seconds
/// at constant dressing between the ramps. Pumping is taken as perfect so
/// the numbers describe the ramps alone.
pub fn stirap_transfer<T: Real>(spec: GaussianRampSpec<T>, hold: T, model: &ExperimentModel<T>) -> Result<StirapReport<T>> {
    let model = &model.clone().with_pump_infidelity(T::zero());
    let prepare = build_stirap(StirapDirection::Prepare, spec, model)?;
    let release = build_stirap(StirapDirection::Release, spec, model)?;
    let opts = RunOptions::default();
    let prepared = run(&prepare, model, &opts)?;
    let held = prepare.with_step(SequenceStep::Wait { duration: hold });
    let released = held.clone().with_step(release.steps[0]);
    let released = run(&released, model, &opts)?;
    let round = run(&held.then(&release), model, &opts)?;
    let (_, exit) = super::stirap_lines(spec.order);
    let exit_index = match exit {
        super::ZeemanLine::Plus => crate::hamiltonian::PLUS,
        super::ZeemanLine::Minus => crate::hamiltonian::MINUS,
    };
    let dark = prepared
        .final_state
        .map(|s| populations(&s, Basis::Dressed)[DARK])
        .ok_or_else(|| Error::NoConvergence("expected a pure final state".into()))?;
    Ok(StirapReport {
        adiabaticity: spec.adiabaticity(),
        dark_population: dark,
        released_population: released.populations[exit_index],
        round_trip_population: round.populations[ZERO],
    })
}

/// P(|D⟩) after preparation for each σ, keeping the separation/σ ratio.
pub fn stirap_sigma_sweep<T: Real>(
    spec: GaussianRampSpec<T>,
    sigmas: &[T],
    model: &ExperimentModel<T>,
) -> Result<Vec<(T, T)>> {
    sigmas
        .par_iter()
        .map(|&s| {
            let scaled = spec.time_scaled(s / spec.sigma);
            Ok((s, stirap_transfer_prepare_only(scaled, model)?))
        })
        .collect()
}

fn stirap_transfer_prepare_only<T: Real>(spec: GaussianRampSpec<T>, model: &ExperimentModel<T>) -> Result<T> {
    let p = build_stirap(StirapDirection::Prepare, spec, model)?;
    let out = run(&p, &model.clone().with_pump_infidelity(T::zero()), &RunOptions::default())?;
    let s = out.final_state.ok_or_else(|| Error::NoConvergence("expected a pure final state".into()))?;
    Ok(populations(&s, Basis::Dressed)[DARK])
}

/// Several ions in a field gradient, probed on the clock transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddressingModel<T> {
    pub constants: PhysicalConstants<T>,
    pub field: MagneticEnvironment<T>,
    pub geometry: IonChainGeometry<T>,
    /// Clock-drive Rabi frequency, rad/s.
    pub clock_rabi: T,
}

impl<T: Real> AddressingModel<T> {
    pub fn new(
        constants: PhysicalConstants<T>,
        field: MagneticEnvironment<T>,
        n_ions: usize,
        secular_freq: T,
        clock_rabi: T,
    ) -> Result<Self> {
        field.validate()?;
        if !(clock_rabi > T::zero()) {
            return Err(invalid("clock_rabi", "must be positive"));
        }
        let geometry = equilibrium_positions(n_ions, secular_freq, &constants)?;
        Ok(Self {
            constants,
            field,
            geometry,
            clock_rabi,
        })
    }

    /// Chooses the centre field so ions `i`, `j` are split by `target`.
    pub fn tuned_to_splitting(mut self, target: T, i: usize, j: usize) -> Result<Self> {
        self.field.b_offset =
            solve_offset_for_splitting(target, self.field.gradient, &self.geometry, i, j, &self.constants)?;
        Ok(self)
    }

    pub fn ion_fields(&self) -> Vec<T> {
        self.geometry.positions.iter().map(|&z| self.field.field_at(z)).collect()
    }

    /// ω_clock − ω₀ at each ion, computed without subtracting the large
    /// hyperfine frequency.
    pub fn clock_shifts(&self) -> Result<Vec<T>> {
        self.ion_fields()
            .into_iter()
            .map(|b| {
                let x = chi(b, &self.constants)?;
                Ok(self.constants.omega0 * x * x / (T::one() + (T::one() + x * x).sqrt()))
            })
            .collect()
    }

    pub fn splitting(&self, i: usize, j: usize) -> Result<T> {
        let s = self.clock_shifts()?;
        if i >= s.len() || j >= s.len() {
            return Err(invalid("i", "ion index out of range"));
        }
        Ok((s[i] - s[j]).abs())
    }

    pub fn pi_time(&self) -> T {
        T::PI() / self.clock_rabi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddressingPoint<T> {
    /// Clock-drive detuning from ω₀, rad/s.
    pub offset: T,
    /// P(|0'⟩) of each ion after one π-time.
    pub excitation: Vec<T>,
    pub total: T,
}

fn clock_excitation<T: Real>(rabi: T, detuning: T, duration: T, ctrl: &PropagationControl<T>) -> Result<T> {
    let gen = HamiltonianGenerator::bare(T::zero()).with_drive(Drive::new(Channel::Clock, rabi).with_detuning(detuning));
    let psi = evolve_from(&StateVector::bare(ZERO), &gen, T::zero(), duration, ctrl)?;
    Ok(populations(&psi, Basis::Bare)[ZERO_PRIME])
}

/// Clock spectrum of the chain: each ion starts in |0⟩ and sees a π-time
/// pulse at detuning `offset − shift_k`.
pub fn addressing_scan<T: Real>(
    model: &AddressingModel<T>,
    offsets: &[T],
    ctrl: &PropagationControl<T>,
) -> Result<Vec<AddressingPoint<T>>> {
    let shifts = model.clock_shifts()?;
    let duration = model.pi_time();
    offsets
        .par_iter()
        .map(|&offset| {
            let excitation = shifts
                .iter()
                .map(|&s| clock_excitation(model.clock_rabi, offset - s, duration, ctrl))
                .collect::<Result<Vec<T>>>()?;
            let total = excitation.iter().copied().fold(T::zero(), |a, b| a + b);
            Ok(AddressingPoint {
                offset,
                excitation,
                total,
            })
        })
        .collect()
}

/// Sum of the per-ion Rabi line shapes for a π-time pulse.
pub fn multi_line_model<T: Real>(model: &AddressingModel<T>, offset: T) -> Result<T> {
    let d = model.pi_time();
    Ok(model
        .clock_shifts()?
        .into_iter()
        .map(|s| rabi_formula(model.clock_rabi, offset - s, d))
        .fold(T::zero(), |a, b| a + b))
}

/// Largest excitation over `samples` evenly spaced times in [0, duration]
/// of a clock transition driven `detuning` off resonance.
pub fn offresonant_excitation_peak<T: Real>(
    rabi: T,
    detuning: T,
    duration: T,
    samples: usize,
    ctrl: &PropagationControl<T>,
) -> Result<T> {
    if samples == 0 {
        return Err(invalid("samples", "need at least one sample"));
    }
    let gen = HamiltonianGenerator::bare(T::zero()).with_drive(Drive::new(Channel::Clock, rabi).with_detuning(detuning));
    let every = duration / T::from_usize(samples).unwrap();
    let traj = evolve_trajectory(&StateVector::bare(ZERO), &gen, T::zero(), duration, &ctrl.with_sampling(every))?;
    Ok(traj
        .states
        .iter()
        .map(|s| populations(s, Basis::Bare)[ZERO_PRIME])
        .fold(T::zero(), |m, p| m.max(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkReport<T> {
    pub splitting: T,
    pub pi_time: T,
    /// (Ω/Δ)² with Ω = π/pi_time.
    pub estimate: T,
    /// Peak excitation of the neighbour during a π-pulse on the target.
    pub simulated: T,
}

pub fn crosstalk_report<T: Real>(
    model: &AddressingModel<T>,
    target: usize,
    other: usize,
    ctrl: &PropagationControl<T>,
) -> Result<CrosstalkReport<T>> {
    let splitting = model.splitting(target, other)?;
    let pi_time = model.pi_time();
    Ok(CrosstalkReport {
        splitting,
        pi_time,
        estimate: crosstalk_ratio(model.clock_rabi, splitting)?,
        simulated: offresonant_excitation_peak(model.clock_rabi, splitting, pi_time, 2000, ctrl)?,
    })
}
