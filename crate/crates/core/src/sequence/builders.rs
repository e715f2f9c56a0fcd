//! Protocol builders for the clock method, STIRAP and composite rotations.

use serde::{Deserialize, Serialize};

use super::{ExperimentModel, GaussianRampSpec, Protocol, SequenceStep, StirapDirection, ZeemanLine};
use crate::error::{invalid, Result};
use crate::hamiltonian::DressedState;
use crate::scalar::{angular_to_hz, Real};

/// Ratio below which a "≪" condition is reported as marginal.
pub const MARGIN_WARNING: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrepTarget {
    #[serde(rename = "D")]
    Dark,
    #[serde(rename = "u")]
    Up,
    #[serde(rename = "d")]
    Down,
    /// Stop after the clock π-pulse, leaving the |0'⟩ qubit state.
    #[serde(rename = "qubit_0prime")]
    QubitZeroPrime,
}

impl PrepTarget {
    pub fn dressed(self) -> Option<DressedState> {
        match self {
            PrepTarget::Dark => Some(DressedState::Dark),
            PrepTarget::Up => Some(DressedState::Up),
            PrepTarget::Down => Some(DressedState::Down),
            PrepTarget::QubitZeroPrime => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self.dressed() {
            Some(s) => s.label(),
            None => "0'",
        }
    }
}

impl From<DressedState> for PrepTarget {
    fn from(s: DressedState) -> Self {
        match s {
            DressedState::Dark => PrepTarget::Dark,
            DressedState::Up => PrepTarget::Up,
            DressedState::Down => PrepTarget::Down,
        }
    }
}

/// Δ₊ at which the |0'⟩↔`target` line via |+1⟩ is stationary, and the
/// effective Rabi frequency in units of Ω_rf.
pub fn rf_line<T: Real>(target: DressedState, omega_mw: T) -> (T, T) {
    let w = omega_mw * T::FRAC_1_SQRT_2();
    let detuning = match target {
        DressedState::Dark => T::zero(),
        DressedState::Up => w,
        DressedState::Down => -w,
    };
    let factor = match target {
        DressedState::Dark => T::FRAC_1_SQRT_2(),
        _ => T::half(),
    };
    (detuning, factor)
}

/// Resonant RF pulse of rotation angle `area` on the |0'⟩↔`target` line.
pub fn rf_pulse<T: Real>(target: DressedState, omega_mw: T, rabi_rf: T, area: T, phase: T) -> SequenceStep<T> {
    let (detuning_plus, factor) = rf_line(target, omega_mw);
    SequenceStep::RfPulse {
        rabi: rabi_rf,
        detuning_plus,
        phase,
        duration: area / (factor * rabi_rf),
    }
}

/// How well the RF drive satisfies Ω_rf ≪ |ω_minus − ω_plus|, Ω_rf ≪ Ω_μw,
/// and Ω_rf ≪ the closest pair of RF lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargins<T> {
    pub splitting_over_rf: T,
    pub dressing_over_rf: T,
    pub line_separation_over_rf: T,
}

impl<T: Real> ConditionMargins<T> {
    pub fn smallest(&self) -> T {
        self.splitting_over_rf.min(self.dressing_over_rf).min(self.line_separation_over_rf)
    }

    pub fn is_comfortable(&self) -> bool {
        self.smallest() >= T::lit(MARGIN_WARNING)
    }
}

pub fn condition_margins<T: Real>(model: &ExperimentModel<T>, omega_mw: T, rabi_rf: T) -> Result<ConditionMargins<T>> {
    if !(rabi_rf > T::zero() && rabi_rf.is_finite()) {
        return Err(invalid("rabi_rf", "must be positive"));
    }
    let table = model.resonance_table(omega_mw)?;
    Ok(ConditionMargins {
        splitting_over_rf: model.field_splitting().abs() / rabi_rf,
        dressing_over_rf: omega_mw / rabi_rf,
        line_separation_over_rf: table.min_separation() / rabi_rf,
    })
}

/// Refuses colliding resonance tables and logs marginal conditions.
pub fn check_conditions<T: Real>(model: &ExperimentModel<T>, omega_mw: T, rabi_rf: T) -> Result<ConditionMargins<T>> {
    if !(omega_mw > T::zero() && omega_mw.is_finite()) {
        return Err(invalid("omega_mw", "must be positive"));
    }
    let margins = condition_margins(model, omega_mw, rabi_rf)?;
    model.resonance_table(omega_mw)?.check(rabi_rf)?;
    if !margins.is_comfortable() {
        log::warn!(
            "RF drive at {:.3} kHz is not well separated: splitting/Ω_rf = {:.1}, Ω_μw/Ω_rf = {:.1}, line gap/Ω_rf = {:.1}",
            angular_to_hz(rabi_rf).to_f64_lossy() / 1e3,
            margins.splitting_over_rf.to_f64_lossy(),
            margins.dressing_over_rf.to_f64_lossy(),
            margins.line_separation_over_rf.to_f64_lossy(),
        );
    }
    Ok(margins)
}

fn clock_pi<T: Real>(model: &ExperimentModel<T>) -> SequenceStep<T> {
    SequenceStep::ClockPi {
        rabi: model.mw_pi_rabi,
        detuning: T::zero(),
        phase: T::zero(),
    }
}

/// Pump, clock π-pulse to |0'⟩, dressing on and, for a dressed target, an RF
/// π-pulse on its line.
pub fn build_clock_prepare<T: Real>(
    target: PrepTarget,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<Protocol<T>> {
    let mut steps = vec![
        SequenceStep::PreparePump {
            infidelity: model.pump_infidelity,
        },
        clock_pi(model),
        SequenceStep::DressingOn { omega_mw, ramp: None },
    ];
    if let Some(state) = target.dressed() {
        check_conditions(model, omega_mw, rabi_rf)?;
        steps.push(rf_pulse(state, omega_mw, rabi_rf, T::PI(), T::zero()));
    }
    let p = Protocol::new("clock_prepare", format!("prepare |{}>", target.label()), steps);
    p.validate()?;
    Ok(p)
}

/// RF π-pulse mapping `source` back to |0'⟩, dressing off, clock π-pulse
/// and measurement. Population found in `source` ends dark. Starts with
/// dressing on at `omega_mw`.
pub fn build_clock_detect<T: Real>(
    source: PrepTarget,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<Protocol<T>> {
    let mut steps = Vec::new();
    if let Some(state) = source.dressed() {
        check_conditions(model, omega_mw, rabi_rf)?;
        steps.push(rf_pulse(state, omega_mw, rabi_rf, T::PI(), T::zero()));
    }
    steps.extend([SequenceStep::DressingOff { ramp: None }, clock_pi(model), SequenceStep::MapAndMeasure]);
    let p = Protocol::new("clock_detect", format!("detect |{}>", source.label()), steps);
    p.validate_from(Some(omega_mw))?;
    Ok(p)
}

/// Zeeman line that feeds |D⟩ in preparation, and the one |D⟩ is released
/// into.
pub fn stirap_lines(order: super::RampOrder) -> (ZeemanLine, ZeemanLine) {
    match order {
        super::RampOrder::MinusFirst => (ZeemanLine::Plus, ZeemanLine::Minus),
        super::RampOrder::PlusFirst => (ZeemanLine::Minus, ZeemanLine::Plus),
    }
}

/// Preparation: pump, bare π-pulse |0⟩→|±1⟩, Gaussian ramps into |D⟩.
/// Release: ramps down mapping |D⟩ to the other Zeeman level, then a bare
/// π-pulse back to |0⟩. Non-adiabatic specs are accepted with a warning.
pub fn build_stirap<T: Real>(
    direction: StirapDirection,
    spec: GaussianRampSpec<T>,
    model: &ExperimentModel<T>,
) -> Result<Protocol<T>> {
    spec.validate()?;
    if !spec.is_adiabatic() {
        log::warn!(
            "STIRAP ramp with Ω·σ = {:.2} is not adiabatic",
            spec.adiabaticity().to_f64_lossy()
        );
    }
    let (feed, exit) = stirap_lines(spec.order);
    let pi = |line| SequenceStep::MicrowavePi {
        line,
        rabi: model.mw_pi_rabi,
        detuning: T::zero(),
        phase: T::zero(),
    };
    let ramp = SequenceStep::StirapRamp { spec, direction };
    let (steps, start) = match direction {
        StirapDirection::Prepare => (
            vec![
                SequenceStep::PreparePump {
                    infidelity: model.pump_infidelity,
                },
                pi(feed),
                ramp,
            ],
            None,
        ),
        StirapDirection::Release => (vec![ramp, pi(exit)], Some(spec.peak_rabi)),
    };
    let name = match direction {
        StirapDirection::Prepare => "stirap_prepare",
        StirapDirection::Release => "stirap_release",
    };
    let target = match direction {
        StirapDirection::Prepare => "prepare |D>",
        StirapDirection::Release => "release |D> to |0>",
    };
    let p = Protocol::new(name, target, steps);
    p.validate_from(start)?;
    Ok(p)
}

/// Rotation by `angle` between dressed states `partner` and `pivot`, built
/// from a π-pulse `pivot`→|0'⟩, a pulse of area `angle` on |0'⟩↔`partner`,
/// and a π-pulse |0'⟩→`pivot`. Starts and ends with dressing on.
pub fn composite_rotation<T: Real>(
    pivot: DressedState,
    partner: DressedState,
    angle: T,
    phase: T,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<Protocol<T>> {
    if pivot == partner {
        return Err(invalid("partner", "must differ from the pivot state"));
    }
    if !(angle >= T::zero() && angle.is_finite()) {
        return Err(invalid("angle", "must be finite and non-negative"));
    }
    check_conditions(model, omega_mw, rabi_rf)?;
    let steps = vec![
        rf_pulse(pivot, omega_mw, rabi_rf, T::PI(), T::zero()),
        rf_pulse(partner, omega_mw, rabi_rf, angle, phase),
        rf_pulse(pivot, omega_mw, rabi_rf, T::PI(), T::zero()),
    ];
    let p = Protocol::new(
        "composite_rotation",
        format!("rotate |{}>-|{}>", partner.label(), pivot.label()),
        steps,
    );
    p.validate_from(Some(omega_mw))?;
    Ok(p)
}

/// |u⟩↔|d⟩ rotation through |0'⟩ with |d⟩ as the parked state.
pub fn composite_ud_rotation<T: Real>(
    angle: T,
    phase: T,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<Protocol<T>> {
    composite_rotation(DressedState::Down, DressedState::Up, angle, phase, model, omega_mw, rabi_rf)
}

#[cfg(test)]
mod tests {
    use super::super::{run, RunOptions};
    use super::*;
    use crate::atomphys::PhysicalConstants;
    use crate::error::Error;
    use crate::hamiltonian::{DARK, DOWN, UP};
    use crate::propagator::populations;
    use crate::hamiltonian::Basis;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};

    // Fig. 3a-like setting: Ω_μw/√2 = 2π×23 kHz, 39 kHz splitting
    fn model() -> ExperimentModel<f64> {
        ExperimentModel::from_field_splitting(TAU * 39e3, PhysicalConstants::default())
            .unwrap()
            .with_pump_infidelity(0.0)
    }
    const W: f64 = TAU * 23e3 * SQRT_2;
    const RF: f64 = TAU * 0.63e3 * SQRT_2;

    fn dark_probability(p: &Protocol<f64>) -> f64 {
        let out = run(p, &model(), &RunOptions::default()).unwrap();
        1.0 - out.measurements.last().unwrap().f1_population
    }

    #[test]
    fn prepare_d_has_800us_pulse() {
        let p = build_clock_prepare(PrepTarget::Dark, &model(), W, RF).unwrap();
        let SequenceStep::RfPulse { duration, detuning_plus, .. } = *p.steps.last().unwrap() else {
            panic!("last step should be the RF pulse");
        };
        assert!((duration - 793.65e-6).abs() < 0.1e-6);
        assert_eq!(detuning_plus, 0.0);
        let up = build_clock_prepare(PrepTarget::Up, &model(), W, RF).unwrap();
        let SequenceStep::RfPulse { detuning_plus, .. } = *up.steps.last().unwrap() else { panic!() };
        assert!((detuning_plus - W / SQRT_2).abs() < 1e-9);
        let down = build_clock_prepare(PrepTarget::Down, &model(), W, RF).unwrap();
        let SequenceStep::RfPulse { detuning_plus, .. } = *down.steps.last().unwrap() else { panic!() };
        assert!((detuning_plus + W / SQRT_2).abs() < 1e-9);
        let q = build_clock_prepare(PrepTarget::QubitZeroPrime, &model(), W, RF).unwrap();
        assert_eq!(q.steps.len(), 3);
    }

    #[test]
    fn collision_is_refused() {
        // Ω_μw/√2 equal to the splitting: D via −1 collides with u via +1
        let m = model();
        let w = m.field_splitting() * SQRT_2;
        let err = build_clock_prepare(PrepTarget::Up, &m, w, RF).unwrap_err();
        assert!(matches!(err, Error::ResonanceCollision { .. }));
    }

    #[test]
    fn margins_reported() {
        let m = condition_margins(&model(), W, RF).unwrap();
        assert!((m.splitting_over_rf - 39.0 / 0.891).abs() < 0.1);
        // d via −1 sits 7 kHz below u via +1
        assert!((m.line_separation_over_rf - 7.0 / 0.891).abs() < 0.1);
        assert!(!m.is_comfortable());
        assert!(condition_margins(&model(), W, RF / 10.0).unwrap().is_comfortable());
    }

    #[test]
    fn prepare_detect_duality() {
        // the ×10 weaker RF drive keeps the 7 kHz neighbour of the u, d lines
        // out of the way
        let m = model();
        let rf = RF / 10.0;
        for x in [PrepTarget::Dark, PrepTarget::Up, PrepTarget::Down, PrepTarget::QubitZeroPrime] {
            let p = build_clock_prepare(x, &m, W, rf).unwrap().then(&build_clock_detect(x, &m, W, rf).unwrap());
            let dark = dark_probability(&p);
            assert!(dark >= 0.999, "{:?}: dark {}", x, dark);
        }
        // at full strength only |D⟩ clears the bound
        let p = build_clock_prepare(PrepTarget::Dark, &m, W, RF)
            .unwrap()
            .then(&build_clock_detect(PrepTarget::Dark, &m, W, RF).unwrap());
        assert!(dark_probability(&p) >= 0.999);
    }

    #[test]
    fn orthogonal_detection_is_bright() {
        let m = model();
        let dressed = [PrepTarget::Dark, PrepTarget::Up, PrepTarget::Down];
        for x in dressed {
            for y in dressed {
                if x == y {
                    continue;
                }
                let p = build_clock_prepare(x, &m, W, RF).unwrap().then(&build_clock_detect(y, &m, W, RF).unwrap());
                let bright = 1.0 - dark_probability(&p);
                assert!(bright >= 0.99, "{:?}->{:?}: bright {}", x, y, bright);
            }
        }
    }

    fn dressed_after(prep: PrepTarget, rot: &Protocol<f64>) -> [f64; 4] {
        let m = model();
        let p = build_clock_prepare(prep, &m, W, RF).unwrap().then(rot);
        let out = run(&p, &m, &RunOptions::default()).unwrap();
        populations(&out.final_state.unwrap(), Basis::Dressed)
    }

    #[test]
    fn composite_rotations() {
        let m = model();
        let half = composite_ud_rotation(FRAC_PI_2, 0.0, &m, W, RF).unwrap();
        let p = dressed_after(PrepTarget::Up, &half);
        assert!((p[UP] - 0.5).abs() < 1e-2 && (p[DOWN] - 0.5).abs() < 1e-2, "{:?}", p);
        let zero = composite_ud_rotation(0.0, 0.0, &m, W, RF).unwrap();
        let p = dressed_after(PrepTarget::Down, &zero);
        assert!((p[DOWN] - 1.0).abs() < 1e-2, "{:?}", p);
        let full = composite_ud_rotation(PI, 0.0, &m, W, RF).unwrap();
        let p = dressed_after(PrepTarget::Down, &full);
        assert!(p[UP] >= 0.98, "{:?}", p);
        assert!(p[DARK] < 1e-2);
    }

    #[test]
    fn stirap_fragments_are_legal() {
        let m = model();
        let spec = GaussianRampSpec::default();
        let prep = build_stirap(StirapDirection::Prepare, spec, &m).unwrap();
        let rel = build_stirap(StirapDirection::Release, spec, &m).unwrap();
        assert!(rel.validate().is_err());
        assert_eq!(prep.then(&rel).validate().unwrap(), None);
        let diabatic = spec.time_scaled(0.01);
        assert!(!diabatic.is_adiabatic());
        assert!(build_stirap(StirapDirection::Prepare, diabatic, &m).is_ok());
    }
}
