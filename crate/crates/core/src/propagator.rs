//! Time-dependent Schrödinger equation solver for a single four-level ion.
//!
//! States in the dressed basis are stored as ψ_dressed = U†ψ_bare, i.e. the
//! dressing phases are part of the amplitudes. The solver moves to the
//! dressed interaction picture internally and back at the end of each call,
//! so a `StateVector` never depends on which frame produced it.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{dressed_energies, dressed_transform, Basis, Frame, HamiltonianGenerator, ZERO};
use crate::linalg::{cis, cr, vec_norm, CVec, Mat4};
use crate::scalar::Real;

/// Anything that can hand the solver a Hamiltonian H(t) in rad/s.
pub trait Generator<T: Real>: Sync {
    fn frame(&self) -> Frame;
    fn eval(&self, t: T) -> Result<Mat4<T>>;
    /// Largest explicit oscillation frequency (rad/s); bounds the step size.
    fn max_frequency(&self) -> T;
    /// True when H(t) is constant between breakpoints.
    fn is_piecewise_static(&self) -> bool;
    fn breakpoints(&self, t0: T, t1: T) -> Vec<T>;
    /// Ω_μw that defines the dressed interaction picture.
    fn dressing_rabi(&self) -> T;
}

impl<T: Real> Generator<T> for HamiltonianGenerator<T> {
    fn frame(&self) -> Frame {
        self.frame
    }
    fn eval(&self, t: T) -> Result<Mat4<T>> {
        HamiltonianGenerator::eval(self, t)
    }
    fn max_frequency(&self) -> T {
        HamiltonianGenerator::max_frequency(self)
    }
    fn is_piecewise_static(&self) -> bool {
        HamiltonianGenerator::is_piecewise_static(self)
    }
    fn breakpoints(&self, t0: T, t1: T) -> Vec<T> {
        HamiltonianGenerator::breakpoints(self, t0, t1)
    }
    fn dressing_rabi(&self) -> T {
        self.dressing_rabi
    }
}

/// −H(t): running a static generator backwards in time.
pub struct Negated<'a, G>(pub &'a G);

impl<'a, T: Real, G: Generator<T>> Generator<T> for Negated<'a, G> {
    fn frame(&self) -> Frame {
        self.0.frame()
    }
    fn eval(&self, t: T) -> Result<Mat4<T>> {
        Ok(-self.0.eval(t)?)
    }
    fn max_frequency(&self) -> T {
        self.0.max_frequency()
    }
    fn is_piecewise_static(&self) -> bool {
        self.0.is_piecewise_static()
    }
    fn breakpoints(&self, t0: T, t1: T) -> Vec<T> {
        self.0.breakpoints(t0, t1)
    }
    fn dressing_rabi(&self) -> T {
        self.0.dressing_rabi()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector<T> {
    pub basis: Basis,
    pub amplitudes: [Complex<T>; 4],
}

fn norm_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(1e3))
}

impl<T: Real> StateVector<T> {
    pub fn new(basis: Basis, amplitudes: [Complex<T>; 4]) -> Result<Self> {
        let s = Self { basis, amplitudes };
        if (s.norm() - T::one()).abs() > norm_tolerance::<T>() {
            return Err(invalid("amplitudes", "state must be normalized"));
        }
        Ok(s)
    }

    /// Unit vector `index` of `basis`.
    pub fn basis_state(basis: Basis, index: usize) -> Self {
        let mut amplitudes = [cr(T::zero()); 4];
        amplitudes[index] = cr(T::one());
        Self { basis, amplitudes }
    }

    pub fn bare(index: usize) -> Self {
        Self::basis_state(Basis::Bare, index)
    }

    pub fn dressed(index: usize) -> Self {
        Self::basis_state(Basis::Dressed, index)
    }

    pub fn norm(&self) -> T {
        vec_norm(&self.amplitudes)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        let mut out = *self;
        for a in &mut out.amplitudes {
            *a = *a / n;
        }
        out
    }

    pub fn to_basis(&self, basis: Basis) -> Self {
        if basis == self.basis {
            return *self;
        }
        let u = dressed_transform::<T>();
        let amplitudes = match basis {
            Basis::Dressed => u.adjoint().mul_vec(&self.amplitudes),
            Basis::Bare => u.mul_vec(&self.amplitudes),
        };
        Self { basis, amplitudes }
    }

    /// ⟨self|other⟩, after bringing `other` to this basis.
    pub fn overlap(&self, other: &Self) -> Complex<T> {
        let o = other.to_basis(self.basis);
        crate::linalg::vec_dot(&self.amplitudes, &o.amplitudes)
    }
}

/// Probabilities in `basis`, renormalized for reporting.
pub fn populations<T: Real>(psi: &StateVector<T>, basis: Basis) -> [T; 4] {
    let v = psi.to_basis(basis);
    let p = v.amplitudes.map(|a| a.norm_sqr());
    let total: T = p.iter().copied().sum();
    if total > T::zero() {
        p.map(|x| x / total)
    } else {
        p
    }
}

/// Probability of being found in the F = 1 manifold.
pub fn f1_population<T: Real>(psi: &StateVector<T>) -> T {
    let p = populations(psi, Basis::Bare);
    T::one() - p[ZERO]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationControl<T> {
    pub max_step: T,
    pub rel_tol: T,
    pub abs_tol: T,
    pub sample_every: Option<T>,
}

impl<T: Real> Default for PropagationControl<T> {
    fn default() -> Self {
        Self {
            max_step: T::lit(1e-4),
            rel_tol: T::lit(1e-9),
            abs_tol: T::lit(1e-12),
            sample_every: None,
        }
    }
}

impl<T: Real> PropagationControl<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > T::zero()) {
            return Err(invalid("max_step", "must be positive"));
        }
        if !(self.rel_tol > T::zero()) || !(self.abs_tol > T::zero()) {
            return Err(invalid("rel_tol", "tolerances must be positive"));
        }
        if let Some(s) = self.sample_every {
            if !(s > T::zero()) {
                return Err(invalid("sample_every", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn with_max_step(mut self, max_step: T) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: T) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_sampling(mut self, every: T) -> Self {
        self.sample_every = Some(every);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<StateVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&StateVector<T>> {
        self.states.last()
    }
}

/// ψ(duration) starting from ψ(0) = `psi` at generator time 0.
pub fn evolve<T: Real, G: Generator<T>>(
    psi: &StateVector<T>,
    gen: &G,
    duration: T,
    ctrl: &PropagationControl<T>,
) -> Result<StateVector<T>> {
    evolve_from(psi, gen, T::zero(), duration, ctrl)
}

/// ψ(t0 + duration) starting from ψ(t0) = `psi`.
pub fn evolve_from<T: Real, G: Generator<T>>(
    psi: &StateVector<T>,
    gen: &G,
    t0: T,
    duration: T,
    ctrl: &PropagationControl<T>,
) -> Result<StateVector<T>> {
    check_inputs(psi, gen, duration, ctrl)?;
    let mut v = to_interaction(psi, gen, t0);
    v = advance(gen, t0, t0 + duration, v, ctrl)?;
    Ok(from_interaction(v, psi.basis, gen, t0 + duration))
}

/// Like `evolve_from`, recording the state at t0, every `sample_every`, and
/// at the end.
pub fn evolve_trajectory<T: Real, G: Generator<T>>(
    psi: &StateVector<T>,
    gen: &G,
    t0: T,
    duration: T,
    ctrl: &PropagationControl<T>,
) -> Result<Trajectory<T>> {
    check_inputs(psi, gen, duration, ctrl)?;
    let t1 = t0 + duration;
    let mut times = vec![t0];
    let mut states = vec![*psi];
    let mut v = to_interaction(psi, gen, t0);
    let mut t = t0;
    let every = ctrl.sample_every.unwrap_or(duration);
    let mut k = 1usize;
    while t < t1 {
        let next = (t0 + T::from_usize(k).unwrap() * every).min(t1);
        let next = if t1 - next <= T::epsilon() * t1.abs().max(T::one()) * T::lit(8.0) { t1 } else { next };
        if next <= t {
            break;
        }
        v = advance(gen, t, next, v, ctrl)?;
        t = next;
        times.push(t);
        states.push(from_interaction(v, psi.basis, gen, t));
        k += 1;
    }
    Ok(Trajectory { times, states })
}

fn check_inputs<T: Real, G: Generator<T>>(
    psi: &StateVector<T>,
    gen: &G,
    duration: T,
    ctrl: &PropagationControl<T>,
) -> Result<()> {
    if psi.basis != gen.frame().basis() {
        return Err(Error::FrameMismatch {
            state: psi.basis.name(),
            frame: gen.frame().name(),
        });
    }
    if !(duration >= T::zero()) || !duration.is_finite() {
        return Err(invalid("duration", "must be finite and non-negative"));
    }
    ctrl.validate()?;
    if (psi.norm() - T::one()).abs() > norm_tolerance::<T>() {
        return Err(invalid("psi", "state must be normalized"));
    }
    Ok(())
}

fn dressed_phases<T: Real, G: Generator<T>>(gen: &G) -> Option<[T; 4]> {
    match gen.frame() {
        Frame::DressedInteraction => Some(dressed_energies(gen.dressing_rabi())),
        Frame::BareInteraction => None,
    }
}

fn to_interaction<T: Real, G: Generator<T>>(psi: &StateVector<T>, gen: &G, t: T) -> CVec<T, 4> {
    let mut v = psi.amplitudes;
    if let Some(e) = dressed_phases(gen) {
        for k in 0..4 {
            v[k] = v[k] * cis(e[k] * t);
        }
    }
    v
}

fn from_interaction<T: Real, G: Generator<T>>(mut v: CVec<T, 4>, basis: Basis, gen: &G, t: T) -> StateVector<T> {
    if let Some(e) = dressed_phases(gen) {
        for k in 0..4 {
            v[k] = v[k] * cis(-e[k] * t);
        }
    }
    StateVector { basis, amplitudes: v }
}

/// Step limit from the fastest explicit oscillation.
fn step_limit<T: Real, G: Generator<T>>(gen: &G, ctrl: &PropagationControl<T>) -> T {
    let f = gen.max_frequency();
    if f > T::zero() {
        ctrl.max_step.min(T::TAU() / f / T::lit(50.0))
    } else {
        ctrl.max_step
    }
}

fn advance<T: Real, G: Generator<T>>(
    gen: &G,
    t0: T,
    t1: T,
    mut v: CVec<T, 4>,
    ctrl: &PropagationControl<T>,
) -> Result<CVec<T, 4>> {
    if t1 <= t0 {
        return Ok(v);
    }
    let mut edges = vec![t0];
    edges.extend(gen.breakpoints(t0, t1));
    edges.push(t1);
    let h_max = step_limit(gen, ctrl);
    let exact = gen.is_piecewise_static();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        v = if exact {
            let h = gen.eval(T::half() * (a + b))?;
            exp_apply(&h, b - a, &v)
        } else {
            adaptive(gen, a, b, v, ctrl, h_max)?
        };
    }
    Ok(v)
}

/// exp(−iHt)ψ, diagonalizing when the phase is large.
fn exp_apply<T: Real>(h: &Mat4<T>, t: T, v: &CVec<T, 4>) -> CVec<T, 4> {
    if h.norm_inf() * t.abs() > T::lit(8.0) {
        h.unitary_exp(t).mul_vec(v)
    } else {
        h.apply_unitary_exp(t, v)
    }
}

fn cf4_step<T: Real, G: Generator<T>>(gen: &G, t: T, h: T, v: &CVec<T, 4>) -> Result<CVec<T, 4>> {
    let s3 = T::lit(3.0).sqrt();
    let c1 = T::half() - s3 / T::lit(6.0);
    let c2 = T::half() + s3 / T::lit(6.0);
    let a1 = (T::lit(3.0) - T::two() * s3) / T::lit(12.0);
    let a2 = (T::lit(3.0) + T::two() * s3) / T::lit(12.0);
    let h1 = gen.eval(t + c1 * h)?;
    let h2 = gen.eval(t + c2 * h)?;
    let first = h1.scale_real(a2) + h2.scale_real(a1);
    let second = h1.scale_real(a1) + h2.scale_real(a2);
    let w = first.apply_unitary_exp(h, v);
    Ok(second.apply_unitary_exp(h, &w))
}

fn adaptive<T: Real, G: Generator<T>>(
    gen: &G,
    a: T,
    b: T,
    mut v: CVec<T, 4>,
    ctrl: &PropagationControl<T>,
    h_max: T,
) -> Result<CVec<T, 4>> {
    let mut t = a;
    let mut h = h_max.min(b - a);
    let span = (b - a).max(a.abs()).max(b.abs());
    let h_min = T::epsilon() * span * T::lit(16.0);
    let fifteen = T::lit(15.0);
    while t < b {
        let last = h >= b - t;
        let step = if last { b - t } else { h };
        let big = cf4_step(gen, t, step, &v)?;
        let mid = cf4_step(gen, t, T::half() * step, &v)?;
        let small = cf4_step(gen, t + T::half() * step, T::half() * step, &mid)?;
        let mut err = T::zero();
        for k in 0..4 {
            err = err.max((small[k] - big[k]).norm());
        }
        err = err / fifteen;
        let tol = ctrl.abs_tol + ctrl.rel_tol * vec_norm(&v);
        let factor = if err > T::zero() {
            (T::lit(0.9) * (tol / err).powf(T::lit(0.2))).max(T::lit(0.2)).min(T::lit(4.0))
        } else {
            T::lit(4.0)
        };
        if err <= tol {
            v = small;
            t = if last { b } else { t + step };
            h = (step * factor).min(h_max);
        } else {
            h = step * factor.min(T::lit(0.9));
            if h < h_min {
                return Err(Error::StepUnderflow { t: t.to_f64_lossy() });
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{
        Channel, Drive, Envelope, HamiltonianGenerator, PiecewiseSignal, DARK, DOWN, DRESSED_ZERO_PRIME, MINUS, PLUS,
        UP, ZERO_PRIME,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2, TAU};

    fn clock(rabi: f64, detuning: f64) -> HamiltonianGenerator<f64> {
        HamiltonianGenerator::bare(0.0).with_drive(Drive::new(Channel::Clock, rabi).with_detuning(detuning))
    }

    fn ctrl() -> PropagationControl<f64> {
        PropagationControl::default()
    }

    #[test]
    fn zero_duration_is_identity() {
        let psi = StateVector::bare(ZERO);
        let out = evolve(&psi, &clock(1e4, 3e3), 0.0, &ctrl()).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn resonant_rabi_matches_formula() {
        let om = TAU * 35.7e3;
        let g = clock(om, 0.0);
        let psi = StateVector::bare(ZERO);
        let mut worst: f64 = 0.0;
        for k in 0..=40 {
            let t = 60e-6 * k as f64 / 40.0;
            let out = evolve(&psi, &g, t, &ctrl()).unwrap();
            let p = populations(&out, Basis::Bare)[ZERO_PRIME];
            worst = worst.max((p - (om * t / 2.0).sin().powi(2)).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn detuned_rabi_matches_generalized_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let om = TAU * rng.random_range(0.5e3..40e3);
            let delta = TAU * rng.random_range(-40e3..40e3);
            let t = rng.random_range(0.0..300e-6);
            let out = evolve(&StateVector::bare(ZERO), &clock(om, delta), t, &ctrl()).unwrap();
            let p = populations(&out, Basis::Bare)[ZERO_PRIME];
            let w = (om * om + delta * delta).sqrt();
            let oracle = om * om / (w * w) * (w * t / 2.0).sin().powi(2);
            worst = worst.max((p - oracle).abs());
        }
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn population_examples() {
        let zp = StateVector::<f64>::bare(ZERO_PRIME);
        assert_eq!(populations(&zp, Basis::Bare), [0.0, 1.0, 0.0, 0.0]);
        let pd = populations(&zp, Basis::Dressed);
        assert!((pd[DRESSED_ZERO_PRIME] - 1.0).abs() < 1e-15);
        let p = populations(&StateVector::<f64>::bare(PLUS), Basis::Dressed);
        assert_relative_eq!(p[DARK], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[UP], 0.25, epsilon = 1e-15);
        assert_relative_eq!(p[DOWN], 0.25, epsilon = 1e-15);
        assert_eq!(f1_population(&StateVector::<f64>::bare(ZERO)), 0.0);
        assert!((f1_population(&StateVector::<f64>::dressed(DARK)) - 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let sup = StateVector::new(Basis::Bare, [cr(h), cr(h), cr(0.0), cr(0.0)]).unwrap();
        assert!((f1_population(&sup) - 0.5).abs() < 1e-15);
        assert!(StateVector::new(Basis::Bare, [cr(1.0), cr(1.0), cr(0.0), cr(0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn basis_round_trip(re in proptest::array::uniform4(-1.0f64..1.0), im in proptest::array::uniform4(-1.0f64..1.0)) {
            let amps = [0, 1, 2, 3].map(|k| Complex::new(re[k], im[k]));
            prop_assume!(vec_norm(&amps) > 1e-3);
            let psi = StateVector { basis: Basis::Bare, amplitudes: amps }.normalized();
            let back = psi.to_basis(Basis::Dressed).to_basis(Basis::Bare);
            for k in 0..4 {
                prop_assert!((back.amplitudes[k] - psi.amplitudes[k]).norm() < 1e-12);
            }
            let p = populations(&psi, Basis::Dressed);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn rf_frames_agree(dp_khz in -30.0f64..70.0, t_us in 0.0f64..400.0, phase in -PI..PI) {
            let om_mw = TAU * 23e3 * SQRT_2;
            let split = TAU * 39e3;
            let drive = Drive::rf(TAU * 1.2e3, TAU * 1e3 * dp_khz).with_phase(phase);
            let bare = HamiltonianGenerator::bare(split).with_dressing(om_mw).with_drive(drive);
            let dressed = HamiltonianGenerator::dressed(om_mw, split).with_drive(drive);
            let psi = StateVector::<f64>::bare(ZERO_PRIME);
            let t0 = 13e-6;
            let t = t_us * 1e-6;
            let a = evolve_from(&psi, &bare, t0, t, &ctrl()).unwrap();
            let b = evolve_from(&psi.to_basis(Basis::Dressed), &dressed, t0, t, &ctrl()).unwrap();
            let pa = populations(&a, Basis::Bare);
            let pb = populations(&b, Basis::Bare);
            for k in 0..4 {
                prop_assert!((pa[k] - pb[k]).abs() < 1e-6, "{pa:?} {pb:?}");
            }
            prop_assert!((a.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn static_time_reversal(om in 1e3f64..1e5, split in 0.0f64..1e5, t in 0.0f64..1e-3) {
            let g = HamiltonianGenerator::bare(split).with_dressing(om).with_drive(Drive::new(Channel::Clock, 0.3 * om));
            let psi = StateVector::<f64>::bare(PLUS);
            let fwd = evolve(&psi, &g, t, &ctrl()).unwrap();
            let back = evolve(&fwd, &Negated(&g), t, &ctrl()).unwrap();
            for k in 0..4 {
                prop_assert!((back.amplitudes[k] - psi.amplitudes[k]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn norm_is_kept_over_long_schedules() {
        let om_mw = TAU * 31e3;
        let g = HamiltonianGenerator::dressed(om_mw, TAU * 38.7e3).with_drive(Drive::rf(TAU * 2e3, TAU * 7e3));
        let out = evolve(&StateVector::dressed(DRESSED_ZERO_PRIME), &g, 10e-3, &ctrl()).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-9, "{}", out.norm());
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let g = HamiltonianGenerator::dressed(1.0, 1.0);
        let err = evolve(&StateVector::<f64>::bare(ZERO), &g, 1.0, &ctrl()).unwrap_err();
        assert!(matches!(err, Error::FrameMismatch { .. }));
        assert!(evolve(&StateVector::<f64>::bare(ZERO), &clock(1.0, 0.0), -1.0, &ctrl()).is_err());
    }

    #[test]
    fn halving_the_step_changes_little() {
        let g = HamiltonianGenerator::bare(TAU * 39e3)
            .with_drive(Drive::new(Channel::MwPlus, TAU * 30e3).with_envelope(Envelope::Gaussian { center: 150e-6, sigma: 50e-6 }))
            .with_drive(Drive::new(Channel::MwMinus, TAU * 30e3).with_envelope(Envelope::Gaussian { center: 200e-6, sigma: 50e-6 }));
        let psi = StateVector::bare(MINUS);
        let a = evolve(&psi, &g, 400e-6, &ctrl().with_max_step(2e-6)).unwrap();
        let b = evolve(&psi, &g, 400e-6, &ctrl().with_max_step(1e-6)).unwrap();
        let (pa, pb) = (populations(&a, Basis::Bare), populations(&b, Basis::Bare));
        for k in 0..4 {
            assert!((pa[k] - pb[k]).abs() < 1e-9, "{pa:?} {pb:?}");
        }
    }

    #[test]
    fn magnus_scheme_is_fourth_order() {
        // fixed-step error against a very fine reference for a chirped drive
        let g = clock(TAU * 20e3, TAU * 15e3);
        let psi: CVec<f64, 4> = StateVector::bare(ZERO).amplitudes;
        let run = |n: usize| {
            let h = 100e-6 / n as f64;
            let mut v = psi;
            for k in 0..n {
                v = cf4_step(&g, k as f64 * h, h, &v).unwrap();
            }
            v
        };
        let reference = run(4096);
        let err = |n: usize| {
            let v = run(n);
            (0..4).map(|k| (v[k] - reference[k]).norm()).fold(0.0, f64::max)
        };
        let order = (err(16) / err(32)).log2();
        assert!((order - 4.0).abs() < 0.3, "{order}");
    }

    #[test]
    fn sampled_trajectory() {
        let g = clock(TAU * 10e3, 0.0);
        let tr = evolve_trajectory(&StateVector::bare(ZERO), &g, 0.0, 100e-6, &ctrl().with_sampling(10e-6)).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let p = populations(&tr.states[5], Basis::Bare)[ZERO_PRIME];
        assert!((p - (TAU * 10e3 * 50e-6 / 2.0).sin().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn piecewise_noise_uses_breakpoints() {
        // a constant-per-segment Zeeman shift on |+1⟩ accumulates a phase ∫λ dt
        let sig = PiecewiseSignal::new(1e-6, vec![1e4, -3e4, 2e4]);
        let g = HamiltonianGenerator::bare(0.0).with_zeeman(sig);
        let out = evolve(&StateVector::bare(PLUS), &g, 3e-6, &ctrl()).unwrap();
        let phase = out.amplitudes[PLUS].arg();
        assert!((phase - 0.0).abs() < 1e-12, "{phase}");
        let out = evolve(&StateVector::bare(PLUS), &g, 2.5e-6, &ctrl()).unwrap();
        assert!((out.amplitudes[PLUS].arg() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn single_precision_rabi() {
        let g = HamiltonianGenerator::<f32>::bare(0.0).with_drive(Drive::new(Channel::Clock, 1000.0));
        let c = PropagationControl::<f32> { rel_tol: 1e-5, abs_tol: 1e-6, ..Default::default() };
        let out = evolve(&StateVector::bare(ZERO), &g, std::f32::consts::PI / 1000.0, &c).unwrap();
        assert!((populations(&out, Basis::Bare)[ZERO_PRIME] - 1.0).abs() < 1e-5);
    }
}
