//! Qutrit state tomography over {|D⟩, |u⟩, |d⟩}: seven rotation settings,
//! each read out by mapping every dressed state in turn to |0'⟩.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_clock_detect, composite_rotation, rf_line, run, ExperimentModel, PrepTarget, Protocol, RunOptions,
    SequenceStep,
};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{DressedState, DRESSED_ZERO_PRIME};
use crate::linalg::{c, cis, cr, least_squares, CVec, Mat3, Mat4};
use crate::scalar::Real;

/// Readout order within each setting.
pub const READOUTS: [DressedState; 3] = DressedState::ALL;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TomographySetting<T> {
    /// Read the populations directly.
    Populations,
    /// π/2 composite rotation between `partner` and `pivot` before readout.
    Coherence {
        pivot: DressedState,
        partner: DressedState,
        phase: T,
    },
}

/// Populations plus both quadratures of each of the three coherences.
pub fn tomography_settings<T: Real>() -> Vec<TomographySetting<T>> {
    use DressedState::*;
    let mut out = vec![TomographySetting::Populations];
    for (pivot, partner) in [(Up, Dark), (Down, Dark), (Down, Up)] {
        for phase in [T::zero(), T::FRAC_PI_2()] {
            out.push(TomographySetting::Coherence { pivot, partner, phase });
        }
    }
    out
}

/// Stationary-line RF pulse in the dressed interaction picture:
/// exp(−i(θ/2)(e^{−iφ}|X⟩⟨0'| + h.c.)) for rotation angle θ.
pub fn ideal_rf_unitary<T: Real>(target: DressedState, area: T, phase: T) -> Mat4<T> {
    let mut h = Mat4::zeros();
    let g = cis(-phase) * (area * T::half());
    h.0[target.index()][DRESSED_ZERO_PRIME] = g;
    h.0[DRESSED_ZERO_PRIME][target.index()] = g.conj();
    h.unitary_exp(T::one())
}

fn setting_unitary<T: Real>(s: &TomographySetting<T>) -> Mat4<T> {
    match *s {
        TomographySetting::Populations => Mat4::identity(),
        TomographySetting::Coherence { pivot, partner, phase } => {
            let swap = ideal_rf_unitary(pivot, T::PI(), T::zero());
            swap * ideal_rf_unitary(partner, T::FRAC_PI_2(), phase) * swap
        }
    }
}

/// Hermitian basis: E_kk, then E_ij + E_ji and i(E_ij − E_ji) for each pair.
const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn basis_element<T: Real>(k: usize) -> Mat3<T> {
    let mut m = Mat3::zeros();
    match k {
        0..=2 => m.0[k][k] = cr(T::one()),
        3..=5 => {
            let (i, j) = PAIRS[k - 3];
            m.0[i][j] = cr(T::one());
            m.0[j][i] = cr(T::one());
        }
        _ => {
            let (i, j) = PAIRS[k - 6];
            m.0[i][j] = c(T::zero(), T::one());
            m.0[j][i] = c(T::zero(), -T::one());
        }
    }
    m
}

fn from_parameters<T: Real>(x: &[T]) -> Mat3<T> {
    let mut m = Mat3::zeros();
    for (k, &v) in x.iter().enumerate() {
        m = m + basis_element::<T>(k).scale_real(v);
    }
    m
}

/// Row (setting, readout) maps the nine Hermitian parameters of ρ to the
/// dark probability under ideal stationary pulses.
pub fn design_matrix<T: Real>(settings: &[TomographySetting<T>]) -> Vec<Vec<T>> {
    let mut rows = Vec::with_capacity(settings.len() * READOUTS.len());
    for s in settings {
        let v = setting_unitary(s);
        for r in READOUTS {
            let w = ideal_rf_unitary(r, T::PI(), T::zero()) * v;
            // ⟨0'|W V restricted to the qutrit block
            let bra: [Complex<T>; 3] = [
                w.0[DRESSED_ZERO_PRIME][0],
                w.0[DRESSED_ZERO_PRIME][1],
                w.0[DRESSED_ZERO_PRIME][2],
            ];
            let row = (0..9)
                .map(|k| {
                    let b = basis_element::<T>(k);
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for i in 0..3 {
                        for j in 0..3 {
                            acc += bra[i] * b.0[i][j] * bra[j].conj();
                        }
                    }
                    acc.re
                })
                .collect();
            rows.push(row);
        }
    }
    rows
}

/// Euclidean projection of `v` onto the probability simplex.
fn project_simplex<T: Real>(v: &[T]) -> Vec<T> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - T::one()) / T::from_usize(j + 1).unwrap();
        if x - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

/// Nearest (Frobenius) positive-semidefinite unit-trace matrix.
pub fn project_to_density<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let herm = (*m + m.adjoint()).scale_real(T::half());
    let (vals, vecs) = herm.eigh();
    let p = project_simplex(&vals);
    let mut d = Mat3::zeros();
    for k in 0..3 {
        d.0[k][k] = cr(p[k]);
    }
    vecs * d * vecs.adjoint()
}

/// ⟨ψ|ρ|ψ⟩ with ψ normalized.
pub fn fidelity<T: Real>(rho: &Mat3<T>, psi: &CVec<T, 3>) -> T {
    let n: T = psi.iter().map(|a| a.norm_sqr()).sum();
    let v = rho.mul_vec(psi);
    let mut acc = Complex::new(T::zero(), T::zero());
    for k in 0..3 {
        acc += psi[k].conj() * v[k];
    }
    acc.re / n
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<T> {
    /// Unconstrained least-squares estimate.
    pub linear: Mat3<T>,
    /// Projected density matrix.
    pub rho: Mat3<T>,
}

/// Reconstructs ρ (dressed interaction picture) from the 21 dark
/// probabilities ordered as in `tomography_settings` × `READOUTS`.
pub fn reconstruct<T: Real>(probabilities: &[T]) -> Result<Reconstruction<T>> {
    let settings = tomography_settings::<T>();
    let rows = design_matrix(&settings);
    if probabilities.len() != rows.len() {
        return Err(invalid(
            "probabilities",
            format!("expected {} values, got {}", rows.len(), probabilities.len()),
        ));
    }
    let x = least_squares(&rows, probabilities, T::lit(1e-10)).ok_or(Error::SingularDesign)?;
    let linear = from_parameters(&x);
    Ok(Reconstruction {
        rho: project_to_density(&linear),
        linear,
    })
}

fn setting_protocol<T: Real>(
    s: &TomographySetting<T>,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
) -> Result<Protocol<T>> {
    match *s {
        TomographySetting::Populations => Ok(Protocol::new("identity", "", Vec::new())),
        TomographySetting::Coherence { pivot, partner, phase } => {
            composite_rotation(pivot, partner, T::FRAC_PI_2(), phase, model, omega_mw, rabi_rf)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyResult<T> {
    pub probabilities: Vec<T>,
    pub reconstruction: Reconstruction<T>,
}

/// Runs every setting/readout after `prepare` (which must leave dressing on
/// at `omega_mw`) and reconstructs the qutrit density matrix.
pub fn tomography_readout<T: Real>(
    prepare: &Protocol<T>,
    model: &ExperimentModel<T>,
    omega_mw: T,
    rabi_rf: T,
    options: &RunOptions<T>,
) -> Result<TomographyResult<T>> {
    let settings = tomography_settings::<T>();
    let mut jobs = Vec::new();
    for s in &settings {
        let rot = setting_protocol(s, model, omega_mw, rabi_rf)?;
        for r in READOUTS {
            let detect = build_clock_detect(PrepTarget::from(r), model, omega_mw, rabi_rf)?;
            jobs.push(prepare.clone().then(&rot).then(&detect));
        }
    }
    let probabilities = jobs
        .par_iter()
        .map(|p| {
            let out = run(p, model, options)?;
            let f1 = out.measurements.last().map_or(out.f1_population, |m| m.f1_population);
            Ok(T::one() - f1)
        })
        .collect::<Result<Vec<T>>>()?;
    let reconstruction = reconstruct(&probabilities)?;
    Ok(TomographyResult {
        probabilities,
        reconstruction,
    })
}

/// Qutrit amplitudes the RF pulses of `protocol` would produce from |0'⟩
/// with ideal stationary lines, in the dressed interaction picture. Pulses
/// off the three stationary lines are rejected.
pub fn ideal_qutrit_state<T: Real>(protocol: &Protocol<T>, omega_mw: T) -> Result<CVec<T, 3>> {
    let mut psi: CVec<T, 4> = [cr(T::zero()); 4];
    psi[DRESSED_ZERO_PRIME] = cr(T::one());
    let tol = T::lit(1e-9) * omega_mw.max(T::one());
    for (index, step) in protocol.steps.iter().enumerate() {
        if let SequenceStep::RfPulse {
            rabi,
            detuning_plus,
            phase,
            duration,
        } = *step
        {
            let target = DressedState::ALL
                .into_iter()
                .find(|&s| (rf_line(s, omega_mw).0 - detuning_plus).abs() <= tol)
                .ok_or_else(|| Error::IllegalStep {
                    index,
                    reason: "RF pulse is not on a stationary line".into(),
                })?;
            let (_, factor) = rf_line(target, omega_mw);
            psi = ideal_rf_unitary(target, factor * rabi * duration, phase).mul_vec(&psi);
        }
    }
    Ok([psi[0], psi[1], psi[2]])
}

#[cfg(test)]
mod tests {
    use super::super::{build_clock_prepare, composite_ud_rotation};
    use super::*;
    use crate::atomphys::PhysicalConstants;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, SQRT_2, TAU};

    fn ideal_probabilities(rho: &Mat3<f64>) -> Vec<f64> {
        let rows = design_matrix(&tomography_settings::<f64>());
        let mut x = vec![0.0; 9];
        for k in 0..3 {
            x[k] = rho.0[k][k].re;
        }
        for (p, &(i, j)) in PAIRS.iter().enumerate() {
            x[3 + p] = rho.0[i][j].re;
            x[6 + p] = rho.0[i][j].im;
        }
        rows.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn design_is_informationally_complete() {
        let rho = {
            let psi = [c(0.6, 0.0), c(0.0, 0.48), c(-0.64, 0.0)];
            Mat3::outer(&psi, &psi)
        };
        let rec = reconstruct(&ideal_probabilities(&rho)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((rec.linear.0[i][j] - rho.0[i][j]).norm() < 1e-12);
                assert!((rec.rho.0[i][j] - rho.0[i][j]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_is_a_density_matrix() {
        let mut m = Mat3::<f64>::identity().scale_real(0.5);
        m.0[0][0] = cr(-0.2);
        m.0[0][1] = c(0.3, 0.1);
        m.0[1][0] = c(0.3, -0.1);
        let p = project_to_density(&m);
        assert!((p.trace().re - 1.0).abs() < 1e-12);
        assert!(p.eigh().0[0] >= -1e-12);
        assert!(p.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn mixed_input_reconstructs_to_identity_third() {
        let mut probs = vec![0.0; 21];
        for s in DressedState::ALL {
            let mut psi = [cr(0.0); 3];
            psi[s.index()] = cr(1.0);
            for (a, b) in probs.iter_mut().zip(ideal_probabilities(&Mat3::outer(&psi, &psi))) {
                *a += b / 3.0;
            }
        }
        let rho = reconstruct(&probs).unwrap().rho;
        let diff = rho - Mat3::identity().scale_real(1.0 / 3.0);
        // trace distance of a Hermitian difference: half the sum of |eigenvalues|
        let td: f64 = diff.eigh().0.iter().map(|x| x.abs()).sum::<f64>() / 2.0;
        assert!(td < 1e-9);
    }

    #[test]
    fn simulated_tomography() {
        let m = ExperimentModel::from_field_splitting(TAU * 39e3, PhysicalConstants::default())
            .unwrap()
            .with_pump_infidelity(0.0);
        // AC Stark shifts from the other five lines cost ~1% of coherence
        // fidelity at 0.63 kHz, so drive three times weaker
        let w = TAU * 23e3 * SQRT_2;
        let rf = TAU * 0.2e3 * SQRT_2;
        let opts = RunOptions::default();
        let prep = build_clock_prepare(PrepTarget::Dark, &m, w, rf).unwrap();
        let res = tomography_readout(&prep, &m, w, rf, &opts).unwrap();
        let psi = ideal_qutrit_state(&prep, w).unwrap();
        let f = fidelity(&res.reconstruction.rho, &psi);
        assert!(f >= 0.99, "D fidelity {}", f);

        let sup = build_clock_prepare(PrepTarget::Up, &m, w, rf)
            .unwrap()
            .then(&composite_ud_rotation(FRAC_PI_2, 0.0, &m, w, rf).unwrap());
        let res = tomography_readout(&sup, &m, w, rf, &opts).unwrap();
        let rho = res.reconstruction.rho;
        assert!(rho.0[1][2].norm() >= 0.45, "{:?}", rho);
        let psi = ideal_qutrit_state(&sup, w).unwrap();
        assert!((psi[1].norm() - FRAC_1_SQRT_2).abs() < 1e-9);
        let f = fidelity(&rho, &psi);
        assert!(f >= 0.99, "superposition fidelity {}", f);
    }
}
