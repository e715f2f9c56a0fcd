//! Ground-state hyperfine structure of ¹⁷¹Yb⁺ in a magnetic field, ion-chain
//! geometry and the clock-transition splittings used for addressing ions in
//! a field gradient.
//!
//! Frequencies are angular (rad/s), fields in Tesla, lengths in metres.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::solve_real;
use crate::scalar::{hz_to_angular, Real};

const HBAR: f64 = 1.054_571_817e-34;
const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// e²/(4πε₀) in N·m².
const COULOMB_TERM: f64 = 2.307_077_552e-28;

/// Zero-field F=0 ↔ F=1 splitting of ¹⁷¹Yb⁺, Hz.
pub const HYPERFINE_SPLITTING_HZ: f64 = 12_642_812_100.0;
/// Electronic g-factor of the ²S₁/₂ level.
pub const DEFAULT_G_J: f64 = 2.0025;
pub const DEFAULT_ION_MASS_AMU: f64 = 171.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants<T> {
    /// Zero-field hyperfine splitting, rad/s.
    pub omega0: T,
    pub g_j: T,
    /// μ_B/ħ in (rad/s)/T.
    pub mu_b_over_hbar: T,
    /// Ion mass, kg.
    pub ion_mass: T,
    /// e²/(4πε₀), N·m².
    pub coulomb_constant_term: T,
}

impl<T: Real> Default for PhysicalConstants<T> {
    fn default() -> Self {
        Self {
            omega0: hz_to_angular(T::lit(HYPERFINE_SPLITTING_HZ)),
            g_j: T::lit(DEFAULT_G_J),
            mu_b_over_hbar: T::lit(BOHR_MAGNETON / HBAR),
            ion_mass: T::lit(DEFAULT_ION_MASS_AMU * ATOMIC_MASS_UNIT),
            coulomb_constant_term: T::lit(COULOMB_TERM),
        }
    }
}

impl<T: Real> PhysicalConstants<T> {
    pub fn with_g_j(mut self, g_j: T) -> Self {
        self.g_j = g_j;
        self
    }

    pub fn with_ion_mass_amu(mut self, amu: T) -> Self {
        self.ion_mass = amu * T::lit(ATOMIC_MASS_UNIT);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega0", self.omega0),
            ("g_j", self.g_j),
            ("mu_b_over_hbar", self.mu_b_over_hbar),
            ("ion_mass", self.ion_mass),
            ("coulomb_constant_term", self.coulomb_constant_term),
        ];
        for (name, v) in fields {
            if !(v > T::zero() && v.is_finite()) {
                return Err(invalid(name, "must be finite and strictly positive"));
            }
        }
        Ok(())
    }

    /// dχ/dB in 1/T.
    pub fn chi_per_tesla(&self) -> T {
        self.g_j * self.mu_b_over_hbar / self.omega0
    }
}

/// The three transition frequencies out of |0'⟩ = |F=1, m=0⟩ at one field:
/// |0'⟩↔|+1⟩, |0'⟩↔|−1⟩ and the |0⟩↔|0'⟩ clock line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionFrequencies<T> {
    pub omega_plus: T,
    pub omega_minus: T,
    pub omega_clock: T,
}

impl<T: Real> TransitionFrequencies<T> {
    /// ω_minus − ω_plus, the second-order Zeeman separation of the two RF
    /// lines.
    pub fn field_splitting(&self) -> T {
        self.omega_minus - self.omega_plus
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
    Clock,
}

/// Field at the chain centre and a uniform axial gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagneticEnvironment<T> {
    /// Tesla, at the trap centre (z = 0).
    pub b_offset: T,
    /// Tesla per metre.
    pub gradient: T,
}

impl<T: Real> MagneticEnvironment<T> {
    pub fn uniform(b: T) -> Self {
        Self {
            b_offset: b,
            gradient: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_offset >= T::zero() && self.b_offset.is_finite()) {
            return Err(invalid("b_offset", "must be finite and non-negative"));
        }
        if !self.gradient.is_finite() {
            return Err(invalid("gradient", "must be finite"));
        }
        Ok(())
    }

    pub fn field_at(&self, z: T) -> T {
        self.b_offset + z * self.gradient
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonChainGeometry<T> {
    pub n_ions: usize,
    /// Axial secular frequency, rad/s.
    pub secular_freq: T,
    /// Equilibrium positions, metres, ascending and centred on z = 0.
    pub positions: Vec<T>,
}

impl<T: Real> IonChainGeometry<T> {
    pub fn distance(&self, i: usize, j: usize) -> T {
        (self.positions[j] - self.positions[i]).abs()
    }
}

/// χ = g_J μ_B B / ħω₀.
pub fn chi<T: Real>(b: T, constants: &PhysicalConstants<T>) -> Result<T> {
    if !(b >= T::zero()) || !b.is_finite() {
        return Err(invalid("b", "magnetic field must be finite and non-negative"));
    }
    Ok(constants.g_j * constants.mu_b_over_hbar * b / constants.omega0)
}

/// Breit-Rabi frequencies as a function of χ. The `1 − √(1+χ²)` differences
/// are rewritten as `−χ²/(1+√(1+χ²))`, which is algebraically identical but
/// free of cancellation at small χ.
pub fn frequencies_from_chi<T: Real>(chi: T, omega0: T) -> TransitionFrequencies<T> {
    let root = (T::one() + chi * chi).sqrt();
    let second_order = chi * chi / (T::one() + root);
    TransitionFrequencies {
        omega_plus: omega0 * T::half() * (chi - second_order),
        omega_minus: omega0 * T::half() * (chi + second_order),
        omega_clock: omega0 * root,
    }
}

pub fn transition_frequencies<T: Real>(
    b: T,
    constants: &PhysicalConstants<T>,
) -> Result<TransitionFrequencies<T>> {
    let x = chi(b, constants)?;
    Ok(frequencies_from_chi(x, constants.omega0))
}

/// Analytic field derivatives (dω_plus/dB, dω_minus/dB, dω_clock/dB) in
/// (rad/s)/T.
pub fn field_sensitivities<T: Real>(
    b: T,
    constants: &PhysicalConstants<T>,
) -> Result<TransitionFrequencies<T>> {
    let x = chi(b, constants)?;
    let k = constants.chi_per_tesla();
    let w0 = constants.omega0;
    let ratio = x / (T::one() + x * x).sqrt();
    Ok(TransitionFrequencies {
        omega_plus: w0 * T::half() * (T::one() - ratio) * k,
        omega_minus: w0 * T::half() * (T::one() + ratio) * k,
        omega_clock: w0 * ratio * k,
    })
}

fn branch_value<T: Real>(chi: T, omega0: T, which: Branch) -> T {
    let f = frequencies_from_chi(chi, omega0);
    match which {
        Branch::Plus => f.omega_plus,
        Branch::Minus => f.omega_minus,
        Branch::Clock => f.omega_clock,
    }
}

fn branch_slope<T: Real>(chi: T, omega0: T, which: Branch) -> T {
    let ratio = chi / (T::one() + chi * chi).sqrt();
    match which {
        Branch::Plus => omega0 * T::half() * (T::one() - ratio),
        Branch::Minus => omega0 * T::half() * (T::one() + ratio),
        Branch::Clock => omega0 * ratio,
    }
}

/// Inverts the Breit-Rabi relation for the field giving `target` on the
/// chosen branch, by bracketed Newton iteration on the exact expressions.
pub fn solve_field<T: Real>(target: T, which: Branch, constants: &PhysicalConstants<T>) -> Result<T> {
    constants.validate()?;
    let w0 = constants.omega0;
    if !target.is_finite() || target < T::zero() {
        return Err(invalid("target", "must be finite and non-negative"));
    }
    match which {
        Branch::Clock if target < w0 => {
            return Err(invalid("target", "clock frequency below its zero-field value"));
        }
        Branch::Clock if target == w0 => return Ok(T::zero()),
        Branch::Plus if target >= w0 * T::half() => {
            return Err(invalid("target", "ω_plus saturates at ω₀/2"));
        }
        _ if target == T::zero() => return Ok(T::zero()),
        _ => {}
    }
    let residual = |x: T| branch_value(x, w0, which) - target;
    let mut lo = T::zero();
    let mut hi = T::lit(1e-3);
    let mut expansions = 0;
    while residual(hi) < T::zero() {
        lo = hi;
        hi = hi * T::lit(4.0);
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(Error::NoConvergence("could not bracket the target field".into()));
        }
    }
    let mut x = T::half() * (lo + hi);
    for _ in 0..200 {
        let f = residual(x);
        if (f / target).abs() < T::lit(1e-14) || (hi - lo) <= T::epsilon() * hi {
            return Ok(x / constants.chi_per_tesla());
        }
        if f > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let slope = branch_slope(x, w0, which);
        let newton = x - f / slope;
        x = if slope > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            T::half() * (lo + hi)
        };
    }
    let f = residual(x);
    if (f / target).abs() < T::lit(1e-12) {
        Ok(x / constants.chi_per_tesla())
    } else {
        Err(Error::NoConvergence(format!(
            "field inversion stalled with relative residual {:e}",
            (f / target).to_f64_lossy()
        )))
    }
}

/// Characteristic length (e²/4πε₀ / Mν²)^{1/3} of a linear Coulomb crystal.
pub fn chain_length_scale<T: Real>(nu: T, constants: &PhysicalConstants<T>) -> T {
    (constants.coulomb_constant_term / (constants.ion_mass * nu * nu)).cbrt()
}

fn dimensionless_energy<T: Real>(u: &[T]) -> T {
    let mut e = u.iter().map(|&x| T::half() * x * x).sum::<T>();
    for i in 0..u.len() {
        for j in (i + 1)..u.len() {
            e += T::one() / (u[j] - u[i]).abs();
        }
    }
    e
}

fn dimensionless_gradient<T: Real>(u: &[T]) -> Vec<T> {
    let n = u.len();
    let mut g: Vec<T> = u.to_vec();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = u[i] - u[j];
                g[i] -= d.signum() / (d * d);
            }
        }
    }
    g
}

fn dimensionless_hessian<T: Real>(u: &[T]) -> Vec<Vec<T>> {
    let n = u.len();
    let mut h = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        h[i][i] = T::one();
        for j in 0..n {
            if i != j {
                let k = T::two() / (u[i] - u[j]).abs().powi(3);
                h[i][i] += k;
                h[i][j] = -k;
            }
        }
    }
    h
}

/// Axial equilibrium positions of `n` ions in a harmonic well of secular
/// frequency `nu`, found by damped Newton minimization of the harmonic plus
/// Coulomb energy.
pub fn equilibrium_positions<T: Real>(
    n: usize,
    nu: T,
    constants: &PhysicalConstants<T>,
) -> Result<IonChainGeometry<T>> {
    if n == 0 {
        return Err(invalid("n", "need at least one ion"));
    }
    if !(nu > T::zero() && nu.is_finite()) {
        return Err(invalid("nu", "secular frequency must be positive"));
    }
    constants.validate()?;
    let scale = chain_length_scale(nu, constants);
    if n == 1 {
        return Ok(IonChainGeometry {
            n_ions: 1,
            secular_freq: nu,
            positions: vec![T::zero()],
        });
    }
    // Spacing estimate for the chain centre, ≈ 2 n^-0.56 in units of `scale`.
    let spacing = T::two() * T::from_usize(n).unwrap().powf(T::lit(-0.56));
    let mid = T::from_usize(n - 1).unwrap() * T::half();
    let mut u: Vec<T> = (0..n)
        .map(|k| (T::from_usize(k).unwrap() - mid) * spacing)
        .collect();
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
    let mut converged = false;
    for _ in 0..200 {
        let g = dimensionless_gradient(&u);
        let gnorm = g.iter().map(|&x| x * x).sum::<T>().sqrt();
        if gnorm <= tol {
            converged = true;
            break;
        }
        let h = dimensionless_hessian(&u);
        let neg: Vec<T> = g.iter().map(|&x| -x).collect();
        let step = solve_real(&h, &neg, T::epsilon())
            .ok_or_else(|| Error::NoConvergence("singular Hessian in chain minimization".into()))?;
        let e0 = dimensionless_energy(&u);
        let slope: T = g.iter().zip(&step).map(|(&a, &b)| a * b).sum();
        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = u.iter().zip(&step).map(|(&x, &s)| x + alpha * s).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                let e1 = dimensionless_energy(&trial);
                if e1 <= e0 + T::lit(1e-4) * alpha * slope || gnorm < T::lit(1e-6) {
                    u = trial;
                    accepted = true;
                    break;
                }
            }
            alpha = alpha * T::half();
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        let g = dimensionless_gradient(&u);
        let gnorm = g.iter().map(|&x| x * x).sum::<T>().sqrt();
        if gnorm > tol {
            return Err(Error::NoConvergence(format!(
                "ion chain minimization stopped at force norm {:e}",
                gnorm.to_f64_lossy()
            )));
        }
    }
    let centroid = u.iter().copied().sum::<T>() / T::from_usize(n).unwrap();
    Ok(IonChainGeometry {
        n_ions: n,
        secular_freq: nu,
        positions: u.iter().map(|&x| (x - centroid) * scale).collect(),
    })
}

/// |ω_clock(B_i) − ω_clock(B_j)| for two ions of a chain sitting in a field
/// gradient, with B_k = b_offset + z_k·∂B.
pub fn clock_splitting<T: Real>(
    env: &MagneticEnvironment<T>,
    geom: &IonChainGeometry<T>,
    i: usize,
    j: usize,
    constants: &PhysicalConstants<T>,
) -> Result<T> {
    if i == j {
        return Err(invalid("j", "ion indices must differ"));
    }
    if i >= geom.n_ions || j >= geom.n_ions {
        return Err(invalid("i", "ion index out of range"));
    }
    env.validate()?;
    if let Some(z) = geom.positions.iter().find(|&&z| env.field_at(z) < T::zero()) {
        return Err(invalid(
            "b_offset",
            format!("field is negative at ion position {:e} m", z.to_f64_lossy()),
        ));
    }
    let b_i = env.field_at(geom.positions[i]);
    let d_ij = geom.positions[j] - geom.positions[i];
    let b_j = b_i + d_ij * env.gradient;
    let wi = transition_frequencies(b_i, constants)?.omega_clock;
    let wj = transition_frequencies(b_j, constants)?.omega_clock;
    Ok((wi - wj).abs())
}

/// Finds the centre field for which two ions' clock lines are split by
/// `target` (rad/s) at the given gradient. The splitting grows
/// monotonically with the offset, so plain bisection suffices.
pub fn solve_offset_for_splitting<T: Real>(
    target: T,
    gradient: T,
    geom: &IonChainGeometry<T>,
    i: usize,
    j: usize,
    constants: &PhysicalConstants<T>,
) -> Result<T> {
    if !(target > T::zero()) {
        return Err(invalid("target", "splitting must be positive"));
    }
    if gradient == T::zero() {
        return Err(invalid("gradient", "a uniform field gives no splitting"));
    }
    let lowest = geom
        .positions
        .iter()
        .map(|&z| -z * gradient)
        .fold(T::zero(), |m, v| m.max(v));
    let split = |b: T| {
        clock_splitting(
            &MagneticEnvironment {
                b_offset: b,
                gradient,
            },
            geom,
            i,
            j,
            constants,
        )
    };
    let mut lo = lowest;
    if split(lo)? > target {
        return Err(invalid("target", "splitting already exceeded at the smallest admissible offset"));
    }
    let mut hi = lo + T::lit(1e-3);
    let mut guard = 0;
    while split(hi)? < target {
        hi = hi * T::two();
        guard += 1;
        if guard > 100 {
            return Err(Error::NoConvergence("splitting target not reachable".into()));
        }
    }
    for _ in 0..200 {
        let mid = T::half() * (lo + hi);
        if split(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi * T::lit(4.0) {
            break;
        }
    }
    Ok(T::half() * (lo + hi))
}

/// Fractional off-resonant excitation (Ω/Δ)² of a line detuned by
/// `separation` while another is driven at Rabi frequency `rabi`.
pub fn crosstalk_ratio<T: Real>(rabi: T, separation: T) -> Result<T> {
    if separation == T::zero() || !separation.is_finite() {
        return Err(invalid("separation", "must be finite and non-zero"));
    }
    let r = rabi / separation;
    Ok(r * r)
}
