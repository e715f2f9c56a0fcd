//! Hamiltonian generators for the four ground states of ¹⁷¹Yb⁺ under
//! microwave dressing, RF and clock drives, and magnetic-field noise.
//!
//! All generators are returned with ħ factored out (entries in rad/s), in
//! the interaction picture with respect to the atomic Hamiltonian and after
//! the rotating-wave approximation.
//!
//! Bare basis order: |0⟩, |0'⟩, |+1⟩, |−1⟩.
//! Dressed basis order: |D⟩, |u⟩, |d⟩, |0'⟩.

use std::sync::Arc;

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::atomphys::TransitionFrequencies;
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, cis, cr, Mat4};
use crate::scalar::{angular_to_hz, Real};

pub const ZERO: usize = 0;
pub const ZERO_PRIME: usize = 1;
pub const PLUS: usize = 2;
pub const MINUS: usize = 3;

pub const DARK: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
/// |0'⟩ keeps the last slot in the dressed basis.
pub const DRESSED_ZERO_PRIME: usize = 3;

pub const BARE_LABELS: [&str; 4] = ["0", "0'", "+1", "-1"];
pub const DRESSED_LABELS: [&str; 4] = ["D", "u", "d", "0'"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Bare,
    Dressed,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Bare => "bare",
            Basis::Dressed => "dressed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Interaction picture of the atomic Hamiltonian; dressing fields appear
    /// as explicit couplings.
    BareInteraction,
    /// Additionally rotating with the dressing Hamiltonian, so only RF,
    /// clock and noise terms remain.
    DressedInteraction,
}

impl Frame {
    pub fn basis(self) -> Basis {
        match self {
            Frame::BareInteraction => Basis::Bare,
            Frame::DressedInteraction => Basis::Dressed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Frame::BareInteraction => "bare interaction",
            Frame::DressedInteraction => "dressed interaction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DressedState {
    #[serde(rename = "D")]
    Dark,
    #[serde(rename = "u")]
    Up,
    #[serde(rename = "d")]
    Down,
}

impl DressedState {
    pub const ALL: [DressedState; 3] = [DressedState::Dark, DressedState::Up, DressedState::Down];

    /// Index in the dressed basis.
    pub fn index(self) -> usize {
        match self {
            DressedState::Dark => DARK,
            DressedState::Up => UP,
            DressedState::Down => DOWN,
        }
    }

    pub fn label(self) -> &'static str {
        DRESSED_LABELS[self.index()]
    }

    /// Energy in units of Ω_μw/√2.
    pub fn energy_sign(self) -> i32 {
        match self {
            DressedState::Dark => 0,
            DressedState::Up => 1,
            DressedState::Down => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Microwave on |0⟩↔|+1⟩.
    MwPlus,
    /// Microwave on |0⟩↔|−1⟩.
    MwMinus,
    /// Microwave on the |0⟩↔|0'⟩ clock transition.
    Clock,
    /// RF near the |0'⟩↔|±1⟩ transitions.
    Rf,
}

/// Amplitude profile of a drive, bounded in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Envelope<T> {
    #[default]
    Constant,
    /// Gaussian rise reaching 1 at `center`, flat afterwards.
    GaussianRise { center: T, sigma: T },
    /// Flat until `center`, Gaussian decay afterwards.
    GaussianFall { center: T, sigma: T },
    Gaussian { center: T, sigma: T },
}

impl<T: Real> Envelope<T> {
    pub fn value(&self, t: T) -> T {
        let g = |center: T, sigma: T| {
            let x = (t - center) / sigma;
            (-T::half() * x * x).exp()
        };
        match *self {
            Envelope::Constant => T::one(),
            Envelope::GaussianRise { center, sigma } => {
                if t < center {
                    g(center, sigma)
                } else {
                    T::one()
                }
            }
            Envelope::GaussianFall { center, sigma } => {
                if t > center {
                    g(center, sigma)
                } else {
                    T::one()
                }
            }
            Envelope::Gaussian { center, sigma } => g(center, sigma),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Envelope::Constant)
    }

    fn kink(&self) -> Option<T> {
        match *self {
            Envelope::GaussianRise { center, .. } | Envelope::GaussianFall { center, .. } => Some(center),
            _ => None,
        }
    }
}

/// One applied field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drive<T> {
    pub channel: Channel,
    /// Peak Rabi frequency Ω, rad/s.
    pub rabi: T,
    /// Detuning, rad/s. For the RF channel this is Δ₊ = ω_rf − ω_plus; Δ₋
    /// follows from the field splitting and is never stored.
    pub detuning: T,
    pub phase: T,
    #[serde(default)]
    pub envelope: Envelope<T>,
}

impl<T: Real> Drive<T> {
    pub fn new(channel: Channel, rabi: T) -> Self {
        Self {
            channel,
            rabi,
            detuning: T::zero(),
            phase: T::zero(),
            envelope: Envelope::Constant,
        }
    }

    pub fn rf(rabi: T, detuning_plus: T) -> Self {
        Self {
            detuning: detuning_plus,
            ..Self::new(Channel::Rf, rabi)
        }
    }

    pub fn with_detuning(mut self, detuning: T) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_phase(mut self, phase: T) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_envelope(mut self, envelope: Envelope<T>) -> Self {
        self.envelope = envelope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= T::zero() && self.rabi.is_finite()) {
            return Err(invalid("rabi", "must be finite and non-negative"));
        }
        if !self.detuning.is_finite() || !self.phase.is_finite() {
            return Err(invalid("detuning", "detuning and phase must be finite"));
        }
        match self.envelope {
            Envelope::Constant => Ok(()),
            Envelope::GaussianRise { sigma, .. }
            | Envelope::GaussianFall { sigma, .. }
            | Envelope::Gaussian { sigma, .. } => {
                if sigma > T::zero() {
                    Ok(())
                } else {
                    Err(invalid("sigma", "envelope width must be positive"))
                }
            }
        }
    }

    fn amplitude(&self, t: T) -> T {
        self.rabi * self.envelope.value(t)
    }
}

fn hermitian_pair<T: Real>(m: &mut Mat4<T>, row: usize, col: usize, z: Complex<T>) {
    m.0[row][col] += z;
    m.0[col][row] += z.conj();
}

/// Ω/2 (|+1⟩⟨0| + |−1⟩⟨0| + h.c.) in the bare basis.
pub fn dressing_hamiltonian<T: Real>(omega_mw: T) -> Mat4<T> {
    let mut h = Mat4::zeros();
    let g = cr(omega_mw * T::half());
    hermitian_pair(&mut h, PLUS, ZERO, g);
    hermitian_pair(&mut h, MINUS, ZERO, g);
    h
}

/// Unitary whose columns are |D⟩, |u⟩, |d⟩, |0'⟩ written in the bare basis:
/// ψ_bare = U ψ_dressed.
pub fn dressed_transform<T: Real>() -> Mat4<T> {
    let r = T::FRAC_1_SQRT_2();
    let h = T::half();
    let z = T::zero();
    let mut u = Mat4::zeros();
    // rows: |0⟩, |0'⟩, |+1⟩, |−1⟩
    let cols: [[T; 4]; 4] = [
        [z, z, r, -r],          // D
        [r, z, h, h],           // u
        [-r, z, h, h],          // d
        [z, T::one(), z, z],    // 0'
    ];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..4 {
            u.0[i][j] = cr(col[i]);
        }
    }
    u
}

/// Dressing Hamiltonian in the dressed basis: diag(0, Ω/√2, −Ω/√2, 0).
pub fn dressed_energies<T: Real>(omega_mw: T) -> [T; 4] {
    let e = omega_mw * T::FRAC_1_SQRT_2();
    [T::zero(), e, -e, T::zero()]
}

/// λ₀ (|+1⟩⟨+1| − |−1⟩⟨−1|), the first-order Zeeman response to a field
/// fluctuation.
pub fn zeeman_perturbation<T: Real>(lambda0: T) -> Mat4<T> {
    let mut h = Mat4::zeros();
    h.0[PLUS][PLUS] = cr(lambda0);
    h.0[MINUS][MINUS] = cr(-lambda0);
    h
}

/// Zeeman perturbation in the dressed interaction frame at time `t`:
/// (λ₀/√2)(|D⟩⟨u|e^{−iΩ't} + |D⟩⟨d|e^{iΩ't} + h.c.), Ω' = Ω_μw/√2.
pub fn zeeman_perturbation_dressed<T: Real>(lambda0: T, omega_mw: T, t: T) -> Mat4<T> {
    let mut h = Mat4::zeros();
    let g = lambda0 * T::FRAC_1_SQRT_2();
    let w = omega_mw * T::FRAC_1_SQRT_2();
    hermitian_pair(&mut h, DARK, UP, cis(-w * t) * g);
    hermitian_pair(&mut h, DARK, DOWN, cis(w * t) * g);
    h
}

/// s (|0'⟩⟨0'| − |0⟩⟨0|): the second-order Zeeman shift of the clock pair.
pub fn clock_level_shift<T: Real>(shift: T) -> Mat4<T> {
    let mut h = Mat4::zeros();
    h.0[ZERO_PRIME][ZERO_PRIME] = cr(shift);
    h.0[ZERO][ZERO] = cr(-shift);
    h
}

/// Single microwave drive on |0⟩↔|±1⟩:
/// Ω/2 (|±1⟩⟨0| e^{−iδt−iφ} + h.c.).
pub fn microwave_hamiltonian<T: Real>(drive: &Drive<T>, t: T) -> Result<Mat4<T>> {
    let target = match drive.channel {
        Channel::MwPlus => PLUS,
        Channel::MwMinus => MINUS,
        _ => return Err(invalid("channel", "expected a microwave dressing channel")),
    };
    let mut h = Mat4::zeros();
    let g = cis(-drive.detuning * t - drive.phase) * (drive.amplitude(t) * T::half());
    hermitian_pair(&mut h, target, ZERO, g);
    Ok(h)
}

/// RF drive in the bare basis:
/// Ω/2 (|+1⟩⟨0'| e^{−iΔ₊t} + |−1⟩⟨0'| e^{iΔ₋t} + h.c.) e^{−iφ} on the
/// raising terms, with Δ₋ = Δ₊ − (ω_minus − ω_plus).
pub fn rf_hamiltonian_bare<T: Real>(drive: &Drive<T>, field_splitting: T, t: T) -> Result<Mat4<T>> {
    if drive.channel != Channel::Rf {
        return Err(invalid("channel", "expected the RF channel"));
    }
    let dp = drive.detuning;
    let dm = dp - field_splitting;
    let g = cis(-drive.phase) * (drive.amplitude(t) * T::half());
    let mut h = Mat4::zeros();
    hermitian_pair(&mut h, PLUS, ZERO_PRIME, g * cis(-dp * t));
    hermitian_pair(&mut h, MINUS, ZERO_PRIME, g * cis(dm * t));
    Ok(h)
}

/// RF drive in the dressed interaction frame: the six oscillating couplings
/// between |0'⟩ and |D⟩, |u⟩, |d⟩.
pub fn rf_hamiltonian_dressed<T: Real>(
    drive: &Drive<T>,
    field_splitting: T,
    omega_mw: T,
    t: T,
) -> Result<Mat4<T>> {
    if drive.channel != Channel::Rf {
        return Err(invalid("channel", "expected the RF channel"));
    }
    if !(omega_mw > T::zero()) {
        return Err(invalid("omega_mw", "dressed frame needs a positive dressing Rabi frequency"));
    }
    let dp = drive.detuning;
    let dm = dp - field_splitting;
    let w = omega_mw * T::FRAC_1_SQRT_2();
    let g = cis(-drive.phase) * (drive.amplitude(t) * T::half());
    let dark = (cis(-dp * t) - cis(dm * t)) * T::FRAC_1_SQRT_2();
    let up = (cis(-(dp - w) * t) + cis((dm + w) * t)) * T::half();
    let down = (cis(-(dp + w) * t) + cis((dm - w) * t)) * T::half();
    let mut h = Mat4::zeros();
    hermitian_pair(&mut h, DARK, DRESSED_ZERO_PRIME, g * dark);
    hermitian_pair(&mut h, UP, DRESSED_ZERO_PRIME, g * up);
    hermitian_pair(&mut h, DOWN, DRESSED_ZERO_PRIME, g * down);
    Ok(h)
}

/// Clock drive Ω/2 (|0'⟩⟨0| e^{−iδt−iφ} + h.c.) in the bare basis, with
/// δ = `drive.detuning`.
pub fn clock_drive_hamiltonian<T: Real>(drive: &Drive<T>, t: T) -> Result<Mat4<T>> {
    if drive.channel != Channel::Clock {
        return Err(invalid("channel", "expected the clock channel"));
    }
    let mut h = Mat4::zeros();
    let g = cis(-drive.detuning * t - drive.phase) * (drive.amplitude(t) * T::half());
    hermitian_pair(&mut h, ZERO_PRIME, ZERO, g);
    Ok(h)
}

/// Rewrites a bare-basis operator in the dressed interaction frame:
/// e^{iH_μw t} U† A U e^{−iH_μw t}.
pub fn to_dressed_interaction<T: Real>(a: &Mat4<T>, omega_mw: T, t: T) -> Mat4<T> {
    let u = dressed_transform::<T>();
    let mut m = u.adjoint() * *a * u;
    let e = dressed_energies(omega_mw);
    for j in 0..4 {
        for k in 0..4 {
            if !m.0[j][k].is_zero() && e[j] != e[k] {
                m.0[j][k] = m.0[j][k] * cis((e[j] - e[k]) * t);
            }
        }
    }
    m
}

/// Piecewise-constant signal on a uniform grid: segment `k` covers
/// absolute times [k·dt, (k+1)·dt). The signal is read at generator time
/// `t` as absolute time `t + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseSignal<T> {
    pub dt: T,
    pub values: Arc<Vec<T>>,
    pub offset: T,
}

impl<T: Real> PiecewiseSignal<T> {
    pub fn new(dt: T, values: Vec<T>) -> Self {
        Self {
            dt,
            values: Arc::new(values),
            offset: T::zero(),
        }
    }

    pub fn constant(value: T) -> Self {
        Self {
            dt: T::infinity(),
            values: Arc::new(vec![value]),
            offset: T::zero(),
        }
    }

    pub fn shifted(&self, offset: T) -> Self {
        Self {
            offset,
            ..self.clone()
        }
    }

    pub fn value(&self, t: T) -> T {
        if self.values.is_empty() {
            return T::zero();
        }
        let abs = t + self.offset;
        if !self.dt.is_finite() || abs <= T::zero() {
            return self.values[0];
        }
        let k = (abs / self.dt).floor().to_usize().unwrap_or(usize::MAX);
        self.values[k.min(self.values.len() - 1)]
    }

    /// Segment boundaries strictly inside (t0, t1), in generator time.
    fn boundaries(&self, t0: T, t1: T, out: &mut Vec<T>) {
        if !self.dt.is_finite() || self.values.len() < 2 {
            return;
        }
        let a = t0 + self.offset;
        let b = t1 + self.offset;
        let last = T::from_usize(self.values.len() - 1).unwrap() * self.dt;
        let mut k = (a / self.dt).floor() + T::one();
        loop {
            let edge = k * self.dt;
            if edge >= b || edge > last {
                break;
            }
            if edge > a {
                out.push(edge - self.offset);
            }
            k = k + T::one();
        }
    }
}

/// Second-order Zeeman response of the clock pair to the same field
/// fluctuation that produces λ₀: the field moves χ by 2λ₀/ω₀ and |0'⟩, |0⟩
/// shift by ±(ω₀/2)(√(1+χ²) evaluated before and after).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderZeeman<T> {
    pub chi: T,
    pub omega0: T,
}

impl<T: Real> SecondOrderZeeman<T> {
    pub fn shift(&self, lambda0: T) -> T {
        let x1 = self.chi + T::two() * lambda0 / self.omega0;
        let r0 = (T::one() + self.chi * self.chi).sqrt();
        let r1 = (T::one() + x1 * x1).sqrt();
        // r1 − r0 without cancellation
        let diff = (x1 - self.chi) * (x1 + self.chi) / (r1 + r0);
        self.omega0 * T::half() * diff
    }
}

/// Time-dependent Hamiltonian assembled from drives and noise sources.
/// Simultaneous drives add linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianGenerator<T> {
    pub frame: Frame,
    pub drives: Vec<Drive<T>>,
    /// Ω_μw of the two equal dressing fields. Built into the frame for
    /// `DressedInteraction`; added as a static coupling for
    /// `BareInteraction` when positive.
    pub dressing_rabi: T,
    /// ω_minus − ω_plus.
    pub field_splitting: T,
    /// λ₀(t) in rad/s.
    pub zeeman: Option<PiecewiseSignal<T>>,
    /// Fractional fluctuation ε(t) of both dressing amplitudes.
    pub dressing_noise: Option<PiecewiseSignal<T>>,
    pub second_order: Option<SecondOrderZeeman<T>>,
}

impl<T: Real> HamiltonianGenerator<T> {
    pub fn bare(field_splitting: T) -> Self {
        Self {
            frame: Frame::BareInteraction,
            drives: Vec::new(),
            dressing_rabi: T::zero(),
            field_splitting,
            zeeman: None,
            dressing_noise: None,
            second_order: None,
        }
    }

    pub fn dressed(omega_mw: T, field_splitting: T) -> Self {
        Self {
            frame: Frame::DressedInteraction,
            dressing_rabi: omega_mw,
            ..Self::bare(field_splitting)
        }
    }

    pub fn with_dressing(mut self, omega_mw: T) -> Self {
        self.dressing_rabi = omega_mw;
        self
    }

    pub fn with_drive(mut self, drive: Drive<T>) -> Self {
        self.drives.push(drive);
        self
    }

    pub fn with_zeeman(mut self, signal: PiecewiseSignal<T>) -> Self {
        self.zeeman = Some(signal);
        self
    }

    pub fn with_dressing_noise(mut self, signal: PiecewiseSignal<T>) -> Self {
        self.dressing_noise = Some(signal);
        self
    }

    pub fn with_second_order(mut self, so: SecondOrderZeeman<T>) -> Self {
        self.second_order = Some(so);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.drives {
            d.validate()?;
            if self.frame == Frame::DressedInteraction && matches!(d.channel, Channel::MwPlus | Channel::MwMinus) {
                return Err(invalid(
                    "drives",
                    "microwave dressing drives cannot be added in the dressed frame",
                ));
            }
        }
        if !(self.dressing_rabi >= T::zero()) {
            return Err(invalid("dressing_rabi", "must be non-negative"));
        }
        if self.frame == Frame::DressedInteraction && !(self.dressing_rabi > T::zero()) {
            return Err(invalid("dressing_rabi", "dressed frame needs dressing switched on"));
        }
        Ok(())
    }

    fn dressing_scale(&self, t: T) -> T {
        T::one() + self.dressing_noise.as_ref().map_or(T::zero(), |s| s.value(t))
    }

    /// H(t) in rad/s.
    pub fn eval(&self, t: T) -> Result<Mat4<T>> {
        let mut h = Mat4::zeros();
        let scale = self.dressing_scale(t);
        let lambda0 = self.zeeman.as_ref().map_or(T::zero(), |s| s.value(t));
        match self.frame {
            Frame::BareInteraction => {
                if self.dressing_rabi > T::zero() {
                    h += dressing_hamiltonian(self.dressing_rabi * scale);
                }
                for d in &self.drives {
                    h += match d.channel {
                        Channel::MwPlus | Channel::MwMinus => {
                            let mut scaled = *d;
                            scaled.rabi = d.rabi * scale;
                            microwave_hamiltonian(&scaled, t)?
                        }
                        Channel::Clock => clock_drive_hamiltonian(d, t)?,
                        Channel::Rf => rf_hamiltonian_bare(d, self.field_splitting, t)?,
                    };
                }
                if lambda0 != T::zero() {
                    h += zeeman_perturbation(lambda0);
                }
                if let Some(so) = &self.second_order {
                    if lambda0 != T::zero() {
                        h += clock_level_shift(so.shift(lambda0));
                    }
                }
            }
            Frame::DressedInteraction => {
                let w = self.dressing_rabi;
                if scale != T::one() {
                    let e = dressed_energies(w);
                    for k in 0..4 {
                        h.0[k][k] += cr(e[k] * (scale - T::one()));
                    }
                }
                for d in &self.drives {
                    h += match d.channel {
                        Channel::Rf => rf_hamiltonian_dressed(d, self.field_splitting, w, t)?,
                        Channel::Clock => to_dressed_interaction(&clock_drive_hamiltonian(d, t)?, w, t),
                        _ => return Err(invalid("drives", "microwave drive in dressed frame")),
                    };
                }
                if lambda0 != T::zero() {
                    h += zeeman_perturbation_dressed(lambda0, w, t);
                    if let Some(so) = &self.second_order {
                        h += to_dressed_interaction(&clock_level_shift(so.shift(lambda0)), w, t);
                    }
                }
            }
        }
        Ok(h)
    }

    /// Largest explicit oscillation frequency (rad/s) in the generator.
    pub fn max_frequency(&self) -> T {
        let mut f = T::zero();
        let split = self.field_splitting;
        let dressed = self.frame == Frame::DressedInteraction;
        let w = self.dressing_rabi * T::FRAC_1_SQRT_2();
        for d in &self.drives {
            match d.channel {
                Channel::Rf => {
                    let dp = d.detuning;
                    let dm = dp - split;
                    f = f.max(dp.abs()).max(dm.abs());
                    if dressed {
                        f = f.max((dp.abs() + w).max((dm.abs()) + w));
                    }
                }
                _ => {
                    f = f.max(d.detuning.abs());
                    if dressed {
                        f = f.max(d.detuning.abs() + w);
                    }
                }
            }
        }
        if dressed && self.zeeman.is_some() {
            f = f.max(T::two() * w);
        }
        f
    }

    /// True when H does not depend on time between noise breakpoints.
    pub fn is_piecewise_static(&self) -> bool {
        let drives_static = self
            .drives
            .iter()
            .all(|d| d.envelope.is_constant() && (d.detuning == T::zero() || d.rabi == T::zero()) && d.channel != Channel::Rf);
        let rf_static = self.drives.iter().all(|d| {
            d.channel != Channel::Rf
                || d.rabi == T::zero()
                || (self.frame == Frame::BareInteraction && d.detuning == T::zero() && self.field_splitting == T::zero())
        });
        let noise_static = self.frame == Frame::BareInteraction || self.zeeman.is_none();
        drives_static && rf_static && noise_static
    }

    /// Times in (t0, t1) where H jumps or its envelope has a kink.
    pub fn breakpoints(&self, t0: T, t1: T) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(s) = &self.zeeman {
            s.boundaries(t0, t1, &mut out);
        }
        if let Some(s) = &self.dressing_noise {
            s.boundaries(t0, t1, &mut out);
        }
        for d in &self.drives {
            if let Some(k) = d.envelope.kink() {
                if k > t0 && k < t1 {
                    out.push(k);
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        out.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * (a.abs() + b.abs()));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfBranch {
    ViaPlus,
    ViaMinus,
}

/// One of the six RF resonances out of |0'⟩ with dressing on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceLine<T> {
    pub target: DressedState,
    pub branch: RfBranch,
    /// Absolute RF angular frequency.
    pub frequency: T,
    /// Δ₊ = ω_rf − ω_plus at which this line is stationary.
    pub detuning_plus: T,
    /// Effective Rabi frequency in units of Ω_rf: 1/√2 for |D⟩, 1/2 for |u⟩, |d⟩.
    pub rabi_factor: T,
    /// Sign of the stationary coupling coefficient (−1 only for |D⟩ via |−1⟩).
    pub coupling_sign: i8,
}

impl<T: Real> ResonanceLine<T> {
    pub fn label(&self) -> String {
        let via = match self.branch {
            RfBranch::ViaPlus => "+1",
            RfBranch::ViaMinus => "-1",
        };
        format!("{} via {}", self.target.label(), via)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceTable<T> {
    /// Sorted by ascending frequency.
    pub lines: Vec<ResonanceLine<T>>,
}

impl<T: Real> ResonanceTable<T> {
    pub fn line(&self, target: DressedState, branch: RfBranch) -> &ResonanceLine<T> {
        self.lines
            .iter()
            .find(|l| l.target == target && l.branch == branch)
            .expect("table holds all six lines")
    }

    /// Smallest spacing between any two lines.
    pub fn min_separation(&self) -> T {
        self.lines
            .windows(2)
            .map(|w| (w[1].frequency - w[0].frequency).abs())
            .fold(T::infinity(), |m, s| m.min(s))
    }

    /// Pairs of lines closer than `resolution` (rad/s).
    pub fn collisions(&self, resolution: T) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.lines.len() {
            for j in (i + 1)..self.lines.len() {
                if (self.lines[j].frequency - self.lines[i].frequency).abs() < resolution {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn check(&self, resolution: T) -> Result<()> {
        if let Some(&(i, j)) = self.collisions(resolution).first() {
            let (a, b) = (&self.lines[i], &self.lines[j]);
            return Err(Error::ResonanceCollision {
                first: a.label(),
                second: b.label(),
                separation_hz: angular_to_hz((b.frequency - a.frequency).abs()).to_f64_lossy(),
                resolution_hz: angular_to_hz(resolution).to_f64_lossy(),
            });
        }
        Ok(())
    }
}

/// The six RF resonances: ω_plus and ω_minus, each split into a triplet by
/// ±Ω_μw/√2.
pub fn resonance_table<T: Real>(omega_mw: T, freqs: &TransitionFrequencies<T>) -> Result<ResonanceTable<T>> {
    if !(omega_mw >= T::zero()) {
        return Err(invalid("omega_mw", "must be non-negative"));
    }
    let w = omega_mw * T::FRAC_1_SQRT_2();
    let wp = freqs.omega_plus;
    let wm = freqs.omega_minus;
    let dark = T::FRAC_1_SQRT_2();
    let bright = T::half();
    let mk = |target, branch, frequency: T, rabi_factor, coupling_sign| ResonanceLine {
        target,
        branch,
        frequency,
        detuning_plus: frequency - wp,
        rabi_factor,
        coupling_sign,
    };
    let mut lines = vec![
        mk(DressedState::Dark, RfBranch::ViaPlus, wp, dark, 1),
        mk(DressedState::Up, RfBranch::ViaPlus, wp + w, bright, 1),
        mk(DressedState::Down, RfBranch::ViaPlus, wp - w, bright, 1),
        mk(DressedState::Dark, RfBranch::ViaMinus, wm, dark, -1),
        mk(DressedState::Up, RfBranch::ViaMinus, wm - w, bright, 1),
        mk(DressedState::Down, RfBranch::ViaMinus, wm + w, bright, 1),
    ];
    lines.sort_by(|a, b| a.frequency.partial_cmp(&b.frequency).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ResonanceTable { lines })
}

#[allow(dead_code)]
pub(crate) fn imag_unit<T: Real>() -> Complex<T> {
    c(T::zero(), T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomphys::{frequencies_from_chi, PhysicalConstants};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2, TAU};

    #[test]
    fn dressing_spectrum_and_dark_vector() {
        assert_eq!(dressing_hamiltonian(0.0f64).max_abs(), 0.0);
        let om = TAU * 31e3;
        let h = dressing_hamiltonian(om);
        assert!(h.hermiticity_defect() == 0.0);
        let (vals, vecs) = h.eigh();
        // three-level block eigenvalues {−Ω/√2, 0, +Ω/√2} plus the decoupled 0'
        assert_relative_eq!(vals[0], -om / SQRT_2, max_relative = 1e-13);
        assert!(vals[1].abs() < 1e-9 && vals[2].abs() < 1e-9);
        assert_relative_eq!(vals[3], om / SQRT_2, max_relative = 1e-13);
        // null space is spanned by |0'⟩ and (|+1⟩ − |−1⟩)/√2
        let d = dressed_transform::<f64>().column(DARK);
        let hd = h.mul_vec(&d);
        assert!(hd.iter().all(|z| z.norm() < 1e-12));
        let _ = vecs;
    }

    #[test]
    fn dressed_transform_is_unitary_and_diagonalizes() {
        let u = dressed_transform::<f64>();
        assert!(u.unitarity_defect() < 1e-14);
        let om = TAU * 29e3;
        let hd = u.adjoint() * dressing_hamiltonian(om) * u;
        let expected = Mat4::from_real_diag(dressed_energies(om));
        assert!((hd - expected).max_abs() < 1e-12 * om);
        assert_relative_eq!(u[(ZERO, UP)].re, FRAC_1_SQRT_2);
        assert_relative_eq!(u[(ZERO, DOWN)].re, -FRAC_1_SQRT_2);
        assert_eq!(u[(ZERO, DARK)].re, 0.0);
    }

    #[test]
    fn zeeman_perturbation_in_dressed_basis() {
        assert_eq!(zeeman_perturbation(0.0f64).max_abs(), 0.0);
        let lam = 1234.5;
        let u = dressed_transform::<f64>();
        let hp = u.adjoint() * zeeman_perturbation(lam) * u;
        let mut expected = Mat4::zeros();
        expected.0[DARK][UP] = cr(lam / SQRT_2);
        expected.0[UP][DARK] = cr(lam / SQRT_2);
        expected.0[DARK][DOWN] = cr(lam / SQRT_2);
        expected.0[DOWN][DARK] = cr(lam / SQRT_2);
        assert!((hp - expected).max_abs() < 1e-12 * lam);
        assert_eq!(hp[(DARK, DARK)].norm(), 0.0);
    }

    #[test]
    fn zeeman_dressed_frame_matches_conjugation() {
        let om = TAU * 40e3;
        for &t in &[0.0, 3.3e-6, 1.7e-4] {
            let a = zeeman_perturbation_dressed(500.0, om, t);
            let b = to_dressed_interaction(&zeeman_perturbation(500.0), om, t);
            assert!((a - b).max_abs() < 1e-10);
        }
    }

    #[test]
    fn rf_bare_basics() {
        let split = TAU * 39e3;
        let zero = Drive::rf(0.0, 100.0);
        assert_eq!(rf_hamiltonian_bare(&zero, split, 1e-3).unwrap().max_abs(), 0.0);
        let om = TAU * 1e3;
        let h = rf_hamiltonian_bare(&Drive::rf(om, 5e3), split, 0.0).unwrap();
        assert_eq!(h.hermiticity_defect(), 0.0);
        assert_relative_eq!(h[(PLUS, ZERO_PRIME)].re, om / 2.0);
        assert_relative_eq!(h[(MINUS, ZERO_PRIME)].re, om / 2.0);
        assert!(h.0.iter().flatten().all(|z| z.im == 0.0));
        assert!(rf_hamiltonian_bare(&Drive::new(Channel::Clock, 1.0), split, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn generators_are_hermitian(
            t in 0.0f64..1e-2,
            dp in -2e5f64..2e5,
            phase in -PI..PI,
            om in 0.0f64..1e5,
        ) {
            let drive = Drive::rf(om, dp).with_phase(phase);
            let split = TAU * 38.6e3;
            let a = rf_hamiltonian_bare(&drive, split, t).unwrap();
            let b = rf_hamiltonian_dressed(&drive, split, TAU * 30e3, t).unwrap();
            let clock = Drive::new(Channel::Clock, om).with_detuning(dp).with_phase(phase);
            let c = clock_drive_hamiltonian(&clock, t).unwrap();
            prop_assert!(a.hermiticity_defect() < 1e-14 * (1.0 + om));
            prop_assert!(b.hermiticity_defect() < 1e-14 * (1.0 + om));
            prop_assert!(c.hermiticity_defect() < 1e-14 * (1.0 + om));
        }

        #[test]
        fn rf_dressed_matches_frame_conjugation(
            t in 0.0f64..2e-3,
            dp in -1e5f64..1e5,
            phase in -PI..PI,
        ) {
            // Oracle: e^{+iH_μw t}·U†·H_rf,bare·U·e^{−iH_μw t} with the dressing
            // propagator taken from a matrix exponential of the dressed diagonal.
            let om_mw = TAU * 32.5e3;
            let split = TAU * 38.6e3;
            let drive = Drive::rf(TAU * 0.9e3, dp).with_phase(phase);
            let u = dressed_transform::<f64>();
            let hd = Mat4::from_real_diag(dressed_energies(om_mw));
            let fwd = hd.unitary_exp(-t); // e^{+iH t}
            let oracle = fwd * (u.adjoint() * rf_hamiltonian_bare(&drive, split, t).unwrap() * u) * fwd.adjoint();
            let got = rf_hamiltonian_dressed(&drive, split, om_mw, t).unwrap();
            prop_assert!((got - oracle).max_abs() < 1e-12 * TAU * 0.9e3);
        }
    }

    #[test]
    fn stationary_couplings_give_the_dressed_rabi_factors() {
        let om_rf = TAU * 1.0e3;
        let om_mw = TAU * 32.5e3;
        let split = TAU * 38.6e3;
        let w = om_mw / SQRT_2;
        // time-average over many periods isolates the stationary term
        let average = |dp: f64, row: usize| {
            let n = 20000;
            let span = 5e-3;
            let mut acc = cr(0.0);
            for k in 0..n {
                let t = span * (k as f64 + 0.5) / n as f64;
                acc += rf_hamiltonian_dressed(&Drive::rf(om_rf, dp), split, om_mw, t).unwrap()[(row, DRESSED_ZERO_PRIME)];
            }
            acc / cr(n as f64)
        };
        let d = average(0.0, DARK);
        assert!((d.norm() - om_rf / (2.0 * SQRT_2)).abs() < 2e-3 * om_rf);
        let u = average(w, UP);
        assert!((u.norm() - om_rf / 4.0).abs() < 2e-3 * om_rf);
        let dn = average(-w, DOWN);
        assert!((dn.norm() - om_rf / 4.0).abs() < 2e-3 * om_rf);
    }

    #[test]
    fn resonance_lines_are_stationary_points() {
        let k = PhysicalConstants::<f64>::default();
        let freqs = frequencies_from_chi(2.47e-3, k.omega0);
        let om_mw = TAU * 23e3 * SQRT_2;
        let table = resonance_table(om_mw, &freqs).unwrap();
        assert_eq!(table.lines.len(), 6);
        let split = freqs.field_splitting();
        let w = om_mw / SQRT_2;
        for line in &table.lines {
            let dp = line.detuning_plus;
            let dm = dp - split;
            // the exponent of the matching term must vanish
            let exponent = match (line.target, line.branch) {
                (DressedState::Dark, RfBranch::ViaPlus) => dp,
                (DressedState::Dark, RfBranch::ViaMinus) => dm,
                (DressedState::Up, RfBranch::ViaPlus) => dp - w,
                (DressedState::Up, RfBranch::ViaMinus) => dm + w,
                (DressedState::Down, RfBranch::ViaPlus) => dp + w,
                (DressedState::Down, RfBranch::ViaMinus) => dm - w,
            };
            assert!(exponent.abs() < 1e-6, "{}", line.label());
        }
    }

    #[test]
    fn resonance_table_layout() {
        let k = PhysicalConstants::<f64>::default();
        let mut freqs = frequencies_from_chi(2.47e-3, k.omega0);
        freqs.omega_minus = freqs.omega_plus + TAU * 39e3;
        let w = TAU * 23e3;
        let table = resonance_table(w * SQRT_2, &freqs).unwrap();
        let khz: Vec<f64> = table.lines.iter().map(|l| (l.frequency - freqs.omega_plus) / TAU / 1e3).collect();
        let expected = [-23.0, 0.0, 16.0, 23.0, 39.0, 62.0];
        for (a, b) in khz.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{khz:?}");
        }
        assert!(table.check(TAU * 1e3).is_ok());
        // zero dressing collapses each triplet
        let collapsed = resonance_table(0.0, &freqs).unwrap();
        assert_eq!(collapsed.collisions(1e-9).len(), 6);
        // Ω_μw/√2 equal to the splitting overlaps u(+1) with D(−1)
        let degenerate = resonance_table(TAU * 39e3 * SQRT_2, &freqs).unwrap();
        assert!(matches!(degenerate.check(TAU * 0.5e3), Err(Error::ResonanceCollision { .. })));
    }

    #[test]
    fn clock_drive_phase_and_offresonant_excitation() {
        let d = Drive::new(Channel::Clock, TAU * 0.9e3);
        let a = clock_drive_hamiltonian(&d, 0.0).unwrap();
        let b = clock_drive_hamiltonian(&d.with_phase(PI), 0.0).unwrap();
        assert!((a[(ZERO_PRIME, ZERO)] + b[(ZERO_PRIME, ZERO)]).norm() < 1e-12);
        let (om, delta) = (TAU * 0.9e3, TAU * 12.8e3);
        let peak = om * om / (om * om + delta * delta);
        assert!((peak - 4.9e-3).abs() < 0.05e-3);
    }

    #[test]
    fn piecewise_signal_lookup_and_boundaries() {
        let s = PiecewiseSignal::new(1.0, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.value(0.5), 1.0);
        assert_eq!(s.value(1.5), 2.0);
        assert_eq!(s.value(10.0), 3.0);
        let shifted = s.shifted(1.0);
        assert_eq!(shifted.value(0.5), 2.0);
        let mut b = Vec::new();
        s.boundaries(0.2, 5.0, &mut b);
        assert_eq!(b, vec![1.0, 2.0]);
    }

    #[test]
    fn second_order_shift_is_clock_sensitivity() {
        let k = PhysicalConstants::<f64>::default();
        let chi = 2.47e-3;
        let so = SecondOrderZeeman { chi, omega0: k.omega0 };
        let lam = 10.0;
        // splitting of |0'⟩ and |0⟩ moves by 2s ≈ 2χ·λ₀/√(1+χ²)
        let s = so.shift(lam);
        assert_relative_eq!(2.0 * s / lam, 2.0 * chi / (1.0 + chi * chi).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn generator_frames_validate() {
        let g = HamiltonianGenerator::<f64>::dressed(0.0, 1.0);
        assert!(g.validate().is_err());
        let g = HamiltonianGenerator::<f64>::dressed(1.0, 1.0).with_drive(Drive::new(Channel::MwPlus, 1.0));
        assert!(g.validate().is_err());
        let g = HamiltonianGenerator::<f64>::bare(1.0).with_dressing(2.0);
        assert!(g.validate().is_ok());
        assert!(g.is_piecewise_static());
        let h = g.eval(0.3).unwrap();
        assert!((h - dressing_hamiltonian(2.0)).max_abs() < 1e-15);
    }
}
