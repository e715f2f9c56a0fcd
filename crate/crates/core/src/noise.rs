//! Classical noise on the bias field and on the dressing power, and
//! Monte Carlo ensembles of pure-state trajectories driven by it.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hamiltonian::{Basis, DressedState, HamiltonianGenerator, PiecewiseSignal, SecondOrderZeeman, DRESSED_ZERO_PRIME, PLUS, ZERO, ZERO_PRIME};
use crate::linalg::cr;
use crate::propagator::{evolve_from, populations, PropagationControl, StateVector};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinusoidPhase<T> {
    Fixed(T),
    UniformRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel<T> {
    #[default]
    None,
    /// amplitude · sin(frequency · t + phase)
    Sinusoid {
        amplitude: T,
        frequency: T,
        phase: SinusoidPhase<T>,
    },
    /// Stationary Ornstein-Uhlenbeck process.
    OrnsteinUhlenbeck { stddev: T, correlation_time: T },
    /// Symmetric random telegraph signal ±amplitude.
    Telegraph { amplitude: T, switching_rate: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// λ₀(t) in rad/s.
    ZeemanLambda0,
    /// Fractional change ε(t) of both dressing Rabi frequencies.
    DressingAmplitudeFractional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess<T> {
    pub model: NoiseModel<T>,
    pub applies_to: NoiseTarget,
}

impl<T: Real> NoiseProcess<T> {
    pub fn zeeman(model: NoiseModel<T>) -> Self {
        Self {
            model,
            applies_to: NoiseTarget::ZeemanLambda0,
        }
    }

    pub fn dressing_amplitude(model: NoiseModel<T>) -> Self {
        Self {
            model,
            applies_to: NoiseTarget::DressingAmplitudeFractional,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: T, name| {
            if x >= T::zero() && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be finite and non-negative"))
            }
        };
        let positive = |x: T, name| {
            if x > T::zero() && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be positive"))
            }
        };
        match self.model {
            NoiseModel::None => Ok(()),
            NoiseModel::Sinusoid { amplitude, frequency, .. } => {
                nonneg(amplitude, "amplitude")?;
                nonneg(frequency, "frequency")
            }
            NoiseModel::OrnsteinUhlenbeck { stddev, correlation_time } => {
                nonneg(stddev, "stddev")?;
                positive(correlation_time, "correlation_time")
            }
            NoiseModel::Telegraph { amplitude, switching_rate } => {
                nonneg(amplitude, "amplitude")?;
                positive(switching_rate, "switching_rate")
            }
        }
    }
}

/// RNG for trajectory `index` of an ensemble: one ChaCha stream per
/// trajectory under a shared key, so results do not depend on scheduling.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let x: f64 = rng.sample(StandardNormal);
    T::lit(x)
}

/// Samples at t_k = k·dt for k = 0..=n.
pub fn sample_path_with<T: Real, R: Rng + ?Sized>(model: &NoiseModel<T>, dt: T, n: usize, rng: &mut R) -> Vec<T> {
    let mut out = Vec::with_capacity(n + 1);
    match *model {
        NoiseModel::None => out.resize(n + 1, T::zero()),
        NoiseModel::Sinusoid { amplitude, frequency, phase } => {
            let phi = match phase {
                SinusoidPhase::Fixed(p) => p,
                SinusoidPhase::UniformRandom => T::lit(rng.random::<f64>()) * T::TAU(),
            };
            for k in 0..=n {
                let t = T::from_usize(k).unwrap() * dt;
                out.push(amplitude * (frequency * t + phi).sin());
            }
        }
        NoiseModel::OrnsteinUhlenbeck { stddev, correlation_time } => {
            let decay = (-dt / correlation_time).exp();
            let kick = stddev * (T::one() - decay * decay).sqrt();
            let mut x = stddev * normal::<T, R>(rng);
            out.push(x);
            for _ in 0..n {
                x = x * decay + kick * normal::<T, R>(rng);
                out.push(x);
            }
        }
        NoiseModel::Telegraph { amplitude, switching_rate } => {
            // probability of an odd number of switches within dt
            let flip = (T::one() - (-T::two() * switching_rate * dt).exp()) * T::half();
            let flip = flip.to_f64_lossy();
            let mut x = if rng.random::<bool>() { amplitude } else { -amplitude };
            out.push(x);
            for _ in 0..n {
                if rng.random::<f64>() < flip {
                    x = -x;
                }
                out.push(x);
            }
        }
    }
    out
}

/// Discretized realization on the grid k·dt, k = 0..=⌈horizon/dt⌉.
pub fn sample_path<T: Real>(process: &NoiseProcess<T>, dt: T, horizon: T, seed: u64) -> Result<Vec<T>> {
    process.validate()?;
    let n = segment_count(dt, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_path_with(&process.model, dt, n, &mut rng))
}

fn segment_count<T: Real>(dt: T, horizon: T) -> Result<usize> {
    if !(dt > T::zero()) {
        return Err(invalid("dt", "must be positive"));
    }
    if !(horizon >= T::zero()) || !horizon.is_finite() {
        return Err(invalid("horizon", "must be finite and non-negative"));
    }
    let n = (horizon / dt - T::lit(1e-9)).ceil().max(T::zero());
    n.to_usize().ok_or_else(|| invalid("dt", "too many segments"))
}

/// Piecewise-constant signal whose segment k carries the mean of samples k
/// and k+1.
pub fn to_signal<T: Real>(samples: &[T], dt: T) -> PiecewiseSignal<T> {
    let values = if samples.len() < 2 {
        samples.to_vec()
    } else {
        samples.windows(2).map(|w| T::half() * (w[0] + w[1])).collect()
    };
    PiecewiseSignal::new(dt, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec<T> {
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub horizon: T,
    /// Increasing sample times in [0, horizon].
    pub sample_times: Vec<T>,
    /// Noise discretization step.
    pub noise_dt: T,
}

impl<T: Real> EnsembleSpec<T> {
    pub fn new(n_trajectories: usize, master_seed: u64, sample_times: Vec<T>) -> Self {
        let horizon = sample_times.last().copied().unwrap_or(T::zero());
        Self {
            n_trajectories,
            master_seed,
            horizon,
            sample_times,
            noise_dt: T::lit(1e-6),
        }
    }

    pub fn with_noise_dt(mut self, dt: T) -> Self {
        self.noise_dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(invalid("n_trajectories", "need at least one trajectory"));
        }
        if !(self.horizon > T::zero()) {
            return Err(invalid("horizon", "must be positive"));
        }
        if !(self.noise_dt > T::zero()) {
            return Err(invalid("noise_dt", "must be positive"));
        }
        if self.sample_times.iter().any(|&t| t < T::zero() || t > self.horizon) {
            return Err(invalid("sample_times", "must lie within [0, horizon]"));
        }
        if self.sample_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sample_times", "must be strictly increasing"));
        }
        Ok(())
    }
}

/// Runs `f` for every trajectory index with its own RNG stream. Results come
/// back in index order whatever the thread count.
pub fn ensemble_map<R, F>(n: usize, master_seed: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> R + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(master_seed, k as u64);
            f(k, &mut rng)
        })
        .collect()
}

fn mean_and_stderr<T: Real>(rows: &[Vec<T>], column: usize) -> (T, T) {
    let n = T::from_usize(rows.len()).unwrap();
    let mean = rows.iter().map(|r| r[column]).fold(T::zero(), |a, b| a + b) / n;
    if rows.len() < 2 {
        return (mean, T::zero());
    }
    let var = rows
        .iter()
        .map(|r| (r[column] - mean) * (r[column] - mean))
        .fold(T::zero(), |a, b| a + b)
        / (n - T::one());
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// s(t) = a + (1 − a)·exp(−t/τ)
    ExponentialToFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary<T> {
    pub times: Vec<T>,
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
    pub model: FitModel,
    /// Fitted τ; equals the search bound when `converged` is false.
    pub lifetime: T,
    pub lifetime_stderr: T,
    pub floor: T,
    pub residual_norm: T,
    pub converged: bool,
}

fn write_curve<W: Write, T: Real>(mut w: W, times: &[T], mean: &[T], stderr: &[T]) -> io::Result<()> {
    writeln!(w, "time_s,mean,stderr")?;
    for ((t, m), s) in times.iter().zip(mean).zip(stderr) {
        writeln!(w, "{},{},{}", t.to_f64_lossy(), m.to_f64_lossy(), s.to_f64_lossy())?;
    }
    Ok(())
}

impl<T: Real> DecaySummary<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_curve(w, &self.times, &self.mean, &self.stderr)
    }
}

/// What a survival curve tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalObservable {
    /// Population left in the initial dressed state.
    Population,
    /// Fidelity of (|0'⟩ + |X⟩)/√2 with its noiseless evolution; sensitive to
    /// dephasing that leaves populations untouched.
    QubitFidelity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalOptions<T> {
    pub observable: SurvivalObservable,
    pub second_order: Option<SecondOrderZeeman<T>>,
    pub control: PropagationControl<T>,
}

impl<T: Real> Default for SurvivalOptions<T> {
    fn default() -> Self {
        Self {
            observable: SurvivalObservable::Population,
            second_order: None,
            control: PropagationControl::default(),
        }
    }
}

fn build_generator<T: Real, R: Rng + ?Sized>(
    omega_mw: T,
    processes: &[NoiseProcess<T>],
    spec: &EnsembleSpec<T>,
    second_order: Option<SecondOrderZeeman<T>>,
    rng: &mut R,
) -> Result<HamiltonianGenerator<T>> {
    let n = segment_count(spec.noise_dt, spec.horizon)?;
    let mut zeeman: Option<Vec<T>> = None;
    let mut amplitude: Option<Vec<T>> = None;
    for p in processes {
        if matches!(p.model, NoiseModel::None) {
            continue;
        }
        let path = sample_path_with(&p.model, spec.noise_dt, n, rng);
        let slot = match p.applies_to {
            NoiseTarget::ZeemanLambda0 => &mut zeeman,
            NoiseTarget::DressingAmplitudeFractional => &mut amplitude,
        };
        match slot {
            Some(acc) => acc.iter_mut().zip(&path).for_each(|(a, b)| *a += *b),
            None => *slot = Some(path),
        }
    }
    // the bare frame keeps every noise segment static, so each one is an exact exponential
    let mut gen = HamiltonianGenerator::bare(T::zero()).with_dressing(omega_mw);
    if let Some(z) = zeeman {
        gen = gen.with_zeeman(to_signal(&z, spec.noise_dt));
        gen.second_order = second_order;
    }
    if let Some(a) = amplitude {
        gen = gen.with_dressing_noise(to_signal(&a, spec.noise_dt));
    }
    Ok(gen)
}

fn states_at<T: Real>(
    psi0: &StateVector<T>,
    gen: &HamiltonianGenerator<T>,
    times: &[T],
    ctrl: &PropagationControl<T>,
) -> Result<Vec<StateVector<T>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut psi = *psi0;
    let mut t = T::zero();
    for &ts in times {
        psi = evolve_from(&psi, gen, t, ts - t, ctrl)?;
        t = ts;
        out.push(psi);
    }
    Ok(out)
}

fn superposition<T: Real>(basis: Basis, a: usize, b: usize) -> StateVector<T> {
    let mut amps = [cr(T::zero()); 4];
    amps[a] = cr(T::FRAC_1_SQRT_2());
    amps[b] = cr(T::FRAC_1_SQRT_2());
    StateVector { basis, amplitudes: amps }
}

/// Ensemble-averaged survival of a dressed state under dressing Ω_μw and the
/// given noise, with an exponential fit.
pub fn survival_curve<T: Real>(
    initial: DressedState,
    omega_mw: T,
    processes: &[NoiseProcess<T>],
    spec: &EnsembleSpec<T>,
    options: &SurvivalOptions<T>,
) -> Result<DecaySummary<T>> {
    spec.validate()?;
    for p in processes {
        p.validate()?;
    }
    if !(omega_mw > T::zero()) {
        return Err(invalid("omega_mw", "dressing must be on"));
    }
    let x = initial.index();
    let psi0 = match options.observable {
        SurvivalObservable::Population => StateVector::dressed(x),
        SurvivalObservable::QubitFidelity => superposition(Basis::Dressed, DRESSED_ZERO_PRIME, x),
    }
    .to_basis(Basis::Bare);
    let clean = HamiltonianGenerator::bare(T::zero()).with_dressing(omega_mw);
    let reference = states_at(&psi0, &clean, &spec.sample_times, &options.control)?;

    let rows: Vec<Result<Vec<T>>> = ensemble_map(spec.n_trajectories, spec.master_seed, |_, rng| {
        let gen = build_generator(omega_mw, processes, spec, options.second_order, rng)?;
        let states = states_at(&psi0, &gen, &spec.sample_times, &options.control)?;
        Ok(states
            .iter()
            .zip(&reference)
            .map(|(s, r)| match options.observable {
                SurvivalObservable::Population => populations(s, Basis::Dressed)[x],
                SurvivalObservable::QubitFidelity => r.overlap(s).norm_sqr(),
            })
            .collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let (mean, stderr): (Vec<T>, Vec<T>) = (0..spec.sample_times.len()).map(|j| mean_and_stderr(&rows, j)).unzip();
    let fit = fit_decay(&spec.sample_times, &mean);
    Ok(DecaySummary {
        times: spec.sample_times.clone(),
        mean,
        stderr,
        model: FitModel::ExponentialToFloor,
        lifetime: fit.lifetime,
        lifetime_stderr: fit.lifetime_stderr,
        floor: fit.floor,
        residual_norm: fit.residual_norm,
        converged: fit.converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit<T> {
    pub lifetime: T,
    pub lifetime_stderr: T,
    pub floor: T,
    pub residual_norm: T,
    pub converged: bool,
}

/// Least-squares fit of s(t) = a + (1 − a)·exp(−t/τ) with a ∈ [0, 1]. The
/// floor is solved in closed form for each τ; τ is searched on a log grid from a tenth of
/// the first positive sample time up to 100× the last one, then refined by
/// golden section.
pub fn fit_decay<T: Real>(times: &[T], values: &[T]) -> DecayFit<T> {
    let tmax = times.iter().copied().fold(T::zero(), T::max);
    let tmin = times.iter().copied().filter(|&t| t > T::zero()).fold(T::infinity(), T::min);
    let upper = tmax * T::lit(100.0);
    let eval = |tau: T| -> (T, T) {
        let mut num = T::zero();
        let mut den = T::zero();
        for (&t, &s) in times.iter().zip(values) {
            let e = (-t / tau).exp();
            num += (T::one() - e) * (s - e);
            den += (T::one() - e) * (T::one() - e);
        }
        let a = if den > T::zero() { (num / den).max(T::zero()).min(T::one()) } else { T::zero() };
        let mut rss = T::zero();
        for (&t, &s) in times.iter().zip(values) {
            let e = (-t / tau).exp();
            let r = s - (a + (T::one() - a) * e);
            rss += r * r;
        }
        (rss, a)
    };
    if !(tmax > T::zero()) || !tmin.is_finite() || times.len() < 2 {
        return DecayFit {
            lifetime: upper,
            lifetime_stderr: T::zero(),
            floor: T::zero(),
            residual_norm: T::zero(),
            converged: false,
        };
    }
    let lower = tmin / T::lit(10.0);
    let n_grid = 200;
    let ratio = (upper / lower).ln();
    let grid: Vec<T> = (0..=n_grid)
        .map(|k| lower * (ratio * T::from_usize(k).unwrap() / T::from_usize(n_grid).unwrap()).exp())
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &tau)| (k, eval(tau).0))
        .fold((0, T::infinity()), |acc, (k, r)| if r < acc.1 { (k, r) } else { acc });
    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(n_grid)].ln();
    let log_tau = crate::optimize::golden_min(|x: T| eval(x.exp()).0, lo, hi, T::lit(1e-10));
    let mut tau = log_tau.exp();
    // a floor of one means nothing decayed
    let converged = best < n_grid && tau < upper * T::lit(0.999) && eval(tau).1 < T::one() - T::lit(1e-9);
    if !converged {
        tau = upper;
    }
    let (rss, a) = eval(tau);
    // covariance of (a, τ) from the Jacobian of the residuals
    let mut jtj = [[T::zero(); 2]; 2];
    for &t in times {
        let e = (-t / tau).exp();
        let ja = T::one() - e;
        let jt = (T::one() - a) * e * t / (tau * tau);
        jtj[0][0] += ja * ja;
        jtj[0][1] += ja * jt;
        jtj[1][1] += jt * jt;
    }
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[0][1];
    let dof = T::from_usize(times.len().saturating_sub(2).max(1)).unwrap();
    let s2 = rss / dof;
    let var_tau = if det > T::zero() { s2 * jtj[0][0] / det } else { T::infinity() };
    DecayFit {
        lifetime: tau,
        lifetime_stderr: if converged { var_tau.sqrt() } else { T::infinity() },
        floor: a,
        residual_norm: rss.sqrt(),
        converged,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RamseyQubit {
    /// {|0'⟩, |D⟩} with dressing on.
    #[serde(rename = "0prime_d")]
    ZeroPrimeDark,
    /// {|0⟩, |+1⟩}, no dressing.
    BareSensitive,
    /// {|0⟩, |0'⟩}, no dressing.
    BareClock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyCurve<T> {
    pub delays: Vec<T>,
    pub contrast: Vec<T>,
    pub stderr: Vec<T>,
    /// First delay where the contrast falls to 1/e, linearly interpolated.
    pub one_over_e_time: Option<T>,
}

impl<T: Real> RamseyCurve<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_curve(w, &self.delays, &self.contrast, &self.stderr)
    }
}

/// Simulated Ramsey contrast 2|⟨a|ρ|b⟩| of an equal superposition of the
/// qubit levels after free evolution under noise.
pub fn ramsey_coherence<T: Real>(
    qubit: RamseyQubit,
    omega_mw: T,
    processes: &[NoiseProcess<T>],
    spec: &EnsembleSpec<T>,
    second_order: Option<SecondOrderZeeman<T>>,
    control: &PropagationControl<T>,
) -> Result<RamseyCurve<T>> {
    spec.validate()?;
    for p in processes {
        p.validate()?;
    }
    let (psi0, a, b, dressing) = match qubit {
        RamseyQubit::ZeroPrimeDark => {
            if !(omega_mw > T::zero()) {
                return Err(invalid("omega_mw", "dressed qubit needs dressing on"));
            }
            (
                superposition(Basis::Dressed, DRESSED_ZERO_PRIME, crate::hamiltonian::DARK).to_basis(Basis::Bare),
                DRESSED_ZERO_PRIME,
                crate::hamiltonian::DARK,
                omega_mw,
            )
        }
        RamseyQubit::BareSensitive => (superposition(Basis::Bare, ZERO, PLUS), ZERO, PLUS, T::zero()),
        RamseyQubit::BareClock => (superposition(Basis::Bare, ZERO, ZERO_PRIME), ZERO, ZERO_PRIME, T::zero()),
    };
    let readout = match qubit {
        RamseyQubit::ZeroPrimeDark => Basis::Dressed,
        _ => Basis::Bare,
    };
    let rows: Vec<Result<Vec<(T, T)>>> = ensemble_map(spec.n_trajectories, spec.master_seed, |_, rng| {
        let gen = build_generator(dressing, processes, spec, second_order, rng)?;
        let states = states_at(&psi0, &gen, &spec.sample_times, control)?;
        Ok(states
            .iter()
            .map(|s| {
                let v = s.to_basis(readout).amplitudes;
                let c = v[a].conj() * v[b];
                (c.re, c.im)
            })
            .collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = T::from_usize(rows.len()).unwrap();
    let mut contrast = Vec::new();
    let mut stderr = Vec::new();
    for j in 0..spec.sample_times.len() {
        let re = rows.iter().map(|r| r[j].0).fold(T::zero(), |x, y| x + y) / n;
        let im = rows.iter().map(|r| r[j].1).fold(T::zero(), |x, y| x + y) / n;
        let mag = (re * re + im * im).sqrt();
        contrast.push(T::two() * mag);
        // spread of the projection onto the mean phase
        let se = if rows.len() > 1 && mag > T::zero() {
            let var = rows
                .iter()
                .map(|r| {
                    let p = (r[j].0 * re + r[j].1 * im) / mag - mag;
                    p * p
                })
                .fold(T::zero(), |x, y| x + y)
                / (n - T::one());
            T::two() * (var / n).sqrt()
        } else {
            T::zero()
        };
        stderr.push(se);
    }
    let one_over_e_time = crossing_time(&spec.sample_times, &contrast, (-T::one()).exp());
    Ok(RamseyCurve {
        delays: spec.sample_times.clone(),
        contrast,
        stderr,
        one_over_e_time,
    })
}

fn crossing_time<T: Real>(times: &[T], values: &[T], level: T) -> Option<T> {
    for k in 1..values.len() {
        let (v0, v1) = (values[k - 1], values[k]);
        if v0 > level && v1 <= level {
            let f = (v0 - level) / (v0 - v1);
            return Some(times[k - 1] + f * (times[k] - times[k - 1]));
        }
    }
    None
}
