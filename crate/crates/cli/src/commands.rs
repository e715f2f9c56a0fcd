use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};

use dressed_ion::noise::{survival_curve, EnsembleSpec, SinusoidPhase, SurvivalObservable, SurvivalOptions};
use dressed_ion::scalar::{gauss_to_tesla, tesla_to_gauss};
use dressed_ion::sequence::{
    addressing_scan, build_clock_prepare, build_stirap, composite_ud_rotation, crosstalk_report, fidelity, find_peaks,
    fit_rabi, ideal_qutrit_state, multi_line_model, rabi_trace, rf_line, run_traced, scan_frequency, six_line_model,
    stirap_transfer, tomography_readout, AddressingModel, PrepTarget, RampOrder, RfProbe, StirapDirection,
};
use dressed_ion::{
    Constants, Control, DressedState, Environment, Model, Noise, NoiseModel, Options, RampSpec, Sequence, Step,
};
use serde_json::{json, Value};

use crate::config::{
    linspace, AddressingField, FieldConfig, LifetimeMode, NoiseConfig, NoiseModelConfig, ObservableName, RampOrderName,
    ScenarioConfig, TomoTarget,
};
use crate::error::{config, CliError};
use crate::table::ResultTable;

fn khz(x: f64) -> f64 {
    TAU * 1e3 * x
}

fn to_khz(w: f64) -> f64 {
    w / TAU / 1e3
}

fn constants(cfg: &ScenarioConfig) -> Result<Constants, CliError> {
    let k = Constants::default()
        .with_g_j(cfg.constants.g_j)
        .with_ion_mass_amu(cfg.constants.ion_mass_amu);
    k.validate()?;
    Ok(k)
}

fn model(cfg: &ScenarioConfig) -> Result<Model, CliError> {
    let k = constants(cfg)?;
    Ok(match cfg.field {
        FieldConfig::BGauss(g) => Model::from_field(gauss_to_tesla(g), k)?,
        FieldConfig::SplittingKhz(s) => Model::from_field_splitting(khz(s), k)?,
        FieldConfig::PlusLineMhz(f) => Model::from_plus_line(TAU * 1e6 * f, k)?,
    })
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(config(format!("{name} must be positive, got {x}")))
    }
}

/// The part of the config a command depends on, echoed into its output.
pub fn echo(cfg: &ScenarioConfig, command: &str) -> Value {
    let mut v = json!({
        "seed": cfg.seed,
        "constants": cfg.constants,
        "field": cfg.field,
    });
    let section = match command {
        "spectrum" => json!(cfg.spectrum),
        "rabi" => json!(cfg.rabi),
        "stirap" => json!(cfg.stirap),
        "lifetime" => json!(cfg.lifetime),
        "addressing" => json!(cfg.addressing),
        "tomo" => json!(cfg.tomo),
        _ => Value::Null,
    };
    v[command] = section;
    v
}

pub fn spectrum(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let s = &cfg.spectrum;
    positive("spectrum.rf_rabi_khz", s.rf_rabi_khz)?;
    positive("spectrum.duration_us", s.duration_us)?;
    if !(s.mw_rabi_khz >= 0.0) {
        return Err(config("spectrum.mw_rabi_khz must be non-negative"));
    }
    let m = model(cfg)?;
    let probe = RfProbe {
        omega_mw: khz(s.mw_rabi_khz),
        rabi_rf: khz(s.rf_rabi_khz),
        duration: s.duration_us * 1e-6,
        phase: 0.0,
    };
    let wp = m.frequencies.omega_plus;
    let freqs: Vec<f64> = linspace(s.detuning_start_khz, s.detuning_stop_khz, s.points)
        .into_iter()
        .map(|d| wp + khz(d))
        .collect();
    let scan = scan_frequency(&probe, &freqs, &m, &Options::default())?;

    let with_model = s.include_model && probe.omega_mw > 0.0;
    let lines = if probe.omega_mw > 0.0 {
        Some(m.resonance_table(probe.omega_mw)?)
    } else {
        None
    };
    let mut columns = vec!["rf_frequency_khz".to_string(), "detuning_plus_khz".into(), "p_f1".into()];
    if with_model {
        columns.push("model_p_f1".into());
    }
    let mut t = ResultTable::new(columns);
    for p in &scan {
        let mut row = vec![to_khz(p.frequency), to_khz(p.frequency - wp), p.f1_population];
        if let (true, Some(table)) = (with_model, &lines) {
            row.push(six_line_model(table, probe.rabi_rf, probe.duration, p.frequency));
        }
        t.push(row);
    }
    let peaks: Vec<Value> = find_peaks(&scan, s.peak_threshold)
        .iter()
        .map(|p| json!({"detuning_plus_khz": to_khz(p.frequency - wp), "p_f1": p.f1_population}))
        .collect();
    let lines: Vec<Value> = lines
        .map(|table| {
            table
                .lines
                .iter()
                .map(|l| json!({"line": l.label(), "detuning_plus_khz": to_khz(l.frequency - wp)}))
                .collect()
        })
        .unwrap_or_default();
    t.summary = json!({
        "omega_plus_khz": to_khz(wp),
        "field_splitting_khz": to_khz(m.field_splitting()),
        "lines": lines,
        "peaks": peaks,
    });
    Ok(t)
}

pub fn rabi(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let r = &cfg.rabi;
    positive("rabi.mw_rabi_khz", r.mw_rabi_khz)?;
    positive("rabi.rf_rabi_khz", r.rf_rabi_khz)?;
    if r.targets.is_empty() {
        return Err(config("rabi.targets must not be empty"));
    }
    let m = model(cfg)?;
    let (w, rf) = (khz(r.mw_rabi_khz), khz(r.rf_rabi_khz));
    let durations: Vec<f64> = linspace(r.duration_start_us, r.duration_stop_us, r.points)
        .into_iter()
        .map(|d| d * 1e-6)
        .collect();
    let mut columns = vec!["duration_us".to_string()];
    let mut traces = Vec::new();
    let mut fits = serde_json::Map::new();
    for &target in &r.targets {
        let s = DressedState::from(target);
        columns.push(format!("p_f1_{}", s.label()));
        let trace = rabi_trace(s, &durations, &m, w, rf, &Options::default())?;
        let (_, factor) = rf_line(s, w);
        let mut fit = json!({"expected_period_us": 1e6 * TAU / (factor * rf)});
        if trace.len() >= 4 {
            let (t, p): (Vec<f64>, Vec<f64>) = trace.iter().copied().unzip();
            let f = fit_rabi(&t, &p)?;
            fit["period_us"] = json!(f.period() * 1e6);
            fit["contrast"] = json!(f.contrast);
            fit["max_p_f1"] = json!(p.iter().copied().fold(f64::MIN, f64::max));
        }
        fits.insert(s.label().to_string(), fit);
        traces.push(trace);
    }
    let mut t = ResultTable::new(columns);
    for (k, &d) in durations.iter().enumerate() {
        t.push(std::iter::once(d * 1e6).chain(traces.iter().map(|tr| tr[k].1)));
    }
    t.summary = json!({ "fits": fits });
    Ok(t)
}

pub fn stirap(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let s = &cfg.stirap;
    positive("stirap.time_scale", s.time_scale)?;
    positive("stirap.sample_us", s.sample_us)?;
    if !(s.hold_us >= 0.0) {
        return Err(config("stirap.hold_us must be non-negative"));
    }
    let m = model(cfg)?.with_pump_infidelity(s.pump_infidelity);
    let spec = RampSpec {
        peak_rabi: khz(s.peak_rabi_khz),
        sigma: s.sigma_us * 1e-6,
        pulse_separation: s.separation_us * 1e-6,
        truncation: s.truncation_sigmas,
        order: match s.order {
            RampOrderName::MinusFirst => RampOrder::MinusFirst,
            RampOrderName::PlusFirst => RampOrder::PlusFirst,
        },
    };
    spec.validate()?;
    let spec = spec.time_scaled(s.time_scale);
    let hold = s.hold_us * 1e-6;
    let protocol: Sequence = build_stirap(StirapDirection::Prepare, spec, &m)?
        .with_step(Step::Wait { duration: hold })
        .then(&build_stirap(StirapDirection::Release, spec, &m)?);
    let (outcome, samples) = run_traced(&protocol, &m, s.sample_us * 1e-6)?;
    let mut t = ResultTable::new(
        ["time_us", "p_0", "p_0prime", "p_plus1", "p_minus1", "p_D", "p_u", "p_d"]
            .map(String::from)
            .to_vec(),
    );
    for x in &samples {
        t.push(std::iter::once(x.time * 1e6).chain(x.bare).chain(x.dressed[..3].iter().copied()));
    }
    let report = stirap_transfer(spec, hold, &m)?;
    t.summary = json!({
        "adiabaticity": report.adiabaticity,
        "adiabatic": spec.is_adiabatic(),
        "dark_population": report.dark_population,
        "released_population": report.released_population,
        "round_trip_population": report.round_trip_population,
        "final_bare_populations": outcome.populations,
        "duration_us": outcome.duration * 1e6,
    });
    Ok(t)
}

fn noise_process(n: &NoiseConfig) -> Noise {
    let (model, scale, zeeman) = match *n {
        NoiseConfig::ZeemanKhz(m) => (m, khz(1.0), true),
        NoiseConfig::DressingFraction(m) => (m, 1.0, false),
    };
    let model = match model {
        NoiseModelConfig::Sinusoid {
            amplitude,
            frequency_khz,
            phase_rad,
        } => NoiseModel::Sinusoid {
            amplitude: amplitude * scale,
            frequency: khz(frequency_khz),
            phase: phase_rad.map_or(SinusoidPhase::UniformRandom, SinusoidPhase::Fixed),
        },
        NoiseModelConfig::OrnsteinUhlenbeck {
            stddev,
            correlation_time_us,
        } => NoiseModel::OrnsteinUhlenbeck {
            stddev: stddev * scale,
            correlation_time: correlation_time_us * 1e-6,
        },
        NoiseModelConfig::Telegraph {
            amplitude,
            switching_rate_per_s,
        } => NoiseModel::Telegraph {
            amplitude: amplitude * scale,
            switching_rate: switching_rate_per_s,
        },
    };
    if zeeman {
        Noise::zeeman(model)
    } else {
        Noise::dressing_amplitude(model)
    }
}

pub fn lifetime(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let l = &cfg.lifetime;
    positive("lifetime.mw_rabi_khz", l.mw_rabi_khz)?;
    let w = khz(l.mw_rabi_khz);
    match l.mode {
        LifetimeMode::Survival => survival(cfg, w),
        LifetimeMode::ResonanceSweep => resonance_sweep(cfg, w),
    }
}

fn survival(cfg: &ScenarioConfig, w: f64) -> Result<ResultTable, CliError> {
    let l = &cfg.lifetime;
    positive("lifetime.noise_dt_us", l.noise_dt_us)?;
    if l.states.is_empty() || l.points == 0 {
        return Err(config("lifetime needs at least one state and one time point"));
    }
    let processes: Vec<Noise> = l.noise.iter().map(noise_process).collect();
    let times: Vec<f64> = linspace(l.time_start_ms, l.time_stop_ms, l.points)
        .into_iter()
        .map(|t| t * 1e-3)
        .collect();
    let spec = EnsembleSpec::new(l.trajectories, cfg.seed, times.clone()).with_noise_dt(l.noise_dt_us * 1e-6);
    let opts = SurvivalOptions {
        observable: match l.observable {
            ObservableName::Population => SurvivalObservable::Population,
            ObservableName::QubitFidelity => SurvivalObservable::QubitFidelity,
        },
        ..SurvivalOptions::default()
    };
    let mut columns = vec!["time_ms".to_string()];
    let mut curves = Vec::new();
    let mut fits = serde_json::Map::new();
    for &state in &l.states {
        let s = DressedState::from(state);
        columns.push(format!("mean_{}", s.label()));
        columns.push(format!("stderr_{}", s.label()));
        let c = survival_curve(s, w, &processes, &spec, &opts)?;
        fits.insert(
            s.label().to_string(),
            json!({
                "lifetime_s": c.lifetime,
                "lifetime_stderr_s": c.lifetime_stderr,
                "floor": c.floor,
                "converged": c.converged,
            }),
        );
        curves.push(c);
    }
    let mut t = ResultTable::new(columns);
    for (k, &time) in times.iter().enumerate() {
        t.push(std::iter::once(time * 1e3).chain(curves.iter().flat_map(|c| [c.mean[k], c.stderr[k]])));
    }
    t.summary = json!({ "fits": fits });
    Ok(t)
}

fn resonance_sweep(cfg: &ScenarioConfig, w: f64) -> Result<ResultTable, CliError> {
    let s = &cfg.lifetime.sweep;
    positive("lifetime.sweep.time_ms", s.time_ms)?;
    positive("lifetime.sweep.noise_dt_us", s.noise_dt_us)?;
    let drive = w / SQRT_2;
    let spec = EnsembleSpec::new(1, cfg.seed, vec![s.time_ms * 1e-3]).with_noise_dt(s.noise_dt_us * 1e-6);
    let ratios = linspace(s.start_ratio, s.stop_ratio, s.points);
    let depletion = ratios
        .iter()
        .map(|&r| {
            let p = Noise::zeeman(NoiseModel::Sinusoid {
                amplitude: khz(s.amplitude_khz),
                frequency: r * drive,
                phase: SinusoidPhase::Fixed(0.0),
            });
            let c = survival_curve(DressedState::Dark, w, &[p], &spec, &SurvivalOptions::default())?;
            Ok(1.0 - c.mean[0])
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let mut t = ResultTable::new(vec!["modulation_khz".into(), "ratio".into(), "depletion_D".into()]);
    for (&r, &d) in ratios.iter().zip(&depletion) {
        t.push([to_khz(r * drive), r, d]);
    }
    let peak = (0..depletion.len()).fold(None, |b: Option<usize>, k| match b {
        Some(b) if depletion[b] >= depletion[k] => Some(b),
        _ => Some(k),
    });
    t.summary = json!({
        "dressed_splitting_khz": to_khz(drive),
        "peak_ratio": peak.map(|k| ratios[k]),
        "peak_modulation_khz": peak.map(|k| to_khz(ratios[k] * drive)),
    });
    Ok(t)
}

pub fn addressing(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let a = &cfg.addressing;
    positive("addressing.secular_khz", a.secular_khz)?;
    positive("addressing.pi_time_us", a.pi_time_us)?;
    if a.n_ions == 0 {
        return Err(config("addressing.n_ions must be at least 1"));
    }
    let k = constants(cfg)?;
    let b0 = match a.field {
        AddressingField::BGauss(g) => gauss_to_tesla(g),
        AddressingField::TunedSplittingKhz(_) => gauss_to_tesla(10.0),
    };
    let env = Environment {
        b_offset: b0,
        gradient: a.gradient_t_per_m,
    };
    let mut model = AddressingModel::new(k, env, a.n_ions, khz(a.secular_khz), PI / (a.pi_time_us * 1e-6))?;
    if let AddressingField::TunedSplittingKhz(s) = a.field {
        if a.n_ions < 2 {
            return Err(config("addressing.field.tuned_splitting_khz needs at least two ions"));
        }
        model = model.tuned_to_splitting(khz(s), 0, 1)?;
    }
    let shifts = model.clock_shifts()?;
    let centre = shifts.iter().sum::<f64>() / shifts.len() as f64;
    let offsets: Vec<f64> = linspace(a.offset_start_khz, a.offset_stop_khz, a.points)
        .into_iter()
        .map(|o| centre + khz(o))
        .collect();
    let ctrl = Control::default();
    let scan = addressing_scan(&model, &offsets, &ctrl)?;
    let mut columns = vec![
        "offset_khz".to_string(),
        "clock_detuning_khz".into(),
        "p_total".into(),
        "model_p_total".into(),
    ];
    columns.extend((0..a.n_ions).map(|i| format!("p_ion{i}")));
    let mut t = ResultTable::new(columns);
    for p in &scan {
        let head = [to_khz(p.offset - centre), to_khz(p.offset), p.total, multi_line_model(&model, p.offset)?];
        t.push(head.into_iter().chain(p.excitation.iter().copied()));
    }
    let crosstalk = if a.n_ions >= 2 && model.splitting(0, 1)? > 0.0 {
        let r = crosstalk_report(&model, 0, 1, &ctrl)?;
        json!({"estimate": r.estimate, "simulated": r.simulated, "splitting_khz": to_khz(r.splitting)})
    } else {
        Value::Null
    };
    let splittings: Vec<f64> = (1..a.n_ions)
        .map(|i| model.splitting(i - 1, i).map(to_khz))
        .collect::<Result<_, _>>()?;
    t.summary = json!({
        "centre_field_gauss": tesla_to_gauss(model.field.b_offset),
        "ion_fields_gauss": model.ion_fields().into_iter().map(tesla_to_gauss).collect::<Vec<_>>(),
        "positions_um": model.geometry.positions.iter().map(|z| z * 1e6).collect::<Vec<_>>(),
        "clock_shifts_khz": shifts.iter().map(|&s| to_khz(s)).collect::<Vec<_>>(),
        "adjacent_splittings_khz": splittings,
        "pi_time_us": model.pi_time() * 1e6,
        "crosstalk_0_1": crosstalk,
    });
    Ok(t)
}

pub fn tomo(cfg: &ScenarioConfig) -> Result<ResultTable, CliError> {
    let c = &cfg.tomo;
    positive("tomo.mw_rabi_khz", c.mw_rabi_khz)?;
    positive("tomo.rf_rabi_khz", c.rf_rabi_khz)?;
    let m = model(cfg)?;
    let (w, rf) = (khz(c.mw_rabi_khz), khz(c.rf_rabi_khz));
    let prepare = match c.target {
        TomoTarget::Dark => build_clock_prepare(PrepTarget::Dark, &m, w, rf)?,
        TomoTarget::Up => build_clock_prepare(PrepTarget::Up, &m, w, rf)?,
        TomoTarget::Down => build_clock_prepare(PrepTarget::Down, &m, w, rf)?,
        TomoTarget::UdSuperposition => {
            build_clock_prepare(PrepTarget::Up, &m, w, rf)?.then(&composite_ud_rotation(FRAC_PI_2, 0.0, &m, w, rf)?)
        }
    };
    let res = tomography_readout(&prepare, &m, w, rf, &Options::default())?;
    let psi = ideal_qutrit_state(&prepare, w)?;
    let rho = &res.reconstruction.rho;
    let labels = DressedState::ALL.map(|s| s.label());
    let mut t = ResultTable::new(["row", "col", "re", "im"].map(String::from).to_vec());
    for i in 0..3 {
        for j in 0..3 {
            let z = rho.0[i][j];
            t.rows.push(vec![
                labels[i].to_string(),
                labels[j].to_string(),
                crate::table::num(z.re),
                crate::table::num(z.im),
            ]);
        }
    }
    t.summary = json!({
        "fidelity": fidelity(rho, &psi),
        "target_amplitudes": psi.iter().map(|a| [a.re, a.im]).collect::<Vec<_>>(),
        "dark_probabilities": res.probabilities,
        "target": c.target,
    });
    Ok(t)
}
