//! State-dependent fluorescence readout: Poisson photon counts, threshold
//! discrimination and conversion of bright fractions to F = 1 populations.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const BATCH: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceModel {
    /// Mean photon counts per detection window for an F = 1 ion.
    pub mean_counts_bright: f64,
    /// Mean counts for an F = 0 ion (background).
    pub mean_counts_dark: f64,
    pub detection_time: f64,
    /// A shot is bright when its count exceeds this value.
    pub threshold: u32,
}

impl Default for FluorescenceModel {
    fn default() -> Self {
        Self {
            mean_counts_bright: 20.0,
            mean_counts_dark: 0.5,
            detection_time: 1.5e-3,
            threshold: 3,
        }
    }
}

impl FluorescenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_counts_dark >= 0.0 && self.mean_counts_dark.is_finite()) {
            return Err(invalid("mean_counts_dark", "must be finite and non-negative"));
        }
        if !(self.mean_counts_bright > self.mean_counts_dark && self.mean_counts_bright.is_finite()) {
            return Err(invalid("mean_counts_bright", "must exceed the dark count rate"));
        }
        if !(self.detection_time > 0.0) {
            return Err(invalid("detection_time", "must be positive"));
        }
        Ok(())
    }

    /// Exact p(bright | F = 0) and p(bright | F = 1).
    pub fn exact_calibration(&self) -> ReadoutCalibration {
        ReadoutCalibration {
            p_bright_given_f0: poisson_tail(self.mean_counts_dark, self.threshold),
            p_bright_given_f1: poisson_tail(self.mean_counts_bright, self.threshold),
        }
    }

    /// Exact bright probability for an ion with F = 1 population `f1`.
    pub fn bright_probability(&self, f1: f64) -> f64 {
        let c = self.exact_calibration();
        f1 * c.p_bright_given_f1 + (1.0 - f1) * c.p_bright_given_f0
    }
}

/// P(N > threshold) for N ~ Poisson(mean), summing whichever side of the
/// distribution is smaller.
pub fn poisson_tail(mean: f64, threshold: u32) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    if mean > threshold as f64 {
        let mut cdf = term;
        for k in 1..=threshold {
            term *= mean / k as f64;
            cdf += term;
        }
        (1.0 - cdf).max(0.0)
    } else {
        for k in 1..=threshold {
            term *= mean / k as f64;
        }
        let mut tail = 0.0;
        let mut k = threshold + 1;
        loop {
            term *= mean / k as f64;
            tail += term;
            if term < tail * 1e-17 || term == 0.0 {
                break;
            }
            k += 1;
        }
        tail
    }
}

/// Photon-count histogram: `counts[n]` shots recorded n photons.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub counts: Vec<u64>,
}

impl CountHistogram {
    pub fn shots(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, n: usize) {
        if n >= self.counts.len() {
            self.counts.resize(n + 1, 0);
        }
        self.counts[n] += 1;
    }

    pub fn merge(&mut self, other: &CountHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.counts.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum();
        total / self.shots().max(1) as f64
    }

    pub fn bright_fraction(&self, threshold: u32) -> f64 {
        let bright: u64 = self.counts.iter().skip(threshold as usize + 1).sum();
        bright as f64 / self.shots().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "count,frequency")?;
        for (n, c) in self.counts.iter().enumerate() {
            writeln!(w, "{n},{c}")?;
        }
        Ok(())
    }
}

fn draw<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as usize
}

/// Draws the F manifold of each shot from `f1_prob` and then a Poisson
/// count. Shots are generated in fixed batches, each from its own stream of
/// `seed`, so the histogram does not depend on the thread count.
pub fn simulate_counts(f1_prob: f64, model: &FluorescenceModel, shots: u64, seed: u64) -> Result<CountHistogram> {
    model.validate()?;
    if shots == 0 {
        return Err(invalid("shots", "need at least one shot"));
    }
    if !(0.0..=1.0).contains(&f1_prob) {
        return Err(invalid("f1_prob", "must be a probability"));
    }
    let batches = shots.div_ceil(BATCH);
    let parts: Vec<CountHistogram> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let n = BATCH.min(shots - b * BATCH);
            let mut h = CountHistogram::default();
            for _ in 0..n {
                let bright = rng.random::<f64>() < f1_prob;
                let mean = if bright { model.mean_counts_bright } else { model.mean_counts_dark };
                h.record(draw(mean, &mut rng));
            }
            h
        })
        .collect();
    let mut out = CountHistogram::default();
    for p in &parts {
        out.merge(p);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCalibration {
    pub p_bright_given_f0: f64,
    pub p_bright_given_f1: f64,
}

impl ReadoutCalibration {
    pub fn validate(&self) -> Result<()> {
        let (p0, p1) = (self.p_bright_given_f0, self.p_bright_given_f1);
        if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) || !(p0 < p1) {
            return Err(Error::DegenerateCalibration { p0, p1 });
        }
        Ok(())
    }
}

/// Empirical conditionals from `shots` simulated shots per F manifold.
pub fn calibrate(model: &FluorescenceModel, shots: u64, seed: u64) -> Result<ReadoutCalibration> {
    let dark = simulate_counts(0.0, model, shots, seed)?;
    let bright = simulate_counts(1.0, model, shots, seed.wrapping_add(1))?;
    let cal = ReadoutCalibration {
        p_bright_given_f0: dark.bright_fraction(model.threshold),
        p_bright_given_f1: bright.bright_fraction(model.threshold),
    };
    cal.validate()?;
    Ok(cal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Estimate {
    /// Raw linear inversion, not clamped.
    pub value: f64,
    pub out_of_range: bool,
}

pub fn infer_f1(p_bright: f64, cal: &ReadoutCalibration) -> Result<F1Estimate> {
    cal.validate()?;
    let value = (p_bright - cal.p_bright_given_f0) / (cal.p_bright_given_f1 - cal.p_bright_given_f0);
    Ok(F1Estimate {
        value,
        out_of_range: !(0.0..=1.0).contains(&value),
    })
}

/// Threshold minimizing the misclassification probability for an ion that is
/// in F = 1 with probability `prior_f1`.
pub fn optimal_threshold(model: &FluorescenceModel, prior_f1: f64) -> Result<u32> {
    model.validate()?;
    let upper = (model.mean_counts_bright + 10.0 * model.mean_counts_bright.sqrt() + 10.0).ceil() as u32;
    let error = |thr: u32| {
        prior_f1 * (1.0 - poisson_tail(model.mean_counts_bright, thr))
            + (1.0 - prior_f1) * poisson_tail(model.mean_counts_dark, thr)
    };
    let mut best = (0, f64::INFINITY);
    for thr in 0..=upper {
        let e = error(thr);
        if e < best.1 {
            best = (thr, e);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{DiscreteCDF, Poisson as Oracle};

    fn oracle_tail(mean: f64, thr: u32) -> f64 {
        Oracle::new(mean).unwrap().sf(thr as u64)
    }

    #[test]
    fn tails_match_reference_distribution() {
        for &mean in &[0.1, 0.5, 3.0, 20.0, 60.0] {
            for thr in 0..40 {
                let a = poisson_tail(mean, thr);
                let b = oracle_tail(mean, thr);
                assert!((a - b).abs() <= 1e-12 + 1e-9 * b, "mean {mean} thr {thr}: {a} vs {b}");
            }
        }
        let p0 = poisson_tail(0.5, 3);
        assert!((p0 - 1.75e-3).abs() < 0.01e-3, "{p0}");
        let p1 = poisson_tail(20.0, 3);
        assert!(((1.0 - p1) - 3.2e-6).abs() < 0.01e-6, "{}", 1.0 - p1);
    }

    #[test]
    fn all_dark_gives_zero_counts() {
        let m = FluorescenceModel {
            mean_counts_dark: 0.0,
            ..Default::default()
        };
        let h = simulate_counts(0.0, &m, 1000, 1).unwrap();
        assert_eq!(h.counts, vec![1000]);
    }

    #[test]
    fn bright_mean_within_three_sigma() {
        let h = simulate_counts(1.0, &FluorescenceModel::default(), 100_000, 2).unwrap();
        let sigma = (20.0f64 / 100_000.0).sqrt();
        assert!((h.mean() - 20.0).abs() < 3.0 * sigma, "{}", h.mean());
    }

    #[test]
    fn mixture_law_and_round_trip() {
        let m = FluorescenceModel::default();
        let cal = m.exact_calibration();
        for (i, &p) in [0.1, 0.5, 0.9].iter().enumerate() {
            let shots = 100_000u64;
            let h = simulate_counts(p, &m, shots, 10 + i as u64).unwrap();
            let frac = h.bright_fraction(m.threshold);
            let expected = m.bright_probability(p);
            let sigma = (expected * (1.0 - expected) / shots as f64).sqrt();
            assert!((frac - expected).abs() < 3.0 * sigma);
            let est = infer_f1(frac, &cal).unwrap();
            let scale = cal.p_bright_given_f1 - cal.p_bright_given_f0;
            assert!((est.value - p).abs() < 3.0 * sigma / scale, "{} vs {p}", est.value);
        }
    }

    #[test]
    fn calibration_converges_to_exact_tails() {
        let m = FluorescenceModel::default();
        let cal = calibrate(&m, 1_000_000, 4).unwrap();
        let exact = m.exact_calibration();
        let s0 = (exact.p_bright_given_f0 / 1e6).sqrt();
        let s1 = (exact.p_bright_given_f1 * (1.0 - exact.p_bright_given_f1) / 1e6).sqrt();
        assert!((cal.p_bright_given_f0 - exact.p_bright_given_f0).abs() < 4.0 * s0);
        assert!((cal.p_bright_given_f1 - exact.p_bright_given_f1).abs() < 4.0 * s1 + 1e-6);
    }

    #[test]
    fn degenerate_calibration_is_flagged() {
        // a threshold far above both means leaves every shot dark
        let m = FluorescenceModel {
            threshold: 200,
            ..Default::default()
        };
        assert!(matches!(calibrate(&m, 1000, 0), Err(Error::DegenerateCalibration { .. })));
        let flat = ReadoutCalibration {
            p_bright_given_f0: 1.0,
            p_bright_given_f1: 1.0,
        };
        assert!(infer_f1(0.5, &flat).is_err());
    }

    #[test]
    fn inference_endpoints_and_flag() {
        let cal = FluorescenceModel::default().exact_calibration();
        let (p0, p1) = (cal.p_bright_given_f0, cal.p_bright_given_f1);
        assert!(infer_f1(p0, &cal).unwrap().value.abs() < 1e-15);
        assert!((infer_f1(p1, &cal).unwrap().value - 1.0).abs() < 1e-15);
        assert!((infer_f1(0.5 * (p0 + p1), &cal).unwrap().value - 0.5).abs() < 1e-15);
        let low = infer_f1(0.0, &cal).unwrap();
        assert!(low.value < 0.0 && low.out_of_range);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let v = infer_f1(k as f64 / 100.0, &cal).unwrap().value;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn optimal_threshold_matches_brute_force() {
        for (bright, dark, prior) in [(20.0, 0.5, 0.5), (8.0, 1.0, 0.5), (12.0, 2.0, 0.2), (30.0, 0.1, 0.9)] {
            let m = FluorescenceModel {
                mean_counts_bright: bright,
                mean_counts_dark: dark,
                ..Default::default()
            };
            let got = optimal_threshold(&m, prior).unwrap();
            let brute = (0..200u32)
                .map(|t| (t, prior * (1.0 - oracle_tail(bright, t)) + (1.0 - prior) * oracle_tail(dark, t)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn histogram_is_thread_count_independent() {
        let m = FluorescenceModel::default();
        let a = simulate_counts(0.3, &m, 300_000, 8).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_counts(0.3, &m, 300_000, 8).unwrap());
        assert_eq!(a, b);
        let mut buf = Vec::new();
        CountHistogram { counts: vec![2, 1] }.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "count,frequency\n0,2\n1,1\n");
    }
}
