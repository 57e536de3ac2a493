//! Single-photon-counter dead-time pile-up.
//!
//! After every detection a non-paralyzable counter is blind for a fixed
//! dead time Δt. For Poisson photon arrivals the detection-rate density
//! obeys
//!
//! ```text
//! P_count(t) = P_photon(t) · (1 - ∫_{t-Δt}^{t} P_count(τ) dτ)
//! ```
//!
//! solved here by forward recurrence with trapezoidal accumulation of the
//! trailing-window integral. A seeded Monte-Carlo simulation of the same
//! detector provides an independent oracle, and [`t1_bias`] quantifies
//! the bias pile-up induces on pulse-pair T1 fits: the measured ratio
//! approaches its asymptote faster than reality, so the uncorrected fit
//! always comes out short.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::parallel::{map_indexed, mix_seed, Parallelism};
use crate::t1fit::{fit_t1, fit_t1_corrected, PulsePairRecord, T1FitResult};
use crate::trace::{TimeTrace, TraceUnit};
use crate::{Error, Result};

/// Minimum number of grid cells per dead time accepted by the solver.
const MIN_CELLS_PER_DEAD_TIME: f64 = 50.0;

/// Default grid refinement used when building grids from scratch.
pub const DEFAULT_CELLS_PER_DEAD_TIME: usize = 100;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Detector dead-time specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Non-paralyzable dead time Δt, s (0 disables the model).
    pub dead_time: f64,
    /// Optional sanity cap on photon rates fed to the detector, Hz.
    #[serde(default)]
    pub max_rate: Option<f64>,
}

impl DetectorSpec {
    pub fn new(dead_time: f64) -> Self {
        DetectorSpec {
            dead_time,
            max_rate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dead_time.is_finite() || self.dead_time < 0.0 {
            return Err(Error::InvalidParameters(format!(
                "dead time must be finite and >= 0, got {}",
                self.dead_time
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant photon-detection-probability density on a uniform
/// grid: `values[i]` holds on `[t0 + i·step, t0 + (i+1)·step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pub t0: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl RateFunction {
    pub fn new(t0: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "grid step must be positive and finite, got {step}"
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameters(format!(
                "rate values must be finite and >= 0, got {bad}"
            )));
        }
        Ok(RateFunction { t0, step, values })
    }

    /// Treat the bins of a rate trace as grid cells.
    pub fn from_trace(trace: &TimeTrace) -> Result<Self> {
        Self::new(trace.t0, trace.bin_width, trace.counts.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 * self.step
    }
}

// ---------------------------------------------------------------------------
// Integral-equation solver
// ---------------------------------------------------------------------------

/// Measured count-rate density after dead-time pile-up.
///
/// The detector is taken to be rested at the start of the grid (no
/// detections before `t0`). Each output cell solves the implicit
/// trapezoid update
/// `c_i = p_i (1 - S_i) / (1 + p_i·h/2)` where `S_i` is the trapezoidal
/// trailing-window integral over the preceding cells. With `dead_time =
/// 0` the input is returned unchanged.
pub fn measured_rate(photon: &RateFunction, det: &DetectorSpec) -> Result<TimeTrace> {
    det.validate()?;
    let dt = det.dead_time;
    if let Some(cap) = det.max_rate {
        if let Some(bad) = photon.values.iter().find(|v| **v > cap) {
            return Err(Error::InvalidParameters(format!(
                "photon rate {bad} exceeds detector cap {cap}"
            )));
        }
    }
    if dt == 0.0 {
        return TimeTrace::with_unit(
            photon.t0,
            photon.step,
            photon.values.clone(),
            TraceUnit::RateHz,
        );
    }
    let h = photon.step;
    if h > dt / MIN_CELLS_PER_DEAD_TIME {
        return Err(Error::GridTooCoarse {
            step: h,
            dead_time: dt,
        });
    }
    // Window length in cells; the dead time is quantized to the grid.
    let m = (dt / h).round() as usize;

    let n = photon.len();
    let mut counts = vec![0.0f64; n];
    // interior = Σ_{j = j0+1}^{i-1} c_j for the current window start j0.
    let mut interior = 0.0f64;
    for i in 0..n {
        let p = photon.values[i];
        // A rested detector sees the first instant undistorted: the
        // trailing window holds no prior counts at i = 0.
        let c = if i == 0 {
            p
        } else {
            let j0 = i.saturating_sub(m);
            let s = h * (0.5 * counts[j0] + interior);
            (p * (1.0 - s) / (1.0 + p * h * 0.5)).max(0.0)
        };
        counts[i] = c;
        // Slide the window for the next step: node i becomes interior
        // unless it is the window-start node itself (i = 0), and the node
        // entering half-weight position leaves the interior sum.
        if i + 1 > m {
            interior += c - counts[i + 1 - m];
        } else if i >= 1 {
            interior += c;
        }
    }
    TimeTrace::with_unit(photon.t0, h, counts, TraceUnit::RateHz)
}

/// Constant-rate fixed point of the pile-up equation: `p / (1 + p·Δt)`.
pub fn steady_state_rate(p: f64, det: &DetectorSpec) -> Result<f64> {
    det.validate()?;
    if !p.is_finite() || p < 0.0 {
        return Err(Error::InvalidParameters(format!(
            "rate must be finite and >= 0, got {p}"
        )));
    }
    Ok(p / (1.0 + p * det.dead_time))
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle
// ---------------------------------------------------------------------------

/// Compress the grid into runs of equal rate so arrival sampling skips
/// over constant stretches.
fn equal_rate_runs(photon: &RateFunction) -> Vec<(f64, f64, f64)> {
    let mut runs = Vec::new();
    let mut start = 0usize;
    for i in 1..=photon.len() {
        if i == photon.len() || photon.values[i] != photon.values[start] {
            runs.push((
                start as f64 * photon.step,
                i as f64 * photon.step,
                photon.values[start],
            ));
            start = i;
        }
    }
    runs
}

/// Trial-averaged detection-rate histogram from simulated Poisson photon
/// arrivals thinned by a non-paralyzable dead time.
///
/// Deterministic for a fixed `(seed, trials)` pair in both execution
/// modes: every trial gets its own counter-derived RNG stream and the
/// integer histograms add exactly.
pub fn monte_carlo_counts(
    photon: &RateFunction,
    det: &DetectorSpec,
    trials: u64,
    seed: u64,
) -> Result<TimeTrace> {
    monte_carlo_counts_with(photon, det, trials, seed, Parallelism::Auto)
}

/// [`monte_carlo_counts`] with an explicit execution mode.
pub fn monte_carlo_counts_with(
    photon: &RateFunction,
    det: &DetectorSpec,
    trials: u64,
    seed: u64,
    mode: Parallelism,
) -> Result<TimeTrace> {
    det.validate()?;
    if trials < 1 {
        return Err(Error::InvalidParameters("trials must be >= 1".into()));
    }
    let n = photon.len();
    let runs = equal_rate_runs(photon);
    let h = photon.step;
    let dt = det.dead_time;

    let n_chunks = 256.min(trials) as usize;
    let per_chunk = trials / n_chunks as u64;
    let remainder = trials % n_chunks as u64;
    let chunk_hists: Vec<Vec<u64>> = map_indexed(n_chunks, mode, |chunk| {
        let mut hist = vec![0u64; n];
        let lo = chunk as u64 * per_chunk + (chunk as u64).min(remainder);
        let extra = if (chunk as u64) < remainder { 1 } else { 0 };
        for trial in lo..lo + per_chunk + extra {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial));
            let mut ready = f64::NEG_INFINITY;
            for &(start, end, rate) in &runs {
                if rate == 0.0 {
                    continue;
                }
                let mut t = start;
                loop {
                    let gap: f64 = Exp1.sample(&mut rng);
                    t += gap / rate;
                    if t >= end {
                        break;
                    }
                    if t >= ready {
                        let bin = ((t / h) as usize).min(n - 1);
                        hist[bin] += 1;
                        ready = t + dt;
                    }
                }
            }
        }
        hist
    });

    let mut total = vec![0u64; n];
    for hist in chunk_hists {
        for (acc, v) in total.iter_mut().zip(hist) {
            *acc += v;
        }
    }
    let norm = 1.0 / (trials as f64 * h);
    TimeTrace::with_unit(
        photon.t0,
        h,
        total.into_iter().map(|c| c as f64 * norm).collect(),
        TraceUnit::RateHz,
    )
}

// ---------------------------------------------------------------------------
// T1 pile-up bias
// ---------------------------------------------------------------------------

/// Synthetic pump-probe scenario for the pile-up bias study.
///
/// Each pulse response is `background + baseline + (peak - baseline) ·
/// e^{-t/darkening_time}` with the second pulse's peak set by the
/// recovery model at its delay. Delays are expressed as multiples of the
/// true T1 so one scenario serves any lifetime scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScenario {
    pub detector: DetectorSpec,
    /// Equilibrium leading-edge peak rate h0 + δ, Hz.
    pub peak_rate: f64,
    /// Darkened baseline as a fraction of the peak, δ/(h0+δ) = 1 - q.
    pub baseline_fraction: f64,
    /// Time constant of the darkening decay within a pulse, s.
    pub darkening_time: f64,
    /// Pulse length, s.
    pub pulse_duration: f64,
    /// Output bin width for leading-edge extraction, s.
    pub bin_width: f64,
    /// Bins averaged for a leading edge.
    pub leading_bins: usize,
    /// Pulse delays in units of the true T1.
    pub delay_factors: Vec<f64>,
    /// Constant background rate present at all times, Hz.
    #[serde(default)]
    pub background: f64,
}

impl BiasScenario {
    /// A pulse-pair scenario in the regime of a saturated counter:
    /// 100 kHz peak against a 10 µs dead time.
    pub fn reference(dead_time: f64) -> Self {
        BiasScenario {
            detector: DetectorSpec::new(dead_time),
            peak_rate: 100e3,
            baseline_fraction: 0.5,
            darkening_time: 40e-6,
            pulse_duration: 250e-6,
            bin_width: 1e-6,
            leading_bins: 20,
            delay_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            background: 0.0,
        }
    }

    /// Sweep of peak rates and baseline fractions around the reference
    /// scenario, all at the same dead time.
    pub fn sweep_grid(dead_time: f64) -> Vec<Self> {
        let mut grid = Vec::new();
        for (peak, fracs) in [
            (40e3, &[0.4, 0.5][..]),
            (60e3, &[0.4, 0.5][..]),
            (80e3, &[0.5][..]),
            (100e3, &[0.5][..]),
        ] {
            for &frac in fracs {
                let mut s = Self::reference(dead_time);
                s.peak_rate = peak;
                s.baseline_fraction = frac;
                grid.push(s);
            }
        }
        grid
    }

    fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if !self.peak_rate.is_finite() || self.peak_rate <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "peak rate must be positive, got {}",
                self.peak_rate
            )));
        }
        if self.baseline_fraction <= 0.0
            || self.baseline_fraction >= 1.0
            || self.baseline_fraction.is_nan()
        {
            return Err(Error::InvalidScenario(format!(
                "baseline fraction must lie in (0, 1), got {}",
                self.baseline_fraction
            )));
        }
        if self.darkening_time <= 0.0
            || self.pulse_duration <= 0.0
            || self.darkening_time.is_nan()
            || self.pulse_duration.is_nan()
        {
            return Err(Error::InvalidScenario(
                "darkening time and pulse duration must be positive".into(),
            ));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) || self.leading_bins == 0 {
            return Err(Error::InvalidScenario(
                "bin width and leading bins must be positive".into(),
            ));
        }
        if self.leading_bins as f64 * self.bin_width > self.pulse_duration {
            return Err(Error::InvalidScenario(
                "leading-edge window longer than the pulse".into(),
            ));
        }
        if self.delay_factors.len() < 3 {
            return Err(Error::InvalidScenario(
                "need at least 3 delays for a recovery fit".into(),
            ));
        }
        if self.background < 0.0 || !self.background.is_finite() {
            return Err(Error::InvalidScenario("background must be >= 0".into()));
        }
        Ok(())
    }
}

/// Leading-edge errors and the induced T1 fit bias for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct T1Bias {
    /// First-pulse leading-edge error ε1 = true - measured, Hz.
    pub epsilon1: f64,
    /// Second-pulse errors ε2 per delay, Hz (approaching ε1 as τ ≫ T1).
    pub epsilon2: Vec<f64>,
    /// (true T1 - uncorrected fitted T1) / true T1; positive under
    /// pile-up.
    pub bias_fraction: f64,
    pub uncorrected: T1FitResult,
    pub corrected: T1FitResult,
    /// Measured (pile-up distorted) records the fits ran on.
    pub records: Vec<PulsePairRecord>,
}

/// Fine-grid exponential pulse with a background lead-in so the solver
/// reaches the background's own pile-up steady state before the pulse.
fn pulse_profile(scenario: &BiasScenario, leading_height: f64, step: f64) -> Result<RateFunction> {
    let baseline = scenario.baseline_fraction * scenario.peak_rate;
    let lead_in = if scenario.background > 0.0 && scenario.detector.dead_time > 0.0 {
        (8.0 * scenario.detector.dead_time / step).ceil() as usize
    } else {
        0
    };
    let pulse_cells = (scenario.pulse_duration / step).round() as usize;
    let mut values = vec![scenario.background; lead_in];
    values.extend((0..pulse_cells).map(|i| {
        let t = (i as f64 + 0.5) * step;
        scenario.background
            + baseline
            + (leading_height - baseline) * (-t / scenario.darkening_time).exp()
    }));
    RateFunction::new(-(lead_in as f64) * step, step, values)
}

/// Window mean over the leading-edge cells of a pulse profile, skipping
/// the lead-in.
fn window_mean(values: &[f64], lead_in: usize, window_cells: usize) -> f64 {
    values[lead_in..lead_in + window_cells].iter().sum::<f64>() / window_cells as f64
}

/// Quantify the dead-time bias on T1: synthesize the pulse-pair response,
/// push it through [`measured_rate`], fit with and without the pile-up
/// correction, and report the leading-edge errors.
pub fn t1_bias(scenario: &BiasScenario, true_t1: f64) -> Result<T1Bias> {
    scenario.validate()?;
    if !true_t1.is_finite() || true_t1 <= 0.0 {
        return Err(Error::InvalidScenario(format!(
            "true T1 must be positive, got {true_t1}"
        )));
    }
    let dt = scenario.detector.dead_time;
    for &f in &scenario.delay_factors {
        if dt > 0.0 && f * true_t1 < 50.0 * dt {
            return Err(Error::InvalidScenario(format!(
                "delay {} s too short for independent pulses (need >= 50 dead times)",
                f * true_t1
            )));
        }
    }
    // Grid: subdivide output bins finely enough for the solver.
    let sub = if dt > 0.0 {
        (scenario.bin_width / (dt / DEFAULT_CELLS_PER_DEAD_TIME as f64))
            .ceil()
            .max(1.0) as usize
    } else {
        1
    };
    let step = scenario.bin_width / sub as f64;
    let window_cells = scenario.leading_bins * sub;

    let peak = scenario.peak_rate;
    let baseline = scenario.baseline_fraction * peak;

    let measure = |leading_height: f64| -> Result<(f64, f64)> {
        let profile = pulse_profile(scenario, leading_height, step)?;
        let lead_in = profile.values.len() - (scenario.pulse_duration / step).round() as usize;
        let truth = window_mean(&profile.values, lead_in, window_cells);
        let measured_trace = measured_rate(&profile, &scenario.detector)?;
        let measured = window_mean(&measured_trace.counts, lead_in, window_cells);
        Ok((truth, measured))
    };

    let (h1_true, h1_meas) = measure(peak)?;
    let epsilon1 = h1_true - h1_meas;

    let mut records = Vec::with_capacity(scenario.delay_factors.len());
    let mut epsilon2 = Vec::with_capacity(scenario.delay_factors.len());
    for &factor in &scenario.delay_factors {
        let tau = factor * true_t1;
        let h2_inst = baseline + (peak - baseline) * (1.0 - (-tau / true_t1).exp());
        let (h2_true, h2_meas) = measure(h2_inst)?;
        epsilon2.push(h2_true - h2_meas);
        records.push(PulsePairRecord {
            tau,
            h1: h1_meas,
            h2: h2_meas,
        });
    }

    let uncorrected = fit_t1(&records)?;
    let eps_pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| r.tau)
        .zip(epsilon2.iter().copied())
        .collect();
    let eps2_of = move |tau: f64| -> f64 {
        eps_pairs
            .iter()
            .min_by(|a, b| (a.0 - tau).abs().total_cmp(&(b.0 - tau).abs()))
            .map(|(_, e)| *e)
            .unwrap_or(0.0)
    };
    let corrected = fit_t1_corrected(&records, epsilon1, eps2_of)?;
    let bias_fraction = (true_t1 - uncorrected.t1) / true_t1;
    Ok(T1Bias {
        epsilon1,
        epsilon2,
        bias_fraction,
        uncorrected,
        corrected,
        records,
    })
}
