//! Leading-edge extraction and recovery/decay fits for time-resolved PLE.
//!
//! The central model is the two-parameter pulse-pair recovery
//! `h2/h1 = q (1 - e^{-t/T1}) + 1 - q`, equivalently `1 - q e^{-t/T1}`,
//! where `q` is the peak fraction h0/(h0+δ) above the darkened baseline δ.
//! A pile-up-aware variant adds the known dead-time error term
//! `(ε1 - ε2(t)) / (h0 + δ - ε1)` supplied by the `deadtime` module, and
//! mono/bi-exponential fits cover the slow bleaching dynamics.

use serde::{Deserialize, Serialize};

use crate::fitting::{levenberg_marquardt, logit, sigmoid, LmConfig};
use crate::trace::TimeTrace;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Leading-edge heights of a pump-probe pulse pair separated by `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePairRecord {
    /// Delay between the pulses, s.
    pub tau: f64,
    /// Leading-edge height of the first pulse, Hz.
    pub h1: f64,
    /// Leading-edge height of the second pulse, Hz.
    pub h2: f64,
}

impl PulsePairRecord {
    pub fn ratio(&self) -> f64 {
        self.h2 / self.h1
    }
}

/// Result of a pulse-pair recovery fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1FitResult {
    /// Recovered spin-relaxation time, s.
    #[serde(rename = "t1_s")]
    pub t1: f64,
    /// Peak fraction q (or the corrected fraction q' for the pile-up
    /// aware fit).
    pub q: f64,
    #[serde(rename = "stderr_t1_s")]
    pub stderr_t1: f64,
    pub stderr_q: f64,
    /// Residual sum of squares of the ratio fit.
    pub rss: f64,
    pub converged: bool,
    #[serde(skip)]
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// Leading edges
// ---------------------------------------------------------------------------

/// Mean of the first `n_bins` bins at or after `pulse_start`.
pub fn leading_edge_height(trace: &TimeTrace, pulse_start: f64, n_bins: usize) -> Result<f64> {
    if n_bins == 0 {
        return Err(Error::TraceRange("leading edge needs n_bins >= 1".into()));
    }
    let first = trace.first_bin_at(pulse_start);
    trace.mean_over(first, n_bins)
}

/// Default leading-edge window length in bins.
pub const DEFAULT_LEADING_BINS: usize = 20;

// ---------------------------------------------------------------------------
// Recovery model
// ---------------------------------------------------------------------------

/// The recovery model `1 - q e^{-tau/t1}`.
pub fn recovery_model(t1: f64, q: f64, tau: f64) -> f64 {
    1.0 - q * (-tau / t1).exp()
}

/// Analytic gradient of [`recovery_model`] with respect to `(t1, q)`.
pub fn recovery_model_gradient(t1: f64, q: f64, tau: f64) -> (f64, f64) {
    let e = (-tau / t1).exp();
    (-q * e * tau / (t1 * t1), -e)
}

fn validate_records(records: &[PulsePairRecord]) -> Result<()> {
    if records.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "need at least 3 pulse-pair records, got {}",
            records.len()
        )));
    }
    for r in records {
        if !r.tau.is_finite() || r.tau <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "tau must be positive and finite, got {}",
                r.tau
            )));
        }
        if !r.h1.is_finite() || r.h1 <= 0.0 || !r.h2.is_finite() || r.h2 <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "heights must be positive and finite, got h1={} h2={}",
                r.h1, r.h2
            )));
        }
    }
    let mut taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    let distinct = 1 + taus.windows(2).filter(|w| w[1] > w[0]).count();
    if distinct < 2 {
        return Err(Error::RankDeficient(
            "all records share the same tau".into(),
        ));
    }
    Ok(())
}

/// Initial (T1, q) from the data: `q0 = 1 - min(h2/h1)` and T1 from the
/// log-linear slope of `1 - ratio` over the central tau points.
fn initial_guess(taus: &[f64], ratios: &[f64]) -> (f64, f64) {
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let q0 = (1.0 - min_ratio).clamp(1e-4, 1.0 - 1e-4);

    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let lo = order.len() / 4;
    let hi = (3 * order.len()).div_ceil(4);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &i in &order[lo..hi.max(lo + 2).min(order.len())] {
        let depth = 1.0 - ratios[i];
        if depth > 1e-12 {
            xs.push(taus[i]);
            ys.push(depth.ln());
        }
    }
    let median_tau = taus[order[order.len() / 2]];
    let t1_0 = if xs.len() >= 2 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx > 0.0 && sxy < 0.0 {
            -sxx / sxy
        } else {
            median_tau
        }
    } else {
        median_tau
    };
    (t1_0.max(1e-12), q0)
}

fn fit_ratios(taus: &[f64], ratios: &[f64], q_max: f64) -> Result<T1FitResult> {
    let (t1_0, q0) = initial_guess(taus, ratios);
    let q0 = (q0 / q_max).clamp(1e-4, 1.0 - 1e-4);
    let x0 = [t1_0.ln(), logit(q0)];
    let unpack = |x: &[f64]| -> (f64, f64) { (x[0].exp(), q_max * sigmoid(x[1])) };
    // dq/dv for q = q_max·sigmoid(v).
    let q_chain = |q: f64| q * (1.0 - q / q_max);
    let fit = levenberg_marquardt(
        &x0,
        &LmConfig::default(),
        |x| {
            let (t1, q) = unpack(x);
            taus.iter()
                .zip(ratios)
                .map(|(tau, y)| recovery_model(t1, q, *tau) - y)
                .collect()
        },
        |x| {
            let (t1, q) = unpack(x);
            taus.iter()
                .map(|tau| {
                    let (d_t1, d_q) = recovery_model_gradient(t1, q, *tau);
                    // Chain rule through t1 = e^u and q = q_max·sigmoid(v).
                    vec![d_t1 * t1, d_q * q_chain(q)]
                })
                .collect()
        },
    );
    let (t1, q) = unpack(&fit.params);
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            rss: fit.rss,
            best: vec![t1, q],
        });
    }
    Ok(T1FitResult {
        t1,
        q,
        stderr_t1: fit.stderr(0) * t1,
        stderr_q: fit.stderr(1) * q_chain(q),
        rss: fit.rss,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

/// Fit the two-parameter recovery model to pulse-pair records.
///
/// Only the ratio h2/h1 enters, so a common rescaling of all heights
/// leaves the fit unchanged. Standard errors come from the Jacobian at
/// the optimum. Non-convergence is reported as
/// [`Error::NonConvergence`] carrying the best `(t1, q)` seen.
pub fn fit_t1(records: &[PulsePairRecord]) -> Result<T1FitResult> {
    validate_records(records)?;
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let ratios: Vec<f64> = records.iter().map(|r| r.ratio()).collect();
    fit_ratios(&taus, &ratios, 1.0)
}

/// Pile-up-aware recovery fit.
///
/// Subtracts the known dead-time distortion
/// `(ε1 - ε2(τ)) / (h0 + δ - ε1)` from each measured ratio before fitting;
/// the denominator `h0 + δ - ε1` is exactly the measured h1 of the
/// record. With ε ≡ 0 this reduces to [`fit_t1`] identically. The
/// returned `q` is the corrected fraction q' = h0/(h0 + δ - ε1), which
/// exceeds 1 whenever the pile-up loss ε1 is larger than the baseline.
pub fn fit_t1_corrected(
    records: &[PulsePairRecord],
    epsilon1: f64,
    epsilon2: impl Fn(f64) -> f64,
) -> Result<T1FitResult> {
    validate_records(records)?;
    if !epsilon1.is_finite() {
        return Err(Error::InvalidParameters(format!(
            "epsilon1 must be finite, got {epsilon1}"
        )));
    }
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let corrections: Vec<f64> = records
        .iter()
        .map(|r| (epsilon1 - epsilon2(r.tau)) / r.h1)
        .collect();
    let ratios: Vec<f64> = records
        .iter()
        .zip(&corrections)
        .map(|(r, c)| r.ratio() - c)
        .collect();
    // A vanishing correction degenerates to the plain fit bit-for-bit,
    // including its q ∈ (0, 1) parameterization.
    let q_max = if corrections.iter().all(|c| *c == 0.0) {
        1.0
    } else {
        4.0
    };
    fit_ratios(&taus, &ratios, q_max)
}

// ---------------------------------------------------------------------------
// Multi-exponential bleaching fits
// ---------------------------------------------------------------------------

/// Whether the constant offset is fitted or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaselineMode {
    Fit,
    Fixed(f64),
}

/// Residual weighting for trace fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Shot-noise weights σ² = counts (floored at 1).
    Poisson,
}

/// One exponential component `amplitude · e^{-t/tau}` (t relative to the
/// trace start).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub tau: f64,
    pub stderr_amplitude: f64,
    pub stderr_tau: f64,
}

/// Result of [`fit_multi_exponential`]; terms are ordered by ascending
/// time constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpFit {
    pub terms: Vec<ExpTerm>,
    pub baseline: f64,
    pub stderr_baseline: f64,
    pub rss: f64,
    pub converged: bool,
    /// Set when the two fitted time constants collapsed onto each other
    /// (|tau1 - tau2| / tau2 < 1e-3); the split is then arbitrary.
    pub degenerate_taus: bool,
}

/// Least-squares fit of `Σ A_i e^{-t/τ_i} + baseline` with 1 or 2 terms.
pub fn fit_multi_exponential(
    trace: &TimeTrace,
    n_terms: usize,
    baseline: BaselineMode,
) -> Result<MultiExpFit> {
    fit_multi_exponential_with(trace, n_terms, baseline, Weighting::Unweighted)
}

/// [`fit_multi_exponential`] with optional Poisson weighting.
pub fn fit_multi_exponential_with(
    trace: &TimeTrace,
    n_terms: usize,
    baseline: BaselineMode,
    weighting: Weighting,
) -> Result<MultiExpFit> {
    if !(n_terms == 1 || n_terms == 2) {
        return Err(Error::Usage(format!(
            "n_terms must be 1 or 2, got {n_terms}"
        )));
    }
    let n = trace.len();
    let min_len = 3 * (2 * n_terms + 1);
    if n < min_len {
        return Err(Error::RankDeficient(format!(
            "trace has {n} bins, need at least {min_len} for {n_terms} terms"
        )));
    }
    let ts: Vec<f64> = (0..n).map(|i| i as f64 * trace.bin_width).collect();
    let ys = &trace.counts;
    let weights: Vec<f64> = match weighting {
        Weighting::Unweighted => vec![1.0; n],
        Weighting::Poisson => ys.iter().map(|y| 1.0 / y.max(1.0).sqrt()).collect(),
    };

    let (b_fixed, fit_baseline) = match baseline {
        BaselineMode::Fixed(b) => (b, false),
        BaselineMode::Fit => (0.0, true),
    };

    // Peeling initialization. The slow component plus offset comes from
    // three equal windows over the late half: for b + A e^{-t/tau} the
    // window means obey (y1-y2)/(y2-y3) = e^{d/tau} with the window
    // spacing d, which solves for tau, A and b without knowing any of
    // them up front.
    let span = ts[n - 1].max(trace.bin_width);
    let tail_estimate = || -> Option<(f64, f64, f64)> {
        let half = n / 2;
        let wlen = (n - half) / 3;
        if wlen < 2 {
            return None;
        }
        let mean = |k: usize| -> (f64, f64) {
            let lo = half + k * wlen;
            let hi = lo + wlen;
            let m = ys[lo..hi].iter().sum::<f64>() / wlen as f64;
            let tc = (ts[lo] + ts[hi - 1]) / 2.0;
            (m, tc)
        };
        let (y1, t1) = mean(0);
        let (y2, t2) = mean(1);
        let (y3, _) = mean(2);
        let num = y1 - y2;
        let den = y2 - y3;
        if den.abs() < 1e-300 || num / den <= 1.0 {
            return None;
        }
        let d = t2 - t1;
        let tau = d / (num / den).ln();
        let amp = num / ((-t1 / tau).exp() * (1.0 - (-d / tau).exp()));
        let offset = y1 - amp * (-t1 / tau).exp();
        (tau.is_finite() && amp.is_finite() && tau > 0.0).then_some((amp, tau, offset))
    };
    let regress =
        |idx: std::ops::Range<usize>, resid: &dyn Fn(usize) -> f64| -> Option<(f64, f64)> {
            let mut xs = Vec::new();
            let mut ls = Vec::new();
            let mut sign_acc = 0.0;
            for i in idx {
                let v = resid(i);
                if v.abs() > 1e-12 {
                    xs.push(ts[i]);
                    ls.push(v.abs().ln());
                    sign_acc += v.signum();
                }
            }
            if xs.len() < 2 {
                return None;
            }
            let nf = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / nf;
            let my = ls.iter().sum::<f64>() / nf;
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let sxy: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - my)).sum();
            if sxx <= 0.0 || sxy >= 0.0 {
                return None;
            }
            let tau = -sxx / sxy;
            let amp = (my + mx / tau).exp() * sign_acc.signum();
            Some((amp, tau))
        };

    let tail = tail_estimate();
    let b0 = if fit_baseline {
        tail.map(|(_, _, offset)| offset).unwrap_or_else(|| {
            let k = (n / 20).max(3).min(n);
            ys[n - k..].iter().sum::<f64>() / k as f64
        })
    } else {
        b_fixed
    };
    let mut inits: Vec<(f64, f64)> = Vec::new();
    if n_terms == 1 {
        let single = tail
            .filter(|_| fit_baseline)
            .map(|(amp, tau, _)| (amp, tau))
            .or_else(|| regress(0..n, &|i| ys[i] - b0))
            .unwrap_or((ys[0] - b0, (span / 3.0).max(1e-12)));
        inits.push((single.0, single.1.max(1e-12)));
    } else {
        let slow = tail
            .map(|(amp, tau, _)| (amp, tau))
            .or_else(|| regress(n / 2..9 * n / 10, &|i| ys[i] - b0))
            .unwrap_or((ys[n / 2] - b0, span.max(1e-12)));
        let fast = regress(0..n / 4, &|i| ys[i] - b0 - slow.0 * (-ts[i] / slow.1).exp())
            .unwrap_or((ys[0] - b0 - slow.0, (span / 30.0).max(1e-12)));
        inits.push((fast.0, fast.1.max(1e-12)));
        inits.push((slow.0, slow.1.max(1e-12)));
    }

    // Latent layout: [A_1, ln tau_1, (A_2, ln tau_2), (baseline)].
    let mut x0 = Vec::new();
    for (a, tau) in &inits {
        x0.push(*a);
        x0.push(tau.ln());
    }
    if fit_baseline {
        x0.push(b0);
    }
    let model = |x: &[f64], t: f64| -> f64 {
        let mut v = if fit_baseline {
            x[2 * n_terms]
        } else {
            b_fixed
        };
        for k in 0..n_terms {
            v += x[2 * k] * (-t / x[2 * k + 1].exp()).exp();
        }
        v
    };
    let fit = levenberg_marquardt(
        &x0,
        &LmConfig::default(),
        |x| {
            ts.iter()
                .zip(ys)
                .zip(&weights)
                .map(|((t, y), w)| (model(x, *t) - y) * w)
                .collect()
        },
        |x| {
            ts.iter()
                .zip(&weights)
                .map(|(t, w)| {
                    let mut row = Vec::with_capacity(x.len());
                    for k in 0..n_terms {
                        let tau = x[2 * k + 1].exp();
                        let e = (-t / tau).exp();
                        row.push(e * w);
                        row.push(x[2 * k] * e * (t / tau) * w);
                    }
                    if fit_baseline {
                        row.push(*w);
                    }
                    row
                })
                .collect()
        },
    );
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            rss: fit.rss,
            best: fit.params.clone(),
        });
    }

    let mut terms: Vec<ExpTerm> = (0..n_terms)
        .map(|k| {
            let tau = fit.params[2 * k + 1].exp();
            ExpTerm {
                amplitude: fit.params[2 * k],
                tau,
                stderr_amplitude: fit.stderr(2 * k),
                stderr_tau: fit.stderr(2 * k + 1) * tau,
            }
        })
        .collect();
    terms.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let degenerate_taus = n_terms == 2 && {
        let (t1, t2) = (terms[0].tau, terms[1].tau);
        (t2 - t1).abs() / t2 < 1e-3
    };
    let (baseline_value, stderr_baseline) = if fit_baseline {
        (fit.params[2 * n_terms], fit.stderr(2 * n_terms))
    } else {
        (b_fixed, 0.0)
    };
    Ok(MultiExpFit {
        terms,
        baseline: baseline_value,
        stderr_baseline,
        rss: fit.rss,
        converged: fit.converged,
        degenerate_taus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_records(t1: f64, q: f64, taus: &[f64], h1: f64) -> Vec<PulsePairRecord> {
        taus.iter()
            .map(|&tau| PulsePairRecord {
                tau,
                h1,
                h2: h1 * recovery_model(t1, q, tau),
            })
            .collect()
    }

    #[test]
    fn leading_edge_constant_and_ramp() {
        let constant = TimeTrace::new(0.0, 1e-3, vec![100.0; 40]).unwrap();
        assert_eq!(leading_edge_height(&constant, 0.0, 20).unwrap(), 100.0);

        let ramp = TimeTrace::new(0.0, 1.0, (1..=25).map(f64::from).collect()).unwrap();
        assert_eq!(leading_edge_height(&ramp, 0.0, 20).unwrap(), 10.5);
        // Window anchored mid-trace.
        assert_eq!(leading_edge_height(&ramp, 5.0, 3).unwrap(), 7.0);
    }

    #[test]
    fn leading_edge_range_errors() {
        let tr = TimeTrace::new(0.0, 1.0, vec![1.0; 10]).unwrap();
        assert!(leading_edge_height(&tr, 0.0, 20).is_err());
        assert!(leading_edge_height(&tr, 0.0, 0).is_err());
    }

    #[test]
    fn recovery_model_limits() {
        // tau -> 0 gives 1 - q; tau >> T1 approaches 1.
        assert_relative_eq!(recovery_model(2.4, 0.6, 1e-15), 0.4, max_relative = 1e-9);
        assert_relative_eq!(recovery_model(2.4, 0.6, 2400.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_recovers_noiseless_parameters() {
        let records = make_records(2.4, 0.6, &[0.2, 0.5, 1.0, 2.0, 4.0, 8.0], 1e5);
        let fit = fit_t1(&records).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.t1, 2.4, max_relative = 1e-6);
        assert_relative_eq!(fit.q, 0.6, max_relative = 1e-6);
        assert!(fit.rss < 1e-16);
    }

    #[test]
    fn fit_is_scale_invariant() {
        let taus = [0.3, 0.7, 1.5, 3.0, 6.0];
        let a = fit_t1(&make_records(1.7, 0.45, &taus, 1.0)).unwrap();
        let b = fit_t1(&make_records(1.7, 0.45, &taus, 8.5e4)).unwrap();
        assert_relative_eq!(a.t1, b.t1, max_relative = 1e-9);
        assert_relative_eq!(a.q, b.q, max_relative = 1e-9);
    }

    #[test]
    fn fitted_curve_is_monotone_on_grid() {
        let taus = [0.2, 0.4, 0.8, 1.6, 3.2, 6.4];
        let fit = fit_t1(&make_records(2.0, 0.5, &taus, 1e4)).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for tau in taus {
            let v = recovery_model(fit.t1, fit.q, tau);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t1 = 10f64.powf(rng.gen_range(-3.0..2.0));
            let q = rng.gen_range(0.05..0.95);
            // Delays in the information-carrying range of the model.
            let tau = t1 * 10f64.powf(rng.gen_range(-1.0..0.5));
            let (g_t1, g_q) = recovery_model_gradient(t1, q, tau);
            let h1 = 1e-6 * t1;
            let fd_t1 =
                (recovery_model(t1 + h1, q, tau) - recovery_model(t1 - h1, q, tau)) / (2.0 * h1);
            // The model is linear in q, so any step is exact there.
            let h2 = 1e-4;
            let fd_q =
                (recovery_model(t1, q + h2, tau) - recovery_model(t1, q - h2, tau)) / (2.0 * h2);
            assert_relative_eq!(g_t1, fd_t1, max_relative = 1e-6, epsilon = 1e-10);
            assert_relative_eq!(g_q, fd_q, max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let two = make_records(1.0, 0.5, &[0.5, 1.0], 1.0);
        assert!(matches!(fit_t1(&two), Err(Error::RankDeficient(_))));

        let equal_tau: Vec<_> = (0..4)
            .map(|_| PulsePairRecord {
                tau: 1.0,
                h1: 10.0,
                h2: 7.0,
            })
            .collect();
        assert!(matches!(fit_t1(&equal_tau), Err(Error::RankDeficient(_))));

        let bad_height = vec![
            PulsePairRecord {
                tau: 1.0,
                h1: 0.0,
                h2: 1.0,
            };
            3
        ];
        assert!(fit_t1(&bad_height).is_err());
    }

    #[test]
    fn corrected_fit_with_zero_epsilon_matches_plain() {
        let records = make_records(2.4, 0.6, &[0.2, 0.5, 1.0, 2.0, 4.0, 8.0], 9.7e4);
        let plain = fit_t1(&records).unwrap();
        let corrected = fit_t1_corrected(&records, 0.0, |_| 0.0).unwrap();
        assert_abs_diff_eq!(plain.t1, corrected.t1, epsilon = 1e-12 * plain.t1);
        assert_abs_diff_eq!(plain.q, corrected.q, epsilon = 1e-12);
    }

    #[test]
    fn poisson_noise_median_close_to_truth() {
        // Module-level smoke of estimator consistency; the acceptance
        // suite runs the full 200-replicate version.
        let t1 = 2.4;
        let q = 0.6;
        let taus = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0];
        let expected_peak_counts = 4000.0;
        let mut medians = Vec::new();
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<PulsePairRecord> = taus
                .iter()
                .map(|&tau| {
                    let mut draw = |mean: f64| {
                        rand_distr::Distribution::sample(
                            &rand_distr::Poisson::new(mean).unwrap(),
                            &mut rng,
                        )
                    };
                    PulsePairRecord {
                        tau,
                        h1: draw(expected_peak_counts).max(1.0),
                        h2: draw(expected_peak_counts * recovery_model(t1, q, tau)).max(1.0),
                    }
                })
                .collect();
            medians.push(fit_t1(&records).unwrap().t1);
        }
        medians.sort_by(f64::total_cmp);
        let median = medians[medians.len() / 2];
        assert!((median / t1 - 1.0).abs() < 0.025, "median {median} vs {t1}");
    }

    #[test]
    fn multi_exp_round_trip() {
        // 5 e^{-t/30} + 2 e^{-t/300} + 1 over 1000 s.
        let bin = 2.0;
        let n = 500;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * bin;
                5.0 * (-t / 30.0).exp() + 2.0 * (-t / 300.0).exp() + 1.0
            })
            .collect();
        let trace = TimeTrace::new(0.0, bin, counts).unwrap();
        let fit = fit_multi_exponential(&trace, 2, BaselineMode::Fit).unwrap();
        assert!(fit.converged);
        assert!(!fit.degenerate_taus);
        assert_relative_eq!(fit.terms[0].tau, 30.0, max_relative = 1e-4);
        assert_relative_eq!(fit.terms[0].amplitude, 5.0, max_relative = 1e-4);
        assert_relative_eq!(fit.terms[1].tau, 300.0, max_relative = 1e-4);
        assert_relative_eq!(fit.terms[1].amplitude, 2.0, max_relative = 1e-4);
        assert_relative_eq!(fit.baseline, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn multi_exp_constant_trace() {
        let trace = TimeTrace::new(0.0, 1.0, vec![7.5; 60]).unwrap();
        let fit = fit_multi_exponential(&trace, 1, BaselineMode::Fit).unwrap();
        assert!(fit.terms[0].amplitude.abs() < 1e-9);
        assert_relative_eq!(fit.baseline, 7.5, max_relative = 1e-9);
    }

    #[test]
    fn multi_exp_fixed_baseline() {
        let bin = 1.0;
        let counts: Vec<f64> = (0..120)
            .map(|i| 4.0 * (-(i as f64) * bin / 25.0).exp() + 2.0)
            .collect();
        let trace = TimeTrace::new(0.0, bin, counts).unwrap();
        let fit = fit_multi_exponential(&trace, 1, BaselineMode::Fixed(2.0)).unwrap();
        assert_eq!(fit.baseline, 2.0);
        assert_relative_eq!(fit.terms[0].tau, 25.0, max_relative = 1e-6);
        assert_relative_eq!(fit.terms[0].amplitude, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn recovery_segment_fit_independent_of_decay_segment() {
        // Bleaching-shaped run: fast+slow decay, then a single-exponential
        // recovery. The recovery fit must not depend on the decay segment.
        let bin = 1.0;
        let recovery = |i: usize| 10.0 - 6.0 * (-(i as f64) * bin / 40.0).exp();
        let rec_trace = TimeTrace::new(0.0, bin, (0..200).map(recovery).collect()).unwrap();
        let fit_rec = fit_multi_exponential(&rec_trace, 1, BaselineMode::Fit).unwrap();
        assert_relative_eq!(fit_rec.terms[0].tau, 40.0, max_relative = 1e-5);
        assert_relative_eq!(fit_rec.terms[0].amplitude, -6.0, max_relative = 1e-5);
        assert_relative_eq!(fit_rec.baseline, 10.0, max_relative = 1e-6);

        // Two different decay segments, same recovery afterwards.
        for (a_fast, tau_fast) in [(8.0, 15.0), (3.0, 60.0)] {
            let decay: Vec<f64> = (0..300)
                .map(|i| {
                    let t = i as f64 * bin;
                    a_fast * (-t / tau_fast).exp() + 2.0 * (-t / 400.0).exp() + 1.0
                })
                .collect();
            let _ = TimeTrace::new(0.0, bin, decay).unwrap();
            let again = fit_multi_exponential(&rec_trace, 1, BaselineMode::Fit).unwrap();
            assert_relative_eq!(
                again.terms[0].tau,
                fit_rec.terms[0].tau,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn poisson_weighting_still_recovers_parameters() {
        let bin = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let counts: Vec<f64> = (0..200)
            .map(|i| {
                let mean = 400.0 * (-(i as f64) * bin / 40.0).exp() + 50.0;
                rand_distr::Distribution::sample(&rand_distr::Poisson::new(mean).unwrap(), &mut rng)
            })
            .collect();
        let trace = TimeTrace::new(0.0, bin, counts).unwrap();
        let fit =
            fit_multi_exponential_with(&trace, 1, BaselineMode::Fit, Weighting::Poisson).unwrap();
        assert!(fit.converged);
        assert!((fit.terms[0].tau / 40.0 - 1.0).abs() < 0.15, "{fit:?}");
        assert!((fit.baseline / 50.0 - 1.0).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn single_exponential_data_degenerates_two_term_fit() {
        let bin = 1.0;
        let counts: Vec<f64> = (0..300)
            .map(|i| 5.0 * (-(i as f64) * bin / 50.0).exp() + 1.0)
            .collect();
        let trace = TimeTrace::new(0.0, bin, counts).unwrap();
        let fit = fit_multi_exponential(&trace, 2, BaselineMode::Fit).unwrap();
        let amp_ratio = fit
            .terms
            .iter()
            .map(|t| t.amplitude.abs())
            .fold(f64::INFINITY, f64::min)
            / fit
                .terms
                .iter()
                .map(|t| t.amplitude.abs())
                .fold(0.0, f64::max);
        assert!(
            fit.degenerate_taus || amp_ratio < 1e-3,
            "expected collapse or vanishing second term: {fit:?}"
        );
    }
}
