//! Spin-lattice relaxation versus temperature.
//!
//! The rate model is `1/T1 = C_D·T + C_R·T^n + C_O·exp(-Δ/k_B T) + Γ0`
//! with `n ∈ {5, 9}` (direct, Raman, Orbach and a temperature-independent
//! floor), plus the alternate power law `1/T1 = α·T + β·T^γ`. Rates span
//! several decades over a few kelvin, so all fits run in log-rate space;
//! coefficients stay nonnegative through a log reparameterization (the
//! zero bound sits in the far negative tail) and the activation energy is
//! bounded to (0, 50] meV.

use serde::{Deserialize, Serialize};

use crate::constants::K_B_MEV_PER_K;
use crate::fitting::{levenberg_marquardt, sigmoid, softplus, softplus_inv, LmConfig, LmFit};
use crate::{Error, Result};

/// Upper bound of the activation-energy reparameterization, meV.
const DELTA_MAX_MEV: f64 = 50.0;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Parameters of the direct + Raman + Orbach + constant model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempModelParams {
    /// Direct-process coefficient, Hz/K.
    pub c_direct: f64,
    /// Raman coefficient, Hz/K^n.
    pub c_raman: f64,
    /// Raman exponent, 5 or 9.
    pub n: u32,
    /// Orbach prefactor, Hz.
    pub c_orbach: f64,
    /// Activation energy Δ, meV.
    pub delta_mev: f64,
    /// Temperature-independent floor, Hz.
    pub gamma0: f64,
}

impl TempModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n != 5 && self.n != 9 {
            return Err(Error::InvalidParameters(format!(
                "Raman exponent must be 5 or 9, got {}",
                self.n
            )));
        }
        for (name, v) in [
            ("c_direct", self.c_direct),
            ("c_raman", self.c_raman),
            ("c_orbach", self.c_orbach),
            ("gamma0", self.gamma0),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.delta_mev.is_finite() || self.delta_mev <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "delta must be positive, got {}",
                self.delta_mev
            )));
        }
        Ok(())
    }
}

/// Parameters of the power-law alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    /// Linear coefficient α, Hz/K.
    pub alpha: f64,
    /// Power coefficient β, Hz/K^γ.
    pub beta: f64,
    /// Exponent γ > 1.
    pub gamma: f64,
}

/// One measured relaxation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationPoint {
    /// Temperature, K (> 0).
    pub temperature: f64,
    /// Relaxation rate 1/T1, Hz (> 0).
    pub rate: f64,
    /// Optional 1σ uncertainty on the rate, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// Convergence and conditioning report attached to every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Residual sum of squares in log-rate space.
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_points: usize,
    /// Standard errors of the natural parameters, in the same order as
    /// the parameter struct fields (NaN where unavailable).
    pub stderr: Vec<f64>,
    /// Data spans less than a factor 2 in temperature.
    pub ill_conditioned: bool,
    /// Power-law only: the power term contributes nothing, γ is
    /// unidentifiable.
    pub degenerate: bool,
}

/// Fit summary used for model ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub label: String,
    /// Log-space residual sum of squares.
    pub rss: f64,
    pub n_params: usize,
    pub n_points: usize,
}

/// One entry of a [`compare_models`] ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedModel {
    pub label: String,
    pub rss: f64,
    pub n_params: usize,
    /// Small-sample corrected information criterion (AICc); +inf when the
    /// correction is undefined (n <= k + 1).
    pub aicc: f64,
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// Evaluate the relaxation-rate model at a temperature.
pub fn model_rate(params: &TempModelParams, temperature: f64) -> f64 {
    params.c_direct * temperature
        + params.c_raman * temperature.powi(params.n as i32)
        + params.c_orbach * (-params.delta_mev / (K_B_MEV_PER_K * temperature)).exp()
        + params.gamma0
}

/// Analytic gradient of [`model_rate`] w.r.t.
/// `(c_direct, c_raman, c_orbach, delta_mev, gamma0)`.
pub fn model_rate_gradient(params: &TempModelParams, temperature: f64) -> [f64; 5] {
    let kbt = K_B_MEV_PER_K * temperature;
    let orbach = (-params.delta_mev / kbt).exp();
    [
        temperature,
        temperature.powi(params.n as i32),
        orbach,
        -params.c_orbach * orbach / kbt,
        1.0,
    ]
}

/// Evaluate the power-law model `α·T + β·T^γ`.
pub fn power_law_rate(params: &PowerLawParams, temperature: f64) -> f64 {
    params.alpha * temperature + params.beta * temperature.powf(params.gamma)
}

// ---------------------------------------------------------------------------
// Shared data validation
// ---------------------------------------------------------------------------

/// (temperatures, rates, log-space weights, ill-conditioned flag).
type PreparedData = (Vec<f64>, Vec<f64>, Vec<f64>, bool);

fn validate_data(data: &[RelaxationPoint]) -> Result<PreparedData> {
    if data.len() < 6 {
        return Err(Error::RankDeficient(format!(
            "need at least 6 relaxation points, got {}",
            data.len()
        )));
    }
    for p in data {
        if !p.temperature.is_finite() || p.temperature <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "temperatures must be positive, got {}",
                p.temperature
            )));
        }
        if !p.rate.is_finite() || p.rate <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "rates must be positive, got {}",
                p.rate
            )));
        }
        if let Some(s) = p.sigma {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "sigma must be positive when given, got {s}"
                )));
            }
        }
    }
    let temps: Vec<f64> = data.iter().map(|p| p.temperature).collect();
    let rates: Vec<f64> = data.iter().map(|p| p.rate).collect();
    // Log-space weights: 1/σ_log with σ_log = σ/rate, only when every
    // point carries an uncertainty.
    let weights: Vec<f64> = if data.iter().all(|p| p.sigma.is_some()) {
        data.iter().map(|p| p.rate / p.sigma.unwrap()).collect()
    } else {
        vec![1.0; data.len()]
    };
    let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = temps.iter().copied().fold(0.0, f64::max);
    let ill_conditioned = t_max < 2.0 * t_min;
    Ok((temps, rates, weights, ill_conditioned))
}

/// Slope of ln(rate) against 1/T over the two hottest points, as an
/// activation-energy first guess.
fn delta_guess(temps: &[f64], rates: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..temps.len()).collect();
    order.sort_by(|&a, &b| temps[a].total_cmp(&temps[b]));
    let hi = order[order.len() - 1];
    let lo = order[order.len() - 2];
    let d_inv_t = 1.0 / temps[hi] - 1.0 / temps[lo];
    if d_inv_t.abs() < 1e-12 {
        return 7.0;
    }
    let slope = (rates[hi].ln() - rates[lo].ln()) / d_inv_t;
    (-slope * K_B_MEV_PER_K).clamp(0.5, DELTA_MAX_MEV - 1.0)
}

// ---------------------------------------------------------------------------
// Temperature-model fit
// ---------------------------------------------------------------------------

struct TempLatent;

impl TempLatent {
    // Latent layout: [ln c_d, ln c_r, ln c_o, v_delta, ln g0] with
    // log-reparameterized coefficients (scale-free steps, positivity by
    // construction, the zero bound reached in the far negative tail) and
    // delta = DELTA_MAX * sigmoid(v).
    fn unpack(x: &[f64], n: u32) -> TempModelParams {
        TempModelParams {
            c_direct: x[0].exp(),
            c_raman: x[1].exp(),
            n,
            c_orbach: x[2].exp(),
            delta_mev: DELTA_MAX_MEV * sigmoid(x[3]),
            gamma0: x[4].exp(),
        }
    }

    fn pack(p: &TempModelParams) -> [f64; 5] {
        [
            p.c_direct.max(1e-300).ln(),
            p.c_raman.max(1e-300).ln(),
            p.c_orbach.max(1e-300).ln(),
            {
                let frac = (p.delta_mev / DELTA_MAX_MEV).clamp(1e-9, 1.0 - 1e-9);
                (frac / (1.0 - frac)).ln()
            },
            p.gamma0.max(1e-300).ln(),
        ]
    }

    /// d(natural)/d(latent) at the given natural parameters.
    fn chain(p: &TempModelParams) -> [f64; 5] {
        [
            p.c_direct,
            p.c_raman,
            p.c_orbach,
            p.delta_mev * (1.0 - p.delta_mev / DELTA_MAX_MEV),
            p.gamma0,
        ]
    }
}

fn run_temp_fit(temps: &[f64], rates: &[f64], weights: &[f64], n: u32, x0: &[f64]) -> LmFit {
    let log_rates: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    levenberg_marquardt(
        x0,
        &LmConfig::default(),
        |x| {
            let p = TempLatent::unpack(x, n);
            temps
                .iter()
                .zip(&log_rates)
                .zip(weights)
                .map(|((t, ly), w)| (model_rate(&p, *t).ln() - ly) * w)
                .collect()
        },
        |x| {
            let p = TempLatent::unpack(x, n);
            let chain = TempLatent::chain(&p);
            temps
                .iter()
                .zip(weights)
                .map(|(t, w)| {
                    let m = model_rate(&p, *t);
                    let g = model_rate_gradient(&p, *t);
                    (0..5).map(|j| g[j] / m * chain[j] * w).collect()
                })
                .collect()
        },
    )
}

/// Fit the temperature model for a fixed Raman exponent.
///
/// Runs a deterministic multi-start over activation-energy guesses and
/// keeps the lowest log-space RSS. Natural-parameter standard errors in
/// the diagnostics follow the field order of [`TempModelParams`]
/// (excluding `n`): c_direct, c_raman, c_orbach, delta_mev, gamma0.
pub fn fit_temp_model(
    data: &[RelaxationPoint],
    n: u32,
) -> Result<(TempModelParams, FitDiagnostics)> {
    if n != 5 && n != 9 {
        return Err(Error::Usage(format!(
            "Raman exponent must be 5 or 9, got {n}"
        )));
    }
    let (temps, rates, weights, ill_conditioned) = validate_data(data)?;
    let rate_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let rate_max = rates.iter().copied().fold(0.0, f64::max);
    let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = temps.iter().copied().fold(0.0, f64::max);

    let mut delta_starts = vec![delta_guess(&temps, &rates)];
    delta_starts.extend([3.0, 7.0, 20.0, 40.0]);
    let mut best: Option<LmFit> = None;
    for delta0 in delta_starts {
        let orbach_factor = (-delta0 / (K_B_MEV_PER_K * t_max)).exp();
        // Two floor guesses per activation energy: a sizeable one and one
        // parked near the zero bound, so a vanishing true floor does not
        // force a long crawl through the softplus knee.
        for gamma0_frac in [0.25, 1e-9] {
            let start = TempModelParams {
                c_direct: 0.5 * rate_min / t_min,
                c_raman: 0.1 * rate_min / t_min.powi(n as i32),
                n,
                c_orbach: (0.8 * rate_max / orbach_factor).min(1e300),
                delta_mev: delta0,
                gamma0: gamma0_frac * rate_min,
            };
            let fit = run_temp_fit(&temps, &rates, &weights, n, &TempLatent::pack(&start));
            if best.as_ref().is_none_or(|b| fit.rss < b.rss) {
                best = Some(fit);
            }
        }
    }
    let fit = best.expect("at least one start");
    let fit = snap_and_polish(fit, &temps, &rates, &weights, n);
    finish_temp_fit(fit, n, data.len(), ill_conditioned)
}

/// Re-run the temperature fit from explicit initial parameters (used for
/// idempotence checks and refinement).
pub fn fit_temp_model_with_init(
    data: &[RelaxationPoint],
    init: &TempModelParams,
) -> Result<(TempModelParams, FitDiagnostics)> {
    init.validate()?;
    let (temps, rates, weights, ill_conditioned) = validate_data(data)?;
    let fit = run_temp_fit(&temps, &rates, &weights, init.n, &TempLatent::pack(init));
    let fit = snap_and_polish(fit, &temps, &rates, &weights, init.n);
    finish_temp_fit(fit, init.n, data.len(), ill_conditioned)
}

/// Send coefficients whose largest fractional contribution anywhere on
/// the grid is numerically zero to the bound exactly, then refit the
/// survivors. A coefficient headed for its zero bound otherwise crawls
/// down the log coordinate forever without tripping any convergence
/// criterion; once pinned, the remaining parameters converge
/// quadratically.
fn snap_and_polish(mut fit: LmFit, temps: &[f64], rates: &[f64], weights: &[f64], n: u32) -> LmFit {
    for _ in 0..2 {
        let params = TempLatent::unpack(&fit.params, n);
        let mut snapped = params;
        let mut any = false;
        let mut max_frac = [0.0f64; 4];
        for &t in temps {
            let m = model_rate(&params, t);
            let parts = [
                params.c_direct * t,
                params.c_raman * t.powi(n as i32),
                params.c_orbach * (-params.delta_mev / (K_B_MEV_PER_K * t)).exp(),
                params.gamma0,
            ];
            for (acc, part) in max_frac.iter_mut().zip(parts) {
                *acc = acc.max(part / m);
            }
        }
        let slots: [&mut f64; 4] = [
            &mut snapped.c_direct,
            &mut snapped.c_raman,
            &mut snapped.c_orbach,
            &mut snapped.gamma0,
        ];
        for (slot, frac) in slots.into_iter().zip(max_frac) {
            if *slot > 0.0 && frac < 1e-12 {
                *slot = 0.0;
                any = true;
            }
        }
        let refit = run_temp_fit(temps, rates, weights, n, &TempLatent::pack(&snapped));
        let improved = refit.rss <= fit.rss * (1.0 + 1e-9);
        if improved && (refit.converged || !fit.converged) {
            fit = refit;
        }
        if !any {
            break;
        }
    }
    fit
}

fn finish_temp_fit(
    fit: LmFit,
    n: u32,
    n_points: usize,
    ill_conditioned: bool,
) -> Result<(TempModelParams, FitDiagnostics)> {
    let params = TempLatent::unpack(&fit.params, n);
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            rss: fit.rss,
            best: vec![
                params.c_direct,
                params.c_raman,
                params.c_orbach,
                params.delta_mev,
                params.gamma0,
            ],
        });
    }
    let chain = TempLatent::chain(&params);
    let stderr = (0..5).map(|j| fit.stderr(j) * chain[j]).collect();
    Ok((
        params,
        FitDiagnostics {
            rss: fit.rss,
            converged: true,
            iterations: fit.iterations,
            n_points,
            stderr,
            ill_conditioned,
            degenerate: false,
        },
    ))
}

// ---------------------------------------------------------------------------
// Power-law fit
// ---------------------------------------------------------------------------

fn unpack_power(x: &[f64]) -> PowerLawParams {
    PowerLawParams {
        alpha: x[0].exp(),
        beta: x[1].exp(),
        gamma: 1.0 + softplus(x[2]),
    }
}

/// Fit the power-law alternative `α·T + β·T^γ` in log-rate space.
///
/// When the fitted power term contributes less than 1e-6 of the model at
/// the hottest point, γ is unidentifiable and the diagnostics flag the
/// fit as degenerate. Standard errors follow (alpha, beta, gamma).
pub fn fit_power_law(data: &[RelaxationPoint]) -> Result<(PowerLawParams, FitDiagnostics)> {
    let (temps, rates, weights, ill_conditioned) = validate_data(data)?;
    let log_rates: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let rate_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let rate_max = rates.iter().copied().fold(0.0, f64::max);
    let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = temps.iter().copied().fold(0.0, f64::max);

    // Exponent guess from the log-log slope between the extremes.
    let gamma0 = ((rate_max / rate_min).ln() / (t_max / t_min).ln()).clamp(2.0, 30.0);
    let run = |gamma_start: f64| {
        let x0 = [
            (0.5 * rate_min / t_min).max(1e-300).ln(),
            (0.8 * rate_max / t_max.powf(gamma_start)).max(1e-300).ln(),
            softplus_inv((gamma_start - 1.0).max(1e-6)),
        ];
        levenberg_marquardt(
            &x0,
            &LmConfig::default(),
            |x| {
                let p = unpack_power(x);
                temps
                    .iter()
                    .zip(&log_rates)
                    .zip(&weights)
                    .map(|((t, ly), w)| (power_law_rate(&p, *t).ln() - ly) * w)
                    .collect()
            },
            |x| {
                let p = unpack_power(x);
                temps
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| {
                        let m = power_law_rate(&p, *t);
                        let tg = t.powf(p.gamma);
                        vec![
                            *t / m * p.alpha * w,
                            tg / m * p.beta * w,
                            p.beta * tg * t.ln() / m * sigmoid(x[2]) * w,
                        ]
                    })
                    .collect()
            },
        )
    };
    let mut best: Option<LmFit> = None;
    for start in [gamma0, 5.0, 13.0] {
        let fit = run(start);
        let better = match &best {
            None => true,
            Some(b) => {
                (fit.converged && !b.converged) || (fit.converged == b.converged && fit.rss < b.rss)
            }
        };
        if better {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    let params = unpack_power(&fit.params);
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            rss: fit.rss,
            best: vec![params.alpha, params.beta, params.gamma],
        });
    }
    // γ is unidentifiable when the power term contributes nothing or has
    // collapsed onto the linear term at its γ → 1 bound.
    let power_share = params.beta * t_max.powf(params.gamma) / power_law_rate(&params, t_max);
    let degenerate = power_share < 1e-6 || params.gamma < 1.0 + 1e-6;
    let chain = [params.alpha, params.beta, sigmoid(fit.params[2])];
    Ok((
        params,
        FitDiagnostics {
            rss: fit.rss,
            converged: true,
            iterations: fit.iterations,
            n_points: data.len(),
            stderr: (0..3).map(|j| fit.stderr(j) * chain[j]).collect(),
            ill_conditioned,
            degenerate,
        },
    ))
}

/// Constant-rate fit (`1/T1 = Γ0`), the one-parameter baseline model for
/// rankings. In log space the optimum is the geometric mean.
pub fn fit_constant(data: &[RelaxationPoint]) -> Result<(f64, FitDiagnostics)> {
    let (_, rates, weights, ill_conditioned) = validate_data(data)?;
    let wsum: f64 = weights.iter().map(|w| w * w).sum();
    let mean_log = rates
        .iter()
        .zip(&weights)
        .map(|(r, w)| r.ln() * w * w)
        .sum::<f64>()
        / wsum;
    let rss = rates
        .iter()
        .zip(&weights)
        .map(|(r, w)| {
            let d = (r.ln() - mean_log) * w;
            d * d
        })
        .sum();
    Ok((
        mean_log.exp(),
        FitDiagnostics {
            rss,
            converged: true,
            iterations: 0,
            n_points: data.len(),
            stderr: vec![f64::NAN],
            ill_conditioned,
            degenerate: false,
        },
    ))
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

/// Rank fits of the same data by a small-sample information criterion
/// (AICc on the log-space RSS), ties broken by fewer parameters, then by
/// label for full determinism.
pub fn compare_models(fits: &[FitSummary]) -> Result<Vec<RankedModel>> {
    if fits.len() < 2 {
        return Err(Error::Usage("need at least 2 fits to compare".into()));
    }
    let n = fits[0].n_points;
    if fits.iter().any(|f| f.n_points != n) {
        return Err(Error::Usage(
            "fits were produced on different data sets".into(),
        ));
    }
    let mut ranked: Vec<RankedModel> = fits
        .iter()
        .map(|f| {
            let nf = n as f64;
            let k = f.n_params as f64;
            let aicc = if n > f.n_params + 1 {
                nf * (f.rss.max(1e-300) / nf).ln() + 2.0 * k + 2.0 * k * (k + 1.0) / (nf - k - 1.0)
            } else {
                f64::INFINITY
            };
            RankedModel {
                label: f.label.clone(),
                rss: f.rss,
                n_params: f.n_params,
                aicc,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.aicc
            .total_cmp(&b.aicc)
            .then(a.n_params.cmp(&b.n_params))
            .then(a.label.cmp(&b.label))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_2_to_7() -> Vec<f64> {
        (0..11).map(|i| 2.0 + 0.5 * i as f64).collect()
    }

    fn synth(params: &TempModelParams, temps: &[f64]) -> Vec<RelaxationPoint> {
        temps
            .iter()
            .map(|&t| RelaxationPoint {
                temperature: t,
                rate: model_rate(params, t),
                sigma: None,
            })
            .collect()
    }

    fn reference_params() -> TempModelParams {
        TempModelParams {
            c_direct: 0.2,
            c_raman: 1e-3,
            n: 5,
            c_orbach: 5e12,
            delta_mev: 7.0,
            gamma0: 0.0,
        }
    }

    #[test]
    fn model_constant_only() {
        let p = TempModelParams {
            c_direct: 0.0,
            c_raman: 0.0,
            n: 5,
            c_orbach: 0.0,
            delta_mev: 7.0,
            gamma0: 5.0,
        };
        for t in [0.5, 2.0, 300.0] {
            assert_eq!(model_rate(&p, t), 5.0);
        }
    }

    #[test]
    fn orbach_factor_reference_value() {
        // exp(-7 meV / (k_B · 4 K)) evaluated independently.
        let p = TempModelParams {
            c_direct: 0.0,
            c_raman: 0.0,
            n: 5,
            c_orbach: 1.0,
            delta_mev: 7.0,
            gamma0: 0.0,
        };
        let factor = model_rate(&p, 4.0);
        let expect = (-7.0f64 / (8.617333262e-2 * 4.0)).exp();
        assert_relative_eq!(factor, expect, max_relative = 1e-14);
        assert_relative_eq!(factor, 1.515e-9, max_relative = 1e-3);
    }

    #[test]
    fn model_monotone_in_temperature() {
        let p = reference_params();
        let mut last = 0.0;
        for i in 1..200 {
            let t = 0.05 * i as f64;
            let v = model_rate(&p, t);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = TempModelParams {
                c_direct: 10f64.powf(rng.gen_range(-2.0..1.0)),
                c_raman: 10f64.powf(rng.gen_range(-5.0..-1.0)),
                n: if rng.gen_bool(0.5) { 5 } else { 9 },
                c_orbach: 10f64.powf(rng.gen_range(6.0..13.0)),
                delta_mev: rng.gen_range(2.0..9.0),
                gamma0: 10f64.powf(rng.gen_range(-3.0..0.0)),
            };
            let t = rng.gen_range(2.0..7.0);
            let grad = model_rate_gradient(&p, t);
            let scale = model_rate(&p, t);
            type FieldAccessor = fn(&mut TempModelParams) -> &mut f64;
            let fields: [(FieldAccessor, f64); 5] = [
                (|p| &mut p.c_direct, p.c_direct),
                (|p| &mut p.c_raman, p.c_raman),
                (|p| &mut p.c_orbach, p.c_orbach),
                (|p| &mut p.delta_mev, p.delta_mev),
                (|p| &mut p.gamma0, p.gamma0),
            ];
            for (j, (field, value)) in fields.iter().enumerate() {
                // The model is linear in every coefficient, so a coarse
                // step is exact there; delta needs one small against the
                // Orbach curvature 1/(k_B T) yet large against roundoff.
                let h = if j == 3 { 3e-5 * value } else { 1e-3 * value };
                let mut hi = p;
                *field(&mut hi) += h;
                let mut lo = p;
                *field(&mut lo) -= h;
                let fd = (model_rate(&hi, t) - model_rate(&lo, t)) / (2.0 * h);
                // Exponentially suppressed Orbach gradients fall below
                // finite-difference resolution; floor on the model scale.
                assert_relative_eq!(
                    grad[j],
                    fd,
                    max_relative = 1e-6,
                    epsilon = 1e-8 * scale.max(1.0)
                );
            }
        }
    }

    #[test]
    fn round_trip_recovery() {
        let truth = reference_params();
        let data = synth(&truth, &grid_2_to_7());
        let (fit, diag) = fit_temp_model(&data, 5).unwrap();
        assert!(diag.converged);
        assert!(!diag.ill_conditioned);
        assert_relative_eq!(fit.c_direct, truth.c_direct, max_relative = 0.01);
        assert_relative_eq!(fit.c_raman, truth.c_raman, max_relative = 0.01);
        assert_relative_eq!(fit.c_orbach, truth.c_orbach, max_relative = 0.01);
        assert_relative_eq!(fit.delta_mev, truth.delta_mev, max_relative = 0.001);
    }

    #[test]
    fn noisy_replicates_bracket_delta() {
        // Module smoke; the acceptance suite runs 200 replicates.
        let truth = reference_params();
        let temps = grid_2_to_7();
        let mut deltas = Vec::new();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let data: Vec<RelaxationPoint> = temps
                .iter()
                .map(|&t| RelaxationPoint {
                    temperature: t,
                    rate: model_rate(&truth, t)
                        * (0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp(),
                    sigma: None,
                })
                .collect();
            deltas.push(fit_temp_model(&data, 5).unwrap().0.delta_mev);
        }
        deltas.sort_by(f64::total_cmp);
        let median = deltas[deltas.len() / 2];
        assert!((6.0..=8.0).contains(&median), "median delta {median}");
    }

    #[test]
    fn constant_data_pins_gamma0() {
        let data: Vec<RelaxationPoint> = grid_2_to_7()
            .iter()
            .map(|&t| RelaxationPoint {
                temperature: t,
                rate: 5.0,
                sigma: None,
            })
            .collect();
        let (fit, _) = fit_temp_model(&data, 5).unwrap();
        assert_relative_eq!(fit.gamma0, 5.0, max_relative = 1e-5);
        // The other terms sit at the zero bound: their contribution at
        // the hottest point is negligible.
        let floor = model_rate(&fit, 7.0) - fit.gamma0;
        assert!(floor / fit.gamma0 < 1e-5, "residual terms {floor}");
    }

    #[test]
    fn too_few_points_is_an_error() {
        let data = synth(&reference_params(), &[2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(
            fit_temp_model(&data, 5),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn narrow_span_sets_warning() {
        let temps: Vec<f64> = (0..8).map(|i| 4.0 + 0.1 * i as f64).collect();
        let data = synth(&reference_params(), &temps);
        let (_, diag) = fit_temp_model(&data, 5).unwrap();
        assert!(diag.ill_conditioned);
    }

    #[test]
    fn power_law_round_trip() {
        let truth = PowerLawParams {
            alpha: 0.2,
            beta: 1e-9,
            gamma: 13.0,
        };
        let data: Vec<RelaxationPoint> = grid_2_to_7()
            .iter()
            .map(|&t| RelaxationPoint {
                temperature: t,
                rate: power_law_rate(&truth, t),
                sigma: None,
            })
            .collect();
        let (fit, diag) = fit_power_law(&data).unwrap();
        assert!(!diag.degenerate);
        assert_relative_eq!(fit.alpha, truth.alpha, max_relative = 0.01);
        assert_relative_eq!(fit.beta, truth.beta, max_relative = 0.05);
        assert_relative_eq!(fit.gamma, truth.gamma, max_relative = 0.01);
    }

    #[test]
    fn pure_linear_data_flags_degenerate_power() {
        let data: Vec<RelaxationPoint> = grid_2_to_7()
            .iter()
            .map(|&t| RelaxationPoint {
                temperature: t,
                rate: 0.3 * t,
                sigma: None,
            })
            .collect();
        let (fit, diag) = fit_power_law(&data).unwrap();
        assert!(diag.degenerate, "{fit:?} {diag:?}");
        // With γ pinned at its bound the α/β split is arbitrary; the
        // total linear coefficient is still identified.
        assert_relative_eq!(
            fit.alpha + fit.beta * 7.0f64.powf(fit.gamma) / 7.0,
            0.3,
            max_relative = 1e-4
        );
    }

    #[test]
    fn orbach_data_needs_large_power_exponent() {
        let data = synth(&reference_params(), &grid_2_to_7());
        let (fit, _) = fit_power_law(&data).unwrap();
        assert!(fit.gamma > 9.0, "gamma {}", fit.gamma);
    }

    #[test]
    fn unit_consistency_hz_vs_khz() {
        let data = synth(&reference_params(), &grid_2_to_7());
        let scaled: Vec<RelaxationPoint> = data
            .iter()
            .map(|p| RelaxationPoint {
                temperature: p.temperature,
                rate: p.rate * 1e-3,
                sigma: None,
            })
            .collect();
        let (a, _) = fit_temp_model(&data, 5).unwrap();
        let (b, _) = fit_temp_model(&scaled, 5).unwrap();
        assert_relative_eq!(b.c_direct, a.c_direct * 1e-3, max_relative = 1e-4);
        assert_relative_eq!(b.c_raman, a.c_raman * 1e-3, max_relative = 1e-4);
        assert_relative_eq!(b.c_orbach, a.c_orbach * 1e-3, max_relative = 1e-4);
        assert_relative_eq!(b.delta_mev, a.delta_mev, max_relative = 1e-5);
    }

    #[test]
    fn refit_from_optimum_is_idempotent() {
        let data = synth(&reference_params(), &grid_2_to_7());
        let (fit, _) = fit_temp_model(&data, 5).unwrap();
        let (refit, _) = fit_temp_model_with_init(&data, &fit).unwrap();
        assert_relative_eq!(refit.delta_mev, fit.delta_mev, max_relative = 1e-10);
        assert_relative_eq!(refit.c_orbach, fit.c_orbach, max_relative = 1e-8);
        assert_relative_eq!(refit.c_direct, fit.c_direct, max_relative = 1e-8);
    }

    #[test]
    fn compare_models_tie_breaks_and_orders() {
        let tie = compare_models(&[
            FitSummary {
                label: "five".into(),
                rss: 1.0,
                n_params: 5,
                n_points: 11,
            },
            FitSummary {
                label: "three".into(),
                rss: 1.0,
                n_params: 3,
                n_points: 11,
            },
        ])
        .unwrap();
        assert_eq!(tie[0].label, "three");

        assert!(matches!(
            compare_models(&[
                FitSummary {
                    label: "a".into(),
                    rss: 1.0,
                    n_params: 2,
                    n_points: 10
                },
                FitSummary {
                    label: "b".into(),
                    rss: 1.0,
                    n_params: 2,
                    n_points: 11
                },
            ]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn orbach_model_ranks_at_least_as_high_as_power_law() {
        let data = synth(&reference_params(), &grid_2_to_7());
        let (_, temp_diag) = fit_temp_model(&data, 5).unwrap();
        let (_, power_diag) = fit_power_law(&data).unwrap();
        let ranked = compare_models(&[
            FitSummary {
                label: "orbach".into(),
                rss: temp_diag.rss,
                n_params: 5,
                n_points: data.len(),
            },
            FitSummary {
                label: "power".into(),
                rss: power_diag.rss,
                n_params: 3,
                n_points: data.len(),
            },
        ])
        .unwrap();
        assert_eq!(ranked[0].label, "orbach");
    }

    #[test]
    fn constant_data_ranks_constant_model_first() {
        let data: Vec<RelaxationPoint> = grid_2_to_7()
            .iter()
            .map(|&t| RelaxationPoint {
                temperature: t,
                rate: 4.2,
                sigma: None,
            })
            .collect();
        let (_, const_diag) = fit_constant(&data).unwrap();
        let (_, temp_diag) = fit_temp_model(&data, 5).unwrap();
        let ranked = compare_models(&[
            FitSummary {
                label: "gamma0-only".into(),
                rss: const_diag.rss,
                n_params: 1,
                n_points: data.len(),
            },
            FitSummary {
                label: "full".into(),
                rss: temp_diag.rss,
                n_params: 5,
                n_points: data.len(),
            },
        ])
        .unwrap();
        assert_eq!(ranked[0].label, "gamma0-only");
    }
}
