//! Small dense Levenberg-Marquardt engine shared by the fitting modules.
//!
//! All models in this crate have 2-6 parameters and smooth analytic
//! Jacobians. The damped step solves the augmented least-squares system
//! [J; sqrt(λ)·D] δ = [-r; 0] by Householder QR (conditioning of J, not
//! JᵀJ), with Marquardt column scaling for D, a backtracking line search
//! along the step direction, and the convergence criteria the fit modules
//! advertise (relative parameter step < 1e-10 or relative RSS change
//! < 1e-12, at most 200 iterations).

/// Convergence settings; the defaults are what every public fit uses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LmConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub rss_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            step_tolerance: 1e-10,
            rss_tolerance: 1e-12,
        }
    }
}

/// Optimum returned by [`levenberg_marquardt`], in latent coordinates.
#[derive(Debug, Clone)]
pub(crate) struct LmFit {
    pub params: Vec<f64>,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Covariance of the latent parameters, (JᵀJ)⁻¹·RSS/(m-p), or `None`
    /// when m <= p or the normal matrix is singular at the optimum.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl LmFit {
    /// Standard error of latent parameter `j`, NaN when unavailable.
    pub fn stderr(&self, j: usize) -> f64 {
        self.covariance
            .as_ref()
            .map_or(f64::NAN, |c| c[j][j].max(0.0).sqrt())
    }
}

/// Householder QR least-squares solve of an (m+p)-row system. Works on
/// the augmented matrix directly so the step solve never squares the
/// Jacobian's condition number. Returns `None` when R is numerically
/// rank-deficient; `r_out`, when given, receives the p×p upper triangle.
fn qr_least_squares(
    mut a: Vec<Vec<f64>>,
    mut b: Vec<f64>,
    r_out: Option<&mut Vec<Vec<f64>>>,
) -> Option<Vec<f64>> {
    let m = a.len();
    let p = a[0].len();
    if m < p {
        return None;
    }
    for col in 0..p {
        // Householder reflector annihilating below-diagonal entries.
        let norm = (col..m).map(|i| a[i][col] * a[i][col]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[col][col] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..m).map(|i| a[i][col]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for target_col in col..p {
                let dot: f64 = (col..m).map(|i| a[i][target_col] * v[i - col]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in col..m {
                    a[i][target_col] -= f * v[i - col];
                }
            }
            let dot: f64 = (col..m).map(|i| b[i] * v[i - col]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in col..m {
                b[i] -= f * v[i - col];
            }
        }
        a[col][col] = alpha;
        for i in col + 1..m {
            a[i][col] = 0.0;
        }
    }
    let r_max = (0..p).map(|j| a[j][j].abs()).fold(0.0, f64::max);
    if r_max == 0.0 {
        return None;
    }
    for j in 0..p {
        if a[j][j].abs() < 1e-14 * r_max {
            return None;
        }
    }
    let mut x = vec![0.0; p];
    for j in (0..p).rev() {
        let mut acc = b[j];
        for k in j + 1..p {
            acc -= a[j][k] * x[k];
        }
        x[j] = acc / a[j][j];
    }
    if let Some(out) = r_out {
        *out = (0..p).map(|i| a[i][..p].to_vec()).collect();
    }
    Some(x)
}

/// Covariance (JᵀJ)⁻¹ from the R factor of J's QR decomposition:
/// R⁻¹ R⁻ᵀ, computed by back-substitution.
fn covariance_from_r(r: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let p = r.len();
    // R⁻¹ is upper triangular; column j solves R x = e_j.
    let mut rinv = vec![vec![0.0; p]; p];
    for j in 0..p {
        for i in (0..=j).rev() {
            let mut acc = if i == j { 1.0 } else { 0.0 };
            for k in i + 1..=j {
                acc -= r[i][k] * rinv[k][j];
            }
            if r[i][i] == 0.0 {
                return None;
            }
            rinv[i][j] = acc / r[i][i];
        }
    }
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            cov[i][j] = (0..p).map(|k| rinv[i][k] * rinv[j][k]).sum();
        }
    }
    Some(cov)
}

fn rss_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimize `Σ r_i(x)²` starting from `x0`.
///
/// `residuals(x)` returns the m residuals; `jacobian(x)` the m×p matrix
/// of their derivatives. Non-finite trial residuals are treated as a
/// rejected step.
pub(crate) fn levenberg_marquardt(
    x0: &[f64],
    cfg: &LmConfig,
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> Vec<Vec<f64>>,
) -> LmFit {
    let p = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let m = r.len();
    let mut rss = rss_of(&r);
    let mut lambda: f64 = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iterations {
        iterations = iter;
        let jac = jacobian(&x);
        let mut g = vec![0.0; p];
        for (row, ri) in jac.iter().zip(&r) {
            for j in 0..p {
                g[j] += row[j] * ri;
            }
        }
        let grad_inf = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if grad_inf <= 1e-10 * (1.0 + rss) {
            converged = true;
            break;
        }
        // Marquardt column scaling from the Jacobian's column norms.
        // Parameters whose column has collapsed (reparameterized
        // coefficients crawled to their zero bound) are frozen: they no
        // longer influence anything and only poison the conditioning.
        let col_norm: Vec<f64> = (0..p)
            .map(|j| jac.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt())
            .collect();
        let max_col = col_norm.iter().copied().fold(0.0, f64::max);
        if max_col == 0.0 {
            converged = true;
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| col_norm[j] > 1e-14 * max_col).collect();
        let pa = active.len();

        let mut accepted = false;
        loop {
            // Damped least squares on the augmented system
            // [J; sqrt(λ) D] δ = [-r; 0], solved by QR so conditioning is
            // that of J itself, not of JᵀJ.
            let sqrt_lambda = lambda.sqrt();
            let mut aug = Vec::with_capacity(m + pa);
            let mut rhs = Vec::with_capacity(m + pa);
            for (row, ri) in jac.iter().zip(&r) {
                aug.push(active.iter().map(|&j| row[j]).collect());
                rhs.push(-ri);
            }
            for (k, &j) in active.iter().enumerate() {
                let mut row = vec![0.0; pa];
                row[k] = sqrt_lambda * col_norm[j];
                aug.push(row);
                rhs.push(0.0);
            }
            let reduced = match qr_least_squares(aug, rhs, None) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    if lambda > 1e14 {
                        break;
                    }
                    continue;
                }
            };
            let mut step = vec![0.0; p];
            for (k, &j) in active.iter().enumerate() {
                step[j] = reduced[k];
            }
            let step_rel = step
                .iter()
                .zip(&x)
                .map(|(d, v)| d.abs() / v.abs().max(1e-12))
                .fold(0.0, f64::max);
            // Backtracking line search along the damped direction: curved
            // valleys reject the full Gauss-Newton step long before the
            // direction itself stops being useful, and inflating λ there
            // cripples progress along the valley floor.
            let mut taken = None;
            for alpha in [1.0, 0.5, 0.25, 0.1, 0.04, 0.01] {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(v, d)| v + alpha * d).collect();
                let r_trial = residuals(&trial);
                let rss_trial = rss_of(&r_trial);
                if rss_trial.is_finite() && rss_trial <= rss {
                    taken = Some((alpha, trial, r_trial, rss_trial));
                    break;
                }
            }
            if let Some((alpha, trial, r_trial, rss_trial)) = taken {
                let rss_change = (rss - rss_trial) / rss.max(1e-300);
                let used_lambda = lambda;
                x = trial;
                r = r_trial;
                rss = rss_trial;
                lambda = if alpha == 1.0 {
                    (lambda / 3.0).max(1e-14)
                } else {
                    lambda * 2.0
                };
                accepted = true;
                // Declare convergence only on full near-Gauss-Newton
                // steps; damped or backtracked ones say nothing about
                // optimality.
                if used_lambda <= 1.0
                    && alpha == 1.0
                    && (step_rel < cfg.step_tolerance || rss_change < cfg.rss_tolerance)
                {
                    converged = true;
                }
                break;
            }
            lambda *= 7.0;
            if lambda > 1e14 || step_rel < cfg.step_tolerance {
                // No step length reduces the RSS any further: stationary
                // to within floating precision.
                converged = true;
                break;
            }
        }
        if converged || !accepted {
            break;
        }
    }

    // Covariance from the R factor of the undamped Jacobian's QR,
    // restricted to the columns that still carry information; frozen
    // parameters get NaN variances.
    let covariance = if m > p {
        let jac = jacobian(&x);
        let col_norm: Vec<f64> = (0..p)
            .map(|j| jac.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt())
            .collect();
        let max_col = col_norm.iter().copied().fold(0.0, f64::max);
        let active: Vec<usize> = (0..p)
            .filter(|&j| max_col > 0.0 && col_norm[j] > 1e-14 * max_col)
            .collect();
        if active.is_empty() {
            None
        } else {
            let reduced: Vec<Vec<f64>> = jac
                .iter()
                .map(|row| active.iter().map(|&j| row[j]).collect())
                .collect();
            let mut r_factor: Vec<Vec<f64>> = Vec::new();
            qr_least_squares(reduced, vec![0.0; m], Some(&mut r_factor))
                .and_then(|_| covariance_from_r(&r_factor))
                .map(|cov| {
                    let s2 = rss / (m - p) as f64;
                    let mut full = vec![vec![f64::NAN; p]; p];
                    for (a, &i) in active.iter().enumerate() {
                        for (b, &j) in active.iter().enumerate() {
                            full[i][j] = cov[a][b] * s2;
                        }
                    }
                    full
                })
        }
    } else {
        None
    };

    LmFit {
        params: x,
        rss,
        converged,
        iterations,
        covariance,
    }
}

// ---------------------------------------------------------------------------
// Reparameterization helpers
// ---------------------------------------------------------------------------

/// Numerically stable ln(1 + e^u), mapping ℝ onto (0, ∞).
pub(crate) fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

/// Inverse of [`softplus`].
pub(crate) fn softplus_inv(c: f64) -> f64 {
    if c > 30.0 {
        c
    } else {
        c.exp_m1().max(1e-300).ln()
    }
}

/// Derivative of softplus: the logistic sigmoid.
pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
