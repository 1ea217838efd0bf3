//! Empirical objectives over a batch of losses and their (sub)gradients.
//!
//! Every objective is written as `value(a, b, l_1..l_n)`. The gradient with
//! respect to the model weights follows from the per-example coefficients
//! `d value / d l_i` combined with the loss gradients carried by [`LossBatch`].

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossBatch;
use crate::rho::scaled_rho_raw;

/// Smallest scale used when initialising `b` from a batch.
pub const B_INIT_MIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CriterionKind {
    SunHuber,
    Erm,
    Cvar { xi: f64 },
    ChiSqDro { eta_tilde: f64 },
}

impl CriterionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionKind::SunHuber => "sunhuber",
            CriterionKind::Erm => "erm",
            CriterionKind::Cvar { .. } => "cvar",
            CriterionKind::ChiSqDro { .. } => "dro",
        }
    }

    pub fn optimizes_a(&self) -> bool {
        !matches!(self, CriterionKind::Erm)
    }

    pub fn optimizes_b(&self) -> bool {
        matches!(self, CriterionKind::SunHuber)
    }
}

/// Configuration of one learning criterion.
///
/// `alpha`, `beta`, `lambda` and `beta0` only matter for [`CriterionKind::SunHuber`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub beta0: f64,
    pub kind: CriterionKind,
}

impl CriterionParams {
    /// Sun-Huber parameters set directly, without the sample-size schedule.
    pub fn sunhuber(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha and beta must be finite and nonnegative, got {alpha}, {beta}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(CriterionParams {
            alpha,
            beta,
            lambda,
            beta0: beta,
            kind: CriterionKind::SunHuber,
        })
    }

    pub fn erm() -> Self {
        CriterionParams {
            alpha: 0.0,
            beta: 0.0,
            lambda: 1.0,
            beta0: 1.0,
            kind: CriterionKind::Erm,
        }
    }

    pub fn cvar(xi: f64) -> Result<Self> {
        check_unit_open("xi", xi)?;
        Ok(CriterionParams {
            kind: CriterionKind::Cvar { xi },
            ..Self::erm()
        })
    }

    pub fn chisq_dro(eta_tilde: f64) -> Result<Self> {
        check_unit_open("eta_tilde", eta_tilde)?;
        Ok(CriterionParams {
            kind: CriterionKind::ChiSqDro { eta_tilde },
            ..Self::erm()
        })
    }

    /// Short stable label, e.g. `sunhuber_beta0=0.9` or `cvar_xi=0.5`.
    pub fn label(&self) -> String {
        match self.kind {
            CriterionKind::SunHuber => format!("sunhuber_beta0={}", self.beta0),
            CriterionKind::Erm => "erm".to_string(),
            CriterionKind::Cvar { xi } => format!("cvar_xi={xi}"),
            CriterionKind::ChiSqDro { eta_tilde } => format!("dro_eta={eta_tilde}"),
        }
    }
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Sets `beta = beta0 / sqrt(n)` and `alpha = beta`, requiring `beta < lambda`.
pub fn schedule_params(n: usize, beta0: f64, lambda: f64) -> Result<CriterionParams> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta0 must be positive, got {beta0}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let beta = beta0 / (n as f64).sqrt();
    if beta >= lambda {
        return Err(Error::InvalidParameter(format!(
            "beta = beta0/sqrt(n) = {beta} must be below lambda = {lambda}"
        )));
    }
    Ok(CriterionParams {
        alpha: beta,
        beta,
        lambda,
        beta0,
        kind: CriterionKind::SunHuber,
    })
}

/// Default training weight `log(n) / sqrt(n)`.
pub fn default_lambda(n: usize) -> f64 {
    let n = n as f64;
    n.ln() / n.sqrt()
}

/// Optimisation variables: model weights (flattened), threshold `a` and scale `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub h: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl JointState {
    pub fn new(h: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::InvalidParameter(format!("scale b must be positive, got {b}")));
        }
        if !a.is_finite() || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("state entries must be finite".into()));
        }
        Ok(JointState { h, a, b })
    }

    /// `a` is the batch mean and `b` the batch standard deviation, floored at [`B_INIT_MIN`].
    pub fn initialise(h: Vec<f64>, losses: &[f64]) -> Result<Self> {
        let mean = sample_mean(losses)?;
        let sd = sample_variance_about(losses, mean).sqrt();
        JointState::new(h, mean, sd.max(B_INIT_MIN))
    }

    pub fn h_norm(&self) -> f64 {
        self.h.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad_h: Array1<f64>,
    pub grad_a: f64,
    /// Only present for criteria with a scale variable.
    pub grad_b: Option<f64>,
}

impl ObjectiveEval {
    fn from_coefficients(losses: &LossBatch, value: f64, coef: &[f64], grad_a: f64, grad_b: Option<f64>) -> Self {
        ObjectiveEval {
            value,
            grad_h: losses.weighted_grad(coef),
            grad_a,
            grad_b,
        }
    }
}

fn nonempty(losses: &LossBatch) -> Result<f64> {
    if losses.is_empty() {
        Err(Error::Empty("loss batch"))
    } else {
        Ok(losses.len() as f64)
    }
}

/// `alpha a + beta b + (lambda b / n) sum rho((l_i - a) / b)`.
pub fn sunhuber_objective(losses: &LossBatch, state: &JointState, params: &CriterionParams) -> Result<ObjectiveEval> {
    if params.kind != CriterionKind::SunHuber {
        return Err(Error::InvalidParameter("sunhuber_objective needs SunHuber params".into()));
    }
    let n = nonempty(losses)?;
    let (a, b) = (state.a, state.b);
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!("scale b must be positive, got {b}")));
    }
    let scale = params.lambda / n;
    let mut dev = 0.0;
    let mut sum_rp = 0.0;
    let mut sum_bq = 0.0;
    let mut coef = Vec::with_capacity(losses.len());
    for &l in &losses.values {
        let d = l - a;
        let r = d.hypot(b);
        let dv = scaled_rho_raw(d, b);
        dev += dv;
        let rp = d / r;
        sum_rp += rp;
        // b / r - 1 = -(r - b) / r
        sum_bq -= dv / r;
        coef.push(scale * rp);
    }
    let value = params.alpha * a + params.beta * b + scale * dev;
    let grad_a = params.alpha - scale * sum_rp;
    let grad_b = params.beta + scale * sum_bq;
    Ok(ObjectiveEval::from_coefficients(losses, value, &coef, grad_a, Some(grad_b)))
}

/// Sample mean of the losses.
pub fn erm_objective(losses: &LossBatch) -> Result<ObjectiveEval> {
    let n = nonempty(losses)?;
    let value = losses.values.iter().sum::<f64>() / n;
    let coef = vec![1.0 / n; losses.len()];
    Ok(ObjectiveEval::from_coefficients(losses, value, &coef, 0.0, None))
}

/// `a + (1 / (1 - xi)) mean (l_i - a)_+`. Losses equal to `a` count as inactive.
pub fn cvar_objective(losses: &LossBatch, a: f64, xi: f64) -> Result<ObjectiveEval> {
    check_unit_open("xi", xi)?;
    let n = nonempty(losses)?;
    let w = 1.0 / ((1.0 - xi) * n);
    let mut excess = 0.0;
    let mut active = 0usize;
    let coef: Vec<f64> = losses
        .values
        .iter()
        .map(|&l| {
            if l > a {
                excess += l - a;
                active += 1;
                w
            } else {
                0.0
            }
        })
        .collect();
    let value = a + w * excess;
    let grad_a = 1.0 - w * active as f64;
    Ok(ObjectiveEval::from_coefficients(losses, value, &coef, grad_a, None))
}

/// Maps the robustness level in `(0, 1)` to the divergence radius `eta`.
pub fn dro_eta(eta_tilde: f64) -> f64 {
    (1.0 / (1.0 - eta_tilde) - 1.0) / 2.0
}

/// Chi-square DRO dual `a + sqrt(1 + 2 eta) sqrt(mean (l_i - a)_+^2)`.
///
/// When every positive part vanishes the gradient of the root term is taken as zero.
pub fn chisq_dro_objective(losses: &LossBatch, a: f64, eta_tilde: f64) -> Result<ObjectiveEval> {
    check_unit_open("eta_tilde", eta_tilde)?;
    let n = nonempty(losses)?;
    let c = (1.0 + 2.0 * dro_eta(eta_tilde)).sqrt();
    let pos: Vec<f64> = losses.values.iter().map(|&l| (l - a).max(0.0)).collect();
    let m = pos.iter().map(|p| p * p).sum::<f64>() / n;
    let root = m.sqrt();
    let value = a + c * root;
    if root == 0.0 {
        let coef = vec![0.0; losses.len()];
        return Ok(ObjectiveEval::from_coefficients(losses, value, &coef, 1.0, None));
    }
    let k = c / (n * root);
    let coef: Vec<f64> = pos.iter().map(|p| k * p).collect();
    let grad_a = 1.0 - coef.iter().sum::<f64>();
    Ok(ObjectiveEval::from_coefficients(losses, value, &coef, grad_a, None))
}

/// Dispatches to the objective selected by `params.kind`.
pub fn evaluate(losses: &LossBatch, state: &JointState, params: &CriterionParams) -> Result<ObjectiveEval> {
    match params.kind {
        CriterionKind::SunHuber => sunhuber_objective(losses, state, params),
        CriterionKind::Erm => erm_objective(losses),
        CriterionKind::Cvar { xi } => cvar_objective(losses, state.a, xi),
        CriterionKind::ChiSqDro { eta_tilde } => chisq_dro_objective(losses, state.a, eta_tilde),
    }
}

/// Objective value only, from plain loss values.
pub fn objective_value(values: &[f64], state: &JointState, params: &CriterionParams) -> Result<f64> {
    let batch = LossBatch::from_values(values.to_vec());
    Ok(evaluate(&batch, state, params)?.value)
}

fn sample_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("loss sequence"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn sample_variance_about(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}

/// Mean and variance (divisor `n`).
pub fn mean_and_variance(values: &[f64]) -> Result<(f64, f64)> {
    let mean = sample_mean(values)?;
    Ok((mean, sample_variance_about(values, mean)))
}

/// `mean + sqrt(lambda * variance)` with divisor-`n` variance.
pub fn mean_sd(values: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (mean, var) = mean_and_variance(values)?;
    Ok(mean + (lambda * var).sqrt())
}

/// `mean + variance` with divisor-`n` variance.
pub fn mean_variance(values: &[f64]) -> Result<f64> {
    let (mean, var) = mean_and_variance(values)?;
    Ok(mean + var)
}

/// `a + (mean (l_i - a)^2 + 1) / 2`.
///
/// Minimised at `a = mean - 1` (see [`variational_minimizer`]) where it equals
/// `mean + variance / 2`, the half-weighted mean-variance sum.
pub fn mean_variance_variational(values: &[f64], a: f64) -> Result<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Err(Error::Empty("loss sequence"));
    }
    let second = values.iter().map(|v| (v - a) * (v - a)).sum::<f64>() / n;
    Ok(a + (second + 1.0) / 2.0)
}

pub fn variational_minimizer(values: &[f64]) -> Result<f64> {
    Ok(sample_mean(values)? - 1.0)
}

/// Pieces of the scale-partial objective `g(x, b) = beta b + b rho(x / b)`.
pub mod partial {
    /// `beta b + sqrt(x^2 + b^2) - b`.
    pub fn value(x: f64, b: f64, beta: f64) -> f64 {
        beta * b + super::scaled_rho_raw(x, b)
    }

    /// `(d/dx, d/db)` of [`value`].
    pub fn gradient(x: f64, b: f64, beta: f64) -> (f64, f64) {
        let r = x.hypot(b);
        (x / r, b / r - (1.0 - beta))
    }

    /// `<H u, u> = (u_1 b - u_2 x)^2 / (x^2 + b^2)^{3/2}`.
    pub fn hessian_form(x: f64, b: f64, u: (f64, f64)) -> f64 {
        let r2 = x * x + b * b;
        let t = u.0 * b - u.1 * x;
        t * t / (r2 * r2.sqrt())
    }

    /// Bound on the 1-norm of [`gradient`].
    pub fn lipschitz_bound(beta: f64) -> f64 {
        1.0 + (1.0 - beta).max(beta)
    }
}

/// `b * mean rho((l_i - a) / b)`, the robust deviation term.
pub fn robust_deviation(values: &[f64], a: f64, b: f64) -> f64 {
    values.iter().map(|&l| scaled_rho_raw(l - a, b)).sum::<f64>() / values.len() as f64
}
