//! Numerical checks of the population-level properties of the joint objective,
//! computed on finite discrete distributions and Monte Carlo samples.
//!
//! Everything here is evaluated directly from the definitions (expectations over
//! atoms, bisection on monotone first-order conditions) and does not reuse the
//! batch objectives in [`crate::criteria`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Finite distribution over loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty("distribution atoms"));
        }
        if atoms.iter().any(|&(v, p)| !v.is_finite() || !(p > 0.0)) {
            return Err(Error::InvalidParameter("atoms need finite values and positive probabilities".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteDist { atoms })
    }

    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        let atoms: Vec<(f64, f64)> = values.iter().map(|&v| (v, p)).collect();
        if atoms.is_empty() {
            return Err(Error::Empty("distribution atoms"));
        }
        // uniform weights may miss 1 by a few ulps; renormalise the last one
        let head: f64 = atoms[..atoms.len() - 1].iter().map(|a| a.1).sum();
        let mut atoms = atoms;
        let last = atoms.len() - 1;
        atoms[last].1 = 1.0 - head;
        DiscreteDist::new(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|v| (v - m) * (v - m))
    }

    fn mass_at(&self, a: f64) -> f64 {
        self.atoms.iter().filter(|&&(v, _)| v == a).map(|a| a.1).sum()
    }
}

/// Bisection to machine precision for a nondecreasing `f` with `f(lo) < 0 < f(hi)`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_weights(beta: f64, lambda: f64) -> Result<()> {
    if beta > 0.0 && beta < lambda && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("need 0 < beta < lambda, got beta = {beta}, lambda = {lambda}")))
    }
}

/// `E[b / sqrt((L - a)^2 + b^2)]`, increasing in `b` with range `(P(L = a), 1)`.
pub fn scale_condition(dist: &DiscreteDist, a: f64, b: f64) -> f64 {
    dist.expect(|v| b / (v - a).hypot(b))
}

/// Minimiser over `b > 0` of the population objective at threshold `a`, from
/// `E[b / sqrt((L-a)^2 + b^2)] = 1 - beta / lambda`.
pub fn optimal_scale(dist: &DiscreteDist, a: f64, beta: f64, lambda: f64) -> Result<f64> {
    check_weights(beta, lambda)?;
    let target = 1.0 - beta / lambda;
    let at_a = dist.mass_at(a);
    if at_a >= target {
        return Err(Error::Degenerate(format!(
            "P(L = a) = {at_a} >= 1 - beta/lambda = {target}; the scale condition has no root"
        )));
    }
    let spread = dist.atoms.iter().map(|&(v, _)| (v - a).abs()).fold(0.0, f64::max);
    let g = |b: f64| scale_condition(dist, a, b) - target;
    let mut lo = spread;
    while g(lo) >= 0.0 {
        lo *= 0.5;
    }
    let mut hi = spread;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    debug_assert!(g(lo) < 0.0 && g(hi) > 0.0);
    Ok(bisect(lo, hi, g))
}

/// `alpha a + beta b + lambda E[sqrt((L-a)^2 + b^2) - b]`.
pub fn population_objective(dist: &DiscreteDist, a: f64, b: f64, alpha: f64, beta: f64, lambda: f64) -> f64 {
    let dev = dist.expect(|v| {
        let d = v - a;
        d * d / (d.hypot(b) + b)
    });
    alpha * a + beta * b + lambda * dev
}

/// Minimum over `b > 0` of the population objective. The scale is `None` when
/// the infimum is approached as `b -> 0`, in which case the value is the limit
/// `alpha a + lambda E|L - a|`.
pub fn min_over_scale(dist: &DiscreteDist, a: f64, alpha: f64, beta: f64, lambda: f64) -> Result<(Option<f64>, f64)> {
    match optimal_scale(dist, a, beta, lambda) {
        Ok(b) => Ok((Some(b), population_objective(dist, a, b, alpha, beta, lambda))),
        Err(Error::Degenerate(_)) => Ok((None, alpha * a + lambda * dist.expect(|v| (v - a).abs()))),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleBoundsReport {
    pub b_star: f64,
    pub lower: f64,
    pub b_squared: f64,
    pub upper: f64,
    pub holds: bool,
}

/// Checks `(lambda / 4 beta) E[1{|L-a| <= b*} (L-a)^2] <= b*^2 <= (lambda / 2 beta) E[(L-a)^2]`.
pub fn check_scale_bounds(dist: &DiscreteDist, a: f64, beta: f64, lambda: f64) -> Result<ScaleBoundsReport> {
    let b = optimal_scale(dist, a, beta, lambda)?;
    let lower = lambda / (4.0 * beta)
        * dist.expect(|v| {
            let d = v - a;
            if d.abs() <= b {
                d * d
            } else {
                0.0
            }
        });
    let upper = lambda / (2.0 * beta) * dist.expect(|v| (v - a) * (v - a));
    let b_squared = b * b;
    let slack = 1e-12 * (1.0 + upper);
    Ok(ScaleBoundsReport {
        b_star: b,
        lower,
        b_squared,
        upper,
        holds: lower <= b_squared + slack && b_squared <= upper + slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub betas: Vec<f64>,
    /// `min_b C(a, b) / sqrt(beta)` at each beta.
    pub values: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub last_change: f64,
    pub verdict: Verdict,
}

pub const LIMIT_BETAS: [f64; 4] = [1e-3, 1e-4, 1e-5, 1e-6];

/// Approximates `lim_{beta -> 0} min_b C / sqrt(beta)` with `alpha = alpha_tilde sqrt(beta)`
/// and compares it to `alpha_tilde a + {1/2, 4} sqrt(lambda E(L-a)^2)`.
///
/// A relative change of 1% or more between the last two betas is inconclusive.
pub fn check_scale_optimized_limit(dist: &DiscreteDist, a: f64, lambda: f64, alpha_tilde: f64) -> Result<LimitReport> {
    if !(alpha_tilde >= 0.0) {
        return Err(Error::InvalidParameter("alpha_tilde must be nonnegative".into()));
    }
    let mut values = Vec::new();
    for &beta in &LIMIT_BETAS {
        let alpha = alpha_tilde * beta.sqrt();
        let (_, v) = min_over_scale(dist, a, alpha, beta, lambda)?;
        values.push(v / beta.sqrt());
    }
    let root = (lambda * dist.expect(|v| (v - a) * (v - a))).sqrt();
    let lower = alpha_tilde * a + 0.5 * root;
    let upper = alpha_tilde * a + 4.0 * root;
    let n = values.len();
    let (prev, last) = (values[n - 2], values[n - 1]);
    let diff = (last - prev).abs();
    let scale = prev.abs().max(last.abs());
    let last_change = if scale > 0.0 { diff / scale } else { 0.0 };
    let slack = 1e-12 * (1.0 + lower.abs().max(upper.abs()));
    let sandwiched = lower - slack <= last && last <= upper + slack;
    let verdict = if !sandwiched {
        Verdict::Fail
    } else if last_change >= 0.01 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(LimitReport {
        betas: LIMIT_BETAS.to_vec(),
        values,
        lower,
        upper,
        last_change,
        verdict,
    })
}

/// Loss generators with known mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LossGenerator {
    Gaussian { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl LossGenerator {
    pub fn mean(&self) -> f64 {
        match *self {
            LossGenerator::Gaussian { mean, .. } => mean,
            LossGenerator::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            LossGenerator::Gaussian { sd, .. } => sd * sd,
            LossGenerator::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
        }
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match *self {
            LossGenerator::Gaussian { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                out.iter_mut().for_each(|v| *v = d.sample(rng));
            }
            LossGenerator::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                out.iter_mut().for_each(|v| *v = d.sample(rng));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationConfig {
    pub generator: LossGenerator,
    pub b: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub center: f64,
    pub half_width: f64,
    pub coverage: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Empirical threshold `argmin_a alpha a + (lambda b / n) sum rho((l_i - a) / b)` at fixed `b`.
pub fn empirical_threshold(losses: &[f64], b: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("losses"));
    }
    let target = alpha / lambda;
    if !(target.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("need |alpha/lambda| < 1, got {target}")));
    }
    let n = losses.len() as f64;
    // increasing in a
    let g = |a: f64| target - losses.iter().map(|&l| (l - a) / (l - a).hypot(b)).sum::<f64>() / n;
    let lo_v = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_v = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut step = b.max(hi_v - lo_v).max(1.0);
    let mut lo = lo_v - step;
    while g(lo) >= 0.0 {
        step *= 2.0;
        lo = lo_v - step;
    }
    let mut step = b.max(hi_v - lo_v).max(1.0);
    let mut hi = hi_v + step;
    while g(hi) <= 0.0 {
        step *= 2.0;
        hi = hi_v + step;
    }
    Ok(bisect(lo, hi, g))
}

/// Monte Carlo coverage of the band
/// `|A_n - (E L - 2 alpha b / lambda)| <= 2 (Var / b + b log(2/delta) / n)`.
///
/// The sample-size condition is verified before any sampling. Trial `t` draws
/// from ChaCha8 stream `t` of `seed`. Passing requires coverage of at least
/// `1 - delta - 3 sqrt(delta (1 - delta) / trials)`.
pub fn check_location_concentration(config: &ConcentrationConfig) -> Result<ConcentrationReport> {
    let ConcentrationConfig {
        generator,
        b,
        alpha,
        lambda,
        n,
        delta,
        trials,
        seed,
    } = *config;
    if !(b > 0.0 && lambda > 0.0 && alpha >= 0.0 && delta > 0.0 && delta < 1.0 && n > 0 && trials > 0) {
        return Err(Error::InvalidParameter("invalid concentration configuration".into()));
    }
    let var = generator.variance();
    let log_term = (2.0 / delta).ln();
    let middle = 4.0 * (var / (b * b) + log_term / n as f64);
    let edge = 4.0 * alpha / lambda;
    if !(edge <= middle && middle <= 1.0 - edge) {
        return Err(Error::InvalidParameter(format!(
            "sample-size condition fails: need {edge} <= {middle} <= {}",
            1.0 - edge
        )));
    }
    let center = generator.mean() - 2.0 * alpha / lambda * b;
    let half_width = 2.0 * (var / b + b * log_term / n as f64);
    let hits: Result<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut losses = vec![0.0; n];
            generator.sample_into(&mut rng, &mut losses)?;
            let a = empirical_threshold(&losses, b, alpha, lambda)?;
            Ok((a - center).abs() <= half_width)
        })
        .collect();
    let covered = hits?.into_iter().filter(|&h| h).count();
    let coverage = covered as f64 / trials as f64;
    let threshold = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    Ok(ConcentrationReport {
        center,
        half_width,
        coverage,
        threshold,
        passed: coverage >= threshold,
    })
}

/// One atom of a joint law over (loss value, loss gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct GradAtom {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub mv_grad: Vec<f64>,
    pub scales: Vec<f64>,
    /// `|g(b) - mv'|` at each scale.
    pub gaps: Vec<f64>,
    pub monotone: bool,
    pub final_ok: bool,
    pub passed: bool,
}

pub const STATIONARITY_SCALES: [f64; 4] = [10.0, 1e2, 1e3, 1e4];

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares `E[(L - a_mv) L']` with `E[(L - a_mv) / sqrt(((L - a_mv)/b)^2 + 1) L']`
/// at `a_mv = E L - 1` for growing `b`.
pub fn check_stationarity_equivalence(atoms: &[GradAtom]) -> Result<StationarityReport> {
    let first = atoms.first().ok_or(Error::Empty("gradient atoms"))?;
    let dim = first.grad.len();
    if atoms.iter().any(|at| at.grad.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: atoms.iter().map(|at| at.grad.len()).find(|&d| d != dim).unwrap(),
        });
    }
    let total: f64 = atoms.iter().map(|at| at.prob).sum();
    if atoms.iter().any(|at| !(at.prob > 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("atom probabilities must be positive and sum to 1".into()));
    }
    let mean: f64 = atoms.iter().map(|at| at.prob * at.loss).sum();
    let a_mv = mean - 1.0;
    let weighted = |w: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for at in atoms {
            let c = at.prob * w(at.loss - a_mv);
            for (o, g) in out.iter_mut().zip(&at.grad) {
                *o += c * g;
            }
        }
        out
    };
    let mv_grad = weighted(&|d| d);
    let mut gaps = Vec::new();
    for &b in &STATIONARITY_SCALES {
        let g = weighted(&|d| d / ((d / b).powi(2) + 1.0).sqrt());
        let diff: Vec<f64> = g.iter().zip(&mv_grad).map(|(x, y)| x - y).collect();
        gaps.push(norm(&diff));
    }
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let final_ok = *gaps.last().unwrap() <= 1e-3 * (1.0 + norm(&mv_grad));
    Ok(StationarityReport {
        mv_grad,
        scales: STATIONARITY_SCALES.to_vec(),
        gaps,
        monotone,
        final_ok,
        passed: monotone && final_ok,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairOptimalityReport {
    pub a: f64,
    pub b: f64,
    /// `E[(L-a)/sqrt((L-a)^2+b^2)] - alpha/lambda`.
    pub residual_a: f64,
    /// `E[b/sqrt((L-a)^2+b^2)] - (1 - beta/lambda)`.
    pub residual_b: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub passed: bool,
}

pub const PAIR_TOLERANCE: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 10_000;

/// Jointly minimises the population objective in `(a, b)` by alternating exact
/// one-dimensional solves, then checks both first-order equalities.
///
/// A minimiser exists only if `(alpha/lambda)^2 + (1 - beta/lambda)^2 < 1`;
/// otherwise the objective is unbounded below and the call is rejected. An atom
/// with mass at least `1 - beta/lambda` can pull the infimum onto `b = 0`, which
/// also surfaces as [`Error::Degenerate`].
pub fn check_pair_optimality(dist: &DiscreteDist, alpha: f64, beta: f64, lambda: f64) -> Result<PairOptimalityReport> {
    check_weights(beta, lambda)?;
    if !(alpha > 0.0 && alpha < lambda) && alpha != 0.0 {
        return Err(Error::InvalidParameter(format!("need 0 <= alpha < lambda, got {alpha}")));
    }
    let (ta, tb) = (alpha / lambda, 1.0 - beta / lambda);
    if ta * ta + tb * tb >= 1.0 {
        return Err(Error::Degenerate(format!(
            "(alpha/lambda)^2 + (1 - beta/lambda)^2 = {} >= 1: no joint minimiser",
            ta * ta + tb * tb
        )));
    }
    if dist.atoms.len() < 2 {
        return Err(Error::Degenerate("need at least two distinct atoms".into()));
    }
    let res_a = |a: f64, b: f64| dist.expect(|v| (v - a) / (v - a).hypot(b)) - ta;
    let res_b = |a: f64, b: f64| scale_condition(dist, a, b) - tb;

    let mut a = dist.mean();
    let mut b = dist.variance().sqrt().max(1e-3);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        // a-step: the residual is decreasing in a
        let g = |x: f64| -res_a(x, b);
        let (lo_v, hi_v) = dist
            .atoms
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(v, _)| (lo.min(v), hi.max(v)));
        let mut step = b.max(hi_v - lo_v).max(1.0);
        while g(lo_v - step) >= 0.0 {
            step *= 2.0;
        }
        let lo = lo_v - step;
        let mut step = b.max(hi_v - lo_v).max(1.0);
        while g(hi_v + step) <= 0.0 {
            step *= 2.0;
        }
        let new_a = bisect(lo, hi_v + step, g);
        let new_b = match optimal_scale(dist, new_a, beta, lambda) {
            Ok(v) => v,
            Err(e) => return Err(e),
        };
        let moved = (new_a - a).abs() + (new_b - b).abs();
        a = new_a;
        b = new_b;
        if moved <= 1e-15 * (1.0 + a.abs() + b) || (res_a(a, b).abs() < 1e-12 && res_b(a, b).abs() < 1e-12) {
            converged = true;
            break;
        }
    }
    let spread = dist.atoms.iter().map(|&(v, _)| (v - a).abs()).fold(0.0, f64::max);
    if b <= 1e-9 * spread {
        return Err(Error::Degenerate(format!(
            "alternation collapsed onto the boundary b = 0 (a = {a}, b = {b:e}); no interior minimiser"
        )));
    }
    let (ra, rb) = (res_a(a, b), res_b(a, b));
    Ok(PairOptimalityReport {
        a,
        b,
        residual_a: ra,
        residual_b: rb,
        sweeps,
        converged,
        passed: converged && ra.abs() < PAIR_TOLERANCE && rb.abs() < PAIR_TOLERANCE,
    })
}

/// Random finite distribution with between 2 and `max_atoms` atoms.
pub fn random_dist<R: Rng>(rng: &mut R, max_atoms: usize) -> DiscreteDist {
    let k = rng.random_range(2..=max_atoms);
    random_dist_with(rng, k)
}

/// Random finite distribution with exactly `k >= 2` atoms, values in [-5, 5).
pub fn random_dist_with<R: Rng>(rng: &mut R, k: usize) -> DiscreteDist {
    let mut atoms: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(0.05..1.0)))
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    let head: f64 = atoms[..k - 1].iter().map(|a| a.1).sum();
    atoms[k - 1].1 = 1.0 - head;
    DiscreteDist::new(atoms).expect("valid random distribution")
}

/// One line of the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteRow {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        SuiteRow {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs every property check. `quick` shrinks the randomized instance counts and
/// Monte Carlo trials so the suite finishes in a few seconds.
pub fn run_suite(quick: bool, seed: u64) -> Vec<SuiteRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = if quick { 100 } else { 1000 };

    rows.push(suite_rho());

    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..instances {
        let dist = random_dist(&mut rng, 8);
        let a = rng.random_range(-3.0..3.0);
        let lambda: f64 = rng.random_range(0.1..2.0);
        let beta = lambda * rng.random_range(0.05..0.95);
        match check_scale_bounds(&dist, a, beta, lambda) {
            Ok(r) => {
                if !r.holds {
                    failures += 1;
                }
                worst = worst.max(r.b_squared / r.upper.max(f64::MIN_POSITIVE));
            }
            Err(Error::Degenerate(_)) => {}
            Err(_) => failures += 1,
        }
    }
    rows.push(SuiteRow::new(
        "scale_bounds",
        failures == 0,
        format!("{instances} instances, {failures} violations, max b*^2/upper = {worst:.4}"),
    ));

    let limit_cases = [
        ("limit_two_point", DiscreteDist::uniform(&[-1.0, 1.0]), 0.0, 1.0, 0.0),
        ("limit_constant", DiscreteDist::new(vec![(2.0, 1.0)]), 2.0, 1.0, 0.5),
        ("limit_shifted", DiscreteDist::uniform(&[2.0, 4.0]), 3.0, 1.0, 1.0),
    ];
    for (name, dist, a, lambda, alpha_tilde) in limit_cases {
        let row = match dist.and_then(|d| check_scale_optimized_limit(&d, a, lambda, alpha_tilde)) {
            Ok(r) => SuiteRow::new(
                name,
                r.verdict == Verdict::Pass,
                format!(
                    "{:?}: value {:.6} in [{:.6}, {:.6}], last change {:.2e}",
                    r.verdict,
                    r.values.last().unwrap(),
                    r.lower,
                    r.upper,
                    r.last_change
                ),
            ),
            Err(e) => SuiteRow::new(name, false, e.to_string()),
        };
        rows.push(row);
    }

    let trials = if quick { 300 } else { 2000 };
    let conc = [
        (
            "concentration_gaussian",
            ConcentrationConfig {
                generator: LossGenerator::Gaussian { mean: 0.0, sd: 1.0 },
                b: 20.0,
                alpha: 0.0,
                lambda: 1.0,
                n: 2000,
                delta: 0.05,
                trials,
                seed,
            },
        ),
        (
            "concentration_lognormal",
            ConcentrationConfig {
                generator: LossGenerator::LogNormal { mu: 0.0, sigma: 1.0 },
                b: 20.0,
                alpha: 0.0,
                lambda: 1.0,
                n: 2000,
                delta: 0.05,
                trials,
                seed: seed.wrapping_add(1),
            },
        ),
    ];
    for (name, cfg) in conc {
        rows.push(match check_location_concentration(&cfg) {
            Ok(r) => SuiteRow::new(
                name,
                r.passed,
                format!("coverage {:.4} (threshold {:.4}, {} trials)", r.coverage, r.threshold, cfg.trials),
            ),
            Err(e) => SuiteRow::new(name, false, e.to_string()),
        });
    }

    let mut failures = 0;
    let mut worst_gap = 0.0f64;
    for _ in 0..instances {
        let dim = rng.random_range(1..=4);
        let dist = random_dist_with(&mut rng, 5);
        let atoms: Vec<GradAtom> = dist
            .atoms()
            .iter()
            .map(|&(v, p)| GradAtom {
                loss: v,
                grad: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                prob: p,
            })
            .collect();
        match check_stationarity_equivalence(&atoms) {
            Ok(r) => {
                if !r.passed {
                    failures += 1;
                }
                worst_gap = worst_gap.max(*r.gaps.last().unwrap());
            }
            Err(_) => failures += 1,
        }
    }
    rows.push(SuiteRow::new(
        "stationarity_limit",
        failures == 0,
        format!("{instances} instances, {failures} failures, worst final gap {worst_gap:.2e}"),
    ));

    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut first_failure: Option<String> = None;
    let pair_instances = instances / 10;
    for _ in 0..pair_instances {
        let dist = random_dist(&mut rng, 6);
        let lambda: f64 = rng.random_range(0.2..2.0);
        // keep every atom's mass below 1 - beta/lambda so the minimiser is interior
        let max_mass = dist.atoms().iter().map(|a| a.1).fold(0.0, f64::max);
        let beta = lambda * (1.0 - max_mass) * rng.random_range(0.05..0.95);
        let room = (1.0 - (1.0 - beta / lambda).powi(2)).sqrt();
        let alpha = lambda * room * rng.random_range(0.0..0.9);
        let note = match check_pair_optimality(&dist, alpha, beta, lambda) {
            Ok(r) => {
                worst = worst.max(r.residual_a.abs().max(r.residual_b.abs()));
                (!r.passed).then(|| format!("{r:?}"))
            }
            Err(e) => Some(e.to_string()),
        };
        if let Some(note) = note {
            failures += 1;
            first_failure.get_or_insert(format!("{note} on {:?} (alpha {alpha}, beta {beta}, lambda {lambda})", dist.atoms()));
        }
    }
    rows.push(SuiteRow::new(
        "pair_optimality",
        failures == 0,
        format!(
            "{pair_instances} instances, {failures} failures, worst residual {worst:.2e}{}",
            first_failure.map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    ));
    rows
}

fn suite_rho() -> SuiteRow {
    use crate::rho::{catoni_envelope_check, rho, rho_conjugate, rho_prime, rho_second};
    let mut bad = Vec::new();
    let mut x = -50.0;
    while x <= 50.0 {
        if !catoni_envelope_check(x).unwrap_or(false) {
            bad.push(format!("envelope at {x}"));
            break;
        }
        x += 0.01;
    }
    let closed = [
        (rho(0.0).ok(), 0.0),
        (rho(1.0).ok(), 2f64.sqrt() - 1.0),
        (rho_prime(1.0).ok(), 1.0 / 2f64.sqrt()),
        (rho_second(0.0).ok(), 1.0),
        (rho_conjugate(0.6).ok(), 0.2),
    ];
    for (i, (got, want)) in closed.iter().enumerate() {
        match got {
            Some(v) if (v - want).abs() <= 1e-12 => {}
            _ => bad.push(format!("closed form #{i}")),
        }
    }
    SuiteRow::new(
        "rho_identities",
        bad.is_empty(),
        if bad.is_empty() {
            "closed forms and envelope on [-50, 50]".into()
        } else {
            bad.join(", ")
        },
    )
}

/// Writes suite rows as `name,passed,detail` CSV.
pub fn write_suite_csv(path: &std::path::Path, rows: &[SuiteRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "passed", "detail"])?;
    for r in rows {
        w.write_record([r.name.as_str(), if r.passed { "true" } else { "false" }, r.detail.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm_one() -> DiscreteDist {
        DiscreteDist::uniform(&[-1.0, 1.0]).unwrap()
    }

    #[test]
    fn dist_rejects_bad_probabilities() {
        assert!(DiscreteDist::new(vec![(0.0, 0.5), (1.0, 0.4)]).is_err());
        assert!(DiscreteDist::new(vec![(0.0, 1.5), (1.0, -0.5)]).is_err());
        assert!(DiscreteDist::new(vec![]).is_err());
    }

    #[test]
    fn optimal_scale_two_point() {
        // b / sqrt(1 + b^2) = 1/2  =>  b = 1/sqrt(3)
        let b = optimal_scale(&pm_one(), 0.0, 0.5, 1.0).unwrap();
        assert!((b - 1.0 / 3f64.sqrt()).abs() < 1e-10, "{b}");
    }

    #[test]
    fn optimal_scale_degenerate_mass() {
        let d = DiscreteDist::new(vec![(0.0, 0.9), (1.0, 0.1)]).unwrap();
        assert!(matches!(optimal_scale(&d, 0.0, 0.5, 1.0), Err(Error::Degenerate(_))));
        assert!(optimal_scale(&d, 0.0, 0.05, 1.0).is_ok());
    }

    #[test]
    fn scale_bounds_hold_on_two_point() {
        let r = check_scale_bounds(&pm_one(), 0.0, 0.5, 1.0).unwrap();
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn limit_two_point_matches_closed_form() {
        // min_b is sqrt(beta (2 - beta)), so the scaled value is sqrt(2 - beta)
        let r = check_scale_optimized_limit(&pm_one(), 0.0, 1.0, 0.0).unwrap();
        for (beta, v) in r.betas.iter().zip(&r.values) {
            assert!((v - (2.0 - beta).sqrt()).abs() < 1e-8, "{beta}: {v}");
        }
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn limit_constant_distribution() {
        let d = DiscreteDist::new(vec![(2.0, 1.0)]).unwrap();
        let r = check_scale_optimized_limit(&d, 2.0, 1.0, 0.5).unwrap();
        assert!((r.values.last().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn empirical_threshold_symmetric_sample() {
        let a = empirical_threshold(&[-1.0, 1.0, 0.0], 1.0, 0.0, 1.0).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn concentration_rejects_unmet_condition() {
        let cfg = ConcentrationConfig {
            generator: LossGenerator::Gaussian { mean: 0.0, sd: 1.0 },
            b: 0.5,
            alpha: 0.01,
            lambda: 1.0,
            n: 100,
            delta: 0.05,
            trials: 10,
            seed: 0,
        };
        assert!(matches!(check_location_concentration(&cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn stationarity_zero_gradients() {
        let atoms = vec![
            GradAtom { loss: 0.0, grad: vec![0.0], prob: 0.5 },
            GradAtom { loss: 3.0, grad: vec![0.0], prob: 0.5 },
        ];
        let r = check_stationarity_equivalence(&atoms).unwrap();
        assert!(r.passed);
        assert_eq!(r.mv_grad, vec![0.0]);
    }

    #[test]
    fn pair_optimality_examples() {
        let r = check_pair_optimality(&pm_one(), 0.0, 0.5, 1.0).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.a.abs() < 1e-9);
        assert!((r.b - 1.0 / 3f64.sqrt()).abs() < 1e-9);
        let d = DiscreteDist::uniform(&[0.0, 1.0, 5.0]).unwrap();
        let r = check_pair_optimality(&d, 0.99, 0.9, 1.0).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn pair_optimality_rejects_unbounded() {
        let d = DiscreteDist::uniform(&[0.0, 1.0, 5.0]).unwrap();
        assert!(matches!(check_pair_optimality(&d, 0.99, 0.1, 1.0), Err(Error::Degenerate(_))));
    }
}
