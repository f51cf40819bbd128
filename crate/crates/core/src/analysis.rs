//! Risk estimation, the rate-exponent calculator, and the experiments that
//! compare learning curves and approximation bounds against theory.
//!
//! Risks are estimated with the known posterior: for a test point `x` the
//! conditional risk of a prediction is computed exactly from `η(x)` and only
//! the marginal is sampled. This keeps the estimators unbiased while removing
//! label noise from the Monte Carlo error.

use rayon::prelude::*;

use crate::distributions::{ols_slope, MarginDistribution};
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::geometry::{build_rnet, classify_cells, Partition};
use crate::kernel::{gamma_q, plateau, smooth_convolve};
use crate::model::{train_localized, DecisionFunction, LocalizedModel};
use crate::rng;
use crate::solver::SolverOptions;
use crate::tvsvm::{build_nets, split_tv, train_tv, NetMode};

/// The Bayes decision function of a distribution.
#[derive(Debug, Clone, Copy)]
pub struct BayesPredictor<'a>(pub &'a MarginDistribution);

impl DecisionFunction for BayesPredictor<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        self.0.bayes_label(x)
    }
}

/// A constant score.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor {
    pub dim: usize,
    pub value: f64,
}

impl DecisionFunction for ConstantPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        crate::check_in_ball(x)?;
        Ok(self.value)
    }
}

/// The negation of another decision function.
#[derive(Debug, Clone, Copy)]
pub struct Negated<F>(pub F);

impl<F: DecisionFunction> DecisionFunction for Negated<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.0.predict_raw(x)?)
    }
}

/// Monte Carlo risks of a decision function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub classification: f64,
    pub hinge: f64,
    /// Excess classification risk, estimated as `E[|2η-1| 1{sign f ≠ f*}]`.
    pub excess_classification: f64,
    /// Excess hinge risk of the clipped predictor.
    pub excess_hinge: f64,
    pub stderr_classification: f64,
    pub stderr_hinge: f64,
    pub stderr_excess: f64,
    /// Standard error of `excess_hinge - excess_classification`.
    pub stderr_gap: f64,
    pub n_test: usize,
}

struct Moments {
    n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self {
            n: 0.0,
            sum: vec![0.0; k],
            sq: vec![0.0; k],
        }
    }

    fn add(&mut self, v: &[f64]) {
        self.n += 1.0;
        for (i, x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sq[i] += x * x;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n
    }

    fn stderr(&self, i: usize) -> f64 {
        let m = self.mean(i);
        let var = ((self.sq[i] - self.n * m * m) / (self.n - 1.0)).max(0.0);
        (var / self.n).sqrt()
    }
}

const MIN_TEST: usize = 1_000;

/// Classification and hinge risks of `model` on `n_test` fresh points.
pub fn estimate_risk<F: DecisionFunction + ?Sized>(
    model: &F,
    dist: &MarginDistribution,
    n_test: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n_test < MIN_TEST {
        return Err(invalid(
            "n_test",
            format!("at least {MIN_TEST} test points required"),
        ));
    }
    let xs = dist.sample_x(n_test, seed);
    let per: Vec<[f64; 5]> = xs
        .par_iter()
        .map(|x| {
            let eta = dist.eta_ext(x);
            let margin = (2.0 * eta - 1.0).abs();
            let raw = model.predict_raw(x)?;
            let sign = if raw >= 0.0 { 1.0 } else { -1.0 };
            let c = raw.clamp(-1.0, 1.0);
            let class = if sign > 0.0 { 1.0 - eta } else { eta };
            let excess = if sign != dist.bayes_label_ext(x) {
                margin
            } else {
                0.0
            };
            let hinge = 1.0 - (2.0 * eta - 1.0) * c;
            let excess_hinge = hinge - (1.0 - margin);
            Ok([class, hinge, excess, excess_hinge, excess_hinge - excess])
        })
        .collect::<Result<_>>()?;
    let mut mom = Moments::new(5);
    for v in &per {
        mom.add(v);
    }
    Ok(RiskEstimate {
        classification: mom.mean(0),
        hinge: mom.mean(1),
        excess_classification: mom.mean(2),
        excess_hinge: mom.mean(3),
        stderr_classification: mom.stderr(0),
        stderr_hinge: mom.stderr(1),
        stderr_excess: mom.stderr(2),
        stderr_gap: mom.stderr(4),
        n_test,
    })
}

/// Result of comparing excess classification and excess hinge risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZhangCheck {
    pub excess_classification: f64,
    pub excess_hinge: f64,
    pub holds: bool,
}

/// Checks that the excess classification risk is at most the excess hinge risk.
pub fn zhang_check<F: DecisionFunction + ?Sized>(
    model: &F,
    dist: &MarginDistribution,
    n_test: usize,
    seed: u64,
) -> Result<ZhangCheck> {
    let r = estimate_risk(model, dist, n_test, seed)?;
    Ok(ZhangCheck {
        excess_classification: r.excess_classification,
        excess_hinge: r.excess_hinge,
        holds: r.excess_classification <= r.excess_hinge + 3.0 * r.stderr_gap,
    })
}

/// A localized SVM with randomly drawn partition radius and hyperparameters,
/// trained on a small sample of `dist`.
pub fn random_localized_model(dist: &MarginDistribution, seed: u64) -> Result<LocalizedModel> {
    let mut g = rng::seeded(seed);
    let mut u = || rand::Rng::random::<f64>(&mut g);
    let r = 0.3 + 0.7 * u();
    let n = 100 + (200.0 * u()) as usize;
    let lambda = 10f64.powf(-4.0 + 3.0 * u());
    let gamma = r * (0.2 + 0.8 * u());
    let data = dist.sample(n, rng::derive(seed, 1));
    let p = build_rnet(dist.dim(), r, rng::derive(seed, 2))?;
    let m = p.num_cells();
    train_localized(
        &data,
        &p,
        &vec![lambda; m],
        &vec![gamma; m],
        &SolverOptions::default(),
    )
}

/// One predictor's side of the second-moment bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceTrial {
    /// `E[(L∘f - L∘f*)²]` over the far region.
    pub second_moment: f64,
    /// `E[L∘f - L∘f*]` over the far region.
    pub first_moment: f64,
    pub stderr: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCheck {
    pub constant: f64,
    pub trials: Vec<VarianceTrial>,
    pub holds: bool,
}

/// Second-moment bound on the far region `{Δ ≥ s}` for clipped predictors:
/// `E[(L∘f - L∘f*)²] ≤ (2 c_LC / s^ζ) E[L∘f - L∘f*]`, hinge loss.
///
/// For `f ∈ [-1, 1]` and `f* = ±1` the excess hinge loss is `±|f - f*|`, so
/// its square is `|f - f*|²` and its conditional mean is `|f - f*| |2η - 1|`.
pub fn variance_bound_for<F: DecisionFunction + ?Sized>(
    predictors: &[&F],
    dist: &MarginDistribution,
    s: f64,
    zeta: f64,
    c_lc: f64,
    n_mc: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    if !(s > 0.0 && zeta > 0.0 && c_lc > 0.0) {
        return Err(invalid("s", "s, zeta and c_LC must be positive"));
    }
    if n_mc < MIN_TEST {
        return Err(invalid(
            "n_mc",
            format!("at least {MIN_TEST} samples required"),
        ));
    }
    let xs = far_sample(dist, s, n_mc, seed)?;
    let k = 2.0 * c_lc / s.powf(zeta);
    let mut trials = Vec::with_capacity(predictors.len());
    for f in predictors {
        let per: Vec<[f64; 3]> = xs
            .par_iter()
            .map(|x| {
                let gap = (f.predict_clipped(x)? - dist.bayes_label_ext(x)).abs();
                let lhs = gap * gap;
                let rhs = gap * (2.0 * dist.eta_ext(x) - 1.0).abs();
                Ok([lhs, rhs, lhs - k * rhs])
            })
            .collect::<Result<_>>()?;
        let mut mom = Moments::new(3);
        for v in &per {
            mom.add(v);
        }
        let (lhs, rhs, se) = (mom.mean(0), mom.mean(1), mom.stderr(2));
        trials.push(VarianceTrial {
            second_moment: lhs,
            first_moment: rhs,
            stderr: se,
            holds: lhs <= k * rhs + 4.0 * se,
        });
    }
    let holds = trials.iter().all(|t| t.holds);
    Ok(VarianceCheck {
        constant: k,
        trials,
        holds,
    })
}

/// The second-moment bound for `trials` random localized models.
pub fn variance_bound_check(
    dist: &MarginDistribution,
    s: f64,
    zeta: f64,
    c_lc: f64,
    n_mc: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    if trials < 5 {
        return Err(invalid("trials", "at least 5 trials required"));
    }
    let models: Vec<LocalizedModel> = (0..trials)
        .map(|t| random_localized_model(dist, rng::derive(seed, 100 + t as u64)))
        .collect::<Result<_>>()?;
    let refs: Vec<&LocalizedModel> = models.iter().collect();
    variance_bound_for(&refs, dist, s, zeta, c_lc, n_mc, rng::derive(seed, 1))
}

/// `n` marginal samples conditioned on `Δ ≥ s`, by rejection.
fn far_sample(dist: &MarginDistribution, s: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut g = rng::seeded(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(invalid(
                "s",
                format!("the region Δ >= {s} is (nearly) empty"),
            ));
        }
        let x = rng::uniform_ball(&mut g, dist.dim());
        if dist.delta_ext(&x) >= s {
            out.push(x);
        }
    }
    Ok(out)
}

/// Rate exponents of the localized SVM and the comparison methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryExponents {
    pub beta: f64,
    pub q: f64,
    pub d: usize,
    pub zeta: f64,
    pub kappa: f64,
    /// `(q+1)(1 + max(d, ζ) - d)`.
    pub threshold: f64,
    /// `β ≥ threshold`.
    pub first_regime: bool,
    /// Largest admissible cell-shrinkage exponent.
    pub nu: f64,
    /// `βκ(ν+1)` at the best `ν`, from the closed form of the regime.
    pub localized: f64,
    /// `βκ(ν+1)` evaluated directly.
    pub localized_direct: f64,
    /// Global SVM `βκ`.
    pub global: f64,
    /// Hölder exponent `β/(q+1)` behind the plug-in comparisons; `None` above 1.
    pub rho: Option<f64>,
    pub plugin: Option<f64>,
    pub kohler_krzyzak: Option<f64>,
    pub belkin: Option<f64>,
    pub kohler_krzyzak_improved: Option<f64>,
    pub histogram: f64,
    pub histogram_valid: bool,
    /// Regularization exponent `max(1, κ(β+d)(ν+1) - ν)`.
    pub sigma: f64,
}

impl TheoryExponents {
    /// `βκ(ν+1)` for an arbitrary `ν`.
    pub fn localized_at(&self, nu: f64) -> f64 {
        self.beta * self.kappa * (nu + 1.0)
    }

    pub fn sigma_at(&self, nu: f64) -> f64 {
        (self.kappa * (self.beta + self.d as f64) * (nu + 1.0) - nu).max(1.0)
    }

    pub fn regime(&self) -> &'static str {
        if self.first_regime {
            "beta>=threshold"
        } else {
            "beta<threshold"
        }
    }

    pub const CSV_HEADER: &'static str = "beta,q,d,zeta,kappa,regime,nu,localized,global,plugin,kohler_krzyzak,belkin,kohler_krzyzak_improved,histogram,histogram_valid,sigma";

    /// One CSV row in shortest round-trip decimal form.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.beta,
            self.q,
            self.d,
            self.zeta,
            self.kappa,
            self.regime(),
            self.nu,
            self.localized,
            self.global,
            opt(self.plugin),
            opt(self.kohler_krzyzak),
            opt(self.belkin),
            opt(self.kohler_krzyzak_improved),
            self.histogram,
            self.histogram_valid,
            self.sigma
        )
    }
}

pub fn theory_exponents(beta: f64, q: f64, d: usize, zeta: f64) -> Result<TheoryExponents> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(invalid("q", format!("must be nonnegative, got {q}")));
    }
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(invalid("zeta", format!("must be nonnegative, got {zeta}")));
    }
    let df = d as f64;
    let big = df.max(zeta);
    let denom = beta * (q + 2.0) + df * (q + 1.0);
    let kappa = (q + 1.0) / denom;
    let threshold = (q + 1.0) * (1.0 + big - df);
    let first_regime = beta >= threshold;
    let bq = beta * (q + 1.0);
    // Both branches are written over the common denominator to stay exact on
    // rational inputs.
    let (nu, localized) = if first_regime {
        let den = beta * (q + 2.0) + (df - 1.0) * (q + 1.0);
        ((q + 1.0) / den, bq / den)
    } else {
        (
            (denom - bq) / (bq + big * denom),
            bq * (1.0 + big) / (bq + big * denom),
        )
    };
    let rho = beta / (q + 1.0);
    let rho_opt = (rho <= 1.0).then_some(rho);
    let mut t = TheoryExponents {
        beta,
        q,
        d,
        zeta,
        kappa,
        threshold,
        first_regime,
        nu,
        localized,
        localized_direct: beta * kappa * (nu + 1.0),
        global: bq / denom,
        rho: rho_opt,
        plugin: rho_opt.map(|p| p * (q + 1.0) / (p * (q + 2.0) + df)),
        kohler_krzyzak: rho_opt.map(|p| p * (q + 1.0) / (p * (q + 3.0) + df)),
        belkin: rho_opt.map(|p| p * q / (p * (q + 2.0) + df)),
        kohler_krzyzak_improved: rho_opt.map(|p| p * (q + 1.0) / (2.0 * p + df)),
        histogram: bq / (bq + df * (q + 1.0) + beta * zeta / (1.0 + zeta)),
        histogram_valid: beta <= (1.0 + zeta) * (q + 1.0),
        sigma: 1.0,
    };
    t.sigma = t.sigma_at(nu);
    Ok(t)
}

/// Which predictor a rate experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    /// Cells of radius `c n^-ν` with the per-cell width rule.
    Localized,
    /// One cell, `γ = n^-κ`, `λ = 1/n`.
    Global,
}

impl RateMethod {
    pub fn name(self) -> &'static str {
        match self {
            RateMethod::Localized => "localized",
            RateMethod::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub ladder: Vec<usize>,
    pub reps: usize,
    /// Constant `c` in `r_n = c n^-ν`.
    pub radius_scale: f64,
    pub nu: f64,
    /// Regularization exponent; `None` uses `max(1, κ(β+d)(ν+1) - ν)`.
    pub sigma: Option<f64>,
    pub n_test: usize,
    pub probe_budget: usize,
    pub seed: u64,
    /// Leave the smallest sample size out of the slope fit.
    pub drop_smallest: bool,
    pub method: RateMethod,
    pub solver: SolverOptions,
}

impl RateConfig {
    /// Solver settings for learning curves: a KKT tolerance of `1e-3` moves
    /// the excess risk far less than its Monte Carlo error and keeps the
    /// global SVM at `n = 8192` tractable.
    pub fn default_solver() -> SolverOptions {
        SolverOptions {
            eps_kkt: 1e-3,
            ..SolverOptions::default()
        }
    }
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            ladder: (8..=13).map(|k| 1usize << k).collect(),
            reps: 5,
            radius_scale: 1.0,
            nu: 0.25,
            sigma: None,
            n_test: 100_000,
            probe_budget: 64,
            seed: 0,
            drop_smallest: false,
            method: RateMethod::Localized,
            solver: RateConfig::default_solver(),
        }
    }
}

/// One repetition at one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub rep: usize,
    pub excess_classification: f64,
    pub excess_hinge: f64,
    pub stderr: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub method: RateMethod,
    pub ladder: Vec<usize>,
    pub rows: Vec<RateRow>,
    /// Mean excess classification risk per ladder point.
    pub means: Vec<f64>,
    /// Standard error of each mean across repetitions.
    pub mean_stderr: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Predicted (negative) slope of the excess risk.
    pub theory_exponent: f64,
    pub theory: TheoryExponents,
    pub nu: f64,
    /// Whether any mean hit the `1e-6` floor before taking logs.
    pub floored: bool,
}

/// Floor applied to mean excess risks before taking logarithms.
pub const EXCESS_FLOOR: f64 = 1e-6;

impl RateReport {
    /// Per-repetition CSV: `n,rep,excess_class,excess_hinge,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,rep,excess_class,excess_hinge,stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                r.rep,
                fmt_f64(r.excess_classification),
                fmt_f64(r.excess_hinge),
                fmt_f64(r.stderr)
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "slope,slope_se,theory_exponent,regime,nu,method,floored\n{},{},{},{},{},{},{}\n",
            fmt_f64(self.slope),
            fmt_f64(self.slope_stderr),
            fmt_f64(self.theory_exponent),
            self.theory.regime(),
            fmt_f64(self.nu),
            self.method.name(),
            self.floored
        )
    }

    /// Two columns: `ln n` and `ln` of the (floored) mean excess risk.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# ln_n ln_mean_excess\n");
        for (n, m) in self.ladder.iter().zip(&self.means) {
            out.push_str(&format!(
                "{} {}\n",
                fmt_f64((*n as f64).ln()),
                fmt_f64(m.max(EXCESS_FLOOR).ln())
            ));
        }
        out
    }
}

fn job_seed(seed: u64, n: usize, rep: usize, stream: u64) -> u64 {
    rng::derive(rng::derive(seed, (n as u64) << 16 | rep as u64), stream)
}

/// Learning-curve experiment: trains at every ladder point and repetition,
/// estimates excess risk on fresh test points, and fits the log-log slope.
pub fn rate_experiment(dist: &MarginDistribution, cfg: &RateConfig) -> Result<RateReport> {
    if cfg.ladder.len() < 4 {
        return Err(invalid("n_ladder", "at least 4 sample sizes required"));
    }
    if cfg.ladder.windows(2).any(|w| w[0] >= w[1]) || cfg.ladder[0] < 4 {
        return Err(invalid(
            "n_ladder",
            "sample sizes must be >= 4 and strictly increasing",
        ));
    }
    if cfg.reps < 3 {
        return Err(invalid("reps", "at least 3 repetitions required"));
    }
    if !(cfg.nu > 0.0 && cfg.radius_scale > 0.0) {
        return Err(invalid("nu", "nu and the radius scale must be positive"));
    }
    let sheet = dist.exponents();
    let theory = theory_exponents(sheet.beta, sheet.q, dist.dim(), sheet.zeta)?;
    let sigma = cfg.sigma.unwrap_or_else(|| theory.sigma_at(cfg.nu));
    let jobs: Vec<(usize, usize)> = cfg
        .ladder
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();
    let rows: Vec<RateRow> = jobs
        .iter()
        .map(|&(n, rep)| rate_point(dist, cfg, &theory, sigma, n, rep))
        .collect::<Result<_>>()?;

    let mut means = Vec::new();
    let mut mean_stderr = Vec::new();
    for &n in &cfg.ladder {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.excess_classification)
            .collect();
        let k = v.len() as f64;
        let m = v.iter().sum::<f64>() / k;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
        means.push(m);
        mean_stderr.push((var / k).sqrt());
    }
    let skip = usize::from(cfg.drop_smallest);
    let xs: Vec<f64> = cfg.ladder[skip..]
        .iter()
        .map(|&n| (n as f64).ln())
        .collect();
    let ys: Vec<f64> = means[skip..]
        .iter()
        .map(|m| m.max(EXCESS_FLOOR).ln())
        .collect();
    let floored = means[skip..].iter().any(|&m| m < EXCESS_FLOOR);
    let (slope, slope_stderr) = ols_slope(&xs, &ys);
    let theory_exponent = match cfg.method {
        RateMethod::Localized => theory.localized_at(cfg.nu),
        RateMethod::Global => theory.global,
    };
    Ok(RateReport {
        method: cfg.method,
        ladder: cfg.ladder.clone(),
        rows,
        means,
        mean_stderr,
        slope,
        slope_stderr,
        theory_exponent,
        theory,
        nu: cfg.nu,
        floored,
    })
}

fn rate_point(
    dist: &MarginDistribution,
    cfg: &RateConfig,
    theory: &TheoryExponents,
    sigma: f64,
    n: usize,
    rep: usize,
) -> Result<RateRow> {
    let nf = n as f64;
    let data = dist.sample(n, job_seed(cfg.seed, n, rep, 0));
    let (model, cells) = match cfg.method {
        RateMethod::Localized => {
            let r = (cfg.radius_scale * nf.powf(-cfg.nu)).min(2.0);
            let p = build_rnet(dist.dim(), r, job_seed(cfg.seed, n, rep, 2))?;
            let (lambdas, gammas) = rule_parameters(
                dist,
                &p,
                n,
                r,
                sigma,
                theory.kappa,
                cfg.probe_budget,
                job_seed(cfg.seed, n, rep, 3),
            )?;
            (
                train_localized(&data, &p, &lambdas, &gammas, &cfg.solver)?,
                p.num_cells(),
            )
        }
        RateMethod::Global => {
            let p = build_rnet(dist.dim(), 2.0, 0)?;
            let gamma = nf.powf(-theory.kappa);
            (
                train_localized(&data, &p, &[1.0 / nf], &[gamma], &cfg.solver)?,
                1,
            )
        }
    };
    let risk = estimate_risk(&model, dist, cfg.n_test, job_seed(cfg.seed, n, rep, 1))?;
    Ok(RateRow {
        n,
        rep,
        excess_classification: risk.excess_classification,
        excess_hinge: risk.excess_hinge,
        stderr: risk.stderr_excess,
        cells,
    })
}

/// Per-cell `(λ, γ)` from the rate theory: `λ = n^-σ` everywhere, `γ = r`
/// except on cells meeting both classes (at separation `s`), which get
/// `min(r, r^κ n^-κ)`.
#[allow(clippy::too_many_arguments)]
pub fn rule_parameters(
    dist: &MarginDistribution,
    p: &Partition,
    n: usize,
    s: f64,
    sigma: f64,
    kappa: f64,
    probe_budget: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("n", "sample size must be positive"));
    }
    let nf = n as f64;
    let r = p.radius();
    let class = classify_cells(p, dist, s, probe_budget, seed)?;
    let narrow = (r.powf(kappa) * nf.powf(-kappa)).min(r);
    let m = p.num_cells();
    let gammas = (0..m)
        .map(|j| if class.is_straddling(j) { narrow } else { r })
        .collect();
    Ok((vec![nf.powf(-sigma); m], gammas))
}

/// TV-SVM against the best uniform `(λ, γ)` candidate for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvComparisonRow {
    pub seed: u64,
    pub tv_excess: f64,
    pub best_fixed_excess: f64,
    pub best_lambda: f64,
    pub best_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvComparison {
    pub rows: Vec<TvComparisonRow>,
    pub mean_tv: f64,
    pub mean_best_fixed: f64,
}

impl TvComparison {
    pub fn ratio(&self) -> f64 {
        self.mean_tv / self.mean_best_fixed
    }
}

/// Runs the TV-SVM and every fixed candidate pair (trained on the same
/// training half, selected on the test set) for each seed.
pub fn tv_adaptivity(
    dist: &MarginDistribution,
    n: usize,
    r: f64,
    net_size: usize,
    seeds: &[u64],
    n_test: usize,
    opts: &SolverOptions,
) -> Result<TvComparison> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "at least one seed required"));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let data = dist.sample(n, rng::derive(seed, 0));
        let p = build_rnet(dist.dim(), r, rng::derive(seed, 1))?;
        let nets = build_nets(n, r, NetMode::Geometric, net_size)?;
        let test_seed = rng::derive(seed, 2);
        let (tv_model, _) = train_tv(&data, &p, &nets, opts)?;
        let tv_excess = estimate_risk(&tv_model, dist, n_test, test_seed)?.excess_classification;
        let (d1, _) = split_tv(&data)?;
        let m = p.num_cells();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for (lam, gam) in nets.pairs() {
            let model = train_localized(&d1, &p, &vec![lam; m], &vec![gam; m], opts)?;
            let e = estimate_risk(&model, dist, n_test, test_seed)?.excess_classification;
            if e < best.0 {
                best = (e, lam, gam);
            }
        }
        rows.push(TvComparisonRow {
            seed,
            tv_excess,
            best_fixed_excess: best.0,
            best_lambda: best.1,
            best_gamma: best.2,
        });
    }
    let k = rows.len() as f64;
    Ok(TvComparison {
        mean_tv: rows.iter().map(|r| r.tv_excess).sum::<f64>() / k,
        mean_best_fixed: rows.iter().map(|r| r.best_fixed_excess).sum::<f64>() / k,
        rows,
    })
}

/// One evaluation of a convolution bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxPoint {
    pub x: Vec<f64>,
    pub cell: usize,
    pub value: f64,
    pub stderr: f64,
    pub target: f64,
    pub bound: f64,
}

impl ApproxPoint {
    pub fn within(&self, k: f64) -> bool {
        (self.value - self.target).abs() <= self.bound + k * self.stderr
    }

    /// Sup-norm bound `|K * f| ≤ 1`.
    pub fn bounded(&self, k: f64) -> bool {
        self.value.abs() <= 1.0 + k * self.stderr
    }
}

/// Random point of cell `j`, by rejection from `B_r(z_j)`.
fn point_in_cell(p: &Partition, j: usize, g: &mut rng::Rng) -> Vec<f64> {
    let z = p.center(j);
    let d = p.dim();
    loop {
        let u = rng::uniform_ball(g, d);
        let x: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a + p.radius() * b).collect();
        if crate::norm(&x) <= 1.0 && p.nearest(&x) == j {
            return x;
        }
    }
}

/// Convolution of the signed plateau on `B_{3r}(z)` at points of cells that
/// meet both classes, against `2 Q(d/2, 2Δ²/γ²)`.
pub fn straddling_cell_check(
    dist: &MarginDistribution,
    p: &Partition,
    gamma: f64,
    n_points: usize,
    quad_budget: usize,
    seed: u64,
) -> Result<Vec<ApproxPoint>> {
    let class = classify_cells(p, dist, p.radius(), 256, rng::derive(seed, 0))?;
    let cells = class.near_straddling.clone();
    if cells.is_empty() {
        return Err(invalid("partition", "no cell meets both classes"));
    }
    let a = p.dim() as f64 / 2.0;
    let mut g = rng::seeded(rng::derive(seed, 1));
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let j =
            cells[(rand::Rng::random::<f64>(&mut g) * cells.len() as f64) as usize % cells.len()];
        let x = point_in_cell(p, j, &mut g);
        let f = plateau(p.center(j), 3.0 * p.radius(), gamma, |y: &[f64]| {
            dist.bayes_label_ext(y)
        });
        let est = smooth_convolve(f, &x, gamma, quad_budget, rng::derive(seed, 10 + k as u64))?;
        let dl = dist.delta_ext(&x);
        let bound = if dl > 0.0 {
            2.0 * gamma_q(a, 2.0 * dl * dl / (gamma * gamma))?
        } else {
            2.0
        };
        out.push(ApproxPoint {
            target: dist.bayes_label_ext(&x),
            x,
            cell: j,
            value: est.value,
            stderr: est.stderr,
            bound,
        });
    }
    Ok(out)
}

/// Convolution of the plateau `±1` on `B_{ω₋ + r}(z)` (sign of the point's
/// class) at points of one-sided cells, against `Q(d/2, 2ω₋²/γ²)`.
pub fn one_sided_cell_check(
    dist: &MarginDistribution,
    p: &Partition,
    gamma: f64,
    omega_minus: f64,
    n_points: usize,
    quad_budget: usize,
    seed: u64,
) -> Result<Vec<ApproxPoint>> {
    if !(omega_minus > 0.0) {
        return Err(invalid("omega_minus", "must be positive"));
    }
    let class = classify_cells(p, dist, p.radius(), 256, rng::derive(seed, 0))?;
    let cells: Vec<usize> = (0..p.num_cells())
        .filter(|&j| !class.is_straddling(j))
        .collect();
    if cells.is_empty() {
        return Err(invalid("partition", "every cell meets both classes"));
    }
    let a = p.dim() as f64 / 2.0;
    let omega_plus = omega_minus + p.radius();
    let bound = gamma_q(a, 2.0 * omega_minus * omega_minus / (gamma * gamma))?;
    let mut g = rng::seeded(rng::derive(seed, 1));
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let j =
            cells[(rand::Rng::random::<f64>(&mut g) * cells.len() as f64) as usize % cells.len()];
        let x = point_in_cell(p, j, &mut g);
        let label = dist.bayes_label_ext(&x);
        let f = plateau(p.center(j), omega_plus, gamma, move |_: &[f64]| label);
        let est = smooth_convolve(f, &x, gamma, quad_budget, rng::derive(seed, 10 + k as u64))?;
        out.push(ApproxPoint {
            x,
            cell: j,
            value: est.value,
            stderr: est.stderr,
            target: label,
            bound,
        });
    }
    Ok(out)
}
