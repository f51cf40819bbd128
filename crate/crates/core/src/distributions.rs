//! Synthetic distributions with closed-form posterior and margin exponents.
//!
//! The marginal is uniform on the unit ball. With `Δ` the distance to the
//! decision boundary and `σ = ±1` the side,
//! `η(x) = ½ (1 + σ(x) · min(1, (Δ(x)/τ)^ζ))`.

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundaryGeometry, IntervalExtrema, Side};
use crate::quadrature::integrate_with_breaks;
use crate::{check_in_ball, norm, rng, Dataset};

/// Shape of the decision boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Boundary `{x_1 = 0}`; the positive class is `x_1 > 0`.
    Halfspace,
    /// Boundary `{‖x‖ = R}`; the positive class is `‖x‖ > R`.
    Sphere { radius: f64 },
}

/// Exponents a distribution satisfies by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentSheet {
    /// Margin-noise exponent.
    pub beta: f64,
    /// Noise exponent.
    pub q: f64,
    /// Lower-control exponent.
    pub zeta: f64,
    /// Margin exponent.
    pub alpha: f64,
    /// Hölder exponent of `η`, present when `ζ ≤ 1`.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginDistribution {
    dim: usize,
    family: Family,
    zeta: f64,
    tau: f64,
}

/// Least-squares fit of `log y` on `log x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: Vec<(f64, f64)>,
}

/// Outcome of a lower-control check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcCheck {
    pub holds: bool,
    /// Smallest constant seen on the sample; infinite when the check fails.
    pub constant: f64,
}

/// Dyadic ladder `2^-1, …, 2^-6` used by every exponent estimator.
pub const LADDER: [f64; 6] = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];
const MIN_MC: usize = 10_000;
/// Band-wise trend below which a supremum is treated as unbounded.
const TREND_TOL: f64 = 0.1;

impl MarginDistribution {
    pub fn new(family: Family, dim: usize, zeta: f64, tau: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(invalid(
                "zeta",
                format!("must be positive and finite, got {zeta}"),
            ));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1], got {tau}")));
        }
        if let Family::Sphere { radius } = family {
            if !(radius > 0.0 && radius < 1.0) {
                return Err(invalid("R", format!("must lie in (0, 1), got {radius}")));
            }
        }
        let d = Self {
            dim,
            family,
            zeta,
            tau,
        };
        let sheet = d.exponents();
        if let Some(rho) = sheet.rho {
            if rho * sheet.q > 1.0 + 1e-12 {
                return Err(invalid(
                    "zeta",
                    "Hölder and noise exponents violate rho*q <= 1",
                ));
            }
        }
        Ok(d)
    }

    pub fn halfspace(dim: usize, zeta: f64, tau: f64) -> Result<Self> {
        Self::new(Family::Halfspace, dim, zeta, tau)
    }

    pub fn sphere(dim: usize, radius: f64, zeta: f64, tau: f64) -> Result<Self> {
        Self::new(Family::Sphere { radius }, dim, zeta, tau)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn exponents(&self) -> ExponentSheet {
        let alpha = 1.0;
        ExponentSheet {
            beta: self.zeta + alpha,
            q: alpha / self.zeta,
            zeta: self.zeta,
            alpha,
            rho: (self.zeta <= 1.0).then_some(self.zeta),
        }
    }

    /// Boundary distance, extended to all of R^d by the same formula.
    pub fn delta_ext(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Halfspace => x[0].abs(),
            Family::Sphere { radius } => (norm(x) - radius).abs(),
        }
    }

    /// Signed side of the boundary, extended to R^d.
    fn signed(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Halfspace => x[0],
            Family::Sphere { radius } => norm(x) - radius,
        }
    }

    /// `|2η - 1|` as a function of the boundary distance.
    pub fn margin_of(&self, delta: f64) -> f64 {
        (delta / self.tau).powf(self.zeta).min(1.0)
    }

    pub fn eta_ext(&self, x: &[f64]) -> f64 {
        let s = self.signed(x);
        let m = self.margin_of(s.abs());
        if s > 0.0 {
            0.5 * (1.0 + m)
        } else if s < 0.0 {
            0.5 * (1.0 - m)
        } else {
            0.5
        }
    }

    /// Bayes decision `sign(2η - 1)` with `sign 0 = +1`, extended to R^d.
    pub fn bayes_label_ext(&self, x: &[f64]) -> f64 {
        if self.signed(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        check_in_ball(x)
    }

    pub fn eta(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.eta_ext(x))
    }

    pub fn delta(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.delta_ext(x))
    }

    pub fn bayes_label(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.bayes_label_ext(x))
    }

    /// Draws `n` labeled points.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut r = rng::seeded(seed);
        let mut xs = vec![0.0; n * self.dim];
        let mut ys = Vec::with_capacity(n);
        for x in xs.chunks_exact_mut(self.dim) {
            rng::uniform_ball_into(&mut r, x);
            let u: f64 = rand::Rng::random(&mut r);
            ys.push(if u < self.eta_ext(x) { 1.0 } else { -1.0 });
        }
        Dataset::from_parts(self.dim, xs, ys).expect("sampled points lie in the ball")
    }

    /// Unlabeled marginal sample.
    pub fn sample_x(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| rng::uniform_ball(&mut r, self.dim))
            .collect()
    }

    /// `E[g(Δ(X))]` by one-dimensional quadrature of the boundary coordinate.
    pub fn expect_of_delta(&self, g: impl Fn(f64) -> f64) -> f64 {
        let d = self.dim as f64;
        let tol = 1e-13;
        match self.family {
            Family::Halfspace => {
                let w = |t: f64| (1.0 - t * t).max(0.0).powf((d - 1.0) / 2.0);
                let breaks = [-self.tau, 0.0, self.tau];
                let z = integrate_with_breaks(w, -1.0, 1.0, &breaks, tol);
                integrate_with_breaks(|t| w(t) * g(t.abs()), -1.0, 1.0, &breaks, tol) / z
            }
            Family::Sphere { radius } => {
                let w = |t: f64| d * t.powf(d - 1.0);
                let breaks = [radius - self.tau, radius, radius + self.tau];
                integrate_with_breaks(|t| w(t) * g((t - radius).abs()), 0.0, 1.0, &breaks, tol)
            }
        }
    }

    /// `E[min(η, 1-η)]`.
    pub fn bayes_risk(&self) -> f64 {
        0.5 * (1.0 - self.expect_of_delta(|t| self.margin_of(t)))
    }

    /// Hinge-loss Bayes risk `E[1 - |2η - 1|]`.
    pub fn hinge_bayes_risk(&self) -> f64 {
        1.0 - self.expect_of_delta(|t| self.margin_of(t))
    }

    fn mc_deltas(&self, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
        if n_mc < MIN_MC {
            return Err(invalid(
                "n_mc",
                format!("at least {MIN_MC} samples required, got {n_mc}"),
            ));
        }
        let mut r = rng::seeded(seed);
        let mut x = vec![0.0; self.dim];
        Ok((0..n_mc)
            .map(|_| {
                rng::uniform_ball_into(&mut r, &mut x);
                self.delta_ext(&x)
            })
            .collect())
    }

    fn ladder_fit(&self, deltas: &[f64], mass: impl Fn(f64, f64) -> f64) -> Result<SlopeFit> {
        let n = deltas.len() as f64;
        let points: Vec<(f64, f64)> = LADDER
            .iter()
            .map(|&t| (t, deltas.iter().map(|&dl| mass(dl, t)).sum::<f64>() / n))
            .collect();
        if points.iter().any(|p| p.1 <= 0.0) {
            return Err(invalid(
                "n_mc",
                "too few samples near the boundary for the ladder",
            ));
        }
        Ok(loglog_fit(&points))
    }

    /// Noise exponent from `P(|2η - 1| < ε)` over the ladder.
    pub fn fit_ne(&self, n_mc: usize, seed: u64) -> Result<SlopeFit> {
        let deltas = self.mc_deltas(n_mc, seed)?;
        self.ladder_fit(&deltas, |dl, eps| {
            f64::from(u8::from(self.margin_of(dl) < eps))
        })
    }

    /// Margin-noise exponent from `E[|2η - 1| 1{Δ < t}]` over the ladder.
    pub fn fit_mne(&self, n_mc: usize, seed: u64) -> Result<SlopeFit> {
        let deltas = self.mc_deltas(n_mc, seed)?;
        self.ladder_fit(
            &deltas,
            |dl, t| if dl < t { self.margin_of(dl) } else { 0.0 },
        )
    }

    /// Margin exponent from `P(Δ < t)` over the ladder.
    pub fn fit_me(&self, n_mc: usize, seed: u64) -> Result<SlopeFit> {
        let deltas = self.mc_deltas(n_mc, seed)?;
        self.ladder_fit(&deltas, |dl, t| f64::from(u8::from(dl < t)))
    }

    pub fn estimate_ne(&self, n_mc: usize, seed: u64) -> Result<f64> {
        Ok(self.fit_ne(n_mc, seed)?.slope)
    }

    pub fn estimate_mne(&self, n_mc: usize, seed: u64) -> Result<f64> {
        Ok(self.fit_mne(n_mc, seed)?.slope)
    }

    pub fn estimate_me(&self, n_mc: usize, seed: u64) -> Result<f64> {
        Ok(self.fit_me(n_mc, seed)?.slope)
    }

    /// Checks `Δ^ζ ≤ c |2η - 1|` at the declared exponent.
    pub fn check_lc(&self, n_mc: usize, seed: u64) -> Result<LcCheck> {
        self.check_lc_at(self.zeta, n_mc, seed)
    }

    /// Checks lower control at exponent `zeta`.
    ///
    /// The ratio `Δ^ζ / |2η - 1|` is bounded iff its maxima over dyadic bands
    /// of `Δ` stay flat as `Δ → 0`; a decreasing trend in log-log scale marks
    /// a blow-up, in which case no finite constant exists.
    pub fn check_lc_at(&self, zeta: f64, n_mc: usize, seed: u64) -> Result<LcCheck> {
        if !(zeta > 0.0) {
            return Err(invalid("zeta", "must be positive"));
        }
        let deltas = self.mc_deltas(n_mc, seed)?;
        let mut worst: f64 = 0.0;
        let mut bands: Vec<(f64, f64)> = Vec::new();
        let mut band_max = vec![(0usize, 0.0f64); 40];
        for &dl in &deltas {
            let m = self.margin_of(dl);
            if dl <= 0.0 {
                continue;
            }
            if m <= 0.0 {
                return Ok(LcCheck {
                    holds: false,
                    constant: f64::INFINITY,
                });
            }
            let ratio = dl.powf(zeta) / m;
            worst = worst.max(ratio);
            let k = (-dl.log2()).floor().max(0.0) as usize;
            if k < band_max.len() {
                band_max[k].0 += 1;
                band_max[k].1 = band_max[k].1.max(ratio);
            }
        }
        for (k, &(count, mx)) in band_max.iter().enumerate() {
            if count >= 5 {
                bands.push((2f64.powi(-(k as i32)), mx));
            }
        }
        let holds = bands.len() < 3 || loglog_fit(&bands).slope >= -TREND_TOL;
        Ok(LcCheck {
            holds,
            constant: if holds { worst } else { f64::INFINITY },
        })
    }

    /// Reverse-Hölder check `|η(x) - η(x')| ≥ c |x - x'|^ζ` for the
    /// one-dimensional halfspace family with `ζ ≤ 1`, `τ = 1`.
    ///
    /// Returns the holds flag and the smallest ratio seen. When the inequality
    /// holds, lower control at `ζ` with constant `1/(2c)` is implied; that
    /// implication is verified here and a contradiction is reported as an error.
    pub fn reverse_holder_check(&self, n_pairs: usize, seed: u64) -> Result<LcCheck> {
        if self.family != Family::Halfspace || self.dim != 1 || self.zeta > 1.0 || self.tau != 1.0 {
            return Err(Error::Unsupported(
                "reverse Hölder check needs the 1-d halfspace family with zeta <= 1 and tau = 1"
                    .into(),
            ));
        }
        if n_pairs < 100 {
            return Err(invalid("n_pairs", "at least 100 pairs required"));
        }
        let mut r = rng::seeded(seed);
        let mut worst = f64::INFINITY;
        let mut band_min = vec![(0usize, f64::INFINITY); 40];
        for _ in 0..n_pairs {
            let a: f64 = 2.0 * rand::Rng::random::<f64>(&mut r) - 1.0;
            let b: f64 = 2.0 * rand::Rng::random::<f64>(&mut r) - 1.0;
            let dist = (a - b).abs();
            if dist == 0.0 {
                continue;
            }
            let ratio = (self.eta_ext(&[a]) - self.eta_ext(&[b])).abs() / dist.powf(self.zeta);
            worst = worst.min(ratio);
            let k = (-dist.log2()).floor().max(0.0) as usize;
            if k < band_min.len() {
                band_min[k].0 += 1;
                band_min[k].1 = band_min[k].1.min(ratio);
            }
        }
        let bands: Vec<(f64, f64)> = band_min
            .iter()
            .enumerate()
            .filter(|(_, b)| b.0 >= 5 && b.1 > 0.0)
            .map(|(k, b)| (2f64.powi(-(k as i32)), b.1))
            .collect();
        let holds = worst > 0.0 && (bands.len() < 3 || loglog_fit(&bands).slope <= TREND_TOL);
        if holds {
            let lc = self.check_lc(MIN_MC.max(n_pairs), rng::derive(seed, 1))?;
            if !lc.holds || lc.constant > 1.0 / (2.0 * worst) * (1.0 + 1e-9) {
                return Err(Error::Unsupported(format!(
                    "reverse Hölder holds with c = {worst} but lower control fails (constant {})",
                    lc.constant
                )));
            }
        }
        Ok(LcCheck {
            holds,
            constant: if holds { worst } else { 0.0 },
        })
    }

    /// Key=value text with keys family, d, zeta, tau and (sphere only) R.
    pub fn to_spec(&self) -> String {
        let mut out = String::new();
        match self.family {
            Family::Halfspace => out.push_str("family=halfspace\n"),
            Family::Sphere { radius } => out.push_str(&format!("family=sphere\nR={radius}\n")),
        }
        out.push_str(&format!(
            "d={}\nzeta={}\ntau={}\n",
            self.dim, self.zeta, self.tau
        ));
        out
    }

    /// Parses [`MarginDistribution::to_spec`] text, plus an optional `seed`.
    pub fn from_spec(text: &str) -> Result<(Self, Option<u64>)> {
        let mut family = None;
        let mut dim = None;
        let mut zeta = None;
        let mut tau = None;
        let mut radius = None;
        let mut seed = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| crate::error::parse_err(ln + 1, "expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |what: &str| crate::error::parse_err(ln + 1, format!("bad {what} `{v}`"));
            match k {
                "family" => family = Some(v.to_string()),
                "d" => dim = Some(v.parse::<usize>().map_err(|_| bad("d"))?),
                "zeta" => zeta = Some(v.parse::<f64>().map_err(|_| bad("zeta"))?),
                "tau" => tau = Some(v.parse::<f64>().map_err(|_| bad("tau"))?),
                "R" => radius = Some(v.parse::<f64>().map_err(|_| bad("R"))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("seed"))?),
                _ => {
                    return Err(crate::error::parse_err(
                        ln + 1,
                        format!("unknown key `{k}`"),
                    ))
                }
            }
        }
        let fam = match family.as_deref() {
            Some("halfspace") | None => {
                if radius.is_some() {
                    return Err(invalid("R", "only the sphere family takes a radius"));
                }
                Family::Halfspace
            }
            Some("sphere") => Family::Sphere {
                radius: radius.unwrap_or(0.5),
            },
            Some(other) => return Err(invalid("family", format!("unknown family `{other}`"))),
        };
        let dist = Self::new(
            fam,
            dim.unwrap_or(2),
            zeta.unwrap_or(1.0),
            tau.unwrap_or(1.0),
        )?;
        Ok((dist, seed))
    }
}

impl BoundaryGeometry for MarginDistribution {
    fn dim(&self) -> usize {
        self.dim
    }

    fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.delta_ext(x)
    }

    fn side(&self, x: &[f64]) -> Side {
        let s = self.signed(x);
        if s > 0.0 {
            Side::Positive
        } else if s < 0.0 {
            Side::Negative
        } else {
            Side::Boundary
        }
    }

    fn interval_extrema(&self, lo: f64, hi: f64) -> Option<IntervalExtrema> {
        if self.dim != 1 {
            return None;
        }
        // Δ is piecewise linear with kinks at 0 and at the boundary points.
        let mut knots = vec![lo, hi];
        let boundary: Vec<f64> = match self.family {
            Family::Halfspace => vec![0.0],
            Family::Sphere { radius } => vec![-radius, radius],
        };
        knots.extend(
            boundary
                .iter()
                .copied()
                .chain([0.0])
                .filter(|&t| t > lo && t < hi),
        );
        knots.sort_by(f64::total_cmp);
        let mut ext = IntervalExtrema {
            delta_min: f64::INFINITY,
            delta_max: 0.0,
            has_positive: false,
            has_negative: false,
        };
        for &t in &knots {
            let v = self.delta_ext(&[t]);
            ext.delta_min = ext.delta_min.min(v);
            ext.delta_max = ext.delta_max.max(v);
        }
        for w in knots.windows(2) {
            if w[1] > w[0] {
                match self.side(&[0.5 * (w[0] + w[1])]) {
                    Side::Positive => ext.has_positive = true,
                    Side::Negative => ext.has_negative = true,
                    Side::Boundary => {}
                }
            }
        }
        Some(ext)
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_fit(points: &[(f64, f64)]) -> SlopeFit {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, stderr) = ols_slope(&xs, &ys);
    SlopeFit {
        slope,
        stderr,
        points: points.to_vec(),
    }
}

/// Slope and its standard error for a simple linear regression.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - icpt - slope * x).powi(2))
        .sum();
    let stderr = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}
