//! Gaussian kernel, kernel matrices, the smoothing convolution `K_γ * f`, and
//! the incomplete-gamma utilities that give closed forms for Gaussian ball masses.

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};
use crate::sq_dist;
use statrs::function::gamma::ln_gamma;

/// Width of a Gaussian kernel `k_γ(x, x') = exp(-‖x - x'‖² / γ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    gamma: f64,
}

impl KernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        gaussian_unchecked(x, y, self.gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid(
            "gamma",
            format!("kernel width must be positive, got {gamma}"),
        ));
    }
    Ok(())
}

#[inline]
pub(crate) fn gaussian_unchecked(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-sq_dist(x, y) / (gamma * gamma)).exp()
}

pub fn gaussian_eval(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(gaussian_unchecked(x, y, gamma))
}

/// Dense symmetric kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn kernel_matrix(points: &[&[f64]], gamma: f64) -> Result<KernelMatrix> {
    check_gamma(gamma)?;
    if points.is_empty() {
        return Err(invalid("points", "kernel matrix of an empty point set"));
    }
    let n = points.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in 0..i {
            let v = gaussian_unchecked(points[i], points[j], gamma);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(KernelMatrix { n, data })
}

/// Quadrature estimate of a convolution together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Estimates `(K_γ * f)(x)` with
/// `K_γ(x - y) = (2 / (√π γ))^{d/2} exp(-2 ‖x - y‖² / γ²)`.
///
/// The profile `exp(-2‖x-y‖²/γ²)` is a normal density with covariance `γ²/4 · I`
/// up to the factor `(πγ²/2)^{d/2}`, so the convolution equals
/// `(√π γ)^{d/2} · E[f(Y)]` with `Y ~ N(x, γ²/4 · I)`.
pub fn smooth_convolve<F>(
    f: F,
    x: &[f64],
    gamma: f64,
    quad_budget: usize,
    seed: u64,
) -> Result<QuadEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    check_gamma(gamma)?;
    if quad_budget < 100 {
        return Err(invalid(
            "quad_budget",
            "at least 100 quadrature samples are required",
        ));
    }
    let d = x.len() as f64;
    let scale = (std::f64::consts::PI.sqrt() * gamma).powf(d / 2.0);
    let mut rng: Rng = rng::seeded(seed);
    let mut y = vec![0.0; x.len()];
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..quad_budget {
        rng::gaussian_into(&mut rng, x, 0.5 * gamma, &mut y);
        let v = f(&y);
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (quad_budget - 1) as f64;
    Ok(QuadEstimate {
        value: scale * mean,
        stderr: scale * (var / quad_budget as f64).sqrt(),
    })
}

/// The cut-off function `(πγ²)^{-d/4} · 1_{B_ρ(z)}(y) · g(y)` with `|g| ≤ 1`.
pub fn plateau<'a, G>(
    center: &'a [f64],
    radius: f64,
    gamma: f64,
    g: G,
) -> impl Fn(&[f64]) -> f64 + 'a
where
    G: Fn(&[f64]) -> f64 + 'a,
{
    let d = center.len() as f64;
    let height = (std::f64::consts::PI * gamma * gamma).powf(-d / 4.0);
    let r2 = radius * radius;
    move |y: &[f64]| {
        if sq_dist(y, center) <= r2 {
            height * g(y)
        } else {
            0.0
        }
    }
}

/// Normalized Gaussian mass of `B_ρ(x)`:
/// `(2/(πγ²))^{d/2} ∫_{B_ρ(x)} exp(-2‖x-y‖²/γ²) dy = P(d/2, 2ρ²/γ²)`.
pub fn gauss_ball_mass(d: usize, rho: f64, gamma: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    if !(rho > 0.0) {
        return Err(invalid("rho", "radius must be positive"));
    }
    check_gamma(gamma)?;
    gamma_p(d as f64 / 2.0, 2.0 * rho * rho / (gamma * gamma))
}

const GAMMA_TOL: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, t) = γ(a, t) / Γ(a)`.
pub fn gamma_p(a: f64, t: f64) -> Result<f64> {
    check_gamma_args(a, t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    if t < a + 1.0 {
        Ok(lower_series(a, t))
    } else {
        Ok(1.0 - upper_cf(a, t))
    }
}

/// Regularized upper incomplete gamma `Q(a, t) = Γ(a, t) / Γ(a)`.
pub fn gamma_q(a: f64, t: f64) -> Result<f64> {
    check_gamma_args(a, t)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    if t < a + 1.0 {
        Ok(1.0 - lower_series(a, t))
    } else {
        Ok(upper_cf(a, t))
    }
}

fn check_gamma_args(a: f64, t: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid("a", "shape must be positive"));
    }
    if !(t >= 0.0) {
        return Err(invalid("t", "argument must be nonnegative"));
    }
    Ok(())
}

fn prefactor(a: f64, t: f64) -> f64 {
    (a * t.ln() - t - ln_gamma(a)).exp()
}

fn lower_series(a: f64, t: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= t / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_TOL {
            break;
        }
    }
    sum * prefactor(a, t)
}

// Modified Lentz evaluation of the continued fraction for Q(a, t).
fn upper_cf(a: f64, t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = t + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_TOL {
            break;
        }
    }
    prefactor(a, t) * h
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_eval_examples() {
        assert_eq!(gaussian_eval(&[0.3, -0.2], &[0.3, -0.2], 0.7).unwrap(), 1.0);
        let g = 0.37;
        assert_abs_diff_eq!(
            gaussian_eval(&[0.0], &[g], g).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            gaussian_eval(&[0.0, 0.0], &[0.3, 0.4], 0.5).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert!(gaussian_eval(&[0.0], &[1.0], 0.0).is_err());
        assert!(gaussian_eval(&[0.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn kernel_matrix_examples() {
        let p = [0.2, 0.1];
        let k = kernel_matrix(&[&p], 0.3).unwrap();
        assert_eq!(k.size(), 1);
        assert_eq!(k.get(0, 0), 1.0);
        let k = kernel_matrix(&[&p, &p], 0.3).unwrap();
        assert!(k.row(0).iter().chain(k.row(1)).all(|&v| v == 1.0));
        let g = 0.4;
        let (a, b) = ([0.0], [g]);
        let k = kernel_matrix(&[&a, &b], g).unwrap();
        assert_abs_diff_eq!(k.get(0, 1), (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(k.get(0, 1), k.get(1, 0));
        assert!(kernel_matrix(&[], 1.0).is_err());
    }

    #[test]
    fn incomplete_gamma_matches_closed_forms() {
        // a = 1/2: P = erf(√t), reference values to 20 digits
        let erf_sqrt = [
            (1e-6, 0.001_128_378_790_969_236_4),
            (0.01, 0.112_462_916_018_284_89),
            (0.3, 0.561_421_973_919_000_14),
            (1.0, 0.842_700_792_949_714_87),
            (2.5, 0.974_652_681_322_531_74),
            (7.0, 0.999_817_189_367_018_16),
            (30.0, 0.999_999_999_999_990_51),
            (200.0, 1.0),
        ];
        for (t, e) in erf_sqrt {
            // a = 1: P = 1 - e^{-t}
            assert_abs_diff_eq!(gamma_p(1.0, t).unwrap(), 1.0 - (-t).exp(), epsilon = 1e-13);
            assert_abs_diff_eq!(gamma_p(0.5, t).unwrap(), e, epsilon = 1e-14);
            assert_abs_diff_eq!(gamma_q(0.5, t).unwrap(), 1.0 - e, epsilon = 1e-14);
        }
        assert_eq!(gamma_p(2.0, 0.0).unwrap(), 0.0);
        assert!(gamma_p(0.0, 1.0).is_err());
        assert!(gamma_p(1.0, -1.0).is_err());
    }

    #[test]
    fn incomplete_gamma_matches_statrs() {
        for &a in &[0.5, 1.0, 1.5, 2.0, 2.5, 4.0, 7.5] {
            for &t in &[0.05, 0.5, 1.0, 2.0, 3.5, 6.0, 12.0, 40.0] {
                let ours = gamma_p(a, t).unwrap();
                let theirs = statrs::function::gamma::gamma_lr(a, t);
                assert_abs_diff_eq!(ours, theirs, epsilon = 1e-12);
                assert_abs_diff_eq!(ours + gamma_q(a, t).unwrap(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ball_mass_examples() {
        // ρ = 100γ: the whole mass
        assert_abs_diff_eq!(gauss_ball_mass(3, 10.0, 0.1).unwrap(), 1.0, epsilon = 1e-12);
        // d = 2 is elementary: 1 - exp(-2ρ²/γ²)
        assert_abs_diff_eq!(
            gauss_ball_mass(2, 0.3, 0.3).unwrap(),
            1.0 - (-2.0f64).exp(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            gauss_ball_mass(2, 0.3, 0.3).unwrap(),
            0.864_664_716_763_387_3,
            epsilon = 1e-12
        );
        assert!(gauss_ball_mass(0, 1.0, 1.0).is_err());
        assert!(gauss_ball_mass(1, 0.0, 1.0).is_err());
        assert!(gauss_ball_mass(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn ball_mass_d1_by_monte_carlo() {
        // ρ = γ in d = 1, checked against direct sampling of the normalized profile.
        let gamma = 0.25;
        let exact = gauss_ball_mass(1, gamma, gamma).unwrap();
        let n = 2_000_000;
        let mut rng = rng::seeded(11);
        let mut y = [0.0];
        let mut hits = 0usize;
        for _ in 0..n {
            rng::gaussian_into(&mut rng, &[0.0], 0.5 * gamma, &mut y);
            if y[0].abs() <= gamma {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p - exact).abs() <= 3.0 * se, "mc {p} vs {exact}");
        // erf(√2)
        assert_abs_diff_eq!(exact, 0.954_499_736_103_641_59, epsilon = 1e-14);
    }

    #[test]
    fn convolution_of_zero_is_zero() {
        let est = smooth_convolve(|_| 0.0, &[0.1, 0.2], 0.3, 500, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.stderr, 0.0);
        assert!(smooth_convolve(|_| 0.0, &[0.1], 0.3, 99, 1).is_err());
    }

    #[test]
    fn wide_plateau_convolves_to_one() {
        // ρ = 10 covers essentially all of the kernel mass.
        let gamma = 0.2;
        let center = [0.0];
        let f = plateau(&center, 10.0, gamma, |_| 1.0);
        let est = smooth_convolve(f, &[0.0], gamma, 20_000, 3).unwrap();
        let exact = gauss_ball_mass(1, 10.0, gamma).unwrap();
        assert!((est.value - exact).abs() < 1e-12, "{est:?}");
    }

    #[test]
    fn halfspace_plateau_bound_at_delta_point_one() {
        // d = 1, γ = 0.2, x with Δ(x) = 0.1 inside a straddling cell centered at 0.
        let gamma = 0.2;
        let r = 0.25;
        let center = [0.0];
        let f = plateau(&center, 3.0 * r, gamma, |y| {
            if y[0] >= 0.0 {
                1.0
            } else {
                -1.0
            }
        });
        let est = smooth_convolve(f, &[0.1], gamma, 200_000, 5).unwrap();
        let bound = 2.0 * gamma_q(0.5, 2.0 * 0.01 / 0.04).unwrap();
        // 2 erfc(√0.5)
        assert_abs_diff_eq!(bound, 0.634_621_015_725_828_21, epsilon = 1e-14);
        assert!((est.value - 1.0).abs() <= bound + 3.0 * est.stderr);
    }
}
