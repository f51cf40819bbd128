//! Per-cell hinge-loss SVM solved exactly in the dual.
//!
//! With `C = 1/(2 λ n)` (global `n`) and no offset, the dual is
//! `max Σα - ½ ΣΣ α_i α_k y_i y_k K_ik` over the box `[0, C]^{n_j}` and the
//! coordinate maximizer is available in closed form.

use crate::dataset::Dataset;
use crate::error::{invalid, parse_err, Error, Result};
use crate::fmt_f64;
use crate::kernel::gaussian_unchecked;

/// Problems up to this size keep a dense kernel matrix; larger ones recompute
/// kernel rows when a coefficient moves. Both paths yield identical bits.
const DENSE_LIMIT: usize = 8192;
const SNAP: f64 = 1e-12;

/// One cell's training problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProblem {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<f64>,
    lambda: f64,
    gamma: f64,
    n_global: usize,
}

impl CellProblem {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        labels: Vec<f64>,
        lambda: f64,
        gamma: f64,
        n_global: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        if points.len() != dim * labels.len() {
            return Err(Error::LengthMismatch {
                what: "cell points",
                expected: dim * labels.len(),
                got: points.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidLabel(y));
        }
        if labels.len() > n_global {
            return Err(invalid(
                "n",
                format!(
                    "global sample size {n_global} is below the cell size {}",
                    labels.len()
                ),
            ));
        }
        Ok(Self {
            dim,
            points,
            labels,
            lambda,
            gamma,
            n_global,
        })
    }

    pub fn from_dataset(data: &Dataset, lambda: f64, gamma: f64, n_global: usize) -> Result<Self> {
        let points = data.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        Self::new(
            data.dim(),
            points,
            data.labels().to_vec(),
            lambda,
            gamma,
            n_global,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_global(&self) -> usize {
        self.n_global
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Box constant `C = 1/(2 λ n)`.
    pub fn box_constant(&self) -> f64 {
        1.0 / (2.0 * self.lambda * self.n_global as f64)
    }

    /// Dual objective at coefficients `alpha` (one per point).
    pub fn dual_objective(&self, alpha: &[f64]) -> f64 {
        let n = self.len();
        let mut lin = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            lin += alpha[i];
            if alpha[i] == 0.0 {
                continue;
            }
            for k in 0..n {
                if alpha[k] != 0.0 {
                    quad +=
                        alpha[i] * alpha[k] * self.labels[i] * self.labels[k] * self.kernel(i, k);
                }
            }
        }
        lin - 0.5 * quad
    }

    fn kernel(&self, i: usize, k: usize) -> f64 {
        gaussian_unchecked(self.point(i), self.point(k), self.gamma)
    }

    fn kernel_row(&self, i: usize, out: &mut [f64]) {
        let xi = self.point(i);
        for (k, o) in out.iter_mut().enumerate() {
            *o = gaussian_unchecked(xi, self.point(k), self.gamma);
        }
    }
}

/// Stopping rule for dual coordinate ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub eps_kkt: f64,
    pub max_sweeps: usize,
    /// Record the dual objective after every sweep.
    pub trace_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_kkt: 1e-6,
            max_sweeps: 10_000,
            trace_objective: false,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.eps_kkt > 0.0) {
            return Err(invalid("eps_kkt", "must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(invalid("max_sweeps", "must be positive"));
        }
        Ok(())
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub converged: bool,
    pub max_kkt_violation: f64,
    pub objective_trace: Vec<f64>,
}

/// A trained cell: support vectors with their dual coefficients.
#[derive(Debug, Clone)]
pub struct CellModel {
    dim: usize,
    gamma: f64,
    lambda: f64,
    alpha: Vec<f64>,
    labels: Vec<f64>,
    support: Vec<f64>,
    rkhs_norm_sq: f64,
    pub stats: SolveStats,
}

impl PartialEq for CellModel {
    /// Compares the function, not the solve history.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.gamma == other.gamma
            && self.lambda == other.lambda
            && self.alpha == other.alpha
            && self.labels == other.labels
            && self.support == other.support
            && self.rkhs_norm_sq == other.rkhs_norm_sq
    }
}

impl CellModel {
    /// The zero function (no support vectors).
    pub fn zero(dim: usize, gamma: f64, lambda: f64) -> Self {
        Self {
            dim,
            gamma,
            lambda,
            alpha: Vec::new(),
            labels: Vec::new(),
            support: Vec::new(),
            rkhs_norm_sq: 0.0,
            stats: SolveStats {
                converged: true,
                ..SolveStats::default()
            },
        }
    }

    fn from_support(
        dim: usize,
        gamma: f64,
        lambda: f64,
        alpha: Vec<f64>,
        labels: Vec<f64>,
        support: Vec<f64>,
    ) -> Self {
        let mut m = Self {
            dim,
            gamma,
            lambda,
            alpha,
            labels,
            support,
            rkhs_norm_sq: 0.0,
            stats: SolveStats::default(),
        };
        m.rkhs_norm_sq = m.compute_norm_sq();
        m
    }

    fn compute_norm_sq(&self) -> f64 {
        let s = self.num_support();
        let mut total = 0.0;
        for i in 0..s {
            let ci = self.alpha[i] * self.labels[i];
            let mut row = 0.0;
            for k in 0..s {
                row += self.alpha[k]
                    * self.labels[k]
                    * gaussian_unchecked(self.sv(i), self.sv(k), self.gamma);
            }
            total += ci * row;
        }
        total.max(0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_support(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn support_labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sv(&self, i: usize) -> &[f64] {
        &self.support[i * self.dim..(i + 1) * self.dim]
    }

    /// `‖f‖²` in the RKHS of the cell kernel.
    pub fn rkhs_norm_sq(&self) -> f64 {
        self.rkhs_norm_sq
    }

    /// `Σ α_i y_i k(x_i, x)`.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.alpha.len() {
            f += self.alpha[i] * self.labels[i] * gaussian_unchecked(self.sv(i), x, self.gamma);
        }
        f
    }

    /// Text block `cell j γ λ n_sv`, then `α y x1 .. xd` per support vector.
    pub fn write_block(&self, j: usize, out: &mut String) {
        out.push_str(&format!(
            "cell {j} {} {} {}\n",
            fmt_f64(self.gamma),
            fmt_f64(self.lambda),
            self.num_support()
        ));
        for i in 0..self.num_support() {
            let mut fields = vec![
                fmt_f64(self.alpha[i]),
                if self.labels[i] > 0.0 {
                    "1".into()
                } else {
                    "-1".into()
                },
            ];
            fields.extend(self.sv(i).iter().map(|v| fmt_f64(*v)));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
    }

    /// Reads a block written by [`CellModel::write_block`]; returns the cell index.
    pub(crate) fn read_block<'a>(
        dim: usize,
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
    ) -> Result<(usize, CellModel)> {
        let (ln, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing cell block"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 || f[0] != "cell" {
            return Err(parse_err(
                ln,
                "cell header must be `cell j gamma lambda n_sv`",
            ));
        }
        let j: usize = f[1].parse().map_err(|_| parse_err(ln, "bad cell index"))?;
        let gamma: f64 = f[2].parse().map_err(|_| parse_err(ln, "bad gamma"))?;
        let lambda: f64 = f[3].parse().map_err(|_| parse_err(ln, "bad lambda"))?;
        let nsv: usize = f[4]
            .parse()
            .map_err(|_| parse_err(ln, "bad support count"))?;
        if !(gamma > 0.0 && lambda > 0.0) {
            return Err(parse_err(ln, "gamma and lambda must be positive"));
        }
        let mut alpha = Vec::with_capacity(nsv);
        let mut labels = Vec::with_capacity(nsv);
        let mut support = Vec::with_capacity(nsv * dim);
        for _ in 0..nsv {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(ln, "truncated cell block"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| parse_err(ln, format!("bad number `{t}`")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != dim + 2 {
                return Err(parse_err(ln, format!("expected {} fields", dim + 2)));
            }
            if !(vals[0] >= 0.0) || (vals[1] != 1.0 && vals[1] != -1.0) {
                return Err(parse_err(ln, "bad coefficient or label"));
            }
            alpha.push(vals[0]);
            labels.push(vals[1]);
            support.extend_from_slice(&vals[2..]);
        }
        if nsv == 0 {
            return Ok((j, CellModel::zero(dim, gamma, lambda)));
        }
        Ok((
            j,
            CellModel::from_support(dim, gamma, lambda, alpha, labels, support),
        ))
    }
}

/// Full solution of a cell problem, including non-support points.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub model: CellModel,
    /// One coefficient per training point, in input order.
    pub alpha: Vec<f64>,
    /// `f(x_i)` at every training point.
    pub outputs: Vec<f64>,
}

impl CellSolution {
    pub fn dual_objective(&self, problem: &CellProblem) -> f64 {
        problem.dual_objective(&self.alpha)
    }
}

/// Clipping to `[-1, 1]`.
pub fn clip(t: f64) -> f64 {
    t.clamp(-1.0, 1.0)
}

/// Hinge loss `max(0, 1 - y t)`.
pub fn hinge(y: f64, t: f64) -> f64 {
    (1.0 - y * t).max(0.0)
}

/// Solves the cell problem; see [`solve_cell`] for the full solution.
pub fn train_cell(problem: &CellProblem, opts: &SolverOptions) -> Result<CellModel> {
    Ok(solve_cell(problem, opts)?.model)
}

/// Cyclic dual coordinate ascent with the exact clipped coordinate update.
pub fn solve_cell(problem: &CellProblem, opts: &SolverOptions) -> Result<CellSolution> {
    opts.validate()?;
    let n = problem.len();
    let c = problem.box_constant();
    let (dim, gamma, lambda) = (problem.dim, problem.gamma, problem.lambda);
    if n == 0 {
        return Ok(CellSolution {
            model: CellModel::zero(dim, gamma, lambda),
            alpha: Vec::new(),
            outputs: Vec::new(),
        });
    }
    let y = &problem.labels;
    let dense = (n <= DENSE_LIMIT).then(|| {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            problem.kernel_row(i, &mut k[i * n..(i + 1) * n]);
        }
        k
    });
    let mut scratch = if dense.is_none() {
        vec![0.0; n]
    } else {
        Vec::new()
    };

    let mut alpha = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut stats = SolveStats::default();
    let mut trace = Vec::new();
    if opts.trace_objective {
        trace.push(0.0);
    }
    let mut violation = kkt_violation(&alpha, &f, y, c);
    while violation > opts.eps_kkt && stats.sweeps < opts.max_sweeps {
        for i in 0..n {
            // K_ii = 1 for the Gaussian kernel.
            let step = 1.0 - y[i] * f[i];
            let a = snap((alpha[i] + step).clamp(0.0, c), c);
            let delta = a - alpha[i];
            if delta == 0.0 {
                continue;
            }
            alpha[i] = a;
            add_row(
                problem,
                dense.as_deref(),
                &mut scratch,
                i,
                delta * y[i],
                &mut f,
            );
        }
        stats.sweeps += 1;
        if opts.trace_objective {
            trace.push(dual_from_outputs(&alpha, &f, y));
        }
        violation = kkt_violation(&alpha, &f, y, c);
        if violation <= opts.eps_kkt {
            // Refresh outputs from scratch to shed accumulated rounding.
            recompute_outputs(problem, &alpha, dense.as_deref(), &mut scratch, &mut f);
            violation = kkt_violation(&alpha, &f, y, c);
        }
    }
    stats.converged = violation <= opts.eps_kkt;
    stats.max_kkt_violation = violation;
    stats.objective_trace = trace;

    let mut sv_alpha = Vec::new();
    let mut sv_labels = Vec::new();
    let mut sv_points = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            sv_alpha.push(alpha[i]);
            sv_labels.push(y[i]);
            sv_points.extend_from_slice(problem.point(i));
        }
    }
    let mut model = if sv_alpha.is_empty() {
        CellModel::zero(dim, gamma, lambda)
    } else {
        CellModel::from_support(dim, gamma, lambda, sv_alpha, sv_labels, sv_points)
    };
    model.stats = stats;
    Ok(CellSolution {
        model,
        alpha,
        outputs: f,
    })
}

fn snap(a: f64, c: f64) -> f64 {
    if a < SNAP {
        0.0
    } else if c - a < SNAP {
        c
    } else {
        a
    }
}

/// `f += w K[i, ·]`.
fn add_row(
    problem: &CellProblem,
    dense: Option<&[f64]>,
    scratch: &mut [f64],
    i: usize,
    w: f64,
    f: &mut [f64],
) {
    let n = f.len();
    let row: &[f64] = match dense {
        Some(k) => &k[i * n..(i + 1) * n],
        None => {
            problem.kernel_row(i, scratch);
            scratch
        }
    };
    for (fk, kik) in f.iter_mut().zip(row) {
        *fk += w * kik;
    }
}

fn recompute_outputs(
    problem: &CellProblem,
    alpha: &[f64],
    dense: Option<&[f64]>,
    scratch: &mut [f64],
    f: &mut [f64],
) {
    let n = alpha.len();
    f.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row: &[f64] = match dense {
            Some(k) => &k[i * n..(i + 1) * n],
            None => {
                problem.kernel_row(i, scratch);
                scratch
            }
        };
        let w = alpha[i] * problem.labels[i];
        for (fk, kik) in f.iter_mut().zip(row) {
            *fk += w * kik;
        }
    }
}

fn dual_from_outputs(alpha: &[f64], f: &[f64], y: &[f64]) -> f64 {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..alpha.len() {
        lin += alpha[i];
        quad += alpha[i] * y[i] * f[i];
    }
    lin - 0.5 * quad
}

/// Largest KKT violation of the box-constrained dual.
pub fn kkt_violation(alpha: &[f64], f: &[f64], y: &[f64], c: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..alpha.len() {
        let m = y[i] * f[i];
        let v = if alpha[i] <= 0.0 {
            1.0 - m
        } else if alpha[i] >= c {
            m - 1.0
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Upper bound on how far the grid optimum of [`brute_force_dual`] can fall
/// below the true dual optimum.
///
/// The dual is concave, so the gap to the grid point nearest the optimum is at
/// most `‖∇D‖₁ · step`, and every gradient entry is bounded by `1 + nC`.
pub fn grid_gap_bound(problem: &CellProblem, grid_step: f64) -> f64 {
    let n = problem.len() as f64;
    n * grid_step * (1.0 + n * problem.box_constant())
}

/// Exhaustive dual maximization on a grid over `[0, C]^{n_j}`; test oracle
/// for problems with at most five points.
pub fn brute_force_dual(problem: &CellProblem, grid_step: f64) -> Result<CellSolution> {
    let n = problem.len();
    if n > 5 {
        return Err(invalid(
            "problem",
            format!("brute force supports at most 5 points, got {n}"),
        ));
    }
    if !(grid_step > 0.0) {
        return Err(invalid("grid_step", "must be positive"));
    }
    let c = problem.box_constant();
    let mut levels: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let v = k as f64 * grid_step;
        if v >= c {
            break;
        }
        levels.push(v);
        k += 1;
    }
    levels.push(c);
    let mut idx = vec![0usize; n];
    let mut alpha = vec![0.0; n];
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    loop {
        for i in 0..n {
            alpha[i] = levels[idx[i]];
        }
        let v = problem.dual_objective(&alpha);
        if v > best.0 {
            best = (v, alpha.clone());
        }
        let mut carry = true;
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < levels.len() {
                carry = false;
                break;
            }
            *slot = 0;
        }
        if carry {
            break;
        }
    }
    let alpha = best.1;
    let outputs: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| alpha[k] * problem.labels[k] * problem.kernel(k, i))
                .sum()
        })
        .collect();
    let mut sv = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        if alpha[i] > 0.0 {
            sv.0.push(alpha[i]);
            sv.1.push(problem.labels[i]);
            sv.2.extend_from_slice(problem.point(i));
        }
    }
    let model = if sv.0.is_empty() {
        CellModel::zero(problem.dim, problem.gamma, problem.lambda)
    } else {
        CellModel::from_support(problem.dim, problem.gamma, problem.lambda, sv.0, sv.1, sv.2)
    };
    Ok(CellSolution {
        model,
        alpha,
        outputs,
    })
}
