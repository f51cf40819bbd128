//! Training–validation SVM: per-cell choice of `(λ, γ)` on a held-out half.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::geometry::Partition;
use crate::model::{cell_problems, LocalizedModel};
use crate::solver::{clip, hinge, train_cell, CellModel, CellProblem, SolverOptions};

/// How the candidate grids are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetMode {
    /// Arithmetic grids with spacings `n^-2` and `r/n`; `n` points each.
    Exact,
    /// Log-spaced grids of `size_cap` points; practical, not an ε-net.
    Geometric,
}

impl NetMode {
    pub fn name(self) -> &'static str {
        match self {
            NetMode::Exact => "exact",
            NetMode::Geometric => "geometric",
        }
    }
}

/// Candidate regularization and width values, both stored in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterNets {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub mode: NetMode,
    /// Largest gap between neighbouring λ candidates (and from 0).
    pub rho: f64,
    /// Largest gap between neighbouring γ candidates, relative to `r`.
    pub delta: f64,
}

impl ParameterNets {
    /// Explicit candidate lists; sorted into decreasing order.
    pub fn from_values(mut lambdas: Vec<f64>, mut gammas: Vec<f64>, r: f64) -> Result<Self> {
        if lambdas.is_empty() || gammas.is_empty() {
            return Err(invalid("nets", "candidate lists must be nonempty"));
        }
        if lambdas
            .iter()
            .chain(&gammas)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(invalid("nets", "candidates must be positive"));
        }
        if gammas.iter().any(|&g| g > r) {
            return Err(invalid(
                "nets",
                format!("kernel widths must not exceed r = {r}"),
            ));
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        gammas.sort_by(|a, b| b.total_cmp(a));
        lambdas.dedup();
        gammas.dedup();
        let rho = max_gap(&lambdas);
        let delta = max_gap(&gammas) / r;
        Ok(Self {
            lambdas,
            gammas,
            mode: NetMode::Geometric,
            rho,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(λ, γ)` pairs, λ-major.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.lambdas
            .iter()
            .flat_map(|&l| self.gammas.iter().map(move |&g| (l, g)))
            .collect()
    }
}

fn max_gap(desc: &[f64]) -> f64 {
    let mut gap = *desc.last().expect("nonempty");
    for w in desc.windows(2) {
        gap = gap.max(w[0] - w[1]);
    }
    gap
}

/// Candidate grids for sample size `n` and net radius `r`.
pub fn build_nets(n: usize, r: f64, mode: NetMode, size_cap: usize) -> Result<ParameterNets> {
    if n < 4 {
        return Err(invalid(
            "n",
            format!("at least 4 samples required, got {n}"),
        ));
    }
    if !(r > 0.0 && r <= 2.0) {
        return Err(invalid("r", format!("must lie in (0, 2], got {r}")));
    }
    if size_cap < 2 {
        return Err(invalid("size_cap", "nets need at least 2 points"));
    }
    let nf = n as f64;
    let (lambdas, gammas, rho, delta) = match mode {
        NetMode::Exact => {
            let lambdas: Vec<f64> = (1..=n).rev().map(|k| k as f64 / (nf * nf)).collect();
            let gammas: Vec<f64> = (1..=n).rev().map(|k| k as f64 * r / nf).collect();
            (lambdas, gammas, 1.0 / (nf * nf), 1.0 / nf)
        }
        NetMode::Geometric => {
            let lambdas = log_grid(nf.powi(-3), 1.0 / nf, size_cap);
            let gammas = log_grid(r / nf, r, size_cap);
            let rho = max_gap(&lambdas);
            let delta = max_gap(&gammas) / r;
            (lambdas, gammas, rho, delta)
        }
    };
    Ok(ParameterNets {
        lambdas,
        gammas,
        mode,
        rho,
        delta,
    })
}

/// `k` log-spaced values from `hi` down to `lo`, endpoints exact.
fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| match i {
            0 => hi,
            _ if i == k - 1 => lo,
            _ => (b + (a - b) * i as f64 / (k - 1) as f64).exp(),
        })
        .collect()
}

/// Splits into the first `⌊n/2⌋ + 1` samples and the rest.
pub fn split_tv(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 4 {
        return Err(invalid(
            "n",
            format!("at least 4 samples required, got {n}"),
        ));
    }
    let l = n / 2 + 1;
    Ok((data.slice(0, l), data.slice(l, n)))
}

/// One candidate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TvRow {
    pub cell: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Mean clipped hinge loss on the cell's validation points; `None` when
    /// the cell has none.
    pub val_risk: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvReport {
    pub train_size: usize,
    pub validation_size: usize,
    pub mode: NetMode,
    pub rows: Vec<TvRow>,
    /// Selected `(λ, γ)` per cell.
    pub chosen: Vec<(f64, f64)>,
}

impl TvReport {
    /// CSV with columns `cell,lambda,gamma,val_risk,chosen`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,lambda,gamma,val_risk,chosen\n");
        for r in &self.rows {
            let risk = r.val_risk.map_or_else(|| "NA".to_string(), fmt_f64);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.cell,
                fmt_f64(r.lambda),
                fmt_f64(r.gamma),
                risk,
                u8::from(r.chosen)
            ));
        }
        out
    }
}

/// Mean clipped hinge loss of `model` on `data`.
pub fn validation_risk(model: &CellModel, data: &Dataset) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(x, y)| hinge(y, clip(model.predict_raw(x))))
        .sum();
    total / data.len() as f64
}

/// Picks the minimizer of `risk`; ties go to the smallest λ, then the largest γ.
fn select(cands: &[(f64, f64, f64)]) -> usize {
    let mut best = 0;
    for (i, c) in cands.iter().enumerate().skip(1) {
        let b = cands[best];
        let better = c.2 < b.2 || (c.2 == b.2 && (c.0 < b.0 || (c.0 == b.0 && c.1 > b.1)));
        if better {
            best = i;
        }
    }
    best
}

/// Trains every candidate on the training half of each cell and keeps the one
/// with the smallest validation risk.
pub fn train_tv(
    data: &Dataset,
    p: &Partition,
    nets: &ParameterNets,
    opts: &SolverOptions,
) -> Result<(LocalizedModel, TvReport)> {
    let (d1, d2) = split_tv(data)?;
    let l = d1.len();
    let m = p.num_cells();
    if nets.gammas.iter().any(|&g| g > p.radius()) {
        return Err(invalid(
            "nets",
            "kernel widths must not exceed the net radius",
        ));
    }
    // Per-cell training problems at one placeholder pair; candidates re-use the points.
    let base = cell_problems(
        &d1,
        p,
        &vec![nets.lambdas[0]; m],
        &vec![nets.gammas[0]; m],
        l,
    )?;
    let val_members = p.cell_indices(d2.iter().map(|(x, _)| x))?;
    let val_sets: Vec<Dataset> = val_members.iter().map(|idx| d2.select(idx)).collect();
    let pairs = nets.pairs();

    let jobs: Vec<(usize, usize)> = (0..m)
        .filter(|&j| !val_sets[j].is_empty())
        .flat_map(|j| (0..pairs.len()).map(move |k| (j, k)))
        .collect();
    let risks: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, k)| {
            let (lam, gam) = pairs[k];
            let prob = with_params(&base[j], lam, gam)?;
            let model = train_cell(&prob, opts)?;
            Ok(validation_risk(&model, &val_sets[j]))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(m * pairs.len());
    let mut chosen = Vec::with_capacity(m);
    let mut cursor = 0;
    for j in 0..m {
        if val_sets[j].is_empty() {
            let lam = *nets.lambdas.last().expect("nonempty");
            let gam = nets.gammas[0];
            for &(l_, g_) in &pairs {
                rows.push(TvRow {
                    cell: j,
                    lambda: l_,
                    gamma: g_,
                    val_risk: None,
                    chosen: l_ == lam && g_ == gam,
                });
            }
            chosen.push((lam, gam));
            continue;
        }
        let cands: Vec<(f64, f64, f64)> = pairs
            .iter()
            .zip(&risks[cursor..cursor + pairs.len()])
            .map(|(&(lam, gam), &r)| (lam, gam, r))
            .collect();
        cursor += pairs.len();
        let best = select(&cands);
        for (k, c) in cands.iter().enumerate() {
            rows.push(TvRow {
                cell: j,
                lambda: c.0,
                gamma: c.1,
                val_risk: Some(c.2),
                chosen: k == best,
            });
        }
        chosen.push((cands[best].0, cands[best].1));
    }

    let cells: Vec<CellModel> = (0..m)
        .into_par_iter()
        .map(|j| train_cell(&with_params(&base[j], chosen[j].0, chosen[j].1)?, opts))
        .collect::<Result<_>>()?;
    let model = LocalizedModel::from_cells(p.clone(), cells)?;
    let report = TvReport {
        train_size: l,
        validation_size: d2.len(),
        mode: nets.mode,
        rows,
        chosen,
    };
    Ok((model, report))
}

fn with_params(base: &CellProblem, lambda: f64, gamma: f64) -> Result<CellProblem> {
    let pts: Vec<f64> = (0..base.len())
        .flat_map(|i| base.point(i).to_vec())
        .collect();
    CellProblem::new(
        base.dim(),
        pts,
        base.labels().to_vec(),
        lambda,
        gamma,
        base.n_global(),
    )
}
