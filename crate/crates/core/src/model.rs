//! The localized decision function: each point is answered by the SVM of the
//! Voronoi cell it falls into.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{invalid, parse_err, Error, Result};
use crate::geometry::Partition;
use crate::solver::{clip, train_cell, CellModel, CellProblem, SolverOptions};

/// Anything that maps ball points to real scores.
pub trait DecisionFunction: Sync {
    fn dim(&self) -> usize;

    /// Unclipped score; errors for points outside the unit ball.
    fn predict_raw(&self, x: &[f64]) -> Result<f64>;

    fn predict_clipped(&self, x: &[f64]) -> Result<f64> {
        Ok(clip(self.predict_raw(x)?))
    }

    /// Sign of the raw score with `sign 0 = +1`.
    fn predict_sign(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.predict_raw(x)? >= 0.0 {
            1.0
        } else {
            -1.0
        })
    }
}

/// Whether per-cell training runs on the rayon pool or in a plain loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Parallel,
    Sequential,
}

/// Partition plus one trained SVM per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedModel {
    partition: Partition,
    cells: Vec<CellModel>,
}

impl LocalizedModel {
    /// Assembles a model from already-trained cells.
    pub fn from_cells(partition: Partition, cells: Vec<CellModel>) -> Result<Self> {
        if cells.len() != partition.num_cells() {
            return Err(Error::LengthMismatch {
                what: "cell models",
                expected: partition.num_cells(),
                got: cells.len(),
            });
        }
        for c in &cells {
            check_gamma_admissible(c.gamma(), partition.radius())?;
            if c.dim() != partition.dim() {
                return Err(Error::DimensionMismatch {
                    expected: partition.dim(),
                    got: c.dim(),
                });
            }
        }
        Ok(Self { partition, cells })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn cells(&self) -> &[CellModel] {
        &self.cells
    }

    pub fn cell(&self, j: usize) -> &CellModel {
        &self.cells[j]
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.cells.iter().map(CellModel::lambda).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.cells.iter().map(CellModel::gamma).collect()
    }

    /// Raw scores for many points, evaluated on the rayon pool.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        points.par_iter().map(|x| self.predict_raw(x)).collect()
    }

    /// Partition block followed by one block per cell.
    pub fn to_text(&self) -> String {
        let mut out = self.partition.to_text();
        for (j, c) in self.cells.iter().enumerate() {
            c.write_block(j, &mut out);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = text.lines();
        let partition = Partition::read_block(&mut raw, 0)?;
        let consumed = partition.num_cells() + 1;
        let mut lines = text
            .lines()
            .enumerate()
            .skip(consumed)
            .map(|(i, l)| (i + 1, l));
        let mut cells = Vec::with_capacity(partition.num_cells());
        for expected in 0..partition.num_cells() {
            let (j, c) = CellModel::read_block(partition.dim(), &mut lines)?;
            if j != expected {
                return Err(parse_err(
                    0,
                    format!("cell block {j} out of order, expected {expected}"),
                ));
            }
            cells.push(c);
        }
        if let Some((ln, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(parse_err(ln, format!("trailing content `{l}`")));
        }
        Self::from_cells(partition, cells).map_err(|e| parse_err(0, e.to_string()))
    }
}

impl DecisionFunction for LocalizedModel {
    fn dim(&self) -> usize {
        self.partition.dim()
    }

    fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        let j = self.partition.assign_cell(x)?;
        Ok(self.cells[j].predict_raw(x))
    }
}

fn check_gamma_admissible(gamma: f64, r: f64) -> Result<()> {
    if gamma > r {
        return Err(invalid(
            "gamma",
            format!("kernel width {gamma} exceeds the net radius {r}"),
        ));
    }
    Ok(())
}

/// Trains one SVM per cell with the global sample size `n = |data|`.
pub fn train_localized(
    data: &Dataset,
    p: &Partition,
    lambdas: &[f64],
    gammas: &[f64],
    opts: &SolverOptions,
) -> Result<LocalizedModel> {
    train_localized_with(data, p, lambdas, gammas, opts, Schedule::Parallel)
}

pub fn train_localized_with(
    data: &Dataset,
    p: &Partition,
    lambdas: &[f64],
    gammas: &[f64],
    opts: &SolverOptions,
    schedule: Schedule,
) -> Result<LocalizedModel> {
    let problems = cell_problems(data, p, lambdas, gammas, data.len())?;
    let cells: Result<Vec<CellModel>> = match schedule {
        Schedule::Parallel => problems.par_iter().map(|pr| train_cell(pr, opts)).collect(),
        Schedule::Sequential => problems.iter().map(|pr| train_cell(pr, opts)).collect(),
    };
    LocalizedModel::from_cells(p.clone(), cells?)
}

/// Splits `data` into per-cell problems normalized by `n_global`.
pub(crate) fn cell_problems(
    data: &Dataset,
    p: &Partition,
    lambdas: &[f64],
    gammas: &[f64],
    n_global: usize,
) -> Result<Vec<CellProblem>> {
    let m = p.num_cells();
    for (what, v) in [("lambdas", lambdas), ("gammas", gammas)] {
        if v.len() != m {
            return Err(Error::LengthMismatch {
                what,
                expected: m,
                got: v.len(),
            });
        }
    }
    if data.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: data.dim(),
        });
    }
    for &g in gammas {
        check_gamma_admissible(g, p.radius())?;
    }
    let members = p.cell_indices(data.iter().map(|(x, _)| x))?;
    members
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            CellProblem::from_dataset(&data.select(idx), lambdas[j], gammas[j], n_global)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_rnet;

    fn two_cells() -> Partition {
        Partition::from_centers(1, 1.0, vec![vec![-0.5], vec![0.5]]).unwrap()
    }

    #[test]
    fn single_cell_equals_global_svm() {
        let data =
            Dataset::from_parts(1, vec![-0.5, -0.1, 0.2, 0.7], vec![-1.0, 1.0, 1.0, 1.0]).unwrap();
        let p = build_rnet(1, 2.0, 0).unwrap();
        let opts = SolverOptions::default();
        let m = train_localized(&data, &p, &[0.1], &[0.4], &opts).unwrap();
        let global = train_cell(
            &CellProblem::from_dataset(&data, 0.1, 0.4, 4).unwrap(),
            &opts,
        )
        .unwrap();
        assert_eq!(m.cell(0), &global);
        assert_eq!(m.predict_raw(&[0.3]).unwrap(), global.predict_raw(&[0.3]));
    }

    #[test]
    fn cells_are_trained_locally() {
        let p = two_cells();
        let data =
            Dataset::from_parts(1, vec![-0.6, -0.4, 0.4, 0.6], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let opts = SolverOptions::default();
        let full = train_localized(&data, &p, &[0.1, 0.1], &[0.3, 0.3], &opts).unwrap();
        // change the right cell's points but keep n
        let other = Dataset::from_parts(1, vec![-0.6, -0.4, 0.9, 0.1], vec![-1.0, 1.0, -1.0, -1.0])
            .unwrap();
        let changed = train_localized(&other, &p, &[0.1, 0.1], &[0.3, 0.3], &opts).unwrap();
        assert_eq!(full.cell(0), changed.cell(0));
        assert_ne!(full.cell(1), changed.cell(1));
    }

    #[test]
    fn empty_data_predicts_plus_one() {
        let p = two_cells();
        let m = train_localized(
            &Dataset::new(1).unwrap(),
            &p,
            &[0.1, 0.1],
            &[0.5, 0.5],
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(m.predict_raw(&[0.2]).unwrap(), 0.0);
        assert_eq!(m.predict_sign(&[0.2]).unwrap(), 1.0);
        assert!(m.predict_raw(&[1.5]).is_err());
    }

    #[test]
    fn rejects_wide_kernels_and_length_mismatch() {
        let p = two_cells();
        let d = Dataset::new(1).unwrap();
        let o = SolverOptions::default();
        assert!(train_localized(&d, &p, &[0.1, 0.1], &[0.5, 1.5], &o).is_err());
        assert!(train_localized(&d, &p, &[0.1], &[0.5, 0.5], &o).is_err());
    }

    #[test]
    fn schedules_agree_bitwise() {
        let p = build_rnet(2, 0.5, 1).unwrap();
        let mut rng = crate::rng::seeded(3);
        let mut data = Dataset::new(2).unwrap();
        for i in 0..300 {
            let x = crate::rng::uniform_ball(&mut rng, 2);
            data.push(
                &x,
                if (x[0] + 0.1 * (i % 3) as f64) > 0.0 {
                    1.0
                } else {
                    -1.0
                },
            )
            .unwrap();
        }
        let m = p.num_cells();
        let lam = vec![1e-3; m];
        let gam = vec![0.3; m];
        let o = SolverOptions::default();
        let a = train_localized_with(&data, &p, &lam, &gam, &o, Schedule::Parallel).unwrap();
        let b = train_localized_with(&data, &p, &lam, &gam, &o, Schedule::Sequential).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let back = LocalizedModel::from_text(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_text(), a.to_text());
    }
}
