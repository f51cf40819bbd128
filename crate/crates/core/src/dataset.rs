//! Labeled samples in the closed unit ball, plus the dataset CSV format.

use crate::error::{invalid, parse_err, Error, Result};
use crate::{check_in_ball, fmt_f64};

/// Labeled points `x_i ∈ B^d`, `y_i ∈ {-1, +1}`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        Ok(Self {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
        })
    }

    /// Builds a dataset from flat coordinates; validates labels and the ball constraint.
    pub fn from_parts(dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let mut ds = Self::new(dim)?;
        if xs.len() != dim * ys.len() {
            return Err(Error::LengthMismatch {
                what: "coordinates",
                expected: dim * ys.len(),
                got: xs.len(),
            });
        }
        for (x, &y) in xs.chunks_exact(dim).zip(&ys) {
            ds.push(x, y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if y != 1.0 && y != -1.0 {
            return Err(Error::InvalidLabel(y));
        }
        check_in_ball(x)?;
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.xs.chunks_exact(self.dim).zip(self.ys.iter().copied())
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut xs = Vec::with_capacity(indices.len() * self.dim);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(self.point(i));
            ys.push(self.ys[i]);
        }
        Dataset {
            dim: self.dim,
            xs,
            ys,
        }
    }

    /// Contiguous sample range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            dim: self.dim,
            xs: self.xs[start * self.dim..end * self.dim].to_vec(),
            ys: self.ys[start..end].to_vec(),
        }
    }

    /// CSV with header `x1,...,xd,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        out.push_str(&header.join(","));
        out.push_str(",y\n");
        for (x, y) in self.iter() {
            for v in x {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(if y > 0.0 { "1" } else { "-1" });
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols.last() != Some(&"y") {
            return Err(parse_err(1, "header must be x1,...,xd,y"));
        }
        let dim = cols.len() - 1;
        for (k, c) in cols[..dim].iter().enumerate() {
            if *c != format!("x{}", k + 1) {
                return Err(parse_err(1, format!("unexpected column `{c}`")));
            }
        }
        let mut ds = Dataset::new(dim)?;
        let mut x = vec![0.0; dim];
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(parse_err(ln + 1, "wrong number of fields"));
            }
            for (xk, f) in x.iter_mut().zip(&fields[..dim]) {
                *xk = f
                    .parse()
                    .map_err(|_| parse_err(ln + 1, format!("bad number `{f}`")))?;
            }
            let y: f64 = fields[dim]
                .parse()
                .map_err(|_| parse_err(ln + 1, "bad label"))?;
            ds.push(&x, y)
                .map_err(|e| parse_err(ln + 1, e.to_string()))?;
        }
        Ok(ds)
    }
}
