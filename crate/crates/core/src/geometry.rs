//! r-net Voronoi partitions of the closed unit ball and near/far cell labelling.
//!
//! A partition is a list of centers `z_1..z_m` in the unit ball; cell `j` is the
//! set of ball points whose nearest center is `z_j` (lowest index on ties).
//! Cell indices are zero-based throughout the crate.

use crate::error::{invalid, parse_err, Error, Result};
use crate::rng;
use crate::{check_in_ball, fmt_f64, norm, sq_dist};

/// Centers of an r-net of the unit ball together with a bucket index for
/// nearest-center queries.
#[derive(Debug, Clone)]
pub struct Partition {
    dim: usize,
    radius: f64,
    centers: Vec<f64>,
    index: Option<GridIndex>,
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.radius.to_bits() == other.radius.to_bits()
            && self.centers.len() == other.centers.len()
            && self
                .centers
                .iter()
                .zip(&other.centers)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Uniform grid of buckets with width slightly above `r`; every ball point has
/// its nearest center inside the 3^d block of buckets around it.
#[derive(Debug, Clone)]
struct GridIndex {
    width: f64,
    per_axis: usize,
    buckets: Vec<Vec<u32>>,
}

const MAX_BUCKETS: usize = 4_000_000;

impl GridIndex {
    fn build(dim: usize, radius: f64, centers: &[f64]) -> Option<Self> {
        let width = radius * (1.0 + 1e-9);
        let per_axis = (2.0 * (1.0 + 1e-9) / width).ceil() as usize + 1;
        let total = per_axis.checked_pow(dim as u32)?;
        if total > MAX_BUCKETS {
            return None;
        }
        let mut buckets = vec![Vec::new(); total];
        let grid = Self {
            width,
            per_axis,
            buckets: Vec::new(),
        };
        for (j, z) in centers.chunks_exact(dim).enumerate() {
            buckets[grid.flat(&grid.coords(z))].push(j as u32);
        }
        Some(Self { buckets, ..grid })
    }

    fn coords(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .map(|&c| {
                let k = ((c + 1.0 + 1e-9) / self.width).floor();
                (k.max(0.0) as usize).min(self.per_axis - 1)
            })
            .collect()
    }

    fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.per_axis + c)
    }

    /// Calls `visit` for every center in the 3^d neighbourhood of `x`.
    fn for_each_near(&self, x: &[f64], mut visit: impl FnMut(usize)) {
        let base = self.coords(x);
        let d = base.len();
        let mut offs = vec![0usize; d];
        let mut cur = vec![0usize; d];
        'outer: loop {
            let mut valid = true;
            for k in 0..d {
                let c = base[k] as isize + offs[k] as isize - 1;
                if c < 0 || c >= self.per_axis as isize {
                    valid = false;
                    break;
                }
                cur[k] = c as usize;
            }
            if valid {
                for &j in &self.buckets[self.flat(&cur)] {
                    visit(j as usize);
                }
            }
            for k in 0..d {
                offs[k] += 1;
                if offs[k] < 3 {
                    continue 'outer;
                }
                offs[k] = 0;
            }
            break;
        }
    }
}

impl Partition {
    /// Assembles a partition from explicit centers (checked to lie in the ball).
    pub fn from_centers(dim: usize, radius: f64, centers: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        check_radius(radius)?;
        if centers.is_empty() {
            return Err(invalid("centers", "a partition needs at least one center"));
        }
        let mut flat = Vec::with_capacity(dim * centers.len());
        for z in &centers {
            if z.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: z.len(),
                });
            }
            check_in_ball(z)?;
            flat.extend_from_slice(z);
        }
        Ok(Self::from_flat(dim, radius, flat))
    }

    fn from_flat(dim: usize, radius: f64, centers: Vec<f64>) -> Self {
        let index = GridIndex::build(dim, radius, &centers);
        Self {
            dim,
            radius,
            centers,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn num_cells(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.centers.chunks_exact(self.dim)
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign_cell(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        check_in_ball(x)?;
        Ok(self.nearest(x))
    }

    pub(crate) fn nearest(&self, x: &[f64]) -> usize {
        if let Some(grid) = &self.index {
            let mut best = (f64::INFINITY, usize::MAX);
            grid.for_each_near(x, |j| {
                let dj = sq_dist(x, self.center(j));
                if dj < best.0 || (dj == best.0 && j < best.1) {
                    best = (dj, j);
                }
            });
            if best.1 != usize::MAX {
                return best.1;
            }
        }
        self.nearest_brute(x)
    }

    fn nearest_brute(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, z) in self.centers().enumerate() {
            let dj = sq_dist(x, z);
            if dj < best.0 {
                best = (dj, j);
            }
        }
        best.1
    }

    /// Cell membership of every sample, as index lists in sample order.
    pub fn cell_indices(
        &self,
        points: impl Iterator<Item = impl AsRef<[f64]>>,
    ) -> Result<Vec<Vec<usize>>> {
        let mut cells = vec![Vec::new(); self.num_cells()];
        for (i, x) in points.enumerate() {
            cells[self.assign_cell(x.as_ref())?].push(i);
        }
        Ok(cells)
    }

    /// Smallest pairwise center distance (infinite for a single cell).
    pub fn min_separation(&self) -> f64 {
        let m = self.num_cells();
        let mut best = f64::INFINITY;
        for i in 0..m {
            for j in 0..i {
                best = best.min(sq_dist(self.center(i), self.center(j)));
            }
        }
        best.sqrt()
    }

    /// Checks separation, probed covering, and the size bound.
    pub fn check_invariants(&self, probes: usize, seed: u64) -> InvariantReport {
        let min_sep = self.min_separation();
        let mut rng = rng::seeded(seed);
        let mut x = vec![0.0; self.dim];
        let mut max_cover: f64 = 0.0;
        for _ in 0..probes {
            rng::uniform_ball_into(&mut rng, &mut x);
            let j = self.nearest(&x);
            max_cover = max_cover.max(sq_dist(&x, self.center(j)).sqrt());
        }
        let m = self.num_cells() as f64;
        let size_bound = 16.0 * m.powf(-1.0 / self.dim as f64);
        InvariantReport {
            cells: self.num_cells(),
            min_separation: min_sep,
            max_cover_distance: max_cover,
            size_bound,
            separation_ok: min_sep >= self.radius / 2.0,
            covering_ok: max_cover <= self.radius,
            size_ok: self.radius <= size_bound,
        }
    }

    /// Plain-text form: `d r m`, then one center per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {}\n",
            self.dim,
            fmt_f64(self.radius),
            self.num_cells()
        );
        for z in self.centers() {
            let row: Vec<String> = z.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let p = Self::read_block(&mut lines, 0)?;
        if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
            return Err(parse_err(
                p.num_cells() + 2,
                format!("trailing content `{extra}`"),
            ));
        }
        Ok(p)
    }

    /// Reads one partition block from `lines`; `offset` is the line number of
    /// the block header minus one, for diagnostics.
    pub(crate) fn read_block<'a>(
        lines: &mut impl Iterator<Item = &'a str>,
        offset: usize,
    ) -> Result<Self> {
        let header = lines
            .next()
            .ok_or_else(|| parse_err(offset + 1, "missing partition header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(offset + 1, "partition header must be `d r m`"));
        }
        let dim: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(offset + 1, "bad d"))?;
        let radius: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(offset + 1, "bad r"))?;
        let m: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(offset + 1, "bad m"))?;
        if m == 0 || dim == 0 {
            return Err(parse_err(offset + 1, "d and m must be positive"));
        }
        let mut centers = Vec::with_capacity(m);
        for k in 0..m {
            let ln = offset + k + 2;
            let line = lines
                .next()
                .ok_or_else(|| parse_err(ln, "missing center line"))?;
            let z: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| parse_err(ln, format!("bad number `{t}`")))
                })
                .collect::<Result<_>>()?;
            centers.push(z);
        }
        Self::from_centers(dim, radius, centers).map_err(|e| parse_err(offset + 1, e.to_string()))
    }
}

/// Result of [`Partition::check_invariants`].
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub cells: usize,
    pub min_separation: f64,
    pub max_cover_distance: f64,
    pub size_bound: f64,
    pub separation_ok: bool,
    pub covering_ok: bool,
    pub size_ok: bool,
}

impl InvariantReport {
    pub fn all_ok(&self) -> bool {
        self.separation_ok && self.covering_ok && self.size_ok
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 2.0) {
        return Err(invalid(
            "r",
            format!("net radius must lie in (0, 2], got {r}"),
        ));
    }
    Ok(())
}

/// Builds an r-net of the unit ball by greedy farthest-point insertion.
///
/// Candidates are a shifted cubic lattice (shift drawn from `seed`) whose points
/// outside the ball are projected onto the sphere; its fill distance over the
/// ball is `h = r/4`. Starting from the origin, the farthest candidate is added
/// until every candidate is within `r - h` of a center. Hence every ball point
/// is within `r` of a center and centers are more than `3r/4` apart.
pub fn build_rnet(d: usize, r: f64, seed: u64) -> Result<Partition> {
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    check_radius(r)?;
    let fill = r / 4.0;
    let step = 2.0 * fill / (d as f64).sqrt();
    let reach = 1.0 + fill;
    let mut rng = rng::seeded(seed);
    let shift: Vec<f64> = (0..d)
        .map(|_| step * rand::Rng::random::<f64>(&mut rng))
        .collect();
    let lo = (-(reach + step) / step).floor() as i64;
    let hi = ((reach + step) / step).ceil() as i64;
    let per_axis = (hi - lo + 1) as usize;
    let total = per_axis
        .checked_pow(d as u32)
        .filter(|&t| t <= 50_000_000)
        .ok_or_else(|| invalid("r", format!("candidate lattice too large for d={d}, r={r}")))?;

    let mut pool: Vec<f64> = Vec::new();
    let mut p = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..d).rev() {
            let idx = (rem % per_axis) as i64 + lo;
            rem /= per_axis;
            p[k] = shift[k] + step * idx as f64;
        }
        let n = norm(&p);
        if n <= reach {
            if n > 1.0 {
                pool.extend(p.iter().map(|v| v / n));
            } else {
                pool.extend_from_slice(&p);
            }
        }
    }

    let target = (r - fill) * (r - fill);
    let origin = vec![0.0; d];
    let mut centers = origin.clone();
    let mut mind: Vec<f64> = pool.chunks_exact(d).map(|q| sq_dist(q, &origin)).collect();
    loop {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, &v) in mind.iter().enumerate() {
            if v > best.0 {
                best = (v, i);
            }
        }
        if mind.is_empty() || best.0 <= target {
            break;
        }
        let z = pool[best.1 * d..(best.1 + 1) * d].to_vec();
        for (q, md) in pool.chunks_exact(d).zip(mind.iter_mut()) {
            let v = sq_dist(q, &z);
            if v < *md {
                *md = v;
            }
        }
        centers.extend_from_slice(&z);
    }
    Ok(Partition::from_flat(d, r, centers))
}

/// Sign of `2η - 1` at a point: the Bayes side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Negative,
    Boundary,
    Positive,
}

/// Exact extrema of the boundary distance over an interval cell in d = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalExtrema {
    pub delta_min: f64,
    pub delta_max: f64,
    pub has_positive: bool,
    pub has_negative: bool,
}

/// What cell labelling needs to know about a distribution: the distance to
/// the decision boundary and which side of it a point lies on.
pub trait BoundaryGeometry: Sync {
    fn dim(&self) -> usize;
    fn boundary_distance(&self, x: &[f64]) -> f64;
    fn side(&self, x: &[f64]) -> Side;
    /// Closed-form extrema over `[lo, hi]` (only meaningful for d = 1).
    fn interval_extrema(&self, _lo: f64, _hi: f64) -> Option<IntervalExtrema> {
        None
    }
}

/// Near/far labelling of the cells of a partition for separation `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellClassification {
    pub separation: f64,
    pub near: Vec<usize>,
    pub far: Vec<usize>,
    /// Near cells meeting both classes.
    pub near_straddling: Vec<usize>,
    /// Near cells meeting at most one class.
    pub near_one_sided: Vec<usize>,
    pub delta_min: Vec<f64>,
    pub delta_max: Vec<f64>,
    pub exact: bool,
}

impl CellClassification {
    pub fn is_straddling(&self, j: usize) -> bool {
        self.near_straddling.binary_search(&j).is_ok()
    }

    /// Number of cells on which the boundary distance never exceeds `t`.
    pub fn count_within(&self, t: f64) -> usize {
        self.delta_max.iter().filter(|&&v| v <= t).count()
    }
}

/// Labels cells as near (`sup Δ ≤ 3s`) and far (`inf Δ ≥ s`) to the boundary.
///
/// For d = 1 with a distribution exposing interval extrema the labelling is
/// exact; otherwise each cell is probed with `probe_budget` quasi-random
/// points (plus its center), which approximates the extrema from inside.
pub fn classify_cells<G: BoundaryGeometry + ?Sized>(
    p: &Partition,
    dist: &G,
    s: f64,
    probe_budget: usize,
    seed: u64,
) -> Result<CellClassification> {
    if dist.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: dist.dim(),
        });
    }
    if !(s >= p.radius()) {
        return Err(invalid(
            "s",
            format!(
                "separation {s} must be at least the net radius {}",
                p.radius()
            ),
        ));
    }
    if probe_budget == 0 {
        return Err(invalid("probe_budget", "must be positive"));
    }
    let m = p.num_cells();
    let mut stats = Vec::with_capacity(m);
    let mut exact = false;
    if p.dim() == 1 {
        let intervals = interval_cells(p);
        if let Some(first) = dist.interval_extrema(intervals[0].0, intervals[0].1) {
            exact = true;
            stats.push(first);
            for &(lo, hi) in &intervals[1..] {
                stats.push(
                    dist.interval_extrema(lo, hi)
                        .expect("extrema offered for one interval"),
                );
            }
        }
    }
    if !exact {
        for j in 0..m {
            stats.push(probe_cell(
                p,
                dist,
                j,
                probe_budget,
                rng::derive(seed, j as u64),
            ));
        }
    }

    let mut out = CellClassification {
        separation: s,
        near: Vec::new(),
        far: Vec::new(),
        near_straddling: Vec::new(),
        near_one_sided: Vec::new(),
        delta_min: Vec::with_capacity(m),
        delta_max: Vec::with_capacity(m),
        exact,
    };
    for (j, st) in stats.iter().enumerate() {
        out.delta_min.push(st.delta_min);
        out.delta_max.push(st.delta_max);
        if st.delta_max <= 3.0 * s {
            out.near.push(j);
            if st.has_positive && st.has_negative {
                out.near_straddling.push(j);
            } else {
                out.near_one_sided.push(j);
            }
        }
        if st.delta_min >= s {
            out.far.push(j);
        }
    }
    Ok(out)
}

/// Interval cells `[lo_j, hi_j]` of a one-dimensional partition.
pub fn interval_cells(p: &Partition) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..p.num_cells()).collect();
    order.sort_by(|&a, &b| p.center(a)[0].total_cmp(&p.center(b)[0]).then(a.cmp(&b)));
    let mut cells = vec![(0.0, 0.0); p.num_cells()];
    for (k, &j) in order.iter().enumerate() {
        let z = p.center(j)[0];
        let lo = if k == 0 {
            -1.0
        } else {
            0.5 * (p.center(order[k - 1])[0] + z)
        };
        let hi = if k + 1 == order.len() {
            1.0
        } else {
            0.5 * (z + p.center(order[k + 1])[0])
        };
        cells[j] = (lo, hi);
    }
    cells
}

fn probe_cell<G: BoundaryGeometry + ?Sized>(
    p: &Partition,
    dist: &G,
    j: usize,
    budget: usize,
    seed: u64,
) -> IntervalExtrema {
    let d = p.dim();
    let z = p.center(j);
    let r = p.radius();
    let mut acc = IntervalExtrema {
        delta_min: f64::INFINITY,
        delta_max: 0.0,
        has_positive: false,
        has_negative: false,
    };
    let mut visit = |x: &[f64]| {
        let v = dist.boundary_distance(x);
        acc.delta_min = acc.delta_min.min(v);
        acc.delta_max = acc.delta_max.max(v);
        match dist.side(x) {
            Side::Positive => acc.has_positive = true,
            Side::Negative => acc.has_negative = true,
            Side::Boundary => {}
        }
    };
    visit(z);
    // Offset into the Halton sequence decorrelates neighbouring cells.
    let start = seed % 4096 + 1;
    let mut accepted = 0;
    let mut x = vec![0.0; d];
    let max_attempts = budget.saturating_mul(64);
    for attempt in 0..max_attempts as u64 {
        if accepted >= budget {
            break;
        }
        let u = rng::halton(start + attempt, d);
        for k in 0..d {
            x[k] = z[k] + r * (2.0 * u[k] - 1.0);
        }
        if sq_dist(&x, z) > r * r || norm(&x) > 1.0 || p.nearest(&x) != j {
            continue;
        }
        accepted += 1;
        visit(&x);
    }
    acc
}
