//! Dense-tableau simplex for `min c'x  s.t.  A x <= b,  0 <= x <= u`.
//!
//! Variables at their upper bound are handled by substitution
//! (`x = u - x'`), so every nonbasic column sits at zero in the working
//! space. Rows can be appended to a solved tableau; the basis stays dual
//! feasible, which lets the dual simplex resume from where it stopped.

pub const PIVOT_TOL: f64 = 1e-9;
pub const FEAS_TOL: f64 = 1e-9;
pub const DUAL_TOL: f64 = 1e-10;
/// Consecutive degenerate pivots before switching to Bland's rule.
pub const DEGENERATE_SWITCH: usize = 50;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, j: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(j);
            self.val.push(v);
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(j, v)| v * x[*j]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.val {
            *v *= s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct Simplex {
    n: usize,
    cost: Vec<f64>,
    upper: Vec<f64>,
    a_rows: Vec<SparseRow>,
    b: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    flipped: Vec<bool>,
    pub max_iterations: usize,
    iterations: usize,
    status: Option<LpStatus>,
}

impl Simplex {
    /// Problem with `cost.len()` structural variables and no rows yet.
    pub fn new(cost: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(cost.len(), upper.len());
        assert!(upper.iter().all(|u| *u >= 0.0), "upper bounds must be non-negative");
        let n = cost.len();
        let mut s = Self {
            n,
            d: cost.clone(),
            cost,
            upper,
            a_rows: Vec::new(),
            b: Vec::new(),
            rows: Vec::new(),
            rhs: Vec::new(),
            basis: Vec::new(),
            is_basic: vec![false; n],
            flipped: vec![false; n],
            max_iterations: 200_000,
            iterations: 0,
            status: None,
        };
        s.make_dual_feasible();
        s
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn var_count(&self) -> usize {
        self.n
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn cols(&self) -> usize {
        self.cost.len()
    }

    /// Appends `row . x <= b` with its own slack column.
    pub fn add_row(&mut self, row: &SparseRow, b: f64) {
        for r in &mut self.rows {
            r.push(0.0);
        }
        self.cost.push(0.0);
        self.upper.push(f64::INFINITY);
        self.d.push(0.0);
        self.is_basic.push(true);
        self.flipped.push(false);
        let cols = self.cols();
        let mut new = vec![0.0; cols];
        let mut rhs = b;
        for (&j, &v) in row.idx.iter().zip(&row.val) {
            assert!(j < self.n, "row references column {j} of {}", self.n);
            if self.flipped[j] {
                new[j] -= v;
                rhs -= v * self.upper[j];
            } else {
                new[j] += v;
            }
        }
        new[cols - 1] = 1.0;
        for (i, &bv) in self.basis.iter().enumerate() {
            let f = new[bv];
            if f != 0.0 {
                for (x, y) in new.iter_mut().zip(&self.rows[i]) {
                    *x -= f * y;
                }
                new[bv] = 0.0;
                rhs -= f * self.rhs[i];
            }
        }
        self.rows.push(new);
        self.rhs.push(rhs);
        self.basis.push(cols - 1);
        self.a_rows.push(row.clone());
        self.b.push(b);
        self.status = None;
    }

    /// Changes the right-hand side of row `r`, keeping the basis.
    pub fn set_rhs(&mut self, r: usize, b: f64) {
        let delta = b - self.b[r];
        if delta == 0.0 {
            return;
        }
        let col = self.n + r;
        for (row, rhs) in self.rows.iter().zip(&mut self.rhs) {
            *rhs += delta * row[col];
        }
        self.b[r] = b;
        self.status = None;
    }

    pub fn rhs(&self, r: usize) -> f64 {
        self.b[r]
    }

    /// Block-diagonal combination of independent problems. Structural
    /// variables and rows keep their block order, and each block's basis is
    /// carried over, so solved blocks give a solved combination.
    pub fn stack(blocks: &[&Simplex]) -> Simplex {
        let n: usize = blocks.iter().map(|b| b.n).sum();
        let m: usize = blocks.iter().map(|b| b.rows.len()).sum();
        let cols = n + m;
        let mut s = Simplex {
            n,
            cost: vec![0.0; cols],
            upper: vec![f64::INFINITY; cols],
            a_rows: Vec::with_capacity(m),
            b: Vec::with_capacity(m),
            rows: Vec::with_capacity(m),
            rhs: Vec::with_capacity(m),
            d: vec![0.0; cols],
            basis: Vec::with_capacity(m),
            is_basic: vec![false; cols],
            flipped: vec![false; cols],
            max_iterations: blocks.iter().map(|b| b.max_iterations).max().unwrap_or(200_000),
            iterations: 0,
            status: None,
        };
        let (mut var_off, mut row_off) = (0, 0);
        for blk in blocks {
            let map = |j: usize| if j < blk.n { var_off + j } else { n + row_off + (j - blk.n) };
            for j in 0..blk.cols() {
                let g = map(j);
                s.cost[g] = blk.cost[j];
                s.upper[g] = blk.upper[j];
                s.d[g] = blk.d[j];
                s.is_basic[g] = blk.is_basic[j];
                s.flipped[g] = blk.flipped[j];
            }
            for (i, row) in blk.rows.iter().enumerate() {
                let mut dense = vec![0.0; cols];
                for (j, a) in row.iter().enumerate() {
                    if *a != 0.0 {
                        dense[map(j)] = *a;
                    }
                }
                s.rows.push(dense);
                s.rhs.push(blk.rhs[i]);
                s.basis.push(map(blk.basis[i]));
                let ar = &blk.a_rows[i];
                s.a_rows.push(SparseRow {
                    idx: ar.idx.iter().map(|j| var_off + j).collect(),
                    val: ar.val.clone(),
                });
                s.b.push(blk.b[i]);
            }
            var_off += blk.n;
            row_off += blk.rows.len();
        }
        s
    }

    fn flip_nonbasic(&mut self, j: usize) {
        let u = self.upper[j];
        for (r, rhs) in self.rows.iter_mut().zip(&mut self.rhs) {
            let a = r[j];
            if a != 0.0 {
                *rhs -= a * u;
                r[j] = -a;
            }
        }
        self.d[j] = -self.d[j];
        self.flipped[j] = !self.flipped[j];
    }

    fn flip_basic(&mut self, r: usize) {
        let bv = self.basis[r];
        for (j, a) in self.rows[r].iter_mut().enumerate() {
            if j != bv {
                *a = -*a;
            }
        }
        self.rhs[r] = self.upper[bv] - self.rhs[r];
        self.flipped[bv] = !self.flipped[bv];
    }

    /// Bound-flips nonbasic columns with negative reduced cost and a finite
    /// upper bound. Returns true if the basis is then dual feasible.
    fn make_dual_feasible(&mut self) -> bool {
        let mut ok = true;
        for j in 0..self.cols() {
            if !self.is_basic[j] && self.d[j] < -DUAL_TOL {
                if self.upper[j].is_finite() {
                    self.flip_nonbasic(j);
                } else {
                    ok = false;
                }
            }
        }
        ok
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let p = self.rows[r][q];
        let inv = 1.0 / p;
        for a in &mut self.rows[r] {
            *a *= inv;
        }
        self.rhs[r] *= inv;
        self.rows[r][q] = 1.0;
        let nz: Vec<(usize, f64)> = self.rows[r]
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .collect();
        let prhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.rows[i];
            for &(j, a) in &nz {
                row[j] -= f * a;
            }
            row[q] = 0.0;
            self.rhs[i] -= f * prhs;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &(j, a) in &nz {
                self.d[j] -= f * a;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.iterations += 1;
    }

    fn infeasibility(&self, i: usize) -> f64 {
        let u = self.upper[self.basis[i]];
        let v = self.rhs[i];
        if v < -FEAS_TOL {
            -v
        } else if v > u + FEAS_TOL {
            v - u
        } else {
            0.0
        }
    }

    fn dual_simplex(&mut self) -> LpStatus {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return LpStatus::IterationLimit;
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let inf = self.infeasibility(i);
                if inf <= 0.0 {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((k, best)) => {
                        if bland {
                            self.basis[i] < self.basis[k]
                        } else {
                            inf > best
                        }
                    }
                };
                if better {
                    leave = Some((i, inf));
                }
            }
            let Some((r, _)) = leave else {
                return LpStatus::Optimal;
            };
            if self.rhs[r] > 0.0 {
                self.flip_basic(r);
            }
            let mut enter: Option<(usize, f64, f64)> = None;
            for (j, &a) in self.rows[r].iter().enumerate() {
                if self.is_basic[j] || a >= -PIVOT_TOL {
                    continue;
                }
                let ratio = self.d[j].max(0.0) / -a;
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => {
                        if bland {
                            ratio < br - 1e-12
                        } else {
                            ratio < br - 1e-12 || (ratio <= br + 1e-12 && -a > ba)
                        }
                    }
                };
                if better {
                    enter = Some((j, ratio, -a));
                }
            }
            let Some((q, ratio, _)) = enter else {
                return LpStatus::Infeasible;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, q);
        }
    }

    fn primal_simplex(&mut self) -> LpStatus {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return LpStatus::IterationLimit;
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter: Option<usize> = None;
            for j in 0..self.cols() {
                if self.is_basic[j] || self.d[j] >= -DUAL_TOL {
                    continue;
                }
                match enter {
                    None => enter = Some(j),
                    Some(k) if !bland && self.d[j] < self.d[k] => enter = Some(j),
                    _ => {}
                }
            }
            let Some(q) = enter else {
                return LpStatus::Optimal;
            };
            let mut theta = self.upper[q];
            let mut leave: Option<(usize, bool, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][q];
                let (lim, to_upper) = if a > PIVOT_TOL {
                    (self.rhs[i].max(0.0) / a, false)
                } else if a < -PIVOT_TOL && self.upper[self.basis[i]].is_finite() {
                    ((self.upper[self.basis[i]] - self.rhs[i]).max(0.0) / -a, true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => lim < theta,
                    Some((k, _, _)) => {
                        lim < theta - 1e-12
                            || (lim <= theta + 1e-12
                                && if bland { self.basis[i] < self.basis[k] } else { a.abs() > self.rows[k][q].abs() })
                    }
                };
                if better {
                    theta = lim;
                    leave = Some((i, to_upper, a));
                }
            }
            if theta.is_infinite() {
                return LpStatus::Unbounded;
            }
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            match leave {
                None => {
                    self.flip_nonbasic(q);
                    self.iterations += 1;
                }
                Some((r, to_upper, _)) => {
                    if to_upper {
                        self.flip_basic(r);
                    }
                    self.pivot(r, q);
                }
            }
        }
    }

    /// Working-space cost of column `j`.
    fn working_cost(&self, j: usize) -> f64 {
        if self.flipped[j] {
            -self.cost[j]
        } else {
            self.cost[j]
        }
    }

    fn recompute_reduced_costs(&mut self) {
        let mut d: Vec<f64> = (0..self.cols()).map(|j| self.working_cost(j)).collect();
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = self.working_cost(bv);
            if cb != 0.0 {
                for (x, a) in d.iter_mut().zip(&self.rows[i]) {
                    *x -= cb * a;
                }
            }
        }
        for &bv in &self.basis {
            d[bv] = 0.0;
        }
        self.d = d;
    }

    /// Solves from the current basis. A dual feasible basis goes straight to
    /// the dual simplex; otherwise a zero-cost dual phase finds a feasible
    /// basis and the primal simplex finishes.
    pub fn solve(&mut self) -> LpStatus {
        if let Some(s) = self.status {
            return s;
        }
        let status = if self.make_dual_feasible() {
            self.dual_simplex()
        } else {
            self.d.iter_mut().for_each(|x| *x = 0.0);
            match self.dual_simplex() {
                LpStatus::Optimal => {
                    self.recompute_reduced_costs();
                    self.primal_simplex()
                }
                other => {
                    self.recompute_reduced_costs();
                    other
                }
            }
        };
        self.status = Some(status);
        status
    }

    /// Structural solution in the original variables.
    pub fn x(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &bv) in self.basis.iter().enumerate() {
            if bv < self.n {
                x[bv] = self.rhs[i];
            }
        }
        for j in 0..self.n {
            if self.flipped[j] {
                x[j] = self.upper[j] - x[j];
            }
        }
        x
    }

    pub fn objective(&self) -> f64 {
        self.cost[..self.n].iter().zip(self.x()).map(|(c, x)| c * x).sum()
    }

    /// Row duals `y <= 0` of the current basis.
    pub fn duals(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|i| -self.d[self.n + i]).collect()
    }

    /// Lagrangian dual bound `b'y + sum_j u_j min(0, c_j - a_j'y)`.
    pub fn dual_objective(&self) -> f64 {
        let y = self.duals();
        let mut r = self.cost[..self.n].to_vec();
        for (row, yi) in self.a_rows.iter().zip(&y) {
            for (&j, &v) in row.idx.iter().zip(&row.val) {
                r[j] -= v * yi;
            }
        }
        let mut dual: f64 = self.b.iter().zip(&y).map(|(b, y)| b * y).sum();
        for (rj, u) in r.iter().zip(&self.upper) {
            if *rj < 0.0 {
                if u.is_finite() {
                    dual += rj * u;
                } else if *rj < -DUAL_TOL {
                    return f64::NEG_INFINITY;
                }
            }
        }
        dual
    }

    /// Primal minus dual objective, relative to `max(1, |primal|)`.
    pub fn relative_gap(&self) -> f64 {
        let p = self.objective();
        (p - self.dual_objective()).abs() / p.abs().max(1.0)
    }

    /// Largest violation of any row or bound by the current primal point.
    pub fn max_violation(&self) -> f64 {
        let x = self.x();
        let rows = self
            .a_rows
            .iter()
            .zip(&self.b)
            .map(|(r, b)| (r.dot(&x) - b).max(0.0));
        let bounds = x
            .iter()
            .zip(&self.upper)
            .map(|(x, u)| (-x).max(x - u).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }
}

/// One-shot problem description, mainly for tests and small instances.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
}

pub fn solve_lp(lp: &LinearProgram) -> LpSolution {
    let mut s = Simplex::new(lp.cost.clone(), lp.upper.clone());
    for (r, b) in lp.rows.iter().zip(&lp.rhs) {
        s.add_row(r, *b);
    }
    let status = s.solve();
    LpSolution {
        status,
        x: s.x(),
        objective: s.objective(),
        gap: if status == LpStatus::Optimal { s.relative_gap() } else { f64::NAN },
        iterations: s.iterations(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[(usize, f64)]) -> SparseRow {
        let mut r = SparseRow::new();
        for &(j, a) in v {
            r.push(j, a);
        }
        r
    }

    #[test]
    fn covering_problem() {
        // min x + 2y  s.t. x + y >= 3, x <= 2
        let lp = LinearProgram {
            cost: vec![1.0, 2.0],
            upper: vec![2.0, f64::INFINITY],
            rows: vec![row(&[(0, -1.0), (1, -1.0)])],
            rhs: vec![-3.0],
        };
        let s = solve_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
        assert!((s.objective - 4.0).abs() < 1e-9);
        assert!(s.gap < 1e-9);
    }

    #[test]
    fn negative_costs_use_primal_phase() {
        // max x + y  s.t. x + 2y <= 4, 3x + y <= 6
        let lp = LinearProgram {
            cost: vec![-1.0, -1.0],
            upper: vec![f64::INFINITY; 2],
            rows: vec![row(&[(0, 1.0), (1, 2.0)]), row(&[(0, 3.0), (1, 1.0)])],
            rhs: vec![4.0, 6.0],
        };
        let s = solve_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 2.8).abs() < 1e-9);
        assert!(s.gap < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let inf = LinearProgram {
            cost: vec![1.0],
            upper: vec![1.0],
            rows: vec![row(&[(0, -1.0)])],
            rhs: vec![-2.0],
        };
        assert_eq!(solve_lp(&inf).status, LpStatus::Infeasible);
        let unb = LinearProgram {
            cost: vec![-1.0, 0.0],
            upper: vec![f64::INFINITY; 2],
            rows: vec![row(&[(0, 1.0), (1, -1.0)])],
            rhs: vec![1.0],
        };
        assert_eq!(solve_lp(&unb).status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_cost_with_upper_bound_flips() {
        let lp = LinearProgram {
            cost: vec![-3.0, 1.0],
            upper: vec![2.0, 5.0],
            rows: vec![row(&[(0, 1.0), (1, -1.0)])],
            rhs: vec![1.0],
        };
        let s = solve_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
        assert!((s.objective + 5.0).abs() < 1e-9);
    }

    #[test]
    fn rows_added_after_solve_warm_start() {
        let mut s = Simplex::new(vec![1.0, 1.0], vec![10.0, 10.0]);
        s.add_row(&row(&[(0, -1.0), (1, -1.0)]), -4.0);
        assert_eq!(s.solve(), LpStatus::Optimal);
        assert!((s.objective() - 4.0).abs() < 1e-9);
        s.add_row(&row(&[(0, -1.0)]), -3.0);
        s.add_row(&row(&[(1, -1.0)]), -2.0);
        assert_eq!(s.solve(), LpStatus::Optimal);
        assert!((s.objective() - 5.0).abs() < 1e-9);
        assert!(s.max_violation() < 1e-9);
        assert!(s.relative_gap() < 1e-9);
        s.add_row(&row(&[(0, 1.0)]), 2.0);
        assert_eq!(s.solve(), LpStatus::Infeasible);
    }

    #[test]
    fn rhs_update_and_stacking() {
        let mut a = Simplex::new(vec![1.0, 2.0], vec![f64::INFINITY; 2]);
        a.add_row(&row(&[(0, -1.0), (1, -1.0)]), -3.0);
        assert_eq!(a.solve(), LpStatus::Optimal);
        let mut b = Simplex::new(vec![1.0], vec![4.0]);
        b.add_row(&row(&[(0, -1.0)]), -1.0);
        assert_eq!(b.solve(), LpStatus::Optimal);
        let mut s = Simplex::stack(&[&a, &b]);
        assert_eq!(s.solve(), LpStatus::Optimal);
        assert_eq!(s.iterations(), 0);
        assert!((s.objective() - 4.0).abs() < 1e-12);
        // couple x0 and x2: x0 + x2 <= 3
        s.add_row(&row(&[(0, 1.0), (2, 1.0)]), 3.0);
        assert_eq!(s.solve(), LpStatus::Optimal);
        assert!((s.objective() - 5.0).abs() < 1e-9);
        s.set_rhs(0, -5.0);
        assert_eq!(s.solve(), LpStatus::Optimal);
        assert!((s.objective() - 9.0).abs() < 1e-9);
        assert!(s.max_violation() < 1e-9);
        assert!(s.relative_gap() < 1e-9);
    }

    #[test]
    fn degenerate_cycle_example_terminates() {
        // Beale's cycling example
        let lp = LinearProgram {
            cost: vec![-0.75, 150.0, -0.02, 6.0],
            upper: vec![f64::INFINITY; 4],
            rows: vec![
                row(&[(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)]),
                row(&[(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)]),
                row(&[(2, 1.0)]),
            ],
            rhs: vec![0.0, 0.0, 1.0],
        };
        let s = solve_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-9);
    }
}
