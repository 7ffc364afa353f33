//! Self-contained linear-program solver.
//!
//! Bounded-variable primal simplex, two phases with artificial variables,
//! Dantzig pricing with a Bland's-rule fallback after a degenerate-pivot
//! budget. The basis inverse is kept dense and refactorised periodically.
//! Everything iterates in fixed index order, so re-solving the identical
//! problem produces bit-identical output.

use thiserror::Error;

pub const FEAS_TOL: f64 = 1e-8;
pub const OPT_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-10;
const DEGENERATE_BUDGET: usize = 400;
const REFACTOR_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct RowDef {
    sense: RowSense,
    rhs: f64,
    entries: Vec<(usize, f64)>,
}

/// Sparse LP in triplet form with per-variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<RowDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("coefficient is not finite")]
    NonFiniteCoefficient,
    #[error("variable index {0} out of range")]
    BadVariable(usize),
    #[error("lower bound {lo} exceeds upper bound {hi}")]
    CrossedBounds { lo: f64, hi: f64 },
    #[error("problem is infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("operation requires an optimal solution")]
    NotOptimal,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> Result<VarId, LpError> {
        if !cost.is_finite() {
            return Err(LpError::NonFiniteCoefficient);
        }
        if lower > upper {
            return Err(LpError::CrossedBounds {
                lo: lower,
                hi: upper,
            });
        }
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(VarId(self.objective.len() - 1))
    }

    pub fn add_row(
        &mut self,
        sense: RowSense,
        rhs: f64,
        entries: &[(VarId, f64)],
    ) -> Result<RowId, LpError> {
        if !rhs.is_finite() {
            return Err(LpError::NonFiniteCoefficient);
        }
        let mut cleaned = Vec::with_capacity(entries.len());
        for &(VarId(j), a) in entries {
            if !a.is_finite() {
                return Err(LpError::NonFiniteCoefficient);
            }
            if j >= self.num_vars() {
                return Err(LpError::BadVariable(j));
            }
            if a != 0.0 {
                cleaned.push((j, a));
            }
        }
        cleaned.sort_by_key(|e| e.0);
        self.rows.push(RowDef {
            sense,
            rhs,
            entries: cleaned,
        });
        Ok(RowId(self.rows.len() - 1))
    }

    pub fn set_objective(&mut self, var: VarId, cost: f64) {
        self.objective[var.0] = cost;
    }

    pub fn bounds(&self, var: VarId) -> (f64, f64) {
        (self.lower[var.0], self.upper[var.0])
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) -> Result<(), LpError> {
        if lower > upper {
            return Err(LpError::CrossedBounds {
                lo: lower,
                hi: upper,
            });
        }
        self.lower[var.0] = lower;
        self.upper[var.0] = upper;
        Ok(())
    }

    pub fn row_sense(&self, row: RowId) -> RowSense {
        self.rows[row.0].sense
    }

    pub fn row_rhs(&self, row: RowId) -> f64 {
        self.rows[row.0].rhs
    }

    pub fn row_entries(&self, row: RowId) -> &[(usize, f64)] {
        &self.rows[row.0].entries
    }

    /// Row activity a_i . x for a given point.
    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].entries.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Fixed-column MPS text, for cross-checking against external solvers.
    pub fn to_mps(&self, name: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("NAME          {name}\n"));
        out.push_str("ROWS\n N  COST\n");
        for (i, r) in self.rows.iter().enumerate() {
            let tag = match r.sense {
                RowSense::Le => 'L',
                RowSense::Eq => 'E',
                RowSense::Ge => 'G',
            };
            out.push_str(&format!(" {tag}  R{i}\n"));
        }
        out.push_str("COLUMNS\n");
        for j in 0..self.num_vars() {
            if self.objective[j] != 0.0 {
                out.push_str(&format!(
                    "    X{:<9}{:<10}{:<15.9}\n",
                    j, "COST", self.objective[j]
                ));
            }
            for (i, r) in self.rows.iter().enumerate() {
                if let Ok(k) = r.entries.binary_search_by_key(&j, |e| e.0) {
                    out.push_str(&format!("    X{:<9}R{:<9}{:<15.9}\n", j, i, r.entries[k].1));
                }
            }
        }
        out.push_str("RHS\n");
        for (i, r) in self.rows.iter().enumerate() {
            if r.rhs != 0.0 {
                out.push_str(&format!("    RHS       R{:<9}{:<15.9}\n", i, r.rhs));
            }
        }
        out.push_str("BOUNDS\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) if lo == hi => {
                    out.push_str(&format!(" FX BND       X{:<9}{:<15.9}\n", j, lo));
                }
                (true, true) => {
                    if lo != 0.0 {
                        out.push_str(&format!(" LO BND       X{:<9}{:<15.9}\n", j, lo));
                    }
                    out.push_str(&format!(" UP BND       X{:<9}{:<15.9}\n", j, hi));
                }
                (true, false) => {
                    if lo != 0.0 {
                        out.push_str(&format!(" LO BND       X{:<9}{:<15.9}\n", j, lo));
                    }
                }
                (false, true) => {
                    out.push_str(&format!(" MI BND       X{:<9}\n", j));
                    out.push_str(&format!(" UP BND       X{:<9}{:<15.9}\n", j, hi));
                }
                (false, false) => {
                    out.push_str(&format!(" FR BND       X{:<9}\n", j));
                }
            }
        }
        out.push_str("ENDATA\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Numerical,
}

/// Primal values, row duals and reduced costs of a solve.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values.
    pub x: Vec<f64>,
    /// One dual per row; >= 0 on Ge rows, <= 0 on Le rows.
    pub duals: Vec<f64>,
    /// Reduced costs of structural variables.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    /// Columns in the final basis (structural then slack then artificial
    /// indices), a deterministic signature of the optimal basis.
    pub basis: Vec<usize>,
    pub max_primal_residual: f64,
    pub duality_gap: f64,
}

impl LpSolution {
    pub fn value(&self, var: VarId) -> f64 {
        self.x[var.0]
    }

    pub fn dual(&self, row: RowId) -> f64 {
        self.duals[row.0]
    }

    pub fn reduced_cost(&self, var: VarId) -> f64 {
        self.reduced_costs[var.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    FreeZero,
}

struct Tableau {
    ncols: usize,
    nrows: usize,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    // Column-major sparse matrix of the equality system A x + s (+ a) = b.
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    x: Vec<f64>,
    binv: Vec<f64>,
    pivots_since_refactor: usize,
}

impl Tableau {
    fn binv_at(&self, i: usize, k: usize) -> f64 {
        self.binv[i * self.nrows + k]
    }

    /// d = B^-1 * A_j.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.nrows;
        let mut d = vec![0.0; m];
        for &(i, a) in &self.cols[j] {
            if a == 0.0 {
                continue;
            }
            for r in 0..m {
                d[r] += self.binv_at(r, i) * a;
            }
        }
        d
    }

    /// y^T = c_B^T B^-1 for an arbitrary basic cost vector.
    fn btran(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.nrows;
        let mut y = vec![0.0; m];
        for (pos, &cbi) in cb.iter().enumerate() {
            if cbi == 0.0 {
                continue;
            }
            for k in 0..m {
                y[k] += cbi * self.binv_at(pos, k);
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], cost: &[f64]) -> f64 {
        let mut d = cost[j];
        for &(i, a) in &self.cols[j] {
            d -= y[i] * a;
        }
        d
    }

    fn recompute_basics(&mut self) {
        let m = self.nrows;
        // r = b - N x_N
        let mut r = self.rhs.clone();
        for j in 0..self.ncols {
            if matches!(self.state[j], ColState::Basic(_)) {
                continue;
            }
            let v = self.x[j];
            if v == 0.0 {
                continue;
            }
            for &(i, a) in &self.cols[j] {
                r[i] -= a * v;
            }
        }
        for pos in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += self.binv_at(pos, k) * r[k];
            }
            self.x[self.basis[pos]] = v;
        }
    }

    /// Rebuilds B^-1 from the basis columns by Gauss-Jordan elimination with
    /// partial pivoting. Returns false on a numerically singular basis.
    fn refactorize(&mut self) -> bool {
        let m = self.nrows;
        let mut mat = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[j] {
                mat[i * m + pos] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = mat[col * m + col].abs();
            for r in (col + 1)..m {
                let v = mat[r * m + col].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                return false;
            }
            if piv_row != col {
                for k in 0..m {
                    mat.swap(piv_row * m + k, col * m + k);
                    inv.swap(piv_row * m + k, col * m + k);
                }
                // Keep basis rows aligned: swapping rows of [M | I] changes
                // nothing logically since we invert the full matrix.
            }
            let p = mat[col * m + col];
            for k in 0..m {
                mat[col * m + k] /= p;
                inv[col * m + k] /= p;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = mat[r * m + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    mat[r * m + k] -= f * mat[col * m + k];
                    inv[r * m + k] -= f * inv[col * m + k];
                }
            }
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        true
    }

    fn pivot_update(&mut self, leave_pos: usize, d: &[f64]) {
        let m = self.nrows;
        let piv = d[leave_pos];
        for k in 0..m {
            self.binv[leave_pos * m + k] /= piv;
        }
        for r in 0..m {
            if r == leave_pos {
                continue;
            }
            let f = d[r];
            if f == 0.0 {
                continue;
            }
            for k in 0..m {
                let upd = f * self.binv[leave_pos * m + k];
                self.binv[r * m + k] -= upd;
            }
        }
        self.pivots_since_refactor += 1;
    }
}

struct PricingChoice {
    j: usize,
    /// +1.0 when the entering variable increases, -1.0 when it decreases.
    dir: f64,
    score: f64,
}

/// Runs bounded simplex on the tableau until optimal for the given cost
/// vector.
fn simplex_loop(t: &mut Tableau, cost: &[f64], max_iters: usize) -> Result<(), LpError> {
    let mut bland = false;
    let mut degenerate = 0usize;
    for _iter in 0..max_iters {
        if t.pivots_since_refactor >= REFACTOR_EVERY {
            if !t.refactorize() {
                return Err(LpError::Numerical(
                    "singular basis at refactorization".into(),
                ));
            }
            t.recompute_basics();
        }
        let cb: Vec<f64> = t.basis.iter().map(|&j| cost[j]).collect();
        let y = t.btran(&cb);

        // Pricing.
        let mut best: Option<PricingChoice> = None;
        for j in 0..t.ncols {
            let (dir, viol) = match t.state[j] {
                ColState::Basic(_) => continue,
                ColState::AtLower => {
                    let d = t.reduced_cost(j, &y, cost);
                    if d < -OPT_TOL {
                        (1.0, -d)
                    } else {
                        continue;
                    }
                }
                ColState::AtUpper => {
                    let d = t.reduced_cost(j, &y, cost);
                    if d > OPT_TOL {
                        (-1.0, d)
                    } else {
                        continue;
                    }
                }
                ColState::FreeZero => {
                    let d = t.reduced_cost(j, &y, cost);
                    if d < -OPT_TOL {
                        (1.0, -d)
                    } else if d > OPT_TOL {
                        (-1.0, d)
                    } else {
                        continue;
                    }
                }
            };
            if bland {
                best = Some(PricingChoice {
                    j,
                    dir,
                    score: viol,
                });
                break;
            }
            match &best {
                Some(b) if b.score >= viol => {}
                _ => {
                    best = Some(PricingChoice {
                        j,
                        dir,
                        score: viol,
                    })
                }
            }
        }
        let Some(choice) = best else {
            return Ok(()); // optimal for this cost vector
        };

        let j = choice.j;
        let dir = choice.dir;
        let d = t.ftran(j);

        // Ratio test. Ties take the larger pivot for stability, then the
        // lower basis position; a tie against the entering variable's own
        // bound span keeps the flip (no basis change).
        let span = t.upper[j] - t.lower[j];
        let mut limit = if span.is_finite() {
            span
        } else {
            f64::INFINITY
        };
        let mut leave: Option<usize> = None; // position in basis
        let mut leave_to_upper = false;
        let mut best_piv = 0.0;
        for (pos, &dv) in d.iter().enumerate() {
            let step = dir * dv;
            let bj = t.basis[pos];
            let xb = t.x[bj];
            let (ratio, to_upper) = if step > PIVOT_TOL {
                if t.lower[bj].is_finite() {
                    ((xb - t.lower[bj]) / step, false)
                } else {
                    continue;
                }
            } else if step < -PIVOT_TOL {
                if t.upper[bj].is_finite() {
                    ((t.upper[bj] - xb) / (-step), true)
                } else {
                    continue;
                }
            } else {
                continue;
            };
            let ratio = ratio.max(0.0);
            let improves = ratio < limit - 1e-10
                || (ratio < limit + 1e-10 && leave.is_some() && dv.abs() > best_piv + 1e-12);
            if improves {
                limit = limit.min(ratio);
                leave = Some(pos);
                leave_to_upper = to_upper;
                best_piv = dv.abs();
            }
        }

        if limit.is_infinite() {
            return Err(LpError::Unbounded);
        }
        if limit <= 1e-10 {
            degenerate += 1;
            if degenerate > DEGENERATE_BUDGET {
                bland = true;
            }
        } else {
            degenerate = 0;
            if bland {
                bland = false;
            }
        }

        match leave {
            None => {
                // Bound-to-bound flip of the entering variable.
                let old = t.x[j];
                let newv = old + dir * limit;
                t.x[j] = newv;
                for (pos, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        let bj = t.basis[pos];
                        t.x[bj] -= dir * limit * dv;
                    }
                }
                t.state[j] = if dir > 0.0 {
                    ColState::AtUpper
                } else {
                    ColState::AtLower
                };
            }
            Some(pos) => {
                let out = t.basis[pos];
                let enter_val = t.x[j] + dir * limit;
                for (p, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        let bj = t.basis[p];
                        t.x[bj] -= dir * limit * dv;
                    }
                }
                t.x[j] = enter_val;
                // Snap the leaving variable onto its bound exactly.
                t.x[out] = if leave_to_upper {
                    t.upper[out]
                } else {
                    t.lower[out]
                };
                t.state[out] = if leave_to_upper {
                    ColState::AtUpper
                } else {
                    ColState::AtLower
                };
                t.state[j] = ColState::Basic(pos);
                t.basis[pos] = j;
                t.pivot_update(pos, &d);
            }
        }
    }
    Err(LpError::Numerical("iteration limit exceeded".into()))
}

/// Solves the LP. Numerical failures surface as `LpStatus::Numerical`
/// with the message attached; infeasible and unbounded problems as their
/// own statuses.
pub fn solve(lp: &LinearProgram) -> LpSolution {
    match solve_inner(lp) {
        Ok(sol) => sol,
        Err(e) => {
            let (status, resid) = match e {
                LpError::Infeasible(r) => (LpStatus::Infeasible, r),
                LpError::Unbounded => (LpStatus::Unbounded, f64::NAN),
                _ => (LpStatus::Numerical, f64::NAN),
            };
            LpSolution {
                status,
                x: vec![0.0; lp.num_vars()],
                duals: vec![0.0; lp.num_rows()],
                reduced_costs: vec![0.0; lp.num_vars()],
                objective: f64::NAN,
                basis: Vec::new(),
                max_primal_residual: resid,
                duality_gap: f64::NAN,
            }
        }
    }
}

fn solve_inner(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.num_vars();
    let m = lp.num_rows();
    let ncols_max = n + 2 * m;

    let mut cost = vec![0.0; ncols_max];
    let mut lower = vec![0.0; ncols_max];
    let mut upper = vec![0.0; ncols_max];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols_max];
    cost[..n].copy_from_slice(&lp.objective);
    lower[..n].copy_from_slice(&lp.lower);
    upper[..n].copy_from_slice(&lp.upper);
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] {
            return Err(LpError::CrossedBounds {
                lo: lp.lower[j],
                hi: lp.upper[j],
            });
        }
    }
    let mut rhs = vec![0.0; m];
    for (i, r) in lp.rows.iter().enumerate() {
        rhs[i] = r.rhs;
        for &(j, a) in &r.entries {
            cols[j].push((i, a));
        }
        let s = n + i;
        cols[s].push((i, 1.0));
        match r.sense {
            RowSense::Le => {
                lower[s] = 0.0;
                upper[s] = f64::INFINITY;
            }
            RowSense::Ge => {
                lower[s] = f64::NEG_INFINITY;
                upper[s] = 0.0;
            }
            RowSense::Eq => {
                lower[s] = 0.0;
                upper[s] = 0.0;
            }
        }
    }

    // Nonbasic start: every structural variable at its bound nearest zero.
    let mut x = vec![0.0; ncols_max];
    let mut state = vec![ColState::FreeZero; ncols_max];
    for j in 0..n {
        let (lo, hi) = (lower[j], upper[j]);
        if lo.is_finite() && hi.is_finite() {
            if lo.abs() <= hi.abs() {
                x[j] = lo;
                state[j] = ColState::AtLower;
            } else {
                x[j] = hi;
                state[j] = ColState::AtUpper;
            }
        } else if lo.is_finite() {
            x[j] = lo;
            state[j] = ColState::AtLower;
        } else if hi.is_finite() {
            x[j] = hi;
            state[j] = ColState::AtUpper;
        } else {
            x[j] = 0.0;
            state[j] = ColState::FreeZero;
        }
    }

    // Residuals decide whether the slack can start basic inside its bounds
    // or an artificial is needed.
    let mut resid = rhs.clone();
    for j in 0..n {
        if x[j] != 0.0 {
            for &(i, a) in &cols[j] {
                resid[i] -= a * x[j];
            }
        }
    }
    let mut basis = Vec::with_capacity(m);
    let mut n_art = 0usize;
    let mut art_cols = Vec::new();
    for i in 0..m {
        let s = n + i;
        let fits = resid[i] >= lower[s] - FEAS_TOL && resid[i] <= upper[s] + FEAS_TOL;
        if fits {
            x[s] = resid[i];
            state[s] = ColState::Basic(i);
            basis.push(s);
        } else {
            // Slack rests at the bound nearest the residual; artificial
            // absorbs the remainder with a positive value.
            let sb = if resid[i] < lower[s] {
                lower[s]
            } else {
                upper[s]
            };
            x[s] = sb;
            state[s] = if sb == lower[s] {
                ColState::AtLower
            } else {
                ColState::AtUpper
            };
            let gap = resid[i] - sb;
            let a = n + m + n_art;
            n_art += 1;
            cols[a].push((i, if gap >= 0.0 { 1.0 } else { -1.0 }));
            lower[a] = 0.0;
            upper[a] = f64::INFINITY;
            x[a] = gap.abs();
            state[a] = ColState::Basic(i);
            basis.push(a);
            art_cols.push(a);
        }
    }
    let ncols = n + m + n_art;
    cols.truncate(ncols);
    cost.truncate(ncols);
    lower.truncate(ncols);
    upper.truncate(ncols);
    x.truncate(ncols);
    state.truncate(ncols);

    let mut t = Tableau {
        ncols,
        nrows: m,
        cost: cost.clone(),
        lower,
        upper,
        cols,
        rhs,
        basis,
        state,
        x,
        binv: {
            let mut id = vec![0.0; m * m];
            for i in 0..m {
                id[i * m + i] = 1.0;
            }
            id
        },
        pivots_since_refactor: 0,
    };
    if !t.refactorize() {
        return Err(LpError::Numerical("singular initial basis".into()));
    }
    t.recompute_basics();

    let max_iters = 200 * (m + ncols) + 20_000;

    // Phase 1: minimize the artificial mass.
    if n_art > 0 {
        let mut c1 = vec![0.0; ncols];
        for &a in &art_cols {
            c1[a] = 1.0;
        }
        simplex_loop(&mut t, &c1, max_iters)?;
        let infeas: f64 = art_cols.iter().map(|&a| t.x[a].max(0.0)).sum();
        let scale = 1.0 + t.rhs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if infeas > FEAS_TOL * scale {
            return Err(LpError::Infeasible(infeas));
        }
        // Pin every artificial at zero for phase 2; a basic artificial may
        // remain in the basis at value zero.
        for &a in &art_cols {
            t.lower[a] = 0.0;
            t.upper[a] = 0.0;
            if !matches!(t.state[a], ColState::Basic(_)) {
                t.x[a] = 0.0;
                t.state[a] = ColState::AtLower;
            }
        }
    }

    // Phase 2.
    simplex_loop(&mut t, &cost, max_iters)?;
    t.recompute_basics();

    // Extraction.
    let cb: Vec<f64> = t.basis.iter().map(|&j| t.cost[j]).collect();
    let y = t.btran(&cb);
    let mut reduced = vec![0.0; n];
    for (j, red) in reduced.iter_mut().enumerate() {
        *red = t.reduced_cost(j, &y, &cost);
    }
    let objective: f64 = (0..n).map(|j| lp.objective[j] * t.x[j]).sum();

    // Certify.
    let mut max_resid: f64 = 0.0;
    for (i, r) in lp.rows.iter().enumerate() {
        let act = lp.row_activity(i, &t.x[..n]);
        let viol = match r.sense {
            RowSense::Le => (act - r.rhs).max(0.0),
            RowSense::Ge => (r.rhs - act).max(0.0),
            RowSense::Eq => (act - r.rhs).abs(),
        };
        max_resid = max_resid.max(viol);
    }
    for j in 0..n {
        max_resid = max_resid
            .max(lp.lower[j] - t.x[j])
            .max(t.x[j] - lp.upper[j]);
    }
    let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0f64, f64::max);
    if max_resid > FEAS_TOL * scale * 10.0 {
        return Err(LpError::Numerical(format!(
            "primal residual {max_resid:.3e}"
        )));
    }

    // Dual objective for the gap certificate.
    let mut dual_obj: f64 = lp.rows.iter().enumerate().map(|(i, r)| y[i] * r.rhs).sum();
    for j in 0..n {
        match t.state[j] {
            ColState::AtLower => dual_obj += reduced[j] * lp.lower[j],
            ColState::AtUpper => dual_obj += reduced[j] * lp.upper[j],
            _ => {}
        }
    }
    let gap = (objective - dual_obj).abs();
    if gap > OPT_TOL * (1.0 + objective.abs()) * 100.0 {
        return Err(LpError::Numerical(format!("duality gap {gap:.3e}")));
    }

    let mut basis_sig = t.basis.clone();
    basis_sig.sort_unstable();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x: t.x[..n].to_vec(),
        duals: y,
        reduced_costs: reduced,
        objective,
        basis: basis_sig,
        max_primal_residual: max_resid,
        duality_gap: gap,
    })
}

/// Which way to resolve dual degeneracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualPreference {
    /// Lexicographically smallest selected dual vector (the default).
    Min,
    /// Lexicographically largest.
    Max,
}

/// Re-optimises the duals of `lp` over its optimal face, fixing the selected
/// rows one at a time in the given order per `pref`. Returns a full dual
/// vector consistent with complementary slackness against any optimal
/// primal point. Idempotent: the face collapses to a point on the selected
/// coordinates after the sweep.
pub fn resolve_degenerate_duals(
    lp: &LinearProgram,
    solution: &LpSolution,
    selected_rows: &[RowId],
    pref: DualPreference,
) -> Result<Vec<f64>, LpError> {
    if solution.status != LpStatus::Optimal {
        return Err(LpError::NotOptimal);
    }
    let n = lp.num_vars();
    let m = lp.num_rows();

    // Dual LP variables: y_i per row, then d+_j, d-_j per structural bound.
    let mut dual = LinearProgram::new();
    let mut yvars = Vec::with_capacity(m);
    for r in &lp.rows {
        let (lo, hi) = match r.sense {
            RowSense::Ge => (0.0, f64::INFINITY),
            RowSense::Le => (f64::NEG_INFINITY, 0.0),
            RowSense::Eq => (f64::NEG_INFINITY, f64::INFINITY),
        };
        yvars.push(dual.add_var(0.0, lo, hi)?);
    }
    let mut dplus = vec![None; n];
    let mut dminus = vec![None; n];
    for j in 0..n {
        if lp.lower[j].is_finite() {
            dplus[j] = Some(dual.add_var(0.0, 0.0, f64::INFINITY)?);
        }
        if lp.upper[j].is_finite() {
            dminus[j] = Some(dual.add_var(0.0, 0.0, f64::INFINITY)?);
        }
    }
    // Column feasibility: A^T y + d+ - d- = c.
    let mut col_entries: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.entries {
            col_entries[j].push((yvars[i], a));
        }
    }
    for j in 0..n {
        let mut ent = col_entries[j].clone();
        if let Some(v) = dplus[j] {
            ent.push((v, 1.0));
        }
        if let Some(v) = dminus[j] {
            ent.push((v, -1.0));
        }
        dual.add_row(RowSense::Eq, lp.objective[j], &ent)?;
    }
    // Strong duality pins the face: b^T y + l^T d+ - u^T d- = V*.
    let mut sd: Vec<(VarId, f64)> = Vec::new();
    for (i, r) in lp.rows.iter().enumerate() {
        if r.rhs != 0.0 {
            sd.push((yvars[i], r.rhs));
        }
    }
    for j in 0..n {
        if let Some(v) = dplus[j] {
            if lp.lower[j] != 0.0 {
                sd.push((v, lp.lower[j]));
            }
        }
        if let Some(v) = dminus[j] {
            if lp.upper[j] != 0.0 {
                sd.push((v, -lp.upper[j]));
            }
        }
    }
    dual.add_row(RowSense::Eq, solution.objective, &sd)?;

    let sign = match pref {
        DualPreference::Min => 1.0,
        DualPreference::Max => -1.0,
    };
    let mut last: Option<LpSolution> = None;
    for &RowId(k) in selected_rows {
        for v in 0..dual.num_vars() {
            dual.set_objective(VarId(v), 0.0);
        }
        dual.set_objective(yvars[k], sign);
        let sol = solve(&dual);
        if sol.status != LpStatus::Optimal {
            return Err(LpError::Numerical(format!(
                "dual-face resolution failed on row {k}: {:?}",
                sol.status
            )));
        }
        let yk = sol.value(yvars[k]);
        // Freeze this coordinate and move to the next.
        dual.set_bounds(yvars[k], yk, yk)?;
        last = Some(sol);
    }
    let sol = match last {
        Some(s) => s,
        None => {
            for v in 0..dual.num_vars() {
                dual.set_objective(VarId(v), 0.0);
            }
            let s = solve(&dual);
            if s.status != LpStatus::Optimal {
                return Err(LpError::Numerical(
                    "dual-face feasibility solve failed".into(),
                ));
            }
            s
        }
    };
    Ok(yvars.iter().map(|&v| sol.value(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(
        c: &[f64],
        bounds: &[(f64, f64)],
        rows: &[(RowSense, f64, Vec<(usize, f64)>)],
    ) -> LinearProgram {
        let mut lp = LinearProgram::new();
        for (j, &cj) in c.iter().enumerate() {
            lp.add_var(cj, bounds[j].0, bounds[j].1).unwrap();
        }
        for (sense, rhs, ent) in rows {
            let ent: Vec<(VarId, f64)> = ent.iter().map(|&(j, a)| (VarId(j), a)).collect();
            lp.add_row(*sense, *rhs, &ent).unwrap();
        }
        lp
    }

    #[test]
    fn min_x_geq_3() {
        let lp = simple(
            &[1.0],
            &[(0.0, f64::INFINITY)],
            &[(RowSense::Ge, 3.0, vec![(0, 1.0)])],
        );
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.duals[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_box() {
        // x <= 0 and x >= 1
        let lp = simple(
            &[1.0],
            &[(f64::NEG_INFINITY, f64::INFINITY)],
            &[
                (RowSense::Le, 0.0, vec![(0, 1.0)]),
                (RowSense::Ge, 1.0, vec![(0, 1.0)]),
            ],
        );
        assert_eq!(solve(&lp).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let lp = simple(
            &[-1.0],
            &[(0.0, f64::INFINITY)],
            &[(RowSense::Ge, 0.0, vec![(0, 1.0)])],
        );
        assert_eq!(solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn duals_signs_by_sense() {
        // min x + y s.t. x + y >= 2 (dual >= 0), x - y <= 5 (dual <= 0)
        let lp = simple(
            &[1.0, 1.0],
            &[(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            &[
                (RowSense::Ge, 2.0, vec![(0, 1.0), (1, 1.0)]),
                (RowSense::Le, 5.0, vec![(0, 1.0), (1, -1.0)]),
            ],
        );
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.duals[0] >= -1e-9);
        assert!(sol.duals[1] <= 1e-9);
        assert!((sol.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bounded_variable_flip() {
        // max 2x + y with x in [0, 4], y in [0, 3], x + y <= 5
        let lp = simple(
            &[-2.0, -1.0],
            &[(0.0, 4.0), (0.0, 3.0)],
            &[(RowSense::Le, 5.0, vec![(0, 1.0), (1, 1.0)])],
        );
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 4.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 9.0).abs() < 1e-9);
    }

    #[test]
    fn equality_with_negative_rhs_needs_artificial() {
        // min x1 + x2 s.t. x1 - x2 = -3, x free-ish
        let lp = simple(
            &[1.0, 1.0],
            &[(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            &[(RowSense::Eq, -3.0, vec![(0, 1.0), (1, -1.0)])],
        );
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[1] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn resolve_degenerate_duals_interval() {
        // min 3u + 1v s.t. u - v = 0, both nonnegative. The optimum is the
        // origin and the row dual is any value in [-1, 3]: the u column
        // forces rho <= 3, the v column forces rho >= -1.
        let lp = simple(
            &[3.0, 1.0],
            &[(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            &[(RowSense::Eq, 0.0, vec![(0, 1.0), (1, -1.0)])],
        );
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        let lo = resolve_degenerate_duals(&lp, &sol, &[RowId(0)], DualPreference::Min).unwrap();
        let hi = resolve_degenerate_duals(&lp, &sol, &[RowId(0)], DualPreference::Max).unwrap();
        assert!((lo[0] + 1.0).abs() < 1e-8, "lo = {}", lo[0]);
        assert!((hi[0] - 3.0).abs() < 1e-8, "hi = {}", hi[0]);
    }

    #[test]
    fn resolve_is_idempotent_when_unique() {
        let lp = simple(
            &[1.0],
            &[(0.0, f64::INFINITY)],
            &[(RowSense::Ge, 3.0, vec![(0, 1.0)])],
        );
        let sol = solve(&lp);
        let y = resolve_degenerate_duals(&lp, &sol, &[RowId(0)], DualPreference::Min).unwrap();
        assert!((y[0] - sol.duals[0]).abs() < 1e-8);
    }

    #[test]
    fn deterministic_resolve() {
        let lp = simple(
            &[1.0, 2.0, -1.0],
            &[(0.0, 10.0), (0.0, 10.0), (0.0, 10.0)],
            &[
                (RowSense::Le, 12.0, vec![(0, 1.0), (1, 2.0), (2, 1.0)]),
                (RowSense::Ge, 2.0, vec![(0, 1.0), (1, -1.0), (2, 2.0)]),
            ],
        );
        let a = solve(&lp);
        let b = solve(&lp);
        assert_eq!(a.x, b.x);
        assert_eq!(a.duals, b.duals);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.basis, b.basis);
    }

    #[test]
    fn mps_dump_has_sections() {
        let lp = simple(
            &[1.0, -2.0],
            &[(0.0, 5.0), (f64::NEG_INFINITY, f64::INFINITY)],
            &[(RowSense::Le, 4.0, vec![(0, 1.0), (1, 1.0)])],
        );
        let text = lp.to_mps("TEST");
        for section in [
            "NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA", " FR BND",
        ] {
            assert!(text.contains(section), "missing {section}");
        }
    }
}
