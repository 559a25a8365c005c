use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::SystemResponse;
use crate::error::{Error, Result};
use crate::optimization::{KktFactor, SparseMatrix};
use crate::plant::{LinearSystem, LocalityMask, PlantModel, STATES_PER_NODE};

/// How the last response block is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Terminal {
    /// `A Phi_x(T) + B Phi_u(T) = 0`; there are `T` state blocks.
    Deadbeat,
    /// `Phi_x(T+1) = A Phi_x(T) + B Phi_u(T)` is kept as a variable; there
    /// are `T + 1` state blocks.
    Free,
}

/// Constraint structure of one column of the achievability recursion,
/// restricted to a fixed support. Columns with identical supports share it;
/// only the right-hand side depends on which column is being solved.
///
/// Variables are laid out stage by stage as
/// `[u_1, x_2, u_2, x_3, ..., u_T, (x_{T+1})]`, each block restricted to
/// its support rows.
#[derive(Debug, Clone)]
pub(crate) struct ColumnStructure {
    pub horizon: usize,
    pub terminal: Terminal,
    pub state_rows: Vec<usize>,
    pub input_rows: Vec<usize>,
    pub eq: SparseMatrix,
    /// `(constraint index, state row)` for rows of the first step, whose
    /// right-hand side is `A[row, column]`.
    first_step: Vec<(usize, usize)>,
    /// First-step state rows with no variable in reach: the column is only
    /// feasible if `A[row, column] = 0` for all of them.
    uncovered: Vec<usize>,
}

impl ColumnStructure {
    pub fn new(
        system: &LinearSystem,
        horizon: usize,
        state_rows: Vec<usize>,
        input_rows: Vec<usize>,
        terminal: Terminal,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        let n = system.state_dim();
        let mut pos = vec![None; n];
        for (i, &r) in state_rows.iter().enumerate() {
            pos[r] = Some(i);
        }
        let mut s = Self {
            horizon,
            terminal,
            state_rows,
            input_rows,
            eq: SparseMatrix::new(0, 0),
            first_step: Vec::new(),
            uncovered: Vec::new(),
        };
        let mut eq = SparseMatrix::new(0, s.num_vars());
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for k in 1..=horizon {
            let next_is_var = k < horizon || terminal == Terminal::Free;
            for r in 0..n {
                coeffs.clear();
                if next_is_var {
                    if let Some(p) = pos[r] {
                        coeffs.push((s.x_offset(k + 1) + p, 1.0));
                    }
                }
                if k >= 2 {
                    let off = s.x_offset(k);
                    for (i, &c) in s.state_rows.iter().enumerate() {
                        let a = system.a[(r, c)];
                        if a != 0.0 {
                            coeffs.push((off + i, -a));
                        }
                    }
                }
                let off = s.u_offset(k);
                for (i, &c) in s.input_rows.iter().enumerate() {
                    let b = system.b[(r, c)];
                    if b != 0.0 {
                        coeffs.push((off + i, -b));
                    }
                }
                if coeffs.is_empty() {
                    if k == 1 {
                        s.uncovered.push(r);
                    }
                    continue;
                }
                let row = eq.push_row();
                for &(c, v) in &coeffs {
                    eq.push(row, c, v);
                }
                if k == 1 {
                    s.first_step.push((row, r));
                }
            }
        }
        s.eq = eq;
        Ok(s)
    }

    pub fn stage_len(&self) -> usize {
        self.input_rows.len() + self.state_rows.len()
    }

    pub fn num_vars(&self) -> usize {
        let full = self.horizon * self.stage_len();
        match self.terminal {
            Terminal::Free => full,
            Terminal::Deadbeat => full - self.state_rows.len(),
        }
    }

    /// Offset of the `u_k` block, `k = 1..=T`.
    pub fn u_offset(&self, k: usize) -> usize {
        (k - 1) * self.stage_len()
    }

    /// Offset of the `x_k` block, `k >= 2`.
    pub fn x_offset(&self, k: usize) -> usize {
        (k - 2) * self.stage_len() + self.input_rows.len()
    }

    /// Number of state blocks carried by a response on this structure.
    pub fn state_blocks(&self) -> usize {
        match self.terminal {
            Terminal::Free => self.horizon + 1,
            Terminal::Deadbeat => self.horizon,
        }
    }

    /// Equality right-hand side for column `col`, checking the first-step rows
    /// that the support cannot reach.
    pub fn rhs(&self, system: &LinearSystem, col: usize) -> std::result::Result<Vec<f64>, String> {
        if !self.state_rows.contains(&col) {
            return Err(format!("state {col} is outside its own column support"));
        }
        if let Some(&r) = self.uncovered.iter().find(|&&r| system.a[(r, col)] != 0.0) {
            return Err(format!(
                "state {r} is driven by the disturbance in one step but lies outside the support"
            ));
        }
        let mut h = vec![0.0; self.eq.nrows()];
        for &(row, r) in &self.first_step {
            h[row] = system.a[(r, col)];
        }
        Ok(h)
    }

    /// Block-diagonal quadratic weight: `R[U,U]` on inputs, `Q[X,X]` on states
    /// and `terminal[X,X]` on `x_{T+1}` when it is a variable.
    pub fn weight(&self, q: &DMatrix<f64>, r: &DMatrix<f64>, terminal: &DMatrix<f64>) -> SparseMatrix {
        let mut w = SparseMatrix::new(self.num_vars(), self.num_vars());
        let mut put = |off: usize, rows: &[usize], m: &DMatrix<f64>| {
            for (a, &ra) in rows.iter().enumerate() {
                for (b, &rb) in rows.iter().enumerate() {
                    w.push(off + a, off + b, m[(ra, rb)]);
                }
            }
        };
        for k in 1..=self.horizon {
            put(self.u_offset(k), &self.input_rows, r);
            if k < self.horizon {
                put(self.x_offset(k + 1), &self.state_rows, q);
            }
        }
        if self.terminal == Terminal::Free {
            put(self.x_offset(self.horizon + 1), &self.state_rows, terminal);
        }
        w
    }

    pub fn identity_weight(&self) -> SparseMatrix {
        SparseMatrix::identity(self.num_vars())
    }

    /// Writes a column solution into `phi_x` (blocks `2..`) and `phi_u`.
    pub fn scatter(&self, z: &[f64], col: usize, phi_x: &mut [DMatrix<f64>], phi_u: &mut [DMatrix<f64>]) {
        for k in 1..=self.horizon {
            let off = self.u_offset(k);
            for (i, &r) in self.input_rows.iter().enumerate() {
                phi_u[k - 1][(r, col)] = z[off + i];
            }
        }
        for k in 2..=self.state_blocks() {
            let off = self.x_offset(k);
            for (i, &r) in self.state_rows.iter().enumerate() {
                phi_x[k - 1][(r, col)] = z[off + i];
            }
        }
    }
}

/// Columns that share a support, hence a constraint structure and a factor.
#[derive(Debug)]
pub(crate) struct SupportGroup {
    pub columns: Vec<usize>,
    pub structure: ColumnStructure,
}

/// Partitions the columns of `mask` by identical `(state, input)` support.
pub(crate) fn support_groups(
    system: &LinearSystem,
    horizon: usize,
    mask: &LocalityMask,
    terminal: Terminal,
    share: bool,
) -> Result<Vec<SupportGroup>> {
    let n = system.state_dim();
    let mut index: HashMap<(Vec<usize>, Vec<usize>), usize> = HashMap::new();
    let mut groups: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
    for col in 0..n {
        let key = (mask.state_rows(col), mask.input_rows(col));
        match index.get(&key).filter(|_| share) {
            Some(&g) => groups[g].2.push(col),
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key.0, key.1, vec![col]));
            }
        }
    }
    groups
        .into_par_iter()
        .map(|(x, u, columns)| {
            Ok(SupportGroup {
                columns,
                structure: ColumnStructure::new(system, horizon, x, u, terminal)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Factor once per distinct column support instead of once per column.
    pub share_factorizations: bool,
    /// Solve support groups on the rayon pool.
    pub parallel: bool,
    /// Used only to name the node of an infeasible column in errors.
    pub states_per_node: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            share_factorizations: true,
            parallel: true,
            states_per_node: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub response: SystemResponse,
    /// Time attributed to each column: its own solve plus an equal share of
    /// its group's structure and factorization.
    pub column_times: Vec<Duration>,
    /// Number of distinct factorizations performed.
    pub factorizations: usize,
    pub wall_time: Duration,
}

impl SynthesisReport {
    pub fn mean_column_time(&self) -> Duration {
        self.column_times.iter().sum::<Duration>() / self.column_times.len().max(1) as u32
    }
}

/// Localized H2 synthesis on a swing-equation plant (nodes own two states).
pub fn synthesize_h2(
    plant: &PlantModel,
    horizon: usize,
    mask: &LocalityMask,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
) -> Result<SystemResponse> {
    let opts = SynthesisOptions {
        states_per_node: STATES_PER_NODE,
        ..SynthesisOptions::default()
    };
    synthesize_h2_with(plant.system(), horizon, mask, q_weight, r_weight, &opts).map(|r| r.response)
}

/// Minimizes `sum_k ||Q^1/2 Phi_x(k)||_F^2 + ||R^1/2 Phi_u(k)||_F^2` over
/// finite impulse responses of length `horizon` supported on `mask`.
///
/// Every column of the response is an independent equality-constrained least
/// squares problem; columns are solved in parallel and columns with identical
/// supports reuse one KKT factorization.
pub fn synthesize_h2_with(
    system: &LinearSystem,
    horizon: usize,
    mask: &LocalityMask,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<SynthesisReport> {
    let (n, p) = (system.state_dim(), system.input_dim());
    if q_weight.shape() != (n, n) || r_weight.shape() != (p, p) {
        return Err(Error::dim(format!("weights must be {n}x{n} and {p}x{p}")));
    }
    if mask.state_support.shape() != (n, n) || mask.input_support.shape() != (p, n) {
        return Err(Error::dim("locality mask does not match the system"));
    }
    if opts.states_per_node == 0 {
        return Err(Error::param("states_per_node must be positive"));
    }
    let start = Instant::now();
    let groups = support_groups(system, horizon, mask, Terminal::Deadbeat, opts.share_factorizations)?;
    let spn = opts.states_per_node;

    let solve_group = |g: &SupportGroup| -> Result<Vec<(usize, Vec<f64>, Duration)>> {
        let t0 = Instant::now();
        let infeasible = |col: usize, detail: String| Error::InfeasibleColumn {
            column: col,
            node: col / spn,
            detail,
        };
        let s = &g.structure;
        // Check the cheap first-step condition before paying for a factorization.
        let rhs: Vec<Vec<f64>> = g
            .columns
            .iter()
            .map(|&c| s.rhs(system, c).map_err(|d| infeasible(c, d)))
            .collect::<Result<_>>()?;
        let factor = KktFactor::new(s.weight(q_weight, r_weight, q_weight), s.eq.clone())?;
        let shared = t0.elapsed() / g.columns.len() as u32;
        g.columns
            .iter()
            .zip(rhs)
            .map(|(&c, h)| {
                let t = Instant::now();
                let z = factor.solve(None, &h).map_err(|e| match e {
                    Error::Infeasible { block, residual } => {
                        infeasible(c, format!("{block} unsatisfiable (residual {residual:.2e})"))
                    }
                    other => other,
                })?;
                Ok((c, z.data.into(), shared + t.elapsed()))
            })
            .collect()
    };
    let solved: Vec<Vec<(usize, Vec<f64>, Duration)>> = if opts.parallel {
        groups.par_iter().map(solve_group).collect::<Result<_>>()?
    } else {
        groups.iter().map(solve_group).collect::<Result<_>>()?
    };

    let mut phi_x = vec![DMatrix::zeros(n, n); horizon];
    phi_x[0] = DMatrix::identity(n, n);
    let mut phi_u = vec![DMatrix::zeros(p, n); horizon];
    let mut column_times = vec![Duration::ZERO; n];
    for (g, cols) in groups.iter().zip(solved) {
        for (c, z, t) in cols {
            g.structure.scatter(&z, c, &mut phi_x, &mut phi_u);
            column_times[c] = t;
        }
    }
    Ok(SynthesisReport {
        response: SystemResponse { phi_x, phi_u },
        column_times,
        factorizations: groups.len(),
        wall_time: start.elapsed(),
    })
}

/// Projection of a column onto the achievability subspace restricted to a
/// support: `argmin ||z - target||^2  s.t.  E z = h`.
pub(crate) fn project_column(factor: &KktFactor, target: &DVector<f64>, rhs: &[f64]) -> Result<DVector<f64>> {
    let g: Vec<f64> = target.iter().map(|v| -v).collect();
    factor.solve(Some(&g), rhs)
}
