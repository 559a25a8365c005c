use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{MpcProblem, PlannedTrajectory, SolveStats};
use crate::error::{Error, Result};
use crate::optimization::{admm_two_block, AdmmConfig, AdmmState, BoxQpSolver, KktFactor};
use crate::plant::STATES_PER_NODE;
use crate::sls::{project_column, support_groups, ColumnStructure, SystemResponse, Terminal};

/// `(index into the stacked variable, column of Phi)` for each entry of one
/// row of one response block.
type RowEntries = Vec<(usize, usize)>;

#[derive(Debug)]
struct Column {
    index: usize,
    group: usize,
    offset: usize,
    rhs: Vec<f64>,
}

/// Localized MPC over system responses.
///
/// The decision variable stacks, column by column, the masked entries of
/// `Phi_x(2..T+1)` and `Phi_u(1..T)`. ADMM alternates between
///
/// * a row-wise step that handles the tracking cost and the input box for the
///   current `dx = x_now - x_ref` (each row only sees `Phi_row * dx`), and
/// * a column-wise projection onto the achievability constraints restricted
///   to the locality mask, one small KKT solve per column.
///
/// Column factorizations are computed once, at construction; consecutive
/// solves warm-start from the previous iterates.
#[derive(Debug)]
pub struct DlmpcSolver {
    horizon: usize,
    groups: Vec<(ColumnStructure, KktFactor)>,
    columns: Vec<Column>,
    total: usize,
    /// `[k-1][r]`, `k = 1..=T`.
    input_rows: Vec<Vec<RowEntries>>,
    /// `[k-2][r]`, `k = 2..=T+1`.
    state_rows: Vec<Vec<RowEntries>>,
    input_support: Vec<Vec<usize>>,
    state_support: Vec<Vec<usize>>,
    config: AdmmConfig,
    /// Last iterates with the penalty they ended on and the `|dx|^2` scale.
    warm: Option<(AdmmState, f64, f64)>,
}

impl DlmpcSolver {
    pub fn new(problem: &MpcProblem, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        let sys = &problem.system;
        let (n, p, t) = (sys.state_dim(), sys.input_dim(), problem.horizon);
        let groups = support_groups(sys, t, &problem.mask, Terminal::Free, true)?;

        let mut columns: Vec<Option<Column>> = (0..n).map(|_| None).collect();
        let mut offset = 0;
        for (gi, g) in groups.iter().enumerate() {
            for &c in &g.columns {
                let rhs = g.structure.rhs(sys, c).map_err(|detail| Error::InfeasibleColumn {
                    column: c,
                    node: c / STATES_PER_NODE,
                    detail,
                })?;
                columns[c] = Some(Column {
                    index: c,
                    group: gi,
                    offset,
                    rhs,
                });
                offset += g.structure.num_vars();
            }
        }
        let columns: Vec<Column> = columns.into_iter().map(|c| c.expect("every column has a group")).collect();

        let mut input_rows = vec![vec![Vec::new(); p]; t];
        let mut state_rows = vec![vec![Vec::new(); n]; t];
        for (c, col) in columns.iter().enumerate() {
            let s = &groups[col.group].structure;
            for k in 1..=t {
                let off = col.offset + s.u_offset(k);
                for (i, &r) in s.input_rows.iter().enumerate() {
                    input_rows[k - 1][r].push((off + i, c));
                }
                let off = col.offset + s.x_offset(k + 1);
                for (i, &r) in s.state_rows.iter().enumerate() {
                    state_rows[k - 1][r].push((off + i, c));
                }
            }
        }

        let factored = groups
            .into_par_iter()
            .map(|g| {
                let f = KktFactor::new(g.structure.identity_weight(), g.structure.eq.clone())?;
                Ok((g.structure, f))
            })
            .collect::<Result<Vec<_>>>()?;

        let support = |m: &DMatrix<bool>| -> Vec<Vec<usize>> {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).filter(|&c| m[(r, c)]).collect())
                .collect()
        };
        Ok(Self {
            horizon: t,
            groups: factored,
            columns,
            total: offset,
            input_rows,
            state_rows,
            input_support: support(&problem.mask.input_support),
            state_support: support(&problem.mask.state_support),
            config,
            warm: None,
        })
    }

    /// Number of stacked decision variables.
    pub fn num_vars(&self) -> usize {
        self.total
    }

    /// Drops the warm start.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(
        &mut self,
        problem: &MpcProblem,
        x_now: &DVector<f64>,
    ) -> Result<(PlannedTrajectory, SystemResponse, SolveStats)> {
        problem.check_state(x_now)?;
        let sys = &problem.system;
        let (n, p, t) = (sys.state_dim(), sys.input_dim(), self.horizon);
        if problem.horizon != t || self.columns.len() != n || self.input_rows[0].len() != p {
            return Err(Error::dim("problem does not match the localized solver"));
        }
        let raw_dx = x_now - problem.x_ref();
        let u_ref = problem.u_ref().clone();
        // Column c of Phi only reaches the cost through dx[c]. Iterating on
        // s_c * Phi_c with s_c ~ |dx[c]| makes every column equally visible to
        // the row step; the column projections are unaffected because a whole
        // column shares one scale. The row step then sees dx[c] / s_c.
        let peak = raw_dx.amax().powi(2);
        let col_scale = DVector::from_fn(n, |c, _| {
            if peak > 0.0 {
                (raw_dx[c].powi(2) + SCALE_FLOOR * peak).sqrt()
            } else {
                1.0
            }
        });
        let dx = raw_dx.component_div(&col_scale);
        let scale_vars = |v: &mut DVector<f64>, f: &dyn Fn(usize) -> f64| {
            for (c, col) in self.columns.iter().enumerate() {
                let len = self.groups[col.group].0.num_vars();
                v.rows_mut(col.offset, len).scale_mut(f(c));
            }
        };
        let energy = dx.norm_squared();
        // The cost scales with |dx|^2 while Phi is O(1): scale the penalty with
        // it. A warm start carries over the previous relative penalty.
        let base = if energy > 0.0 { energy } else { 1.0 };
        let (warm, rho) = match self.warm.take() {
            Some((mut state, old_rho, old_base)) => {
                let rho = old_rho / old_base * base;
                state.dual *= old_rho / rho;
                for v in [&mut state.primal, &mut state.consensus, &mut state.dual] {
                    scale_vars(v, &|c| col_scale[c]);
                }
                (Some(state), rho)
            }
            None => (None, self.config.rho * base),
        };
        let config = AdmmConfig {
            rho,
            // With dx = 0 the cost is constant and the problem is a plain
            // projection, which relaxation only slows down.
            relaxation: if energy > 0.0 { self.config.relaxation } else { 1.0 },
            ..self.config.clone()
        };

        let row_energy = |support: &[Vec<usize>]| -> Vec<f64> {
            support.iter().map(|s| s.iter().map(|&c| dx[c] * dx[c]).sum()).collect()
        };
        let nu = row_energy(&self.input_support);
        let nx = row_energy(&self.state_support);

        let active: Vec<usize> = (0..n).filter(|&r| nx[r] > 0.0).collect();
        let state_factor = |w: &DMatrix<f64>, rho: f64| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
            let m = DMatrix::from_fn(active.len(), active.len(), |a, b| {
                let (ra, rb) = (active[a], active[b]);
                2.0 * w[(ra, rb)] + if a == b { rho / nx[ra] } else { 0.0 }
            });
            m.cholesky()
                .ok_or_else(|| Error::Numerical("state row system is not positive definite".into()))
        };

        let r_diagonal = (0..p).all(|i| (0..p).all(|j| i == j || problem.r_weight[(i, j)] == 0.0));
        let active_u: Vec<usize> = (0..p).filter(|&r| nu[r] > 0.0).collect();
        let lower = DVector::from_fn(active_u.len(), |a, _| -problem.u_max - u_ref[active_u[a]]);
        let upper = DVector::from_fn(active_u.len(), |a, _| problem.u_max - u_ref[active_u[a]]);
        let input_qp = |rho: f64| -> Result<Option<BoxQpSolver>> {
            if r_diagonal || active_u.is_empty() {
                return Ok(None);
            }
            let h = DMatrix::from_fn(active_u.len(), active_u.len(), |a, b| {
                let (ra, rb) = (active_u[a], active_u[b]);
                2.0 * problem.r_weight[(ra, rb)] + if a == b { rho / nu[ra] } else { 0.0 }
            });
            let qp_config = AdmmConfig {
                eps_primal: 1e-10,
                eps_dual: 1e-10,
                ..AdmmConfig::default()
            };
            Ok(Some(BoxQpSolver::new(h, DMatrix::zeros(0, active_u.len()), qp_config)?))
        };

        let row_value = |v: &DVector<f64>, entries: &RowEntries| -> f64 {
            entries.iter().map(|&(i, c)| v[i] * dx[c]).sum()
        };
        let shift_row = |out: &mut DVector<f64>, entries: &RowEntries, amount: f64| {
            for &(i, c) in entries {
                out[i] += amount * dx[c];
            }
        };

        // Row factorizations depend on rho; rebuild them only when it changes.
        let mut factors = None;
        let mut prox = |v: &DVector<f64>, rho: f64| -> Result<DVector<f64>> {
            let stale = !matches!(&factors, Some((r, _, _, _)) if *r == rho);
            if stale {
                factors = Some((
                    rho,
                    state_factor(&problem.q_weight, rho)?,
                    state_factor(&problem.terminal_weight, rho)?,
                    input_qp(rho)?,
                ));
            }
            let (_, stage_chol, terminal_chol, input_qp) = factors.as_ref().unwrap();
            let mut out = v.clone();
            for rows in &self.input_rows {
                let c: Vec<f64> = active_u.iter().map(|&r| row_value(v, &rows[r])).collect();
                let y: Vec<f64> = match input_qp {
                    None => active_u
                        .iter()
                        .enumerate()
                        .map(|(a, &r)| {
                            let d = rho / nu[r];
                            (d * c[a] / (2.0 * problem.r_weight[(r, r)] + d)).clamp(lower[a], upper[a])
                        })
                        .collect(),
                    Some(qp) => {
                        let g = DVector::from_fn(active_u.len(), |a, _| -rho / nu[active_u[a]] * c[a]);
                        qp.solve(&g, &DVector::zeros(0), &lower, &upper, None)?.z.data.into()
                    }
                };
                for (a, &r) in active_u.iter().enumerate() {
                    shift_row(&mut out, &rows[r], (y[a] - c[a]) / nu[r]);
                }
            }
            for (k, rows) in self.state_rows.iter().enumerate() {
                let chol = if k + 1 == t { terminal_chol } else { stage_chol };
                let c = DVector::from_iterator(active.len(), active.iter().map(|&r| row_value(v, &rows[r])));
                let rhs = DVector::from_fn(active.len(), |a, _| rho / nx[active[a]] * c[a]);
                let y = chol.solve(&rhs);
                for (a, &r) in active.iter().enumerate() {
                    shift_row(&mut out, &rows[r], (y[a] - c[a]) / nx[r]);
                }
            }
            Ok(out)
        };

        let project = |m: &DVector<f64>| -> Result<DVector<f64>> {
            let parts = self
                .columns
                .par_iter()
                .map(|col| {
                    let (s, f) = &self.groups[col.group];
                    let target = m.rows(col.offset, s.num_vars()).into_owned();
                    let rhs: Vec<f64> = col.rhs.iter().map(|v| v * col_scale[col.index]).collect();
                    project_column(f, &target, &rhs)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = DVector::zeros(self.total);
            for (col, z) in self.columns.iter().zip(parts) {
                out.rows_mut(col.offset, z.len()).copy_from(&z);
            }
            Ok(out)
        };

        let mut outcome = admm_two_block(&mut prox, project, self.total, &config, warm)?;

        let phi = &outcome.state.primal;
        let inputs: Vec<DVector<f64>> = self
            .input_rows
            .iter()
            .map(|rows| DVector::from_fn(p, |r, _| row_value(phi, &rows[r]) + u_ref[r]))
            .collect();
        let plan = problem.trajectory_from_inputs(x_now, inputs);

        for v in [&mut outcome.state.primal, &mut outcome.state.consensus, &mut outcome.state.dual] {
            scale_vars(v, &|c| 1.0 / col_scale[c]);
        }
        let psi = outcome.consensus();
        let mut phi_x = vec![DMatrix::zeros(n, n); t + 1];
        phi_x[0] = DMatrix::identity(n, n);
        let mut phi_u = vec![DMatrix::zeros(p, n); t];
        for (c, col) in self.columns.iter().enumerate() {
            let s = &self.groups[col.group].0;
            s.scatter(psi.rows(col.offset, s.num_vars()).as_slice(), c, &mut phi_x, &mut phi_u);
        }
        phi_x.truncate(t);
        let stats = SolveStats {
            iterations: outcome.iterations,
            primal_residual: outcome.primal_residual,
            dual_residual: outcome.dual_residual,
        };
        self.warm = Some((outcome.state, outcome.rho, base));
        Ok((plan, SystemResponse { phi_x, phi_u }, stats))
    }
}

/// Relative floor of the column scaling, keeps columns with `dx[c] = 0` in play.
const SCALE_FLOOR: f64 = 1e-3;

/// One-shot localized solve. Returns the plan, the first `T` blocks of the
/// response it was built from, and the ADMM iteration count.
pub fn mpc_solve_localized(
    problem: &MpcProblem,
    x_now: &DVector<f64>,
    admm: &AdmmConfig,
) -> Result<(PlannedTrajectory, SystemResponse, usize)> {
    let (plan, resp, stats) = DlmpcSolver::new(problem, admm.clone())?.solve(problem, x_now)?;
    Ok((plan, resp, stats.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::mpc_solve_centralized;
    use crate::plant::{LocalityMask, PlantModel};

    fn tight() -> AdmmConfig {
        AdmmConfig {
            eps_primal: 1e-7,
            eps_dual: 1e-7,
            max_iters: 20000,
            ..AdmmConfig::default()
        }
    }

    fn problem(plant: &PlantModel, mask: LocalityMask, t: usize, u_max: f64) -> MpcProblem {
        let (n, p) = (plant.state_dim(), plant.input_dim());
        MpcProblem::new(plant, t, mask, DMatrix::identity(n, n), DMatrix::identity(p, p), u_max).unwrap()
    }

    #[test]
    fn full_mask_matches_centralized() {
        let plant = PlantModel::generate(2, 2, 3, 0.2, 1.0).unwrap();
        let (n, p) = (plant.state_dim(), plant.input_dim());
        let prob = problem(&plant, LocalityMask::full(n, p), 8, 0.4);
        let x0 = DVector::from_fn(n, |i, _| if i % 2 == 0 { 0.5 - 0.3 * i as f64 } else { 0.0 });
        let central = mpc_solve_centralized(&prob, &x0).unwrap();
        let (local, _, _) = mpc_solve_localized(&prob, &x0, &tight()).unwrap();
        let (a, b) = (prob.plan_cost(&central), prob.plan_cost(&local));
        assert!((a - b).abs() <= 1e-3 * a, "centralized {a}, localized {b}");
        assert!(local.inputs.iter().all(|u| u.amax() <= 0.4 + 1e-12));
        assert!(local.dynamics_residual(&prob.system) < 1e-12);
    }

    #[test]
    fn at_setpoint_holds_in_few_iterations() {
        let plant = PlantModel::generate(3, 3, 2, 0.2, 1.0).unwrap();
        let prob = problem(&plant, plant.locality_mask(2), 10, 1.0);
        let x0 = DVector::zeros(plant.state_dim());
        let (plan, _, iters) = mpc_solve_localized(&prob, &x0, &AdmmConfig::default()).unwrap();
        assert!(iters <= 5, "{iters}");
        assert!(plan.inputs.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn localized_response_respects_mask() {
        let plant = PlantModel::generate(3, 3, 8, 0.2, 1.0).unwrap();
        let mask = plant.locality_mask(1);
        let prob = problem(&plant, mask.clone(), 6, 0.5);
        let x0 = DVector::from_fn(plant.state_dim(), |i, _| ((i * 5) % 7) as f64 * 0.1 - 0.3);
        let (_, resp, _) = mpc_solve_localized(&prob, &x0, &AdmmConfig::default()).unwrap();
        assert_eq!(resp.support_violation(&mask.state_support, &mask.input_support), 0.0);
    }
}
