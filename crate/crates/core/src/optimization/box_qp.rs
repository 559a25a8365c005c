//! Box- and equality-constrained convex QPs:
//!
//! ```text
//! min 1/2 z'Hz + g'z   s.t.  Ez = h,  lower <= z <= upper
//! ```
//!
//! Operator-splitting ADMM on the stacked constraint `[E; I] z`, followed by an
//! active-set polish that solves the reduced KKT system exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kkt::KktFactor;
use super::sparse::SparseMatrix;
use super::AdmmConfig;
use crate::error::{Error, Result};

const SIGMA: f64 = 1e-6;
const EQ_RHO_SCALE: f64 = 1e3;
const RELAXATION: f64 = 1.6;
const CHECK_EVERY: usize = 5;
const POLISH_ROUNDS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Box-only problem.
    pub fn boxed(hessian: DMatrix<f64>, linear: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            lower,
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n)
            || self.eq_matrix.ncols() != n
            || self.eq_matrix.nrows() != self.eq_rhs.len()
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(Error::dim("QP data has inconsistent dimensions"));
        }
        let scale = self.hessian.amax().max(1.0);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-10 * scale {
            return Err(Error::param("QP Hessian is not symmetric"));
        }
        let shifted = &self.hessian + DMatrix::identity(n, n) * (1e-10 * scale);
        if Cholesky::new(shifted).is_none() {
            return Err(Error::param("QP Hessian is not positive semidefinite"));
        }
        if let Some(i) = (0..n).find(|&i| self.lower[i] > self.upper[i]) {
            return Err(Error::Infeasible {
                block: format!("bound {i}"),
                residual: self.lower[i] - self.upper[i],
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub z: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// True when the active-set polish produced an exact KKT point.
    pub polished: bool,
    /// Dual variables of the stacked constraints `[E; I]`, usable for warm starts.
    pub duals: DVector<f64>,
}

/// A factored QP solver: the Hessian and equality matrix are fixed, while the
/// linear term, right-hand sides and bounds may change between solves.
#[derive(Debug, Clone)]
pub struct BoxQpSolver {
    hessian: DMatrix<f64>,
    eq: DMatrix<f64>,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
    config: AdmmConfig,
}

impl BoxQpSolver {
    pub fn new(hessian: DMatrix<f64>, eq: DMatrix<f64>, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        let n = hessian.nrows();
        if !hessian.is_square() || eq.ncols() != n {
            return Err(Error::dim("QP Hessian/constraint shapes disagree"));
        }
        let rho = config.rho;
        let mut m = &hessian + DMatrix::identity(n, n) * (SIGMA + rho);
        if eq.nrows() > 0 {
            m += eq.transpose() * &eq * (rho * EQ_RHO_SCALE);
        }
        let chol = Cholesky::new(m).ok_or_else(|| Error::param("QP Hessian is not positive semidefinite"))?;
        Ok(Self {
            hessian,
            eq,
            rho,
            chol,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn solve(
        &self,
        linear: &DVector<f64>,
        eq_rhs: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        warm: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<BoxQpSolution> {
        let n = self.dim();
        let me = self.eq.nrows();
        let m = me + n;
        if linear.len() != n || eq_rhs.len() != me || lower.len() != n || upper.len() != n {
            return Err(Error::dim("QP vectors do not match the factored problem"));
        }
        if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
            return Err(Error::Infeasible {
                block: format!("bound {i}"),
                residual: lower[i] - upper[i],
            });
        }
        let lo = DVector::from_iterator(m, eq_rhs.iter().chain(lower.iter()).copied());
        let hi = DVector::from_iterator(m, eq_rhs.iter().chain(upper.iter()).copied());
        let rho_vec = DVector::from_iterator(
            m,
            (0..m).map(|i| if i < me { self.rho * EQ_RHO_SCALE } else { self.rho }),
        );
        let stack = |x: &DVector<f64>| -> DVector<f64> {
            let ex = &self.eq * x;
            DVector::from_iterator(m, ex.iter().chain(x.iter()).copied())
        };
        let stack_t = |y: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::from_column_slice(&y.as_slice()[me..]);
            if me > 0 {
                out += self.eq.transpose() * y.rows(0, me);
            }
            out
        };
        let project = |v: &DVector<f64>| DVector::from_fn(m, |i, _| v[i].clamp(lo[i], hi[i]));

        let (mut x, mut y) = match warm {
            Some((x0, y0)) if x0.len() == n && y0.len() == m => (x0.clone(), y0.clone()),
            _ => (DVector::zeros(n), DVector::zeros(m)),
        };
        let mut z = project(&stack(&x));
        let mut iterations = 0;
        let mut prim = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut history = Vec::new();
        let mut converged = false;

        while iterations < self.config.max_iters {
            iterations += 1;
            let rz = z.component_mul(&rho_vec) - &y;
            let rhs = &x * SIGMA - linear + stack_t(&rz);
            let x_tilde = self.chol.solve(&rhs);
            let z_tilde = stack(&x_tilde);
            x = &x_tilde * RELAXATION + &x * (1.0 - RELAXATION);
            let z_relaxed = &z_tilde * RELAXATION + &z * (1.0 - RELAXATION);
            let y_prev = y.clone();
            let z_new = project(&(&z_relaxed + y.component_div(&rho_vec)));
            y += (&z_relaxed - &z_new).component_mul(&rho_vec);
            z = z_new;

            if iterations % CHECK_EVERY == 0 || iterations == self.config.max_iters {
                prim = (stack(&x) - &z).amax();
                dual = (&self.hessian * &x + linear + stack_t(&y)).amax();
                history.push((prim, dual));
                if prim <= self.config.eps_primal && dual <= self.config.eps_dual {
                    converged = true;
                    break;
                }
                let dy = &y - &y_prev;
                let dy_norm = dy.amax();
                if dy_norm > 1e-12 && stack_t(&dy).amax() <= 1e-9 * dy_norm {
                    let support: f64 = (0..m)
                        .map(|i| {
                            if dy[i] > 0.0 {
                                hi[i] * dy[i]
                            } else {
                                lo[i] * dy[i]
                            }
                        })
                        .sum();
                    if support < -1e-9 * dy_norm {
                        return Err(Error::Infeasible {
                            block: "box/equality intersection".into(),
                            residual: prim,
                        });
                    }
                }
            }
        }

        let polished = self.polish(linear, eq_rhs, lower, upper, &x, &y);
        match polished {
            Some((zp, yp)) => Ok(BoxQpSolution {
                z: zp,
                iterations,
                primal_residual: prim,
                dual_residual: dual,
                polished: true,
                duals: yp,
            }),
            None if converged => {
                // Clip onto the box so bounds hold exactly.
                let zc = DVector::from_fn(n, |i, _| x[i].clamp(lower[i], upper[i]));
                Ok(BoxQpSolution {
                    z: zc,
                    iterations,
                    primal_residual: prim,
                    dual_residual: dual,
                    polished: false,
                    duals: y,
                })
            }
            None => Err(Error::NotConverged {
                iterations,
                primal: prim,
                dual,
                history,
            }),
        }
    }

    /// Guesses the active set from the ADMM iterate and solves the reduced
    /// equality system; corrects the guess a few times. Returns `None` if no
    /// guess yields a KKT point.
    fn polish(
        &self,
        linear: &DVector<f64>,
        eq_rhs: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.dim();
        let me = self.eq.nrows();
        let scale = 1.0 + linear.amax() + self.hessian.amax();
        let tol = 1e-9 * scale;

        // -1 lower, +1 upper, 0 free
        let mut active: Vec<i8> = (0..n)
            .map(|i| {
                let yi = y[me + i];
                if lower[i] == upper[i] || (yi < 0.0 && x[i] - lower[i] < -yi) {
                    -1
                } else if yi > 0.0 && upper[i] - x[i] < yi {
                    1
                } else {
                    0
                }
            })
            .collect();

        for _ in 0..POLISH_ROUNDS {
            let free: Vec<usize> = (0..n).filter(|&i| active[i] == 0).collect();
            let fixed_value = |i: usize| if active[i] < 0 { lower[i] } else { upper[i] };
            let mut zfull = DVector::from_fn(n, |i, _| if active[i] == 0 { 0.0 } else { fixed_value(i) });

            let nf = free.len();
            let hff = DMatrix::from_fn(nf, nf, |a, b| self.hessian[(free[a], free[b])]);
            let grad_fixed = &self.hessian * &zfull + linear;
            let gf = DVector::from_fn(nf, |a, _| grad_fixed[free[a]]);
            let ef = DMatrix::from_fn(me, nf, |r, a| self.eq[(r, free[a])]);
            let hf = if me > 0 { eq_rhs - &self.eq * &zfull } else { DVector::zeros(0) };

            let (zf, nu) = if nf == 0 {
                if hf.amax() > tol {
                    return None;
                }
                // Multipliers of the equalities are irrelevant when nothing is free.
                (DVector::zeros(0), DVector::zeros(me))
            } else {
                let factor =
                    KktFactor::new(SparseMatrix::from_dense(&hff), SparseMatrix::from_dense(&ef)).ok()?;
                factor.solve_with_multipliers(Some(gf.as_slice()), hf.as_slice()).ok()?
            };
            for (a, &i) in free.iter().enumerate() {
                zfull[i] = zf[a];
            }

            let mut grad = &self.hessian * &zfull + linear;
            if me > 0 {
                grad += self.eq.transpose() * &nu;
            }
            let mut changed = false;
            for i in 0..n {
                match active[i] {
                    0 => {
                        if zfull[i] < lower[i] - tol {
                            active[i] = -1;
                            changed = true;
                        } else if zfull[i] > upper[i] + tol {
                            active[i] = 1;
                            changed = true;
                        }
                    }
                    -1 if lower[i] != upper[i] && grad[i] < -tol => {
                        active[i] = 0;
                        changed = true;
                    }
                    1 if grad[i] > tol => {
                        active[i] = 0;
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                let z = DVector::from_fn(n, |i, _| zfull[i].clamp(lower[i], upper[i]));
                let mut duals = DVector::zeros(me + n);
                duals.rows_mut(0, me).copy_from(&nu);
                for i in 0..n {
                    if active[i] != 0 {
                        duals[me + i] = -grad[i];
                    }
                }
                return Some((z, duals));
            }
        }
        None
    }
}

/// One-shot solve of a [`QpProblem`]. Returns `(z, iterations, (primal, dual))`.
pub fn solve_box_qp(problem: &QpProblem, config: &AdmmConfig) -> Result<(DVector<f64>, usize, (f64, f64))> {
    problem.validate()?;
    let solver = BoxQpSolver::new(problem.hessian.clone(), problem.eq_matrix.clone(), config.clone())?;
    let sol = solver.solve(&problem.linear, &problem.eq_rhs, &problem.lower, &problem.upper, None)?;
    Ok((sol.z, sol.iterations, (sol.primal_residual, sol.dual_residual)))
}
