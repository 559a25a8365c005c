//! Centralized linear baselines: finite-horizon and stationary LQR, the
//! saturation clamp, and setpoint-tracking feedback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::LinearSystem;

/// Gains and cost-to-go matrices of an LQR problem. `gains[t]` is applied as
/// `u = -K_t x`; `value_matrices[t]` is `P_t`, with one more entry than gains.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub gains: Vec<DMatrix<f64>>,
    pub value_matrices: Vec<DMatrix<f64>>,
}

impl LqrSolution {
    /// Gain used by receding-horizon tracking.
    pub fn first_gain(&self) -> &DMatrix<f64> {
        &self.gains[0]
    }
}

fn check_weights(system: &LinearSystem, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let (n, p) = (system.state_dim(), system.input_dim());
    if q.shape() != (n, n) || r.shape() != (p, p) {
        return Err(Error::dim(format!("weights must be {n}x{n} and {p}x{p}")));
    }
    Ok(())
}

/// `(K, P_prev)` for one backward Riccati step from `P`.
fn riccati_step(
    system: &LinearSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = (&system.a, &system.b);
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("R + B'PB is not positive definite".into()))?;
    let k = chol.solve(&(&bt_p * a));
    let a_cl = a - b * &k;
    let mut prev = q + a.transpose() * p * &a_cl;
    prev = (&prev + prev.transpose()) * 0.5;
    Ok((k, prev))
}

/// Backward recursion from `P_T = terminal` over `horizon` steps.
pub fn lqr_riccati_with_terminal(
    system: &LinearSystem,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    terminal: &DMatrix<f64>,
    horizon: usize,
) -> Result<LqrSolution> {
    check_weights(system, q_weight, r_weight)?;
    if terminal.shape() != q_weight.shape() {
        return Err(Error::dim("terminal weight must match Q"));
    }
    let mut gains = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon + 1);
    values.push(terminal.clone());
    for _ in 0..horizon {
        let (k, p) = riccati_step(system, q_weight, r_weight, values.last().unwrap())?;
        gains.push(k);
        values.push(p);
    }
    gains.reverse();
    values.reverse();
    Ok(LqrSolution {
        gains,
        value_matrices: values,
    })
}

/// Finite-horizon LQR with `P_T = Q`.
pub fn lqr_riccati(
    system: &LinearSystem,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    horizon: usize,
) -> Result<LqrSolution> {
    lqr_riccati_with_terminal(system, q_weight, r_weight, q_weight, horizon)
}

/// Solution of the discrete algebraic Riccati equation by the structured
/// doubling algorithm, returned as a one-step [`LqrSolution`] `(K, P)`.
pub fn stationary_lqr(system: &LinearSystem, q_weight: &DMatrix<f64>, r_weight: &DMatrix<f64>) -> Result<LqrSolution> {
    check_weights(system, q_weight, r_weight)?;
    let n = system.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv = r_weight
        .clone()
        .cholesky()
        .ok_or_else(|| Error::param("R must be positive definite"))?
        .inverse();
    let mut a = system.a.clone();
    let mut g = &system.b * r_inv * system.b.transpose();
    let mut h = q_weight.clone();
    let mut converged = false;
    for _ in 0..100 {
        let w = &eye + &g * &h;
        let lu = w.lu();
        let w_inv_a = lu
            .solve(&a)
            .ok_or_else(|| Error::Numerical("singular doubling iterate".into()))?;
        let w_inv_g = lu
            .solve(&g)
            .ok_or_else(|| Error::Numerical("singular doubling iterate".into()))?;
        let h_next = &h + a.transpose() * &h * &w_inv_a;
        let g_next = &g + &a * &w_inv_g * a.transpose();
        let a_next = &a * &w_inv_a;
        let change = (&h_next - &h).amax();
        h = (&h_next + h_next.transpose()) * 0.5;
        g = (&g_next + g_next.transpose()) * 0.5;
        a = a_next;
        if change <= 1e-13 * h.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged || !h.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("Riccati doubling did not converge".into()));
    }
    // One ordinary step polishes the fixed point and yields the gain.
    let (k, p) = riccati_step(system, q_weight, r_weight, &h)?;
    Ok(LqrSolution {
        gains: vec![k],
        value_matrices: vec![p],
    })
}

/// Elementwise clamp to `[-u_max, u_max]`.
pub fn saturate(u: &DVector<f64>, u_max: f64) -> DVector<f64> {
    u.map(|v| v.clamp(-u_max, u_max))
}

/// `u = u_ref - K (x - x_ref)` with the first gain of `gains`.
pub fn linear_tracking_step(
    gains: &LqrSolution,
    x: &DVector<f64>,
    x_ref: &DVector<f64>,
    u_ref: &DVector<f64>,
) -> DVector<f64> {
    u_ref - gains.first_gain() * (x - x_ref)
}
