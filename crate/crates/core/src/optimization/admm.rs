use nalgebra::DVector;

use super::AdmmConfig;
use crate::error::{Error, Result};

/// Iterates of the two-block splitting, reusable as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    /// Output of the prox step.
    pub primal: DVector<f64>,
    /// Output of the projection step.
    pub consensus: DVector<f64>,
    /// Scaled dual.
    pub dual: DVector<f64>,
}

impl AdmmState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            primal: DVector::zeros(dim),
            consensus: DVector::zeros(dim),
            dual: DVector::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Penalty in effect at exit (differs from the configured one when adaptive).
    pub rho: f64,
}

impl AdmmOutcome {
    pub fn consensus(&self) -> &DVector<f64> {
        &self.state.consensus
    }
}

/// Two-block ADMM on `min f(phi) + g(psi)  s.t.  phi = psi`:
///
/// ```text
/// phi    <- prox_f(psi - lambda)
/// r      <- a phi + (1 - a) psi
/// psi    <- proj_g(r + lambda)
/// lambda <- lambda + r - psi
/// ```
///
/// with relaxation `a = config.relaxation` (1 is plain ADMM).
///
/// Stops when `|phi - psi| <= eps_primal` and `rho |psi - psi_prev| <= eps_dual`.
/// `prox_f` receives the current `rho`. With `adaptive_rho`, `rho` is doubled
/// or halved (and the scaled dual rescaled) whenever one residual, relative to
/// its tolerance, is more than ten times the other.
pub fn admm_two_block<F, G>(
    mut prox_f: F,
    mut proj_g: G,
    dim: usize,
    config: &AdmmConfig,
    warm: Option<AdmmState>,
) -> Result<AdmmOutcome>
where
    F: FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    config.validate()?;
    let mut state = match warm {
        Some(s) if s.consensus.len() == dim && s.dual.len() == dim => s,
        Some(_) => return Err(Error::dim("warm start has the wrong dimension")),
        None => AdmmState::zeros(dim),
    };
    let mut history = Vec::new();
    let mut primal_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut rho = config.rho;
    for it in 1..=config.max_iters {
        let v = &state.consensus - &state.dual;
        state.primal = prox_f(&v, rho)?;
        let alpha = config.relaxation;
        let relaxed = &state.primal * alpha + &state.consensus * (1.0 - alpha);
        let m = &relaxed + &state.dual;
        let psi = proj_g(&m)?;
        dual_res = rho * (&psi - &state.consensus).norm();
        state.consensus = psi;
        primal_res = (&state.primal - &state.consensus).norm();
        state.dual += relaxed - &state.consensus;
        if it % 50 == 0 {
            history.push((primal_res, dual_res));
        }
        if primal_res <= config.eps_primal && dual_res <= config.eps_dual {
            return Ok(AdmmOutcome {
                state,
                iterations: it,
                primal_residual: primal_res,
                dual_residual: dual_res,
                rho,
            });
        }
        if config.adaptive_rho && it % ADAPT_EVERY == 0 {
            let ratio = (primal_res / config.eps_primal) / (dual_res / config.eps_dual);
            let scale = if ratio > ADAPT_RATIO {
                ADAPT_STEP
            } else if ratio < 1.0 / ADAPT_RATIO {
                1.0 / ADAPT_STEP
            } else {
                1.0
            };
            if scale != 1.0 && ratio.is_finite() {
                rho *= scale;
                state.dual /= scale;
            }
        }
    }
    Err(Error::NotConverged {
        iterations: config.max_iters,
        primal: primal_res,
        dual: dual_res,
        history,
    })
}

const ADAPT_EVERY: usize = 5;
const ADAPT_RATIO: f64 = 10.0;
const ADAPT_STEP: f64 = 2.0;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn tight() -> AdmmConfig {
        AdmmConfig {
            eps_primal: 1e-9,
            eps_dual: 1e-9,
            ..AdmmConfig::default()
        }
    }

    #[test]
    fn affine_projection_dominates() {
        let a = dvector![1.0, -2.0, 0.5];
        let b = dvector![3.0, 0.0, 1.0];
        let prox = |v: &DVector<f64>, rho: f64| Ok((&a + v * rho) / (1.0 + rho));
        let proj = |_: &DVector<f64>| Ok(b.clone());
        let out = admm_two_block(prox, proj, 3, &tight(), None).unwrap();
        assert_relative_eq!(out.consensus(), &b, epsilon = 1e-8);
    }

    #[test]
    fn box_and_line_meet_at_clipped_point() {
        let prox = |v: &DVector<f64>, _| Ok(v.map(|x| x.clamp(-1.0, 1.0)));
        let proj = |v: &DVector<f64>| {
            let m = 0.5 * (v[0] + v[1]);
            Ok(dvector![m, m])
        };
        let warm = AdmmState {
            primal: dvector![3.0, 3.0],
            consensus: dvector![3.0, 3.0],
            dual: dvector![0.0, 0.0],
        };
        let out = admm_two_block(prox, proj, 2, &tight(), Some(warm)).unwrap();
        // Any point of the diagonal inside the box is a solution.
        let z = out.consensus();
        assert_relative_eq!(z[0], z[1], epsilon = 1e-9);
        assert!(z[0].abs() <= 1.0 + 1e-9);
        let plain = AdmmConfig {
            relaxation: 1.0,
            ..tight()
        };
        let warm = AdmmState {
            primal: dvector![3.0, 3.0],
            consensus: dvector![3.0, 3.0],
            dual: dvector![0.0, 0.0],
        };
        let out = admm_two_block(prox, proj, 2, &plain, Some(warm)).unwrap();
        assert_relative_eq!(out.consensus(), &dvector![1.0, 1.0], epsilon = 1e-9);
    }

    #[test]
    fn intersecting_halfspaces() {
        // f: indicator of x0 + x1 >= 1, g: indicator of x0 <= 0.2
        let prox = |v: &DVector<f64>, _| {
            let s = v[0] + v[1];
            Ok(if s >= 1.0 {
                v.clone()
            } else {
                v + dvector![0.5, 0.5] * (1.0 - s)
            })
        };
        let proj = |v: &DVector<f64>| Ok(dvector![v[0].min(0.2), v[1]]);
        let warm = AdmmState {
            primal: dvector![-4.0, -3.0],
            consensus: dvector![-4.0, -3.0],
            dual: dvector![0.0, 0.0],
        };
        let out = admm_two_block(prox, proj, 2, &tight(), Some(warm)).unwrap();
        let z = out.consensus();
        assert!(z[0] <= 0.2 + 1e-8 && z[0] + z[1] >= 1.0 - 1e-8);
    }

    #[test]
    fn reports_non_convergence() {
        let cfg = AdmmConfig {
            max_iters: 3,
            ..tight()
        };
        // Disjoint sets never reach consensus.
        let err = admm_two_block(|_, _| Ok(dvector![0.0]), |_| Ok(dvector![1.0]), 1, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, .. }));
    }
}
