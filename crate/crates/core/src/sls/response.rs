use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::plant::LinearSystem;

/// Finite impulse response closed-loop maps `w -> x` and `w -> u`, stored as
/// spectral blocks `phi_x[k-1] = Phi_x(k)` and `phi_u[k-1] = Phi_u(k)`,
/// `k = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    pub phi_x: Vec<DMatrix<f64>>,
    pub phi_u: Vec<DMatrix<f64>>,
}

impl SystemResponse {
    pub fn new(phi_x: Vec<DMatrix<f64>>, phi_u: Vec<DMatrix<f64>>) -> Result<Self> {
        if phi_x.is_empty() || phi_x.len() != phi_u.len() {
            return Err(Error::dim(format!(
                "{} state blocks and {} input blocks",
                phi_x.len(),
                phi_u.len()
            )));
        }
        let n = phi_x[0].ncols();
        let p = phi_u[0].nrows();
        if phi_x.iter().any(|m| m.shape() != (n, n)) || phi_u.iter().any(|m| m.shape() != (p, n)) {
            return Err(Error::dim("response blocks have inconsistent shapes"));
        }
        Ok(Self { phi_x, phi_u })
    }

    /// `Phi_x = (I, 0, ..., 0)`, `Phi_u = 0`.
    pub fn open_loop(state_dim: usize, input_dim: usize, horizon: usize) -> Self {
        let mut phi_x = vec![DMatrix::zeros(state_dim, state_dim); horizon];
        phi_x[0] = DMatrix::identity(state_dim, state_dim);
        Self {
            phi_x,
            phi_u: vec![DMatrix::zeros(input_dim, state_dim); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.len()
    }

    pub fn state_dim(&self) -> usize {
        self.phi_x[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.phi_u[0].nrows()
    }

    /// `sum_k ||Q^1/2 Phi_x(k)||_F^2 + ||R^1/2 Phi_u(k)||_F^2`.
    pub fn h2_cost(&self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
        let tr = |phi: &DMatrix<f64>, w: &DMatrix<f64>| (phi.transpose() * w * phi).trace();
        self.phi_x.iter().map(|p| tr(p, q)).sum::<f64>() + self.phi_u.iter().map(|p| tr(p, r)).sum::<f64>()
    }

    /// Largest absolute entry outside the given supports, over all blocks.
    pub fn support_violation(&self, state_support: &DMatrix<bool>, input_support: &DMatrix<bool>) -> f64 {
        let outside = |m: &DMatrix<f64>, s: &DMatrix<bool>| {
            m.iter()
                .zip(s.iter())
                .filter(|(_, inside)| !**inside)
                .fold(0.0f64, |a, (v, _)| a.max(v.abs()))
        };
        let x = self.phi_x.iter().map(|m| outside(m, state_support));
        let u = self.phi_u.iter().map(|m| outside(m, input_support));
        x.chain(u).fold(0.0, f64::max)
    }

    /// Block-per-line text: a header, then one `phi_x <k>` / `phi_u <k>` line
    /// per block with its entries in row-major order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "sls-response v1").unwrap();
        writeln!(out, "horizon {}", self.horizon()).unwrap();
        writeln!(out, "state_dim {}", self.state_dim()).unwrap();
        writeln!(out, "input_dim {}", self.input_dim()).unwrap();
        for (name, blocks) in [("phi_x", &self.phi_x), ("phi_u", &self.phi_u)] {
            for (k, m) in blocks.iter().enumerate() {
                write!(out, "{name} {}", k + 1).unwrap();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        write!(out, " {}", m[(i, j)]).unwrap();
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("system response: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("sls-response v1") {
            return Err(bad("missing header"));
        }
        let mut header = |key: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("bad value for `{key}`")))
        };
        let horizon = header("horizon")?;
        let n = header("state_dim")?;
        let p = header("input_dim")?;
        let mut phi_x = Vec::with_capacity(horizon);
        let mut phi_u = Vec::with_capacity(horizon);
        for line in lines {
            let mut it = line.split_whitespace();
            let name = it.next().unwrap_or_default();
            let k: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad block index"))?;
            let values: Vec<f64> = it
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            let (rows, target) = match name {
                "phi_x" => (n, &mut phi_x),
                "phi_u" => (p, &mut phi_u),
                _ => return Err(bad(&format!("unknown block `{name}`"))),
            };
            if k != target.len() + 1 || values.len() != rows * n {
                return Err(bad(&format!("block {name} {k} is out of order or mis-sized")));
            }
            target.push(DMatrix::from_row_slice(rows, n, &values));
        }
        if phi_x.len() != horizon || phi_u.len() != horizon {
            return Err(bad("block count does not match horizon"));
        }
        Self::new(phi_x, phi_u)
    }
}

/// Residual of the achievability constraints for a finite impulse response:
///
/// ```text
/// max( |Phi_x(1) - I|,
///      max_k |Phi_x(k+1) - A Phi_x(k) - B Phi_u(k)|,   k = 1..T-1
///      |A Phi_x(T) + B Phi_u(T)| )
/// ```
///
/// with `|.|` the largest absolute entry.
pub fn validate_achievability(system: &LinearSystem, response: &SystemResponse) -> Result<f64> {
    let (n, p) = (system.state_dim(), system.input_dim());
    if response.state_dim() != n || response.input_dim() != p {
        return Err(Error::dim(format!(
            "response is for n={}, p={}; system has n={n}, p={p}",
            response.state_dim(),
            response.input_dim()
        )));
    }
    let t = response.horizon();
    let mut residual = (&response.phi_x[0] - DMatrix::<f64>::identity(n, n)).amax();
    for k in 0..t {
        let next = &system.a * &response.phi_x[k] + &system.b * &response.phi_u[k];
        let r = if k + 1 < t {
            (&response.phi_x[k + 1] - next).amax()
        } else {
            next.amax()
        };
        residual = residual.max(r);
    }
    Ok(residual)
}
