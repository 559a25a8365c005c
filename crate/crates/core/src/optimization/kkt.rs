//! Equality-constrained quadratic minimization through the KKT system
//!
//! ```text
//! [ W  E^T ] [z]   [-g]
//! [ E   0  ] [v] = [ h]
//! ```
//!
//! The matrix is reordered with reverse Cuthill-McKee and factored as a
//! regularized quasi-definite `L D L^T` in skyline (variable band) storage.
//! Iterative refinement against the unregularized system recovers the exact
//! solution, including when consistent constraints are redundant.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

const REGULARIZATION: f64 = 1e-10;
const REFINE_STEPS: usize = 40;
const FEASIBILITY_TOL: f64 = 1e-9;

/// Factored KKT operator for `min 1/2 z'Wz + g'z  s.t.  Ez = h`.
#[derive(Debug, Clone)]
pub struct KktFactor {
    weight: SparseMatrix,
    eq: SparseMatrix,
    nvar: usize,
    /// new index -> original index
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl KktFactor {
    /// `weight` must be symmetric (both triangles stored) and `eq` must have
    /// the same number of columns.
    pub fn new(weight: SparseMatrix, eq: SparseMatrix) -> Result<Self> {
        let nvar = weight.nrows();
        if weight.ncols() != nvar || eq.ncols() != nvar {
            return Err(Error::dim(format!(
                "weight is {}x{}, constraints have {} columns",
                weight.nrows(),
                weight.ncols(),
                eq.ncols()
            )));
        }
        let m = nvar + eq.nrows();
        let scale = weight.max_abs().max(eq.max_abs()).max(1.0);

        // Symmetric adjacency of the KKT pattern.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        for i in 0..nvar {
            for &(j, _) in weight.row(i) {
                if j != i {
                    adj[i].push(j);
                }
            }
        }
        for r in 0..eq.nrows() {
            for &(j, _) in eq.row(r) {
                adj[nvar + r].push(j);
                adj[j].push(nvar + r);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..m).collect();
        for old in 0..m {
            let i = inv[old];
            for &nb in &adj[old] {
                let j = inv[nb];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offsets = Vec::with_capacity(m + 1);
        offsets.push(0);
        for i in 0..m {
            offsets.push(offsets[i] + (i - first[i]));
        }
        let mut lower = vec![0.0; offsets[m]];
        let mut diag = vec![0.0; m];

        let add = |a: usize, b: usize, v: f64, lower: &mut [f64], diag: &mut [f64]| {
            let (i, j) = (inv[a], inv[b]);
            if i == j {
                diag[i] += v;
            } else {
                let (r, c) = if i > j { (i, j) } else { (j, i) };
                lower[offsets[r] + c - first[r]] += v;
            }
        };
        for i in 0..nvar {
            for &(j, v) in weight.row(i) {
                // Each off-diagonal appears twice in symmetric storage.
                let v = if i == j { v } else { 0.5 * v };
                add(i, j, v, &mut lower, &mut diag);
            }
        }
        for r in 0..eq.nrows() {
            for &(j, v) in eq.row(r) {
                add(nvar + r, j, v, &mut lower, &mut diag);
            }
        }
        for old in 0..m {
            let i = inv[old];
            if old < nvar {
                diag[i] += REGULARIZATION * scale;
            } else {
                diag[i] -= REGULARIZATION * scale;
            }
        }

        let mut factor = Self {
            weight,
            eq,
            nvar,
            perm,
            first,
            offsets,
            lower,
            diag,
        };
        factor.factorize(scale)?;
        Ok(factor)
    }

    pub fn num_vars(&self) -> usize {
        self.nvar
    }

    pub fn num_constraints(&self) -> usize {
        self.eq.nrows()
    }

    /// Stored entries of the `L` profile; a proxy for factorization cost.
    pub fn profile_len(&self) -> usize {
        self.lower.len()
    }

    fn factorize(&mut self, scale: f64) -> Result<()> {
        let m = self.diag.len();
        for i in 0..m {
            let fi = self.first[i];
            let (head, tail) = self.lower.split_at_mut(self.offsets[i]);
            let row_i = &mut tail[..i - fi];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let row_j = &head[self.offsets[j]..self.offsets[j] + (j - fj)];
                let mut s = row_i[j - fi];
                for k in k0..j {
                    s -= row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] = s;
            }
            let mut d = self.diag[i];
            for j in fi..i {
                let t = row_i[j - fi];
                let l = t / self.diag[j];
                d -= t * l;
                row_i[j - fi] = l;
            }
            let old = self.perm[i];
            if !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite KKT pivot at {} {}",
                    if old < self.nvar { "variable" } else { "constraint row" },
                    if old < self.nvar { old } else { old - self.nvar }
                )));
            }
            // Quasi-definite pivots are positive for variables and negative for
            // constraints. Cancellation (redundant rows next to unweighted
            // variables) can wipe a pivot out; replace it by the regularization
            // and let iterative refinement absorb the perturbation.
            let sign = if old < self.nvar { 1.0 } else { -1.0 };
            let floor = REGULARIZATION * scale;
            if d * sign < floor {
                d = sign * floor;
            }
            self.diag[i] = d;
        }
        Ok(())
    }

    fn solve_regularized(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.diag.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for i in 0..m {
            let fi = self.first[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            let mut s = y[i];
            for (k, l) in row.iter().enumerate() {
                s -= l * y[fi + k];
            }
            y[i] = s;
        }
        for i in 0..m {
            y[i] /= self.diag[i];
        }
        for i in (0..m).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut out = vec![0.0; m];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }

    /// Unregularized KKT product.
    fn apply(&self, sol: &[f64]) -> Vec<f64> {
        let (z, nu) = sol.split_at(self.nvar);
        let mut out = vec![0.0; sol.len()];
        let wz = self.weight.mul_vec(z);
        out[..self.nvar].copy_from_slice(wz.as_slice());
        self.eq.tr_mul_add(nu, &mut out[..self.nvar]);
        let ez = self.eq.mul_vec(z);
        out[self.nvar..].copy_from_slice(ez.as_slice());
        out
    }

    /// Solves for `(z, multipliers)`. `linear` may be `None` for `g = 0`.
    pub fn solve_with_multipliers(
        &self,
        linear: Option<&[f64]>,
        rhs: &[f64],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if rhs.len() != self.eq.nrows() || linear.is_some_and(|g| g.len() != self.nvar) {
            return Err(Error::dim("KKT right-hand side has the wrong length"));
        }
        let m = self.diag.len();
        let mut b = vec![0.0; m];
        if let Some(g) = linear {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi = -gi;
            }
        }
        b[self.nvar..].copy_from_slice(rhs);
        let bnorm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        let mut sol = self.solve_regularized(&b);
        let mut best = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let ax = self.apply(&sol);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let rnorm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rnorm <= 1e-15 * (1.0 + bnorm) || rnorm >= 0.9 * best {
                break;
            }
            best = rnorm;
            let dx = self.solve_regularized(&r);
            for (s, d) in sol.iter_mut().zip(&dx) {
                *s += d;
            }
        }

        let z = DVector::from_column_slice(&sol[..self.nvar]);
        let ez = self.eq.mul_vec(z.as_slice());
        let hnorm = rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let (worst_row, worst) = ez
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b).abs())
            .enumerate()
            .fold((0, 0.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        if !(worst <= FEASIBILITY_TOL * hnorm) {
            return Err(Error::Infeasible {
                block: format!("equality row {worst_row}"),
                residual: worst,
            });
        }
        Ok((z, DVector::from_column_slice(&sol[self.nvar..])))
    }

    pub fn solve(&self, linear: Option<&[f64]>, rhs: &[f64]) -> Result<DVector<f64>> {
        self.solve_with_multipliers(linear, rhs).map(|(z, _)| z)
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given by sorted
/// adjacency lists. Returns new -> old.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let m = adj.len();
    let mut order = Vec::with_capacity(m);
    let mut visited = vec![false; m];
    let degree = |v: usize| adj[v].len();

    for seed in 0..m {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (degree(v), v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Repeated BFS towards the farthest low-degree node of a component.
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let mut dist = vec![usize::MAX; adj.len()];
        dist[node] = 0;
        let mut queue = VecDeque::from([node]);
        let mut last = node;
        while let Some(u) = queue.pop_front() {
            last = u;
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let far = dist[last];
        let candidate = (0..adj.len())
            .filter(|&v| dist[v] == far)
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap_or(last);
        if far <= ecc {
            break;
        }
        ecc = far;
        node = candidate;
    }
    node
}

/// `argmin 1/2 z'Wz  s.t.  Ez = h` for dense inputs.
pub fn solve_eq_ls(weight: &DMatrix<f64>, eq: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if !weight.is_square() || eq.ncols() != weight.nrows() || eq.nrows() != rhs.len() {
        return Err(Error::dim(format!(
            "W {}x{}, E {}x{}, h {}",
            weight.nrows(),
            weight.ncols(),
            eq.nrows(),
            eq.ncols(),
            rhs.len()
        )));
    }
    // Augmented Lagrangian: adding gamma |Ez - h|^2 leaves the solution
    // unchanged but makes the weight definite whenever W is definite on the
    // null space of E, which keeps the quasi-definite factorization stable.
    let e_max = eq.amax();
    let (w_aug, linear) = if e_max > 0.0 {
        let gamma = weight.amax().max(1.0) / (e_max * e_max);
        let w = weight + eq.transpose() * eq * gamma;
        let g = -(eq.transpose() * rhs) * gamma;
        (w, Some(g))
    } else {
        (weight.clone(), None)
    };
    let factor = KktFactor::new(SparseMatrix::from_dense(&w_aug), SparseMatrix::from_dense(eq))?;
    factor.solve(linear.as_ref().map(|g| g.as_slice()), rhs.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimum_norm_completion() {
        let z = solve_eq_ls(&DMatrix::identity(2, 2), &dmatrix![1.0, 0.0], &dvector![1.0]).unwrap();
        assert_relative_eq!(z, dvector![1.0, 0.0], epsilon = 1e-12);
    }

    #[test]
    fn fully_determined() {
        let h = dvector![0.3, -2.0, 5.5];
        let z = solve_eq_ls(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3), &h).unwrap();
        assert_relative_eq!(z, h, epsilon = 1e-12);
    }

    #[test]
    fn matches_pseudoinverse_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
        let h = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let z = solve_eq_ls(&DMatrix::identity(8, 8), &e, &h).unwrap();
        let pinv = e.clone().pseudo_inverse(1e-14).unwrap();
        assert_relative_eq!(z, &pinv * &h, epsilon = 1e-10);
        assert!((&e * &z - &h).amax() < 1e-12);
    }

    #[test]
    fn redundant_consistent_constraints_are_fine() {
        let e = dmatrix![1.0, 1.0, 0.0; 2.0, 2.0, 0.0; 0.0, 0.0, 1.0];
        let z = solve_eq_ls(&DMatrix::identity(3, 3), &e, &dvector![1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(z, dvector![0.5, 0.5, 3.0], epsilon = 1e-10);
    }

    #[test]
    fn inconsistent_constraints_report_the_row() {
        let e = dmatrix![1.0, 1.0; 2.0, 2.0];
        let err = solve_eq_ls(&DMatrix::identity(2, 2), &e, &dvector![1.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }), "{err}");
    }

    #[test]
    fn linear_term_and_psd_weight() {
        // min 1/2 (z0^2) + z1  s.t. z0 + z1 = 1, z1 - z2 = 0, z2 = -2
        let w = SparseMatrix::from_dense(&dmatrix![1.0, 0.0, 0.0; 0.0, 0.0, 0.0; 0.0, 0.0, 0.0]);
        let e = SparseMatrix::from_dense(&dmatrix![1.0, 1.0, 0.0; 0.0, 1.0, -1.0; 0.0, 0.0, 1.0]);
        let f = KktFactor::new(w, e).unwrap();
        let z = f.solve(Some(&[0.0, 1.0, 0.0]), &[1.0, 0.0, -2.0]).unwrap();
        assert_relative_eq!(z, dvector![3.0, -2.0, -2.0], epsilon = 1e-10);
    }

    #[test]
    fn stationarity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(3..15);
            let m = rng.random_range(1..n);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let w = g.transpose() * &g + DMatrix::identity(n, n) * 0.1;
            let e = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let h = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let z = solve_eq_ls(&w, &e, &h).unwrap();
            assert!((&e * &z - &h).amax() < 1e-9);
            // W z must lie in range(E^T): its component orthogonal to range(E^T) vanishes.
            let wz = &w * &z;
            let proj = e.transpose() * e.clone().pseudo_inverse(1e-14).unwrap().transpose() * &wz;
            assert!((wz - proj).amax() < 1e-8);
        }
    }
}
