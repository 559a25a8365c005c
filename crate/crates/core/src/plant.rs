//! Networked LTI plants: graph topologies, the linearized swing-equation mesh,
//! and the d-hop locality masks used by localized synthesis.
//!
//! Node indexing is row-major over the mesh. States are interleaved per node as
//! `[theta_0, omega_0, theta_1, omega_1, ...]` and each node owns one input.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hop radius meaning "no locality constraint".
pub const UNBOUNDED: usize = usize::MAX;

pub const STATES_PER_NODE: usize = 2;
pub const INPUTS_PER_NODE: usize = 1;

/// Undirected simple graph over `node_count` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an edge list. Edges are normalized to `(min, max)`
    /// and sorted; self-loops and duplicates are rejected.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::param("topology needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::param(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::param(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::param(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            adjacency,
        })
    }

    /// All edges of the `rows x cols` grid graph, row-major node numbering.
    pub fn mesh_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        edges
    }

    /// Random connected spanning subgraph of the mesh: a uniform spanning tree
    /// (Wilson's algorithm) plus each leftover mesh edge with `extra_edge_prob`.
    pub fn random_mesh<R: Rng>(rows: usize, cols: usize, extra_edge_prob: f64, rng: &mut R) -> Self {
        let n = rows * cols;
        let mesh = Topology::new(n, Topology::mesh_edges(rows, cols))
            .expect("mesh edges are simple by construction");

        let mut in_tree = vec![false; n];
        let mut next = vec![usize::MAX; n];
        in_tree[0] = true;
        let mut tree = BTreeSet::new();
        for start in 0..n {
            let mut u = start;
            while !in_tree[u] {
                let nbrs = &mesh.adjacency[u];
                next[u] = nbrs[rng.random_range(0..nbrs.len())];
                u = next[u];
            }
            let mut u = start;
            while !in_tree[u] {
                in_tree[u] = true;
                tree.insert((u.min(next[u]), u.max(next[u])));
                u = next[u];
            }
        }
        let mut edges: Vec<_> = tree.iter().copied().collect();
        for e in &mesh.edges {
            if !tree.contains(e) && rng.random_bool(extra_edge_prob) {
                edges.push(*e);
            }
        }
        Topology::new(n, edges).expect("subgraph of a simple graph is simple")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    /// BFS hop distances from `source`; `None` for unreachable nodes.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop distances.
    pub fn distance_matrix(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.node_count).map(|s| self.distances_from(s)).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.distances_from(0).iter().all(Option::is_some)
    }

    /// Longest shortest path; `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.node_count {
            for d in self.distances_from(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    /// Nodes within `d` hops of `node`, sorted.
    pub fn neighborhood(&self, node: usize, d: usize) -> Vec<usize> {
        self.distances_from(node)
            .iter()
            .enumerate()
            .filter_map(|(i, dist)| dist.filter(|&x| x <= d).map(|_| i))
            .collect()
    }
}

/// Plain discrete-time LTI system `x+ = A x + B u + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::dim(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A x + B u + w` with a full state-dimension disturbance.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, p) = (self.state_dim(), self.input_dim());
        if x.len() != n || u.len() != p || w.len() != n {
            return Err(Error::dim(format!(
                "step expects x:{n}, u:{p}, w:{n}; got {}, {}, {}",
                x.len(),
                u.len(),
                w.len()
            )));
        }
        Ok(&self.a * x + &self.b * u + w)
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius_of(&self.a)
    }
}

/// Largest eigenvalue modulus via a real Schur decomposition.
pub fn spectral_radius_of(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Sampling ranges and defaults for randomized swing-equation meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub dt: f64,
    pub u_max: f64,
    pub extra_edge_prob: f64,
    pub susceptance_range: (f64, f64),
    pub inertia_inv_range: (f64, f64),
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dt: 0.2,
            u_max: 1.0,
            extra_edge_prob: 0.3,
            susceptance_range: (0.5, 1.0),
            inertia_inv_range: (0.0, 10.0),
        }
    }
}

/// Undamped linearized swing-equation network.
///
/// Per node `i` with state `(theta_i, omega_i)`:
///
/// ```text
/// A_ii = [ 1             dt ]     A_ij = [ 0              0 ]     B_i = [0; 1]
///        [ -b_i/m_i dt   1  ]            [ b_ij/m_i dt    0 ]
/// ```
///
/// with `b_i = sum_j b_ij` over neighbors. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    topology: Topology,
    mesh: Option<(usize, usize)>,
    dt: f64,
    inertia_inv: Vec<f64>,
    susceptance: Vec<f64>,
    u_max: f64,
    system: LinearSystem,
}

impl PlantModel {
    /// `susceptance[k]` belongs to `topology.edges()[k]`.
    pub fn new(
        topology: Topology,
        inertia_inv: Vec<f64>,
        susceptance: Vec<f64>,
        dt: f64,
        u_max: f64,
    ) -> Result<Self> {
        let n = topology.node_count();
        if inertia_inv.len() != n {
            return Err(Error::dim(format!("{} inertias for {n} nodes", inertia_inv.len())));
        }
        if susceptance.len() != topology.edges().len() {
            return Err(Error::dim(format!(
                "{} susceptances for {} edges",
                susceptance.len(),
                topology.edges().len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param(format!("dt must be positive, got {dt}")));
        }
        if !(u_max > 0.0) {
            return Err(Error::param(format!("u_max must be positive, got {u_max}")));
        }
        if inertia_inv.iter().chain(&susceptance).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("inertias and susceptances must be finite and non-negative"));
        }
        let system = assemble(&topology, &inertia_inv, &susceptance, dt);
        Ok(Self {
            topology,
            mesh: None,
            dt,
            inertia_inv,
            susceptance,
            u_max,
            system,
        })
    }

    /// Random connected `rows x cols` mesh plant with default sampling ranges.
    pub fn generate(rows: usize, cols: usize, seed: u64, dt: f64, u_max: f64) -> Result<Self> {
        let params = PlantParams {
            dt,
            u_max,
            ..PlantParams::default()
        };
        Self::generate_with(rows, cols, seed, &params)
    }

    pub fn generate_with(rows: usize, cols: usize, seed: u64, params: &PlantParams) -> Result<Self> {
        if rows * cols == 0 {
            return Err(Error::param("mesh must have at least one node"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = Topology::random_mesh(rows, cols, params.extra_edge_prob, &mut rng);
        let (blo, bhi) = params.susceptance_range;
        let (mlo, mhi) = params.inertia_inv_range;
        let susceptance = (0..topology.edges().len())
            .map(|_| rng.random_range(blo..=bhi))
            .collect();
        let inertia_inv = (0..topology.node_count())
            .map(|_| rng.random_range(mlo..=mhi))
            .collect();
        let mut plant = Self::new(topology, inertia_inv, susceptance, params.dt, params.u_max)?;
        plant.mesh = Some((rows, cols));
        Ok(plant)
    }

    /// Same plant with a different saturation bound.
    pub fn with_u_max(&self, u_max: f64) -> Result<Self> {
        if !(u_max > 0.0) {
            return Err(Error::param(format!("u_max must be positive, got {u_max}")));
        }
        Ok(Self {
            u_max,
            ..self.clone()
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mesh_shape(&self) -> Option<(usize, usize)> {
        self.mesh
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn state_dim(&self) -> usize {
        STATES_PER_NODE * self.node_count()
    }

    pub fn input_dim(&self) -> usize {
        INPUTS_PER_NODE * self.node_count()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn inertia_inv(&self) -> &[f64] {
        &self.inertia_inv
    }

    pub fn susceptance(&self) -> &[f64] {
        &self.susceptance
    }

    pub fn line_susceptance(&self, i: usize, j: usize) -> Option<f64> {
        self.topology.edge_index(i, j).map(|k| self.susceptance[k])
    }

    /// `b_i`: total susceptance incident to node `i`.
    pub fn total_susceptance(&self, i: usize) -> f64 {
        self.topology
            .neighbors(i)
            .iter()
            .map(|&j| self.line_susceptance(i, j).unwrap())
            .sum()
    }

    /// The 2x2 block coupling node `j` into node `i`; zero outside `{i} ∪ N(i)`.
    pub fn a_block(&self, i: usize, j: usize) -> Matrix2<f64> {
        let dt = self.dt;
        let m_inv = self.inertia_inv[i];
        if i == j {
            Matrix2::new(1.0, dt, -self.total_susceptance(i) * m_inv * dt, 1.0)
        } else if let Some(b) = self.line_susceptance(i, j) {
            Matrix2::new(0.0, 0.0, b * m_inv * dt, 0.0)
        } else {
            Matrix2::zeros()
        }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    /// Node owning a state index.
    pub fn state_node(&self, state: usize) -> usize {
        state / STATES_PER_NODE
    }

    /// `x+ = A x + B (u + w)` with per-node disturbances. No saturation.
    pub fn step_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, p) = (self.state_dim(), self.input_dim());
        if x.len() != n || u.len() != p || w.len() != p {
            return Err(Error::dim(format!(
                "step_dynamics expects x:{n}, u:{p}, w:{p}; got {}, {}, {}",
                x.len(),
                u.len(),
                w.len()
            )));
        }
        Ok(&self.system.a * x + &self.system.b * (u + w))
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        self.system.spectral_radius()
    }

    pub fn locality_mask(&self, d: usize) -> LocalityMask {
        LocalityMask::from_topology(&self.topology, d)
    }

    pub fn to_dump(&self) -> PlantDump {
        PlantDump {
            format: PLANT_FORMAT.to_string(),
            rows: self.mesh.map(|m| m.0),
            cols: self.mesh.map(|m| m.1),
            node_count: self.node_count(),
            edges: self.topology.edges().iter().flat_map(|&(a, b)| [a, b]).collect(),
            susceptance: self.susceptance.clone(),
            inertia_inv: self.inertia_inv.clone(),
            dt: self.dt,
            u_max: self.u_max,
        }
    }

    pub fn from_dump(dump: &PlantDump) -> Result<Self> {
        if dump.format != PLANT_FORMAT {
            return Err(Error::Parse(format!("unknown plant format `{}`", dump.format)));
        }
        if dump.edges.len() % 2 != 0 {
            return Err(Error::Parse("edge list must have even length".into()));
        }
        let edges = dump.edges.chunks(2).map(|e| (e[0], e[1]));
        let topology = Topology::new(dump.node_count, edges)?;
        // Susceptances are stored in sorted edge order, which `Topology::new` preserves.
        let mut plant = Self::new(
            topology,
            dump.inertia_inv.clone(),
            dump.susceptance.clone(),
            dump.dt,
            dump.u_max,
        )?;
        plant.mesh = dump.rows.zip(dump.cols);
        Ok(plant)
    }

    /// Self-describing TOML text (field names and flat arrays).
    pub fn to_text(&self) -> String {
        toml::to_string(&self.to_dump()).expect("plant dump is always serializable")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let dump: PlantDump = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_dump(&dump)
    }
}

const PLANT_FORMAT: &str = "sls-grid-plant-v1";

/// Flat on-disk representation of a [`PlantModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantDump {
    pub format: String,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub node_count: usize,
    /// `[a0, b0, a1, b1, ...]`, sorted with `a < b`.
    pub edges: Vec<usize>,
    pub susceptance: Vec<f64>,
    pub inertia_inv: Vec<f64>,
    pub dt: f64,
    pub u_max: f64,
}

fn assemble(topology: &Topology, inertia_inv: &[f64], susceptance: &[f64], dt: f64) -> LinearSystem {
    let nodes = topology.node_count();
    let n = STATES_PER_NODE * nodes;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, nodes);
    let mut b_total = vec![0.0; nodes];
    for (k, &(i, j)) in topology.edges().iter().enumerate() {
        b_total[i] += susceptance[k];
        b_total[j] += susceptance[k];
        a[(2 * i + 1, 2 * j)] = susceptance[k] * inertia_inv[i] * dt;
        a[(2 * j + 1, 2 * i)] = susceptance[k] * inertia_inv[j] * dt;
    }
    for i in 0..nodes {
        a[(2 * i, 2 * i)] = 1.0;
        a[(2 * i, 2 * i + 1)] = dt;
        a[(2 * i + 1, 2 * i)] = -b_total[i] * inertia_inv[i] * dt;
        a[(2 * i + 1, 2 * i + 1)] = 1.0;
        b[(2 * i + 1, i)] = 1.0;
    }
    LinearSystem { a, b }
}

/// Sparsity supports for `Phi_x` (n x n) and `Phi_u` (p x n).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityMask {
    /// Hop radius, [`UNBOUNDED`] for no constraint.
    pub d: usize,
    pub state_support: DMatrix<bool>,
    pub input_support: DMatrix<bool>,
}

impl LocalityMask {
    /// All-true supports.
    pub fn full(state_dim: usize, input_dim: usize) -> Self {
        Self {
            d: UNBOUNDED,
            state_support: DMatrix::from_element(state_dim, state_dim, true),
            input_support: DMatrix::from_element(input_dim, state_dim, true),
        }
    }

    /// `(i, j)` block entries are true iff hop distance between nodes `i` and `j` is at most `d`.
    pub fn from_topology(topology: &Topology, d: usize) -> Self {
        let nodes = topology.node_count();
        let (n, p) = (STATES_PER_NODE * nodes, INPUTS_PER_NODE * nodes);
        let mut state_support = DMatrix::from_element(n, n, false);
        let mut input_support = DMatrix::from_element(p, n, false);
        for j in 0..nodes {
            let dist = topology.distances_from(j);
            for (i, di) in dist.iter().enumerate() {
                let inside = match di {
                    Some(h) => d == UNBOUNDED || *h <= d,
                    None => d == UNBOUNDED,
                };
                if !inside {
                    continue;
                }
                for si in 0..STATES_PER_NODE {
                    for sj in 0..STATES_PER_NODE {
                        state_support[(STATES_PER_NODE * i + si, STATES_PER_NODE * j + sj)] = true;
                    }
                    input_support[(i, STATES_PER_NODE * j + si)] = true;
                }
            }
        }
        Self {
            d,
            state_support,
            input_support,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_support.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_support.nrows()
    }

    /// Row indices allowed in column `col` of `Phi_x`.
    pub fn state_rows(&self, col: usize) -> Vec<usize> {
        (0..self.state_support.nrows())
            .filter(|&r| self.state_support[(r, col)])
            .collect()
    }

    /// Row indices allowed in column `col` of `Phi_u`.
    pub fn input_rows(&self, col: usize) -> Vec<usize> {
        (0..self.input_support.nrows())
            .filter(|&r| self.input_support[(r, col)])
            .collect()
    }

    /// True if every support entry of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &LocalityMask) -> bool {
        self.state_support
            .iter()
            .zip(other.state_support.iter())
            .chain(self.input_support.iter().zip(other.input_support.iter()))
            .all(|(a, b)| !*a || *b)
    }
}

pub fn locality_mask(topology: &Topology, d: usize) -> LocalityMask {
    LocalityMask::from_topology(topology, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_node_plant() {
        let p = PlantModel::generate(1, 1, 3, 0.2, 1.0).unwrap();
        assert_eq!(p.node_count(), 1);
        assert_eq!(p.total_susceptance(0), 0.0);
        assert_eq!(p.a_block(0, 0), Matrix2::new(1.0, 0.2, 0.0, 1.0));
        assert_relative_eq!(p.spectral_radius().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn three_by_one_is_a_path() {
        let p = PlantModel::generate(3, 1, 7, 0.2, 1.0).unwrap();
        assert_eq!(p.topology().neighbors(1), &[0, 2]);
        assert_eq!(p.topology().edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn five_by_five_is_connected_with_bounded_degree() {
        for seed in 0..20 {
            let p = PlantModel::generate(5, 5, seed, 0.2, 1.0).unwrap();
            assert_eq!(p.node_count(), 25);
            assert!(p.topology().is_connected());
            assert!((0..25).all(|i| p.topology().neighbors(i).len() <= 4));
            assert!(p.susceptance().iter().all(|b| (0.5..=1.0).contains(b)));
            assert!(p.inertia_inv().iter().all(|m| (0.0..=10.0).contains(m)));
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(Topology::new(3, [(0, 0)]).is_err());
        assert!(Topology::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(3, [(0, 3)]).is_err());
        assert!(Topology::new(0, []).is_err());
    }

    #[test]
    fn step_dynamics_edge_cases() {
        let p = PlantModel::generate(2, 2, 1, 0.2, 1.0).unwrap();
        let zero = p.step_dynamics(&DVector::zeros(8), &DVector::zeros(4), &DVector::zeros(4)).unwrap();
        assert_eq!(zero, DVector::zeros(8));
        assert!(p.step_dynamics(&DVector::zeros(7), &DVector::zeros(4), &DVector::zeros(4)).is_err());

        let single = PlantModel::generate(1, 1, 0, 0.2, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.7, 0.0]);
        let next = single.step_dynamics(&x, &DVector::zeros(1), &DVector::zeros(1)).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn masks_on_a_path() {
        let topo = Topology::new(3, [(0, 1), (1, 2)]).unwrap();
        let m0 = LocalityMask::from_topology(&topo, 0);
        let m1 = LocalityMask::from_topology(&topo, 1);
        let full = LocalityMask::from_topology(&topo, UNBOUNDED);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m0.input_support[(i, 2 * j)], i == j);
                let near = (i as isize - j as isize).abs() <= 1;
                assert_eq!(m1.state_support[(2 * i + 1, 2 * j)], near);
                assert!(full.state_support[(2 * i, 2 * j + 1)]);
            }
        }
        assert!(m0.is_subset_of(&m1) && m1.is_subset_of(&full));
        assert_eq!(LocalityMask::from_topology(&topo, 2), LocalityMask { d: 2, ..full.clone() });
    }

    #[test]
    fn text_dump_round_trips_exactly() {
        let p = PlantModel::generate(3, 4, 11, 0.2, 0.75).unwrap();
        let back = PlantModel::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }
}
