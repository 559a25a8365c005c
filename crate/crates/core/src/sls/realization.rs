use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::SystemResponse;
use crate::error::{Error, Result};
use crate::plant::{Topology, UNBOUNDED};

/// Internal state of the disturbance-reconstruction realization of a system
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct SlsRuntimeState {
    /// Reconstructed disturbances, newest first; always `T` entries.
    pub w_hat_buffer: VecDeque<DVector<f64>>,
    /// Predicted nominal state for the next measurement.
    pub x_hat_next: DVector<f64>,
}

pub fn runtime_init(response: &SystemResponse, x0: &DVector<f64>) -> SlsRuntimeState {
    let n = response.state_dim();
    SlsRuntimeState {
        w_hat_buffer: std::iter::repeat_n(DVector::zeros(n), response.horizon()).collect(),
        x_hat_next: x0.clone(),
    }
}

/// One controller step:
///
/// ```text
/// w_hat = x - x_hat
/// u     = sum_{k=1..T} Phi_u(k) w_hat[t-k+1]
/// x_hat = sum_{k=2..T} Phi_x(k) w_hat[t-k+2]
/// ```
///
/// The plant then evolves as `x+ = A x + B u + w`, and the closed loop satisfies
/// `x = Phi_x * w`, `u = Phi_u * w` exactly for any achievable response.
pub fn runtime_step(state: &mut SlsRuntimeState, response: &SystemResponse, x_measured: &DVector<f64>) -> DVector<f64> {
    let w_hat = x_measured - &state.x_hat_next;
    state.w_hat_buffer.pop_back();
    state.w_hat_buffer.push_front(w_hat);

    let mut u = DVector::zeros(response.input_dim());
    for (phi, w) in response.phi_u.iter().zip(&state.w_hat_buffer) {
        u.gemv(1.0, phi, w, 1.0);
    }
    state.x_hat_next.fill(0.0);
    for (phi, w) in response.phi_x.iter().skip(1).zip(&state.w_hat_buffer) {
        state.x_hat_next.gemv(1.0, phi, w, 1.0);
    }
    u
}

/// Centralized wrapper owning its response.
#[derive(Debug, Clone)]
pub struct SlsController {
    response: SystemResponse,
    state: SlsRuntimeState,
}

impl SlsController {
    pub fn new(response: SystemResponse, x0: &DVector<f64>) -> Self {
        let state = runtime_init(&response, x0);
        Self { response, state }
    }

    pub fn response(&self) -> &SystemResponse {
        &self.response
    }

    pub fn state(&self) -> &SlsRuntimeState {
        &self.state
    }

    pub fn reset(&mut self, x0: &DVector<f64>) {
        self.state = runtime_init(&self.response, x0);
    }

    pub fn step(&mut self, x_measured: &DVector<f64>) -> DVector<f64> {
        runtime_step(&mut self.state, &self.response, x_measured)
    }
}

/// Slices of the response that one node needs: its own rows, restricted to
/// the columns of the nodes it may hear from.
#[derive(Debug, Clone)]
struct NodeBlocks {
    neighbors: Vec<usize>,
    /// `phi_u[k][nb]`: rows of this node's inputs, columns of neighbor `nb`'s states.
    phi_u: Vec<Vec<DMatrix<f64>>>,
    phi_x: Vec<Vec<DMatrix<f64>>>,
}

/// Per-node implementation of the same realization. Node `i` measures only
/// its own states, reconstructs its own disturbance, and combines the
/// reconstructions of the nodes within `d` hops.
///
/// Construction drops every response entry that would require information
/// from farther away. With `audit` set those entries must be exactly zero and
/// every neighbor read is checked against the communication graph.
#[derive(Debug, Clone)]
pub struct DistributedRealization {
    nodes: Vec<NodeBlocks>,
    states_per_node: usize,
    inputs_per_node: usize,
    horizon: usize,
    audit: bool,
    allowed: Vec<Vec<bool>>,
    /// Per node: newest-first reconstructed local disturbances.
    buffers: Vec<VecDeque<DVector<f64>>>,
    x_hat: Vec<DVector<f64>>,
    reads: Vec<usize>,
}

impl DistributedRealization {
    pub fn new(
        response: &SystemResponse,
        topology: &Topology,
        d: usize,
        states_per_node: usize,
        inputs_per_node: usize,
        audit: bool,
    ) -> Result<Self> {
        let count = topology.node_count();
        if response.state_dim() != count * states_per_node || response.input_dim() != count * inputs_per_node {
            return Err(Error::dim("response does not match topology"));
        }
        let (sx, su) = (states_per_node, inputs_per_node);
        let mut allowed = vec![vec![false; count]; count];
        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let neighbors = if d == UNBOUNDED {
                (0..count).collect()
            } else {
                topology.neighborhood(i, d)
            };
            for &j in &neighbors {
                allowed[i][j] = true;
            }
            if audit {
                for j in (0..count).filter(|&j| !allowed[i][j]) {
                    let leak = response
                        .phi_x
                        .iter()
                        .map(|m| m.view((i * sx, j * sx), (sx, sx)).amax())
                        .chain(response.phi_u.iter().map(|m| m.view((i * su, j * sx), (su, sx)).amax()))
                        .fold(0.0, f64::max);
                    if leak != 0.0 {
                        return Err(Error::param(format!(
                            "node {i} would need information from node {j} ({leak:.3e}) beyond {d} hops"
                        )));
                    }
                }
            }
            let slice = |blocks: &[DMatrix<f64>], r0: usize, rows: usize| -> Vec<Vec<DMatrix<f64>>> {
                blocks
                    .iter()
                    .map(|m| {
                        neighbors
                            .iter()
                            .map(|&j| m.view((r0, j * sx), (rows, sx)).into_owned())
                            .collect()
                    })
                    .collect()
            };
            nodes.push(NodeBlocks {
                phi_u: slice(&response.phi_u, i * su, su),
                phi_x: slice(&response.phi_x, i * sx, sx),
                neighbors,
            });
        }
        let horizon = response.horizon();
        Ok(Self {
            nodes,
            states_per_node: sx,
            inputs_per_node: su,
            horizon,
            audit,
            allowed,
            buffers: vec![std::iter::repeat_n(DVector::zeros(sx), horizon).collect(); count],
            x_hat: vec![DVector::zeros(sx); count],
            reads: vec![0; count],
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.nodes[node].neighbors
    }

    /// Number of remote reconstructions each node has read so far.
    pub fn read_counts(&self) -> &[usize] {
        &self.reads
    }

    /// Resets all nodes; `x0` is split into per-node slices.
    pub fn reset(&mut self, x0: &DVector<f64>) {
        let sx = self.states_per_node;
        for (i, (buf, xh)) in self.buffers.iter_mut().zip(&mut self.x_hat).enumerate() {
            buf.iter_mut().for_each(|w| w.fill(0.0));
            xh.copy_from(&x0.rows(i * sx, sx));
        }
    }

    /// Phase one for node `i`: reconstruct and publish its local disturbance.
    pub fn observe(&mut self, node: usize, local_state: &DVector<f64>) {
        let w = local_state - &self.x_hat[node];
        let buf = &mut self.buffers[node];
        buf.pop_back();
        buf.push_front(w);
    }

    /// Phase two for node `i`: its input and next prediction from neighbor
    /// reconstructions. Every node must have observed first.
    pub fn act(&mut self, node: usize) -> Result<DVector<f64>> {
        let blocks = &self.nodes[node];
        let mut u = DVector::zeros(self.inputs_per_node);
        let mut xh = DVector::zeros(self.states_per_node);
        for (slot, &j) in blocks.neighbors.iter().enumerate() {
            if self.audit && !self.allowed[node][j] {
                return Err(Error::param(format!("node {node} read node {j} outside its neighborhood")));
            }
            let buf = &self.buffers[j];
            for k in 0..self.horizon {
                u.gemv(1.0, &blocks.phi_u[k][slot], &buf[k], 1.0);
                if k + 1 < self.horizon {
                    xh.gemv(1.0, &blocks.phi_x[k + 1][slot], &buf[k], 1.0);
                }
            }
            if j != node {
                self.reads[node] += 1;
            }
        }
        self.x_hat[node] = xh;
        Ok(u)
    }

    /// Both phases for every node on a full state vector.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (sx, su) = (self.states_per_node, self.inputs_per_node);
        for i in 0..self.node_count() {
            self.observe(i, &x.rows(i * sx, sx).into_owned());
        }
        let mut u = DVector::zeros(self.node_count() * su);
        for i in 0..self.node_count() {
            let ui = self.act(i)?;
            u.rows_mut(i * su, su).copy_from(&ui);
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{LinearSystem, PlantModel};
    use crate::sls::synthesize_h2;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_response() -> (LinearSystem, SystemResponse) {
        // x+ = 2x + u with the deadbeat T = 2 response.
        let sys = LinearSystem::new(dmatrix![2.0], dmatrix![1.0]).unwrap();
        let resp = SystemResponse::new(
            vec![dmatrix![1.0], dmatrix![1.0 / 3.0]],
            vec![dmatrix![-5.0 / 3.0], dmatrix![-2.0 / 3.0]],
        )
        .unwrap();
        (sys, resp)
    }

    #[test]
    fn init_is_quiet() {
        let (_, resp) = scalar_response();
        let x0 = DVector::from_element(1, 3.0);
        let mut st = runtime_init(&resp, &x0);
        assert_eq!(st.x_hat_next, x0);
        assert!(st.w_hat_buffer.iter().all(|w| w.amax() == 0.0));
        assert_eq!(runtime_step(&mut st, &resp, &x0)[0], 0.0);
    }

    #[test]
    fn impulse_reproduces_columns() {
        let (sys, resp) = scalar_response();
        let mut st = runtime_init(&resp, &DVector::zeros(1));
        let mut x = DVector::zeros(1);
        let mut xs = Vec::new();
        let mut us = Vec::new();
        for t in 0..5 {
            let u = runtime_step(&mut st, &resp, &x);
            let w = DVector::from_element(1, if t == 0 { 1.0 } else { 0.0 });
            xs.push(x[0]);
            us.push(u[0]);
            x = sys.step(&x, &u, &w).unwrap();
        }
        let expect_x = [0.0, 1.0, 1.0 / 3.0, 0.0, 0.0];
        let expect_u = [0.0, -5.0 / 3.0, -2.0 / 3.0, 0.0, 0.0];
        for t in 0..5 {
            assert_relative_eq!(xs[t], expect_x[t], epsilon = 1e-12);
            assert_relative_eq!(us[t], expect_u[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn distributed_matches_centralized() {
        let plant = PlantModel::generate(3, 3, 4, 0.2, 1.0).unwrap();
        let mask = plant.locality_mask(2);
        let n = plant.state_dim();
        let resp = synthesize_h2(&plant, 6, &mask, &DMatrix::identity(n, n), &DMatrix::identity(9, 9)).unwrap();
        let mut central = SlsController::new(resp.clone(), &DVector::zeros(n));
        let mut dist = DistributedRealization::new(&resp, plant.topology(), 2, 2, 1, true).unwrap();
        dist.reset(&DVector::zeros(n));
        let mut x = DVector::zeros(n);
        for t in 0..12 {
            let u1 = central.step(&x);
            let u2 = dist.step(&x).unwrap();
            assert_relative_eq!(u1, u2, epsilon = 1e-12);
            let w = DVector::from_fn(n, |i, _| ((i * 7 + t * 3) % 5) as f64 * 0.1 - 0.2);
            x = plant.system().step(&x, &u1, &w).unwrap();
        }
        assert!(dist.read_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn audit_rejects_nonlocal_response() {
        let plant = PlantModel::generate(1, 4, 4, 0.2, 1.0).unwrap();
        let n = plant.state_dim();
        let resp = synthesize_h2(
            &plant,
            6,
            &plant.locality_mask(UNBOUNDED),
            &DMatrix::identity(n, n),
            &DMatrix::identity(4, 4),
        )
        .unwrap();
        assert!(DistributedRealization::new(&resp, plant.topology(), 1, 2, 1, true).is_err());
        assert!(DistributedRealization::new(&resp, plant.topology(), 1, 2, 1, false).is_ok());
    }
}
