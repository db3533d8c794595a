//! Synchronous protocol execution on lifted agent states.
//!
//! Each agent holds `x_i ∈ R^{d'+d}`: the first `d'` coordinates are virtual,
//! the remaining `d` carry the real state. At step `k` every agent sends
//! `y_{j→i}(k) = A_ij(k) x_j(k)` to each neighbor and updates
//!
//! ```text
//! x_i(k+1) = x_i(k) + σ Σ_{j ∈ N_i} (y_{j→i}(k) − A_ij(k) x_i(k))
//! ```
//!
//! The transition from `x(k)` to `x(k+1)` uses `A(k)`, including `k = 0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, norm_inf, sub};
use crate::schedule::EdgeWeights;
use crate::topology::{Edge, EdgeMap, Topology};

/// Split of a lifted vector into virtual and real blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub d: usize,
    pub d_virtual: usize,
}

impl Layout {
    pub fn new(d: usize, d_virtual: usize) -> Self {
        Self { d, d_virtual }
    }

    pub fn dim(&self) -> usize {
        self.d + self.d_virtual
    }

    /// `(virtual, real)` concatenated in that order.
    pub fn lift(&self, real: &[f64], virtual_state: &[f64]) -> Result<Vec<f64>> {
        if real.len() != self.d || virtual_state.len() != self.d_virtual {
            return Err(Error::Dimension(format!(
                "lift expects real of length {} and virtual of length {}, got {} and {}",
                self.d,
                self.d_virtual,
                real.len(),
                virtual_state.len()
            )));
        }
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(virtual_state);
        x.extend_from_slice(real);
        Ok(x)
    }

    pub fn real<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.d_virtual..]
    }

    pub fn virtual_part<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.d_virtual]
    }

    /// Uniform `[0, 1)` virtual states, one per agent, drawn on stream 1 of
    /// the run seed.
    pub fn random_virtual_states(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        (0..n)
            .map(|_| (0..self.d_virtual).map(|_| rng.gen::<f64>()).collect())
            .collect()
    }
}

/// Stacked agent states at step `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkState {
    pub k: u64,
    pub states: Vec<Vec<f64>>,
}

impl NetworkState {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        let dim = states.first().map_or(0, Vec::len);
        if states.is_empty() || states.iter().any(|s| s.len() != dim) {
            return Err(Error::Dimension(
                "all agents need states of the same nonzero length".into(),
            ));
        }
        Ok(Self { k: 0, states })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// `Avg(x) = (1/n) Σ_i x_i`.
    pub fn average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.dim()];
        for s in &self.states {
            axpy(1.0, s, &mut avg);
        }
        let inv = 1.0 / self.n() as f64;
        avg.iter_mut().for_each(|x| *x *= inv);
        avg
    }

    /// `max_i ‖x_i − target‖_∞`.
    pub fn residual(&self, target: &[f64]) -> f64 {
        self.states
            .iter()
            .map(|s| norm_inf(&sub(s, target)))
            .fold(0.0, f64::max)
    }

    /// Largest pairwise `‖x_i − x_j‖_∞`.
    pub fn spread(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                worst = worst.max(norm_inf(&sub(&self.states[i], &self.states[j])));
            }
        }
        worst
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.states.concat()
    }

    pub fn from_stacked(k: u64, n: usize, x: &[f64]) -> Self {
        let dim = x.len() / n;
        Self {
            k,
            states: x.chunks(dim).map(<[f64]>::to_vec).collect(),
        }
    }

    /// `ω = x − 1_n ⊗ target`.
    pub fn error_vector(&self, target: &[f64]) -> Vec<f64> {
        self.states.iter().flat_map(|s| sub(s, target)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().flatten().all(|x| x.is_finite())
    }
}

/// `y_{sender→receiver}(k) = A(k) x_sender(k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub sender: usize,
    pub receiver: usize,
    pub k: u64,
    pub payload: Vec<f64>,
}

/// Everything exchanged during one step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub k: u64,
    pub weights: EdgeMap,
    pub messages: Vec<Message>,
}

impl StepTrace {
    pub fn message(&self, sender: usize, receiver: usize) -> Option<&Message> {
        self.messages
            .iter()
            .find(|m| m.sender == sender && m.receiver == receiver)
    }
}

/// Runs the protocol on a fixed topology with a weight source and step size.
pub struct Simulator<'a> {
    topology: &'a Topology,
    weights: &'a dyn EdgeWeights,
    sigma: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(topology: &'a Topology, weights: &'a dyn EdgeWeights, sigma: f64) -> Self {
        Self {
            topology,
            weights,
            sigma,
        }
    }

    pub fn topology(&self) -> &Topology {
        self.topology
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &dyn EdgeWeights {
        self.weights
    }

    pub fn make_message(
        &self,
        sender: usize,
        receiver: usize,
        x_sender: &[f64],
        k: u64,
    ) -> Result<Message> {
        let edge = Edge::new(sender, receiver)?;
        if !self.topology.has_edge(sender, receiver) {
            return Err(Error::InvalidQuery(format!(
                "no edge between {sender} and {receiver}"
            )));
        }
        let a = self.weights.weight(edge, k);
        Ok(Message {
            sender,
            receiver,
            k,
            payload: a.matvec(x_sender),
        })
    }

    /// One synchronous update, returning the exchanged messages as well.
    pub fn step_traced(&self, state: &NetworkState) -> (NetworkState, StepTrace) {
        let k = state.k;
        let weights = self.weights.weights_at(self.topology, k);
        let mut next = state.states.clone();
        let mut messages = Vec::with_capacity(2 * weights.len());
        for (&edge, a) in &weights {
            let (i, j) = edge.endpoints();
            let y_ji = a.matvec(&state.states[j]);
            let y_ij = a.matvec(&state.states[i]);
            // x_i += σ (A x_j − A x_i), and symmetrically for j
            for (t, (yi, yj)) in y_ji.iter().zip(&y_ij).enumerate() {
                next[i][t] += self.sigma * (yi - yj);
                next[j][t] += self.sigma * (yj - yi);
            }
            messages.push(Message {
                sender: j,
                receiver: i,
                k,
                payload: y_ji,
            });
            messages.push(Message {
                sender: i,
                receiver: j,
                k,
                payload: y_ij,
            });
        }
        (
            NetworkState {
                k: k + 1,
                states: next,
            },
            StepTrace {
                k,
                weights,
                messages,
            },
        )
    }

    pub fn step(&self, state: &NetworkState) -> NetworkState {
        self.step_traced(state).0
    }

    /// Runs `steps` updates, calling `observe(x(k), trace(k))` before each
    /// transition to `x(k + 1)`.
    pub fn run_observed(
        &self,
        initial: &NetworkState,
        steps: usize,
        mut observe: impl FnMut(&NetworkState, &StepTrace),
    ) -> Result<Trajectory> {
        self.check_initial(initial)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(initial.clone());
        for _ in 0..steps {
            let cur = states.last().expect("non-empty");
            let (next, trace) = self.step_traced(cur);
            observe(cur, &trace);
            if !next.is_finite() {
                return Err(Error::Numerical {
                    step: next.k,
                    reason: "non-finite agent state".into(),
                });
            }
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    pub fn run(&self, initial: &NetworkState, steps: usize) -> Result<Trajectory> {
        self.run_observed(initial, steps, |_, _| {})
    }

    /// Steps until `max_i ‖x_i − Avg(x(0))‖_∞ < epsilon` or `max_steps`.
    pub fn run_until(
        &self,
        initial: &NetworkState,
        epsilon: f64,
        max_steps: usize,
    ) -> Result<Trajectory> {
        self.check_initial(initial)?;
        let avg = initial.average();
        let mut states = vec![initial.clone()];
        while states.len() <= max_steps {
            let cur = states.last().expect("non-empty");
            if cur.residual(&avg) < epsilon {
                break;
            }
            let next = self.step(cur);
            if !next.is_finite() {
                return Err(Error::Numerical {
                    step: next.k,
                    reason: "non-finite agent state".into(),
                });
            }
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    fn check_initial(&self, initial: &NetworkState) -> Result<()> {
        if initial.n() != self.topology.n() {
            return Err(Error::Dimension(format!(
                "{} agent states for a network of {}",
                initial.n(),
                self.topology.n()
            )));
        }
        if initial.dim() != self.weights.dim() {
            return Err(Error::Dimension(format!(
                "state dimension {} does not match weight dimension {}",
                initial.dim(),
                self.weights.dim()
            )));
        }
        Ok(())
    }
}

/// `x(0), x(1), ..., x(K)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<NetworkState>,
}

impl Trajectory {
    pub fn initial(&self) -> &NetworkState {
        &self.states[0]
    }

    pub fn last(&self) -> &NetworkState {
        self.states.last().expect("trajectory holds x(0)")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Largest per-coordinate `|mean_i x_i(k) − mean_i x_i(0)|` over all `k`.
    pub fn conservation_residual(&self) -> f64 {
        let avg0 = self.initial().average();
        self.states
            .iter()
            .map(|s| norm_inf(&sub(&s.average(), &avg0)))
            .fold(0.0, f64::max)
    }

    /// First `k` with residual below `epsilon`, measured against `Avg(x(0))`.
    pub fn iterations_to(&self, epsilon: f64) -> Option<usize> {
        let avg0 = self.initial().average();
        self.states.iter().position(|s| s.residual(&avg0) < epsilon)
    }

    /// `‖ω(k)‖` for every recorded step.
    pub fn error_norms(&self) -> Vec<f64> {
        let avg0 = self.initial().average();
        self.states
            .iter()
            .map(|s| norm(&s.error_vector(&avg0)))
            .collect()
    }

    /// CSV with columns `step, agent, coord_index, value`; agents and
    /// coordinates are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "agent", "coord_index", "value"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for s in &self.states {
            for (i, x) in s.states.iter().enumerate() {
                for (c, v) in x.iter().enumerate() {
                    w.write_record(&[
                        s.k.to_string(),
                        (i + 1).to_string(),
                        (c + 1).to_string(),
                        v.to_string(),
                    ])
                    .map_err(|e| Error::Io(e.to_string()))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, Matrix};
    use crate::schedule::{OrthoVectorSet, StaticWeights, SwitchingWeights, WeightSchedule};
    use crate::topology::reference_five_agent;
    use approx::assert_abs_diff_eq;

    fn reference_states() -> Vec<Vec<f64>> {
        vec![
            vec![0.20, 0.30, 0.25, 0.60, 0.32, 0.65],
            vec![0.60, 0.72, 0.57, 0.24, 0.91, 0.95],
            vec![0.52, 0.71, 0.80, 0.20, 0.12, 0.62],
            vec![0.02, 0.04, 0.12, 0.82, 0.38, 0.23],
            vec![0.37, 0.17, 0.77, 0.33, 0.32, 0.72],
        ]
    }

    fn switching(seed: u64) -> (Topology, SwitchingWeights) {
        let t = reference_five_agent(&[0]);
        let v = OrthoVectorSet::build(3, 3).unwrap();
        let s = WeightSchedule::sample(&t, v.period(), 2.0, seed).unwrap();
        (t, SwitchingWeights::new(s, v).unwrap())
    }

    #[test]
    fn lift_orders_virtual_first() {
        let l = Layout::new(3, 3);
        let x = l.lift(&[1.0, 2.0, 3.0], &[9.0, 8.0, 7.0]).unwrap();
        assert_eq!(x, vec![9.0, 8.0, 7.0, 1.0, 2.0, 3.0]);
        assert_eq!(l.real(&x), &[1.0, 2.0, 3.0]);
        assert_eq!(l.virtual_part(&x), &[9.0, 8.0, 7.0]);
        assert!(matches!(
            l.lift(&[1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reference_lift_of_first_agent() {
        let l = Layout::new(3, 3);
        let x = l.lift(&[0.60, 0.32, 0.65], &[0.20, 0.30, 0.25]).unwrap();
        assert_eq!(x, reference_states()[0]);
    }

    #[test]
    fn average_of_reference_states() {
        let s = NetworkState::new(reference_states()).unwrap();
        let avg = s.average();
        let expect = [0.34, 0.39, 0.50, 0.44, 0.41, 0.63];
        for (a, e) in avg.iter().zip(expect) {
            assert!((a - e).abs() <= 0.005, "{a} vs {e}");
        }
        let same = NetworkState::new(vec![vec![1.0, 2.0]; 3]).unwrap();
        assert_eq!(same.average(), vec![1.0, 2.0]);
        let opp = NetworkState::new(vec![vec![1.5, -2.0], vec![-1.5, 2.0]]).unwrap();
        assert_eq!(opp.average(), vec![0.0, 0.0]);
    }

    #[test]
    fn messages_mask_state() {
        let (t, w) = switching(1);
        let sim = Simulator::new(&t, &w, 2.0);
        let zero = sim.make_message(1, 0, &[0.0; 6], 3).unwrap();
        assert!(zero.payload.iter().all(|&x| x == 0.0));
        // v_1 lies in the null space of A(3) = γ P(v_3) + ζ P(v_6)
        let masked = sim.make_message(1, 0, w.vectors.vector(1), 3).unwrap();
        assert!(masked.payload.iter().all(|x| x.abs() < 1e-15));
        assert!(sim.make_message(0, 3, &[0.0; 6], 3).is_err());
    }

    #[test]
    fn message_matches_projector_expansion() {
        let (t, w) = switching(4);
        let sim = Simulator::new(&t, &w, 2.0);
        let x = reference_states()[1].clone();
        let msg = sim.make_message(1, 0, &x, 3).unwrap();
        let (g, z) = w
            .schedule
            .coefficients(Edge::new(0, 1).unwrap(), 3)
            .unwrap();
        let v3 = w.vectors.vector(3);
        let v6 = w.vectors.vector(6);
        let c3 = g * dot(v3, &x) / dot(v3, v3);
        let c6 = z * dot(v6, &x) / dot(v6, v6);
        for t in 0..6 {
            assert_abs_diff_eq!(msg.payload[t], c3 * v3[t] + c6 * v6[t], epsilon = 1e-15);
        }
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let (t, w) = switching(2);
        let sim = Simulator::new(&t, &w, 2.0);
        let c = vec![0.3, -0.1, 0.5, 0.2, 0.9, 1.1];
        let s = NetworkState::new(vec![c.clone(); 5]).unwrap();
        let traj = sim.run(&s, 20).unwrap();
        for st in &traj.states {
            for x in &st.states {
                for (a, b) in x.iter().zip(&c) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn scalar_reduction() {
        let t = Topology::new(2, &[(0, 1)], &[]).unwrap();
        let w = StaticWeights::uniform(&t, Matrix::from_rows(&[vec![0.3]]).unwrap()).unwrap();
        let sim = Simulator::new(&t, &w, 0.5);
        let s = NetworkState::new(vec![vec![1.0], vec![3.0]]).unwrap();
        let n = sim.step(&s);
        assert_abs_diff_eq!(n.states[0][0], 1.0 + 0.5 * 0.3 * 2.0);
        assert_abs_diff_eq!(n.states[1][0], 3.0 - 0.5 * 0.3 * 2.0);
        assert_eq!(n.k, 1);
    }

    #[test]
    fn mean_is_conserved_each_step() {
        let (t, w) = switching(6);
        let sim = Simulator::new(&t, &w, 2.0);
        let s = NetworkState::new(reference_states()).unwrap();
        let traj = sim.run(&s, 200).unwrap();
        assert!(traj.conservation_residual() < 1e-12);
    }

    #[test]
    fn reference_configuration_converges() {
        let (t, w) = switching(2023);
        let sim = Simulator::new(&t, &w, 2.0);
        let s = NetworkState::new(reference_states()).unwrap();
        let traj = sim.run_until(&s, 1e-8, 20_000).unwrap();
        let avg = s.average();
        assert!(traj.last().residual(&avg) < 1e-8);
        let norms = traj.error_norms();
        for k in 1..norms.len() - 1 {
            assert!(norms[k + 1] <= norms[k] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let t = Topology::new(2, &[(0, 1)], &[]).unwrap();
        let w = StaticWeights::uniform(&t, Matrix::identity(1).scale(1e200)).unwrap();
        let sim = Simulator::new(&t, &w, 1e200);
        let s = NetworkState::new(vec![vec![1.0], vec![-1.0]]).unwrap();
        assert!(matches!(sim.run(&s, 10), Err(Error::Numerical { .. })));
    }

    #[test]
    fn csv_has_one_row_per_coordinate() {
        let (t, w) = switching(1);
        let sim = Simulator::new(&t, &w, 2.0);
        let traj = sim
            .run(&NetworkState::new(reference_states()).unwrap(), 2)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,agent,coord_index,value");
        assert_eq!(lines.len(), 1 + 3 * 5 * 6);
        assert_eq!(lines[1], "0,1,1,0.2");
    }
}
