//! Undirected communication graphs with agent roles.
//!
//! Agents are numbered `0..n` throughout the library. Configuration files use
//! 1-based numbering and are converted on load.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix};

/// Undirected edge stored as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(usize, usize);

impl Edge {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidInput(format!("self-loop on agent {i}")));
        }
        Ok(Edge(i.min(j), i.max(j)))
    }

    pub fn endpoints(self) -> (usize, usize) {
        (self.0, self.1)
    }

    pub fn contains(self, agent: usize) -> bool {
        self.0 == agent || self.1 == agent
    }

    /// The endpoint that is not `agent`.
    pub fn other(self, agent: usize) -> Option<usize> {
        if self.0 == agent {
            Some(self.1)
        } else if self.1 == agent {
            Some(self.0)
        } else {
            None
        }
    }
}

/// Per-edge matrix weights keyed by canonical edge.
pub type EdgeMap = BTreeMap<Edge, Matrix>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Legitimate,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<Edge>,
    roles: Vec<Role>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl Topology {
    /// Builds a topology over agents `0..n`; `adversaries` lists the
    /// honest-but-curious agents, everyone else is legitimate.
    pub fn new(n: usize, edges: &[(usize, usize)], adversaries: &[usize]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "a network needs at least two agents, got {n}"
            )));
        }
        let mut set = BTreeSet::new();
        let mut adjacency = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            for a in [i, j] {
                if a >= n {
                    return Err(Error::InvalidAgent { agent: a, n });
                }
            }
            let e = Edge::new(i, j)?;
            if !set.insert(e) {
                return Err(Error::InvalidInput(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[i].insert(j);
            adjacency[j].insert(i);
        }
        let mut roles = vec![Role::Legitimate; n];
        for &a in adversaries {
            if a >= n {
                return Err(Error::InvalidAgent { agent: a, n });
            }
            roles[a] = Role::Adversarial;
        }
        Ok(Self {
            n,
            edges: set,
            roles,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        Edge::new(i, j).is_ok_and(|e| self.edges.contains(&e))
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn adversaries(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.roles[i] == Role::Adversarial)
            .collect()
    }

    pub fn is_legitimate(&self, i: usize) -> bool {
        self.roles[i] == Role::Legitimate
    }

    pub fn neighbors(&self, i: usize) -> Result<&BTreeSet<usize>> {
        self.adjacency.get(i).ok_or(Error::InvalidAgent {
            agent: i,
            n: self.n,
        })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Same graph with one edge removed.
    pub fn without_edge(&self, i: usize, j: usize) -> Result<Self> {
        let e = Edge::new(i, j)?;
        if !self.edges.contains(&e) {
            return Err(Error::InvalidInput(format!("no edge ({i}, {j}) to remove")));
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&x| x != e)
            .map(|x| x.endpoints())
            .collect();
        Topology::new(self.n, &edges, &self.adversaries())
    }

    pub fn is_connected(&self) -> bool {
        reachable_count(self.n, |i| self.adjacency[i].iter().copied().collect()) == self.n
    }

    /// Whether some neighbor of the legitimate agent `b` is also legitimate.
    pub fn legitimate_neighbor_exists(&self, b: usize) -> Result<bool> {
        let nb = self.neighbors(b)?;
        if !self.is_legitimate(b) {
            return Err(Error::InvalidQuery(format!(
                "agent {b} is adversarial; the query is defined for legitimate agents"
            )));
        }
        Ok(nb.iter().any(|&j| self.is_legitimate(j)))
    }

    /// Whether the edges carrying positive-definite weights (minimum
    /// eigenvalue above `tol`) form a connected spanning subgraph.
    pub fn has_positive_spanning_tree(&self, weights: &EdgeMap, tol: f64) -> Result<bool> {
        let mut pd_adj = vec![Vec::new(); self.n];
        for e in self.edges() {
            let Some(w) = weights.get(&e) else { continue };
            let eig = sym_eigen(w)?;
            let min = eig.values.first().copied().unwrap_or(0.0);
            if min > tol {
                let (i, j) = e.endpoints();
                pd_adj[i].push(j);
                pd_adj[j].push(i);
            }
        }
        Ok(reachable_count(self.n, |i| pd_adj[i].clone()) == self.n)
    }
}

fn reachable_count(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> usize {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count
}

/// The five-agent network used in the reference simulation, 0-based:
/// edges 1-2, 2-3, 1-3, 2-5, 3-4, 4-5 in 1-based numbering.
pub fn reference_five_agent(adversaries: &[usize]) -> Topology {
    Topology::new(
        5,
        &[(0, 1), (1, 2), (0, 2), (1, 4), (2, 3), (3, 4)],
        adversaries,
    )
    .expect("static topology is valid")
}
