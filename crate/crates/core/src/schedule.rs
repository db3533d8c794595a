//! Orthogonal vector sets and the periodic matrix-valued edge weights built
//! from them.
//!
//! For `k >= 1` every edge weight is a rank-2 combination of two projectors,
//! `γ P(v_ρ(k)) + ζ P(v_D)` with `D = d + d'`. The index `ρ(k)` cycles through
//! `1..=D-1`, so over one period every vector of the set is touched and the
//! summed weight becomes positive definite. At `k = 0` the weight is
//! `α P(v_1) + β P(v_D)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, projector, Matrix};
use crate::topology::{Edge, EdgeMap, Topology};

const ORTHO_TOL: f64 = 1e-12;

/// `D = d + d'` mutually orthogonal vectors in `R^D`.
///
/// Coordinates `0..d'` are the virtual block, `d'..D` the real block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthoVectorSet {
    d: usize,
    d_virtual: usize,
    vectors: Vec<Vec<f64>>,
    #[serde(skip)]
    projectors: Vec<Matrix>,
}

impl OrthoVectorSet {
    /// Closed-form construction: for `i < D`,
    /// `v_i = (1/i, -1/i, ..., -1/i, 1, 0, ..., 0)` with `i - 1` negative
    /// entries followed by a single `1` at position `i + 1`; the last vector
    /// is `(1/D, -1/D, ..., -1/D)`.
    pub fn build(d: usize, d_virtual: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("d", "state dimension must be at least 1"));
        }
        if d_virtual < 3 {
            return Err(Error::config(
                "d_virtual",
                format!("virtual dimension must be >= 3, got {d_virtual}"),
            ));
        }
        let dim = d + d_virtual;
        let vectors = (1..=dim)
            .map(|i| {
                let inv = 1.0 / i as f64;
                let mut v = vec![0.0; dim];
                v[0] = inv;
                for x in v.iter_mut().take(i).skip(1) {
                    *x = -inv;
                }
                if i < dim {
                    v[i] = 1.0;
                }
                v
            })
            .collect();
        Self::from_vectors(d, d_virtual, vectors)
    }

    /// Validates a user-supplied set against the four structural conditions.
    pub fn from_vectors(d: usize, d_virtual: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = d + d_virtual;
        if d_virtual < 3 {
            return Err(Error::config("d_virtual", "virtual dimension must be >= 3"));
        }
        if vectors.len() != dim || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension(format!(
                "expected {dim} vectors of length {dim}"
            )));
        }
        let scale = vectors
            .iter()
            .flatten()
            .fold(0.0_f64, |m, x| m.max(x.abs()));
        let nz = |v: &[f64]| v.iter().filter(|x| x.abs() > ORTHO_TOL * scale).count();

        for i in 0..dim {
            for j in i + 1..dim {
                let c = dot(&vectors[i], &vectors[j]);
                if c.abs() > ORTHO_TOL * scale * scale * dim as f64 {
                    return Err(Error::InvalidInput(format!(
                        "v_{} and v_{} are not orthogonal (dot {c:e})",
                        i + 1,
                        j + 1
                    )));
                }
            }
            if nz(&vectors[i]) < 2 {
                return Err(Error::InvalidInput(format!(
                    "v_{} has fewer than two nonzero entries",
                    i + 1
                )));
            }
        }
        let first = &vectors[0];
        if nz(first) >= d_virtual {
            return Err(Error::InvalidInput(format!(
                "v_1 must have fewer than {d_virtual} nonzero entries"
            )));
        }
        if first[d_virtual..]
            .iter()
            .any(|x| x.abs() > ORTHO_TOL * scale)
        {
            return Err(Error::InvalidInput(
                "v_1 must be supported on the virtual block".into(),
            ));
        }
        if nz(&vectors[dim - 1]) != dim {
            return Err(Error::InvalidInput(format!(
                "every entry of v_{dim} must be nonzero"
            )));
        }
        let projectors = vectors
            .iter()
            .map(|v| projector(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            d_virtual,
            vectors,
            projectors,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_virtual(&self) -> usize {
        self.d_virtual
    }

    /// Lifted dimension `d + d'`.
    pub fn dim(&self) -> usize {
        self.d + self.d_virtual
    }

    /// Weight period `d + d' - 1`.
    pub fn period(&self) -> usize {
        self.dim() - 1
    }

    /// `v_i` with the 1-based index used throughout the protocol.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i - 1]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Dense vector `v_D`.
    pub fn last(&self) -> &[f64] {
        &self.vectors[self.dim() - 1]
    }

    pub fn projector(&self, i: usize) -> &Matrix {
        &self.projectors[i - 1]
    }

    /// Rebuilds the projector cache after deserialization.
    pub fn revalidate(self) -> Result<Self> {
        Self::from_vectors(self.d, self.d_virtual, self.vectors)
    }
}

/// Periodic index: `k mod period`, with `period` in place of 0.
pub fn rho(k: u64, period: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidStep(0));
    }
    let r = (k % period as u64) as usize;
    Ok(if r == 0 { period } else { r })
}

/// Upper bound `1 / (4 (n - 1) σ)` for every sampled coefficient.
pub fn coefficient_bound(n: usize, sigma: f64) -> f64 {
    1.0 / (4.0 * (n as f64 - 1.0) * sigma)
}

/// Seeded per-edge coefficient tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSchedule {
    n: usize,
    sigma: f64,
    period: usize,
    seed: u64,
    edges: Vec<Edge>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `gamma[e][s - 1]` for `s = ρ(k)`.
    gamma: Vec<Vec<f64>>,
    zeta: Vec<Vec<f64>>,
}

impl WeightSchedule {
    /// Samples every coefficient uniformly from the open interval
    /// `(0, 1 / (4 (n - 1) σ))`. Edges are visited in canonical order and,
    /// per edge, `α, β` are drawn before the `γ, ζ` pairs for `s = 1..period`.
    pub fn sample(topology: &Topology, period: usize, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("sigma", "step size must be positive"));
        }
        if period == 0 {
            return Err(Error::config("d_virtual", "weight period must be positive"));
        }
        let bound = coefficient_bound(topology.n(), sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || loop {
            let x = rng.gen_range(0.0..bound);
            if x > 0.0 {
                break x;
            }
        };
        let edges: Vec<Edge> = topology.edges().collect();
        let mut alpha = Vec::with_capacity(edges.len());
        let mut beta = Vec::with_capacity(edges.len());
        let mut gamma = Vec::with_capacity(edges.len());
        let mut zeta = Vec::with_capacity(edges.len());
        for _ in &edges {
            alpha.push(draw());
            beta.push(draw());
            let mut g = Vec::with_capacity(period);
            let mut z = Vec::with_capacity(period);
            for _ in 0..period {
                g.push(draw());
                z.push(draw());
            }
            gamma.push(g);
            zeta.push(z);
        }
        Ok(Self {
            n: topology.n(),
            sigma,
            period,
            seed,
            edges,
            alpha,
            beta,
            gamma,
            zeta,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn bound(&self) -> f64 {
        coefficient_bound(self.n, self.sigma)
    }

    fn index(&self, edge: Edge) -> Result<usize> {
        self.edges.binary_search(&edge).map_err(|_| {
            let (i, j) = edge.endpoints();
            Error::InvalidQuery(format!("edge ({i}, {j}) is not scheduled"))
        })
    }

    /// `(α, β)` for `k = 0`.
    pub fn initial_coefficients(&self, edge: Edge) -> Result<(f64, f64)> {
        let e = self.index(edge)?;
        Ok((self.alpha[e], self.beta[e]))
    }

    /// `(γ, ζ)` in force at step `k >= 1`.
    pub fn coefficients(&self, edge: Edge, k: u64) -> Result<(f64, f64)> {
        let e = self.index(edge)?;
        let s = rho(k, self.period)?;
        Ok((self.gamma[e][s - 1], self.zeta[e][s - 1]))
    }

    /// Every sampled coefficient, for range checks.
    pub fn all_coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(self.gamma.iter().flatten())
            .chain(self.zeta.iter().flatten())
            .copied()
    }

    /// Multiplies every coefficient by `factor`; used to probe the limit of
    /// vanishing weights.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        let f = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        f(&mut s.alpha);
        f(&mut s.beta);
        s.gamma.iter_mut().for_each(f);
        s.zeta.iter_mut().for_each(f);
        s
    }
}

/// `A_ij(k)` for a scheduled edge.
pub fn edge_weight(
    schedule: &WeightSchedule,
    vectors: &OrthoVectorSet,
    edge: Edge,
    k: u64,
) -> Result<Matrix> {
    let last = vectors.dim();
    if k == 0 {
        let (a, b) = schedule.initial_coefficients(edge)?;
        return Ok(&vectors.projector(1).scale(a) + &vectors.projector(last).scale(b));
    }
    let (g, z) = schedule.coefficients(edge, k)?;
    let s = rho(k, schedule.period())?;
    Ok(&vectors.projector(s).scale(g) + &vectors.projector(last).scale(z))
}

/// `Σ_{k ∈ [k_from, k_to)} A_ij(k)`.
pub fn union_weight(
    schedule: &WeightSchedule,
    vectors: &OrthoVectorSet,
    edge: Edge,
    k_from: u64,
    k_to: u64,
) -> Result<Matrix> {
    if k_from >= k_to {
        return Err(Error::InvalidInput(format!(
            "empty interval [{k_from}, {k_to})"
        )));
    }
    let mut sum = Matrix::zeros(vectors.dim(), vectors.dim());
    for k in k_from..k_to {
        sum += &edge_weight(schedule, vectors, edge, k)?;
    }
    Ok(sum)
}

/// Source of per-edge weights at each step. Both endpoints of an edge apply
/// the same matrix.
pub trait EdgeWeights {
    fn dim(&self) -> usize;
    fn weight(&self, edge: Edge, k: u64) -> Matrix;

    fn weights_at(&self, topology: &Topology, k: u64) -> EdgeMap {
        topology.edges().map(|e| (e, self.weight(e, k))).collect()
    }
}

/// The switching weights of the privacy-preserving protocol.
#[derive(Debug, Clone)]
pub struct SwitchingWeights {
    pub schedule: WeightSchedule,
    pub vectors: OrthoVectorSet,
}

impl SwitchingWeights {
    pub fn new(schedule: WeightSchedule, vectors: OrthoVectorSet) -> Result<Self> {
        if schedule.period() != vectors.period() {
            return Err(Error::Dimension(format!(
                "schedule period {} does not match vector set period {}",
                schedule.period(),
                vectors.period()
            )));
        }
        Ok(Self { schedule, vectors })
    }

    pub fn sigma(&self) -> f64 {
        self.schedule.sigma()
    }
}

impl EdgeWeights for SwitchingWeights {
    fn dim(&self) -> usize {
        self.vectors.dim()
    }

    fn weight(&self, edge: Edge, k: u64) -> Matrix {
        edge_weight(&self.schedule, &self.vectors, edge, k).expect("edge belongs to the schedule")
    }
}

/// Time-invariant weights.
#[derive(Debug, Clone)]
pub struct StaticWeights {
    dim: usize,
    weights: EdgeMap,
}

impl StaticWeights {
    pub fn new(dim: usize, weights: EdgeMap) -> Result<Self> {
        if weights.values().any(|w| w.rows() != dim || w.cols() != dim) {
            return Err(Error::Dimension(format!(
                "static weights must be {dim}x{dim}"
            )));
        }
        Ok(Self { dim, weights })
    }

    /// The same matrix on every edge.
    pub fn uniform(topology: &Topology, weight: Matrix) -> Result<Self> {
        let dim = weight.rows();
        Self::new(dim, topology.edges().map(|e| (e, weight.clone())).collect())
    }

    pub fn map(&self) -> &EdgeMap {
        &self.weights
    }
}

impl EdgeWeights for StaticWeights {
    fn dim(&self) -> usize {
        self.dim
    }

    fn weight(&self, edge: Edge, _k: u64) -> Matrix {
        self.weights
            .get(&edge)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.dim, self.dim))
    }
}

/// The positive semi-definite block `[[1,1,0],[1,1,0],[0,0,0]]`, zero-padded
/// to `dim × dim`. A static network carrying it on every edge only reaches
/// cluster consensus.
pub fn cluster_weight(dim: usize) -> Matrix {
    assert!(dim >= 2);
    let mut m = Matrix::zeros(dim, dim);
    m[(0, 0)] = 1.0;
    m[(0, 1)] = 1.0;
    m[(1, 0)] = 1.0;
    m[(1, 1)] = 1.0;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rank_of, sym_eigen, DEFAULT_TOL};
    use crate::topology::reference_five_agent;
    use approx::assert_abs_diff_eq;

    fn setup(seed: u64) -> (Topology, SwitchingWeights) {
        let t = reference_five_agent(&[0]);
        let v = OrthoVectorSet::build(3, 3).unwrap();
        let s = WeightSchedule::sample(&t, v.period(), 2.0, seed).unwrap();
        (t, SwitchingWeights::new(s, v).unwrap())
    }

    #[test]
    fn closed_form_matches_reference_vectors() {
        let v = OrthoVectorSet::build(3, 3).unwrap();
        assert_eq!(v.vector(1), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.vector(2), &[0.5, -0.5, 1.0, 0.0, 0.0, 0.0]);
        let third = 1.0 / 3.0;
        assert_eq!(v.vector(3), &[third, -third, -third, 1.0, 0.0, 0.0]);
        let sixth = 1.0 / 6.0;
        assert_eq!(
            v.vector(6),
            &[sixth, -sixth, -sixth, -sixth, -sixth, -sixth]
        );
    }

    #[test]
    fn ortho_sets_are_orthogonal_for_many_shapes() {
        for d in 1..6 {
            for dv in 3..7 {
                let v = OrthoVectorSet::build(d, dv).unwrap();
                for i in 1..=v.dim() {
                    for j in i + 1..=v.dim() {
                        assert!(dot(v.vector(i), v.vector(j)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn small_virtual_dimension_is_rejected() {
        assert!(matches!(
            OrthoVectorSet::build(3, 2),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn custom_sets_are_validated() {
        // v_1 touching the real block
        let mut vs = OrthoVectorSet::build(1, 3).unwrap().vectors().to_vec();
        vs.swap(0, 2);
        assert!(OrthoVectorSet::from_vectors(1, 3, vs).is_err());
        // not orthogonal
        let mut vs = OrthoVectorSet::build(1, 3).unwrap().vectors().to_vec();
        vs[1][0] += 0.1;
        assert!(OrthoVectorSet::from_vectors(1, 3, vs).is_err());
    }

    #[test]
    fn rho_periodic_index() {
        assert_eq!(rho(1, 5).unwrap(), 1);
        assert_eq!(rho(5, 5).unwrap(), 5);
        assert_eq!(rho(6, 5).unwrap(), 1);
        assert_eq!(rho(7, 7).unwrap(), 7);
        assert_eq!(rho(2 * 5 + 3, 5).unwrap(), 3);
        assert!(matches!(rho(0, 5), Err(Error::InvalidStep(0))));
    }

    #[test]
    fn coefficients_inside_open_interval() {
        let (_, w) = setup(11);
        assert_abs_diff_eq!(w.schedule.bound(), 0.03125);
        for c in w.schedule.all_coefficients() {
            assert!(c > 0.0 && c < 0.03125);
        }
    }

    #[test]
    fn large_sigma_still_samples_positive() {
        let t = reference_five_agent(&[]);
        let s = WeightSchedule::sample(&t, 5, 1e6, 3).unwrap();
        let b = s.bound();
        assert!(b > 0.0);
        assert!(s.all_coefficients().all(|c| c > 0.0 && c < b));
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = reference_five_agent(&[]);
        let a = WeightSchedule::sample(&t, 5, 2.0, 42).unwrap();
        let b = WeightSchedule::sample(&t, 5, 2.0, 42).unwrap();
        let c = WeightSchedule::sample(&t, 5, 2.0, 43).unwrap();
        let ca: Vec<f64> = a.all_coefficients().collect();
        assert_eq!(ca, b.all_coefficients().collect::<Vec<_>>());
        assert_ne!(ca, c.all_coefficients().collect::<Vec<_>>());
    }

    #[test]
    fn periodic_weights_have_rank_two() {
        let (t, w) = setup(5);
        for e in t.edges() {
            for k in 1..=12 {
                let a = w.weight(e, k);
                assert_eq!(rank_of(&a, DEFAULT_TOL).unwrap(), 2);
            }
            assert_eq!(rank_of(&w.weight(e, 0), DEFAULT_TOL).unwrap(), 2);
        }
    }

    #[test]
    fn weight_eigen_relations() {
        let (t, w) = setup(9);
        let v = &w.vectors;
        for e in t.edges() {
            for k in 1..=5u64 {
                let a = w.weight(e, k);
                let s = rho(k, 5).unwrap();
                let (g, z) = w.schedule.coefficients(e, k).unwrap();
                let av = a.matvec(v.vector(s));
                for (x, y) in av.iter().zip(v.vector(s)) {
                    assert_abs_diff_eq!(*x, g * y, epsilon = 1e-14);
                }
                let al = a.matvec(v.last());
                for (x, y) in al.iter().zip(v.last()) {
                    assert_abs_diff_eq!(*x, z * y, epsilon = 1e-14);
                }
                for u in 1..v.dim() {
                    if u == s {
                        continue;
                    }
                    let r = a.matvec(v.vector(u));
                    assert!(r.iter().all(|x| x.abs() < 1e-14));
                }
            }
        }
    }

    #[test]
    fn union_over_a_period_is_positive_definite() {
        let (t, w) = setup(3);
        for e in t.edges() {
            let u = union_weight(&w.schedule, &w.vectors, e, 1, 6).unwrap();
            let eig = sym_eigen(&u).unwrap();
            assert!(eig.values[0] > 0.0);
            let single = union_weight(&w.schedule, &w.vectors, e, 1, 2).unwrap();
            assert_eq!(rank_of(&single, DEFAULT_TOL).unwrap(), 2);
            let pair = &edge_weight(&w.schedule, &w.vectors, e, 3).unwrap()
                + &edge_weight(&w.schedule, &w.vectors, e, 8).unwrap();
            let twice = edge_weight(&w.schedule, &w.vectors, e, 3)
                .unwrap()
                .scale(2.0);
            assert!(pair.max_abs_diff(&twice) < 1e-15);
        }
        assert!(union_weight(&w.schedule, &w.vectors, t.edges().next().unwrap(), 3, 3).is_err());
    }

    #[test]
    fn cluster_block_is_padded() {
        let m = cluster_weight(6);
        assert_eq!(rank_of(&m, DEFAULT_TOL).unwrap(), 1);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(2, 2)], 0.0);
    }
}
