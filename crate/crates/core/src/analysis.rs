//! Spectral checks of the convergence machinery.
//!
//! The central objects are the switching Laplacians `L(k)`, the transition
//! product `Φ(k'', k') = Π (I − σ L(k))`, and the consensus space
//! `R = range(1_n ⊗ I)`. Average consensus over a window holds exactly when
//! the summed Laplacian has null space `R`, which is equivalent to `R` being
//! the common null space of the individual Laplacians and to `Φ` contracting
//! strictly on `R^⊥`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{NetworkState, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{
    assemble_laplacian_with_dim, consensus_space, norm, null_space, projector, sym_eigen, Matrix,
    Subspace,
};
use crate::schedule::{EdgeWeights, OrthoVectorSet, SwitchingWeights, WeightSchedule};
use crate::topology::{EdgeMap, Topology};

/// Margin below one that `μ` must clear to count as a strict contraction.
pub const MU_MARGIN: f64 = 1e-8;

/// Tolerance for subspace equality in the randomized suites.
pub const SUBSPACE_TOL: f64 = 1e-8;

pub fn laplacian_at(topology: &Topology, weights: &dyn EdgeWeights, k: u64) -> Result<Matrix> {
    assemble_laplacian_with_dim(topology, &weights.weights_at(topology, k), weights.dim())
}

/// `ω(k) = x(k) − 1_n ⊗ Avg(x(0))` along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorTrace {
    pub norms: Vec<f64>,
}

impl ErrorTrace {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            norms: traj.error_norms(),
        }
    }

    /// Largest relative increase `‖ω(k+1)‖ − ‖ω(k)‖` over `k >= from`,
    /// normalized by `‖ω(from)‖`. Non-positive when the trace is monotone.
    pub fn worst_increase(&self, from: usize) -> f64 {
        let scale = self
            .norms
            .get(from)
            .copied()
            .unwrap_or(0.0)
            .max(f64::MIN_POSITIVE);
        self.norms
            .windows(2)
            .skip(from)
            .map(|w| (w[1] - w[0]) / scale)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct TransitionProduct {
    pub k_from: u64,
    pub k_to: u64,
    pub matrix: Matrix,
}

impl TransitionProduct {
    pub fn apply(&self, state: &NetworkState) -> NetworkState {
        NetworkState::from_stacked(self.k_to, state.n(), &self.matrix.matvec(&state.stacked()))
    }
}

/// `Φ(k_to, k_from) = (I − σL(k_to − 1)) ⋯ (I − σL(k_from))`.
pub fn transition(
    topology: &Topology,
    weights: &dyn EdgeWeights,
    sigma: f64,
    k_from: u64,
    k_to: u64,
) -> Result<TransitionProduct> {
    if k_from >= k_to {
        return Err(Error::InvalidInput(format!(
            "transition needs k_from < k_to, got [{k_from}, {k_to})"
        )));
    }
    let size = topology.n() * weights.dim();
    let mut phi = Matrix::identity(size);
    for k in k_from..k_to {
        let factor = &Matrix::identity(size) - &laplacian_at(topology, weights, k)?.scale(sigma);
        phi = &factor * &phi;
    }
    Ok(TransitionProduct {
        k_from,
        k_to,
        matrix: phi,
    })
}

fn product_of_factors(laplacians: &[Matrix], sigma: f64) -> Matrix {
    let size = laplacians[0].rows();
    let mut phi = Matrix::identity(size);
    for l in laplacians {
        let factor = &Matrix::identity(size) - &l.scale(sigma);
        phi = &factor * &phi;
    }
    phi
}

#[derive(Debug, Clone, Serialize)]
pub struct NullspaceUnion {
    /// `null(Σ L_i) = R`
    pub union_is_consensus: bool,
    /// `∩ null(L_i) = R`
    pub intersection_is_consensus: bool,
    pub union_dim: usize,
    pub intersection_dim: usize,
    /// Mutual projection residual between `null(Σ L_i)` and `∩ null(L_i)`.
    pub union_vs_intersection: f64,
}

impl NullspaceUnion {
    pub fn identity_holds(&self, tol: f64) -> bool {
        self.union_vs_intersection <= tol
    }

    pub fn equivalence_holds(&self) -> bool {
        self.union_is_consensus == self.intersection_is_consensus
    }
}

fn check_psd_inputs(laplacians: &[Matrix], tol: f64) -> Result<()> {
    if laplacians.is_empty() {
        return Err(Error::InvalidInput("no Laplacians given".into()));
    }
    let size = laplacians[0].rows();
    for (idx, l) in laplacians.iter().enumerate() {
        if l.rows() != size || !l.is_square() {
            return Err(Error::Dimension(format!(
                "Laplacian {idx} has a different shape"
            )));
        }
        let eig = sym_eigen(l)?;
        if eig.values[0] < -eig.zero_threshold(tol).max(1e-12) {
            return Err(Error::InvalidInput(format!(
                "Laplacian {idx} is not positive semi-definite (λ_min = {:e})",
                eig.values[0]
            )));
        }
    }
    Ok(())
}

/// Compares `null(Σ L_i)` with `∩ null(L_i)` and both with `R`.
///
/// The intersection is computed on its own route, as the null space of
/// `Σ (I − P_i)` where `P_i` projects onto `null(L_i)`.
pub fn check_nullspace_union(
    laplacians: &[Matrix],
    n: usize,
    dim: usize,
    tol: f64,
) -> Result<NullspaceUnion> {
    check_psd_inputs(laplacians, tol)?;
    let size = n * dim;
    if laplacians[0].rows() != size {
        return Err(Error::Dimension(format!(
            "Laplacians are {0}x{0}, expected {size}x{size}",
            laplacians[0].rows()
        )));
    }
    let mut sum = Matrix::zeros(size, size);
    let mut complement_sum = Matrix::zeros(size, size);
    for l in laplacians {
        sum += l;
        let p = null_space(l, tol)?.projector();
        complement_sum += &(&Matrix::identity(size) - &p);
    }
    let union = null_space(&sum, tol)?;
    let intersection = null_space(&complement_sum, tol)?;
    let r = consensus_space(n, dim, tol);
    Ok(NullspaceUnion {
        union_is_consensus: union.equals(&r, SUBSPACE_TOL),
        intersection_is_consensus: intersection.equals(&r, SUBSPACE_TOL),
        union_dim: union.dim(),
        intersection_dim: intersection.dim(),
        union_vs_intersection: union.distance(&intersection),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MuCheck {
    /// Largest eigenvalue of `Φ^T Φ` restricted to `R^⊥`.
    pub mu: f64,
    pub union_null_is_consensus: bool,
    /// Eigenvalues of `Φ^T Φ` within `MU_MARGIN` of one.
    pub unit_eigenvalues: usize,
}

impl MuCheck {
    pub fn contracts(&self) -> bool {
        self.mu < 1.0 - MU_MARGIN
    }

    /// `(μ < 1) ⇔ (null(Σ L) = R)`
    pub fn consistent(&self) -> bool {
        self.contracts() == self.union_null_is_consensus
    }
}

/// `μ` of the product `Π (I − σ L_i)` over the given Laplacians, taken in
/// order, together with the union null-space verdict.
///
/// The `dim` unit eigenvalues along `R` are removed by restricting `Φ^T Φ`
/// to `R^⊥` rather than by position in the sorted spectrum.
pub fn mu_criterion(
    laplacians: &[Matrix],
    n: usize,
    dim: usize,
    sigma: f64,
    tol: f64,
) -> Result<MuCheck> {
    check_psd_inputs(laplacians, tol)?;
    for (idx, l) in laplacians.iter().enumerate() {
        let lmax = *sym_eigen(l)?.values.last().unwrap_or(&0.0);
        if sigma * lmax >= 1.0 {
            return Err(Error::Precondition(format!(
                "λ_max(L_{idx}) = {lmax} is not below 1/σ = {}",
                1.0 / sigma
            )));
        }
    }
    let size = n * dim;
    let phi = product_of_factors(laplacians, sigma);
    let gram = &phi.transpose() * &phi;
    let r = consensus_space(n, dim, tol);
    let q = Matrix::from_columns(size, r.complement().basis());
    let restricted = &(&q.transpose() * &gram) * &q;
    let mu = sym_eigen(&restricted)?
        .values
        .last()
        .copied()
        .unwrap_or(0.0);
    let unit_eigenvalues = sym_eigen(&gram)?
        .values
        .iter()
        .filter(|l| (*l - 1.0).abs() <= MU_MARGIN)
        .count();
    let mut sum = Matrix::zeros(size, size);
    for l in laplacians {
        sum += l;
    }
    let union = null_space(&sum, tol)?;
    Ok(MuCheck {
        mu,
        union_null_is_consensus: union.equals(&r, SUBSPACE_TOL),
        unit_eigenvalues,
    })
}

/// `μ` over the window `[k_from, k_to)` of a weight source.
pub fn check_mu_criterion(
    topology: &Topology,
    weights: &dyn EdgeWeights,
    sigma: f64,
    k_from: u64,
    k_to: u64,
    tol: f64,
) -> Result<MuCheck> {
    if k_from >= k_to {
        return Err(Error::InvalidInput(format!(
            "empty window [{k_from}, {k_to})"
        )));
    }
    let ls = (k_from..k_to)
        .map(|k| laplacian_at(topology, weights, k))
        .collect::<Result<Vec<_>>>()?;
    mu_criterion(&ls, topology.n(), weights.dim(), sigma, tol)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaBound {
    pub lambda_max: f64,
    /// `1 / σ`
    pub bound: f64,
}

impl LambdaBound {
    pub fn holds(&self, margin: f64) -> bool {
        self.lambda_max < self.bound - margin
    }
}

pub fn check_lambda_bound(
    topology: &Topology,
    weights: &dyn EdgeWeights,
    sigma: f64,
    k: u64,
) -> Result<LambdaBound> {
    if k == 0 {
        return Err(Error::InvalidStep(0));
    }
    let l = laplacian_at(topology, weights, k)?;
    Ok(LambdaBound {
        lambda_max: sym_eigen(&l)?.values.last().copied().unwrap_or(0.0),
        bound: 1.0 / sigma,
    })
}

/// `null(L)` of a static network next to the edge-kernel space
/// `H = {v : v_i − v_j ∈ null(A_ij) for every edge}`.
#[derive(Debug, Clone)]
pub struct EdgeKernel {
    pub null_space: Subspace,
    /// `H`, computed as the null space of `Σ_e (e_i − e_j)(e_i − e_j)^T ⊗ A_e²`.
    pub edge_space: Subspace,
    /// Largest `‖A_ij (u_i − u_j)‖` over basis vectors `u` of `null(L)`.
    pub edge_condition_residual: f64,
    pub consensus_dim: usize,
}

impl EdgeKernel {
    pub fn matches(&self, tol: f64) -> bool {
        self.null_space.equals(&self.edge_space, tol)
    }

    /// `null(L)` strictly larger than `R`.
    pub fn exceeds_consensus(&self) -> bool {
        self.null_space.dim() > self.consensus_dim
    }
}

pub fn characterize_h(
    topology: &Topology,
    weights: &EdgeMap,
    dim: usize,
    tol: f64,
) -> Result<EdgeKernel> {
    let n = topology.n();
    let l = assemble_laplacian_with_dim(topology, weights, dim)?;
    let ns = null_space(&l, tol)?;

    let mut squared = EdgeMap::new();
    for (&e, w) in weights {
        squared.insert(e, &w.transpose() * w);
    }
    let edge_operator = assemble_laplacian_with_dim(topology, &squared, dim)?;
    let h = null_space(&edge_operator, tol)?;

    let mut worst = 0.0_f64;
    for u in ns.basis() {
        for (&e, w) in weights {
            let (i, j) = e.endpoints();
            let diff: Vec<f64> = (0..dim).map(|c| u[i * dim + c] - u[j * dim + c]).collect();
            worst = worst.max(norm(&w.matvec(&diff)));
        }
    }
    Ok(EdgeKernel {
        null_space: ns,
        edge_space: h,
        edge_condition_residual: worst,
        consensus_dim: consensus_space(n, dim, tol).dim(),
    })
}

/// Outcome of a randomized or exhaustive property suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Worst value of the suite's residual metric.
    pub worst_residual: f64,
    /// Short descriptions of the first few failing cases.
    pub examples: Vec<String>,
    /// Extra counters, e.g. how many instances had `null = R`.
    pub notes: Vec<(String, usize)>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            failures: 0,
            worst_residual: 0.0,
            examples: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, residual: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if residual.is_finite() {
            self.worst_residual = self.worst_residual.max(residual);
        } else {
            self.worst_residual = f64::INFINITY;
        }
        if !ok {
            self.failures += 1;
            if self.examples.len() < 5 {
                self.examples.push(describe());
            }
        }
    }

    fn note(&mut self, key: &str, count: usize) {
        self.notes.push((key.into(), count));
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

/// A switching sequence of PSD Laplacians on a common agent set.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub n: usize,
    pub dim: usize,
    pub laplacians: Vec<Matrix>,
}

impl RandomInstance {
    /// Random graphs (each pair kept with probability 0.6) whose edges carry
    /// sums of `r` random rank-1 projectors, `r ∈ 1..=dim`, so both
    /// `null = R` and enlarged null spaces occur.
    pub fn generate(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(2..=5);
        let dim = rng.gen_range(2..=6);
        let count = rng.gen_range(1..=4);
        let mut laplacians = Vec::with_capacity(count);
        for _ in 0..count {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.6) {
                        edges.push((i, j));
                    }
                }
            }
            let topo = Topology::new(n, &edges, &[]).expect("random edges are valid");
            let mut weights = EdgeMap::new();
            for e in topo.edges() {
                let rank = rng.gen_range(1..=dim);
                let mut w = Matrix::zeros(dim, dim);
                for _ in 0..rank {
                    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let c = rng.gen_range(0.2..1.0);
                    if let Ok(p) = projector(&v) {
                        w += &p.scale(c);
                    }
                }
                weights.insert(e, w);
            }
            laplacians.push(
                assemble_laplacian_with_dim(&topo, &weights, dim).expect("symmetric weights"),
            );
        }
        Self { n, dim, laplacians }
    }

    /// Step size with `σ λ_max(L_i) = 0.9` for the stiffest Laplacian.
    pub fn admissible_sigma(&self) -> Result<f64> {
        let mut lmax = 0.0_f64;
        for l in &self.laplacians {
            lmax = lmax.max(sym_eigen(l)?.values.last().copied().unwrap_or(0.0));
        }
        Ok(if lmax > 0.0 { 0.9 / lmax } else { 1.0 })
    }
}

pub fn random_instances(count: usize, seed: u64) -> Vec<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| RandomInstance::generate(&mut rng))
        .collect()
}

/// `null(Σ L_i) = ∩ null(L_i)` as subspaces, and the `R` equivalence.
pub fn nullspace_suite(instances: &[RandomInstance], tol: f64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("nullspace-union");
    let mut consensus_cases = 0;
    for (idx, inst) in instances.iter().enumerate() {
        let chk = check_nullspace_union(&inst.laplacians, inst.n, inst.dim, tol)?;
        if chk.union_is_consensus {
            consensus_cases += 1;
        }
        let ok = chk.identity_holds(SUBSPACE_TOL) && chk.equivalence_holds();
        report.record(ok, chk.union_vs_intersection, || {
            format!(
                "instance {idx}: n={} dim={} union dim {} vs intersection dim {}",
                inst.n, inst.dim, chk.union_dim, chk.intersection_dim
            )
        });
    }
    report.note("null_equals_consensus", consensus_cases);
    report.note("null_exceeds_consensus", instances.len() - consensus_cases);
    Ok(report)
}

/// `(μ < 1 − margin) ⇔ (null(Σ L) = R)` with an admissible step size.
pub fn contraction_suite(instances: &[RandomInstance], tol: f64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("contraction-criterion");
    let mut contracting = 0;
    for (idx, inst) in instances.iter().enumerate() {
        let sigma = inst.admissible_sigma()?;
        let chk = mu_criterion(&inst.laplacians, inst.n, inst.dim, sigma, tol)?;
        if chk.contracts() {
            contracting += 1;
        }
        let ok = chk.consistent() && chk.unit_eigenvalues >= inst.dim;
        // distance of μ from the decision boundary on the wrong side
        let residual = if ok {
            0.0
        } else {
            (chk.mu - (1.0 - MU_MARGIN)).abs()
        };
        report.record(ok, residual, || {
            format!(
                "instance {idx}: μ = {} but null(ΣL) = R is {}",
                chk.mu, chk.union_null_is_consensus
            )
        });
    }
    report.note("contracting", contracting);
    report.note("non_contracting", instances.len() - contracting);
    Ok(report)
}

/// One period of generated schedules: the period Laplacian sum has null
/// space `R`, and every `λ_max(L(k)) < 1/σ − margin`.
pub fn schedule_suites(
    topology: &Topology,
    d: usize,
    d_virtual: usize,
    sigma: f64,
    seeds: impl IntoIterator<Item = u64>,
    tol: f64,
    lambda_margin: f64,
) -> Result<(SuiteReport, SuiteReport)> {
    let vectors = OrthoVectorSet::build(d, d_virtual)?;
    let dim = vectors.dim();
    let period = vectors.period() as u64;
    let n = topology.n();
    let r = consensus_space(n, dim, tol);
    let mut null_report = SuiteReport::new("period-nullspace");
    let mut lambda_report = SuiteReport::new("step-size-bound");
    for seed in seeds {
        let schedule = WeightSchedule::sample(topology, vectors.period(), sigma, seed)?;
        let w = SwitchingWeights::new(schedule, vectors.clone())?;
        let mut sum = Matrix::zeros(n * dim, n * dim);
        for k in 1..=period {
            let l = laplacian_at(topology, &w, k)?;
            let lmax = sym_eigen(&l)?.values.last().copied().unwrap_or(0.0);
            let bound = 1.0 / sigma;
            lambda_report.record(lmax < bound - lambda_margin, lmax * sigma, || {
                format!("seed {seed}, k = {k}: λ_max = {lmax} vs 1/σ = {bound}")
            });
            sum += &l;
        }
        let ns = null_space(&sum, tol)?;
        let dist = ns.distance(&r);
        null_report.record(dist <= SUBSPACE_TOL, dist, || {
            format!(
                "seed {seed}: null space of dimension {} (want {dim})",
                ns.dim()
            )
        });
    }
    Ok((null_report, lambda_report))
}

/// Rank-2 weights and rank-2 message provenance along a protocol run.
///
/// Every `A_ij(k)` with `k >= 1` must have exactly two eigenvalues above
/// `rank_tol · λ_max`, and every payload must lie in
/// `span{v_ρ(k), v_D}` up to `plane_tol`.
pub fn masking_suite(
    topology: &Topology,
    weights: &SwitchingWeights,
    initial: &NetworkState,
    steps: usize,
    rank_tol: f64,
    plane_tol: f64,
) -> Result<(SuiteReport, SuiteReport)> {
    let mut rank_report = SuiteReport::new("weight-rank");
    let mut plane_report = SuiteReport::new("payload-plane");
    let sim = Simulator::new(topology, weights, weights.sigma());
    let period = weights.vectors.period();
    let dim = weights.vectors.dim();
    let planes: Vec<Subspace> = (1..=period)
        .map(|s| {
            Subspace::span(
                dim,
                &[
                    weights.vectors.vector(s).to_vec(),
                    weights.vectors.last().to_vec(),
                ],
                1e-12,
            )
        })
        .collect();
    let mut failure: Option<Error> = None;
    sim.run_observed(initial, steps, |_, trace| {
        if trace.k == 0 || failure.is_some() {
            return;
        }
        let s = crate::schedule::rho(trace.k, period).expect("k >= 1");
        for (&e, a) in &trace.weights {
            match sym_eigen(a) {
                Ok(eig) => {
                    let v = &eig.values;
                    let lmax = v[dim - 1];
                    let third = v[dim - 3].abs();
                    let ok = third < rank_tol * lmax && v[dim - 2] > rank_tol * lmax;
                    rank_report.record(ok, third / lmax, || {
                        format!("k = {}, edge {:?}: spectrum {v:?}", trace.k, e.endpoints())
                    });
                }
                Err(err) => failure = Some(err),
            }
        }
        for m in &trace.messages {
            let res = planes[s - 1].residual(&m.payload);
            plane_report.record(res < plane_tol, res, || {
                format!(
                    "k = {}, {} -> {}: residual {res:e}",
                    m.k, m.sender, m.receiver
                )
            });
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((rank_report, plane_report))
}
