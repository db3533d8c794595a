//! Experiment orchestration behind the CLI: one function per experiment kind,
//! each returning a pass verdict, a JSON summary and the base trajectory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::adversary::{
    construct_alternative_world, infer_isolated, observe_run, random_perturbation,
    verify_indistinguishability, PublicParams, WithInitialOverrides,
};
use crate::analysis::{
    contraction_suite, masking_suite, nullspace_suite, random_instances, schedule_suites,
    SuiteReport, SUBSPACE_TOL,
};
use crate::config::{ExperimentKind, RunConfig, VerifyOptions};
use crate::engine::{NetworkState, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{assemble_laplacian, norm, norm_inf, null_space, sub, DEFAULT_TOL};
use crate::schedule::{
    cluster_weight, OrthoVectorSet, StaticWeights, SwitchingWeights, WeightSchedule,
};
use crate::topology::Topology;

/// Spread the cluster demo must never drop below.
pub const CLUSTER_SPREAD_FLOOR: f64 = 1e-3;
/// Consensus residual at which the isolated-agent attack is evaluated.
pub const ATTACK_RESIDUAL: f64 = 1e-7;
/// Estimation error the attack must reach on a fully observed victim.
pub const ATTACK_ERROR: f64 = 1e-6;
const RANK_TOL: f64 = 1e-9;
const PLANE_TOL: f64 = 1e-10;
const LAMBDA_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub passed: bool,
    pub summary: Value,
    pub trajectory: Trajectory,
}

/// Runs the experiment and writes `trajectory.csv` and `summary.json` into
/// `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: impl AsRef<Path>) -> Result<Outcome> {
    let outcome = execute(cfg)?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    outcome
        .trajectory
        .write_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    let text =
        serde_json::to_string_pretty(&outcome.summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(outcome)
}

/// Runs the experiment without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (passed, body, trajectory) = match cfg.kind {
        ExperimentKind::Run => run(cfg)?,
        ExperimentKind::Verify => verify(cfg)?,
        ExperimentKind::Privacy => privacy(cfg)?,
        ExperimentKind::Attack => attack(cfg)?,
        ExperimentKind::ClusterDemo => cluster_demo(cfg)?,
    };
    let summary = json!({
        "kind": cfg.kind.name(),
        "passed": passed,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "sigma": cfg.sigma,
        "d": cfg.d,
        "d_virtual": cfg.d_virtual,
        "result": body,
    });
    Ok(Outcome {
        kind: cfg.kind,
        passed,
        summary,
        trajectory,
    })
}

/// Topology, switching weights and lifted initial state for a config.
pub fn protocol_setup(cfg: &RunConfig) -> Result<(Topology, SwitchingWeights, NetworkState)> {
    let topo = cfg.topology()?;
    let vectors = OrthoVectorSet::build(cfg.d, cfg.d_virtual)?;
    let schedule = WeightSchedule::sample(&topo, vectors.period(), cfg.sigma, cfg.seed)?;
    let weights = SwitchingWeights::new(schedule, vectors)?;
    Ok((topo, weights, cfg.initial_state()?))
}

fn convergence_summary(traj: &Trajectory, epsilon: f64) -> Value {
    let avg = traj.initial().average();
    let last = traj.last();
    json!({
        "average": avg,
        "limit": last.states[0],
        "final_residual": last.residual(&avg),
        "final_spread": last.spread(),
        "iterations_to_epsilon": traj.iterations_to(epsilon),
        "conservation_residual": traj.conservation_residual(),
    })
}

fn run(cfg: &RunConfig) -> Result<(bool, Value, Trajectory)> {
    let (topo, weights, x0) = protocol_setup(cfg)?;
    let sim = Simulator::new(&topo, &weights, cfg.sigma);
    let traj = sim.run(&x0, cfg.steps)?;
    let avg = x0.average();
    let passed = traj.last().residual(&avg) < cfg.epsilon && traj.conservation_residual() < cfg.tol;
    Ok((passed, convergence_summary(&traj, cfg.epsilon), traj))
}

fn suite_json(r: &SuiteReport) -> Value {
    json!({
        "name": r.name,
        "passed": r.passed(),
        "cases": r.cases,
        "failures": r.failures,
        "worst_residual": r.worst_residual,
        "examples": r.examples,
        "notes": r.notes.iter().map(|(k, v)| json!({ "name": k, "count": v })).collect::<Vec<_>>(),
    })
}

fn verify(cfg: &RunConfig) -> Result<(bool, Value, Trajectory)> {
    let opts = cfg.verify.clone().unwrap_or_default();
    let reports = verification_reports(cfg, &opts)?;
    let (topo, weights, x0) = protocol_setup(cfg)?;
    let traj = Simulator::new(&topo, &weights, cfg.sigma).run(&x0, cfg.steps)?;
    let passed = reports.iter().all(SuiteReport::passed);
    let body = json!({ "suites": reports.iter().map(suite_json).collect::<Vec<_>>() });
    Ok((passed, body, traj))
}

/// The null-space identity, the contraction criterion, the per-period
/// schedule checks and the rank-2 masking checks.
pub fn verification_reports(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    let instances = random_instances(opts.instances, cfg.seed);
    let t2 = nullspace_suite(&instances, DEFAULT_TOL)?;
    let t3 = contraction_suite(&instances, DEFAULT_TOL)?;
    let (topo, weights, x0) = protocol_setup(cfg)?;
    let seeds = (0..opts.schedules as u64).map(|i| cfg.seed.wrapping_add(i));
    let (period, lambda) = schedule_suites(
        &topo,
        cfg.d,
        cfg.d_virtual,
        cfg.sigma,
        seeds,
        DEFAULT_TOL,
        LAMBDA_MARGIN,
    )?;
    let (rank, plane) = masking_suite(
        &topo,
        &weights,
        &x0,
        cfg.steps.min(200),
        RANK_TOL,
        PLANE_TOL,
    )?;
    Ok(vec![t2, t3, period, lambda, rank, plane])
}

fn privacy(cfg: &RunConfig) -> Result<(bool, Value, Trajectory)> {
    let opts = cfg
        .privacy
        .clone()
        .ok_or_else(|| Error::config("privacy", "missing"))?;
    let (topo, weights, x0) = protocol_setup(cfg)?;
    let (b, m) = (opts.victim - 1, opts.helper - 1);
    let layout = cfg.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let mut trials = Vec::with_capacity(opts.trials);
    let mut failures = 0usize;
    let mut worst = [0.0_f64; 5];
    let mut min_shift = f64::INFINITY;
    for t in 0..opts.trials {
        let delta = random_perturbation(&mut rng, cfg.d, opts.min_perturbation);
        let new_real: Vec<f64> = layout
            .real(&x0.states[b])
            .iter()
            .zip(&delta)
            .map(|(x, e)| x + e)
            .collect();
        let world = construct_alternative_world(
            &topo,
            &weights,
            &x0,
            b,
            m,
            &new_real,
            cfg.seed.wrapping_add(t as u64),
        )?;
        match verify_indistinguishability(
            &topo,
            &weights,
            &x0,
            &world,
            cfg.steps,
            cfg.tol,
            cfg.epsilon,
        ) {
            Ok(r) => {
                for (w, v) in worst.iter_mut().zip([
                    r.log_residual,
                    r.state1_residual,
                    r.average_residual,
                    r.original_final_residual,
                    r.alternative_final_residual,
                ]) {
                    *w = w.max(v);
                }
                min_shift = min_shift.min(r.real_shift_norm);
                trials.push(json!({ "trial": t, "passed": true, "report": r }));
            }
            Err(e @ Error::PrivacyViolation { .. }) => {
                failures += 1;
                trials.push(json!({ "trial": t, "passed": false, "violation": e.to_string() }));
            }
            Err(e) => return Err(e),
        }
    }
    let traj = Simulator::new(&topo, &weights, cfg.sigma).run(&x0, cfg.steps)?;
    let body = json!({
        "victim": opts.victim,
        "helper": opts.helper,
        "trials": opts.trials,
        "failures": failures,
        "max_log_residual": worst[0],
        "max_state1_residual": worst[1],
        "max_average_residual": worst[2],
        "max_original_final_residual": worst[3],
        "max_alternative_final_residual": worst[4],
        "min_real_shift_norm": min_shift,
        "details": trials,
    });
    Ok((failures == 0, body, traj))
}

fn attack(cfg: &RunConfig) -> Result<(bool, Value, Trajectory)> {
    let (topo, weights, x0) = protocol_setup(cfg)?;
    let sim = Simulator::new(&topo, &weights, cfg.sigma);
    let public = PublicParams::from_vectors(cfg.sigma, &weights.vectors);
    let (traj, logs) = observe_run(&sim, &x0, cfg.steps, &public)?;
    let avg = x0.average();
    let horizon = traj.iterations_to(ATTACK_RESIDUAL);
    let min_shift = cfg.privacy.as_ref().map_or(0.1, |p| p.min_perturbation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);

    let mut victims = Vec::new();
    let mut all_passed = true;
    for b in 0..topo.n() {
        if !topo.is_legitimate(b) {
            continue;
        }
        let watched = topo.neighbors(b)?.iter().any(|&j| !topo.is_legitimate(j));
        if !watched {
            continue;
        }
        let Some(h) = horizon else {
            all_passed = false;
            victims.push(json!({
                "victim": b + 1,
                "passed": false,
                "reason": format!("consensus residual never fell below {ATTACK_RESIDUAL:e}"),
            }));
            continue;
        };
        let est = infer_isolated(&topo, &logs, b, h)?;
        let error = norm_inf(&sub(&est.estimate, &x0.states[b]));
        if est.conclusive {
            let ok = error < ATTACK_ERROR;
            all_passed &= ok;
            victims.push(json!({
                "victim": b + 1,
                "conclusive": true,
                "horizon": h,
                "estimate_error": error,
                "passed": ok,
            }));
            continue;
        }
        // a legitimate neighbor exists: exhibit a second world with the same logs
        let m = *topo
            .neighbors(b)?
            .iter()
            .find(|&&j| topo.is_legitimate(j))
            .expect("non-conclusive implies a legitimate neighbor");
        let delta = random_perturbation(&mut rng, cfg.d, min_shift);
        let layout = cfg.layout();
        let new_real: Vec<f64> = layout
            .real(&x0.states[b])
            .iter()
            .zip(&delta)
            .map(|(x, e)| x + e)
            .collect();
        let world = construct_alternative_world(&topo, &weights, &x0, b, m, &new_real, cfg.seed)?;
        let report = verify_indistinguishability(
            &topo,
            &weights,
            &x0,
            &world,
            cfg.steps,
            cfg.tol,
            cfg.epsilon,
        );
        let alt_weights = WithInitialOverrides::new(&weights, &world.overrides);
        let alt_sim = Simulator::new(&topo, &alt_weights, cfg.sigma);
        let (_, alt_logs) = observe_run(&alt_sim, &world.initial_state(), cfg.steps, &public)?;
        let alt_est = infer_isolated(&topo, &alt_logs, b, h)?;
        let err_orig = norm(&sub(&est.estimate, &x0.states[b]));
        let err_alt = norm(&sub(&alt_est.estimate, &world.initial[b]));
        let shift = norm(&world.shift);
        let real_shift = norm(layout.real(&world.shift));
        let (ok, detail) = match &report {
            Ok(r) => (
                err_orig + err_alt >= shift - cfg.tol && real_shift >= min_shift,
                serde_json::to_value(r).map_err(|e| Error::Io(e.to_string()))?,
            ),
            Err(e) => (false, json!(e.to_string())),
        };
        all_passed &= ok;
        victims.push(json!({
            "victim": b + 1,
            "conclusive": false,
            "helper": m + 1,
            "horizon": h,
            "estimate_error": err_orig,
            "alternative_estimate_error": err_alt,
            "estimate_gap": norm(&sub(&est.estimate, &alt_est.estimate)),
            "shift_norm": shift,
            "real_shift_norm": real_shift,
            "indistinguishability": detail,
            "passed": ok,
        }));
    }
    let passed = all_passed && !victims.is_empty();
    let body = json!({
        "adversaries": topo.adversaries().iter().map(|a| a + 1).collect::<Vec<_>>(),
        "final_residual": traj.last().residual(&avg),
        "victims": victims,
    });
    Ok((passed, body, traj))
}

fn cluster_demo(cfg: &RunConfig) -> Result<(bool, Value, Trajectory)> {
    let topo = cfg.topology()?;
    let dim = cfg.layout().dim();
    let weights = StaticWeights::uniform(&topo, cluster_weight(dim))?;
    let l = assemble_laplacian(&topo, weights.map())?;
    let null_dim = null_space(&l, DEFAULT_TOL)?.dim();
    let x0 = cfg.initial_state()?;
    let traj = Simulator::new(&topo, &weights, cfg.sigma).run(&x0, cfg.steps)?;
    let min_spread = traj
        .states
        .iter()
        .map(NetworkState::spread)
        .fold(f64::INFINITY, f64::min);
    let conservation = traj.conservation_residual();
    let passed = null_dim > dim && min_spread >= CLUSTER_SPREAD_FLOOR && conservation < cfg.tol;
    let mut body = convergence_summary(&traj, cfg.epsilon);
    body["null_space_dim"] = json!(null_dim);
    body["consensus_space_dim"] = json!(dim);
    body["null_space_is_consensus"] = json!(null_dim == dim);
    body["min_spread"] = json!(min_spread);
    body["subspace_tol"] = json!(SUBSPACE_TOL);
    Ok((passed, body, traj))
}
