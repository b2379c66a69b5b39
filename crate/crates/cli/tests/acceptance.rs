//! Acceptance criteria. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line per criterion and fails if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safebac::barrier::{gradient_check, Constraint, InequalitySet, RelaxedBarrier};
use safebac::constraints::{ConstraintSchedule, TightenedSchedule};
use safebac::dynamics::DynamicsModel;
use safebac::learner::basis::Basis;
use safebac::learner::cost::CostSpec;
use safebac::learner::nets::{actor_sample, TdSample};
use safebac::learner::{Learner, LearnerConfig};
use safebac::oracle::{finite_diff, grid_value_iteration, riccati_lq, GridSpec};
use safebac::{Matrix, Vector};
use safebac_cli::run::execute;
use safebac_cli::{run_config, ExperimentConfig, RunOptions, Summary};

type Check = Result<(bool, String), String>;

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn recipe(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../experiments")
        .join(name)
}

const RECIPES: [&str; 5] = [
    "mass_point.cfg",
    "van_der_pol.cfg",
    "robust_mass_point.cfg",
    "diff_drive.cfg",
    "bicycle.cfg",
];

/// Traced seeds per recipe for the monotonicity check.
const TRACE_SEEDS: usize = 20;

fn run_recipe(name: &str) -> Result<(Summary, Duration), String> {
    let (mut cfg, text) = ExperimentConfig::load(&recipe(name)).map_err(|e| e.to_string())?;
    cfg.batch.trace_seeds = TRACE_SEEDS;
    let exp = cfg.build().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let (summary, _, _) = execute(&exp, &text).map_err(|e| e.to_string())?;
    Ok((summary, t.elapsed()))
}

fn mass_point_safety(s: &Summary, took: Duration) -> Check {
    let m = &s.batches[0].metrics;
    let pass = m.episodes == 500 && m.safety_rate == 1.0 && took < Duration::from_secs(120);
    Ok((
        pass,
        format!(
            "{} episodes, safety_rate {}, {:.1?}",
            m.episodes, m.safety_rate, took
        ),
    ))
}

fn van_der_pol_safety(s: &Summary, took: Duration) -> Check {
    let m = &s.batches[0].metrics;
    let pass = m.episodes == 100
        && m.safety_rate == 1.0
        && m.converged_rate == 1.0
        && took < Duration::from_secs(120);
    Ok((
        pass,
        format!(
            "{} episodes, safety_rate {}, converged_rate {}, {:.1?}",
            m.episodes, m.safety_rate, m.converged_rate, took
        ),
    ))
}

fn monotonicity(runs: &[(&str, &Summary)]) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, s) in runs {
        for b in &s.batches {
            let t = &b.trace;
            pass &= t.checked > 0 && t.increases == 0;
            parts.push(format!(
                "{} eps_w={}: {}/{} increases",
                name.trim_end_matches(".cfg"),
                b.eps_w,
                t.increases,
                t.checked
            ));
        }
    }
    Ok((pass, parts.join("; ")))
}

fn ring(r: f64, n: usize, offset: f64) -> Vec<Vector> {
    (0..n)
        .map(|i| {
            let th = i as f64 * std::f64::consts::TAU / n as f64 + offset;
            v(&[r * th.cos(), r * th.sin()])
        })
        .collect()
}

fn oracle_equivalence() -> Check {
    let t = Instant::now();
    let model = DynamicsModel::mass_point();
    let err = |e: safebac::Error| e.to_string();
    // wide control box so the bound is inactive on the probe ring
    let (u_lo, u_hi) = (-3.0, 3.0);
    let sched = ConstraintSchedule::constant(
        InequalitySet::boxed("x", &[-1.0, -1.0], &[0.5, 0.5]).map_err(err)?,
        InequalitySet::boxed("u", &[u_lo], &[u_hi]).map_err(err)?,
        v(&[0.0, 0.0]),
        v(&[0.0]),
        0.05,
    )
    .map_err(err)?;
    let cost = CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).map_err(err)?;
    let grid = GridSpec::new(&[-0.4, -0.4], &[0.4, 0.4], &[61, 61], (u_lo, u_hi)).map_err(err)?;
    let seg = sched.segment(0);
    let vi = grid_value_iteration(
        &model,
        &cost,
        Some((&seg.state, &seg.control)),
        &grid,
        1e-7,
        1000,
    )
    .map_err(err)?;

    let plain = CostSpec::diagonal(2, 1, 1.0, 0.1, 0.0, 0.95).map_err(err)?;
    let vi0 = grid_value_iteration(&model, &plain, None, &grid, 1e-7, 1000).map_err(err)?;
    let (a, b) = model.linear_parts().ok_or("mass point is linear")?;
    let lq = riccati_lq(
        &a,
        &b,
        &Matrix::identity(2, 2),
        &(Matrix::identity(1, 1) * 0.1),
        0.95,
        1000,
    )
    .map_err(err)?;

    let lookahead = 10;
    let cfg = LearnerConfig {
        lookahead,
        gamma_c: 0.5,
        gamma_a: 0.5,
        seed: 0,
        ..LearnerConfig::default()
    };
    let mut learner = Learner::initialise(
        model,
        Some(TightenedSchedule::nominal(sched, lookahead)),
        cost,
        cfg,
        Basis::polynomial(2, &[2]).map_err(err)?,
        Basis::polynomial(2, &[1]).map_err(err)?,
        &v(&[-0.2, -0.2]),
    )
    .map_err(err)?;
    let mut train = ring(0.3, 24, 0.0);
    train.extend(ring(0.15, 12, 0.1));
    let mut trace = Vec::new();
    for _ in 0..60 {
        for x in &train {
            trace.clear();
            learner.improve(0, x, &mut trace).map_err(err)?;
        }
    }

    let probes = ring(0.3, 16, 0.05);
    let mut worst_learned: f64 = 0.0;
    let mut worst_riccati: f64 = 0.0;
    for p in &probes {
        let roll = learner.rollout(learner.actor(), p, 0);
        let j = learner.mpe_value(learner.critic(), &roll, 0).map_err(err)?;
        let reference = vi.value(p);
        worst_learned = worst_learned.max((j - reference).abs() / reference);
        let quad = (p.transpose() * &lq.p * p)[(0, 0)];
        worst_riccati = worst_riccati.max((vi0.value(p) - quad).abs() / quad);
    }
    let took = t.elapsed();
    let pass = worst_learned < 0.05 && worst_riccati < 0.02 && took < Duration::from_secs(300);
    Ok((
        pass,
        format!(
            "learned vs VI max rel err {:.4} (< 0.05), VI vs Riccati at mu = 0 {:.4} (< 0.02), {} probes at |x| = 0.3, {:.1?}",
            worst_learned,
            worst_riccati,
            probes.len(),
            took
        ),
    ))
}

fn tube_containment(s: &Summary, took: Duration) -> Check {
    let mut pass = took < Duration::from_secs(60);
    let mut parts = Vec::new();
    for b in &s.batches {
        let t2 = b
            .robust_bound
            .as_ref()
            .ok_or("robust batch without a tube report")?;
        let n = b.metrics.episodes;
        pass &= n == 100 && t2.tube_contained == n && b.metrics.safety_rate == 1.0;
        parts.push(format!(
            "eps_w={}: tube {}/{}, safety_rate {}",
            b.eps_w, t2.tube_contained, n, b.metrics.safety_rate
        ));
    }
    pass &= s.batches.len() == 2;
    Ok((pass, format!("{}, {:.1?}", parts.join("; "), took)))
}

fn mixed_err(fd: &Vector, an: &Vector) -> f64 {
    fd.iter()
        .zip(an.iter())
        .map(|(f, a)| (f - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn gradient_fidelity() -> Check {
    let err = |e: safebac::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;

    // relaxed barriers: box, tilted half-spaces, box with a keep-out disc
    let square = InequalitySet::boxed("box", &[-1.0, -1.0], &[0.5, 0.3]).map_err(err)?;
    let tilted = InequalitySet::new(
        "tilted",
        vec![
            Constraint::HalfSpace {
                normal: v(&[1.0, 2.0]),
                offset: 1.0,
            },
            Constraint::HalfSpace {
                normal: v(&[-1.0, 0.5]),
                offset: 0.8,
            },
            Constraint::HalfSpace {
                normal: v(&[0.0, -1.0]),
                offset: 0.6,
            },
        ],
        v(&[-1.5, -1.0]),
        v(&[1.0, 1.0]),
    )
    .map_err(err)?;
    let mut disc = InequalitySet::boxed("disc", &[-1.0, -1.0, -1.2], &[1.0, 1.0, 1.2])
        .map_err(err)?
        .constraints()
        .to_vec();
    let selector = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    disc.push(Constraint::Keepout {
        selector,
        center: v(&[0.35, 0.0]),
        radius: 0.1,
    });
    let disc = InequalitySet::new("disc", disc, v(&[-1.0, -1.0, -1.2]), v(&[1.0, 1.0, 1.2]))
        .map_err(err)?;
    let barriers = [
        RelaxedBarrier::new(square, v(&[0.0, 0.0]), 0.05).map_err(err)?,
        RelaxedBarrier::new(tilted, v(&[0.0, 0.0]), 0.1).map_err(err)?,
        RelaxedBarrier::new(disc, v(&[0.3, -0.4, 0.2]), 0.05).map_err(err)?,
    ];
    let mut barrier_err: f64 = 0.0;
    for i in 0..100 {
        let b = &barriers[i % barriers.len()];
        let (lo, hi) = b.set().domain();
        let z = Vector::from_fn(b.dim(), |d, _| rng.random_range(lo[d] - 0.2..hi[d] + 0.2));
        barrier_err = barrier_err.max(gradient_check(b, &z, h));
    }

    // critic and actor losses on samples from a mass-point learner
    let lookahead = 10;
    let sched = ConstraintSchedule::constant(
        InequalitySet::boxed("x", &[-1.0, -1.0], &[0.5, 0.5]).map_err(err)?,
        InequalitySet::boxed("u", &[-1.0], &[0.3]).map_err(err)?,
        v(&[0.0, 0.0]),
        v(&[0.0]),
        0.05,
    )
    .map_err(err)?;
    let learner = Learner::initialise(
        DynamicsModel::mass_point(),
        Some(TightenedSchedule::nominal(sched, lookahead)),
        CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).map_err(err)?,
        LearnerConfig {
            lookahead,
            seed: 6,
            ..LearnerConfig::default()
        },
        Basis::polynomial(2, &[2]).map_err(err)?,
        Basis::tanh(2, 4, 1.0, 6).map_err(err)?,
        &v(&[-0.5, -0.5]),
    )
    .map_err(err)?;
    let gamma = learner.cost().gamma();
    let mut critic_err: f64 = 0.0;
    let mut actor_err: f64 = 0.0;
    for _ in 0..100 {
        let x = v(&[rng.random_range(-0.9..0.4), rng.random_range(-0.9..0.4)]);
        let roll = learner.rollout(learner.actor(), &x, 0);
        let critic = learner.critic();
        let sample = TdSample {
            h_now: critic.features(&x, learner.feature_barrier(0)),
            h_next: critic.features(&roll.xs[lookahead], learner.feature_barrier(lookahead)),
            stage_sum: roll
                .costs
                .iter()
                .enumerate()
                .map(|(l, c)| gamma.powi(l as i32) * c)
                .sum(),
            discount: gamma.powi(lookahead as i32),
        };
        let w = critic.weights();
        let fd = finite_diff(|p| sample.loss(p), &w, h);
        critic_err = critic_err.max(mixed_err(&fd, &sample.loss_gradient(&w)));

        let actor = learner.actor();
        let bu = learner.control_barrier(0);
        let s = actor_sample(
            actor,
            critic,
            learner.model(),
            learner.cost(),
            learner.feature_barrier(0),
            bu,
            learner.feature_barrier(1),
            &x,
        )
        .map_err(err)?;
        let w_a1 = actor.w_a1();
        let rho = actor.rho();
        let (g_w, g_rho, _) = s.loss_gradient(learner.cost(), bu);
        let mut params: Vec<f64> = w_a1.iter().copied().collect();
        params.push(rho);
        let loss = |p: &Vector| {
            let w =
                Matrix::from_column_slice(w_a1.nrows(), w_a1.ncols(), &p.as_slice()[..p.len() - 1]);
            s.loss(learner.cost(), bu, &w, p[p.len() - 1])
        };
        let fd = finite_diff(loss, &Vector::from_vec(params), h);
        let mut an: Vec<f64> = g_w.iter().copied().collect();
        an.push(g_rho);
        actor_err = actor_err.max(mixed_err(&fd, &Vector::from_vec(an)));
    }
    let pass = barrier_err < 1e-5 && critic_err < 1e-5 && actor_err < 1e-5;
    Ok((
        pass,
        format!(
            "max rel err over 100 points: barrier {barrier_err:.2e}, delta_c {critic_err:.2e}, delta_a {actor_err:.2e} (< 1e-5)"
        ),
    ))
}

fn scalar_lq() -> Check {
    let err = |e: safebac::Error| e.to_string();
    let (a, b, q, r, gamma) = (0.95, 0.5, 1.0, 1.0, 0.95);
    let am = Matrix::from_element(1, 1, a);
    let bm = Matrix::from_element(1, 1, b);
    let sol = riccati_lq(
        &am,
        &bm,
        &Matrix::from_element(1, 1, q),
        &Matrix::from_element(1, 1, r),
        gamma,
        10_000,
    )
    .map_err(err)?;
    let cfg = LearnerConfig {
        lookahead: 10,
        gamma_c: 0.5,
        gamma_a: 0.05,
        seed: 3,
        ..LearnerConfig::default()
    };
    let mut learner = Learner::initialise(
        DynamicsModel::linear(am, bm).map_err(err)?,
        None,
        CostSpec::diagonal(1, 1, q, r, 0.0, gamma).map_err(err)?,
        cfg,
        Basis::polynomial(1, &[2]).map_err(err)?,
        Basis::polynomial(1, &[1]).map_err(err)?,
        &v(&[1.0]),
    )
    .map_err(err)?;
    let states = [v(&[1.0]), v(&[-0.5]), v(&[0.7]), v(&[-1.0])];
    let mut trace = Vec::new();
    let mut conditions = true;
    for _ in 0..100 {
        for x in &states {
            trace.clear();
            learner.improve(0, x, &mut trace).map_err(err)?;
            conditions &= trace.iter().all(|t| t.cond_1 && t.cond_2);
        }
    }
    let gain = -learner.actor().w_sigma()[(0, 0)];
    let target = sol.gain[(0, 0)];
    let gap = (gain - target).abs();
    Ok((
        gap < 1e-3 && conditions,
        format!(
            "actor gain {gain:.6}, Riccati gain {target:.6}, |diff| {gap:.2e} (< 1e-3), both convergence conditions held: {conditions}"
        ),
    ))
}

fn determinism() -> Check {
    let (cfg, text) =
        ExperimentConfig::load(&recipe("mass_point.cfg")).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bodies = Vec::new();
    for (i, threads) in [1usize, 4].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let opts = RunOptions {
            seeds: Some(8),
            out: Some(out.clone()),
            quiet: true,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| run_config(&cfg, &text, &opts))
            .map_err(|e| e.to_string())?;
        bodies.push(std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    let same = bodies[0] == bodies[1];
    Ok((
        same,
        format!(
            "summary.json from 1 and 4 worker threads ({} bytes) identical: {same}",
            bodies[0].len()
        ),
    ))
}

fn report(id: usize, name: &str, check: Check) -> bool {
    let (pass, detail) = match check {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} {id}. {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

#[test]
fn acceptance_criteria() {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for name in RECIPES {
        match run_recipe(name) {
            Ok(r) => runs.push((name, r)),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let find = |name: &str| runs.iter().find(|(n, _)| *n == name).map(|(_, r)| r);
    let missing = |name: &str| -> Check { Err(format!("{name} did not run: {failures:?}")) };

    let mut all = true;
    all &= report(
        1,
        "mass-point safety rate",
        find("mass_point.cfg").map_or_else(
            || missing("mass_point.cfg"),
            |(s, t)| mass_point_safety(s, *t),
        ),
    );
    all &= report(
        2,
        "Van der Pol safety and convergence",
        find("van_der_pol.cfg").map_or_else(
            || missing("van_der_pol.cfg"),
            |(s, t)| van_der_pol_safety(s, *t),
        ),
    );
    let traced: Vec<(&str, &Summary)> = runs.iter().map(|(n, (s, _))| (*n, s)).collect();
    let mono = if traced.len() == RECIPES.len() {
        monotonicity(&traced)
    } else {
        Err(format!("not every recipe ran: {failures:?}"))
    };
    all &= report(3, "inner-loop monotonicity on every recipe", mono);
    all &= report(4, "oracle equivalence", oracle_equivalence());
    all &= report(
        5,
        "tube containment under tightening",
        find("robust_mass_point.cfg").map_or_else(
            || missing("robust_mass_point.cfg"),
            |(s, t)| tube_containment(s, *t),
        ),
    );
    all &= report(6, "gradient fidelity", gradient_fidelity());
    all &= report(7, "scalar-LQ actor convergence", scalar_lq());
    all &= report(8, "determinism", determinism());
    assert!(all, "at least one acceptance criterion failed");
}
