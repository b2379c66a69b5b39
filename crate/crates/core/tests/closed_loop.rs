use safebac::barrier::InequalitySet;
use safebac::constraints::{ConstraintSchedule, SegmentSpec, TightenedSchedule};
use safebac::dynamics::{DisturbanceSpec, DynamicsModel};
use safebac::learner::basis::Basis;
use safebac::learner::cost::CostSpec;
use safebac::learner::{safe_policy_iteration, Learner, LearnerConfig};
use safebac::simulate::{rollout, tube_check, Frozen, Online, Outcome, ResetEvent, Scenario};
use safebac::{Error, Vector};

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn segment(
    from: usize,
    until: Option<usize>,
    x: (&[f64], &[f64]),
    u: (&[f64], &[f64]),
) -> SegmentSpec {
    SegmentSpec {
        from_k: from,
        until_k: until,
        state_set: InequalitySet::boxed("x", x.0, x.1).unwrap(),
        control_set: InequalitySet::boxed("u", u.0, u.1).unwrap(),
        state_center: Vector::zeros(x.0.len()),
        control_center: Vector::zeros(u.0.len()),
    }
}

fn switching_schedule() -> ConstraintSchedule {
    ConstraintSchedule::new(
        vec![
            segment(
                0,
                Some(285),
                (&[-1.0, -1.0], &[0.5, 0.5]),
                (&[-1.0], &[0.3]),
            ),
            segment(285, None, (&[-0.5, -0.5], &[0.3, 0.3]), (&[-0.5], &[0.1])),
        ],
        0.05,
    )
    .unwrap()
}

fn config(seed: u64) -> LearnerConfig {
    LearnerConfig {
        lookahead: 10,
        gamma_c: 0.5,
        gamma_a: 0.5,
        max_inner_iters: 50,
        actor_on_rollout: false,
        min_step_scale: 1e-3,
        seed,
        ..LearnerConfig::default()
    }
}

fn learner(sched: &ConstraintSchedule, seed: u64) -> Learner {
    Learner::initialise(
        DynamicsModel::mass_point(),
        Some(TightenedSchedule::nominal(sched.clone(), 10)),
        CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).unwrap(),
        config(seed),
        Basis::polynomial(2, &[2]).unwrap(),
        Basis::polynomial(2, &[1]).unwrap(),
        &v(&[-0.5, -0.5]),
    )
    .unwrap()
}

#[test]
fn online_learning_stays_safe_through_a_switch() {
    let sched = switching_schedule();
    let mut scenario = Scenario::new(v(&[-0.5, -0.5]), 400);
    scenario.events.push(ResetEvent {
        k: 285,
        state: v(&[-0.65, -0.65]),
    });
    let model = DynamicsModel::mass_point();
    let cost = CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).unwrap();
    for seed in 0..4 {
        let mut l = learner(&sched, seed);
        let mut online = Online::new(&mut l, true);
        let log = rollout(&model, &mut online, &sched, &cost, &scenario, None, seed).unwrap();
        assert!(
            !matches!(log.outcome, Outcome::Violated { .. }),
            "seed {seed}: {:?}",
            log.outcome
        );
        assert_eq!(log.steps.len(), 400);
        // the reset puts the state outside the new set for a few steps only
        let recovering = log.steps.iter().filter(|s| s.recovering).count();
        assert!(recovering > 0 && recovering <= scenario.recovery_limit);

        let trace = online.trace.unwrap();
        for w in trace.windows(2) {
            if w[0].k == w[1].k && w[1].feasible {
                assert!(w[1].j_bar <= w[0].j_bar + 1e-9, "seed {seed} k {}", w[1].k);
            }
        }
    }
}

#[test]
fn frozen_rollouts_are_reproducible() {
    let sched = switching_schedule();
    let l = learner(&sched, 5);
    let model = DynamicsModel::mass_point();
    let cost = CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).unwrap();
    let scenario = Scenario::new(v(&[-0.5, -0.5]), 50);
    let d = DisturbanceSpec::new(0.002).unwrap();
    let a = rollout(
        &model,
        &mut Frozen(&l),
        &sched,
        &cost,
        &scenario,
        Some(&d),
        9,
    )
    .unwrap();
    let b = rollout(
        &model,
        &mut Frozen(&l),
        &sched,
        &cost,
        &scenario,
        Some(&d),
        9,
    )
    .unwrap();
    let c = rollout(
        &model,
        &mut Frozen(&l),
        &sched,
        &cost,
        &scenario,
        Some(&d),
        10,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a.steps, c.steps);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn unsafe_initial_prediction_is_refused() {
    let sched = switching_schedule();
    let mut l = learner(&sched, 1);
    let err = safe_policy_iteration(&mut l, 0, &v(&[0.8, 0.8])).unwrap_err();
    assert!(matches!(err, Error::PreconditionFailed(_)), "{err}");
}

#[test]
fn disturbed_predictions_stay_in_the_tube() {
    let sched = ConstraintSchedule::new(
        vec![segment(
            0,
            None,
            (&[-1.0, -1.0], &[0.5, 0.5]),
            (&[-1.0], &[0.3]),
        )],
        0.05,
    )
    .unwrap();
    let l_f = 1.2;
    for seed in 0..10 {
        let eps = 0.005;
        let tight = TightenedSchedule::new(sched.clone(), eps, l_f, 10).unwrap();
        let l = Learner::initialise(
            DynamicsModel::mass_point(),
            Some(tight),
            CostSpec::diagonal(2, 1, 1.0, 0.1, 0.001, 0.95).unwrap(),
            config(seed),
            Basis::polynomial(2, &[2]).unwrap(),
            Basis::polynomial(2, &[1]).unwrap(),
            &v(&[-0.5, -0.5]),
        )
        .unwrap();
        let d = DisturbanceSpec::new(eps).unwrap();
        let rep = tube_check(&l, &v(&[-0.5, -0.5]), 0, 10, l_f, &d, seed);
        assert!(
            rep.contained,
            "seed {seed}: {:?} vs {:?}",
            rep.deviations, rep.radii
        );
    }
}
