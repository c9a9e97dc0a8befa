use super::*;
use crate::geometry::min_eigenvalue;
use proptest::prelude::*;

fn hover() -> ControlInput {
    ControlInput::new(Vector3::zeros(), -GRAVITY, 0.1)
}

fn diag9(values: [f64; 9]) -> Matrix9 {
    Matrix9::from_diagonal(&nalgebra::SVector::<f64, 9>::from_row_slice(&values))
}

#[test]
fn hovering_without_noise_changes_nothing() {
    let mut state = FilterState::at_rest();
    state.position = Vector3::new(1.0, 2.0, 3.0);
    state.covariance = diag9([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    let noise = NoiseConfig::from_std(0.0, 0.0, 1.0).unwrap();
    let next = propagate(&state, &hover(), &noise).unwrap();
    assert!((next.position - state.position).norm() < 1e-15);
    assert!(next.rotation.angle_to(&state.rotation) < 1e-15);
    assert!((next.covariance - state.covariance).abs().max() < 1e-15);
}

#[test]
fn process_noise_grows_trace() {
    let noise = NoiseConfig::from_std(0.01, 0.1, 1.0).unwrap();
    let mut state = FilterState::at_rest();
    state.velocity = Vector3::new(2.0, -1.0, 0.0);
    state.covariance = diag9([1e-3, 2e-3, 1e-3, 0.1, 0.2, 0.1, 1.0, 1.0, 2.0]);
    let control = ControlInput::new(Vector3::new(0.1, 0.0, 0.3), Vector3::new(0.5, 0.2, 9.81), 0.1);
    let next = propagate(&state, &control, &noise).unwrap();
    assert!(next.covariance.trace() > state.covariance.trace());
}

#[test]
fn zero_innovation_keeps_position_and_shrinks_covariance() {
    let mut state = FilterState::at_rest();
    state.position = Vector3::new(4.0, 5.0, 6.0);
    state.covariance = diag9([0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0]);
    let noise = NoiseConfig::from_std(0.0, 0.0, 1.0).unwrap();
    let next = update(&state, &PositionObservation::new(state.position), &noise).unwrap();
    assert_eq!(next.position, state.position);
    // 2 - 2·2/(2+1)
    for i in 6..9 {
        assert!((next.covariance[(i, i)] - 2.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn uninformative_observation_is_ignored() {
    let mut state = FilterState::at_rest();
    state.position = Vector3::new(10.0, -3.0, 1.0);
    state.covariance = diag9([0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
    let noise = NoiseConfig::from_std(0.0, 0.0, 1e6).unwrap();
    let next = update(&state, &PositionObservation::new(Vector3::new(100.0, 100.0, 100.0)), &noise).unwrap();
    assert!((next.position - state.position).norm() / state.position.norm() < 1e-6);
    assert!((next.covariance - state.covariance).abs().max() < 1e-6);
}

#[test]
fn rejects_non_psd_covariance() {
    let mut state = FilterState::at_rest();
    state.covariance = diag9([1.0, 1.0, 1.0, 1.0, -0.5, 1.0, 1.0, 1.0, 1.0]);
    let noise = NoiseConfig::from_std(0.1, 0.1, 1.0).unwrap();
    match propagate(&state, &hover(), &noise) {
        Err(FilterError::NonPsdCovariance { eigenvalue }) => assert!((eigenvalue + 0.5).abs() < 1e-12),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejects_bad_control_and_noise() {
    let noise = NoiseConfig::from_std(0.1, 0.1, 1.0).unwrap();
    let bad = ControlInput::new(Vector3::zeros(), Vector3::zeros(), 0.0);
    assert!(matches!(
        propagate(&FilterState::at_rest(), &bad, &noise),
        Err(FilterError::InvalidControl { .. })
    ));
    let mut q = Matrix6::identity();
    q[(2, 2)] = -1.0;
    assert!(matches!(
        NoiseConfig::new(q, Matrix3::identity()),
        Err(FilterError::InvalidNoise { which: "process", .. })
    ));
}

#[test]
fn singular_innovation_is_an_error() {
    let noise = NoiseConfig::from_std(0.0, 0.0, 0.0).unwrap();
    let state = FilterState::at_rest();
    assert!(matches!(
        update(&state, &PositionObservation::new(Vector3::zeros()), &noise),
        Err(FilterError::SingularInnovation { .. })
    ));
}

#[test]
fn run_filter_attaches_frame_index() {
    let noise = NoiseConfig::from_std(0.0, 0.0, 0.0).unwrap();
    let mut obs = BTreeMap::new();
    obs.insert(3, PositionObservation::new(Vector3::zeros()));
    let controls = [hover(); 5];
    match run_filter(&controls, &obs, &noise, &FilterState::at_rest()) {
        Err(FilterError::AtFrame { frame: 3, source }) => {
            assert!(matches!(*source, FilterError::SingularInnovation { .. }))
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(
        run_filter(&[], &obs, &noise, &FilterState::at_rest()),
        Err(FilterError::EmptyControls)
    );
}

#[test]
fn dead_reckoning_position_uncertainty_never_shrinks() {
    let noise = NoiseConfig::from_std(0.01, 0.05, 1.0).unwrap();
    let controls: Vec<_> = (0..300)
        .map(|k| {
            let w = 0.2 * libm::sin(k as f64 * 0.05);
            ControlInput::new(Vector3::new(0.0, 0.0, w), Vector3::new(0.3, 0.1, 9.81), 0.1)
        })
        .collect();
    let states = run_filter(&controls, &BTreeMap::new(), &noise, &FilterState::at_rest()).unwrap();
    assert_eq!(states.len(), controls.len());
    for pair in states.windows(2) {
        assert!(pair[1].position_covariance().trace() >= pair[0].position_covariance().trace());
    }
}

#[test]
fn constant_velocity_line_is_exact() {
    let noise = NoiseConfig::from_std(0.0, 0.0, 1.0).unwrap();
    let mut initial = FilterState::at_rest();
    initial.velocity = Vector3::new(3.0, 0.5, 0.0);
    let controls = [hover(); 200];
    let states = run_filter(&controls, &BTreeMap::new(), &noise, &initial).unwrap();
    for (k, s) in states.iter().enumerate() {
        let t = 0.1 * (k + 1) as f64;
        assert!((s.position - initial.velocity * t).norm() < 1e-9);
    }
}

fn arb_step() -> impl Strategy<Value = (ControlInput, Option<Vector3<f64>>)> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(-5.0f64..5.0),
        0.001f64..0.2,
        prop::option::of(prop::array::uniform3(-20.0f64..20.0)),
    )
        .prop_map(|(w, a, dt, obs)| {
            (
                ControlInput::new(Vector3::from(w), Vector3::from(a) - GRAVITY, dt),
                obs.map(Vector3::from),
            )
        })
}

proptest! {
    #[test]
    fn covariance_stays_symmetric_psd(
        steps in prop::collection::vec(arb_step(), 1..40),
        gyro in 0.0f64..0.1,
        accel in 0.0f64..1.0,
        obs_std in 0.05f64..5.0,
    ) {
        let noise = NoiseConfig::from_std(gyro, accel, obs_std).unwrap();
        let mut state = FilterState::at_rest();
        state.covariance = Matrix9::identity() * 0.01;
        for (control, obs) in steps {
            state = propagate(&state, &control, &noise).unwrap();
            if let Some(p) = obs {
                let before = state.position_covariance().trace();
                state = update(&state, &PositionObservation::new(p), &noise).unwrap();
                prop_assert!(state.position_covariance().trace() <= before + 1e-12);
            }
            let asym = (state.covariance - state.covariance.transpose()).abs().max();
            prop_assert!(asym <= 1e-12);
            prop_assert!(min_eigenvalue(&state.covariance) >= -1e-9);
            prop_assert!((state.rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
