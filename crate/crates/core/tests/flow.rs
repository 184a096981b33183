use masked3d::flow::{euler_sample, fm_loss, interpolate, velocity_target, FlowState};
use masked3d::rng::seeded_random_tensor;
use masked3d::tensor::{AttnTensor, Dims};

fn pair() -> (AttnTensor<f32>, AttnTensor<f32>) {
    let dims = Dims::new(2, 3, 5, 4);
    (
        seeded_random_tensor(dims, 1).unwrap(),
        seeded_random_tensor(dims, 2).unwrap(),
    )
}

#[test]
fn endpoints_are_exact() {
    let (x0, x1) = pair();
    assert_eq!(
        interpolate(&FlowState::new(x0.clone(), x1.clone(), 0.0).unwrap()).unwrap(),
        x0
    );
    assert_eq!(
        interpolate(&FlowState::new(x0.clone(), x1.clone(), 1.0).unwrap()).unwrap(),
        x1
    );
}

#[test]
fn loss_vanishes_only_for_the_target_velocity() {
    let (x0, x1) = pair();
    let v = velocity_target(&x0, &x1).unwrap();
    assert_eq!(fm_loss(&v, &x0, &x1).unwrap(), 0.0);
    let mut off = v.clone();
    let e = off.get(1, 2, 3, 0);
    off.set(1, 2, 3, 0, e + 0.5);
    let n = v.data().len() as f64;
    assert!((fm_loss(&off, &x0, &x1).unwrap() - 0.25 / n).abs() <= 1e-7);
}

#[test]
fn euler_on_constant_velocity_lands_on_x1() {
    let (x0, x1) = pair();
    let v = velocity_target(&x0, &x1).unwrap();
    let eps = f32::EPSILON as f64;
    for steps in [1, 10, 100] {
        let out = euler_sample(|_, _| v.clone(), &x0, steps).unwrap();
        for ((o, a), (b, w)) in out
            .data()
            .iter()
            .zip(x0.data())
            .zip(x1.data().iter().zip(v.data()))
        {
            let bound = steps as f64 * eps * (a.abs() + w.abs()) as f64 + eps * b.abs() as f64;
            assert!(((o - b).abs() as f64) <= bound, "steps {steps}");
        }
    }
}

#[test]
fn contracting_field_approaches_exp_minus_one() {
    let x0 = AttnTensor::from_vec(Dims::new(1, 1, 1, 1), vec![1.0f64]).unwrap();
    let out = euler_sample(|x, _| x.map(|v| -v), &x0, 1000).unwrap();
    assert!((out.data()[0] - (-1.0f64).exp()).abs() <= 1e-3);
}

#[test]
fn sampler_rejects_zero_steps_and_bad_shapes() {
    let (x0, _) = pair();
    assert!(euler_sample(|x, _| x.clone(), &x0, 0).is_err());
    let wrong = seeded_random_tensor::<f32>(Dims::new(1, 1, 1, 1), 0).unwrap();
    assert!(euler_sample(|_, _| wrong.clone(), &x0, 3).is_err());
}
