use pulseclust_autodiff::optim::{Adam, Optimizer, Sgd};
use pulseclust_autodiff::{ParamStore, Tensor};

fn one_scalar(v: f64) -> (ParamStore<f64>, pulseclust_autodiff::ParamId) {
    let mut s = ParamStore::new();
    let id = s.add_param("p", Tensor::scalar(v)).unwrap();
    (s, id)
}

#[test]
fn zero_gradient_leaves_parameters() {
    let (mut s, id) = one_scalar(1.5);
    let mut sgd = Sgd::new(0.1, 0.9);
    sgd.step(&mut s);
    assert_eq!(s.value(id).data(), &[1.5]);
    let mut adam = Adam::new(0.1);
    adam.step(&mut s);
    assert_eq!(s.value(id).data(), &[1.5]);
}

#[test]
fn zero_learning_rate_is_noop() {
    let (mut s, id) = one_scalar(-0.25);
    s.accumulate_grad(id, &[3.0]);
    Sgd::new(0.0, 0.9).step(&mut s);
    Adam::new(0.0).step(&mut s);
    assert_eq!(s.value(id).data(), &[-0.25]);
}

#[test]
fn sgd_momentum_two_steps() {
    let (mut s, id) = one_scalar(1.0);
    let mut sgd = Sgd::new(0.1, 0.9);
    s.accumulate_grad(id, &[2.0]);
    sgd.step(&mut s);
    s.zero_grad();
    s.accumulate_grad(id, &[1.0]);
    sgd.step(&mut s);
    // v1 = 2, p1 = 0.8; v2 = 0.9 * 2 + 1 = 2.8, p2 = 0.52
    assert!((s.value(id).data()[0] - 0.52).abs() < 1e-12);
}

#[test]
fn adam_two_steps_closed_form() {
    let (mut s, id) = one_scalar(0.5);
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let mut adam = Adam::with_betas(lr, b1, b2, eps);
    let grads = [0.4, -0.2];
    for g in grads {
        s.zero_grad();
        s.accumulate_grad(id, &[g]);
        adam.step(&mut s);
    }
    let m1 = 0.1 * 0.4;
    let v1 = 0.001 * 0.16;
    let p1 = 0.5 - lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + eps);
    let m2 = b1 * m1 + 0.1 * -0.2;
    let v2 = b2 * v1 + 0.001 * 0.04;
    let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
    assert!((s.value(id).data()[0] - p2).abs() < 1e-12, "{} vs {p2}", s.value(id).data()[0]);
}

#[test]
fn buffers_are_not_updated() {
    let mut s = ParamStore::<f64>::new();
    let b = s.add_buffer("running", Tensor::scalar(2.0)).unwrap();
    s.accumulate_grad(b, &[5.0]);
    Sgd::new(1.0, 0.0).step(&mut s);
    Adam::new(1.0).step(&mut s);
    assert_eq!(s.value(b).data(), &[2.0]);
}
