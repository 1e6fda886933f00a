use pulseclust_autodiff::{Graph, ParamStore, Tensor};
use pulseclust_train::model::{Encoder, EncoderConfig, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(rng: &mut ChaCha8Rng, b: usize, len: usize) -> Tensor<f32> {
    Tensor::from_fn(&[b, 2, len], |_| rng.gen_range(-1.0..1.0))
}

fn run(model: &mut Model, x: &Tensor<f32>, train: bool) -> (Vec<f32>, Vec<f32>) {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = model.encoder.forward(&mut g, &mut model.store, xv, train).unwrap();
    (g.value(out.features).data().to_vec(), g.value(out.projections).data().to_vec())
}

#[test]
fn output_shapes() {
    let mut model = Model::new(&EncoderConfig::desk(8), 1024, 1).unwrap();
    let x = frames(&mut ChaCha8Rng::seed_from_u64(1), 4, 1024);
    let mut g = Graph::new();
    let xv = g.input(x);
    let out = model.encoder.forward(&mut g, &mut model.store, xv, false).unwrap();
    assert_eq!(g.shape(out.features), &[4, 128]);
    assert_eq!(g.shape(out.projections), &[4, 12]);
}

#[test]
fn rejects_wrong_input_layout() {
    let mut model = Model::new(&EncoderConfig::desk(8), 256, 1).unwrap();
    let mut g = Graph::new();
    let xv = g.input(Tensor::<f32>::zeros(&[2, 3, 256]));
    assert!(model.encoder.forward(&mut g, &mut model.store, xv, false).is_err());
}

#[test]
fn config_validation() {
    assert!(EncoderConfig::desk(8).validate(1024).is_ok());
    assert!(EncoderConfig::desk(0).validate(1024).is_err());
    assert!(EncoderConfig::desk(64).validate(1024).is_err());
    assert!(EncoderConfig::desk(8).validate(8).is_err());
    let odd_heads = EncoderConfig { heads: 3, ..EncoderConfig::desk(8) };
    assert!(odd_heads.validate(1024).is_err());
    let even_kernel = EncoderConfig { kernels: vec![4, 5, 5, 3], ..EncoderConfig::desk(8) };
    assert!(even_kernel.validate(1024).is_err());
}

#[test]
fn eval_mode_rows_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = Model::new(&EncoderConfig::desk(8), 256, 3).unwrap();
    let x = frames(&mut rng, 5, 256);
    let (f, p) = run(&mut model, &x, false);
    let (fd, pd) = (f.len() / 5, p.len() / 5);

    // Reverse the batch: outputs follow their rows.
    let row = 2 * 256;
    let rev: Vec<f32> = x.data().chunks(row).rev().flatten().copied().collect();
    let (fr, pr) = run(&mut model, &Tensor::new(vec![5, 2, 256], rev).unwrap(), false);
    for i in 0..5 {
        let j = 4 - i;
        for k in 0..fd {
            assert!((f[i * fd + k] - fr[j * fd + k]).abs() < 1e-5);
        }
        for k in 0..pd {
            assert!((p[i * pd + k] - pr[j * pd + k]).abs() < 1e-5);
        }
    }

    // A duplicated row gets identical outputs.
    let dup: Vec<f32> = x.data()[..row].iter().chain(&x.data()[..row]).copied().collect();
    let (fd2, _) = run(&mut model, &Tensor::new(vec![2, 2, 256], dup).unwrap(), false);
    assert_eq!(&fd2[..fd], &fd2[fd..]);
}

#[test]
fn gradient_reaches_every_trainable_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = Model::new(&EncoderConfig::desk(8), 256, 5).unwrap();
    let x = frames(&mut rng, 4, 256);
    let mut g = Graph::new();
    let xv = g.input(x);
    let out = model.encoder.forward(&mut g, &mut model.store, xv, true).unwrap();
    let probe = Tensor::from_fn(g.shape(out.projections), |i| ((i as f32) * 0.37).sin());
    let weighted = g.mul_const(out.projections, &probe).unwrap();
    let loss = g.sum(weighted);
    g.backward(loss).unwrap();
    g.accumulate_param_grads(&mut model.store);
    let store = &model.store;
    let mut checked = 0;
    for id in store.ids() {
        // softmax is blind to the key bias, so its gradient is zero up to rounding
        if !store.is_trainable(id) || store.name(id).ends_with(".key.bias") {
            continue;
        }
        checked += 1;
        assert!(store.grad(id).iter().any(|&v| v != 0.0), "{} got no gradient", store.name(id));
    }
    assert!(checked > 10);
}

#[test]
fn train_mode_updates_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = Model::new(&EncoderConfig::desk(8), 256, 7).unwrap();
    let x = frames(&mut rng, 4, 256);
    let before = run(&mut model, &x, false);
    run(&mut model, &x, true);
    let after = run(&mut model, &x, false);
    assert_ne!(before.0, after.0);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = EncoderConfig::desk(8);
    let mut model = Model::new(&cfg, 256, 9).unwrap();
    let x = frames(&mut rng, 3, 256);
    run(&mut model, &x, true);
    model.save(&path).unwrap();
    let mut loaded = Model::load(&cfg, 256, &path).unwrap();
    assert_eq!(run(&mut model, &x, false), run(&mut loaded, &x, false));
    // A different width does not load.
    assert!(Model::load(&EncoderConfig::desk(4), 256, &path).is_err());
}

#[test]
fn same_seed_same_weights() {
    let cfg = EncoderConfig::desk(8);
    let mut a = ParamStore::<f64>::new();
    let mut b = ParamStore::<f64>::new();
    Encoder::new(&cfg, &mut a, 11).unwrap();
    Encoder::new(&cfg, &mut b, 11).unwrap();
    for (i, j) in a.ids().zip(b.ids()) {
        assert_eq!(a.value(i).data(), b.value(j).data());
    }
    let mut c = ParamStore::<f64>::new();
    Encoder::new(&cfg, &mut c, 12).unwrap();
    let differs = a.ids().zip(c.ids()).any(|(i, j)| a.value(i).data() != c.value(j).data());
    assert!(differs);
}
