use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakaudio_tensor::gradcheck::check_gradients;
use weakaudio_tensor::{Padding, Tensor, Window};

const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks are never crossed.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    })
}

/// Distinct values spaced well beyond the finite-difference step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), order.into_iter().map(|k| k as f64 * 0.01 - 0.3).collect()).unwrap()
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..8 {
        let (n, h, w, cin, cout) = (rng.gen_range(1..3), rng.gen_range(3..7), rng.gen_range(3..6), rng.gen_range(1..7), rng.gen_range(1..11));
        let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let padding = if case % 2 == 0 { Padding::Same } else { Padding::Valid };
        let x = uniform(&mut rng, &[n, h, w, cin], -1.0, 1.0);
        let k = uniform(&mut rng, &[kh, kw, cin, cout], -1.0, 1.0);
        let r = check_gradients(&[x, k], case, |g, v| g.conv2d(v[0], v[1], stride, padding)).unwrap();
        assert!(r.max_relative_error < TOL, "case {case}: {r:?}");
    }
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..6 {
        let shape = [rng.gen_range(1..3), rng.gen_range(3..7), rng.gen_range(3..7), rng.gen_range(1..3)];
        let window = Window::new(
            (rng.gen_range(1..4), rng.gen_range(1..4)),
            (rng.gen_range(1..3), rng.gen_range(1..3)),
            if case % 2 == 0 { Padding::Same } else { Padding::Valid },
        );
        let x = distinct(&mut rng, &shape);
        let r = check_gradients(&[x.clone()], case, |g, v| g.max_pool(v[0], window)).unwrap();
        assert!(r.max_relative_error < TOL, "max case {case}: {r:?}");
        let r = check_gradients(&[x], case, |g, v| g.avg_pool(v[0], window)).unwrap();
        assert!(r.max_relative_error < TOL, "avg case {case}: {r:?}");
    }
}

#[test]
fn dense_activation_and_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..6 {
        let (n, d, u) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));
        let x = uniform(&mut rng, &[n, d], -1.0, 1.0);
        let w = uniform(&mut rng, &[d, u], -1.0, 1.0);
        let b = uniform(&mut rng, &[u], -1.0, 1.0);
        let r = check_gradients(&[x, w, b], case, |g, v| g.dense(v[0], v[1], v[2])).unwrap();
        assert!(r.max_relative_error < TOL, "dense {case}: {r:?}");

        let z = away_from_zero(&mut rng, &[n, u]);
        let r = check_gradients(&[z.clone()], case, |g, v| Ok(g.relu(v[0]))).unwrap();
        assert!(r.max_relative_error < TOL, "relu {case}: {r:?}");
        let r = check_gradients(&[z.clone()], case, |g, v| Ok(g.sigmoid(v[0]))).unwrap();
        assert!(r.max_relative_error < TOL, "sigmoid {case}: {r:?}");

        let targets = Tensor::from_fn(&[n, u], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let s = uniform(&mut rng, &[n, u], 0.05, 0.95);
        let t = targets.clone();
        let r = check_gradients(&[s], case, move |g, v| g.bce(v[0], t.clone())).unwrap();
        assert!(r.max_relative_error < TOL, "bce {case}: {r:?}");
        let r = check_gradients(&[z], case, move |g, v| g.sigmoid_bce(v[0], targets.clone())).unwrap();
        assert!(r.max_relative_error < TOL, "sigmoid_bce {case}: {r:?}");
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..6 {
        let c = rng.gen_range(1..4);
        let shape = if case % 2 == 0 { vec![rng.gen_range(2..5), c] } else { vec![2, 3, 2, c] };
        let x = uniform(&mut rng, &shape, -2.0, 2.0);
        let scale = uniform(&mut rng, &[c], 0.5, 1.5);
        let shift = uniform(&mut rng, &[c], -0.5, 0.5);
        let r = check_gradients(&[x.clone(), scale.clone(), shift.clone()], case, |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], 1e-3)?.0)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "train {case}: {r:?}");
        let mean: Vec<f64> = (0..c).map(|i| i as f64 * 0.1).collect();
        let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
        let r = check_gradients(&[x, scale, shift], case, |g, v| {
            g.batch_norm_frozen(v[0], v[1], v[2], &mean, &var, 1e-3)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "frozen {case}: {r:?}");
    }
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..6 {
        let lead = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
        let (c1, c2) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let a = uniform(&mut rng, &[lead[0], lead[1], lead[2], c1], -1.0, 1.0);
        let b = uniform(&mut rng, &[lead[0], lead[1], lead[2], c2], -1.0, 1.0);
        let a2 = uniform(&mut rng, a.shape(), -1.0, 1.0);
        let r = check_gradients(&[a.clone(), b], case, |g, v| g.concat(&[v[0], v[1], v[0]])).unwrap();
        assert!(r.max_relative_error < TOL, "concat {case}: {r:?}");
        let r = check_gradients(&[a.clone(), a2], case, |g, v| g.add(v[0], v[1])).unwrap();
        assert!(r.max_relative_error < TOL, "add {case}: {r:?}");
        let r = check_gradients(&[a], case, |g, v| g.flatten(v[0])).unwrap();
        assert!(r.max_relative_error < TOL, "flatten {case}: {r:?}");
    }
}
