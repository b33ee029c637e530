//! Central-difference checks for every tape op.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Compares tape gradients of `f(inputs)` against central differences.
fn check<F>(inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            assert!(err < 1e-5, "input {k} element {i}: analytic {a} vs fd {fd}");
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

#[test]
fn matmul_and_row_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![2], -1.0, 1.0);
    let r = rand_tensor(&mut rng, vec![2], -1.0, 1.0);
    check(vec![x, w, b, r], |g, v| {
        let y = g.matmul(v[0], v[1]);
        let y = g.add_row(y, v[2]);
        let y = g.mul_row(y, v[3]);
        let y = g.square(y);
        g.sum(y)
    });
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, vec![2, 3], 0.2, 2.0);
    let b = rand_tensor(&mut rng, vec![2, 3], 0.2, 2.0);
    check(vec![a, b], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(v[0], v[1]);
        let m = g.mul(s, d);
        let q = g.div(m, v[1]);
        let e = g.exp(q);
        let l = g.log(v[0]);
        let sp = g.softplus(d);
        let sg = g.sigmoid(d);
        let t = g.add(e, l);
        let t = g.add(t, sp);
        let t = g.add(t, sg);
        let t = g.scale(t, 0.7);
        let t = g.add_scalar(t, 3.0);
        let t = g.leaky_relu(t, 0.2);
        g.mean(t)
    });
}

#[test]
fn leaky_relu_and_clamp_away_from_kinks() {
    let a = Tensor::vector(vec![-1.5, -0.3, 0.4, 2.0, 5.0, -7.0]);
    check(vec![a], |g, v| {
        let l = g.leaky_relu(v[0], 0.1);
        let c = g.clamp(v[0], -6.0, 4.0);
        let p = g.mul(l, c);
        g.sum(p)
    });
}

#[test]
fn special_function_ops() {
    let a = Tensor::vector(vec![0.3, 1.0, 2.7, 15.0]);
    let r = Tensor::vector(vec![0.05, 0.5, 0.93, 0.3]);
    check(vec![a, r], |g, v| {
        let lg = g.ln_gamma(v[0]);
        let dg = g.digamma(v[0]);
        let h = g.binary_entropy(v[1]);
        let t = g.add(lg, dg);
        let t = g.mul(t, h);
        g.sum(t)
    });
}

#[test]
fn binary_entropy_is_finite_at_the_boundary() {
    let mut g = Graph::new();
    let r = g.param(Tensor::vector(vec![0.0, 1.0]));
    let h = g.binary_entropy(r);
    let s = g.sum(h);
    assert_eq!(g.value(s).item(), 0.0);
    let grads = g.backward(s);
    assert!(grads.get(r).unwrap().all_finite());
}

#[test]
fn reductions_and_slicing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, vec![4, 5], -1.0, 1.0);
    check(vec![a], |g, v| {
        let c = g.sum_rows(v[0]);
        let c = g.square(c);
        let r = g.row_sum(v[0]);
        let r = g.exp(r);
        let s = g.slice_cols(v[0], 1, 4);
        let s = g.square(s);
        let s = g.reshape(s, vec![12]);
        let t1 = g.sum(c);
        let t2 = g.sum(r);
        let t3 = g.sum(s);
        let t = g.add(t1, t2);
        g.add(t, t3)
    });
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geom = ConvGeometry { channels: 2, height: 6, width: 5, kernel: 3, stride: 2, padding: 1 };
    let c_out = 3;
    let x = rand_tensor(&mut rng, vec![2, geom.input_len()], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![c_out, geom.patch_len()], -0.5, 0.5);
    let b = rand_tensor(&mut rng, vec![c_out], -0.5, 0.5);
    check(vec![x, w, b], move |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], geom);
        let y = g.square(y);
        g.sum(y)
    });
}

#[test]
fn conv_transpose2d_gradients_and_adjointness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // output image 2 × 6 × 6, produced from 3 channels at 3 × 3
    let geom = ConvGeometry { channels: 2, height: 6, width: 6, kernel: 4, stride: 2, padding: 1 };
    assert_eq!(geom.positions(), 9);
    let c_in = 3;
    let x = rand_tensor(&mut rng, vec![2, c_in * geom.positions()], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![c_in, geom.patch_len()], -0.5, 0.5);
    let b = rand_tensor(&mut rng, vec![geom.channels], -0.5, 0.5);
    check(vec![x.clone(), w.clone(), b], move |g, v| {
        let y = g.conv_transpose2d(v[0], v[1], v[2], geom);
        let y = g.square(y);
        g.sum(y)
    });

    // <convT(x), y> == <x, conv(y)> with zero biases
    let y = rand_tensor(&mut rng, vec![2, geom.input_len()], -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let zb_out = g.constant(Tensor::zeros(vec![geom.channels]));
    let zb_in = g.constant(Tensor::zeros(vec![c_in]));
    let yv = g.constant(y.clone());
    let up = g.conv_transpose2d(xv, wv, zb_out, geom);
    let down = g.conv2d(yv, wv, zb_in, geom);
    let lhs: f64 = g.value(up).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(down).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn bce_logits_rows_gradient_and_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = rand_tensor(&mut rng, vec![3, 4], -3.0, 3.0);
    let target = Rc::new(rand_tensor(&mut rng, vec![3, 4], 0.0, 1.0));
    let t2 = target.clone();
    check(vec![logits], move |g, v| {
        let rows = g.bce_logits_rows(v[0], t2.clone());
        let w = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let p = g.mul(rows, w);
        g.sum(p)
    });

    // zero logits cost log 2 per pixel
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(vec![2, 5]));
    let rows = g.bce_logits_rows(l, Rc::new(Tensor::new(vec![2, 5], vec![0., 1., 1., 0., 1., 0., 0., 0., 1., 1.])));
    for v in g.value(rows).data() {
        assert!((v - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn mog_logpdf_gradients_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = rand_tensor(&mut rng, vec![4, 2], -2.0, 2.0);
    let logits = rand_tensor(&mut rng, vec![3], -1.0, 1.0);
    let means = rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0);
    let log_stds = rand_tensor(&mut rng, vec![3, 2], -0.5, 0.5);
    check(vec![z, logits, means, log_stds], |g, v| {
        let lp = g.mog_logpdf(v[0], v[1], v[2], v[3]);
        g.sum(lp)
    });

    // 1-D, K = 3 mixture integrates to one
    let logits = Tensor::vector(vec![0.2, -0.4, 1.0]);
    let means = Tensor::matrix(3, 1, vec![-2.0, 0.5, 3.0]);
    let log_stds = Tensor::matrix(3, 1, vec![-0.3, 0.4, 0.0]);
    let n = 40_000;
    let (lo, hi) = (-30.0, 30.0);
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let mut g = Graph::new();
    let zv = g.constant(Tensor::matrix(grid.len(), 1, grid.clone()));
    let lv = g.constant(logits);
    let mv = g.constant(means);
    let sv = g.constant(log_stds);
    let lp = g.mog_logpdf(zv, lv, mv, sv);
    let dens: Vec<f64> = g.value(lp).data().iter().map(|v| v.exp()).collect();
    let h = (hi - lo) / n as f64;
    let integral: f64 = dens.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    assert!((integral - 1.0).abs() < 1e-4, "{integral}");
}

#[test]
fn gradients_accumulate_over_reuse_and_skip_constants() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![2.0]));
    let c = g.constant(Tensor::vector(vec![5.0]));
    let y = g.mul(x, x);
    let y = g.add(y, x);
    let y = g.mul(y, c);
    let s = g.sum(y);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[25.0]);
    assert!(grads.get(c).is_none());
}
