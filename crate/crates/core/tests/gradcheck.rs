//! Central finite-difference checks for every differentiable op.
//!
//! The oracle is numerical differentiation of the forward pass (h = 1e-3,
//! f64 evaluation); the code under test is the analytic backward pass.
//! Comparison is the norm-wise relative error over the full gradient of
//! each input, required below 1e-4 on randomized instances.

use dbp_core::graph::{Graph, TensorId};
use dbp_core::rng::{stream, StreamId};
use dbp_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const TRIALS: usize = 20;

type Build = dyn Fn(&mut Graph<f64>, &[TensorId]) -> TensorId;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn eval(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.value(loss).item()
}

fn analytic_grads(build: &Build, inputs: &[Tensor<f64>]) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).unwrap();
    ids.iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

fn fd_grads(build: &Build, inputs: &[Tensor<f64>]) -> Vec<Vec<f64>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for p in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[p].numel()];
        for (i, slot) in grad.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[p].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[p].data_mut()[i] -= H;
            let span = plus[p].data()[i] - minus[p].data()[i];
            *slot = (eval(build, &plus) - eval(build, &minus)) / span;
        }
        grads.push(grad);
    }
    grads
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn check(name: &str, build: &Build, inputs: &[Tensor<f64>]) {
    let analytic = analytic_grads(build, inputs);
    let numeric = fd_grads(build, inputs);
    for (idx, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = rel_error(a, n);
        assert!(
            err < TOL,
            "{name}: input {idx} gradient mismatch, relative error {err:.3e}"
        );
    }
}

/// Reduces an arbitrary output to a scalar with generic O(1) gradients by
/// dotting against a fixed random probe.
fn probe_loss(g: &mut Graph<f64>, out: TensorId, rng: &mut ChaCha8Rng) -> TensorId {
    let shape = g.value(out).shape().to_vec();
    let w = rand_tensor(rng, &shape, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

#[test]
fn conv2d_matches_finite_differences() {
    for trial in 0..TRIALS {
        let mut rng = stream(trial as u64, StreamId::Init);
        let (ci, co) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let (h, w) = (rng.random_range(4..7usize), rng.random_range(4..7usize));
        let stride = rng.random_range(1..3usize);
        let padding = rng.random_range(0..2usize);
        let x = rand_tensor(&mut rng, &[ci, h, w], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[co, ci, 3, 3], -1.0, 1.0);
        let probe_rng = stream(1000 + trial as u64, StreamId::Init);
        let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let y = g.conv2d(ids[0], ids[1], stride, padding).unwrap();
            probe_loss(g, y, &mut probe_rng.clone())
        };
        check("conv2d", &build, &[x, k]);
    }
}

#[test]
fn conv_transpose2d_matches_finite_differences() {
    for trial in 0..TRIALS {
        let mut rng = stream(100 + trial as u64, StreamId::Init);
        let (ci, co) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let (h, w) = (rng.random_range(3..6usize), rng.random_range(3..6usize));
        let stride = rng.random_range(1..3usize);
        let k = 2 * stride;
        let x = rand_tensor(&mut rng, &[ci, h, w], -1.0, 1.0);
        let ker = rand_tensor(&mut rng, &[ci, co, k, k], -1.0, 1.0);
        let probe_rng = stream(1100 + trial as u64, StreamId::Init);
        let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let y = g.conv_transpose2d(ids[0], ids[1], stride).unwrap();
            probe_loss(g, y, &mut probe_rng.clone())
        };
        check("conv_transpose2d", &build, &[x, ker]);
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    for trial in 0..TRIALS {
        let mut rng = stream(200 + trial as u64, StreamId::Init);
        let n = rng.random_range(3..12usize);
        let a = rand_tensor(&mut rng, &[n], -1.5, 1.5);
        let b = rand_tensor(&mut rng, &[n], -1.5, 1.5);
        for op in ["add", "sub", "mul"] {
            let probe_rng = stream(1200 + trial as u64, StreamId::Init);
            let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
                let y = match op {
                    "add" => g.add(ids[0], ids[1]).unwrap(),
                    "sub" => g.sub(ids[0], ids[1]).unwrap(),
                    _ => g.mul(ids[0], ids[1]).unwrap(),
                };
                probe_loss(g, y, &mut probe_rng.clone())
            };
            check(op, &build, &[a.clone(), b.clone()]);
        }

        // Keep relu inputs away from the kink and clamp away from bounds.
        let mut relu_in = rand_tensor(&mut rng, &[n], 0.1, 2.0);
        for (i, v) in relu_in.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let positive = rand_tensor(&mut rng, &[n], 0.2, 3.0);
        let mid = rand_tensor(&mut rng, &[n], -0.8, 0.8);
        let unary: [(&str, Tensor<f64>); 5] = [
            ("relu", relu_in),
            ("exp", mid.clone()),
            ("log", positive),
            ("square", mid.clone()),
            ("clamp", mid),
        ];
        for (op, input) in unary {
            let probe_rng = stream(1300 + trial as u64, StreamId::Init);
            let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
                let y = match op {
                    "relu" => g.relu(ids[0]),
                    "exp" => g.exp(ids[0]),
                    "log" => g.log(ids[0]).unwrap(),
                    "square" => g.square(ids[0]),
                    _ => g.clamp(ids[0], -1.0, 1.0),
                };
                probe_loss(g, y, &mut probe_rng.clone())
            };
            check(op, &build, &[input]);
        }
    }
}

#[test]
fn bias_add_and_reductions_match_finite_differences() {
    for trial in 0..TRIALS {
        let mut rng = stream(300 + trial as u64, StreamId::Init);
        let c = rng.random_range(1..4usize);
        let (h, w) = (rng.random_range(2..5usize), rng.random_range(2..5usize));
        let x = rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[c], -1.0, 1.0);
        let probe_rng = stream(1400 + trial as u64, StreamId::Init);
        let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let y = g.bias_add(ids[0], ids[1]).unwrap();
            probe_loss(g, y, &mut probe_rng.clone())
        };
        check("bias_add", &build, &[x.clone(), b]);

        let build_sum = |g: &mut Graph<f64>, ids: &[TensorId]| {
            let s = g.square(ids[0]);
            g.sum(s)
        };
        check("sum", &build_sum, &[x.clone()]);

        let factor = rng.random_range(-2.0..2.0f64);
        let build_scale = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let y = g.scale(ids[0], factor);
            let sq = g.square(y);
            g.sum(sq)
        };
        check("scale", &build_scale, &[x]);
    }
}

#[test]
fn gather_pixel_matches_finite_differences() {
    for trial in 0..TRIALS {
        let mut rng = stream(400 + trial as u64, StreamId::Init);
        let (h, w) = (rng.random_range(2..6usize), rng.random_range(2..6usize));
        let x = rand_tensor(&mut rng, &[h, w], -2.0, 2.0);
        let (row, col) = (rng.random_range(0..h), rng.random_range(0..w));
        let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let v = g.gather_pixel(ids[0], row, col).unwrap();
            g.square(v)
        };
        // Single-pixel gradients resolve much finer than the op-level bound.
        let analytic = analytic_grads(&build, &[x.clone()]);
        let numeric = fd_grads(&build, &[x]);
        let err = rel_error(&analytic[0], &numeric[0]);
        assert!(err < 1e-6, "gather_pixel relative error {err:.3e}");
    }
}

#[test]
fn composite_chain_matches_finite_differences() {
    // conv -> relu -> exp chain, the spec's three-op composite.
    for trial in 0..TRIALS {
        let mut rng = stream(500 + trial as u64, StreamId::Init);
        let x = rand_tensor(&mut rng, &[2, 5, 5], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[2, 2, 3, 3], -0.7, 0.7);
        let b = rand_tensor(&mut rng, &[2], -0.3, 0.3);
        let probe_rng = stream(1500 + trial as u64, StreamId::Init);
        let build = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let c = g.conv2d(ids[0], ids[1], 1, 1).unwrap();
            let c = g.bias_add(c, ids[2]).unwrap();
            let r = g.relu(c);
            let e = g.exp(r);
            probe_loss(g, e, &mut probe_rng.clone())
        };
        check("composite", &build, &[x, k, b]);
    }
}

#[test]
fn stop_gradient_subgraphs_differentiate_like_constants() {
    for trial in 0..TRIALS {
        let mut rng = stream(600 + trial as u64, StreamId::Init);
        let x = rand_tensor(&mut rng, &[6], -1.0, 1.0);
        // loss = sum(square(x) * sg(exp(x))); FD of the full function
        // differs, so the oracle here is the constant-substituted graph.
        let build = |g: &mut Graph<f64>, ids: &[TensorId]| {
            let e = g.exp(ids[0]);
            let s = g.stop_gradient(e);
            let q = g.square(ids[0]);
            let p = g.mul(q, s).unwrap();
            g.sum(p)
        };
        let frozen = {
            let mut g = Graph::new();
            let id = g.constant(x.clone());
            let e = g.exp(id);
            g.value(e).clone()
        };
        let build_const = move |g: &mut Graph<f64>, ids: &[TensorId]| {
            let c = g.constant(frozen.clone());
            let q = g.square(ids[0]);
            let p = g.mul(q, c).unwrap();
            g.sum(p)
        };
        let with_sg = analytic_grads(&build, &[x.clone()]);
        let with_const = analytic_grads(&build_const, &[x.clone()]);
        assert_eq!(with_sg, with_const, "trial {trial}");
        // And the constant graph agrees with finite differences.
        let numeric = fd_grads(&build_const, &[x]);
        assert!(rel_error(&with_const[0], &numeric[0]) < TOL);
    }
}
