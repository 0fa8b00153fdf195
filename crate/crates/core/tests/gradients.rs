//! Finite-difference checks of every differentiable primitive and of the
//! full network.

use qapseg::model::{AblationFlags, Model, ModelConfig};
use qapseg::tensor::{grad_check, grad_check_coords, Graph, Shape, Tensor, Var};
use qapseg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;
const EPS: f64 = 1e-6;
/// Whole-network step: large enough to stay clear of round-off, with
/// stencils that straddle a branch point skipped by the checker.
const NET_EPS: f64 = 1e-5;

fn rand_t(shape: impl Into<Shape>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

/// Reduce an arbitrary output to a scalar with fixed random weights, so no
/// gradient component cancels by symmetry.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = rand_t(g.shape(y), seed ^ 0xabcd);
    g.weighted_sum(y, &w)
}

fn assert_grad<F>(label: &str, f: F, input: &Tensor<f64>)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let err = grad_check(f, input, EPS).unwrap();
    assert!(err < TOL, "{label}: max relative error {err:e}");
}

#[test]
fn conv2d_input_kernel_and_bias() {
    for (i, &(h, f, s, p, d)) in [
        (7, 3, 1, 1, 1),
        (9, 3, 2, 1, 1),
        (9, 3, 1, 2, 2),
        (10, 3, 1, 3, 3),
        (6, 1, 1, 0, 1),
    ]
    .iter()
    .enumerate()
    {
        let seed = i as u64;
        let x = rand_t([2, 3, h, h], seed);
        let k = rand_t([2, 3, f, f], seed + 10);
        let b = rand_t([1, 2, 1, 1], seed + 20);
        let (kc, bc, xc) = (k.clone(), b.clone(), x.clone());
        assert_grad(
            "conv2d/input",
            move |g, v| {
                let kv = g.leaf(kc.clone());
                let bv = g.leaf(bc.clone());
                let y = g.conv2d(v, kv, Some(bv), s, p, d)?;
                project(g, y, seed)
            },
            &x,
        );
        let bc = b.clone();
        assert_grad(
            "conv2d/kernel",
            move |g, v| {
                let xv = g.leaf(xc.clone());
                let bv = g.leaf(bc.clone());
                let y = g.conv2d(xv, v, Some(bv), s, p, d)?;
                project(g, y, seed)
            },
            &k,
        );
        let xc = x.clone();
        assert_grad(
            "conv2d/bias",
            move |g, v| {
                let xv = g.leaf(xc.clone());
                let kv = g.leaf(k.clone());
                let y = g.conv2d(xv, kv, Some(v), s, p, d)?;
                project(g, y, seed)
            },
            &b,
        );
    }
}

#[test]
fn conv2d_transpose_all_inputs() {
    let x = rand_t([2, 3, 4, 5], 1);
    let k = rand_t([3, 2, 2, 2], 2);
    let b = rand_t([1, 2, 1, 1], 3);
    let (kc, bc) = (k.clone(), b.clone());
    assert_grad(
        "tconv/input",
        move |g, v| {
            let kv = g.leaf(kc.clone());
            let bv = g.leaf(bc.clone());
            let y = g.conv2d_transpose(v, kv, Some(bv), 2)?;
            project(g, y, 4)
        },
        &x,
    );
    let (xc, bc) = (x.clone(), b.clone());
    assert_grad(
        "tconv/kernel",
        move |g, v| {
            let xv = g.leaf(xc.clone());
            let bv = g.leaf(bc.clone());
            let y = g.conv2d_transpose(xv, v, Some(bv), 2)?;
            project(g, y, 4)
        },
        &k,
    );
    assert_grad(
        "tconv/bias",
        move |g, v| {
            let xv = g.leaf(x.clone());
            let kv = g.leaf(k.clone());
            let y = g.conv2d_transpose(xv, kv, Some(v), 2)?;
            project(g, y, 4)
        },
        &b,
    );
}

#[test]
fn pooling_and_resize() {
    let x = rand_t([2, 2, 12, 12], 5);
    for (w, s) in [(2, 2), (4, 4), (6, 6), (3, 1), (10, 10)] {
        assert_grad(
            "max_pool",
            move |g, v| {
                let y = g.max_pool2d(v, w, s)?;
                project(g, y, 6)
            },
            &x,
        );
        assert_grad(
            "avg_pool",
            move |g, v| {
                let y = g.avg_pool2d(v, w, s)?;
                project(g, y, 6)
            },
            &x,
        );
    }
    for (oh, ow) in [(3, 3), (5, 7), (1, 1), (24, 17)] {
        let x = rand_t([1, 2, 4, 6], 7);
        assert_grad(
            "resize_bilinear",
            move |g, v| {
                let y = g.resize_bilinear(v, oh, ow)?;
                project(g, y, 8)
            },
            &x,
        );
    }
}

#[test]
fn elementwise_and_structural() {
    let x = rand_t([2, 3, 4, 4], 9);
    let other = rand_t([2, 3, 4, 4], 10);
    assert_grad(
        "relu",
        |g, v| {
            let y = g.relu(v);
            project(g, y, 1)
        },
        &x,
    );
    assert_grad(
        "softmax",
        |g, v| {
            let y = g.softmax_channels(v);
            project(g, y, 2)
        },
        &x,
    );
    let o = other.clone();
    assert_grad(
        "add",
        move |g, v| {
            let b = g.leaf(o.clone());
            let y = g.add(v, b)?;
            let y = g.mul(y, v)?;
            project(g, y, 3)
        },
        &x,
    );
    let o = other.clone();
    assert_grad(
        "mul",
        move |g, v| {
            let b = g.leaf(o.clone());
            let y = g.mul(b, v)?;
            Ok(g.sum(y))
        },
        &x,
    );
    let o = rand_t([2, 1, 4, 4], 11);
    assert_grad(
        "concat",
        move |g, v| {
            let b = g.leaf(o.clone());
            let y = g.concat_channels(&[b, v, v])?;
            project(g, y, 4)
        },
        &x,
    );
}

#[test]
fn focal_loss_wrt_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let target: Vec<usize> = (0..2 * 5 * 5).map(|_| rng.gen_range(0..4)).collect();
    let logits = rand_t([2, 4, 5, 5], 13);
    for gamma in [0.0, 1.0, 2.0, 3.5] {
        let t = target.clone();
        assert_grad(
            "focal_loss",
            move |g, v| {
                let p = g.softmax_channels(v);
                g.focal_loss(p, &t, gamma, &[1.0, 0.5, 2.0, 1.5])
            },
            &logits,
        );
    }
    // Directly w.r.t. a probability tensor (no softmax in between).
    let mut probs = Tensor::<f64>::uniform([1, 3, 4, 4], 0.05, 1.0, &mut rng);
    let s = probs.shape();
    for p in 0..s.plane() {
        let z: f64 = (0..3).map(|c| probs.data()[c * s.plane() + p]).sum();
        for c in 0..3 {
            probs.data_mut()[c * s.plane() + p] /= z;
        }
    }
    let t: Vec<usize> = (0..16).map(|i| i % 3).collect();
    assert_grad(
        "focal_loss/probs",
        move |g, v| g.focal_loss(v, &t, 2.0, &[1.0; 3]),
        &probs,
    );
}

fn tiny(flags: AblationFlags) -> Model<f64> {
    let cfg = ModelConfig {
        base_channels: 2,
        depth: 4,
        input_size: (48, 48),
        flags,
        ..ModelConfig::default()
    };
    let mut m = Model::build(cfg, 17).unwrap().cast::<f64>();
    // zero biases put units fed by dead regions exactly on the ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for (name, t) in m.params_mut() {
        if name.ends_with("bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    m
}

fn targets(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

fn sample_coords(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen_range(0..len)).collect()
}

/// Loss as a function of one named parameter, all others fixed.
fn loss_wrt<'a>(
    model: &'a Model<f64>,
    input: &'a Tensor<f64>,
    target: &'a [usize],
    name: &'a str,
) -> impl Fn(&mut Graph<f64>, Var) -> Result<Var> + 'a {
    move |g, p| {
        let mut pv = model.register(g, false);
        pv.insert(name.to_string(), p);
        let x = g.leaf(input.clone());
        let y = model.forward_graph(g, &pv, x)?;
        g.focal_loss(y, target, 2.0, &[1.0, 0.5, 2.0, 1.5])
    }
}

#[test]
fn full_network_parameter_gradients() {
    let model = tiny(AblationFlags::ALL);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = Tensor::<f64>::uniform([1, 1, 48, 48], 0.0, 1.0, &mut rng);
    let target = targets(48 * 48, 4, 4);
    for name in [
        "enc1.conv1.weight",
        "enc3.conv2.bias",
        "bottleneck.conv2.weight",
        "skip1.mod4.branch124.conv3.weight",
        "skip2.mod1.branch139.conv2.weight",
        "skip3.mod1.fuse.weight",
        "pyrmax1.fuse.weight",
        "pyravg3.fuse.weight",
        "dec4.tconv.weight",
        "dec3.conv1.weight",
        "dec1.conv2.bias",
        "head.weight",
    ] {
        let p = &model.params()[name];
        let coords = sample_coords(p.shape().numel(), 6, name.len() as u64);
        let r = grad_check_coords(loss_wrt(&model, &input, &target, name), p, NET_EPS, &coords)
            .unwrap();
        assert!(
            r.max_rel_error < TOL && r.kinks < coords.len(),
            "{name}: {r:?}"
        );
    }
}

#[test]
fn full_network_input_gradient() {
    let model = tiny(AblationFlags::ALL);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = Tensor::<f64>::uniform([1, 1, 48, 48], 0.0, 1.0, &mut rng);
    let target = targets(48 * 48, 4, 6);
    let coords = sample_coords(48 * 48, 24, 7);
    let f = |g: &mut Graph<f64>, x: Var| {
        let pv = model.register(g, false);
        let y = model.forward_graph(g, &pv, x)?;
        g.focal_loss(y, &target, 2.0, &[1.0; 4])
    };
    let r = grad_check_coords(f, &input, NET_EPS, &coords).unwrap();
    assert!(r.max_rel_error < TOL && r.kinks < coords.len() / 4, "{r:?}");
}
