#![allow(dead_code)]

use mpif::autograd::check::{check_gradients, GradCheck};
use mpif::autograd::{Conv2dGeom, NormMode, Tensor};
use mpif::model::{Network, NetworkConfig, Session};
use mpif::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_REL_TOL: f64 = 1e-4;
pub const NET_REL_TOL: f64 = 1e-3;

pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn input(seed: u64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (random_tensor(seed, shape).to_vec(), shape.to_vec())
}

/// Values in ±[0.2, 1], away from the ReLU kink.
fn off_zero(seed: u64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    (v, shape.to_vec())
}

/// Scalar probe `Σ r ⊙ t` with fixed random weights, so every output
/// element gets a distinct upstream gradient.
fn probe(t: &Tensor, seed: u64) -> Tensor {
    t.mul(&random_tensor(seed ^ 0x9e37, t.shape())).unwrap().sum()
}

type OpFn = Box<dyn Fn(&[Tensor]) -> Tensor>;

/// Every differentiable operator, each checked against central differences.
pub fn op_gradient_suite() -> Vec<(String, GradCheck)> {
    let x4 = [2, 3, 4, 5];
    let mut cases: Vec<(String, OpFn, Vec<(Vec<f64>, Vec<usize>)>)> = vec![
        ("add".into(), Box::new(|t| probe(&t[0].add(&t[1]).unwrap(), 1)), vec![input(1, &x4), input(2, &x4)]),
        ("sub".into(), Box::new(|t| probe(&t[0].sub(&t[1]).unwrap(), 2)), vec![input(3, &x4), input(4, &x4)]),
        ("mul".into(), Box::new(|t| probe(&t[0].mul(&t[1]).unwrap(), 3)), vec![input(5, &x4), input(6, &x4)]),
        (
            "mul (channel broadcast)".into(),
            Box::new(|t| probe(&t[0].mul(&t[1]).unwrap(), 4)),
            vec![input(7, &x4), input(8, &[2, 3, 1, 1])],
        ),
        ("scale".into(), Box::new(|t| probe(&t[0].scale(-2.5), 5)), vec![input(9, &x4)]),
        ("sum".into(), Box::new(|t| t[0].mul(&t[0]).unwrap().sum()), vec![input(10, &x4)]),
        ("mean".into(), Box::new(|t| t[0].mul(&t[0]).unwrap().mean()), vec![input(11, &x4)]),
        ("relu".into(), Box::new(|t| probe(&t[0].relu(), 6)), vec![off_zero(12, &x4)]),
        ("sigmoid".into(), Box::new(|t| probe(&t[0].sigmoid(), 7)), vec![input(13, &x4)]),
        (
            "reshape".into(),
            Box::new(|t| probe(&t[0].reshape(&[6, 20]).unwrap(), 8)),
            vec![input(14, &x4)],
        ),
        (
            "concat".into(),
            Box::new(|t| probe(&Tensor::concat(&[t[0].clone(), t[1].clone()]).unwrap(), 9)),
            vec![input(15, &[2, 2, 3, 3]), input(16, &[2, 3, 3, 3])],
        ),
        (
            "narrow_channels".into(),
            Box::new(|t| probe(&t[0].narrow_channels(1, 2).unwrap(), 10)),
            vec![input(17, &x4)],
        ),
        (
            "split_channels".into(),
            Box::new(|t| {
                let parts = t[0].split_channels(&[1, 2]).unwrap();
                probe(&parts[0], 11).add(&probe(&parts[1], 12)).unwrap()
            }),
            vec![input(18, &x4)],
        ),
        (
            "linear".into(),
            Box::new(|t| probe(&t[0].linear(&t[1], Some(&t[2])).unwrap(), 13)),
            vec![input(19, &[3, 5]), input(20, &[4, 5]), input(21, &[4])],
        ),
        (
            "l2_normalize_rows".into(),
            Box::new(|t| probe(&t[0].l2_normalize_rows().unwrap(), 14)),
            vec![input(22, &[3, 5])],
        ),
        (
            "batch_norm2d (batch stats)".into(),
            Box::new(|t| {
                let (y, _) = t[0]
                    .batch_norm2d(&t[1], &t[2], (&[0.0; 3], &[1.0; 3]), 1e-5, NormMode::Batch)
                    .unwrap();
                probe(&y, 15)
            }),
            vec![input(23, &[3, 3, 2, 4]), input(24, &[3]), input(25, &[3])],
        ),
        (
            "batch_norm2d (running stats)".into(),
            Box::new(|t| {
                let (y, _) = t[0]
                    .batch_norm2d(&t[1], &t[2], (&[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]), 1e-5, NormMode::Running)
                    .unwrap();
                probe(&y, 16)
            }),
            vec![input(26, &[2, 3, 2, 4]), input(27, &[3]), input(28, &[3])],
        ),
        (
            "adaptive_avg_pool2d 1x1".into(),
            Box::new(|t| probe(&t[0].adaptive_avg_pool2d(1, 1).unwrap(), 17)),
            vec![input(29, &[2, 2, 5, 7])],
        ),
        (
            "adaptive_avg_pool2d 2x3".into(),
            Box::new(|t| probe(&t[0].adaptive_avg_pool2d(2, 3).unwrap(), 18)),
            vec![input(30, &[2, 2, 5, 7])],
        ),
        (
            "avg_pool2d k3 s2 p1".into(),
            Box::new(|t| probe(&t[0].avg_pool2d(3, 2, 1).unwrap(), 19)),
            vec![input(31, &[2, 2, 5, 7])],
        ),
        (
            "angular_margin m=4".into(),
            Box::new(|t| probe(&t[0].angular_margin(&[1, 0, 1], 4, 5.0).unwrap(), 20)),
            vec![(random_tensor(32, &[3, 2]).scale(0.9).to_vec(), vec![3, 2])],
        ),
        (
            "cross_entropy".into(),
            Box::new(|t| t[0].cross_entropy(&[1, 0, 1]).unwrap()),
            vec![input(33, &[3, 2])],
        ),
    ];
    let geoms = [(1, 0, 1, 3), (1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (2, 2, 2, 3), (2, 0, 1, 1)];
    for (i, &(s, p, d, k)) in geoms.iter().enumerate() {
        let g = Conv2dGeom::new(s, p, d);
        let seed = 40 + 3 * i as u64;
        cases.push((
            format!("conv2d k{k} stride {s} pad {p} dil {d}"),
            Box::new(move |t| probe(&t[0].conv2d(&t[1], Some(&t[2]), g).unwrap(), seed)),
            vec![input(seed, &[2, 2, 7, 8]), input(seed + 1, &[3, 2, k, k]), input(seed + 2, &[3])],
        ));
    }
    cases
        .into_iter()
        .map(|(name, f, inputs)| (name, check_gradients(f, &inputs, 1e-6, 1e-6)))
        .collect()
}

fn loss_of(net: &Network, x: &Tensor, targets: &[usize]) -> f64 {
    let mut s = Session::with_grads(&net.store, Mode::Train, false);
    let out = net.forward(&mut s, x).unwrap();
    net.loss(&out, targets, 3).unwrap().item().unwrap()
}

pub struct NetCheck {
    pub max_rel: f64,
    pub max_abs_near_zero: f64,
    pub checked: usize,
}

/// Backprop through a small but complete network (both block kinds, a
/// strided stage, SE, the margin head) against central differences on
/// every parameter.
pub fn network_gradient_check() -> NetCheck {
    let cfg = NetworkConfig {
        input_rows: 12,
        input_cols: 16,
        init_seed: 5,
        ..NetworkConfig::tiny([8, 8, 8, 8], 2)
    };
    let mut net = Network::new(&cfg).unwrap();
    let x = random_tensor(1, &[1, 1, 12, 16]);
    let targets = [1];
    let analytic = {
        let mut s = Session::new(&net.store, Mode::Train);
        let out = net.forward(&mut s, &x).unwrap();
        net.loss(&out, &targets, 3).unwrap().backward().unwrap();
        s.gradients()
    };
    let (h, floor) = (1e-5, 1e-6);
    let mut r = NetCheck {
        max_rel: 0.0,
        max_abs_near_zero: 0.0,
        checked: 0,
    };
    for pi in 0..net.store.params().len() {
        for j in 0..net.store.params()[pi].data.len() {
            let orig = net.store.params()[pi].data[j];
            net.store.params_mut()[pi].data[j] = orig + h;
            let plus = loss_of(&net, &x, &targets);
            net.store.params_mut()[pi].data[j] = orig - h;
            let minus = loss_of(&net, &x, &targets);
            net.store.params_mut()[pi].data[j] = orig;
            let num = (plus - minus) / (2.0 * h);
            let ana = analytic[pi][j];
            let scale = num.abs().max(ana.abs());
            if scale > floor {
                r.max_rel = r.max_rel.max((num - ana).abs() / scale);
            } else {
                r.max_abs_near_zero = r.max_abs_near_zero.max((num - ana).abs());
            }
            r.checked += 1;
        }
    }
    r
}
