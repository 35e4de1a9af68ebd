//! Analytic gradients against central finite differences in f64.

use cincgan::losses::*;
use cincgan::networks::{Network, NetworkKind, NetworkSpec, NormKind};
use cincgan::nn::Mode;
use cincgan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks `grad` against finite differences of `f` at `n` sampled entries.
fn check(name: &str, x: &Tensor<f64>, grad: &Tensor<f64>, n: usize, mut f: impl FnMut(&Tensor<f64>) -> f64) {
    assert_eq!(x.shape(), grad.shape(), "{name}");
    let len = x.data().len();
    let stride = (len / n).max(1);
    for i in (0..len).step_by(stride) {
        let mut p = x.clone();
        p.data_mut()[i] += H;
        let up = f(&p);
        p.data_mut()[i] -= 2.0 * H;
        let down = f(&p);
        let fd = (up - down) / (2.0 * H);
        let e = rel_err(grad.data()[i], fd);
        assert!(e <= TOL, "{name}[{i}]: analytic {} vs numeric {fd} (rel {e:.2e})", grad.data()[i]);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let shape = [1, 3, 8, 8];
    let a = random(shape, 1);
    let b = random(shape, 2);
    let c = cycle_loss(&a, &b).unwrap();
    check("cycle", &a, &c.grad, 64, |p| cycle_loss(p, &b).unwrap().value);
    let i = identity_loss_lr(&a, &b).unwrap();
    check("identity-lr", &a, &i.grad, 64, |p| identity_loss_lr(p, &b).unwrap().value);
    let i = identity_loss_hr(&a, &b).unwrap();
    check("identity-hr", &a, &i.grad, 64, |p| identity_loss_hr(p, &b).unwrap().value);
    let t = tv_loss(&a).unwrap();
    check("tv", &a, &t.grad, 64, |p| tv_loss(p).unwrap().value);
    let g = lsgan_g_loss(&a).unwrap();
    check("lsgan-g", &a, &g.grad, 64, |p| lsgan_g_loss(p).unwrap().value);
    let (_, gr, gf) = lsgan_d_loss(&a, &b).unwrap();
    check("lsgan-d real", &a, &gr, 64, |p| lsgan_d_loss(p, &b).unwrap().0);
    check("lsgan-d fake", &b, &gf, 64, |p| lsgan_d_loss(&a, p).unwrap().0);
}

/// Projects the output onto a fixed random direction so every output
/// element contributes to the scalar.
fn net_check(name: &str, spec: NetworkSpec, shape: [usize; 4]) {
    let net = Network::build(spec).unwrap();
    let mut params = net.init_weights::<f64>(3);
    // Larger weights than the default init keep the outputs well above the
    // finite-difference noise floor.
    for (t, d) in params.tensors.iter_mut().zip(net.decls()) {
        if d.kind.trainable() {
            let mut rng = ChaCha8Rng::seed_from_u64(t.data().len() as u64);
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
    let x = random(shape, 4);
    let trace = net.forward(&mut params, x.clone(), Mode::Train).unwrap();
    let dir = random(trace.output().shape(), 5);
    let scalar = |out: &Tensor<f64>| out.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum::<f64>();
    let mut grads = net.zero_grads::<f64>();
    let gx = net.backward(&params, &trace, &dir, Some(&mut grads), true).unwrap().unwrap();
    drop(trace);

    let mut p2 = params.clone();
    check(&format!("{name} input"), &x, &gx, 24, |p| {
        scalar(net.forward(&mut p2, p.clone(), Mode::Train).unwrap().output())
    });
    for (k, d) in net.decls().iter().enumerate() {
        if !d.kind.trainable() {
            continue;
        }
        let mut p3 = params.clone();
        check(&format!("{name} param {k}"), &params.tensors[k], &grads[k], 6, |t| {
            p3.tensors[k] = t.clone();
            scalar(net.forward(&mut p3, x.clone(), Mode::Train).unwrap().output())
        });
    }
}

#[test]
fn generator_same_gradients() {
    net_check("g-same", NetworkSpec::generator_same().with_channels(4).with_resblocks(1), [2, 3, 8, 8]);
}

#[test]
fn generator_same_gradients_without_norm() {
    net_check(
        "g-same/none",
        NetworkSpec::generator_same().with_channels(4).with_resblocks(1).with_norm(NormKind::None),
        [1, 3, 8, 8],
    );
}

#[test]
fn generator_same_gradients_with_global_skip() {
    net_check(
        "g-same/skip",
        NetworkSpec::generator_same().with_channels(4).with_resblocks(1).with_global_skip(true),
        [2, 3, 8, 8],
    );
}

#[test]
fn generator_down_gradients() {
    net_check("g-down", NetworkSpec::generator_down().with_channels(4).with_resblocks(1), [2, 3, 8, 8]);
}

#[test]
fn sr_gradients() {
    net_check("sr", NetworkSpec::sr().with_channels(4).with_resblocks(1), [1, 3, 8, 8]);
}

#[test]
fn discriminator16_gradients() {
    net_check(
        "d16",
        NetworkSpec::discriminator(NetworkKind::DiscriminatorPatch16).with_channels(2),
        [2, 3, 17, 17],
    );
}

#[test]
fn discriminator70_gradients() {
    net_check(
        "d70",
        NetworkSpec::discriminator(NetworkKind::DiscriminatorPatch70).with_channels(2),
        [2, 3, 72, 72],
    );
}
