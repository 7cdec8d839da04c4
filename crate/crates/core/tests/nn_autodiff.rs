mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullrec::nn::{Model, ModelConfig, NnError, Tape, Tensor, Var};
use skullrec::scalar::Real;

use common::{naive_conv, naive_convt};

fn rand_tensor<T: Real>(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are not straddled.
fn rand_off_kink(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    let d = (0..n)
        .map(|_| {
            let m: f32 = rng.gen_range(0.2..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, d).unwrap()
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(Tensor::from_vec([b.len(), 1, 1, 1, 1], b.to_vec()).unwrap());
    let y = tape.conv3d(xv, wv, Some(bv), s, p).unwrap();
    tape.value(y).unwrap().clone()
}

fn run_convt(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize, op: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(Tensor::from_vec([b.len(), 1, 1, 1, 1], b.to_vec()).unwrap());
    let y = tape.conv_transpose3d(xv, wv, Some(bv), s, p, op).unwrap();
    tape.value(y).unwrap().clone()
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor::<f64>([1, 1, 3, 4, 5], &mut rng);
    let w = Tensor::scalar(1.0);
    assert_eq!(run_conv(&x, &w, &[0.0], 1, 0).data(), x.data());
}

#[test]
fn conv_all_ones_sums_to_eight() {
    let x = Tensor::full([1, 1, 2, 2, 2], 1.0);
    let w = Tensor::full([1, 1, 2, 2, 2], 1.0);
    let y = run_conv(&x, &w, &[0.0], 1, 0);
    assert_eq!(y.shape(), [1, 1, 1, 1, 1]);
    assert_eq!(y.item(), 8.0);
}

#[test]
fn convt_identity_and_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor::<f64>([1, 1, 2, 3, 2], &mut rng);
    assert_eq!(run_convt(&x, &Tensor::scalar(1.0), &[0.0], 1, 0, 0).data(), x.data());

    let v = Tensor::scalar(0.75);
    let y = run_convt(&v, &Tensor::full([1, 1, 2, 2, 2], 1.0), &[0.0], 2, 0, 0);
    assert_eq!(y.shape(), [1, 1, 2, 2, 2]);
    assert!(y.data().iter().all(|&e| e == 0.75));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_oracle(
        seed in any::<u64>(),
        n in 1usize..3, ci in 1usize..4, co in 1usize..4,
        d in 1usize..5, h in 1usize..5, w in 1usize..5,
        k in 1usize..4, s in 1usize..3, p in 0usize..2,
    ) {
        prop_assume!(d + 2 * p >= k && h + 2 * p >= k && w + 2 * p >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor::<f64>([n, ci, d, h, w], &mut rng);
        let wt = rand_tensor::<f64>([co, ci, k, k, k], &mut rng);
        let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = run_conv(&x, &wt, &b, s, p);
        let want = naive_conv(&x, &wt, &b, s, p);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, e) in got.data().iter().zip(want.data()) {
            prop_assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn convt_matches_scatter_oracle(
        seed in any::<u64>(),
        n in 1usize..3, ci in 1usize..4, co in 1usize..4,
        d in 1usize..4, h in 1usize..4, w in 1usize..4,
        k in 1usize..4, s in 1usize..3, p in 0usize..2, op in 0usize..2,
    ) {
        prop_assume!(op < s.max(p + 1));
        prop_assume!((d.min(h).min(w) - 1) * s + k + op > 2 * p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor::<f64>([n, ci, d, h, w], &mut rng);
        let wt = rand_tensor::<f64>([ci, co, k, k, k], &mut rng);
        let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = run_convt(&x, &wt, &b, s, p, op);
        let want = naive_convt(&x, &wt, &b, s, p, op);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, e) in got.data().iter().zip(want.data()) {
            prop_assert!((a - e).abs() < 1e-6);
        }
    }

    /// <conv(x), y> == <x, conv_transpose(y)> with a shared kernel.
    #[test]
    fn conv_and_transpose_are_adjoint(
        seed in any::<u64>(), ci in 1usize..3, co in 1usize..3,
        d in 2usize..6, s in 1usize..3, p in 0usize..2,
    ) {
        let k = 3;
        prop_assume!(d + 2 * p >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor::<f64>([1, ci, d, d, d], &mut rng);
        let w = rand_tensor::<f64>([co, ci, k, k, k], &mut rng);
        let cx = run_conv(&x, &w, &vec![0.0; co], s, p);
        let y = rand_tensor::<f64>(cx.shape(), &mut rng);
        // the transposed conv needs enough output padding to land back on d
        let od = cx.shape()[2];
        let op = d + 2 * p - ((od - 1) * s + k);
        prop_assume!(op < s.max(p + 1));
        let ty = run_convt(&y, &w.clone(), &vec![0.0; ci], s, p, op);
        // conv weight (co, ci, ..) read as transpose weight (Cin = co, Cout = ci)
        prop_assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn prelu_definition() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_vec([1, 1, 1, 1, 3], vec![-1.0, 2.0, -4.0]).unwrap());
    for (a, want) in [(0.0, [0.0, 2.0, 0.0]), (1.0, [-1.0, 2.0, -4.0]), (0.25, [-0.25, 2.0, -1.0])] {
        let al = tape.leaf(Tensor::scalar(a));
        let y = tape.prelu(x, al).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), want);
    }
}

#[test]
fn softmax_channels_cases() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_vec([1, 2, 1, 1, 2], vec![0.0, 1000.0, 0.0, 0.0]).unwrap());
    let y = tape.softmax_channels(x).unwrap();
    assert_eq!(tape.value(y).unwrap().data(), [0.5, 1.0, 0.5, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = rand_tensor::<f32>([2, 3, 3, 3, 3], &mut rng);
    r.data_mut().iter_mut().for_each(|v| *v *= 20.0);
    let x = tape.leaf(r);
    let y = tape.softmax_channels(x).unwrap();
    let p = tape.value(y).unwrap().data();
    for b in 0..2 {
        for i in 0..27 {
            let s: f32 = (0..3).map(|c| p[(b * 3 + c) * 27 + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn linear_gradient_is_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xt = rand_tensor::<f32>([1, 2, 2, 2, 2], &mut rng);
    let mut tape = Tape::new();
    let w = tape.leaf(rand_tensor::<f32>([1, 2, 2, 2, 2], &mut rng).with_grad());
    let x = tape.leaf(xt.clone());
    let wx = tape.mul(w, x).unwrap();
    let s = tape.sum(wx).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap(), xt.data());
    assert!(tape.grad(x).is_none());
}

#[test]
fn second_backward_has_no_tape() {
    let mut tape = Tape::<f32>::new();
    let w = tape.leaf(Tensor::scalar(2.0).with_grad());
    let s = tape.sum(w).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s), Err(NnError::NoTape));
    assert_eq!(tape.sum(w).unwrap_err(), NnError::NoTape);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f32>::new();
    let w = tape.leaf(Tensor::zeros([1, 1, 1, 1, 2]).with_grad());
    assert!(matches!(tape.backward(w), Err(NnError::NotScalar(_))));
}

/// Norm-wise relative error between analytic and central-difference
/// gradients of every leaf.
fn grad_check(leaves: Vec<Tensor<f32>>, eps: f32, f: impl Fn(&mut Tape<f32>, &[Var]) -> Var) -> Vec<f32> {
    let eval = |ls: &[Tensor<f32>]| -> f32 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ls.iter().map(|l| tape.leaf(l.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).unwrap().item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone().with_grad())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let mut errs = Vec::new();
    for (li, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        let mut numeric = vec![0.0f32; analytic.len()];
        for (i, nv) in numeric.iter_mut().enumerate() {
            let mut plus = leaves.clone();
            plus[li].data_mut()[i] += eps;
            let mut minus = leaves.clone();
            minus[li].data_mut()[i] -= eps;
            *nv = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        let diff: f32 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f32>().sqrt();
        let norm: f32 = analytic.iter().map(|a| a * a).sum::<f32>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f32>().sqrt());
        errs.push(if norm == 0.0 { diff } else { diff / norm });
    }
    errs
}

fn assert_grads(errs: Vec<f32>, what: &str) {
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < 1e-2, "{what}: leaf {i} relative error {e}");
    }
}

#[test]
fn gradcheck_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor([2, 2, 4, 4, 4], &mut rng);
    let w = rand_tensor([3, 2, 3, 3, 3], &mut rng);
    let b = rand_tensor([3, 1, 1, 1, 1], &mut rng);
    let r = rand_tensor([2, 3, 2, 2, 2], &mut rng);
    let errs = grad_check(vec![x, w, b, r], 1e-3, |t, v| {
        let y = t.conv3d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
        let m = t.mul(y, v[3]).unwrap();
        t.sum(m).unwrap()
    });
    assert_grads(errs, "conv3d");
}

#[test]
fn gradcheck_conv_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor([2, 2, 2, 2, 2], &mut rng);
    let w = rand_tensor([2, 3, 3, 3, 3], &mut rng);
    let b = rand_tensor([3, 1, 1, 1, 1], &mut rng);
    let r = rand_tensor([2, 3, 4, 4, 4], &mut rng);
    let errs = grad_check(vec![x, w, b, r], 1e-3, |t, v| {
        let y = t.conv_transpose3d(v[0], v[1], Some(v[2]), 2, 1, 1).unwrap();
        let m = t.mul(y, v[3]).unwrap();
        t.sum(m).unwrap()
    });
    assert_grads(errs, "conv_transpose3d");
}

#[test]
fn gradcheck_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_off_kink([1, 2, 2, 2, 3], &mut rng);
    let r = rand_tensor([1, 2, 2, 2, 3], &mut rng);
    let alpha = Tensor::scalar(0.3);
    let errs = grad_check(vec![x.clone(), alpha, r.clone()], 1e-3, |t, v| {
        let y = t.prelu(v[0], v[1]).unwrap();
        let m = t.mul(y, v[2]).unwrap();
        t.sum(m).unwrap()
    });
    assert_grads(errs, "prelu");
    let errs = grad_check(vec![x.clone(), r.clone()], 1e-3, |t, v| {
        let y = t.relu(v[0]).unwrap();
        let m = t.mul(y, v[1]).unwrap();
        t.sum(m).unwrap()
    });
    assert_grads(errs, "relu");
    let errs = grad_check(vec![x.clone(), r.clone()], 1e-3, |t, v| {
        let y = t.softmax_channels(v[0]).unwrap();
        let m = t.mul(y, v[1]).unwrap();
        let s = t.sum(m).unwrap();
        t.affine(s, -2.0, 1.0).unwrap()
    });
    assert_grads(errs, "softmax/affine");
}

#[test]
fn gradcheck_soft_dice() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor([2, 2, 2, 2, 2], &mut rng);
    let g: Vec<f32> = (0..32).map(|i| ((i * 7) % 3 == 0) as u8 as f32).collect();
    let target = Tensor::from_vec([2, 2, 2, 2, 2], g).unwrap();
    let errs = grad_check(vec![x], 1e-3, |t, v| {
        let tv = t.leaf(target.clone());
        let p = t.softmax_channels(v[0]).unwrap();
        t.soft_dice(p, tv, 1e-5).unwrap()
    });
    assert_grads(errs, "soft_dice");
}

fn toy_config() -> ModelConfig {
    ModelConfig::new(1, 2, vec![3], vec![2])
}

/// Loss `sum(logits * r)` through the model's own forward pass.
fn model_loss(model: &Model<f32>, x: &Tensor<f32>, r: &Tensor<f32>) -> f32 {
    let y = model.infer(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn gradcheck_two_layer_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut model = Model::<f32>::build(toy_config(), 5).unwrap();
    let mut flat = model.flat_params();
    // move the PReLU slope off its initial value so d/dalpha is exercised
    let alpha_at = model.params()[0].numel() + model.params()[1].numel();
    flat[alpha_at] = 0.4;
    model.set_flat_params(&flat).unwrap();
    let x = rand_tensor::<f32>([1, 1, 4, 4, 4], &mut rng);
    let r = rand_tensor::<f32>([1, 2, 4, 4, 4], &mut rng);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let rv = tape.leaf(r.clone());
    let fwd = model.forward(&mut tape, xv, true).unwrap();
    let m = tape.mul(fwd.logits, rv).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();
    model.collect_grads(&tape, &fwd);

    let eps = 1e-3;
    let mut off = 0;
    for (pi, p) in model.params().iter().enumerate() {
        let analytic = p.grad.clone().unwrap();
        let mut diff = 0.0f32;
        let mut norm = 0.0f32;
        for (i, a) in analytic.iter().enumerate() {
            let mut probe = model.clone();
            let mut f = flat.clone();
            f[off + i] += eps;
            probe.set_flat_params(&f).unwrap();
            let up = model_loss(&probe, &x, &r);
            f[off + i] -= 2.0 * eps;
            probe.set_flat_params(&f).unwrap();
            let down = model_loss(&probe, &x, &r);
            let n = (up - down) / (2.0 * eps);
            diff += (a - n).powi(2);
            norm += a * a;
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        assert!(rel < 1e-2, "param {pi}: relative error {rel}");
        off += p.numel();
    }
}

#[test]
fn model_gradients_populate_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut model = Model::<f32>::build(ModelConfig::new(1, 2, vec![2, 3], vec![2, 2]), 1).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor([1, 1, 4, 4, 4], &mut rng));
    let fwd = model.forward(&mut tape, x, true).unwrap();
    let s = tape.sum(fwd.logits).unwrap();
    tape.backward(s).unwrap();
    model.collect_grads(&tape, &fwd);
    for p in model.params() {
        assert_eq!(p.grad.as_ref().map(Vec::len), Some(p.numel()));
    }
}

#[test]
fn paper_architecture_shapes() {
    let cfg = ModelConfig::new(1, 2, vec![32, 64, 64, 128, 128, 256], vec![2; 6]);
    let layers = cfg.layers();
    assert_eq!(layers.iter().filter(|l| !l.transposed).count(), 6);
    assert_eq!(layers.iter().filter(|l| l.transposed).count(), 6);
    let model = Model::<f32>::build(cfg, 0).unwrap();
    let y = model.infer(&Tensor::zeros([1, 1, 64, 64, 64])).unwrap();
    assert_eq!(y.shape(), [1, 2, 64, 64, 64]);
}

#[test]
fn indivisible_dims_name_the_axis() {
    let model = Model::<f32>::build(ModelConfig::new(1, 2, vec![2, 2], vec![2, 2]), 0).unwrap();
    let err = model.infer(&Tensor::zeros([1, 1, 8, 6, 8])).unwrap_err();
    match err {
        NnError::InvalidConfig(m) => assert!(m.contains("H (y)"), "{m}"),
        e => panic!("{e:?}"),
    }
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::new(1, 2, vec![4, 8], vec![2]);
    assert!(matches!(Model::<f32>::build(c.clone(), 0), Err(NnError::InvalidConfig(_))));
    c.strides = vec![2, 0];
    assert!(c.validate().is_err());
    c.strides = vec![2, 2];
    c.num_res_units = 1;
    assert!(c.validate().is_err());
    assert!(ModelConfig::new(1, 2, vec![], vec![]).validate().is_err());
}

#[test]
fn deterministic_init_and_forward() {
    let cfg = ModelConfig::new(1, 2, vec![4, 8], vec![2, 2]);
    let a = Model::<f32>::build(cfg.clone(), 42).unwrap();
    let b = Model::<f32>::build(cfg.clone(), 42).unwrap();
    let c = Model::<f32>::build(cfg, 43).unwrap();
    assert_eq!(a.flat_params(), b.flat_params());
    assert_ne!(a.flat_params(), c.flat_params());
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_tensor::<f32>([1, 1, 8, 8, 8], &mut rng);
    assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
}

#[test]
fn batch_items_are_independent() {
    let model = Model::<f32>::build(ModelConfig::new(1, 2, vec![4, 8], vec![2, 2]), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x0 = rand_tensor::<f32>([1, 1, 8, 8, 8], &mut rng);
    let x1 = rand_tensor::<f32>([1, 1, 8, 8, 8], &mut rng);
    let batch = model.infer(&Tensor::stack(&[x0.clone(), x1.clone()]).unwrap()).unwrap();
    let single = Tensor::stack(&[model.infer(&x0).unwrap(), model.infer(&x1).unwrap()]).unwrap();
    for (a, b) in batch.data().iter().zip(single.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn flat_params_round_trip() {
    let mut m = Model::<f32>::build(ModelConfig::new(1, 2, vec![2], vec![2]), 3).unwrap();
    let mut flat = m.flat_params();
    flat[0] = 9.0;
    m.set_flat_params(&flat).unwrap();
    assert_eq!(m.params()[0].data()[0], 9.0);
    assert!(m.set_flat_params(&flat[1..]).is_err());
    let infos = m.param_infos();
    assert_eq!(infos[0].name, "encode.0.weight");
    assert_eq!(infos.last().unwrap().name, "decode.0.bias");
}
