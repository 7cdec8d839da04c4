//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullrec::dataset::{DatasetManifest, PairOptions, Split, SplitCounts};
use skullrec::defect::{cranial_ball, inject, AnteriorAxis, CranialParams, DefectError, DefectKind, DefectSpec, FacialParams};
use skullrec::io::{load_volume, parse_nifti, parse_nrrd, write_nifti, write_nrrd, Encoding};
use skullrec::losses::dice_masks;
use skullrec::nn::{Model, ModelConfig, Tape, Tensor, Var};
use skullrec::ops::{make_phantom, PhantomSpec};
use skullrec::registration::{apply_transform, quat_angle, quat_conj, quat_from_rotation_vector, quat_mul, register_similarity, SimilarityTransform};
use skullrec::trainer::{evaluate, train, TrainConfig};
use skullrec::Volume;

use common::{make_pairs, mutate, naive_conv, naive_convt, random_volume, same_bits};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Duration, limit_s: u64) -> bool {
    t < Duration::from_secs(limit_s)
}

// 1. Format round-trip and header fuzzing.
fn format_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut exact = 0;
    for _ in 0..200 {
        let v = random_volume(&mut rng, 16);
        let ok = [Encoding::Raw, Encoding::Gzip]
            .iter()
            .all(|&e| parse_nrrd(&write_nrrd(&v, e)).is_ok_and(|b| same_bits(&v, &b)))
            && [false, true].iter().all(|&gz| parse_nifti(&write_nifti(&v, gz)).is_ok_and(|b| same_bits(&v, &b)));
        exact += usize::from(ok);
    }
    let mut panics = 0;
    let mut rejected = 0;
    for i in 0..1000 {
        let v = random_volume(&mut rng, 6);
        let res = if i % 2 == 0 {
            let bytes = mutate(&write_nrrd(&v, if i % 4 == 0 { Encoding::Raw } else { Encoding::Gzip }), 200, &mut rng);
            catch_unwind(|| parse_nrrd(&bytes).is_err())
        } else {
            let bytes = mutate(&write_nifti(&v, false), 352, &mut rng);
            catch_unwind(|| parse_nifti(&bytes).is_err())
        };
        match res {
            Ok(err) => rejected += usize::from(err),
            Err(_) => panics += 1,
        }
    }
    let t = start.elapsed();
    outcome(
        exact == 200 && panics == 0 && within(t, 30),
        format!("{exact}/200 bit-exact in 4 encodings, 1000 mutated headers: {panics} panics, {rejected} rejected, {t:.1?} (< 30 s)"),
    )
}

fn rand_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn rand_tensor64(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Magnitudes in [0.2, 1) with random sign, away from the ReLU kink.
fn off_kink(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    let d = (0..n).map(|_| rng.gen_range(0.2f32..1.0) * if rng.gen() { 1.0 } else { -1.0 }).collect();
    Tensor::from_vec(shape, d).unwrap()
}

/// Largest norm-wise relative error between analytic and central-difference
/// gradients over all leaves.
fn grad_error(leaves: &[Tensor<f32>], eps: f32, f: &dyn Fn(&mut Tape<f32>, &[Var]) -> Var) -> f32 {
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
    let mut worst = 0.0f32;
    for (li, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        let (mut diff, mut na, mut nn) = (0.0f32, 0.0f32, 0.0f32);
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[i] += eps;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[i] -= eps;
            let n = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            diff += (a - n).powi(2);
            na += a * a;
            nn += n * n;
        }
        let norm = na.sqrt().max(nn.sqrt());
        worst = worst.max(if norm == 0.0 { diff.sqrt() } else { diff.sqrt() / norm });
    }
    worst
}

type Case = (Vec<Tensor<f32>>, Box<dyn Fn(&mut Tape<f32>, &[Var]) -> Var>);

/// One random instance per call; the last leaf weights the op output so the
/// scalar loss exercises every output element.
fn grad_instance(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=2);
    let sp = rng.gen_range(2..=4);
    let shape = [n, c, sp, sp, sp];
    let weighted = |f: fn(&mut Tape<f32>, &[Var]) -> Var| -> Box<dyn Fn(&mut Tape<f32>, &[Var]) -> Var> {
        Box::new(move |t: &mut Tape<f32>, v: &[Var]| {
            let y = f(t, v);
            let m = t.mul(y, *v.last().unwrap()).unwrap();
            t.sum(m).unwrap()
        })
    };
    match op {
        "conv3d" => {
            let (co, s) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
            let p = if sp < 3 { 1 } else { rng.gen_range(0..=1) };
            let o = (sp + 2 * p - 3) / s + 1;
            let leaves = vec![
                rand_tensor(shape, rng),
                rand_tensor([co, c, 3, 3, 3], rng),
                rand_tensor([co, 1, 1, 1, 1], rng),
                rand_tensor([n, co, o, o, o], rng),
            ];
            let f: Box<dyn Fn(&mut Tape<f32>, &[Var]) -> Var> = Box::new(move |t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), s, p).unwrap();
                let m = t.mul(y, v[3]).unwrap();
                t.sum(m).unwrap()
            });
            (leaves, f)
        }
        "conv_transpose3d" => {
            let co = rng.gen_range(1..=3);
            let (s, p) = (rng.gen_range(1..=2), 1);
            let op = s - 1;
            let x = [n, c, sp - 1, sp - 1, sp - 1];
            let o = (sp - 2) * s + 3 + op - 2 * p;
            let leaves = vec![
                rand_tensor(x, rng),
                rand_tensor([c, co, 3, 3, 3], rng),
                rand_tensor([co, 1, 1, 1, 1], rng),
                rand_tensor([n, co, o, o, o], rng),
            ];
            let f: Box<dyn Fn(&mut Tape<f32>, &[Var]) -> Var> = Box::new(move |t, v| {
                let y = t.conv_transpose3d(v[0], v[1], Some(v[2]), s, p, op).unwrap();
                let m = t.mul(y, v[3]).unwrap();
                t.sum(m).unwrap()
            });
            (leaves, f)
        }
        "relu" => (vec![off_kink(shape, rng), rand_tensor(shape, rng)], weighted(|t, v| t.relu(v[0]).unwrap())),
        "prelu" => (
            vec![off_kink(shape, rng), Tensor::scalar(rng.gen_range(0.05..0.6)), rand_tensor(shape, rng)],
            weighted(|t, v| t.prelu(v[0], v[1]).unwrap()),
        ),
        "affine" => (
            vec![rand_tensor(shape, rng), rand_tensor(shape, rng)],
            weighted(|t, v| t.affine(v[0], -1.7, 0.3).unwrap()),
        ),
        "softmax_channels" => {
            let shape = [n, 2 + c, sp, sp, sp];
            (vec![rand_tensor(shape, rng), rand_tensor(shape, rng)], weighted(|t, v| t.softmax_channels(v[0]).unwrap()))
        }
        "mul" => (
            vec![rand_tensor(shape, rng), rand_tensor(shape, rng), rand_tensor(shape, rng)],
            weighted(|t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        "sum" => (
            vec![rand_tensor(shape, rng)],
            Box::new(|t: &mut Tape<f32>, v: &[Var]| {
                let s = t.sum(v[0]).unwrap();
                t.mul(s, s).unwrap()
            }),
        ),
        "soft_dice" => {
            let shape = [n, 2, sp, sp, sp];
            let len = shape.iter().product();
            let g: Vec<f32> = (0..len).map(|_| f32::from(rng.gen::<bool>())).collect();
            let target = Tensor::from_vec(shape, g).unwrap();
            (
                vec![rand_tensor(shape, rng)],
                Box::new(move |t: &mut Tape<f32>, v: &[Var]| {
                    let tv = t.leaf(target.clone());
                    let p = t.softmax_channels(v[0]).unwrap();
                    t.soft_dice(p, tv, 1e-5).unwrap()
                }),
            )
        }
        _ => unreachable!("{op}"),
    }
}

// 2. Finite-difference gradients and direct-convolution oracles.
fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let ops = ["conv3d", "conv_transpose3d", "relu", "prelu", "affine", "softmax_channels", "mul", "sum", "soft_dice"];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failing = Vec::new();
    let mut worst = 0.0f32;
    for op in ops {
        for _ in 0..20 {
            let (leaves, f) = grad_instance(op, &mut rng);
            let e = grad_error(&leaves, 1e-3, f.as_ref());
            worst = worst.max(e);
            if !(e < 1e-2) {
                failing.push(format!("{op} {e:.2e}"));
            }
        }
    }
    let mut conv_err = 0.0f64;
    for i in 0..60 {
        let (n, ci, co) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let sp = rng.gen_range(1..=4);
        let (s, p) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
        let k = if sp + 2 * p >= 3 { 3 } else { 1 };
        let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bt = Tensor::from_vec([co, 1, 1, 1, 1], b.clone()).unwrap();
        let mut tape = Tape::<f64>::new();
        let (got, want) = if i % 2 == 0 {
            let x = rand_tensor64([n, ci, sp, sp, sp], &mut rng);
            let w = rand_tensor64([co, ci, k, k, k], &mut rng);
            let want = naive_conv(&x, &w, &b, s, p);
            let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(bt));
            (tape.conv3d(xv, wv, Some(bv), s, p).unwrap(), want)
        } else {
            let x = rand_tensor64([n, ci, sp, sp, sp], &mut rng);
            let w = rand_tensor64([ci, co, 3, 3, 3], &mut rng);
            let op = s - 1;
            let want = naive_convt(&x, &w, &b, s, 1, op);
            let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(bt));
            (tape.conv_transpose3d(xv, wv, Some(bv), s, 1, op).unwrap(), want)
        };
        let got = tape.value(got).unwrap();
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            conv_err = conv_err.max((a - b).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        failing.is_empty() && conv_err <= 1e-6 && within(t, 120),
        format!(
            "{} ops x 20 instances, worst rel err {worst:.2e} (< 1e-2){}; 60 conv/transpose oracle cases, max abs err {conv_err:.1e} (<= 1e-6); {t:.1?} (< 120 s)",
            ops.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) },
        ),
    )
}

// 3. Paper architecture shapes.
fn architecture() -> Outcome {
    let cfg = ModelConfig::new(1, 2, vec![32, 64, 64, 128, 128, 256], vec![2; 6]);
    let layers = cfg.layers();
    let enc = layers.iter().filter(|l| !l.transposed).count();
    let dec = layers.iter().filter(|l| l.transposed).count();
    let model = Model::<f32>::build(cfg, 0).unwrap();
    let y = model.infer(&Tensor::zeros([1, 1, 64, 64, 64])).unwrap();
    outcome(
        y.shape() == [1, 2, 64, 64, 64] && enc == 6 && dec == 6,
        format!("output {:?}, encoder/decoder layers {enc}/{dec}", y.shape()),
    )
}

// 4. Defect set identities and the sphere oracle.
fn defect_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut pairs, mut identity_ok, mut cranial, mut sphere_ok, mut empty) = (0, 0, 0, 0, 0);
    while pairs < 100 {
        let n = rng.gen_range(20..=36);
        let complete = make_phantom(&PhantomSpec::for_dims([n, n + rng.gen_range(0..4), n], rng.gen())).unwrap();
        let spec = if rng.gen() {
            let center = rng.gen::<bool>().then(|| [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.5..1.0)]);
            DefectSpec::cranial(rng.gen(), CranialParams { center, radius: rng.gen_range(0.05..0.3) })
        } else {
            let lo = rng.gen_range(0.0..0.5);
            let anterior = [AnteriorAxis::PlusY, AnteriorAxis::MinusY, AnteriorAxis::PlusX, AnteriorAxis::MinusX][rng.gen_range(0..4)];
            let params = FacialParams { plane: rng.gen_range(0.5..0.9), z_band: [lo, rng.gen_range(lo + 0.1..1.0)], anterior };
            DefectSpec::facial(rng.gen(), params)
        };
        let pair = match inject(&complete, &spec) {
            Ok(p) => p,
            Err(DefectError::EmptyImplant) => {
                empty += 1;
                continue;
            }
            Err(e) => return outcome(false, format!("unexpected error {e}")),
        };
        pairs += 1;
        let (c, d, i) = (complete.as_u8().unwrap(), pair.defective.as_u8().unwrap(), pair.implant.as_u8().unwrap());
        identity_ok += usize::from((0..c.len()).all(|k| (d[k] | i[k]) == c[k] && (d[k] & i[k]) == 0));
        if spec.kind == DefectKind::Cranial {
            cranial += 1;
            let (ctr, r) = cranial_ball(&complete, &spec).unwrap();
            let [nx, ny, nz] = complete.dims();
            let mut same = true;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let d2 = (x as f64 - ctr[0]).powi(2) + (y as f64 - ctr[1]).powi(2) + (z as f64 - ctr[2]).powi(2);
                        let want = complete.get(x, y, z) == 1.0 && d2 <= r * r;
                        same &= (pair.implant.get(x, y, z) == 1.0) == want;
                    }
                }
            }
            sphere_ok += usize::from(same);
        }
    }
    outcome(
        identity_ok == 100 && sphere_ok == cranial,
        format!("{identity_ok}/100 pairs partition exactly, {sphere_ok}/{cranial} cranial removals match the sphere oracle ({empty} empty draws skipped)"),
    )
}

fn tiny_config() -> TrainConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json");
    TrainConfig::load(&path).unwrap()
}

// 5. Overfit and bit-exact rerun.
fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_pairs(dir.path(), 4, [32; 3], SplitCounts::new(4, 0, 0), &PairOptions::default(), 5);
    // Both runs use the identical config, paths included, since the
    // checkpoint embeds it.
    let run = || {
        let mut cfg = tiny_config();
        cfg.manifest = dir.path().join("pairs/manifest.json");
        cfg.checkpoint_dir = dir.path().join("ckpt");
        let out = train(&manifest, &cfg, None).unwrap();
        let bytes = std::fs::read(cfg.checkpoint_dir.join("last.skrc")).unwrap();
        (out, bytes, cfg)
    };
    let (out, first, cfg) = run();
    let report = evaluate(&out.last, &manifest, Split::Train).unwrap();
    let (_, second, _) = run();
    let dice = report.dice_foreground.mean;
    let min = report.cases.iter().map(|c| c.dice_foreground).fold(1.0, f64::min);
    let t = start.elapsed();
    outcome(
        dice >= 0.95 && first == second && within(t, 600),
        format!(
            "{} pairs at 32^3, {} epochs: train foreground dice mean {dice:.4} (min {min:.4}, >= 0.95), rerun checkpoint {}, {t:.1?} for both runs (< 600 s)",
            report.cases.len(),
            cfg.epochs,
            if first == second { "bit-identical" } else { "DIFFERS" },
        ),
    )
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (0.1..=1.0).contains(&n) {
            return v.map(|c| c / n);
        }
    }
}

// 6. Registration recovery.
fn registration_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let center = [31.5; 3];
    let (mut recovered, mut silent, mut worst_angle) = (0, 0, 0.0f64);
    for case in 0..20 {
        let moving = make_phantom(&PhantomSpec::for_dims([64; 3], 100 + case)).unwrap();
        let angle = rng.gen_range(-15.0f64..15.0).to_radians();
        let q = quat_from_rotation_vector(random_unit(&mut rng).map(|c| c * angle));
        let s = rng.gen_range(0.9..1.1);
        let t = random_unit(&mut rng).map(|c| c * 5.0 * rng.gen::<f64>().cbrt());
        let truth = SimilarityTransform::new(s, q, t, center).unwrap();
        let fixed = apply_transform(&moving, &truth);
        let r = register_similarity::<f64>(&moving, &fixed).unwrap();
        let est = r.transform.recentered(center);
        let ds = (est.scale - s).abs();
        let da = quat_angle(quat_mul(est.quaternion, quat_conj(q))).to_degrees();
        let dt = (0..3).map(|i| (est.translation_mm[i] - t[i]).powi(2)).sum::<f64>().sqrt();
        let ok = ds < 0.02 && da < 2.0 && dt < 1.0;
        worst_angle = worst_angle.max(da);
        recovered += usize::from(ok);
        silent += usize::from(!ok && r.converged);
    }
    let t = start.elapsed();
    outcome(
        recovered >= 18 && silent == 0 && within(t, 300),
        format!("{recovered}/20 recovered (>= 18), {silent} unflagged failures, worst angle error {worst_angle:.2} deg, {t:.1?} (< 300 s)"),
    )
}

fn skullrec(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_skullrec")).args(args).env("RUST_LOG", "warn").output().unwrap();
    if out.status.success() {
        Ok(String::from_utf8(out.stdout).unwrap())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

// 7. End-to-end through the binary.
fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |rel: &str| d.join(rel).to_str().unwrap().to_string();
    let run = || -> Result<Vec<(String, f64, usize)>, String> {
        skullrec(&["phantom", "--seed", "7", "--dims", "32,32,32", "--count", "2", "--out", &p("completes"), "--manifest", &p("completes.json")])?;
        skullrec(&["inject", "--manifest-in", &p("completes.json"), "--manifest-out", &p("pairs/manifest.json"), "--kind", "both", "--seed", "7", "--split", "2,0,0"])?;
        let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")).unwrap()).unwrap();
        cfg["manifest"] = "pairs/manifest.json".into();
        cfg["checkpoint_dir"] = "ckpt".into();
        std::fs::write(d.join("tiny.json"), cfg.to_string()).unwrap();
        skullrec(&["train", "--config", &p("tiny.json")])?;
        let manifest = DatasetManifest::load(&d.join("pairs/manifest.json")).unwrap();
        let mut cases = Vec::new();
        for e in manifest.pairs(Split::Train) {
            let defective = manifest.resolve(e.defective.as_ref().unwrap());
            let truth = manifest.resolve(e.implant.as_ref().unwrap());
            let recon = p(&format!("{}_recon.nrrd", e.id));
            let implant = p(&format!("{}_implant.nrrd", e.id));
            skullrec(&["reconstruct", "--ckpt", &p("ckpt/last.skrc"), "--in", defective.to_str().unwrap(), "--out", &recon])?;
            skullrec(&[
                "extract-implant", "--recon", &recon, "--defect", defective.to_str().unwrap(),
                "--out-implant", &implant, "--out-transform", &p(&format!("{}_tf.json", e.id)),
            ])?;
            let got: Volume = load_volume(Path::new(&implant)).unwrap();
            let want = load_volume(&truth).unwrap();
            cases.push((e.id.clone(), dice_masks(got.as_u8().unwrap(), want.as_u8().unwrap()), got.count_nonzero()));
        }
        Ok(cases)
    };
    match run() {
        Ok(cases) => {
            let elapsed = start.elapsed();
            let pass = cases.len() == 4 && cases.iter().all(|c| c.1 >= 0.80 && c.2 > 0) && within(elapsed, 900);
            let detail: Vec<String> = cases.iter().map(|(id, dc, n)| format!("{id} dice {dc:.3} ({n} vox)")).collect();
            outcome(pass, format!("{} pairs: {} (each >= 0.80); {elapsed:.1?} (< 900 s)", cases.len(), detail.join(", ")))
        }
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("format round-trip", format_round_trip),
        ("gradient suite", gradient_suite),
        ("architecture shape", architecture),
        ("defect identities", defect_identities),
        ("overfit experiment", overfit),
        ("registration recovery", registration_recovery),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!o.pass);
        println!("{} {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
