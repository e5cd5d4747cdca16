//! End-to-end acceptance checks. Runs as a plain binary so every verdict is
//! printed, one `PASS`/`FAIL` line per criterion, before the exit status is
//! decided.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use depthpose::data::{synth_dataset, Dataset, SynthConfig};
use depthpose::eval::{run_experiment, run_shoulder_experiment, Experiment, ExperimentOptions, OcclusionKind};
use depthpose::flow::{farneback_flow, FlowParams};
use depthpose::geometry::{
    euler_to_rotmat, ffd_loss, head_bbox, rotmat_to_euler, shoulder_frame, weighted_l2, AngleScales, CameraIntrinsics,
    GaussianMask, PoseAngles, ANGLE_WEIGHTS,
};
use depthpose::image::Image;
use depthpose::networks::{
    assemble_poseidon, fuse, fusion_conv_spec, train, BranchArch, FfdArch, FusionKind, LocnetArch, Loss, TrainConfig,
    TridentModel,
};
use depthpose::pipeline::{frame_inputs, gray_target, HeadLocator, PipelineConfig};
use depthpose::workflow::{
    checkpoint_net, checkpoint_path, checkpoint_scales, load_checkpoint, load_locator, load_prerequisites, load_trident,
    train_target, TrainSettings, TrainTarget,
};
use depthpose_tensor::gradcheck::{check_network, GradCheckConfig, GradCheckReport};
use depthpose_tensor::{LayerKind, Network, NetworkSpec, OptimizerConfig, Tensor};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const GRAD_TOL: f64 = 1e-3;
const GRAD_SEEDS: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_BUDGET: Duration = Duration::from_secs(600);

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

// ---------------------------------------------------------------- gradients

fn randomize_biases(net: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (key, t) in net.state.params.iter_mut() {
        if key.to_string().ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
        }
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn check_spec(spec: &NetworkSpec) -> GradCheckReport {
    let mut total = GradCheckReport::default();
    for seed in 0..GRAD_SEEDS {
        let mut net = Network::new(spec.clone(), 40 + seed).unwrap();
        randomize_biases(&mut net, seed);
        let x = random_tensor(&spec.input_shape, 900 + seed);
        total.merge(&check_network(&net, &x, seed, GradCheckConfig::default()).unwrap());
    }
    total
}

/// Central differences of the trident loss with respect to every parameter
/// set: branches, fusion filters and head.
fn check_trident(kind: FusionKind, seed: u64) -> GradCheckReport {
    let br = [
        Network::new(BranchArch::toy(1).spec().unwrap(), seed).unwrap(),
        Network::new(BranchArch::toy(1).spec().unwrap(), seed + 100).unwrap(),
        Network::new(BranchArch::toy(2).spec().unwrap(), seed + 200).unwrap(),
    ];
    let scales = AngleScales::new([1.0; 3]).unwrap();
    let mut m = assemble_poseidon([&br[0], &br[1], &br[2]], kind, scales, seed).unwrap();
    for (i, n) in m.all_networks_mut().into_iter().enumerate() {
        randomize_biases(n, seed * 7 + i as u64);
    }
    let x = [
        random_tensor(&[1, 8, 8], seed),
        random_tensor(&[1, 8, 8], seed + 1),
        random_tensor(&[2, 8, 8], seed + 2),
    ];
    let target = [0.3, -0.2, 0.1];
    let loss = Loss::L2;
    let (_, grads) = m.full_gradient(&x, &target, &loss).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut report = GradCheckReport::default();
    let n_nets = m.all_networks_mut().len();
    for ni in 0..n_nets {
        let keys: Vec<_> = m.all_networks_mut()[ni].state.params.keys().copied().collect();
        for key in keys {
            let len = m.all_networks_mut()[ni].state.params[&key].len();
            for _ in 0..len.min(8) {
                let i = rng.gen_range(0..len);
                let mut at = |d: f64| {
                    m.all_networks_mut()[ni].state.params.get_mut(&key).unwrap().data_mut()[i] += d;
                    let l = loss.eval(&m.infer(&x).unwrap(), &target).unwrap().0;
                    m.all_networks_mut()[ni].state.params.get_mut(&key).unwrap().data_mut()[i] -= d;
                    l
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let analytic = grads[ni].get(&key).unwrap().data()[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                let single = GradCheckReport {
                    checked: 1,
                    max_rel_error: rel,
                    worst: format!("{kind} net {ni} {key}[{i}]"),
                };
                report.merge(&single);
            }
        }
    }
    report
}

fn criterion_gradients() -> Verdict {
    let t = Instant::now();
    let mut cases: Vec<(String, NetworkSpec)> = vec![];
    let mut layer = |name: &str, shape: &[usize], layers: Vec<LayerKind>| {
        cases.push((name.to_string(), NetworkSpec::new(name, shape, layers).unwrap()));
    };
    layer("conv", &[2, 6, 7], vec![LayerKind::conv(3, 3, 1)]);
    layer(
        "conv-strided",
        &[2, 7, 8],
        vec![LayerKind::Conv2D {
            out_channels: 2,
            kernel_h: 2,
            kernel_w: 3,
            stride: 2,
            padding: 0,
        }],
    );
    layer("maxpool", &[2, 5, 7], vec![LayerKind::conv(2, 1, 0), LayerKind::MaxPool2x2]);
    layer("upsample", &[2, 3, 4], vec![LayerKind::conv(2, 1, 0), LayerKind::UpSample2x2]);
    layer("zeropad", &[2, 4, 4], vec![LayerKind::ZeroPad { rows: 1, cols: 2 }, LayerKind::conv(2, 3, 0)]);
    layer("dense", &[7], vec![LayerKind::dense(5)]);
    layer("tanh", &[7], vec![LayerKind::dense(5), LayerKind::Tanh]);
    layer("dropout", &[7], vec![LayerKind::dense(6), LayerKind::Dropout { rate: 0.5 }]);
    layer("flatten", &[2, 3, 3], vec![LayerKind::conv(2, 3, 1), LayerKind::Flatten, LayerKind::dense(3)]);
    cases.push(("locnet".into(), LocnetArch::toy().spec().unwrap()));
    cases.push(("branch-1ch".into(), BranchArch::toy(1).spec().unwrap()));
    cases.push(("branch-2ch".into(), BranchArch::toy(2).spec().unwrap()));
    cases.push(("ffd".into(), FfdArch::toy().spec().unwrap()));

    let mut worst = GradCheckReport::default();
    let mut worst_case = String::new();
    for (name, spec) in &cases {
        let r = check_spec(spec);
        if r.max_rel_error >= worst.max_rel_error {
            worst_case = name.clone();
        }
        worst.merge(&r);
    }
    for kind in FusionKind::ALL {
        for seed in 0..GRAD_SEEDS {
            let r = check_trident(kind, seed);
            if r.max_rel_error >= worst.max_rel_error {
                worst_case = format!("trident-{kind}");
            }
            worst.merge(&r);
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "1 gradients",
        worst.max_rel_error < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "{} cases x {GRAD_SEEDS} seeds, {} entries, max rel err {:.2e} ({worst_case}: {}), {:.1}s",
            cases.len() + FusionKind::ALL.len(),
            worst.checked,
            worst.max_rel_error,
            worst.worst,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------- losses

fn criterion_losses() -> Verdict {
    let ones = Tensor::new(&[3], vec![1.0; 3]).unwrap();
    let unit = weighted_l2(&ones, &[0.0; 3], &ANGLE_WEIGHTS).unwrap().0;
    let unit_neg = weighted_l2(&ones, &[2.0; 3], &ANGLE_WEIGHTS).unwrap().0;
    let zero = weighted_l2(&ones, &[1.0; 3], &ANGLE_WEIGHTS).unwrap().0;

    let mask = GaussianMask::new(8, 8, 3.5, 2.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut perfect = 0.0_f64;
    let mut oracle_err = 0.0_f64;
    for _ in 0..100 {
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pt = Tensor::new(&[1, 8, 8], p.clone()).unwrap();
        let qt = Tensor::new(&[1, 8, 8], q.clone()).unwrap();
        perfect = perfect.max(ffd_loss(&pt, &pt, &mask).unwrap().0.abs());
        // Gaussian centered at (R/2, C/2), deviations R/3.5 and C/2.5.
        let mut direct = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                let a = (i as f64 - 4.0) / (8.0 / 3.5);
                let b = (j as f64 - 4.0) / (8.0 / 2.5);
                let w = (-(a * a + b * b) / 2.0).exp();
                direct += w * (p[i * 8 + j] - q[i * 8 + j]).powi(2);
            }
        }
        direct /= 64.0;
        oracle_err = oracle_err.max((ffd_loss(&pt, &qt, &mask).unwrap().0 - direct).abs());
    }
    verdict(
        "2 losses",
        unit == 1.0 && unit_neg == 1.0 && zero == 0.0 && perfect == 0.0 && oracle_err < 1e-12,
        format!("angle loss unit {unit} / {unit_neg}, zero {zero}; masked loss perfect {perfect}, oracle diff {oracle_err:.1e}"),
    )
}

// ----------------------------------------------------------------- geometry

fn criterion_geometry() -> Verdict {
    let cam = CameraIntrinsics::new(500.0, 500.0).unwrap();
    let w = head_bbox((0.0, 0.0), cam, 320.0, 320.0, 1000.0).unwrap().width;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut inverse_err = 0.0_f64;
    for _ in 0..1000 {
        let d = rng.gen_range(300.0..5000.0);
        let k = rng.gen_range(1.1..4.0);
        let a = head_bbox((0.0, 0.0), cam, 320.0, 320.0, d).unwrap().width;
        let b = head_bbox((0.0, 0.0), cam, 320.0, 320.0, d * k).unwrap().width;
        inverse_err = inverse_err.max((a / b - k).abs() / k);
    }

    let mut frame_err = 0.0_f64;
    let mut triples = 0;
    while triples < 1000 {
        let mut p = || Vector3::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(500.0..2500.0));
        let (ls, rs, sb) = (p(), p(), p());
        let Ok(f) = shoulder_frame(ls, rs, sb) else { continue };
        triples += 1;
        let m = f.matrix();
        let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
        frame_err = frame_err.max(ortho).max((m.determinant().abs() - 1.0).abs());
    }

    let mut euler_err = 0.0_f64;
    for _ in 0..1000 {
        let a = PoseAngles::new(rng.gen_range(-85.0..85.0), rng.gen_range(-179.0..179.0), rng.gen_range(-179.0..179.0));
        let back = rotmat_to_euler(&euler_to_rotmat(a)).unwrap().angles;
        for (x, y) in a.to_array().into_iter().zip(back.to_array()) {
            euler_err = euler_err.max((x - y).abs());
        }
    }
    verdict(
        "3 geometry",
        w == 160.0 && inverse_err < 1e-12 && frame_err < 1e-9 && euler_err < 1e-9,
        format!(
            "box width {w}, inverse-proportionality err {inverse_err:.1e}, frame err {frame_err:.1e} over {triples} triples, euler round trip {euler_err:.1e} deg"
        ),
    )
}

// ------------------------------------------------------------------- fusion

fn criterion_fusion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    let mut trials = 0;
    for t in 0..50 {
        let da = 2 * rng.gen_range(1..9);
        let db = 2 * rng.gen_range(1..9);
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let a = random_tensor(&[da, r, c], t);
        let a2 = random_tensor(&[da, r, c], t + 500);
        let b = random_tensor(&[db, r, c], t + 1000);
        let conv = Network::new(fusion_conv_spec(da + db, (da + db) / 2, r, c).unwrap(), t).unwrap();
        let mul = fuse(&a, &a2, FusionKind::Multiplication, None).unwrap().shape()[0];
        let cat = fuse(&a, &b, FusionKind::Concatenation, None).unwrap().shape()[0];
        let cnv = fuse(&a, &b, FusionKind::Convolution, Some(&conv)).unwrap().shape()[0];
        let ones = Tensor::from_fn(&[da, r, c], |_| 1.0);
        let identity = fuse(&a, &ones, FusionKind::Multiplication, None).unwrap() == a;
        trials += 1;
        if (mul, cat, cnv) != (da, da + db, (da + db) / 2) || !identity {
            failures.push(format!("da {da} db {db}: {mul}/{cat}/{cnv}, identity {identity}"));
        }
    }
    verdict(
        "4 fusion",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{trials} random channel pairs exact, multiplication by ones is the identity")
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------------ oracles

fn all_ids(ds: &Dataset) -> Vec<String> {
    ds.samples().iter().map(|s| s.id.clone()).collect()
}

fn sgd(lr: f64, minibatch: usize, halve: u32) -> OptimizerConfig {
    let mut o = OptimizerConfig::sgd().with_minibatch(minibatch).with_learning_rate(lr);
    o.halve_every_epochs = halve;
    o
}

fn adadelta(multiplier: f64, minibatch: usize) -> OptimizerConfig {
    let mut o = OptimizerConfig::adadelta().with_minibatch(minibatch).with_learning_rate(multiplier);
    o.adadelta_eps = 1e-12;
    o
}

fn train_and_save(dir: &Path, ds: &Dataset, target: TrainTarget, epochs: u32, optimizer: OptimizerConfig) {
    let pre = load_prerequisites(dir, target).unwrap();
    let settings = TrainSettings {
        epochs,
        optimizer: Some(optimizer),
        ..Default::default()
    };
    train_target(target, ds, &all_ids(ds), &pre, &settings).unwrap().save(dir).unwrap();
}

fn mean_angle_error(e: &Experiment) -> [f64; 3] {
    [e.stats.pitch.mean, e.stats.roll.mean, e.stats.yaw.mean]
}

fn file_digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

/// Trains the full trident on 32 synthetic frames and reports the training
/// error (5a), the branch freezing contract (6) and the occlusion ordering on
/// a held-out synthetic set (8).
fn trident_criteria(dir: &Path) -> Vec<Verdict> {
    let t = Instant::now();
    let ds = synth_dataset(&SynthConfig {
        count: 32,
        sequences: 4,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    train_and_save(dir, &ds, TrainTarget::Ffd, 100, adadelta(300.0, 8));
    for target in [TrainTarget::BranchDepth, TrainTarget::BranchFfd, TrainTarget::BranchMotion] {
        train_and_save(dir, &ds, target, 150, sgd(0.1, 4, 60));
    }
    let branch_files: Vec<PathBuf> = [TrainTarget::BranchDepth, TrainTarget::BranchFfd, TrainTarget::BranchMotion]
        .iter()
        .map(|&t| checkpoint_path(dir, t))
        .collect();
    let files_before: Vec<Vec<u8>> = branch_files.iter().map(|p| file_digest(p)).collect();
    let branches: Vec<Network> = [TrainTarget::BranchDepth, TrainTarget::BranchFfd, TrainTarget::BranchMotion]
        .iter()
        .map(|&t| checkpoint_net(&load_checkpoint(dir, t).unwrap()).unwrap())
        .collect();
    let scales = AngleScales::new([1.0; 3]).unwrap();
    let untrained = assemble_poseidon([&branches[0], &branches[1], &branches[2]], FusionKind::ConvThenConcat, scales, 0)
        .unwrap()
        .branch_digest();

    train_and_save(dir, &ds, TrainTarget::Poseidon, 900, sgd(0.05, 4, 300));
    let trained_ck = load_checkpoint(dir, TrainTarget::Poseidon).unwrap();
    let trained = TridentModel::from_checkpoint(&trained_ck).unwrap().branch_digest();
    let files_after: Vec<Vec<u8>> = branch_files.iter().map(|p| file_digest(p)).collect();

    let est = load_trident(dir, &PipelineConfig::default()).unwrap();
    let train_err = mean_angle_error(&run_experiment(&est, None, &ds, &all_ids(&ds), &ExperimentOptions::default()).unwrap());
    let elapsed = t.elapsed();
    let worst = train_err.iter().cloned().fold(0.0, f64::max);

    let held_out = synth_dataset(&SynthConfig {
        count: 32,
        sequences: 4,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let ids = all_ids(&held_out);
    let clean = run_experiment(&est, None, &held_out, &ids, &ExperimentOptions::default()).unwrap();
    let top_opts = ExperimentOptions {
        occlusion: Some(OcclusionKind::Top),
        ..Default::default()
    };
    let top = run_experiment(&est, None, &held_out, &ids, &top_opts).unwrap();

    vec![
        verdict(
            "5a trident overfit",
            worst < 2.0 && elapsed < ORACLE_BUDGET,
            format!(
                "32 frames, mean error pitch {:.3} roll {:.3} yaw {:.3} deg, {:.0}s",
                train_err[0],
                train_err[1],
                train_err[2],
                elapsed.as_secs_f64()
            ),
        ),
        verdict(
            "6 frozen branches",
            trained == untrained && files_before == files_after,
            format!(
                "branch digest {} before and after head training, branch checkpoints {}",
                if trained == untrained { "equal" } else { "DIFFERS" },
                if files_before == files_after { "untouched" } else { "CHANGED" }
            ),
        ),
        verdict(
            "8 occlusion ordering",
            top.stats.pitch.mean >= clean.stats.pitch.mean,
            format!(
                "held-out synthetic set, pitch error top {:.2} vs unoccluded {:.2} deg",
                top.stats.pitch.mean, clean.stats.pitch.mean
            ),
        ),
    ]
}

fn locnet_oracle(dir: &Path) -> Verdict {
    let t = Instant::now();
    let ds = synth_dataset(&SynthConfig {
        count: 16,
        sequences: 16,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    train_and_save(dir, &ds, TrainTarget::Locnet, 1200, sgd(0.05, 4, 300));
    let loc = load_locator(dir, &PipelineConfig::default()).unwrap();
    let mut errors = Vec::new();
    for s in ds.samples() {
        let c = loc.locate(s).unwrap();
        errors.push((c.0 - s.head_center.0).hypot(c.1 - s.head_center.1));
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let elapsed = t.elapsed();
    verdict(
        "5b locnet overfit",
        mean < 1.0 && elapsed < ORACLE_BUDGET,
        format!("16 frames, mean localization error {mean:.3} px (worst {worst:.3}), {:.0}s", elapsed.as_secs_f64()),
    )
}

fn ffd_oracle() -> Verdict {
    let t = Instant::now();
    let ds = synth_dataset(&SynthConfig {
        count: 8,
        sequences: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let pc = PipelineConfig::default();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in ds.samples() {
        let f = frame_inputs(s, None, s.head_center, None, &pc).unwrap();
        ys.push(gray_target(s, &f.bbox, pc.crop_size).unwrap());
        xs.push(f.depth);
    }
    let mut net = Network::new(FfdArch::default().spec().unwrap(), 1).unwrap();
    let loss = Loss::Masked(GaussianMask::face());
    // A shorter second stage at a tenth of the step settles the fit.
    for (epochs, multiplier) in [(250, 300.0), (100, 30.0)] {
        let cfg = TrainConfig {
            epochs,
            optimizer: adadelta(multiplier, 8),
            seed: 0,
            jobs: 1,
        };
        train(&mut net, &xs, &ys, &loss, &cfg).unwrap();
    }
    let n = pc.crop_size;
    let (lo, hi) = (n / 4, 3 * n / 4);
    let mut mae = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let p = net.infer(x).unwrap();
        for i in lo..hi {
            for j in lo..hi {
                mae += (p.data()[i * n + j] - y[i * n + j]).abs();
            }
        }
    }
    mae /= (xs.len() * (hi - lo) * (hi - lo)) as f64;
    let elapsed = t.elapsed();
    verdict(
        "5c face reconstruction overfit",
        mae < 0.05 && elapsed < ORACLE_BUDGET,
        format!("8 pairs, central {0}x{0} MAE {mae:.4}, {1:.0}s", hi - lo, elapsed.as_secs_f64()),
    )
}

fn shoulder_oracle(dir: &Path) -> Verdict {
    let t = Instant::now();
    let ds = synth_dataset(&SynthConfig {
        count: 32,
        sequences: 4,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    train_and_save(dir, &ds, TrainTarget::Shoulder, 150, sgd(0.1, 4, 60));
    let ck = load_checkpoint(dir, TrainTarget::Shoulder).unwrap();
    let net = checkpoint_net(&ck).unwrap();
    let scales = checkpoint_scales(&ck).unwrap();
    let e = run_shoulder_experiment(&net, &scales, None, &ds, &all_ids(&ds), &PipelineConfig::default(), 1).unwrap();
    let err = mean_angle_error(&e);
    let elapsed = t.elapsed();
    verdict(
        "5d shoulder overfit",
        err.iter().all(|&x| x < 2.0) && elapsed < ORACLE_BUDGET,
        format!(
            "32 frames, mean error pitch {:.3} roll {:.3} yaw {:.3} deg, {:.0}s",
            err[0],
            err[1],
            err[2],
            elapsed.as_secs_f64()
        ),
    )
}

// --------------------------------------------------------------------- flow

fn texture(rows: usize, cols: usize, dx: f64) -> Image {
    Image::from_fn(rows, cols, |r, c| {
        let (x, y) = (c as f64 - dx, r as f64);
        0.5 + 0.2 * (0.29 * x + 0.21 * y).sin() + 0.15 * (0.17 * y - 0.13 * x + 0.8).cos()
            + 0.1 * (0.23 * x + 0.31 * y + 0.4).sin() * (0.11 * y + 0.2).cos()
    })
}

fn criterion_flow() -> Verdict {
    let p = FlowParams::default();
    let a = texture(64, 64, 0.0);
    let zero = farneback_flow(&a, &a, &p).unwrap().max_magnitude();
    let f = farneback_flow(&a, &texture(64, 64, 2.0), &p).unwrap();
    let margin = 8;
    let mut epe = 0.0;
    let mut n = 0.0;
    for r in margin..f.rows - margin {
        for c in margin..f.cols - margin {
            let k = r * f.cols + c;
            epe += (f.u[k] - 2.0).hypot(f.v[k]);
            n += 1.0;
        }
    }
    epe /= n;
    verdict(
        "7 flow",
        zero < 1e-3 && epe < 0.25,
        format!("identical frames max {zero:.1e} px; (2,0) shift mean endpoint error {epe:.3} px over the interior"),
    )
}

// -------------------------------------------------------------- determinism

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_depthpose"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Verdict {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let mut ok = cli(d, &["synth", "--count", "6", "--set", "sequences=2", "--seed", "9", "--out", "ds"]);
        for target in ["ffd", "branch-depth", "branch-ffd", "branch-motion", "poseidon", "shoulder", "locnet"] {
            ok &= cli(
                d,
                &["train", target, "--dataset", "ds", "--epochs", "2", "--set", "minibatch=4", "--seed", "9", "--out", "ck"],
            );
        }
        ok &= cli(d, &["eval", "--dataset", "ds", "--checkpoints", "ck", "--occlusion", "all", "--seed", "9", "--out", "rep"]);
        ok &= cli(d, &["eval", "--dataset", "ds", "--checkpoints", "ck", "--model", "shoulder", "--out", "rep"]);
        ok &= cli(d, &["reconstruct", "--checkpoints", "ck", "ds/depth/01_01_00000.pgm", "face.pgm"]);
        ok &= cli(d, &["flow", "ds/depth/01_01_00000.pgm", "ds/depth/01_01_00001.pgm", "flow.dump"]);
        runs.push((ok, tree(d)));
    }
    let (ok_a, a) = &runs[0];
    let (ok_b, b) = &runs[1];
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let ckpts = a.keys().filter(|k| k.extension().is_some_and(|e| e == "ckpt")).count();
    let reports = a.keys().filter(|k| k.starts_with("rep")).count();
    verdict(
        "9 determinism",
        *ok_a && *ok_b && a.len() == b.len() && differing.is_empty() && ckpts == 7 && reports > 0,
        format!(
            "{} files ({ckpts} checkpoints, {reports} report files) compared across two runs, {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments the harness would parse; a
    // filter that excludes "acceptance" skips the whole suite.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.detail);
        verdicts.push(v.pass);
    };
    report(criterion_gradients());
    report(criterion_losses());
    report(criterion_geometry());
    report(criterion_fusion());
    let dir = tempfile::tempdir().unwrap();
    for v in trident_criteria(dir.path()) {
        report(v);
    }
    report(locnet_oracle(dir.path()));
    report(ffd_oracle());
    report(shoulder_oracle(dir.path()));
    report(criterion_flow());
    report(criterion_determinism());

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
