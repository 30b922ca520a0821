//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustops::attack::{fgsm_perturb, AttackConfig};
use robustops::data::{DatasetRegistry, LabeledDataset, Provenance};
use robustops::defense::{pgd_perturb, DefenseConfig};
use robustops::nn::{Architecture, Layer, Model};
use robustops::orchestrator::{ModelRole, ModelVolume, NewModel};
use robustops::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a finite-difference value;
/// entries that agree to 1e-8 absolute count as exact.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let abs = (a - b).abs();
    if abs <= 1e-8 {
        0.0
    } else {
        abs / a.abs().max(b.abs())
    }
}

/// The seeded initialization with every bias redrawn from [−0.1, 0.1), so
/// no parameter class is identically zero while logits stay moderate.
pub fn random_model(arch: Architecture, seed: u64) -> Model {
    let mut m = Model::new(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    for t in m.parameters_mut() {
        if t.shape().len() == 1 {
            for v in t.values_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    m
}

pub fn random_batch(arch: Architecture, n: usize, seed: u64) -> (Tensor, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = match arch {
        Architecture::SmallCnn => vec![n, 1, 28, 28],
        Architecture::Mlp { .. } => vec![n, 784],
    };
    let x = Tensor::new(shape, (0..n * 784).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = (0..n).map(|_| rng.random_range(0..10u8)).collect();
    (x, y)
}

/// Mean loss summed back to a total: `N · mean`.
fn total_loss(m: &Model, x: &Tensor, y: &[u8]) -> f64 {
    m.loss(x, y).unwrap().mean_loss * y.len() as f64
}

/// Error of an analytic derivative `g` against finite differences of `f`
/// around 0 with step [`FD_STEP`].
///
/// Central differences are the oracle. When the forward and backward
/// slopes disagree, a ReLU or max-pool switch lies inside the ±h window
/// and the central difference averages two linear pieces; then `g` must
/// match the slope of one side instead.
pub fn fd_error(g: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    let (lp, l0, lm) = (f(h), f(0.0), f(-h));
    let central = rel_err(g, (lp - lm) / (2.0 * h));
    let (fwd, bwd) = ((lp - l0) / h, (l0 - lm) / h);
    if central <= 1e-4 || rel_err(fwd, bwd) <= 1e-3 {
        central
    } else {
        rel_err(g, fwd).min(rel_err(g, bwd))
    }
}

/// Largest [`fd_error`] of the input gradient over the given flat input
/// coordinates. Each sample's input gradient is the gradient of its own
/// loss, i.e. of the total loss.
pub fn input_grad_error(m: &Model, x: &Tensor, y: &[u8], coords: &[usize]) -> f64 {
    let (_, g) = m.loss_and_input_grad(x, y).unwrap();
    coords
        .iter()
        .map(|&c| {
            fd_error(g.values()[c], |d| {
                let mut xs = x.clone();
                xs.values_mut()[c] += d;
                total_loss(m, &xs, y)
            })
        })
        .fold(0.0, f64::max)
}

/// As [`input_grad_error`] for flat parameter coordinates against the
/// mean loss.
pub fn param_grad_error(m: &Model, x: &Tensor, y: &[u8], coords: &[usize]) -> f64 {
    let mut work = m.clone();
    work.compute_param_grads(x, y).unwrap();
    let g = work.param_grads();
    let p = m.params();
    coords
        .iter()
        .map(|&c| {
            fd_error(g[c], |d| {
                let mut shifted = m.clone();
                let mut pp = p.clone();
                pp[c] += d;
                shifted.set_params(&pp).unwrap();
                shifted.loss(x, y).unwrap().mean_loss
            })
        })
        .fold(0.0, f64::max)
}

/// Straight-line SmallCNN forward pass for one 28×28 image, written
/// without any of the library's kernels.
pub fn reference_cnn_logits(m: &Model, image: &[f64]) -> Vec<f64> {
    let layers = m.layers();
    let conv = |l: &Layer| match l {
        Layer::Conv2d { weight, bias } => (weight.values().to_vec(), bias.values().to_vec()),
        _ => panic!("expected conv"),
    };
    let (w1, b1) = conv(&layers[0]);
    let (w2, b2) = conv(&layers[3]);
    let (wd, bd) = match &layers[7] {
        Layer::Dense { weight, bias } => (weight.values().to_vec(), bias.values().to_vec()),
        _ => panic!("expected dense"),
    };
    // conv1: 1→8, 28→26, relu, pool → 13
    let mut a1 = vec![[[0.0f64; 26]; 26]; 8];
    for o in 0..8 {
        for r in 0..26 {
            for c in 0..26 {
                let mut s = b1[o];
                for ky in 0..3 {
                    for kx in 0..3 {
                        s += w1[o * 9 + ky * 3 + kx] * image[(r + ky) * 28 + c + kx];
                    }
                }
                a1[o][r][c] = s.max(0.0);
            }
        }
    }
    let mut p1 = vec![[[0.0f64; 13]; 13]; 8];
    for o in 0..8 {
        for r in 0..13 {
            for c in 0..13 {
                p1[o][r][c] = a1[o][2 * r][2 * c]
                    .max(a1[o][2 * r][2 * c + 1])
                    .max(a1[o][2 * r + 1][2 * c])
                    .max(a1[o][2 * r + 1][2 * c + 1]);
            }
        }
    }
    // conv2: 8→16, 13→11, relu, pool → 5
    let mut a2 = vec![[[0.0f64; 11]; 11]; 16];
    for o in 0..16 {
        for r in 0..11 {
            for c in 0..11 {
                let mut s = b2[o];
                for i in 0..8 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            s += w2[((o * 8 + i) * 3 + ky) * 3 + kx] * p1[i][r + ky][c + kx];
                        }
                    }
                }
                a2[o][r][c] = s.max(0.0);
            }
        }
    }
    let mut flat = Vec::with_capacity(400);
    for plane in a2.iter() {
        for r in 0..5 {
            for c in 0..5 {
                flat.push(
                    plane[2 * r][2 * c]
                        .max(plane[2 * r][2 * c + 1])
                        .max(plane[2 * r + 1][2 * c])
                        .max(plane[2 * r + 1][2 * c + 1]),
                );
            }
        }
    }
    (0..10)
        .map(|k| bd[k] + (0..400).map(|j| wd[k * 400 + j] * flat[j]).sum::<f64>())
        .collect()
}

/// Multinomial logistic regression by full-batch gradient descent; returns
/// held-out accuracy.
pub fn logistic_regression_accuracy(train: &LabeledDataset, test: &LabeledDataset, epochs: usize, lr: f64) -> f64 {
    let d = 784;
    let k = 10;
    let mut w = vec![0.0; k * d];
    let mut b = vec![0.0; k];
    let scores = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    };
    let n = train.len() as f64;
    for _ in 0..epochs {
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        for (i, &label) in train.labels().iter().enumerate() {
            let x = train.images().row(i);
            let s = scores(&w, &b, x);
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            for c in 0..k {
                let p = (s[c] - m).exp() / z - if c == label as usize { 1.0 } else { 0.0 };
                gb[c] += p;
                for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += p * v;
                }
            }
        }
        for (a, g) in w.iter_mut().zip(&gw) {
            *a -= lr * g / n;
        }
        for (a, g) in b.iter_mut().zip(&gb) {
            *a -= lr * g / n;
        }
    }
    let correct = test
        .labels()
        .iter()
        .enumerate()
        .filter(|(i, &label)| {
            let s = scores(&w, &b, test.images().row(*i));
            let best = (0..k).fold(0, |bi, c| if s[c] > s[bi] { c } else { bi });
            best == label as usize
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Random f32-exact dataset with `n` samples.
pub fn random_dataset(n: usize, seed: u64, version: &str) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * 784).map(|_| rng.random::<f32>() as f64).collect();
    let labels = (0..n).map(|_| rng.random_range(0..10u8)).collect();
    let images = Tensor::new(vec![n, 1, 28, 28], values).unwrap();
    LabeledDataset::new(images, labels, "fixture", version, Provenance::Clean).unwrap()
}

fn flip_byte(path: &Path, rng: &mut ChaCha8Rng) {
    let mut bytes = std::fs::read(path).unwrap();
    let at = rng.random_range(0..bytes.len());
    bytes[at] ^= rng.random_range(1..=255u8);
    std::fs::write(path, bytes).unwrap();
}

/// Registry round-trip for one random fixture, then a single flipped byte
/// in the stored container. Returns a description of the first failure.
pub fn registry_case(seed: u64) -> std::result::Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let reg = DatasetRegistry::new(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_dataset(rng.random_range(1..6), seed, &format!("v{seed}"));
    let entry = reg.put(&d).map_err(|e| e.to_string())?;
    let back = reg.get(d.name(), d.version()).map_err(|e| e.to_string())?;
    let same_bits = back.labels() == d.labels()
        && back.images().shape() == d.images().shape()
        && back.images().values().iter().zip(d.images().values()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_bits {
        return Err(format!("seed {seed}: dataset differs after round-trip"));
    }
    flip_byte(&entry.path.join("data.bin"), &mut rng);
    match reg.get(d.name(), d.version()) {
        Err(_) => Ok(()),
        Ok(_) => Err(format!("seed {seed}: corrupted container was accepted")),
    }
}

/// Volume round-trip for one random model, then a single flipped byte in
/// `params.bin`.
pub fn volume_case(seed: u64) -> std::result::Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let vol = ModelVolume::new(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = if seed.is_multiple_of(3) {
        Architecture::SmallCnn
    } else {
        Architecture::Mlp { hidden: rng.random_range(1..20) }
    };
    let model = random_model(arch, seed);
    let rec = vol
        .store(NewModel {
            role: ModelRole::Baseline,
            model: model.clone(),
            baseline_accuracy: rng.random(),
            train_config: None,
            defense_config: None,
            parent_model_id: None,
        })
        .map_err(|e| e.to_string())?;
    let id = rec.meta.model_id;
    let back = vol.load(&id).map_err(|e| e.to_string())?;
    let same_bits = back.model.architecture() == arch
        && back.model.params().iter().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.model.param_count() == model.param_count();
    if !same_bits {
        return Err(format!("seed {seed}: model differs after round-trip"));
    }
    flip_byte(&dir.path().join("volume/models").join(&id).join("params.bin"), &mut rng);
    match vol.load(&id) {
        Err(_) => Ok(()),
        Ok(_) => Err(format!("seed {seed}: corrupted params.bin was accepted")),
    }
}

/// FGSM against PGD with one saturating step and no random start on a
/// random MLP batch; true when the outputs agree bit for bit.
pub fn fgsm_pgd_case(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::Mlp { hidden: rng.random_range(4..24) };
    let model = random_model(arch, seed);
    let n = rng.random_range(1..9);
    let (mut x, y) = random_batch(arch, n, seed + 1);
    // pin some pixels to the clip boundaries
    for v in x.values_mut().iter_mut() {
        match rng.random_range(0..10) {
            0 => *v = 0.0,
            1 => *v = 1.0,
            _ => {}
        }
    }
    let eps = rng.random_range(0.001..1.0);
    let fgsm = fgsm_perturb(&model, &x, &y, &AttackConfig::new(eps)).unwrap();
    let cfg = DefenseConfig {
        epsilon_budget: eps,
        step_size_alpha: eps,
        pgd_steps_k: 1,
        random_start: false,
        ..DefenseConfig::default()
    };
    let pgd = pgd_perturb(&model, &x, &y, &cfg).unwrap();
    fgsm.values().iter().zip(pgd.values()).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Runs the CLI binary built for this test target.
pub fn robustops(ws: &Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_robustops"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .expect("spawn robustops")
}

/// Writes a manifest for the synthetic + MLP tier and returns its path.
pub fn write_manifest(dir: &Path, fields: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&fields).unwrap()).unwrap();
    path
}

pub fn ci_manifest() -> serde_json::Value {
    serde_json::json!({
        "seed": 0,
        "train_data": "synthetic-train:1",
        "eval_data": "synthetic-test:1",
        "architecture": "mlp-128",
        "epochs": 10,
        "learning_rate": 1e-3,
        "attack_epsilon": 0.25,
        "defense_epsilon": 0.25,
        "defense_epochs": 10,
        "defense_learning_rate": 1e-3
    })
}
