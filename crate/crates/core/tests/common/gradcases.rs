//! Finite-difference cases, one per differentiable op. Each op's output is
//! contracted with a fixed random projection so every output element
//! contributes to the scalar.

use std::sync::Arc;

use pointat_core::autodiff::{Tape, Var};
use pointat_core::model::{Arch, HeadKind, Layer, Model, ModelConfig};
use pointat_core::Tensor;

use super::*;

fn project(t: &mut Tape<'_, f64>, y: Var, seed: u64) -> Var {
    let n = t.value(y).numel();
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &[1, n], 1.0);
    let wv = t.constant(w);
    let flat = t.reshape(y, &[n]).unwrap();
    let out = t.affine(flat, wv, None).unwrap();
    t.sum(out)
}

pub const OPS: [&str; 11] = [
    "conv3",
    "conv1",
    "maxpool",
    "elu",
    "softmax",
    "affine",
    "add_scale_shift_reshape",
    "weighted_sum",
    "soft_argmax",
    "bilinear_select",
    "mse",
];

pub fn op(name: &str) -> GradReport {
    match name {
        "conv3" => {
            let mut r = rng(10);
            let inputs = [random_tensor(&mut r, &[2, 5, 6], 1.0), random_tensor(&mut r, &[3, 2, 3, 3], 1.0), random_tensor(&mut r, &[3], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.conv2d_valid(v[0], v[1], Some(v[2])).unwrap();
                project(t, y, 11)
            })
        }
        "conv1" => {
            let mut r = rng(12);
            let inputs = [random_tensor(&mut r, &[4, 3, 3], 1.0), random_tensor(&mut r, &[2, 4, 1, 1], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.conv2d_valid(v[0], v[1], None).unwrap();
                project(t, y, 13)
            })
        }
        "maxpool" => {
            // Distinct values spaced well beyond 2ε keep the argmax stable
            // under perturbation.
            let vals: Vec<f64> = (0..48).map(|i| ((i * 37) % 48) as f64 * 0.1).collect();
            let inputs = [Tensor::new([3, 4, 4], vals).unwrap()];
            check_inputs(&inputs, |t, v| {
                let y = t.maxpool2x2(v[0]).unwrap();
                project(t, y, 14)
            })
        }
        "elu" => {
            // Avoid the kink at 0.
            let inputs = [Tensor::new([6], vec![-2.0, -0.7, -0.05, 0.05, 0.4, 1.3]).unwrap()];
            check_inputs(&inputs, |t, v| {
                let y = t.elu(v[0]);
                project(t, y, 15)
            })
        }
        "softmax" => {
            let inputs = [random_tensor(&mut rng(16), &[1, 3, 4], 2.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.spatial_softmax(v[0]).unwrap();
                project(t, y, 17)
            })
        }
        "affine" => {
            let mut r = rng(18);
            let inputs = [random_tensor(&mut r, &[5], 1.0), random_tensor(&mut r, &[3, 5], 1.0), random_tensor(&mut r, &[3], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.affine(v[0], v[1], Some(v[2])).unwrap();
                project(t, y, 19)
            })
        }
        "add_scale_shift_reshape" => {
            let mut r = rng(20);
            let inputs = [random_tensor(&mut r, &[2, 3], 1.0), random_tensor(&mut r, &[6], 1.0)];
            check_inputs(&inputs, |t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let s = t.scale(s, 1.7);
                let s = t.scale_shift(s, &[0.5, -1.0, 2.0, 0.1, 3.0, -0.3], &[1.0; 6]).unwrap();
                let s = t.reshape(s, &[3, 2]).unwrap();
                project(t, s, 21)
            })
        }
        "weighted_sum" => {
            let mut r = rng(22);
            let inputs = [random_tensor(&mut r, &[3, 4], 1.0), random_tensor(&mut r, &[5, 3, 4], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.weighted_sum(v[0], v[1]).unwrap();
                project(t, y, 23)
            })
        }
        "soft_argmax" => {
            let inputs = [random_tensor(&mut rng(24), &[1, 4, 5], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.soft_argmax(v[0]).unwrap();
                project(t, y, 25)
            })
        }
        "bilinear_select" => {
            let mut r = rng(26);
            let kernel: Arc<[f64]> = random_tensor(&mut r, &[6 * 4 * 5], 1.0).data().into();
            let inputs = [random_tensor(&mut r, &[6], 1.0), random_tensor(&mut r, &[4], 1.0)];
            check_inputs(&inputs, |t, v| {
                let y = t.bilinear_select(v[0], v[1], kernel.clone()).unwrap();
                project(t, y, 27)
            })
        }
        "mse" => {
            let inputs = [random_tensor(&mut rng(28), &[2], 1.0)];
            check_inputs(&inputs, |t, v| t.mse(v[0], &[0.25, 0.75]).unwrap())
        }
        other => panic!("no gradient case named {other}"),
    }
}

/// 50 px input → 3×3 feature grid with a handful of channels.
pub fn tiny_model(head: HeadKind, modulation: bool) -> Model {
    let arch = Arch::custom(50, [2, 3, 2, 3, 2, 3, 2, 4], 8, [6, 4], vec![Layer::Conv3 { out: 3 }]);
    Model::init(ModelConfig { preset: None, arch, head, modulation }, 3).unwrap()
}

pub fn tiny_images() -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(40);
    (random_tensor(&mut r, &[3, 50, 50], 0.5), random_tensor(&mut r, &[3, 50, 50], 0.5))
}

/// Exemplar-branch loss of the modulated network w.r.t. every parameter.
pub fn exemplar_loss() -> GradReport {
    let model = tiny_model(HeadKind::Siamese, true);
    let params = model.params().cast::<f64>();
    let (ex, _) = tiny_images();
    check_params(&params, 12, 45, |t| {
        let x = t.constant(ex.clone());
        let exv = model.net().exemplar(t, x).unwrap();
        t.mse(exv.p_norm, &[0.3, 0.6]).unwrap()
    })
}
