mod common;

use common::*;
use pointat_core::autodiff::Tape;
use pointat_core::model::{Arch, HeadKind, Layer, Model, ModelConfig};
use pointat_core::Tensor;

fn tiny_model() -> Model {
    let arch = Arch::custom(50, [2, 3, 2, 3, 2, 3, 2, 4], 8, [6, 4], vec![Layer::Conv3 { out: 3 }]);
    Model::init(ModelConfig { preset: None, arch, head: HeadKind::Siamese, modulation: true }, 5).unwrap()
}

/// Features, response and attention of the search branch, in f64.
fn run(model: &Model, image: &Tensor<f64>, f: &[f64]) -> (Tensor<f64>, Vec<f64>, Vec<f64>) {
    let params = model.params().cast::<f64>();
    let mut tape = Tape::new(&params);
    let x = tape.constant(image.clone());
    let fv = tape.constant(Tensor::new([f.len()], f.to_vec()).unwrap());
    let s = model.net().search(&mut tape, x, fv).unwrap();
    (tape.value(s.features).clone(), tape.value(s.response).data().to_vec(), tape.value(s.attn).data().to_vec())
}

#[test]
fn zero_feature_vector_gives_uniform_attention() {
    let model = tiny_model();
    let image = random_tensor(&mut rng(1), &[3, 50, 50], 0.5);
    let c = model.feature_channels();
    let (_, response, attn) = run(&model, &image, &vec![0.0; c]);
    assert!(response.iter().all(|&v| v == 0.0));
    let n = attn.len() as f64;
    assert!(attn.iter().all(|&a| (a - 1.0 / n).abs() < 1e-12));
}

#[test]
fn response_is_a_one_by_one_convolution_with_f() {
    let model = tiny_model();
    let mut r = rng(2);
    let image = random_tensor(&mut r, &[3, 50, 50], 0.5);
    let c = model.feature_channels();
    let f = random_tensor(&mut r, &[c], 1.0);
    let (features, response, attn) = run(&model, &image, f.data());
    let (h, w) = (features.shape()[1], features.shape()[2]);
    let want = naive_conv(features.data(), c, h, w, f.data(), 1, 1, &[0.0]);
    for (a, b) in response.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let scaled: Vec<f64> = want.iter().map(|v| v / (c as f64).sqrt()).collect();
    for (a, b) in attn.iter().zip(precise_softmax(&scaled)) {
        assert!((a - b).abs() < 1e-12);
    }
}
