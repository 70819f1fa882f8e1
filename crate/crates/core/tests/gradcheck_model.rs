mod common;

use common::*;
use pointat_core::autodiff::{Tape, Var};
use pointat_core::model::{HeadKind, Model};
use pointat_core::Tensor;

fn tiny_model(head: HeadKind, modulation: bool) -> Model {
    gradcases::tiny_model(head, modulation)
}

fn images() -> (Tensor<f64>, Tensor<f64>) {
    gradcases::tiny_images()
}

fn siamese_loss(model: &Model, tape: &mut Tape<'_, f64>, ex: &Tensor<f64>, se: &Tensor<f64>) -> Var {
    let net = model.net();
    let x = tape.constant(ex.clone());
    let exv = net.exemplar(tape, x).unwrap();
    let y = tape.constant(se.clone());
    let sv = net.search(tape, y, exv.f).unwrap();
    let l1 = tape.mse(exv.p_norm, &[0.3, 0.6]).unwrap();
    let l2 = tape.mse(sv.p_norm, &[0.7, 0.2]).unwrap();
    tape.add(l1, l2).unwrap()
}

#[test]
fn full_siamese_loss_passes_finite_differences() {
    let model = tiny_model(HeadKind::Siamese, true);
    let params = model.params().cast::<f64>();
    let (ex, se) = images();
    let report = check_params_away_from_kinks(&params, 12, 41, |t| siamese_loss(&model, t, &ex, &se));
    assert!(report.passes(), "{report:?}");
    assert!(report.kinks * 10 <= report.checked, "{report:?}");
}

#[test]
fn siamese_without_modulation_passes_finite_differences() {
    let model = tiny_model(HeadKind::Siamese, false);
    let params = model.params().cast::<f64>();
    let (ex, se) = images();
    let report = check_params(&params, 12, 42, |t| siamese_loss(&model, t, &ex, &se));
    assert!(report.passes(), "{report:?}");
}

#[test]
fn baselines_pass_finite_differences() {
    for head in [HeadKind::FcBaseline, HeadKind::ConvBaseline] {
        let model = tiny_model(head, false);
        let params = model.params().cast::<f64>();
        let (ex, _) = images();
        let report = check_params(&params, 12, 43, |t| {
            let x = t.constant(ex.clone());
            let (p, _) = model.net().predict_exemplar(t, x).unwrap();
            t.mse(p, &[0.4, 0.5]).unwrap()
        });
        assert!(report.passes(), "{head:?}: {report:?}");
    }
}

#[test]
fn modulation_path_passes_finite_differences_wrt_hand_logits() {
    use pointat_core::attention::{hand_pose, soft_select_map, spatial_softargmax, BeamSpec, MapBank};
    let bank = MapBank::build(BeamSpec::new(4, 5)).unwrap();
    let mut r = rng(44);
    let inputs = [
        random_tensor(&mut r, &[1, 4, 5], 1.5),
        random_tensor(&mut r, &[24, 4, 5], 1.5),
        random_tensor(&mut r, &[1, 4, 5], 1.5),
    ];
    let report = check_inputs(&inputs, |t, v| {
        let pose = hand_pose(t, v[0], v[1], bank.spec()).unwrap();
        let x_m = soft_select_map(t, pose.pos_dist, pose.orient_dist, &bank).unwrap();
        let logits = t.add(v[2], x_m).unwrap();
        let attn = t.spatial_softmax(logits).unwrap();
        let p = spatial_softargmax(t, attn).unwrap();
        t.mse(p, &[1.0, 2.5]).unwrap()
    });
    assert!(report.passes(), "{report:?}");
}

#[test]
fn exemplar_branch_loss_passes_finite_differences() {
    let report = gradcases::exemplar_loss();
    assert!(report.passes(), "{report:?}");
}
