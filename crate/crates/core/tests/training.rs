use pointat_core::imageio::rgb_to_tensor;
use pointat_core::model::{HeadKind, Preset};
use pointat_core::scenegen::{build_dataset, Dataset, DatasetConfig, LibraryCounts, Sample};
use pointat_core::training::*;
use pointat_core::{Error, Tensor};

fn small_dataset(n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let mut cfg = DatasetConfig::for_preset(Preset::Small).unwrap().with_counts(n_train, n_test);
    cfg.library = LibraryCounts { sprites_train: 40, sprites_test: 20, hands_train: 4, hands_test: 2 };
    build_dataset(&cfg, seed).unwrap()
}

fn config(batch: usize) -> TrainConfig {
    let mut c = TrainConfig::new(Preset::Small);
    c.batch_size = batch;
    c.adam.lr = 1e-3;
    c.seed = 17;
    c
}

fn run_steps(state: &mut TrainState, ds: &Dataset, total: u64) -> Vec<f32> {
    let mut losses = Vec::new();
    let control = TrainControl { max_steps: Some(total), skip_eval: true, cancel: None };
    train(state, ds, &control, |e| {
        if let TrainEvent::Step { loss, .. } = e {
            losses.push(loss);
        }
        Ok(())
    })
    .unwrap();
    losses
}

#[test]
fn same_seed_gives_bit_identical_first_steps() {
    let ds = small_dataset(8, 0, 2);
    let mut a = TrainState::new(config(2)).unwrap();
    let mut b = TrainState::new(config(2)).unwrap();
    let la = run_steps(&mut a, &ds, 10);
    let lb = run_steps(&mut b, &ds, 10);
    assert_eq!(la.len(), 10);
    assert_eq!(la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let ds = small_dataset(6, 0, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.ptat");

    let mut straight = TrainState::new(config(2)).unwrap();
    let l_straight = run_steps(&mut straight, &ds, 7);

    let mut first = TrainState::new(config(2)).unwrap();
    let mut l_split = run_steps(&mut first, &ds, 4);
    save_checkpoint(&first, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!((resumed.epoch, resumed.cursor, resumed.step()), (1, 1, 4));
    l_split.extend(run_steps(&mut resumed, &ds, 7));

    assert_eq!(l_straight, l_split);
    assert_eq!(
        checkpoint_to_container(&straight).unwrap().to_bytes(),
        checkpoint_to_container(&resumed).unwrap().to_bytes()
    );
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let ds = small_dataset(4, 0, 4);
    let mut state = TrainState::new(config(2)).unwrap();
    run_steps(&mut state, &ds, 1);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&state, &a).unwrap();
    save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(&std::fs::read(&a).unwrap()[..4], b"PTAT");
}

#[test]
fn loaded_checkpoint_reproduces_next_step_loss() {
    let ds = small_dataset(4, 0, 5);
    let mut state = TrainState::new(config(2)).unwrap();
    run_steps(&mut state, &ds, 2);
    let mut copy = checkpoint_from_container(&checkpoint_to_container(&state).unwrap()).unwrap();
    let batch: Vec<&Sample> = ds.train.iter().take(2).collect();
    let a = train_step(&mut state, &batch).unwrap();
    let b = train_step(&mut copy, &batch).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn map_bank_is_untouched_by_training() {
    let ds = small_dataset(4, 0, 6);
    let mut state = TrainState::new(config(2)).unwrap();
    let before: Vec<u32> = state.model.bank().unwrap().values().iter().map(|v| v.to_bits()).collect();
    run_steps(&mut state, &ds, 3);
    let after: Vec<u32> = state.model.bank().unwrap().values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
    assert!(state.model.params().iter().all(|(_, name, _)| !name.contains("bank")));
}

#[test]
fn preset_mismatch_is_rejected_before_training() {
    let mut cfg = DatasetConfig::for_preset(Preset::Default).unwrap().with_counts(1, 0);
    cfg.library = LibraryCounts { sprites_train: 10, sprites_test: 10, hands_train: 1, hands_test: 1 };
    let ds = build_dataset(&cfg, 1).unwrap();
    let mut state = TrainState::new(config(1)).unwrap();
    let err = train(&mut state, &ds, &TrainControl::default(), |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
    assert_eq!(state.step(), 0);
}

fn interval_overlap(a: f64, b: f64, size: f64) -> f64 {
    let (a0, a1, b0, b1) = (a - size / 2.0, a + size / 2.0, b - size / 2.0, b + size / 2.0);
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

#[test]
fn accuracy_matches_brute_force_iou_and_ignores_order() {
    let ds = small_dataset(0, 100, 8);
    let state = TrainState::new(config(1)).unwrap();
    let report = evaluate(&state.model, &ds.test).unwrap();
    let mut ex_ok = 0;
    let mut se_ok = 0;
    for s in &ds.test {
        let p = predict_sample(&state.model, s).unwrap();
        let size = s.record.exemplar.target.size as f64;
        let iou = |pred: (f64, f64), t: [f64; 2]| {
            let inter = interval_overlap(pred.0, t[0], size) * interval_overlap(pred.1, t[1], size);
            inter / (2.0 * size * size - inter)
        };
        ex_ok += (iou(p.exemplar, s.record.target_pos) >= 0.5 - 1e-9) as usize;
        se_ok += (iou(p.search.unwrap(), s.record.target_pos_search) >= 0.5 - 1e-9) as usize;
    }
    assert_eq!(report.exemplar_correct, ex_ok);
    assert_eq!(report.search_correct, Some(se_ok));
    let mut reversed = ds.test.clone();
    reversed.reverse();
    assert_eq!(evaluate(&state.model, &reversed).unwrap(), report);
}

#[test]
fn baselines_report_exemplar_accuracy_only() {
    let ds = small_dataset(0, 3, 9);
    let mut c = config(1);
    c.head = HeadKind::ConvBaseline;
    let state = TrainState::new(c).unwrap();
    let report = evaluate(&state.model, &ds.test).unwrap();
    assert_eq!(report.samples, 3);
    assert!(report.search_acc.is_none());
}

#[test]
fn teach_is_deterministic_and_store_round_trips() {
    let ds = small_dataset(0, 2, 10);
    let model = TrainState::new(config(1)).unwrap().model;
    let img = rgb_to_tensor(&ds.test[0].exemplar);
    let mut store = ObjectStore::new(model.feature_channels());
    teach(&model, &img, [1; 32], "cup", &mut store, false, 42).unwrap();
    let mut other = ObjectStore::new(model.feature_channels());
    teach(&model, &img, [1; 32], "cup", &mut other, false, 42).unwrap();
    assert_eq!(store, other);

    assert!(matches!(teach(&model, &img, [1; 32], "cup", &mut store, false, 43), Err(Error::DuplicateObject(_))));
    let r = teach(&model, &img, [1; 32], "cup", &mut store, true, 43).unwrap();
    assert!(r.replaced);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.ptat");
    store.save(&path).unwrap();
    let back = ObjectStore::load(&path).unwrap();
    assert_eq!(back, store);
    let f_bits = |s: &ObjectStore| s.get("cup").unwrap().f.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(f_bits(&back), f_bits(&store));
    back.save(&dir.path().join("again.ptat")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.ptat")).unwrap());
}

#[test]
fn find_rejects_unknown_names_and_blank_scenes_are_uniform() {
    let ds = small_dataset(0, 1, 11);
    let model = TrainState::new(config(1)).unwrap().model;
    let mut store = ObjectStore::new(model.feature_channels());
    let blank = Tensor::full([3, 94, 94], 0.3f32);
    let err = find(&model, &blank, "cup", &store).unwrap_err();
    assert!(err.to_string().contains("known objects: []"), "{err}");

    teach(&model, &rgb_to_tensor(&ds.test[0].exemplar), [0; 32], "cup", &mut store, false, 0).unwrap();
    let err = find(&model, &blank, "bowl", &store).unwrap_err();
    assert!(err.to_string().contains("[cup]"), "{err}");

    let r = find(&model, &blank, "cup", &store).unwrap();
    assert!((r.confidence - 1.0 / 196.0).abs() < 1e-6, "{}", r.confidence);
}

#[test]
fn wrong_image_size_names_the_resize() {
    let model = TrainState::new(config(1)).unwrap().model;
    let mut store = ObjectStore::new(model.feature_channels());
    let err = teach(&model, &Tensor::zeros([3, 100, 90]), [0; 32], "x", &mut store, false, 0).unwrap_err();
    assert!(err.to_string().contains("resize the image to 94x94"), "{err}");
}
