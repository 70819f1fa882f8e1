//! Times forward and forward+backward passes of one small-preset sample.

use std::time::Instant;

use pointat_core::model::{HeadKind, Preset};
use pointat_core::scenegen::{build_dataset, DatasetConfig, LibraryCounts};
use pointat_core::training::{sample_loss, train_step, TrainConfig, TrainState};

fn main() {
    let mut cfg = DatasetConfig::for_preset(Preset::Small).unwrap().with_counts(16, 0);
    cfg.library = LibraryCounts { sprites_train: 40, sprites_test: 10, hands_train: 4, hands_test: 2 };
    let ds = build_dataset(&cfg, 1).unwrap();
    for head in [HeadKind::Siamese, HeadKind::ConvBaseline, HeadKind::FcBaseline] {
        let mut tc = TrainConfig::new(Preset::Small);
        tc.head = head;
        let mut state = TrainState::new(tc).unwrap();
        let t = Instant::now();
        for s in &ds.train[..4] {
            sample_loss(&state.model, s, false).unwrap();
        }
        let fwd = t.elapsed().as_secs_f64() / 4.0;
        let t = Instant::now();
        for s in &ds.train[..4] {
            sample_loss(&state.model, s, true).unwrap();
        }
        let both = t.elapsed().as_secs_f64() / 4.0;
        let batch: Vec<_> = ds.train[..8].iter().collect();
        train_step(&mut state, &batch).unwrap();
        let t = Instant::now();
        for _ in 0..5 {
            train_step(&mut state, &batch).unwrap();
        }
        let step = t.elapsed().as_secs_f64() / 5.0;
        println!("{head:?}: forward {fwd:.3}s  forward+backward {both:.3}s  batch-8 step {step:.3}s");
    }
}
