//! Overfits a handful of small-preset samples and reports the mean loss.
//! Usage: overfit <samples> <batch> <lr> <max_steps>

use std::time::Instant;

use pointat_core::model::Preset;
use pointat_core::scenegen::{build_dataset, DatasetConfig};
use pointat_core::training::{epoch_order, predict_sample, sample_loss, train_step, TrainConfig, TrainState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args[1].parse().unwrap();
    let batch: usize = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let max_steps: usize = args[4].parse().unwrap();
    let cfg = DatasetConfig::for_preset(Preset::Small).unwrap().with_counts(n, 0);
    let ds = build_dataset(&cfg, 5).unwrap();
    let mut tc = TrainConfig::new(Preset::Small);
    tc.adam.lr = lr;
    tc.batch_size = batch;
    let mut state = TrainState::new(tc).unwrap();
    let start = Instant::now();
    let mut step = 0;
    let mut epoch = 0;
    while step < max_steps {
        let order = epoch_order(0, epoch, n);
        for chunk in order.chunks(batch) {
            let b: Vec<_> = chunk.iter().map(|i| &ds.train[*i]).collect();
            train_step(&mut state, &b).unwrap();
            step += 1;
            if step % 100 == 0 {
                let mean = ds.train.iter().map(|s| sample_loss(&state.model, s, false).unwrap().0 as f64).sum::<f64>() / n as f64;
                println!("step {step} loss {mean:.6} t {:.0}s", start.elapsed().as_secs_f64());
                if step % 500 == 0 || mean < 1e-3 {
                    for (i, smp) in ds.train.iter().enumerate() {
                        let p = predict_sample(&state.model, smp).unwrap();
                        let r = &smp.record;
                        let de = ((p.exemplar.0 - r.target_pos[0]).hypot(p.exemplar.1 - r.target_pos[1])) as f32;
                        let s = p.search.unwrap();
                        let ds_ = ((s.0 - r.target_pos_search[0]).hypot(s.1 - r.target_pos_search[1])) as f32;
                        if de > 4.0 || ds_ > 4.0 {
                            let ex = state.model.exemplar_forward(&pointat_core::imageio::rgb_to_tensor(&smp.exemplar)).unwrap();
                            let xo = ex.x_o.data();
                            let (lo, hi) = xo.iter().fold((f32::MAX, f32::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
                            let pmax = ex.pose.as_ref().map(|p| (p.pos_dist.max(), p.orient_dist.max()));
                            println!("  sample {i}: exemplar err {de:.1}px search err {ds_:.1}px; x_o [{lo:.1}, {hi:.1}] attn max {:.4} pose peaks {pmax:?}", ex.attn.max());
                        }
                    }
                }
                if mean < 1e-3 {
                    return;
                }
            }
            if step >= max_steps {
                break;
            }
        }
        epoch += 1;
    }
}
