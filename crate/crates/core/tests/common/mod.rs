//! Test-only oracles: naive loop implementations and central finite
//! differences evaluated in 64-bit.
#![allow(dead_code)]

pub mod gradcases;

use pointat_core::attention::MapBank;
use pointat_core::autodiff::{ParamSet, Tape, Var};
use pointat_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cell `(i, j)` is lit by a beam from `(r, c)` at `theta` when the offset's
/// cosine to the beam axis is at least cos(width/2).
pub fn oracle_in_beam(r: usize, c: usize, theta_deg: f64, half_width_deg: f64, i: usize, j: usize) -> bool {
    let (dy, dx) = (i as f64 - r as f64, j as f64 - c as f64);
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return true;
    }
    let (s, co) = theta_deg.to_radians().sin_cos();
    (dx * co + dy * s) / len >= half_width_deg.to_radians().cos() - 1e-12
}

/// Number of cells where `bank` disagrees with [`oracle_in_beam`].
pub fn bank_mismatches(bank: &MapBank) -> usize {
    let spec = bank.spec();
    let mut mismatches = 0;
    for r in 0..spec.grid_h {
        for c in 0..spec.grid_w {
            for o in 0..spec.n_orient {
                let map = bank.map(r, c, o);
                let theta = o as f64 * spec.orient_step_deg;
                for i in 0..spec.grid_h {
                    for j in 0..spec.grid_w {
                        let want = if oracle_in_beam(r, c, theta, spec.beam_width_deg / 2.0, i, j) { 0.0 } else { -2.0 };
                        mismatches += (map[i * spec.grid_w + j] != want) as usize;
                    }
                }
            }
        }
    }
    mismatches
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// Six-nested-loop valid convolution.
pub fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, weight: &[f64], o: usize, k: usize, bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += input[ic * h * w + (y + dy) * w + x + dx] * weight[((oc * c + ic) * k + dy) * k + dx];
                        }
                    }
                }
                out[(oc * ho + y) * wo + x] = acc;
            }
        }
    }
    out
}

pub fn naive_pool(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for ic in 0..c {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(input[ic * h * w + (2 * y + dy) * w + 2 * x + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Softmax with log-sum-exp accumulated by Kahan-compensated summation.
pub fn precise_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in x {
        let y = (v - max).exp() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    x.iter().map(|v| (v - max).exp() / sum).collect()
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub worst: String,
    /// Elements left out because a nondifferentiable point lies inside the
    /// stencil.
    pub kinks: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel < 1e-2 && self.mean_rel < 1e-3
    }

    fn merge(&mut self, other: GradReport) {
        let total = self.checked + other.checked;
        if total > 0 {
            self.mean_rel = (self.mean_rel * self.checked as f64 + other.mean_rel * other.checked as f64) / total as f64;
        }
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
        self.checked = total;
        self.kinks += other.kinks;
    }
}

pub const FD_EPS: f64 = 1e-3;

/// Relative error with an absolute floor so exactly-zero gradients compare
/// by absolute difference.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn compare(label: &str, analytic: &[f64], numeric: &[(usize, f64)]) -> GradReport {
    let mut report = GradReport::default();
    let mut sum = 0.0;
    for &(idx, n) in numeric {
        let a = analytic[idx];
        let e = rel_err(a, n);
        sum += e;
        if e > report.max_rel || report.worst.is_empty() {
            report.max_rel = report.max_rel.max(e);
            report.worst = format!("{label}[{idx}]: analytic {a:.6e} numeric {n:.6e}");
        }
    }
    report.checked = numeric.len();
    report.mean_rel = if numeric.is_empty() { 0.0 } else { sum / numeric.len() as f64 };
    report
}

fn sample_indices(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx: Vec<usize> = (0..max).map(|_| rng.random_range(0..len)).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Checks gradients w.r.t. leaf inputs.
pub fn check_inputs(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Var) -> GradReport {
    let empty = ParamSet::<f64>::new();
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new(&empty);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new(&empty);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut report = GradReport::default();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]);
        let mut numeric = Vec::new();
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_EPS;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_EPS;
            let down = eval(&xs);
            numeric.push((i, (up - down) / (2.0 * FD_EPS)));
        }
        report.merge(compare(&format!("input{k}"), &analytic, &numeric));
    }
    report
}

/// Checks gradients w.r.t. (a sample of the elements of) every trainable
/// parameter.
pub fn check_params(
    params: &ParamSet<f64>,
    max_per_param: usize,
    seed: u64,
    build: impl Fn(&mut Tape<'_, f64>) -> Var,
) -> GradReport {
    check_params_impl(params, max_per_param, seed, false, build)
}

/// Like [`check_params`], but skips elements whose ±ε stencil straddles a
/// max-pool switch. A smooth loss has second differences that scale with h²,
/// so D(ε) ≈ 4·D(ε/2); a kink breaks that ratio.
pub fn check_params_away_from_kinks(
    params: &ParamSet<f64>,
    max_per_param: usize,
    seed: u64,
    build: impl Fn(&mut Tape<'_, f64>) -> Var,
) -> GradReport {
    check_params_impl(params, max_per_param, seed, true, build)
}

fn check_params_impl(
    params: &ParamSet<f64>,
    max_per_param: usize,
    seed: u64,
    skip_kinks: bool,
    build: impl Fn(&mut Tape<'_, f64>) -> Var,
) -> GradReport {
    let mut tape = Tape::new(params);
    let loss = build(&mut tape);
    let grads = tape.backward(loss).unwrap();
    let mut pick = rng(seed);
    let mut report = GradReport::default();
    for id in params.ids() {
        if !params.trainable(id) {
            continue;
        }
        let len = params.value(id).numel();
        let analytic = grads.param(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len]);
        let mut numeric = Vec::new();
        let mut kinks = 0;
        for i in sample_indices(len, max_per_param, &mut pick) {
            let at = |d: f64| {
                let mut shifted = params.clone();
                shifted.value_mut(id).data_mut()[i] += d;
                let mut t = Tape::new(&shifted);
                let l = build(&mut t);
                t.value(l).data()[0]
            };
            let (up, down) = (at(FD_EPS), at(-FD_EPS));
            if skip_kinks {
                let (mid, h_up, h_down) = (at(0.0), at(FD_EPS / 2.0), at(-FD_EPS / 2.0));
                let d_full = up - 2.0 * mid + down;
                let d_half = h_up - 2.0 * mid + h_down;
                if (d_full - 4.0 * d_half).abs() > 0.1 * d_full.abs().max(1e-12) {
                    kinks += 1;
                    continue;
                }
            }
            numeric.push((i, (up - down) / (2.0 * FD_EPS)));
        }
        let mut part = compare(params.name(id), &analytic, &numeric);
        part.kinks = kinks;
        report.merge(part);
    }
    report
}
