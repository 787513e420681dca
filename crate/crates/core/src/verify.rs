//! Property suites with pass/fail verdicts, shared by the `parc check`
//! command and the test suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_check, FiniteDiffOptions, ParamStore, Tape};
use crate::blocks::{Block, ParcBlock, ParcBlockConfig};
use crate::error::Result;
use crate::layers::uniform;
use crate::model::{build_model, ModelConfig};
use crate::parc::{
    big_kernel_conv, big_kernel_len, circular_conv, circular_conv_1d_oracle, circular_conv_concat, parc_forward,
    KernelFraction, Orientation, ParcParams,
};
use crate::tensor::{roll, Tensor};

/// Outcome of one property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (or, for lower-bound checks, the observed value).
    pub worst: f64,
    pub threshold: f64,
}

impl Check {
    fn below(name: &str, worst: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            passed: worst < threshold,
            worst,
            threshold,
        }
    }

    fn above(name: &str, observed: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            passed: observed >= threshold,
            worst: observed,
            threshold,
        }
    }
}

/// `|a − b| / max(1, |b|)`, maximised over elements.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn widen(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// Applies the 1D oracle along `orientation` for every line of `x`.
pub fn oracle_2d(x: &Tensor<f32>, k: &Tensor<f32>, orientation: Orientation) -> Result<Tensor<f32>> {
    let (n, c, h, w) = x.nchw()?;
    let extent = orientation.extent(h, w);
    let lines = if orientation == Orientation::Vertical { w } else { h };
    let at = |b: usize, ch: usize, line: usize, i: usize| match orientation {
        Orientation::Vertical => ((b * c + ch) * h + i) * w + line,
        Orientation::Horizontal => ((b * c + ch) * h + line) * w + i,
    };
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let kernel = &k.data()[ch * extent..(ch + 1) * extent];
            for line in 0..lines {
                let xs: Vec<f32> = (0..extent).map(|i| x.data()[at(b, ch, line, i)]).collect();
                for (i, v) in circular_conv_1d_oracle(&xs, kernel)?.into_iter().enumerate() {
                    out[at(b, ch, line, i)] = v;
                }
            }
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

/// Concat and direct circular convolution against the 1D oracle on random
/// shapes with extent ≤ 64, in f32.
pub fn oracle_suite(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut concat_err, mut direct_err) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let orientation = if rng.random() { Orientation::Vertical } else { Orientation::Horizontal };
        let extent = rng.random_range(1..=64);
        let other = rng.random_range(1..=4);
        let c = rng.random_range(1..=3);
        let (h, w) = match orientation {
            Orientation::Vertical => (extent, other),
            Orientation::Horizontal => (other, extent),
        };
        let x: Tensor<f32> = uniform(&[1, c, h, w], 1.0, &mut rng);
        let k: Tensor<f32> = uniform(&[c, extent], 1.0, &mut rng);
        let reference = widen(&oracle_2d(&x, &k, orientation)?);
        concat_err = concat_err.max(max_rel_err(&widen(&circular_conv_concat(&x, &k, orientation)?), &reference));
        direct_err = direct_err.max(max_rel_err(&widen(&circular_conv(&x, &k, orientation)?), &reference));
    }
    Ok(vec![
        Check::below("oracle: concat vs 1d oracle", concat_err, 1e-6),
        Check::below("oracle: direct vs 1d oracle", direct_err, 1e-6),
    ])
}

/// Literal circular-correlation adjoint `gx[m] = Σ_t k[t]·g[(m − t) mod n]`
/// of a single line.
pub fn adjoint_line(g: &[f64], k: &[f64]) -> Vec<f64> {
    let n = g.len();
    (0..n).map(|m| (0..n).map(|t| k[t] * g[(m + n - t) % n]).sum()).collect()
}

fn input_grad_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for orientation in [Orientation::Vertical, Orientation::Horizontal] {
        let (c, h, w) = (3, 7, 5);
        let extent = orientation.extent(h, w);
        let x: Tensor<f64> = uniform(&[2, c, h, w], 1.0, &mut rng);
        let k: Tensor<f64> = uniform(&[c, extent], 1.0, &mut rng);
        let g: Tensor<f64> = uniform(&[2, c, h, w], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.param("x", x.clone())?;
        let kv = tape.constant(k.clone());
        let gv = tape.constant(g.clone());
        let y = tape.circular_conv(xv, kv, orientation)?;
        let p = tape.mul(y, gv)?;
        let loss = tape.sum(p);
        let grads = tape.backward(loss)?;
        let gx = grads.param("x").expect("registered");
        for b in 0..2 {
            for ch in 0..c {
                let kernel = &k.data()[ch * extent..(ch + 1) * extent];
                let lines = if orientation == Orientation::Vertical { w } else { h };
                for line in 0..lines {
                    let idx = |i: usize| match orientation {
                        Orientation::Vertical => ((b * c + ch) * h + i) * w + line,
                        Orientation::Horizontal => ((b * c + ch) * h + line) * w + i,
                    };
                    let gl: Vec<f64> = (0..extent).map(|i| g.data()[idx(i)]).collect();
                    for (i, want) in adjoint_line(&gl, kernel).into_iter().enumerate() {
                        worst = worst.max((gx.data()[idx(i)] - want).abs() / want.abs().max(1.0));
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Finite differences over every parameter of a ParC block on a 4×8×8×8
/// input, plus the closed-form input adjoint of circular convolution.
pub fn grad_suite(seed: u64) -> Result<Vec<Check>> {
    let block = ParcBlock::new("block", ParcBlockConfig::new(8, (8, 8)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::<f64>::new();
    block.init(&mut params, &mut rng)?;
    // Larger-than-init weights so no gradient is trivially small.
    for (_, t) in params.iter_mut() {
        *t = uniform(t.dims(), 0.5, &mut rng);
    }
    let x: Tensor<f64> = uniform(&[4, 8, 8, 8], 1.0, &mut rng);
    let r: Tensor<f64> = uniform(&[4, 8, 8, 8], 1.0, &mut rng);
    let report = finite_diff_check(
        &params,
        |tape| {
            let xv = tape.constant(x.clone());
            let y = block.forward(tape, xv)?;
            let rv = tape.constant(r.clone());
            let p = tape.mul(y, rv)?;
            Ok(tape.sum(p))
        },
        FiniteDiffOptions {
            eps: 1e-5,
            max_coords_per_param: None,
            seed,
        },
    )?;
    Ok(vec![
        Check::below("grad: parc block finite differences (f64)", report.max_rel_err, 1e-4),
        Check::below("grad: circular conv input adjoint (f64)", input_grad_check(seed)?, 1e-10),
    ])
}

/// CircTestNet logits under random 2D circular shifts: invariant without
/// position embedding, not invariant with it.
pub fn shift_suite(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaps = [0.0f64; 2];
    for (slot, use_pe) in [(0, false), (1, true)] {
        let model = build_model(ModelConfig::circtestnet(use_pe), seed)?;
        let mut params: ParamStore<f64> = model.params().cast();
        for (_, t) in params.iter_mut() {
            *t = uniform(t.dims(), 1.0, &mut rng);
        }
        for _ in 0..trials.max(1) {
            let x: Tensor<f64> = uniform(&[1, 1, 16, 16], 1.0, &mut rng);
            let (dr, dc): (i64, i64) = (rng.random_range(1..16), rng.random_range(1..16));
            let xs = roll(&roll(&x, 2, dr as isize)?, 3, dc as isize)?;
            let y = model.forward_with(&params, &x)?;
            let ys = model.forward_with(&params, &xs)?;
            let diff = y.data().iter().zip(ys.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            gaps[slot] = gaps[slot].max(if use_pe { diff } else { diff / y.max_abs().max(1e-12) });
        }
    }
    Ok(vec![
        Check::below("shift: no-PE logits invariant (relative)", gaps[0], 1e-4),
        Check::above("shift: PE logits change (max-norm)", gaps[1], 1e-2),
    ])
}

/// Rows of a single-channel H×W input that output row `i` of column `col`
/// depends on, found by perturbing one input row at a time.
pub fn rows_reaching<F>(op: F, x: &Tensor<f64>, i: usize, col: usize) -> Result<Vec<usize>>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let (_, _, h, w) = x.nchw()?;
    let base = op(x)?.data()[i * w + col];
    let mut rows = Vec::new();
    for r in 0..h {
        let mut data = x.data().to_vec();
        for v in &mut data[r * w..(r + 1) * w] {
            *v += 1.0;
        }
        let y = op(&Tensor::new(x.dims().to_vec(), data)?)?;
        if (y.data()[i * w + col] - base).abs() > 1e-12 {
            rows.push(r);
        }
    }
    Ok(rows)
}

/// Perturbation probing on a 16×16 input: a vertical ParC output sees its
/// whole column, a half-extent big kernel at most 9 rows.
pub fn receptive_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (16, 16);
    let x: Tensor<f64> = uniform(&[1, 1, h, w], 1.0, &mut rng);
    // Kernel taps bounded away from zero so no dependency cancels by accident.
    let away = |t: Tensor<f64>| t.map(|v| if v >= 0.0 { v + 0.5 } else { v - 0.5 });
    let parc = ParcParams::new(
        Orientation::Vertical,
        away(uniform(&[1, h], 0.5, &mut rng)),
        uniform(&[1, h], 0.5, &mut rng),
    )?;
    let len = big_kernel_len(h, KernelFraction::Half)?;
    let bk = away(uniform(&[1, len], 0.5, &mut rng));
    let (mut parc_min, mut bk_max) = (usize::MAX, 0usize);
    for i in 0..h {
        for col in [0, 7, 15] {
            let seen = rows_reaching(|t| parc_forward(t, &parc, true), &x, i, col)?;
            parc_min = parc_min.min(seen.len());
            let seen = rows_reaching(|t| big_kernel_conv(t, KernelFraction::Half, &bk, Orientation::Vertical), &x, i, col)?;
            bk_max = bk_max.max(seen.len());
        }
    }
    Ok(vec![
        Check::above("receptive: parc-v output sees all 16 rows", parc_min as f64, h as f64),
        Check {
            name: "receptive: half big kernel sees at most 9 rows".into(),
            passed: bk_max <= 9,
            worst: bk_max as f64,
            threshold: 9.0,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_line_matches_definition() {
        // Σ_j g[j]·y[j] with y = circ(x, k) is linear in x; its coefficient
        // of x[m] is the adjoint.
        let k = [0.5, -1.0, 2.0, 0.25];
        let g = [1.0, 3.0, -2.0, 0.5];
        let adj = adjoint_line(&g, &k);
        for m in 0..4 {
            let mut e = [0.0; 4];
            e[m] = 1.0;
            let y = circular_conv_1d_oracle(&e, &k).unwrap();
            let coef: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((coef - adj[m]).abs() < 1e-15);
        }
    }

    #[test]
    fn suites_pass() {
        let checks = oracle_suite(50, 1).unwrap().into_iter().chain(shift_suite(3, 1).unwrap());
        for c in checks.chain(receptive_suite(1).unwrap()) {
            assert!(c.passed, "{c:?}");
        }
    }
}
