//! Latency micro-benchmarks: circular-convolution implementations against
//! each other, and per-unit timing of whole models.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::blocks::Block;
use crate::error::{Error, Result};
use crate::layers::{uniform, LocalOp, ParcOp};
use crate::model::Model;
use crate::parc::{
    big_kernel_conv, big_kernel_len, circular_conv, circular_conv_1d_oracle, circular_conv_concat, KernelFraction,
    Orientation,
};
use crate::tensor::Tensor;

/// Iteration count of the reference timing methodology.
pub const DEFAULT_ITERS: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;

pub const CSV_HEADER: &str = "arm,dims,iters,mean_ns,median_ns,stddev_ns,macs,checksum";

/// Implementation being timed. Every arm convolves an N×C×H×W input along
/// H (ParC-V orientation) with a per-channel kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Line-by-line reference circular convolution.
    Oracle,
    /// Concatenate the input with itself and run a valid convolution.
    Concat,
    /// Direct modular indexing; what the model uses.
    Direct,
    /// Zero-padded kernel spanning half the extent. Different semantics, so
    /// its checksum is not comparable with the circular arms.
    LocalBk,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Oracle, Arm::Concat, Arm::Direct, Arm::LocalBk];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Oracle => "oracle",
            Arm::Concat => "concat",
            Arm::Direct => "direct",
            Arm::LocalBk => "local_bk",
        }
    }

    pub fn is_circular(self) -> bool {
        self != Arm::LocalBk
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown arm `{s}` (expected oracle, concat, direct or local_bk)")))
    }
}

/// Timing summary of one benchmarked operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub dims: Vec<usize>,
    pub iters: usize,
    pub warmup: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    /// Sample standard deviation; 0 for a single iteration.
    pub stddev_ns: f64,
    pub macs: u64,
    /// Sum of one output tensor's elements, in f64.
    pub checksum: f64,
}

impl BenchReport {
    fn from_samples(name: String, dims: Vec<usize>, warmup: usize, samples: &[f64], macs: u64, checksum: f64) -> Self {
        let (mean, median, stddev) = summarize(samples);
        BenchReport {
            name,
            dims,
            iters: samples.len(),
            warmup,
            mean_ns: mean,
            median_ns: median,
            stddev_ns: stddev,
            macs,
            checksum,
        }
    }

    pub fn dims_label(&self) -> String {
        self.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }

    /// One CSV row in [`CSV_HEADER`] column order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.1},{:.1},{},{:e}",
            self.name,
            self.dims_label(),
            self.iters,
            self.mean_ns,
            self.median_ns,
            self.stddev_ns,
            self.macs,
            self.checksum
        )
    }
}

/// Header plus one row per report.
pub fn to_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// `(mean, median, sample stddev)`.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let stddev = if n > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, median, stddev)
}

fn checksum(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| f64::from(v)).sum()
}

/// Applies the 1D oracle to every column of every (sample, channel) plane.
fn oracle_vertical(x: &Tensor<f32>, k: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, c, h, w) = x.nchw()?;
    let mut out = vec![0.0f32; x.len()];
    let mut line = vec![0.0f32; h];
    for b in 0..n {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            let kernel = &k.data()[ch * h..(ch + 1) * h];
            for col in 0..w {
                for (r, v) in line.iter_mut().enumerate() {
                    *v = x.data()[plane + r * w + col];
                }
                for (r, v) in circular_conv_1d_oracle(&line, kernel)?.into_iter().enumerate() {
                    out[plane + r * w + col] = v;
                }
            }
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

/// Times one arm on a fixed random input and kernel derived from `seed`.
pub fn bench_op(arm: Arm, dims: [usize; 4], iters: usize, warmup: usize, seed: u64) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::Argument("iters must be ≥ 1".into()));
    }
    let [n, c, h, w] = dims;
    if dims.contains(&0) {
        return Err(Error::Argument(format!("dims {dims:?} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<f32> = uniform(&dims, 1.0, &mut rng);
    let (kernel, macs) = if arm.is_circular() {
        let op = ParcOp {
            name: String::new(),
            orientation: Orientation::Vertical,
            channels: c,
            base_len: h,
            use_pe: false,
        };
        (uniform(&[c, h], 1.0, &mut rng), op.macs(dims))
    } else {
        let len = big_kernel_len(h, KernelFraction::Half)
            .map_err(|e| Error::Argument(format!("{arm} arm cannot run on height {h}: {e}")))?;
        let op = LocalOp {
            name: String::new(),
            orientation: Orientation::Vertical,
            channels: c,
            kernel_len: len,
        };
        (uniform(&[c, len], 1.0, &mut rng), op.macs(dims))
    };
    let run = |x: &Tensor<f32>| -> Result<Tensor<f32>> {
        match arm {
            Arm::Oracle => oracle_vertical(x, &kernel),
            Arm::Concat => circular_conv_concat(x, &kernel, Orientation::Vertical),
            Arm::Direct => circular_conv(x, &kernel, Orientation::Vertical),
            Arm::LocalBk => big_kernel_conv(x, KernelFraction::Half, &kernel, Orientation::Vertical),
        }
    };
    let sum = checksum(&run(&x)?);
    for _ in 0..warmup {
        std::hint::black_box(run(&x)?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(run(std::hint::black_box(&x))?);
        samples.push(t.elapsed().as_nanos() as f64);
    }
    Ok(BenchReport::from_samples(arm.name().into(), vec![n, c, h, w], warmup, &samples, macs, sum))
}

/// Times every unit of `model` at `dims`. Returns one report per unit, in
/// network order, followed by a `total` report whose samples are the
/// end-to-end time of each iteration. Parameters are bound before the
/// clock starts.
pub fn bench_model(model: &Model, dims: [usize; 4], iters: usize, warmup: usize, seed: u64) -> Result<Vec<BenchReport>> {
    if iters == 0 {
        return Err(Error::Argument("iters must be ≥ 1".into()));
    }
    let costs = model.cost_breakdown(dims)?;
    let x: Tensor<f32> = uniform(&dims, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let units = model.units();
    let mut per_unit = vec![Vec::with_capacity(iters); units.len()];
    let mut totals = Vec::with_capacity(iters);
    let mut sums = vec![0.0; units.len()];

    for it in 0..warmup + iters {
        let mut tape = Tape::inference();
        tape.bind(model.params())?;
        let mut h = tape.constant(x.clone());
        let start = Instant::now();
        for (u, unit) in units.iter().enumerate() {
            let t = Instant::now();
            h = unit.forward(&mut tape, h)?;
            let ns = t.elapsed().as_nanos() as f64;
            if it >= warmup {
                per_unit[u].push(ns);
            }
            if it == 0 {
                sums[u] = checksum(tape.value(h));
            }
        }
        if it >= warmup {
            totals.push(start.elapsed().as_nanos() as f64);
        }
    }

    let mut reports: Vec<BenchReport> = units
        .iter()
        .enumerate()
        .map(|(u, unit)| {
            BenchReport::from_samples(
                unit.name.clone(),
                costs[u].input_dims.to_vec(),
                warmup,
                &per_unit[u],
                costs[u].macs,
                sums[u],
            )
        })
        .collect();
    let macs = costs.iter().map(|c| c.macs).sum();
    let final_sum = *sums.last().expect("models have a head");
    reports.push(BenchReport::from_samples("total".into(), dims.to_vec(), warmup, &totals, macs, final_sum));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    #[test]
    fn circular_arms_agree() {
        let dims = [2, 3, 12, 5];
        let reference = bench_op(Arm::Oracle, dims, 1, 0, 7).unwrap();
        for arm in [Arm::Concat, Arm::Direct] {
            let r = bench_op(arm, dims, 2, 1, 7).unwrap();
            assert!((r.checksum - reference.checksum).abs() <= 1e-6 * reference.checksum.abs().max(1.0));
            assert_eq!(r.macs, reference.macs);
        }
        assert_eq!(reference.macs, 2 * 3 * 12 * 5 * 12);
    }

    #[test]
    fn single_sample_has_zero_stddev() {
        let r = bench_op(Arm::Direct, [1, 2, 4, 4], 1, 0, 0).unwrap();
        assert_eq!(r.iters, 1);
        assert_eq!(r.stddev_ns, 0.0);
        assert_eq!(r.mean_ns, r.median_ns);
    }

    #[test]
    fn summary_statistics() {
        let (mean, median, sd) = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(mean, 4.0);
        assert_eq!(median, 2.5);
        assert!((sd - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn local_bk_macs_use_kernel_length() {
        let r = bench_op(Arm::LocalBk, [1, 4, 16, 8], 1, 0, 0).unwrap();
        assert_eq!(r.macs, 4 * 16 * 8 * 9);
        assert!(bench_op(Arm::Direct, [1, 1, 1, 1], 0, 0, 0).is_err());
    }

    #[test]
    fn arm_names_parse() {
        for a in Arm::ALL {
            assert_eq!(a.name().parse::<Arm>().unwrap(), a);
        }
        assert!("fft".parse::<Arm>().is_err());
    }

    #[test]
    fn csv_has_stable_columns() {
        let r = bench_op(Arm::Concat, [1, 2, 3, 4], 3, 0, 0).unwrap();
        let csv = to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[0], "concat");
        assert_eq!(row[1], "1x2x3x4");
        assert_eq!(row[2], "3");
        assert_eq!(row[6], (2 * 3 * 4 * 3).to_string());
    }

    #[test]
    fn model_report_matches_counting() {
        let model = build_model(ModelConfig::circtestnet(true), 0).unwrap();
        let dims = [1, 1, 16, 16];
        let reports = bench_model(&model, dims, 3, 1, 0).unwrap();
        let costs = model.cost_breakdown(dims).unwrap();
        assert_eq!(reports.len(), costs.len() + 1);
        for (r, c) in reports.iter().zip(&costs) {
            assert_eq!(r.name, c.name);
            assert_eq!(r.macs, c.macs);
        }
        let total = reports.last().unwrap();
        assert_eq!(total.macs, model.count_flops(dims).unwrap());
        let max_unit = reports[..costs.len()].iter().map(|r| r.mean_ns).fold(0.0, f64::max);
        assert!(total.mean_ns >= max_unit);
        let logits = model.forward(&uniform(&dims, 1.0, &mut ChaCha8Rng::seed_from_u64(0))).unwrap();
        assert!((total.checksum - checksum(&logits)).abs() < 1e-9);
    }
}
