//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Runs without the libtest harness so the verdict lines are always shown.

use std::time::{Duration, Instant};

use parcnet::autodiff::ParamStore;
use parcnet::bench::{bench_model, bench_op, Arm};
use parcnet::blocks::TokenMixer;
use parcnet::layers::ParcOp;
use parcnet::model::{build_model, load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use parcnet::parc::{Orientation, ParcParams};
use parcnet::tensor::Tensor;
use parcnet::trainer::{evaluate, quadrant_dataset, train, TrainConfig};
use parcnet::verify::{self, Check};

struct Verdict {
    passed: bool,
    detail: String,
}

fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{} = {:.3e} (limit {:e})", c.name, c.worst, c.threshold))
        .collect::<Vec<_>>()
        .join("; ")
}

fn timed_suite(checks: parcnet::Result<Vec<Check>>, start: Instant, budget: Duration) -> Verdict {
    match checks {
        Ok(c) => {
            let took = start.elapsed();
            Verdict {
                passed: all_pass(&c) && took < budget,
                detail: format!("{}; {:.1}s of {}s", describe(&c), took.as_secs_f64(), budget.as_secs()),
            }
        }
        Err(e) => Verdict {
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn oracle() -> Verdict {
    let start = Instant::now();
    timed_suite(verify::oracle_suite(1000, 11), start, Duration::from_secs(10))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    timed_suite(verify::grad_suite(12), start, Duration::from_secs(60))
}

fn receptive_field() -> Verdict {
    let start = Instant::now();
    timed_suite(verify::receptive_suite(13), start, Duration::from_secs(60))
}

fn pe_ablation() -> parcnet::Result<Verdict> {
    let start = Instant::now();
    let all = quadrant_dataset(5000, 16, 2024)?;
    let (train_set, test_set) = all.split(4000)?;
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::desk()
    };
    let mut acc = [0.0; 2];
    for (slot, use_pe) in [(0, true), (1, false)] {
        let mut model = build_model(ModelConfig::circtestnet(use_pe), 0)?;
        train(&mut model, &cfg, &train_set, |_| Ok(()))?;
        acc[slot] = evaluate(&model, model.params(), &test_set, 250)?;
    }
    let took = start.elapsed();
    let shift = verify::shift_suite(20, 14)?;
    Ok(Verdict {
        passed: acc[0] >= 0.90 && acc[1] <= 0.35 && took < Duration::from_secs(15 * 60) && all_pass(&shift),
        detail: format!(
            "test acc with PE {:.3} (≥ 0.90), without PE {:.3} (≤ 0.35), {:.0}s of 900s; {}",
            acc[0],
            acc[1],
            took.as_secs_f64(),
            describe(&shift)
        ),
    })
}

fn small_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        warmup_iters: 4,
        ..TrainConfig::desk()
    }
}

fn dynamic_sizing() -> parcnet::Result<Verdict> {
    let mut cfg = ModelConfig::parcnet_xxs_desk(4);
    cfg.in_channels = 1;
    let data = quadrant_dataset(64, 64, 3)?;
    let mut model = build_model(cfg, 3)?;
    let ck = train(&mut model, &small_train_config(1), &data, |_| Ok(()))?;
    let dir = tempfile::tempdir().map_err(|e| parcnet::Error::Argument(e.to_string()))?;
    let path = dir.path().join("xxs.ckpt");
    save_checkpoint(&ck, &path)?;
    let model = load_checkpoint(&path)?.model()?;

    let mut shapes = Vec::new();
    for side in [48, 64, 96] {
        let x = Tensor::<f32>::zeros(vec![2, 1, side, side]);
        let y = model.forward(&x)?;
        if y.dims() != [2, 4] || y.data().iter().any(|v| !v.is_finite()) {
            return Ok(Verdict {
                passed: false,
                detail: format!("{side}×{side}: logits dims {:?}", y.dims()),
            });
        }
        shapes.push(format!("{side}²"));
    }

    // At the training resolution each ParC op sees an extent equal to its
    // base length, so generating the instance kernel must be the identity.
    let costs = model.cost_breakdown([1, 1, 64, 64])?;
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for cost in &costs {
        let [_, _, h, w] = cost.output_dims;
        let prefix = format!("{}.", cost.name);
        for (name, kernel) in model.params().iter() {
            let Some(op) = name.strip_prefix(&prefix).and_then(|rest| rest.strip_suffix(".kernel")) else {
                continue;
            };
            let orientation = if op.ends_with("parc_v") {
                Orientation::Vertical
            } else if op.ends_with("parc_h") {
                Orientation::Horizontal
            } else {
                continue;
            };
            let pe = model.params().get(&format!("{prefix}{op}.pe")).expect("PE on").clone();
            let p = ParcParams::new(orientation, kernel.clone(), pe.clone())?;
            let extent = orientation.extent(h, w);
            if p.instance_kernel(extent)? != *kernel || p.instance_pe(extent)? != pe {
                mismatched.push(name.to_string());
            }
            compared += 1;
        }
    }
    Ok(Verdict {
        passed: mismatched.is_empty() && compared > 0,
        detail: format!(
            "forward ok at {}; {compared} ParC ops at 64² with bit-exact instance kernels, {} mismatched",
            shapes.join(", "),
            mismatched.len()
        ),
    })
}

fn enumerate_params(store: &ParamStore<f32>) -> usize {
    store.iter().map(|(_, t)| t.dims().iter().product::<usize>()).sum()
}

fn counting() -> parcnet::Result<Verdict> {
    let mut no_ca = ModelConfig::parcnet_xxs_desk(10);
    for s in &mut no_ca.stages {
        s.use_channel_attention = false;
    }
    let mut bk = ModelConfig::parcnet_xxs_desk(10);
    bk.stages[2].token_mixer = TokenMixer::BkHalf;
    bk.stages[3].token_mixer = TokenMixer::BkQuarter;
    let mut plain_blocks = ModelConfig::parcnet_xxs_desk(100);
    plain_blocks.stages[3].use_metaformer = false;
    plain_blocks.stages[3].use_pe = false;
    let configs = [
        ModelConfig::parcnet_xxs_desk(10),
        ModelConfig::circtestnet(true),
        no_ca,
        bk,
        plain_blocks,
    ];
    let mut mismatches = Vec::new();
    for cfg in configs {
        let m = build_model(cfg, 0)?;
        if m.count_params() != enumerate_params(m.params()) {
            mismatches.push(m.config().name.clone());
        }
    }

    let op = ParcOp {
        name: "op".into(),
        orientation: Orientation::Horizontal,
        channels: 24,
        base_len: 14,
        use_pe: true,
    };
    let mut store = ParamStore::<f32>::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    op.init(&mut store, &mut rng)?;
    let op_ok = op.param_count() == 2 * 24 * 14 && enumerate_params(&store) == 2 * 24 * 14;

    let model = build_model(ModelConfig::parcnet_xxs_desk(10), 0)?;
    let dims = [1, 3, 64, 64];
    let reports = bench_model(&model, dims, 1, 0, 0)?;
    let total = reports.iter().find(|r| r.name == "total").map(|r| r.macs);
    let flops = model.count_flops(dims)?;
    let unit_sum: u64 = reports.iter().filter(|r| r.name != "total").map(|r| r.macs).sum();
    Ok(Verdict {
        passed: mismatches.is_empty() && op_ok && total == Some(flops) && unit_sum == flops,
        detail: format!(
            "5 configs, count mismatches {mismatches:?}; ParC op 2·C·L = {} ({}); bench MACs {total:?} vs count_flops {flops}",
            op.param_count(),
            if op_ok { "exact" } else { "wrong" }
        ),
    })
}

fn train_bytes(seed: u64) -> parcnet::Result<(Checkpoint, Model)> {
    let data = quadrant_dataset(256, 16, 8)?;
    let cfg = TrainConfig {
        seed,
        ..small_train_config(2)
    };
    let mut model = build_model(ModelConfig::circtestnet(true), seed)?;
    let ck = train(&mut model, &cfg, &data, |_| Ok(()))?;
    Ok((ck, model))
}

fn determinism() -> parcnet::Result<Verdict> {
    let (a, model) = train_bytes(21)?;
    let (b, _) = train_bytes(21)?;
    let identical = a.to_bytes() == b.to_bytes();

    let dir = tempfile::tempdir().map_err(|e| parcnet::Error::Argument(e.to_string()))?;
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&a, &path)?;
    let restored = load_checkpoint(&path)?.model()?;
    let x = quadrant_dataset(32, 16, 9)?.images;
    let round_trip = model.forward(&x)? == restored.forward(&x)?;
    Ok(Verdict {
        passed: identical && round_trip,
        detail: format!(
            "same-seed checkpoints {} ({} bytes); round-trip logits {}",
            if identical { "bit-identical" } else { "differ" },
            a.to_bytes().len(),
            if round_trip { "bit-identical" } else { "differ" }
        ),
    })
}

fn bench_sanity() -> parcnet::Result<Verdict> {
    let dims = [1, 16, 32, 32];
    let oracle = bench_op(Arm::Oracle, dims, 3, 1, 5)?;
    let concat = bench_op(Arm::Concat, dims, 3, 1, 5)?;
    let rel = (oracle.checksum - concat.checksum).abs() / oracle.checksum.abs().max(1.0);
    let first = bench_op(Arm::Direct, dims, 100, 10, 5)?;
    let second = bench_op(Arm::Direct, dims, 100, 10, 5)?;
    let drift = (first.median_ns - second.median_ns).abs() / first.median_ns.min(second.median_ns);
    Ok(Verdict {
        passed: rel < 1e-6 && drift < 0.20,
        detail: format!(
            "oracle/concat checksum rel diff {rel:.2e} (< 1e-6); 100-iter medians {:.0} ns vs {:.0} ns, drift {:.1}% (< 20%)",
            first.median_ns,
            second.median_ns,
            100.0 * drift
        ),
    })
}

fn flatten(r: parcnet::Result<Verdict>) -> Verdict {
    r.unwrap_or_else(|e| Verdict {
        passed: false,
        detail: format!("error: {e}"),
    })
}

fn main() {
    // Single-threaded so timings and training are reproducible.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("first pool");

    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 oracle equivalence", oracle),
        ("2 gradient correctness", gradients),
        ("3 receptive-field separation", receptive_field),
        ("4 PE ablation", || flatten(pe_ablation())),
        ("5 dynamic sizing", || flatten(dynamic_sizing())),
        ("6 counting oracles", || flatten(counting())),
        ("7 determinism", || flatten(determinism())),
        ("8 bench sanity", || flatten(bench_sanity())),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let v = run();
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
