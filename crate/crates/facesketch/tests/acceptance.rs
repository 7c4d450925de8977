//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no test harness) so the lines come out in order.
//! Criterion 1 needs the genuine annotations under `FSS_DATA_ROOT` and
//! reports NOT RUN without them. A FAIL line does not fail `cargo test`
//! unless `ACCEPTANCE_STRICT=1` is set; `ACCEPTANCE_ONLY=<n>` runs one
//! criterion.

#[path = "../../core/tests/support/ssim_brute.rs"]
mod brute;
#[path = "../../core/tests/support/fd.rs"]
mod fd;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use facesketch::cli::{resolve_train_config, Cli, Command};
use facesketch::dataset::{compute_split_stats, load_manifest};
use facesketch::synthetic::{attributes_for, synth_split};
use facesketch::train::epoch_order;
use facesketch_core::attributes::{Split, BINARY_PARTITIONS, SLICE_KEYS};
use facesketch_core::image::Image;
use facesketch_core::losses::{
    adversarial_loss, feature_matching_loss, perceptual_loss, pixelwise_l1, style_classification_loss,
    PerceptualExtractor, PerceptualSpec,
};
use facesketch_core::metrics::{MetricReport, ScoredPair};
use facesketch_core::networks::expand_style;
use facesketch_core::regions::{split_parts, stitch_parts, FaceRegions, RegionBox, RegionConfig};
use facesketch_core::ssim::ssim;
use facesketch_core::tensor::Tensor;
use facesketch_core::trainer::{default_config, Ablation, ModelConfig, Sample, SketchGan, Task, TrainConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

use Verdict::{Fail, NotRun, Pass};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

/// Per-attribute counts of the published split statistics, in
/// [`SLICE_KEYS`] order.
const TRAIN_COUNTS: [usize; 17] = [
    1010, 48, 288, 423, 60, 239, 574, 484, 209, 849, 645, 413, 917, 141, 357, 351, 350,
];
const TEST_COUNTS: [usize; 17] = [
    994, 52, 290, 418, 44, 242, 632, 414, 187, 859, 670, 376, 872, 174, 619, 381, 46,
];

fn dataset_fidelity() -> Verdict {
    let Some(root) = std::env::var_os("FSS_DATA_ROOT").map(PathBuf::from) else {
        return NotRun("FSS_DATA_ROOT is not set; the genuine annotations are required".into());
    };
    let manifest = match load_manifest(&root) {
        Ok(m) => m,
        Err(e) => return Fail(format!("cannot load {}: {e}", root.display())),
    };
    let mut mismatches = Vec::new();
    for (split, expected) in [(Split::Train, TRAIN_COUNTS), (Split::Test, TEST_COUNTS)] {
        let row = compute_split_stats(&manifest, split).row();
        for (k, (got, want)) in SLICE_KEYS.iter().zip(row.iter().zip(expected)) {
            if *got != want {
                mismatches.push(format!("{} {k}: {got} != {want}", split.name()));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "all 34 cells match".into()
        } else {
            mismatches.join("; ")
        },
    )
}

fn geometry_roundtrip() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    let mut done = 0;
    while done < 100 {
        let c = if rng.random_bool(0.5) { 1 } else { 3 };
        let (h, w) = (rng.random_range(64..=160), rng.random_range(64..=160));
        let config = RegionConfig::for_resolution(rng.random_range(64..=256), 8);
        if [config.eye, config.nose, config.mouth]
            .iter()
            .any(|&(ww, wh)| ww > w || wh > h)
        {
            continue;
        }
        let pixels: Vec<u8> = (0..c * h * w).map(|_| rng.random()).collect();
        let img = Image::from_planar(c, h, w, pixels).unwrap();
        let boxes: Vec<RegionBox> = (0..4)
            .map(|_| {
                let (bw, bh) = (rng.random_range(1.0..40.0), rng.random_range(1.0..40.0));
                let cx = bw / 2.0 + rng.random_range(0.0..1.0) * (w as f64 - bw);
                let cy = bh / 2.0 + rng.random_range(0.0..1.0) * (h as f64 - bh);
                RegionBox::new(cx, cy, bw, bh)
            })
            .collect();
        let regions = FaceRegions::new([boxes[0], boxes[1], boxes[2], boxes[3]], (h, w));
        let back = stitch_parts(&split_parts(&img, &regions, &config).unwrap(), &regions, &config).unwrap();
        if back != img {
            return Fail(format!("u8 image {done} ({c}x{h}x{w}) differs after the roundtrip"));
        }
        let f = img.normalized();
        let back = stitch_parts(&split_parts(&f, &regions, &config).unwrap(), &regions, &config).unwrap();
        if !back
            .data()
            .iter()
            .zip(f.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            return Fail(format!("f64 image {done} differs after the roundtrip"));
        }
        done += 1;
    }
    Pass("100 images, u8 and f64 bit-exact".into())
}

fn random_tensor(rng: &mut StdRng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn loss_identities() -> Verdict {
    let mut rng = StdRng::seed_from_u64(3);
    let feats = vec![
        random_tensor(&mut rng, [2, 4, 16, 16]),
        random_tensor(&mut rng, [2, 8, 8, 8]),
    ];
    let fm = feature_matching_loss(&feats, &feats).unwrap();
    let extractor = PerceptualExtractor::new(PerceptualSpec::default());
    let x1 = random_tensor(&mut rng, [1, 1, 32, 32]);
    let x3 = random_tensor(&mut rng, [1, 3, 32, 32]);
    let per = perceptual_loss(&extractor, &x1, &x1)
        .unwrap()
        .max(perceptual_loss(&extractor, &x3, &x3).unwrap());
    let l1 = pixelwise_l1(&x3, &x3).unwrap();
    let sty = (1..=3u8)
        .map(|l| {
            let mut p = [0.0; 3];
            p[l as usize - 1] = 1.0;
            style_classification_loss(p, l).unwrap()
        })
        .fold(0.0, f64::max)
        .abs();
    let (d, g) = adversarial_loss(0.5, 0.5);
    let ln2 = std::f64::consts::LN_2;
    let adv_err = (d - 2.0 * ln2).abs().max((g - ln2).abs());
    let ok = fm <= 1e-9 && per <= 1e-9 && l1 <= 1e-9 && sty <= 1e-9 && adv_err <= 1e-9;
    verdict(
        ok,
        format!("fm {fm:.1e}, per {per:.1e}, l1 {l1:.1e}, sty {sty:.1e}, adversarial at 0.5 off by {adv_err:.1e}"),
    )
}

fn gradient_checks() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, err) in fd::loss_checks() {
        ok &= err <= fd::TOL;
        parts.push(format!("{name} {err:.1e}"));
    }
    let (worst, checked) = fd::Refiner::new().check();
    ok &= worst <= fd::TOL && checked >= 20;
    parts.push(format!(
        "stage-2 generator objective {worst:.1e} over {checked} parameters"
    ));
    verdict(ok, parts.join(", "))
}

fn ssim_oracle() -> Verdict {
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut identity_ok = true;
    for _ in 0..200 {
        let a = brute::random_image(&mut rng, 1, 64, 64);
        let b = brute::random_image(&mut rng, 1, 64, 64);
        worst = worst.max((ssim(&a, &b).unwrap() - brute::brute_plane(a.data(), b.data(), 64, 64)).abs());
        identity_ok &= ssim(&a, &a).unwrap() == 1.0;
    }
    verdict(
        worst <= 1e-6 && identity_ok,
        format!("200 pairs, worst deviation {worst:.1e}, ssim(x, x) = 1: {identity_ok}"),
    )
}

fn aggregation_consistency() -> Verdict {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..200);
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let (a, s) = attributes_for(rng.random_range(0..420), 64, 64);
                (a, s, rng.random_range(0.0..1.0))
            })
            .collect();
        let report = MetricReport::aggregate(
            "SSIM",
            "m",
            pairs.iter().map(|(a, s, score)| ScoredPair {
                attributes: a,
                style: *s,
                score: *score,
            }),
        )
        .unwrap();
        let direct = pairs.iter().map(|p| p.2).sum::<f64>() / n as f64;
        let recombine = |keys: &[&str]| {
            let (mut total, mut count) = (0.0, 0);
            for k in keys {
                let s = report.slices[*k];
                total += s.count as f64 * s.mean;
                count += s.count;
            }
            (total / count as f64, count)
        };
        for (a, b) in BINARY_PARTITIONS {
            let (mean, count) = recombine(&[a, b]);
            if count != n {
                return Fail(format!("{a}/{b} cover {count} of {n} pairs"));
            }
            worst = worst.max((mean - direct).abs());
        }
        let (mean, _) = recombine(&["S1", "S2", "S3"]);
        worst = worst.max((mean - direct).abs());
        worst = worst.max((report.overall - direct).abs());
    }
    verdict(worst <= 1e-9, format!("50 random reports, worst deviation {worst:.1e}"))
}

fn train_args(flags: &[&str]) -> TrainConfig {
    let argv = ["facesketch", "train", "--root", ".", "--out", "."].iter().chain(flags);
    match Cli::try_parse_from(argv).unwrap().command {
        Command::Train(a) => resolve_train_config(&a).unwrap(),
        _ => unreachable!(),
    }
}

fn configuration_fidelity() -> Verdict {
    let i = default_config(Task::I2s);
    let s = default_config(Task::S2i);
    let lambdas = |c: &TrainConfig| {
        let (a, b) = (c.stage1_weights, c.stage2_weights);
        [
            a.lambda_fm,
            a.lambda_1,
            a.lambda_per,
            b.lambda_fm,
            b.lambda_1,
            b.lambda_per,
            b.lambda_sty,
        ]
    };
    let mut bad = Vec::new();
    if lambdas(&i) != [25.0, 25.0, 12.5, 100.0, 100.0, 50.0, 100.0] {
        bad.push(format!("i2s weights {:?}", lambdas(&i)));
    }
    if lambdas(&s)[..6] != [50.0, 50.0, 0.2, 100.0, 100.0, 0.2] {
        bad.push(format!("s2i weights {:?}", lambdas(&s)));
    }
    if (i.lr_generator, i.lr_discriminator, s.lr_generator, s.lr_discriminator) != (2e-4, 1e-5, 2e-4, 2e-4) {
        bad.push("learning rates".into());
    }
    if (i.epochs, i.freeze_stage1_after, s.epochs, s.freeze_stage1_after) != (50, None, 400, Some(250)) {
        bad.push("epochs or freeze".into());
    }
    let ablation = |flags: &[&str]| {
        let a = train_args(flags).ablation;
        (a.use_multi_patch, a.use_style_vector)
    };
    let rows = [
        ablation(&["--task", "i2s", "--no-multi-patch", "--no-style"]),
        ablation(&["--task", "i2s", "--no-style"]),
        ablation(&["--task", "i2s"]),
    ];
    if rows != [(false, false), (true, false), (true, true)] {
        bad.push(format!("ablation rows {rows:?}"));
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            "weights, learning rates, schedules and the three ablation rows".into()
        } else {
            bad.join("; ")
        },
    )
}

fn synthetic_samples(task: Task, n: usize, seed: u64) -> Vec<Sample> {
    synth_split(n, 64, 64, seed, Split::Train)
        .into_iter()
        .map(|(name, f)| {
            let (input, target) = match task {
                Task::I2s => (&f.photo, &f.sketch),
                Task::S2i => (&f.sketch, &f.photo),
            };
            Sample {
                pair_id: name,
                input: input.normalized(),
                target: target.normalized(),
                regions: Some(f.regions),
                style: f.style,
            }
        })
        .collect()
}

fn small_config(task: Task, resolution: usize, width: usize, epochs: usize) -> TrainConfig {
    let mut c = default_config(task);
    c.model = ModelConfig::new(resolution, width);
    c.epochs = epochs;
    c.freeze_stage1_after = None;
    c.ablation = Ablation::default();
    c
}

fn freeze_correctness() -> Verdict {
    let samples = synthetic_samples(Task::S2i, 3, 8);
    let mut config = small_config(Task::S2i, 64, 2, 9);
    config.freeze_stage1_after = Some(2);
    let mut model = SketchGan::new(config).unwrap();
    let (mut changed_before, mut after, mut stage2_moved) = (0, 0, true);
    for epoch in 0..9 {
        for i in epoch_order(samples.len(), 0, epoch) {
            let (s1, s2) = (model.stage1_hash(), model.stage2_hash());
            model.train_step(std::slice::from_ref(&samples[i]), epoch).unwrap();
            if epoch < 2 {
                changed_before += usize::from(model.stage1_hash() != s1);
            } else if model.stage1_hash() != s1 {
                return Fail(format!("stage 1 changed at step {} in epoch {epoch}", model.step));
            } else {
                after += 1;
                stage2_moved &= model.stage2_hash() != s2;
            }
        }
    }
    verdict(
        after >= 20 && changed_before == 6 && stage2_moved,
        format!("stage 1 moved on {changed_before}/6 steps before the freeze and held for {after} after; stage 2 kept training: {stage2_moved}"),
    )
}

fn train_set_l1(model: &SketchGan, samples: &[Sample]) -> f64 {
    let style = |s: &Sample| model.config.style_conditioned().then_some(s.style);
    let total: f64 = samples
        .iter()
        .map(|s| {
            let out = model.infer(&s.input, s.regions.as_ref(), style(s)).unwrap();
            out.data()
                .iter()
                .zip(s.target.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / out.data().len() as f64
        })
        .sum();
    total / samples.len() as f64
}

fn overfit_smoke() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [Task::I2s, Task::S2i] {
        let samples = synthetic_samples(task, 8, 9);
        let mut model = SketchGan::new(small_config(task, 64, 8, 25)).unwrap();
        let mut first = None;
        for epoch in 0..25 {
            for i in epoch_order(samples.len(), 0, epoch) {
                model.train_step(std::slice::from_ref(&samples[i]), epoch).unwrap();
                first.get_or_insert_with(|| train_set_l1(&model, &samples));
            }
        }
        let (start, end) = (first.unwrap(), train_set_l1(&model, &samples));
        let reduction = 1.0 - end / start;
        ok &= reduction >= 0.5;
        parts.push(format!(
            "{} {start:.3} -> {end:.3} ({:.0}% lower)",
            task.name(),
            reduction * 100.0
        ));
    }
    verdict(ok, format!("200 steps on 8 pairs: {}", parts.join(", ")))
}

fn style_effect() -> Verdict {
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let mut config = small_config(Task::I2s, 64, 4, 1);
        config.seed = seed;
        let model = SketchGan::new(config).unwrap();
        let sample = &synthetic_samples(Task::I2s, 1, 100 + seed)[0];
        let outs: Vec<Image<f64>> = facesketch_core::attributes::Style::ALL
            .iter()
            .map(|s| model.infer(&sample.input, sample.regions.as_ref(), Some(*s)).unwrap())
            .collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if outs[a] == outs[b] {
                return Fail(format!(
                    "seed {seed}: styles {} and {} give the same image",
                    a + 1,
                    b + 1
                ));
            }
        }
        let diff = outs[0]
            .data()
            .iter()
            .zip(outs[1].data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        detail.push(format!("{diff:.2e}"));
    }
    let (h, w) = (13, 17);
    let maps: Vec<Tensor> = (1..=3).map(|l| expand_style(l, (h, w)).unwrap()).collect();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for y in 0..h {
            for x in 0..w {
                let at = |m: &Tensor| [0, 1, 2].map(|c| m.data()[(c * h + y) * w + x]);
                if at(&maps[a]) == at(&maps[b]) {
                    return Fail(format!("style maps {} and {} agree at ({y}, {x})", a + 1, b + 1));
                }
            }
        }
    }
    Pass(format!(
        "5 seeds, every style pair differs (max style 1/2 gap {}); style maps differ everywhere",
        detail.join(", ")
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Verdict,
}

fn main() {
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let criteria = [
        Criterion {
            name: "dataset fidelity",
            limit: Some(Duration::from_secs(10)),
            run: dataset_fidelity,
        },
        Criterion {
            name: "geometry roundtrip",
            limit: Some(Duration::from_secs(30)),
            run: geometry_roundtrip,
        },
        Criterion {
            name: "loss identities",
            limit: None,
            run: loss_identities,
        },
        Criterion {
            name: "gradient checks",
            limit: minutes(5),
            run: gradient_checks,
        },
        Criterion {
            name: "SSIM oracle",
            limit: minutes(2),
            run: ssim_oracle,
        },
        Criterion {
            name: "aggregation consistency",
            limit: None,
            run: aggregation_consistency,
        },
        Criterion {
            name: "configuration fidelity",
            limit: None,
            run: configuration_fidelity,
        },
        Criterion {
            name: "freeze correctness",
            limit: None,
            run: freeze_correctness,
        },
        Criterion {
            name: "overfit smoke",
            limit: minutes(120),
            run: overfit_smoke,
        },
        Criterion {
            name: "style conditioning",
            limit: None,
            run: style_effect,
        },
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let (mut passed, mut failed, mut not_run) = (0, 0, 0);
    for (i, c) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let v = match (v, c.limit) {
            (Pass(d), Some(limit)) if took > limit => Fail(format!("{d}; took {took:.1?}, limit {limit:?}")),
            (v, _) => v,
        };
        let (tag, detail) = match v {
            Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            NotRun(d) => {
                not_run += 1;
                ("NOT RUN", d)
            }
        };
        println!("criterion {n:>2} {:<24} {tag}: {detail} [{took:.1?}]", c.name);
    }
    println!("acceptance: {passed} passed, {failed} failed, {not_run} not run");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
