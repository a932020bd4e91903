//! Acceptance criteria 1-10, one PASS/FAIL line each. Exits non-zero if any fails.
//!
//! Criteria 4, 5 and 9 need `usps.dgim` in the data directory
//! (`$DOMGEN_DATA_DIR`, default `data/` at the workspace root).

#[path = "../../domgen/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/support/mod.rs"]
mod oracle;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use domgen::experiment::{
    apply_preprocessing, resolve_preprocessing, run_experiment, DatasetId, ExperimentConfig, ResultsTable, RunOptions,
};
use domgen::formats::dgck::{decode_checkpoint, encode_checkpoint};
use domgen::formats::dgim::{decode_dgim, encode_dgim};
use domgen_core::augment::{assign_subsets, default_pool, DomainKind};
use domgen_core::classical::{rf_predict_proba, train_random_forest, ForestConfig};
use domgen_core::data::{resize, split, to_float, LabeledImageSet, SplitSpec, CIFAR10_STL10_CLASS_MAP};
use domgen_core::ensemble::{ensemble_average, ensemble_traditional, BaseOutputs};
use domgen_core::gradcheck::{run_gradcheck, GradCheckConfig, GradOp};
use domgen_core::nn::{accuracy, build_base_cnn, build_hcnn, count_params, evaluate, init_params, train, TrainConfig};
use domgen_core::ops::{conv2d_forward, dense_forward, maxpool2d_forward, output_extent};
use domgen_core::rng::{derive_seed, seeded};
use domgen_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

// 1
const GRAD_STEP: f32 = 1e-3;
const GRAD_TOL: f32 = 1e-2;
const GRAD_CONFIGS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
// 2
const ORACLE_TOL: f32 = 1e-5;
const ORACLE_SHAPES: usize = 50;
// 3
const FUSION_FIXTURES: usize = 1000;
const ROW_SUM_TOL: f32 = 1e-6;
// 4, 5, 9
const DESK_CONFIG: &str = "configs/mnist_usps.json";
const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const DESK_REQUIRED: usize = 2;
const DESK_MODELS: usize = 5;
const DESK_TRAIN_SAMPLES: usize = 8000;
const DESK_MAX_EPOCHS: usize = 3;
const BASE_SVAL_MIN: f32 = 0.90;
const ENA_SLACK: f32 = 0.005;
const META_SLACK: f32 = 0.01;
// 6
const RF_TREES: usize = 100;
const RF_SAMPLES: usize = 2000;
const RF_HELD_OUT: usize = 1000;
// 7
const HCNN_MODELS: usize = 5;
const HCNN_TOL: f64 = 0.05;
// 10
const FORMAT_FIXTURES: u64 = 200;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn criterion_1() -> Outcome {
    let cfg = GradCheckConfig {
        step: GRAD_STEP,
        tolerance: GRAD_TOL,
        configs_per_op: GRAD_CONFIGS,
        ..GradCheckConfig::default()
    };
    let start = Instant::now();
    let report = run_gradcheck(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let mut worst = Vec::new();
    let mut ok = took < GRAD_BUDGET;
    for op in GradOp::ALL {
        let n = report.cases_for(op).count();
        let w = report.worst(op).unwrap_or(f32::INFINITY);
        ok &= n >= GRAD_CONFIGS && w <= GRAD_TOL;
        worst.push(format!("{} {w:.1e}", op.name()));
    }
    check(ok, format!("{} ops x {GRAD_CONFIGS} configs in {:.2}s, worst rel. error: {}", GradOp::ALL.len(), took.as_secs_f32(), worst.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut r = seeded(2);
    let (mut conv, mut pool, mut dense) = (0.0f32, 0.0f32, 0.0f32);
    let mut shapes = [0usize; 3];
    while shapes.iter().any(|&s| s < ORACLE_SHAPES) {
        let (n, c) = (r.random_range(1..=3), r.random_range(1..=4));
        let (h, w) = (r.random_range(1..=14), r.random_range(1..=14));
        let (k, s, p) = (r.random_range(1..=5), r.random_range(1..=3), r.random_range(0..=2));
        if shapes[0] < ORACLE_SHAPES && output_extent(h, k, s, p).is_some() && output_extent(w, k, s, p).is_some() {
            let o = r.random_range(1..=5);
            let x = oracle::random_tensor(&[n, c, h, w], &mut r);
            let kern = oracle::random_tensor(&[o, c, k, k], &mut r);
            let b = oracle::random_tensor(&[o], &mut r);
            let got = conv2d_forward(&x, &kern, &b, s, p).map_err(|e| e.to_string())?;
            conv = conv.max(oracle::max_abs_diff(&got, &oracle::naive_conv(&x, &kern, &b, s, p)));
            shapes[0] += 1;
        }
        if shapes[1] < ORACLE_SHAPES && output_extent(h, k, s, 0).is_some() && output_extent(w, k, s, 0).is_some() {
            let x = oracle::random_tensor(&[n, c, h, w], &mut r);
            let (got, _) = maxpool2d_forward(&x, k, s).map_err(|e| e.to_string())?;
            pool = pool.max(oracle::max_abs_diff(&got, &oracle::naive_maxpool(&x, k, s)));
            shapes[1] += 1;
        }
        if shapes[2] < ORACLE_SHAPES {
            let (f, u) = (r.random_range(1..=80), r.random_range(1..=40));
            let x = oracle::random_tensor(&[n * 7, f], &mut r);
            let wt = oracle::random_tensor(&[f, u], &mut r);
            let b = oracle::random_tensor(&[u], &mut r);
            let got = dense_forward(&x, &wt, &b).map_err(|e| e.to_string())?;
            dense = dense.max(oracle::max_abs_diff(&got, &oracle::naive_dense(&x, &wt, &b)));
            shapes[2] += 1;
        }
    }
    check(
        conv.max(pool).max(dense) <= ORACLE_TOL,
        format!("{ORACLE_SHAPES} shapes each, max abs. error conv {conv:.1e}, pool {pool:.1e}, dense {dense:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = seeded(3);
    let mut failures = Vec::new();
    for i in 0..FUSION_FIXTURES {
        let (m, rows, k) = (r.random_range(1..=10), r.random_range(1..=16), r.random_range(2..=10));
        let tables: Vec<Tensor> = (0..m).map(|_| oracle::random_probs(rows, k, &mut r)).collect();
        let fused = ensemble_average(&BaseOutputs::from_tables(tables.clone()).map_err(|e| e.to_string())?);
        if !oracle::rows_are_distributions(&fused, ROW_SUM_TOL) {
            failures.push(format!("#{i} row sums"));
        }
        let mut shuffled = tables.clone();
        shuffled.shuffle(&mut r);
        if ensemble_average(&BaseOutputs::from_tables(shuffled).unwrap()) != fused {
            failures.push(format!("#{i} permutation"));
        }
        let copies = vec![tables[0].clone(); m];
        if ensemble_average(&BaseOutputs::from_tables(copies).unwrap()) != tables[0] {
            failures.push(format!("#{i} idempotence"));
        }
        let three: Vec<Tensor> = (0..3).map(|j| tables[j % m].clone()).collect();
        let avg = ensemble_average(&BaseOutputs::from_tables(three.clone()).unwrap());
        if ensemble_traditional(&three[0], &three[1], &three[2]).map_err(|e| e.to_string())? != avg {
            failures.push(format!("#{i} traditional"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{FUSION_FIXTURES} fixtures: idempotent, permutation invariant, rows sum to 1 within {ROW_SUM_TOL:e}, traditional == average bit for bit")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[..failures.len().min(5)].join(", "))
        },
    )
}

/// Criterion 4's config, with dataset paths redirected to the data directory.
fn desk_config(seed: u64) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(&workspace().join(DESK_CONFIG)).map_err(|e| e.to_string())?;
    let dir = data_dir();
    cfg.source.paths = vec![dir.join("mnist10k.dgim.gz")];
    cfg.target.paths = vec![dir.join("usps.dgim")];
    cfg.seed = seed;
    cfg.output.dir = std::env::temp_dir().join(format!("domgen-acceptance-{}", std::process::id()));
    cfg.output.name = format!("seed{seed}");
    Ok(cfg)
}

struct DeskRun {
    table: ResultsTable,
    csv: Vec<u8>,
    s_train: usize,
    min_base_val: f32,
}

impl DeskRun {
    fn t(&self, row: &str) -> f32 {
        self.table.get(row).map(|r| r.t).unwrap_or(f32::NAN)
    }

    fn mean_base_t(&self) -> f32 {
        (1..=DESK_MODELS).map(|i| self.t(&format!("model {i}"))).sum::<f32>() / DESK_MODELS as f32
    }
}

fn desk_run(seed: u64) -> Result<DeskRun, String> {
    let cfg = desk_config(seed)?;
    let opts = RunOptions { single_context: true, verbose: false };
    let out = run_experiment(&cfg, &opts).map_err(|e| e.to_string())?;
    // Selection picks the best-S_val epoch; the reported column is recomputed on those parameters.
    let min_base_val = (1..=DESK_MODELS)
        .map(|i| out.table.get(&format!("model {i}")).map(|r| r.s_val).unwrap_or(0.0))
        .fold(f32::INFINITY, f32::min);
    let csv = std::fs::read(&out.csv_path).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        s_train: out.metadata.sizes.map(|s| s.s_train).unwrap_or(0),
        table: out.table,
        csv,
        min_base_val,
    })
}

/// Trains the five base CNNs of criterion 4 without a target set and returns
/// the lowest S_val accuracy among them. Seed streams match the pipeline's
/// (source sample 1, split 3, subsets 4), so these are the same models.
fn base_only_min_val(seed: u64) -> Result<f32, String> {
    let cfg = desk_config(seed)?;
    let all = load_dgim_err(&cfg.source.paths[0])?;
    let src = all.sample(cfg.source.limit.unwrap_or(all.len()), derive_seed(seed, 1)).map_err(|e| e.to_string())?;
    let src = resize(&src, 16, 16).map_err(|e| e.to_string())?;
    let (tr, va) = split(&src, SplitSpec { val_fraction: cfg.val_fraction, seed: derive_seed(seed, 3) }).map_err(|e| e.to_string())?;
    let spec = build_base_cnn([1, 16, 16], 10).map_err(|e| e.to_string())?;
    let plan = assign_subsets(&default_pool(DomainKind::Digits), DESK_MODELS, derive_seed(seed, 4)).map_err(|e| e.to_string())?;
    let mut worst = f32::INFINITY;
    for (i, s) in cfg.base_seeds(DESK_MODELS).map_err(|e| e.to_string())?.into_iter().enumerate() {
        let init = init_params(&spec, derive_seed(s, 0)).map_err(|e| e.to_string())?;
        let tc = TrainConfig { seed: s, ..cfg.train.clone() };
        let (params, _) = train(&spec, init, &tr, Some(&va), &tc, &plan.augmentations_for(i)).map_err(|e| e.to_string())?;
        worst = worst.min(evaluate(&spec, &params, &va).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn load_dgim_err(p: &Path) -> Result<LabeledImageSet, String> {
    domgen::formats::dgim::load_dgim(p).map_err(|e| e.to_string())
}

struct Desk {
    runs: Result<Vec<(u64, DeskRun)>, String>,
    took: Duration,
}

fn desk() -> Desk {
    let start = Instant::now();
    let usps = data_dir().join("usps.dgim");
    let runs = if usps.exists() {
        DESK_SEEDS.iter().map(|&s| desk_run(s).map(|r| (s, r))).collect()
    } else {
        Err(format!("target set {} is missing", usps.display()))
    };
    Desk { runs, took: start.elapsed() }
}

fn criterion_4(desk: &Desk) -> Outcome {
    let cfg = desk_config(0)?;
    if cfg.train.epochs > DESK_MAX_EPOCHS || cfg.num_models != domgen::experiment::NumModels::Count(DESK_MODELS) {
        return Err(format!("{DESK_CONFIG} does not match the criterion's budget"));
    }
    match &desk.runs {
        Ok(runs) => {
            let mut good = 0;
            let mut lines = Vec::new();
            for (seed, r) in runs {
                let a = r.min_base_val >= BASE_SVAL_MIN;
                let b = r.t("EnA") >= r.mean_base_t() - ENA_SLACK;
                good += (a && b) as usize;
                lines.push(format!(
                    "seed {seed}: min base S_val {:.3}, EnA T {:.3} vs base mean {:.4}",
                    r.min_base_val,
                    r.t("EnA"),
                    r.mean_base_t()
                ));
            }
            let sizes_ok = runs.iter().all(|(_, r)| r.s_train.abs_diff(DESK_TRAIN_SAMPLES) <= 10);
            check(
                good >= DESK_REQUIRED && sizes_ok,
                format!("{good}/{} seeds hold (a) and (b) in {:.0}s; {}", runs.len(), desk.took.as_secs_f32(), lines.join("; ")),
            )
        }
        Err(why) => {
            // (b) cannot be evaluated; (a) is still measured so the log shows how far the run gets.
            let mut held = 0;
            let mut vals = Vec::new();
            for &s in &DESK_SEEDS {
                let v = base_only_min_val(s)?;
                held += (v >= BASE_SVAL_MIN) as usize;
                vals.push(format!("seed {s} min S_val {v:.3}"));
                if held >= DESK_REQUIRED {
                    break;
                }
            }
            Err(format!("(b) not evaluable: {why}; (a) held in {held} seeds ({})", vals.join(", ")))
        }
    }
}

fn criterion_5(desk: &Desk) -> Outcome {
    let runs = desk.runs.as_ref().map_err(|why| format!("not evaluable: {why}"))?;
    let mut good = 0;
    let mut lines = Vec::new();
    for (seed, r) in runs {
        let floor = r.mean_base_t() - META_SLACK;
        good += (r.t("EnM") >= floor && r.t("EnM2") >= floor) as usize;
        lines.push(format!("seed {seed}: EnM {:.3}, EnM2 {:.3} vs base mean {:.4}", r.t("EnM"), r.t("EnM2"), r.mean_base_t()));
    }
    check(good >= DESK_REQUIRED, format!("{good}/{} seeds; {}", runs.len(), lines.join("; ")))
}

fn criterion_6() -> Outcome {
    let all = mnist_fixture();
    // Drop every image that appears with more than one label.
    let mut seen: HashMap<&[u8], Option<u8>> = HashMap::new();
    for i in 0..all.len() {
        let e = seen.entry(all.image(i)).or_insert(Some(all.labels()[i]));
        if *e != Some(all.labels()[i]) {
            *e = None;
        }
    }
    let mut order: Vec<usize> = (0..all.len()).filter(|&i| seen[all.image(i)].is_some()).collect();
    let dropped = all.len() - order.len();
    order.shuffle(&mut seeded(6));
    let fit = all.subset(&order[..RF_SAMPLES]).map_err(|e| e.to_string())?;
    let held = all.subset(&order[RF_SAMPLES..RF_SAMPLES + RF_HELD_OUT]).map_err(|e| e.to_string())?;
    let flat = |s: &LabeledImageSet| {
        let t = to_float(s);
        let n = t.shape()[0];
        t.reshape(&[n, s.image_len()]).unwrap()
    };
    let cfg = ForestConfig { n_trees: RF_TREES, max_depth: None, seed: 6, ..ForestConfig::default() };
    let start = Instant::now();
    let forest = train_random_forest(&flat(&fit), fit.labels(), 10, &cfg).map_err(|e| e.to_string())?;
    let tr = accuracy(&rf_predict_proba(&forest, &flat(&fit)).map_err(|e| e.to_string())?, fit.labels()).unwrap();
    let va = accuracy(&rf_predict_proba(&forest, &flat(&held)).map_err(|e| e.to_string())?, held.labels()).unwrap();
    check(
        tr == 1.0 && va < 1.0,
        format!(
            "{RF_TREES} trees on {RF_SAMPLES} samples ({dropped} conflicting dropped) in {:.1}s: train {tr:.4}, held-out {va:.4}",
            start.elapsed().as_secs_f32()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (shape, k) in [([1, 16, 16], 10), ([1, 32, 32], 10), ([3, 32, 32], 10), ([3, 32, 32], 9)] {
        let base = count_params(&build_base_cnn(shape, k).map_err(|e| e.to_string())?).unwrap();
        let target = HCNN_MODELS * base;
        let hcnn = build_hcnn(shape, k, target).map_err(|e| e.to_string())?;
        let got = count_params(&hcnn).unwrap();
        let ratio = got as f64 / target as f64;
        ok &= (ratio - 1.0).abs() <= HCNN_TOL;
        lines.push(format!("{shape:?}/{k}: {got} vs {target} ({:+.2}%)", (ratio - 1.0) * 100.0));
    }
    check(ok, lines.join(", "))
}

fn criterion_8() -> Outcome {
    use DatasetId::*;
    // (source, target, side, gray source, gray target, intersect)
    let table = [
        (Mnist, Usps, 16, false, false, false),
        (Usps, Mnist, 16, false, false, false),
        (Mnist, Svhn, 32, false, true, false),
        (Svhn, Mnist, 32, true, false, false),
        (Usps, Svhn, 16, false, true, false),
        (Svhn, Usps, 16, true, false, false),
        (Cifar10, Stl10, 32, false, false, true),
        (Stl10, Cifar10, 32, false, false, true),
    ];
    let mut bad = Vec::new();
    for (s, t, side, gs, gt, inter) in table {
        let p = resolve_preprocessing(s, t).map_err(|e| e.to_string())?;
        if (p.size, p.grayscale_source, p.grayscale_target, p.intersect_classes) != (side, gs, gt, inter) {
            bad.push(format!("{s}->{t}: {p:?}"));
        }
    }
    for (s, t) in [(Mnist, Cifar10), (Stl10, Usps), (Svhn, Svhn)] {
        if resolve_preprocessing(s, t).is_ok() {
            bad.push(format!("{s}->{t} accepted"));
        }
    }

    // One image per class on each side, 3x8x8, so every class survives or not by name alone.
    let mk = |names: Vec<&str>| {
        let k = names.len();
        LabeledImageSet::new(3, 8, 8, vec![128; k * 192], (0..k as u8).collect(), names.into_iter().map(String::from).collect()).unwrap()
    };
    let cifar = mk(vec!["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]);
    let stl = mk(vec!["airplane", "bird", "car", "cat", "deer", "dog", "horse", "monkey", "ship", "truck"]);
    let mut classes = Vec::new();
    for (s, t, a, b) in [(Cifar10, Stl10, &cifar, &stl), (Stl10, Cifar10, &stl, &cifar)] {
        let p = resolve_preprocessing(s, t).unwrap();
        let pair = apply_preprocessing(&p, s, a.clone(), b.clone()).map_err(|e| e.to_string())?;
        classes.push(pair.source.num_classes());
        if pair.source.num_classes() != 9 || pair.target.num_classes() != 9 || pair.source.len() != 9 || pair.target.len() != 9 {
            bad.push(format!("{s}->{t} kept {} / {} classes", pair.source.num_classes(), pair.target.num_classes()));
        }
        if pair.source.image_shape() != [3, 32, 32] {
            bad.push(format!("{s}->{t} shape {:?}", pair.source.image_shape()));
        }
    }
    if CIFAR10_STL10_CLASS_MAP.len() != 9 {
        bad.push("class map size".into());
    }
    check(bad.is_empty(), if bad.is_empty() { format!("8 pairings match, CIFAR-10/STL-10 keep {classes:?} classes") } else { bad.join("; ") })
}

fn criterion_9(desk: &Desk) -> Outcome {
    let runs = desk.runs.as_ref().map_err(|why| format!("not evaluable: {why}"))?;
    let (seed, first) = &runs[0];
    let again = desk_run(*seed)?;
    check(again.csv == first.csv, format!("seed {seed}: {} CSV bytes, identical: {}", first.csv.len(), again.csv == first.csv))
}

fn criterion_10() -> Outcome {
    let mut problems = Vec::new();
    let (mut sets, mut cks, mut rejected) = (0, 0, 0);
    for seed in 0..FORMAT_FIXTURES {
        let mut r = seeded(derive_seed(10, seed));
        let set = random_set(&mut r);
        let bytes = encode_dgim(&set).map_err(|e| e.to_string())?;
        if decode_dgim(&bytes).ok().as_ref() != Some(&set) || encode_dgim(&set).unwrap() != bytes {
            problems.push(format!("DGIM fixture {seed}"));
        }
        sets += 1;
        for bad in corruptions(&bytes) {
            rejected += 1;
            if decode_dgim(&bad).is_ok() {
                problems.push(format!("DGIM corruption accepted ({seed})"));
            }
        }
        for ck in random_checkpoints(&mut r) {
            let bytes = encode_checkpoint(&ck).map_err(|e| e.to_string())?;
            match decode_checkpoint(&bytes) {
                Ok(back) if same_bits(&back, &ck) => {}
                _ => problems.push(format!("DGCK fixture {seed}")),
            }
            cks += 1;
            for bad in corruptions(&bytes) {
                rejected += 1;
                if decode_checkpoint(&bad).is_ok() {
                    problems.push(format!("DGCK corruption accepted ({seed})"));
                }
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{sets} DGIM and {cks} DGCK fixtures bit-exact, {rejected} malformed inputs rejected")
        } else {
            problems[..problems.len().min(5)].join(", ")
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2}: {tag}  {name}: {detail}");
    };
    report(1, "gradient suite", criterion_1());
    report(2, "forward oracles", criterion_2());
    report(3, "fusion algebra", criterion_3());
    let desk = desk();
    report(4, "desk-scale MNIST->USPS", criterion_4(&desk));
    report(5, "meta ensembles vs base mean", criterion_5(&desk));
    report(6, "random forest overfit", criterion_6());
    report(7, "HCNN parameter matching", criterion_7());
    report(8, "preprocessing rules", criterion_8());
    report(9, "single-context determinism", criterion_9(&desk));
    report(10, "format round-trips", criterion_10());
    if let Ok(cfg) = desk_config(0) {
        let _ = std::fs::remove_dir_all(cfg.output.dir);
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
