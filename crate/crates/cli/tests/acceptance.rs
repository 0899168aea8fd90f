//! Acceptance checks, one test per criterion. Each test writes a single
//! `criterion N: PASS|FAIL ...` line straight to stderr (visible without
//! `--nocapture`) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use slidenet::cost::count_costs;
use slidenet::dense::{make_scale_plan, scale_grid, score_map, ScalePlan, Stride};
use slidenet::localize::{
    evaluate_detection_map, greedy_merge, iou, localize, LocalizeConfig, Record,
};
use slidenet::train::{
    extract_windows, make_synthetic_dataset_with, train_classifier, train_detector, train_regressor, truth_records,
    DatasetOptions, NegativeMode, SyntheticSample, TrainConfig,
};
use slidenet::{build_accurate, build_fast, build_toy, ArchSpec, Tensor, WeightStore};
use slidenet_oracle::suite::{dense_deviation, gradient_suite, random_merge_instance, random_weights};
use slidenet_oracle::{enumerate_windows, merge_simulator};

fn report(n: usize, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn slidenet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slidenet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SLIDENET_THREADS")
        .output()
        .expect("run slidenet")
}

// ---------------------------------------------------------------- criterion 1

type Dims = (usize, usize);

/// channels, filter, conv stride, pool, spatial input, as printed.
struct PrintedLayer(usize, Option<Dims>, Option<Dims>, Option<Dims>, Dims);

const FAST_LAYERS: [PrintedLayer; 8] = [
    PrintedLayer(96, Some((11, 11)), Some((4, 4)), Some((2, 2)), (231, 231)),
    PrintedLayer(256, Some((5, 5)), Some((1, 1)), Some((2, 2)), (24, 24)),
    PrintedLayer(512, Some((3, 3)), Some((1, 1)), None, (12, 12)),
    PrintedLayer(1024, Some((3, 3)), Some((1, 1)), None, (12, 12)),
    PrintedLayer(1024, Some((3, 3)), Some((1, 1)), Some((2, 2)), (12, 12)),
    PrintedLayer(3072, None, None, None, (6, 6)),
    PrintedLayer(4096, None, None, None, (1, 1)),
    PrintedLayer(1000, None, None, None, (1, 1)),
];

const ACCURATE_LAYERS: [PrintedLayer; 9] = [
    PrintedLayer(96, Some((7, 7)), Some((2, 2)), Some((3, 3)), (221, 221)),
    PrintedLayer(256, Some((7, 7)), Some((1, 1)), Some((2, 2)), (36, 36)),
    PrintedLayer(512, Some((3, 3)), Some((1, 1)), None, (15, 15)),
    PrintedLayer(512, Some((3, 3)), Some((1, 1)), None, (15, 15)),
    PrintedLayer(1024, Some((3, 3)), Some((1, 1)), None, (15, 15)),
    PrintedLayer(1024, Some((3, 3)), Some((1, 1)), Some((3, 3)), (15, 15)),
    PrintedLayer(4096, None, None, None, (5, 5)),
    PrintedLayer(4096, None, None, None, (1, 1)),
    PrintedLayer(1000, None, None, None, (1, 1)),
];

/// input, unpooled, pooled per offset, classifier per offset, output.
const ACCURATE_SCALES: [[Dims; 5]; 6] = [
    [(245, 245), (17, 17), (5, 5), (1, 1), (3, 3)],
    [(281, 317), (20, 23), (6, 7), (2, 3), (6, 9)],
    [(317, 389), (23, 29), (7, 9), (3, 5), (9, 15)],
    [(389, 461), (29, 35), (9, 11), (5, 7), (15, 21)],
    [(425, 497), (32, 35), (10, 11), (6, 7), (18, 24)],
    [(461, 569), (35, 44), (11, 14), (7, 10), (21, 30)],
];

/// Cells where the printed tables disagree with their own layer arithmetic.
const KNOWN_CONFLICTS: [&str; 4] = [
    "fast layer 2 input",
    "accurate scale 5 unpooled",
    "accurate scale 5 pooled",
    "accurate scale 5 classifier",
];

fn layer_cells(name: &str, spec: &ArchSpec, printed: &[PrintedLayer], cells: &mut usize, bad: &mut Vec<String>) {
    assert_eq!(spec.layers.len(), printed.len(), "{name} layer count");
    let trace = spec.trace(spec.train_input).unwrap();
    for ((layer, t), p) in spec.layers.iter().zip(&trace).zip(printed) {
        let i = layer.index;
        let pairs = [
            ("channels", (layer.channels, 0), (p.0, 0)),
            ("filter", layer.filter.unwrap_or_default(), p.1.unwrap_or_default()),
            ("stride", layer.conv_stride.unwrap_or_default(), p.2.unwrap_or_default()),
            ("pool", layer.pool.unwrap_or_default(), p.3.unwrap_or_default()),
            ("input", t.input, p.4),
        ];
        for (what, got, want) in pairs {
            *cells += 1;
            if got != want {
                bad.push(format!("{name} layer {i} {what}"));
            }
        }
    }
}

fn shape_mismatches() -> (usize, Vec<String>) {
    let (mut cells, mut bad) = (0, Vec::new());
    layer_cells("fast", &build_fast(), &FAST_LAYERS, &mut cells, &mut bad);
    let accurate = build_accurate();
    layer_cells("accurate", &accurate, &ACCURATE_LAYERS, &mut cells, &mut bad);
    let plan = make_scale_plan(&accurate, 6).unwrap();
    let names = ["input", "unpooled", "pooled", "classifier", "output"];
    for (s, (row, want)) in plan.rows.iter().zip(ACCURATE_SCALES).enumerate() {
        let got = [row.input, row.unpooled, row.pooled, row.classifier, row.output];
        for ((g, w), name) in got.iter().zip(want).zip(names) {
            cells += 1;
            if *g != w {
                bad.push(format!("accurate scale {} {name}", s + 1));
            }
        }
    }
    (cells, bad)
}

#[test]
fn criterion_01_shape_conformance() {
    let start = Instant::now();
    let (cells, bad) = shape_mismatches();
    let dir = tempfile::tempdir().unwrap();
    let mut cli_lines = 0;
    let mut cli_ok = true;
    for arch in ["fast", "accurate"] {
        let out = slidenet(&["inspect", "--arch", arch], dir.path());
        let stdout = String::from_utf8_lossy(&out.stdout);
        let listed = stdout.lines().filter(|l| l.contains(": computed ")).count();
        let expected = bad.iter().filter(|b| b.starts_with(arch)).count();
        cli_lines += listed;
        cli_ok &= listed == expected && out.status.code() == Some(if expected == 0 { 0 } else { 5 });
    }
    let elapsed = start.elapsed();
    let pass = bad.is_empty() && cli_ok && elapsed < Duration::from_secs(1);
    let detail = if bad.is_empty() {
        format!("all {cells} cells reproduced")
    } else {
        format!(
            "{} of {cells} printed cells differ from the layer arithmetic: {}; inspect lists {cli_lines} and exits 5",
            bad.len(),
            bad.join(", ")
        )
    };
    report(1, pass, elapsed, &detail);
    assert!(cli_ok, "inspect output disagrees with the independent comparison");
    assert_eq!(bad, KNOWN_CONFLICTS, "mismatches beyond the documented table conflicts");
}

/// Exact reproduction of every printed cell. The printed tables contradict
/// their own arithmetic in the cells listed in `KNOWN_CONFLICTS`.
#[test]
#[ignore = "the printed tables are internally inconsistent in 4 cells; see KNOWN_CONFLICTS"]
fn criterion_01_exact_reproduction() {
    let (_, bad) = shape_mismatches();
    assert!(bad.is_empty(), "{bad:?}");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_parameter_and_connection_counts() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, spec, params, conns) in [("fast", build_fast(), 145e6, 2810e6), ("accurate", build_accurate(), 144e6, 5369e6)] {
        let p = spec.count_parameters() as f64;
        let c = spec.count_connections() as f64;
        let (dp, dc) = (p / params - 1.0, c / conns - 1.0);
        pass &= dp.abs() <= 0.03 && dc.abs() <= 0.03;
        lines.push(format!("{name} {:.1}M params ({:+.2}%), {:.0}M connections ({:+.2}%)", p / 1e6, dp * 100.0, c / 1e6, dc * 100.0));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(1);
    report(2, pass, elapsed, &lines.join("; "));
    assert!(pass, "{lines:?}");
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_dense_naive_equivalence() {
    let start = Instant::now();
    let toy = build_toy(6, 16).unwrap();
    let mut cases: Vec<(&str, &ArchSpec, Dims)> = Vec::new();
    for size in make_scale_plan(&toy, 3).unwrap().inputs() {
        cases.push(("toy", &toy, size));
    }
    let fast = build_fast();
    for size in [(247, 247), (247, 263), (263, 247)] {
        cases.push(("fast", &fast, size));
    }
    let mut worst = 0f64;
    let mut windows = 0;
    let mut counts_agree = true;
    for (i, (_, spec, size)) in cases.iter().enumerate() {
        let d = dense_deviation(spec, *size, 300 + i as u64, true);
        counts_agree &= d.windows == d.dense_cells && d.windows > 0;
        worst = worst.max(d.worst);
        windows += d.windows;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-5 && counts_agree && elapsed < Duration::from_secs(120);
    let sizes: Vec<String> = cases.iter().map(|(n, _, s)| format!("{n} {}x{}", s.0, s.1)).collect();
    report(
        3,
        pass,
        elapsed,
        &format!("{windows} windows over {}, classification and regression, max abs diff {worst:.2e}", sizes.join(", ")),
    );
    assert!(counts_agree);
    assert!(worst <= 1e-5, "max abs diff {worst:e}");
}

// ---------------------------------------------------------------- criterion 4

fn interleave_check(spec: &ArchSpec, plan: &ScalePlan, seed: u64) -> (usize, bool) {
    let weights = random_weights(spec, seed);
    let mut ok = true;
    for (s, row) in plan.rows.iter().enumerate() {
        let size = row.input;
        let image = Tensor::from_fn(&[spec.input_channels, size.0, size.1], |i| ((i * 37) % 101) as f32 / 101.0);
        let grid = scale_grid(&image, spec, &weights, size, s).unwrap();
        let fine = score_map(&grid, &weights, spec, Stride::Fine, false).unwrap();
        let coarse = score_map(&grid, &weights, spec, Stride::Coarse, false).unwrap();
        let (_, fh, fw) = fine.scores.chw().unwrap();
        let (c, ch, cw) = coarse.scores.chw().unwrap();
        let p = spec.final_pool;
        ok &= (fh, fw) == (p * ch, p * cw) && (fh, fw) == row.output;
        for k in 0..c {
            for y in 0..ch {
                for x in 0..cw {
                    ok &= fine.scores.at3(k, p * y, p * x).to_bits() == coarse.scores.at3(k, y, x).to_bits();
                }
            }
        }
    }
    (plan.rows.len(), ok)
}

fn min_step(origins: impl Iterator<Item = usize>) -> usize {
    let mut v: Vec<usize> = origins.collect();
    v.sort_unstable();
    v.dedup();
    v.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0)
}

#[test]
fn criterion_04_fine_stride() {
    let start = Instant::now();
    let toy = build_toy(6, 16).unwrap();
    let (toy_scales, toy_ok) = interleave_check(&toy, &make_scale_plan(&toy, 4).unwrap(), 41);
    let accurate = build_accurate();
    let acc_plan = make_scale_plan(&accurate, 6).unwrap();
    let (acc_scales, acc_ok) = interleave_check(&accurate, &acc_plan, 42);

    let mut steps_ok = true;
    let mut counts_ok = true;
    for row in &acc_plan.rows {
        let fine = enumerate_windows(&accurate, row.input, 0, true);
        let coarse = enumerate_windows(&accurate, row.input, 0, false);
        counts_ok &= fine.windows.len() == row.output.0 * row.output.1;
        counts_ok &= coarse.windows.len() == row.classifier.0 * row.classifier.1;
        let fine_step = min_step(fine.windows.iter().map(|w| w.origin.1));
        let coarse_step = min_step(coarse.windows.iter().map(|w| w.origin.1));
        let fine_row = min_step(fine.windows.iter().map(|w| w.origin.0));
        let coarse_row = min_step(coarse.windows.iter().map(|w| w.origin.0));
        steps_ok &= fine.step == 12;
        steps_ok &= [fine_step, fine_row].iter().all(|&s| s == 12 || s == 0);
        steps_ok &= [coarse_step, coarse_row].iter().all(|&s| s == 36 || s == 0);
    }
    let elapsed = start.elapsed();
    let pass = toy_ok && acc_ok && steps_ok && counts_ok && elapsed < Duration::from_secs(60);
    report(
        4,
        pass,
        elapsed,
        &format!(
            "3x density and bit-exact zero-offset slice at {toy_scales} toy and {acc_scales} accurate scales; \
             enumerated window steps 12 (fine) and 36 (coarse) at every accurate scale"
        ),
    );
    assert!(toy_ok && acc_ok, "interleaving");
    assert!(steps_ok && counts_ok, "window enumeration");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_gradient_suite() {
    let start = Instant::now();
    let checks = gradient_suite(24);
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let enough = checks.iter().all(|c| c.instances >= 20);
    let pass = worst <= 1e-3 && enough && elapsed < Duration::from_secs(120);
    let ops: Vec<String> = checks.iter().map(|c| format!("{} {:.1e}", c.op, c.worst)).collect();
    report(5, pass, elapsed, &format!("24 instances per operation, worst relative error {worst:.2e} ({})", ops.join(", ")));
    for c in &checks {
        assert!(c.instances >= 20 && c.worst <= 1e-3, "{}: {:e} over {}", c.op, c.worst, c.instances);
    }
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_merge_algorithm() {
    let start = Instant::now();
    let (mut equal, mut conserved, mut bounded) = (0, 0, 0);
    let mut largest = 0;
    for seed in 1000..1200 {
        let (input, cfg) = random_merge_instance(seed);
        largest = largest.max(input.len());
        let n = input.len();
        let out = greedy_merge(input.clone(), &cfg).unwrap();
        equal += usize::from(out.boxes == merge_simulator(input.clone(), &cfg));
        let mass_in: f64 = input.iter().map(|b| b.confidence).sum();
        let mass_out: f64 = out.boxes.iter().map(|b| b.confidence).sum();
        conserved += usize::from(mass_in.to_bits() == mass_out.to_bits());
        bounded += usize::from(out.merges <= n.saturating_sub(1));
    }
    let elapsed = start.elapsed();
    let pass = equal == 200 && conserved == 200 && bounded == 200 && largest <= 30 && elapsed < Duration::from_secs(30);
    report(
        6,
        pass,
        elapsed,
        &format!("200 instances (n <= {largest}): {equal} equal the simulator, {conserved} conserve mass exactly, {bounded} within n-1 merges"),
    );
    assert!(pass);
}

// ------------------------------------------------------------ criteria 7 and 8

const IMAGE: usize = 48;
const CLASSES: usize = 6;

struct Classifier {
    spec: ArchSpec,
    weights: WeightStore,
    seconds: f64,
}

/// Trained once and shared by the localization and detection criteria.
fn classifier() -> &'static Classifier {
    static CELL: OnceLock<Classifier> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let spec = build_toy(CLASSES, 16).unwrap();
        let train = make_synthetic_dataset_with(2000, CLASSES, IMAGE, 101, DatasetOptions::single_object()).unwrap();
        let weights = train_classifier(&spec, &train, &TrainConfig::toy(IMAGE), None).unwrap().weights;
        Classifier { spec, weights, seconds: start.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_07_desk_scale_localization() {
    let start = Instant::now();
    let cls = classifier();
    let spec = &cls.spec;
    let train = make_synthetic_dataset_with(2000, CLASSES, IMAGE, 101, DatasetOptions::single_object()).unwrap();
    let test = make_synthetic_dataset_with(200, CLASSES, IMAGE, 102, DatasetOptions::single_object()).unwrap();
    let cfg = TrainConfig::toy_heads(IMAGE);
    let plan = cfg.head_plan(spec).unwrap();
    let windows = extract_windows(spec, &cls.weights, &train, &plan).unwrap();
    let regressor = train_regressor(spec, &cls.weights, &windows, &train, &cfg).unwrap().weights;
    let lc = LocalizeConfig { k: 1, t: 0.1, object_classes: CLASSES };
    let rate = |scales: usize| {
        let p = plan.truncated(scales);
        let (mut boxes, mut labelled) = (0usize, 0usize);
        for s in &test {
            let out = localize(&s.image, spec, &cls.weights, &regressor, &p, &lc).unwrap();
            let (class, truth) = s.objects[0];
            if let Some(top) = out.first() {
                if iou(&top.bbox, &truth) >= 0.5 {
                    boxes += 1;
                    labelled += usize::from(top.class_id == class);
                }
            }
        }
        (boxes as f64 / test.len() as f64, labelled as f64 / test.len() as f64)
    };
    let (one, one_labelled) = rate(1);
    let (two, two_labelled) = rate(2);
    let elapsed = start.elapsed();
    let pass = two >= 0.8 && two > one && elapsed < Duration::from_secs(30 * 60);
    report(
        7,
        pass,
        elapsed,
        &format!(
            "top-1 box IOU >= 0.5 on {:.1}% with 2 scales vs {:.1}% with 1 scale \
             (with correct label: {:.1}% vs {:.1}%); classifier training {:.0} s",
            two * 100.0,
            one * 100.0,
            two_labelled * 100.0,
            one_labelled * 100.0,
            cls.seconds
        ),
    );
    assert!(two >= 0.8, "2-scale rate {two}");
    assert!(two > one, "2 scales {two} vs 1 scale {one}");
}

fn detection_map(
    spec: &ArchSpec,
    detector: &WeightStore,
    regressor: &WeightStore,
    plan: &ScalePlan,
    test: &[SyntheticSample],
    truth: &[Record],
) -> f64 {
    let det_spec = spec.clone().with_num_classes(CLASSES + 1);
    let lc = LocalizeConfig { k: 2, t: 0.2, object_classes: CLASSES };
    let mut preds = Vec::new();
    for s in test {
        for b in localize(&s.image, &det_spec, detector, regressor, plan, &lc).unwrap() {
            preds.push(Record { image_id: s.id.clone(), class_id: b.class_id, confidence: b.confidence, bbox: Some(b.bbox) });
        }
    }
    evaluate_detection_map(&preds, truth).unwrap().map
}

#[test]
fn criterion_08_detector_fine_tuning() {
    let start = Instant::now();
    let cls = classifier();
    let spec = &cls.spec;
    let opts = DatasetOptions { min_objects: 0, max_objects: 2, min_extent: 0.25, max_extent: 0.45 };
    let train = make_synthetic_dataset_with(600, CLASSES, IMAGE, 111, opts).unwrap();
    let test = make_synthetic_dataset_with(200, CLASSES, IMAGE, 112, opts).unwrap();
    let empty = train.iter().chain(&test).filter(|s| s.objects.is_empty()).count();
    let truth = truth_records(&test);
    let mut cfg = TrainConfig::toy_heads(IMAGE);
    cfg.heads = CLASSES;
    cfg.first_scale = 1;
    cfg.scales = 2;
    let plan = cfg.head_plan(spec).unwrap();
    let windows = extract_windows(spec, &cls.weights, &train, &plan).unwrap();
    let regressor = train_regressor(spec, &cls.weights, &windows, &train, &cfg).unwrap().weights;

    let mut per_seed = BTreeMap::new();
    for seed in 0..5u64 {
        cfg.seed = seed;
        let mut maps = [0.0; 2];
        for (m, mode) in maps.iter_mut().zip([NegativeMode::Random, NegativeMode::Hardest]) {
            let det = train_detector(spec, &cls.weights, &windows, &train, &cfg, mode).unwrap();
            *m = detection_map(spec, &det.weights, &regressor, &plan, &test, &truth);
        }
        per_seed.insert(seed, maps);
    }
    let hardest_wins = per_seed.values().filter(|[r, h]| h >= r).count();
    let best = per_seed.values().flat_map(|m| m.iter().copied()).fold(0.0, f64::max);
    let worst = per_seed.values().flat_map(|m| m.iter().copied()).fold(1.0, f64::min);
    let elapsed = start.elapsed();
    let pass = worst >= 0.5 && hardest_wins >= 3 && elapsed < Duration::from_secs(30 * 60);
    let seeds: Vec<String> = per_seed.iter().map(|(s, [r, h])| format!("seed {s} random {r:.3} hardest {h:.3}")).collect();
    report(
        8,
        pass,
        elapsed,
        &format!(
            "mAP {worst:.3}..{best:.3} over 10 runs ({empty} empty images); hardest >= random on {hardest_wins}/5 seeds [{}]",
            seeds.join("; ")
        ),
    );
    assert!(worst >= 0.5, "lowest mAP {worst}");
    assert!(hardest_wins >= 3, "{per_seed:?}");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_benchmark_evidence() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let sizes = "34,38,42,54,78,114,162";
    let out = slidenet(
        &["bench", "--arch", "toy", "--image-size", sizes, "--counts-only", "--out", "bench"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("bench/counts.csv")).unwrap();
    let mut rows: Vec<(usize, usize, u64, u64, f64)> = Vec::new();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for rec in reader.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].to_string();
        rows.push((f(0).parse().unwrap(), f(2).parse().unwrap(), f(3).parse().unwrap(), f(4).parse().unwrap(), f(5).parse().unwrap()));
    }
    let mut ok = rows.len() == sizes.split(',').count();
    for (_, windows, dense, naive, _) in &rows {
        ok &= if *windows > 1 { naive > dense } else { naive == dense };
    }
    let multi: Vec<f64> = rows.iter().filter(|r| r.1 > 1).map(|r| r.4).collect();
    let increasing = multi.windows(2).all(|w| w[1] > w[0]);

    let mut large = Vec::new();
    for (name, spec) in [("fast", build_fast()), ("accurate", build_accurate())] {
        let plan = make_scale_plan(&spec, 6).unwrap();
        let mut last = 0.0;
        for size in plan.inputs() {
            let r = count_costs(&spec, size, Stride::Fine).unwrap();
            ok &= r.windows > 1 && r.naive_macs > r.dense_macs && r.ratio() > last;
            last = r.ratio();
        }
        large.push(format!("{name} up to {last:.1}x"));
    }
    let fast = build_fast();
    let two_by_two = count_costs(&fast, (263, 263), Stride::Coarse).unwrap();
    ok &= two_by_two.windows == 4 && two_by_two.naive_macs > two_by_two.dense_macs;

    let elapsed = start.elapsed();
    let pass = ok && increasing && elapsed < Duration::from_secs(60);
    let ratios: Vec<String> = rows.iter().map(|r| format!("{}:{:.2}", r.0, r.4)).collect();
    report(
        9,
        pass,
        elapsed,
        &format!(
            "toy naive/dense MAC ratio by size [{}]; {}; fast 2x2 output {:.2}x",
            ratios.join(" "),
            large.join(", "),
            two_by_two.ratio()
        ),
    );
    assert!(ok && increasing, "{rows:?}");
}

// --------------------------------------------------------------- criterion 10

/// Runs `args` single-threaded in `root`; panics with stderr on failure.
fn run_ok(root: &Path, args: &[&str]) {
    let out = slidenet(&[&["--threads", "1"][..], args].concat(), root);
    assert!(out.status.success(), "slidenet {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(root: &Path) {
    std::fs::write(root.join("short.cfg"), "epochs = 2\ndecay_epochs = 1\n").unwrap();
    std::fs::write(root.join("one.cfg"), "epochs = 1\ndecay_epochs = 1\n").unwrap();
    run_ok(root, &["gen-data", "--out", "train", "--n", "40", "--seed", "5", "--min-objects", "1", "--max-objects", "1"]);
    run_ok(root, &["gen-data", "--out", "test", "--n", "12", "--seed", "6"]);
    run_ok(root, &["train", "--task", "classify", "--data", "train", "--config", "short.cfg", "--out", "cls"]);
    run_ok(root, &["train", "--task", "classify", "--data", "train", "--config", "one.cfg", "--out", "half"]);
    run_ok(
        root,
        &["train", "--task", "classify", "--data", "train", "--config", "short.cfg", "--resume", "half/weights.bin", "--out", "resumed"],
    );
    let heads = ["--data", "train", "--config", "short.cfg", "--classifier", "cls/weights.bin"];
    run_ok(root, &[&["train", "--task", "regress", "--out", "reg"][..], &heads[..]].concat());
    run_ok(root, &[&["train", "--task", "detect", "--out", "det"][..], &heads[..]].concat());
    run_ok(root, &["classify", "--weights", "cls/weights.bin", "--data", "test", "--scales", "2", "--out", "cls.txt"]);
    run_ok(
        root,
        &["localize", "--weights", "cls/weights.bin", "--regressor", "reg/weights.bin", "--data", "test", "--overlay", "ov", "--out", "loc.txt"],
    );
    run_ok(root, &["eval", "--pred", "cls.txt", "--truth", "test/truth.txt", "--metric", "top5cls", "--out", "eval.csv"]);
    run_ok(root, &["eval", "--pred", "loc.txt", "--truth", "test/truth.txt", "--metric", "map", "--out", "map.csv"]);
    run_ok(root, &["bench", "--image-size", "42,54", "--counts-only", "--out", "bench"]);
    run_ok(root, &["inspect", "--arch", "toy", "--out", "inspect.txt"]);
}

/// Every file under `root`, with manifests stripped of their wall-clock field.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
                continue;
            }
            let mut bytes = std::fs::read(&path).unwrap();
            if path.to_string_lossy().ends_with("manifest.json") {
                let mut json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                json.as_object_mut().unwrap().remove("wall_clock_seconds");
                bytes = serde_json::to_vec(&json).unwrap();
            }
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    std::fs::create_dir(&root).unwrap();
    pipeline(&root);
    let first = snapshot(&root);
    std::fs::remove_dir_all(&root).unwrap();
    std::fs::create_dir(&root).unwrap();
    pipeline(&root);
    let second = snapshot(&root);

    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let resumed_same = first[Path::new("cls/weights.bin")] == first[Path::new("resumed/weights.bin")];
    let trace = |p: &str| String::from_utf8(first[Path::new(p)].clone()).unwrap();
    let last_line = |s: String| s.lines().last().unwrap_or_default().to_string();
    let resumed_loss = last_line(trace("cls/trace.csv")) == last_line(trace("resumed/trace.csv"));
    let elapsed = start.elapsed();
    let pass = differing.is_empty() && resumed_same && resumed_loss;
    report(
        10,
        pass,
        elapsed,
        &format!(
            "{} files from two --threads 1 runs of every command, {} differ; resumed run reproduces the uninterrupted weights: {resumed_same}",
            first.len(),
            differing.len()
        ),
    );
    assert!(differing.is_empty(), "differing artifacts: {differing:?}");
    assert!(resumed_same && resumed_loss, "resume diverges from the uninterrupted run");
}
