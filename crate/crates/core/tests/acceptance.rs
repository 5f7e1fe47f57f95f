//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed. `ACCEPTANCE_ONLY=1,2,5` restricts the run to the listed criteria.
//! Criteria 7 and 8 are trend reports: a FAIL there is printed with its
//! numbers but does not change the exit status.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mudiknn::labelmaps::{density_map, iknn_map, knn_map};
use mudiknn::model::{
    check_model_gradients, compute_loss, loss_nodes, BackboneConfig, MapModule, MapModuleSpec, ModelGradCheck,
    Precision, PredictionResult,
};
use mudiknn::spatial::{brute_force_knn, HeadIndex};
use mudiknn::synthetic::{generate_split, SceneConfig};
use mudiknn::tensor::kernels::PoolMode;
use mudiknn::tensor::{grad_check, GradCheckReport, NodeId, TensorError};
use mudiknn::train::{
    compute_metrics, constant_baseline, load_split, median, method_name, predict_image, run_experiment,
    sliding_window_positions, EpochLoss, PatchPredictor, Sample, TrainConfig, TrainError, DEFAULT_STEP,
};
use mudiknn::{AnnotationSet, Graph, MapConfig, MapKind, ModelConfig, MudModel, Point, SigmaMode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Epochs per desk-scale training run.
const EPOCHS: usize = 12;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn random_set(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> AnnotationSet {
    let heads = (0..n)
        .map(|_| Point::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
        .collect();
    AnnotationSet::new(w, h, heads).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(k..=200);
        let set = random_set(&mut rng, 300, 200, n);
        let index = HeadIndex::build(set.heads());
        for _ in 0..50 {
            let q = Point::new(rng.random_range(-20.0..320.0), rng.random_range(-20.0..220.0));
            let fast = index.knn_distances(q, k)?;
            let slow = brute_force_knn(set.heads(), q, k);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(Verdict::new(
        worst <= 1e-9 && within(elapsed, 10),
        format!("kd-tree vs brute force, 100 instances x 50 queries: worst rel diff {worst:e} in {elapsed:.2?}"),
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut notes = Vec::new();

    // Density sums.
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=100);
        let set = random_set(&mut rng, 160, 120, n);
        let cfg = MapConfig {
            beta: rng.random_range(0.05..0.5),
            ..Default::default()
        };
        let map = density_map(&set, &cfg)?;
        worst_sum = worst_sum.max((map.sum() - n as f64).abs());
    }
    let sums_ok = worst_sum < 1e-3;
    notes.push(format!("density |sum - H| <= {worst_sum:.2e}"));

    // ikNN range and unit peaks at pixel-centre heads.
    let mut range_ok = true;
    for k in 1..=4 {
        let heads: Vec<Point> = (0..12)
            .map(|_| Point::new(rng.random_range(0..96) as f64 + 0.5, rng.random_range(0..64) as f64 + 0.5))
            .collect();
        let set = AnnotationSet::new(96, 64, heads.clone())?;
        let map = iknn_map(&set, 1)?;
        range_ok &= map.values().iter().all(|&v| v > 0.0 && v <= 1.0);
        range_ok &= heads.iter().all(|p| map.get(p.y as usize, p.x as usize) == 1.0);
        let map_k = iknn_map(&set, k)?;
        range_ok &= map_k.values().iter().all(|&v| v > 0.0 && v <= 1.0);
    }
    notes.push(format!("ikNN in (0,1], 1 at heads: {range_ok}"));

    // k = 2: constant along the segment between two heads on one row.
    let mut collinear_ok = true;
    for (x1, x2) in [(4usize, 50usize), (10, 11), (0, 63)] {
        let set = AnnotationSet::new(64, 9, vec![Point::new(x1 as f64 + 0.5, 4.5), Point::new(x2 as f64 + 0.5, 4.5)])?;
        let knn = knn_map(&set, 2)?;
        let iknn = iknn_map(&set, 2)?;
        let sep = (x2 - x1) as f64;
        collinear_ok &= (x1..=x2).all(|c| knn.get(4, c) == sep / 2.0 && iknn.get(4, c) == 1.0 / (sep / 2.0 + 1.0));
    }
    notes.push(format!("k=2 segment constant: {collinear_ok}"));

    // Profile: strictly decreasing along a ray; beats the Gaussian at 20 px.
    let single = AnnotationSet::new(64, 64, vec![Point::new(20.5, 32.5)])?;
    let ikm = iknn_map(&single, 1)?;
    let decay_ok = (20..63).all(|c| ikm.get(32, c) > ikm.get(32, c + 1));
    let mut crossover_ok = true;
    for sigma in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let cfg = MapConfig {
            beta: 1.0,
            sigma_mode: SigmaMode::Fixed(sigma),
            ..Default::default()
        };
        let dens = density_map(&single, &cfg)?;
        let gauss_peak_one = (-400.0 / (2.0 * sigma * sigma)).exp();
        let at = ikm.get(32, 40);
        crossover_ok &= at > dens.get(32, 40) && at > gauss_peak_one;
    }
    notes.push(format!("monotone decay: {decay_ok}, 20 px crossover: {crossover_ok}"));

    Ok(Verdict::new(
        sums_ok && range_ok && collinear_ok && decay_ok && crossover_ok,
        notes.join("; "),
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for (channels, side, stride) in [(128, 28, 8), (256, 14, 16), (896, 7, 32)] {
        let spec = MapModuleSpec {
            in_channels: channels,
            stride,
            patch: 224,
            stack: vec![8, 16, 32],
        };
        let module = MapModule::<f32>::new(spec, 0, 0.01)?;
        let shapes = module.stage_shapes(&Tensor::full(&[channels, side, side], 0.01f32))?;
        let expected: Vec<Vec<usize>> = vec![
            vec![1, 224, 224],
            vec![8, 112, 112],
            vec![16, 56, 56],
            vec![32, 28, 28],
            vec![1, 1, 1],
        ];
        ok &= shapes == expected;
        notes.push(format!("{channels}x{side}x{side} -> {:?}", shapes));
    }

    let model = MudModel::<f32>::new(ModelConfig {
        backbone: BackboneConfig::paper_scale(),
        ..Default::default()
    })?;
    let patch = Tensor::full(&[3, 224, 224], 0.5f32);
    let feats = model.backbone_forward(&patch)?;
    let feat_shapes: Vec<Vec<usize>> = feats.iter().map(|f| f.shape().to_vec()).collect();
    ok &= feat_shapes == [vec![128, 28, 28], vec![256, 14, 14], vec![896, 7, 7]];
    let pred = model.forward(&patch)?;
    ok &= pred.maps.iter().all(|m| m.shape() == [1, 224, 224]);
    let elapsed = start.elapsed();
    ok &= within(elapsed, 60);
    Ok(Verdict::new(
        ok,
        format!("{}; wide backbone features {feat_shapes:?}; {elapsed:.2?}", notes.join(", ")),
    ))
}

type Build = fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<NodeId, TensorError>;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn operator_checks() -> Result<Vec<(&'static str, GradCheckReport)>, TensorError> {
    let cases: Vec<(&'static str, Vec<Tensor<f64>>, Build)> = vec![
        ("conv2d", vec![random_tensor(&[2, 7, 6], 1), random_tensor(&[3, 2, 3, 2], 2), random_tensor(&[3], 3)], |g, p| {
            let x = g.param(0, p[0].clone());
            let k = g.param(1, p[1].clone());
            let b = g.param(2, p[2].clone());
            let y = g.conv2d(x, k, b, 2)?;
            let t = g.constant(random_tensor(g.value(y).shape(), 4));
            g.mse(y, t)
        }),
        ("transposed_conv2d", vec![random_tensor(&[3, 4, 4], 5), random_tensor(&[3, 1, 4, 4], 6)], |g, p| {
            let x = g.param(0, p[0].clone());
            let k = g.param(1, p[1].clone());
            let y = g.transposed_conv2d(x, k, 4)?;
            let t = g.constant(random_tensor(&[1, 16, 16], 7));
            g.mse(y, t)
        }),
        ("leaky_relu", vec![random_tensor(&[2, 5, 5], 8)], |g, p| {
            let x = g.param(0, p[0].clone());
            let y = g.leaky_relu(x, 0.01);
            let t = g.constant(random_tensor(&[2, 5, 5], 9));
            g.mse(y, t)
        }),
        ("global_avg_pool", vec![random_tensor(&[4, 3, 5], 10)], |g, p| {
            let x = g.param(0, p[0].clone());
            let y = g.global_avg_pool(x)?;
            let t = g.constant(random_tensor(&[4], 11));
            g.mse(y, t)
        }),
        ("affine", vec![random_tensor(&[8, 8], 12), random_tensor(&[8], 13)], |g, p| {
            let x = g.constant(random_tensor(&[8], 14));
            let w = g.param(0, p[0].clone());
            let b = g.param(1, p[1].clone());
            let y = g.affine(x, w, b)?;
            let t = g.constant(random_tensor(&[8], 15));
            g.mse(y, t)
        }),
        ("pool2d mean", vec![random_tensor(&[1, 8, 8], 16)], |g, p| {
            let x = g.param(0, p[0].clone());
            let y = g.pool2d(x, 4, PoolMode::Mean)?;
            let t = g.constant(random_tensor(&[1, 2, 2], 17));
            g.mse(y, t)
        }),
        ("pool2d sum", vec![random_tensor(&[1, 8, 8], 18)], |g, p| {
            let x = g.param(0, p[0].clone());
            let y = g.pool2d(x, 2, PoolMode::Sum)?;
            let t = g.constant(random_tensor(&[1, 4, 4], 19));
            g.mse(y, t)
        }),
        ("concat/add/scale/reshape", vec![random_tensor(&[2, 3, 3], 20), random_tensor(&[1, 3, 3], 21)], |g, p| {
            let a = g.param(0, p[0].clone());
            let b = g.param(1, p[1].clone());
            let c = g.concat_channels(a, b)?;
            let c = g.scale(c, 1.7);
            let d = g.add(c, c)?;
            let r = g.reshape(d, &[27])?;
            let t = g.constant(random_tensor(&[27], 22));
            g.mse(r, t)
        }),
    ];
    let mut out = Vec::new();
    for (name, params, build) in cases {
        out.push((name, grad_check(&params, None, 1e-4, build)?));
    }

    // A whole map module on a 4 x 4 feature map.
    let spec = MapModuleSpec {
        in_channels: 3,
        stride: 2,
        patch: 8,
        stack: vec![2, 2],
    };
    let module = MapModule::<f64>::new(spec, 23, 0.01).map_err(|e| TensorError::Shape {
        op: "map module",
        detail: e.to_string(),
    })?;
    let features = random_tensor(&[3, 4, 4], 24);
    let target = random_tensor(&[1, 8, 8], 25);
    let report = grad_check(module.params(), None, 1e-4, |g, p| {
        let (map, count) = module.build(g, p, features.clone()).map_err(|e| TensorError::Shape {
            op: "map module",
            detail: e.to_string(),
        })?;
        let t = g.constant(target.clone());
        let c = g.constant(Tensor::from_vec(&[1], vec![2.0]).unwrap());
        let lm = g.mse(map, t)?;
        let lc = g.mse(count, c)?;
        g.add(lm, lc)
    })?;
    out.push(("map module 4x4", report));
    Ok(out)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let ops = operator_checks()?;
    let worst_op = ops.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let ops_ok = ops.iter().all(|(_, r)| r.max_rel_error < 1e-4 && r.checked > 0);

    let double = check_model_gradients(&ModelGradCheck::default())?;
    let single = check_model_gradients(&ModelGradCheck {
        precision: Precision::Single,
        ..Default::default()
    })?;
    // A check where most elements sat on kinks would say little.
    let coverage = |r: &GradCheckReport| r.kinked * 20 <= r.checked + r.kinked;
    let elapsed = start.elapsed();
    let pass = ops_ok
        && double.max_rel_error < Precision::Double.tolerance()
        && coverage(&double)
        && within(elapsed, 300);
    Ok(Verdict::new(
        pass,
        format!(
            "{} operator checks, worst {worst_op:.2e}; desk model 64-bit {:.2e} over {} elements ({} on kinks); \
             32-bit {:.2e} (limit 1e-3, {}); {elapsed:.1?}",
            ops.len(),
            double.max_rel_error,
            double.checked,
            double.kinked,
            single.max_rel_error,
            if single.max_rel_error < Precision::Single.tolerance() && coverage(&single) { "ok" } else { "over" },
        ),
    ))
}

fn criterion_5() -> Outcome {
    let model = MudModel::<f64>::new(ModelConfig::default())?;
    let patch = random_tensor(&[3, 224, 224], 30).map(|v| v.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let truth = iknn_map(&random_set(&mut rng, 224, 224, 9), 1)?;

    let mut g = Graph::new();
    let params = model.params().to_vec();
    let pred = model.build(&mut g, &params, patch)?;
    let loss = loss_nodes(&mut g, &pred, &truth, 9.0)?;
    let (lm, lc, l) = (
        g.value(loss.map_loss).data()[0],
        g.value(loss.count_loss).data()[0],
        g.value(loss.total).data()[0],
    );
    let additive = l == lm + lc;

    let end = g.value(pred.end_count).data()[0];
    let mods: Vec<f64> = pred.module_counts.iter().map(|&c| g.value(c).data()[0]).collect();
    let fin = g.value(pred.final_count).data()[0];
    let averaged = fin == (end + mods[0] + mods[1] + mods[2]) / 4.0;

    let delta = 0.37;
    let shifted = Tensor::from_vec(&[1, 224, 224], truth.values().iter().map(|v| v + delta).collect())?;
    let offset = PredictionResult {
        maps: vec![shifted.clone(), shifted.clone(), shifted],
        module_counts: [9.0; 3],
        end_count: 9.0,
        final_count: 9.0,
    };
    let breakdown = compute_loss(&offset, &truth, 9.0)?;
    let offset_ok = (breakdown.map_loss - 3.0 * delta * delta).abs() <= 1e-6 && breakdown.count_loss == 0.0;

    Ok(Verdict::new(
        additive && averaged && offset_ok,
        format!(
            "L = L_m + L_c exact: {additive}; final = (end + sum)/4 exact: {averaged}; \
             offset {delta}: L_m = {:.9} vs {:.9}",
            breakdown.map_loss,
            3.0 * delta * delta
        ),
    ))
}

struct Run {
    method: String,
    seed: u64,
    mae: f64,
    rmse: f64,
    train_time: Duration,
    history: Vec<EpochLoss>,
}

struct Benchmark {
    baseline_mae: f64,
    /// `(label, runs over SEEDS)`.
    groups: Vec<(String, Vec<Run>)>,
}

impl Benchmark {
    fn group(&self, label: &str) -> &[Run] {
        &self.groups.iter().find(|(l, _)| l == label).expect("group").1
    }

    fn median_mae(&self, label: &str) -> f64 {
        median(&self.group(label).iter().map(|r| r.mae).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    }
}

fn run_group(train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<Vec<Run>, TrainError> {
    let mut runs = Vec::new();
    for seed in SEEDS {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let start = Instant::now();
        let (outcome, report) = run_experiment(train, test, &cfg, DEFAULT_STEP)?;
        let run = Run {
            method: method_name(&cfg),
            seed,
            mae: report.mae,
            rmse: report.rmse,
            train_time: start.elapsed(),
            history: outcome.history,
        };
        println!(
            "    {} seed {}: MAE {:.3} RMSE {:.3} ({:.0?})",
            run.method, run.seed, run.mae, run.rmse, run.train_time
        );
        runs.push(run);
    }
    Ok(runs)
}

fn benchmark() -> Result<Benchmark, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let scenes = SceneConfig {
        seed: 2024,
        count_range: (5, 50),
        ..Default::default()
    };
    generate_split(dir.path(), &scenes, 200, 50)?;
    let (train, test) = load_split(dir.path())?;
    let baseline = constant_baseline(&train, &test)?;
    println!(
        "    synthetic split: {} train / {} test scenes; constant-mean baseline MAE {:.3}",
        train.len(),
        test.len(),
        baseline.mae
    );

    let iknn = TrainConfig {
        epochs: EPOCHS,
        ..Default::default()
    };
    let mut density = iknn.clone();
    density.kind = MapKind::Density;
    density.map.beta = 0.3;
    let mut k6 = iknn.clone();
    k6.map.k = 6;
    let mut low_res = iknn.clone();
    low_res.map.label_resolution = 28;

    let mut groups = Vec::new();
    for (label, cfg) in [("iknn1", iknn), ("density", density), ("iknn6", k6), ("iknn1@28", low_res)] {
        groups.push((label.to_string(), run_group(&train, &test, &cfg)?));
    }
    Ok(Benchmark {
        baseline_mae: baseline.mae,
        groups,
    })
}

/// No increase over any 10-epoch span of the loss history.
fn settles(history: &[EpochLoss]) -> bool {
    history.windows(11).all(|w| w[10].total <= w[0].total)
}

fn criterion_6(b: &Benchmark) -> Outcome {
    let runs = b.group("iknn1");
    let beats = runs.iter().filter(|r| r.mae < b.baseline_mae).count();
    let slowest = runs.iter().map(|r| r.train_time).max().unwrap_or_default();
    let settled = runs.iter().filter(|r| settles(&r.history)).count();
    let maes: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.mae)).collect();
    Ok(Verdict::new(
        beats == runs.len() && within(slowest, 30 * 60),
        format!(
            "MUD-i1NN MAE [{}] vs baseline {:.3}: {beats}/{} below; slowest run {slowest:.0?}; \
             loss non-increasing over 10-epoch spans in {settled}/{} seeds",
            maes.join(", "),
            b.baseline_mae,
            runs.len(),
            runs.len()
        ),
    ))
}

fn criterion_7(b: &Benchmark) -> Outcome {
    let (i1, dens, i6) = (b.median_mae("iknn1"), b.median_mae("density"), b.median_mae("iknn6"));
    Ok(Verdict::new(
        i1 <= dens && i1 <= i6,
        format!("median MAE: ikNN k=1 {i1:.3}, density beta=0.3 {dens:.3}, ikNN k=6 {i6:.3}"),
    ))
}

fn criterion_8(b: &Benchmark) -> Outcome {
    let (full, low) = (b.median_mae("iknn1"), b.median_mae("iknn1@28"));
    Ok(Verdict::new(
        full <= low,
        format!("median MAE: 224x224 labels {full:.3}, 28x28 labels {low:.3}"),
    ))
}

struct Constant;

impl PatchPredictor for Constant {
    fn patch_size(&self) -> usize {
        224
    }

    fn predict_patch(&self, _: &Tensor<f32>) -> Result<(Vec<f64>, f64), TrainError> {
        Ok((vec![0.25; 224 * 224], 4.0))
    }
}

fn criterion_9() -> Outcome {
    let image = Tensor::full(&[3, 352, 352], 0.3f32);
    let pred = predict_image(&Constant, &image, DEFAULT_STEP)?;
    let expected = 4.0 * (352.0f64 / 224.0).powi(2);
    let map_ok = pred.map.iter().all(|&v| (v - 0.25).abs() < 1e-12);
    let count_ok = (pred.count - expected).abs() < 1e-6;
    let xs: Vec<usize> = sliding_window_positions(300, 224, 224, DEFAULT_STEP)?.iter().map(|p| p.0).collect();
    Ok(Verdict::new(
        map_ok && count_ok && xs == [0, 76],
        format!(
            "352x352 count {:.9} vs {expected:.9}, constant map {map_ok}; 300-wide offsets {xs:?}",
            pred.count
        ),
    ))
}

fn criterion_10() -> Outcome {
    let r = compute_metrics(&[(8.0, 10.0)])?;
    let fixture = r.mae == 2.0 && r.nae == Some(0.25) && r.rmse == 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ordered = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0..200) as f64, rng.random_range(-50.0..250.0)))
            .collect();
        let m = compute_metrics(&pairs)?;
        ordered &= m.mae <= m.rmse * (1.0 + 1e-12);
    }
    Ok(Verdict::new(
        fixture && ordered,
        format!(
            "[(8,10)] -> MAE {} NAE {:?} RMSE {}; MAE <= RMSE on 1000 random reports: {ordered}",
            r.mae, r.nae, r.rmse
        ),
    ))
}

fn report(id: u8, title: &str, soft: bool, outcome: Outcome) -> bool {
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    let note = if soft && !pass { " (trend report, not gating)" } else { "" };
    println!("criterion {id:>2} [{tag}] {title}{note}: {detail}");
    pass || soft
}

fn main() -> ExitCode {
    // cargo passes harness flags such as `--nocapture`; there is nothing to
    // filter on, so they are ignored.
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let mut ok = true;
    if wanted(1) {
        ok &= report(1, "kNN oracle equivalence", false, criterion_1());
    }
    if wanted(2) {
        ok &= report(2, "label map invariants", false, criterion_2());
    }
    if wanted(3) {
        ok &= report(3, "network shapes", false, criterion_3());
    }
    if wanted(4) {
        ok &= report(4, "gradient suite", false, criterion_4());
    }
    if wanted(5) {
        ok &= report(5, "loss algebra", false, criterion_5());
    }
    if wanted(6) || wanted(7) || wanted(8) {
        println!("training {} runs of {EPOCHS} epochs on the synthetic benchmark ...", 4 * SEEDS.len());
        match benchmark() {
            Ok(b) => {
                if wanted(6) {
                    ok &= report(6, "desk-scale end-to-end", false, criterion_6(&b));
                }
                if wanted(7) {
                    ok &= report(7, "labeling trend", true, criterion_7(&b));
                }
                if wanted(8) {
                    ok &= report(8, "resolution trend", true, criterion_8(&b));
                }
            }
            Err(e) => {
                for (id, title, soft) in [
                    (6, "desk-scale end-to-end", false),
                    (7, "labeling trend", true),
                    (8, "resolution trend", true),
                ] {
                    if wanted(id) {
                        ok &= report(id, title, soft, Err(e.to_string().into()));
                    }
                }
            }
        }
    }
    if wanted(9) {
        ok &= report(9, "sliding-window correctness", false, criterion_9());
    }
    if wanted(10) {
        ok &= report(10, "metrics", false, criterion_10());
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
