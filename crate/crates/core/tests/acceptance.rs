//! Acceptance suite: one PASS/FAIL line per criterion. Runs without a test
//! harness so the lines always print; exits nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mlspvqa::coverage::{
    coverage_curve, coverage_ratio, one_sided_distance, point_to_set_distance, Aggregator, PointSet,
};
use mlspvqa::data::Block;
use mlspvqa::eval::{
    plcc, predict_items, rmse, run_intra, srcc, train_head, HeadInputs, LabeledSet, SplitSpec, TrainConfig,
    DEFAULT_MEMORY_LIMIT,
};
use mlspvqa::features::{extract_frame_mlsp, gap, BackboneSpec, StubBackbone};
use mlspvqa::nn::{HeadConfig, HeadKind};
use mlspvqa::seed::{derive_rng, Rng};
use mlspvqa::subjective::{
    budget_plans, fit_sos_points, label_agreement, noise_robustness_grid, simulate_raters, sos_regressor, RaterModel,
    NOISE_VOTE_COUNTS,
};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use common::{ids, synthetic, worst_gradient_error};

const GAP_TOL: f64 = 1e-6;
const GAP_BUDGET: Duration = Duration::from_secs(5);
const COVERAGE_BUDGET: Duration = Duration::from_secs(10);
const SOS_PLANTED_A: f64 = 0.15;
const SOS_NOISE: f64 = 0.005;
const SOS_TOL: f64 = 0.01;
const METRIC_TOL: f64 = 1e-12;
const OVERFIT_RMSE: f64 = 0.05;
const GRAD_TOL: f64 = 1e-3;
const TRAINING_BUDGET: Duration = Duration::from_secs(180);
const PLANTED_SRCC: f64 = 0.99;
const INVERSION_TOL: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// GAP: nested-loop per-channel mean of an H x W x C map.
fn gap_oracle(map: &Array3<f32>) -> Vec<f64> {
    let (h, w, c) = map.dim();
    (0..c)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += map[[i, j, k]] as f64;
                }
            }
            s / (h * w) as f64
        })
        .collect()
}

fn gap_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = derive_rng(1, "accept-gap", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (h, w, c) = (rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=16));
        let map = Array3::from_shape_fn((h, w, c), |_| rng.random_range(-10.0f32..10.0));
        let got = gap(map.view()).map_err(err)?;
        for (g, o) in got.iter().zip(gap_oracle(&map)) {
            worst = worst.max((*g as f64 - o).abs());
        }
        let v = rng.random_range(-3.0f32..3.0);
        let constant = gap(Array3::from_elem((h, w, c), v).view()).map_err(err)?;
        if constant.iter().any(|&x| x != v) {
            return Err(format!("constant map {v} pooled to {constant:?}"));
        }
    }
    let took = start.elapsed();
    check(
        worst <= GAP_TOL && took < GAP_BUDGET,
        format!("200 maps, max |gap - oracle| = {worst:.1e} (tol {GAP_TOL:.0e}), constant maps exact, {took:.2?}"),
    )
}

fn mlsp_dimension_criterion() -> Outcome {
    let reference = BackboneSpec::reference();
    let (d, blocks) = (reference.feature_dim(), reference.blocks.len());
    if (d, blocks, reference.content_dim()) != (16_928, 43, Some(1792)) {
        return Err(format!("reference descriptor gives D = {d}, {blocks} blocks, content {:?}", reference.content_dim()));
    }
    let mut rng = derive_rng(2, "accept-stub", 0);
    for trial in 0..50 {
        let n = rng.random_range(1..=12);
        let layout: Vec<Block> = (0..n)
            .map(|i| Block::new(format!("b{i}"), rng.random_range(1..=40)))
            .collect();
        let declared: usize = layout.iter().map(|b| b.channels).sum();
        let spec = BackboneSpec::new(layout).map_err(err)?;
        let mut stub = StubBackbone::projection(spec, trial);
        let frame = Array3::from_shape_fn((9, 16, 3), |_| rng.random::<u8>());
        let v = extract_frame_mlsp(frame.view(), &mut stub).map_err(err)?;
        if v.len() != declared {
            return Err(format!("stub with {n} blocks: length {} != declared {declared}", v.len()));
        }
    }
    Ok("reference: D = 16928 over 43 blocks, content 1792; 50 stub layouts give D = sum of channels".into())
}

// Coverage: brute-force O(nm) distances in the same summation order.
fn dist_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        s += (a - b) * (a - b);
    }
    s.sqrt()
}

fn nearest_oracle(x: &[f64], ys: &Array2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for y in ys.rows() {
        best = best.min(dist_oracle(x, y.as_slice().unwrap()));
    }
    best
}

fn random_points(rng: &mut Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn coverage_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = derive_rng(3, "accept-coverage", 0);
    for pair in 0..100 {
        let d = rng.random_range(1..=8);
        let (nx, ny) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let (xs, ys) = (random_points(&mut rng, nx, d), random_points(&mut rng, ny, d));
        let x = PointSet::new("x", xs.clone()).map_err(err)?;
        let y = PointSet::new("y", ys.clone()).map_err(err)?;

        let dists: Vec<f64> = xs.rows().into_iter().map(|r| nearest_oracle(r.as_slice().unwrap(), &ys)).collect();
        for (r, &o) in xs.rows().into_iter().zip(&dists) {
            if point_to_set_distance(r.as_slice().unwrap(), &y).map_err(err)? != o {
                return Err(format!("pair {pair}: point-to-set distance differs from the oracle"));
            }
        }
        let mut sorted = dists.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if nx % 2 == 1 {
            sorted[nx / 2]
        } else {
            (sorted[nx / 2 - 1] + sorted[nx / 2]) / 2.0
        };
        let mean = dists.iter().sum::<f64>() / nx as f64;
        let max = sorted[nx - 1];
        for (agg, want) in [(Aggregator::Median, median), (Aggregator::Mean, mean), (Aggregator::Max, max)] {
            if one_sided_distance(&x, &y, agg).map_err(err)? != want {
                return Err(format!("pair {pair}: {agg:?} one-sided distance differs"));
            }
        }
        let mut thresholds = vec![0.0, median, max, rng.random_range(0.0..2.0)];
        thresholds.push(dists[rng.random_range(0..nx)]);
        for s in thresholds {
            let want = dists.iter().filter(|&&v| v <= s).count() as f64 / nx as f64;
            if coverage_ratio(&x, &y, s).map_err(err)? != want {
                return Err(format!("pair {pair}: coverage ratio at s = {s} differs"));
            }
        }

        // X subset of Y: every point of X sits at distance 0
        let n_extra = rng.random_range(0..=20);
        let extra = random_points(&mut rng, n_extra, d);
        let mut rows: Vec<Vec<f64>> = xs.rows().into_iter().chain(extra.rows()).map(|r| r.to_vec()).collect();
        rows.shuffle(&mut rng);
        let flat: Vec<f64> = rows.concat();
        let sup = PointSet::new("sup", Array2::from_shape_vec((rows.len(), d), flat).unwrap()).map_err(err)?;
        if coverage_ratio(&x, &sup, 0.0).map_err(err)? != 1.0 {
            return Err(format!("pair {pair}: C(X, 0) != 1 for a superset"));
        }
    }
    let took = start.elapsed();
    check(
        took < COVERAGE_BUDGET,
        format!("100 pairs exact against brute force, C(X,0) = 1 for supersets, {took:.2?}"),
    )
}

fn curve_property_criterion() -> Outcome {
    let strategy = (1usize..=6, 1usize..=30, 1usize..=30, any::<u64>());
    let mut runner = TestRunner::new(Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(d, nx, ny, seed)| {
            let mut rng = derive_rng(seed, "accept-curve", 0);
            let x = PointSet::new("x", random_points(&mut rng, nx, d)).unwrap();
            let y = PointSet::new("y", random_points(&mut rng, ny, d)).unwrap();
            let curve = coverage_curve(&x, &y, None).unwrap();
            prop_assert!(curve.ratios.windows(2).all(|w| w[0] <= w[1]), "ratios not monotone");
            prop_assert_eq!(*curve.thresholds.last().unwrap(), curve.max_distance);
            prop_assert_eq!(*curve.ratios.last().unwrap(), 1.0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("128 random set pairs: curves nondecreasing, ratio 1 at s = max distance".into())
}

fn sos_criterion() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = derive_rng(seed, "accept-sos", 0);
        let noise = Normal::new(0.0, SOS_NOISE).unwrap();
        let points: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let mos = rng.random_range(1.0..5.0);
                let sos = (SOS_PLANTED_A * sos_regressor(mos)).sqrt() + noise.sample(&mut rng);
                (mos, sos * sos)
            })
            .collect();
        let fit = fit_sos_points(&points).map_err(err)?;
        worst = worst.max((fit.a - SOS_PLANTED_A).abs());
    }
    check(
        worst <= SOS_TOL,
        format!("planted a = {SOS_PLANTED_A}, 20 seeds, max |a - planted| = {worst:.2e} (tol {SOS_TOL})"),
    )
}

// Metrics: definitional forms with O(n^2) average ranks.
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn random_vector(rng: &mut Rng, n: usize, tied: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| if tied { rng.random_range(1..=4) as f64 } else { rng.random_range(-5.0..5.0) })
            .collect();
        if v.iter().any(|&x| x != v[0]) {
            return v;
        }
    }
}

fn metrics_criterion() -> Outcome {
    let mut rng = derive_rng(6, "accept-metrics", 0);
    let mut worst: f64 = 0.0;
    let mut tied_pairs = 0;
    for i in 0..1000 {
        let n = rng.random_range(3..=60);
        let tied = i % 2 == 0;
        tied_pairs += tied as usize;
        let (a, b) = (random_vector(&mut rng, n, tied), random_vector(&mut rng, n, tied));
        let want_srcc = pearson_oracle(&ranks_oracle(&a), &ranks_oracle(&b));
        let want_rmse = (a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt();
        for (got, want) in [
            (srcc(&a, &b).map_err(err)?, want_srcc),
            (plcc(&a, &b).map_err(err)?, pearson_oracle(&a, &b)),
            (rmse(&a, &b).map_err(err)?, want_rmse),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    check(
        worst <= METRIC_TOL,
        format!("1000 pairs ({tied_pairs} with ties), max deviation {worst:.1e} (tol {METRIC_TOL:.0e})"),
    )
}

fn budget_criterion() -> Outcome {
    let plans = budget_plans(100_000, &[100, 5, 1]).map_err(err)?;
    let videos: Vec<usize> = plans.iter().map(|p| p.n_videos).collect();
    if videos != [1000, 20_000, 100_000] {
        return Err(format!("budget 100000 gives {videos:?}"));
    }
    let expected = [
        (100_000, ["1000@100", "20000@5", "100000@1"]),
        (25_000, ["250@100", "5000@5", "25000@1"]),
        (10_000, ["100@100", "2000@5", "10000@1"]),
        (2_500, ["25@100", "500@5", "2500@1"]),
        (1_000, ["10@100", "200@5", "1000@1"]),
    ];
    for (budget, labels) in expected {
        let got: Vec<String> = budget_plans(budget, &[100, 5, 1]).map_err(err)?.iter().map(|p| p.label()).collect();
        if got != labels {
            return Err(format!("budget {budget}: labels {got:?}"));
        }
    }
    Ok("100000 -> 1000/20000/100000 videos; all 15 budget-table labels reproduced".into())
}

fn training_criterion() -> Outcome {
    let start = Instant::now();
    let toy_ff = |dim: usize| {
        let mut c = HeadConfig::new(HeadKind::Ff, dim);
        c.ff_widths = vec![64, 32, 16];
        c.dropout = 0.0;
        c
    };

    // (a) overfit 32 random items
    let (m, f) = synthetic("overfit", 32, 64, 2, 1, |_, rng| 1.0 + 4.0 * rng.random::<f64>());
    let config = toy_ff(64);
    let inputs = HeadInputs::prepare(&config, &f, ids(&m), DEFAULT_MEMORY_LIMIT).map_err(err)?;
    let all: Vec<usize> = (0..32).collect();
    let set = LabeledSet::new(&inputs, all.clone(), &m.mos(), &m.scale).map_err(err)?;
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let trained = train_head(&config, &tc, m.scale, &set, &set).map_err(err)?;
    let pred = predict_items(&trained.head, &inputs, &all).map_err(err)?;
    let overfit = rmse(&pred, &set.targets).map_err(err)?;
    if overfit >= OVERFIT_RMSE {
        return Err(format!("(a) train RMSE {overfit:.4} >= {OVERFIT_RMSE}"));
    }

    // (b) a plateau no epoch can beat by min_delta stops after patience + 1 epochs
    let (m, f) = synthetic("plateau", 20, 8, 1, 2, |_, _| 3.0);
    let config = toy_ff(8);
    let inputs = HeadInputs::prepare(&config, &f, ids(&m), DEFAULT_MEMORY_LIMIT).map_err(err)?;
    let set = LabeledSet::new(&inputs, (0..20).collect(), &m.mos(), &m.scale).map_err(err)?;
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        min_delta: 10.0,
        ..TrainConfig::default()
    };
    let plateau = train_head(&config, &tc, m.scale, &set, &set).map_err(err)?;
    if plateau.best_epoch != 0 || plateau.history.len() > tc.patience + 1 {
        return Err(format!(
            "(b) plateau ran {} epochs, best epoch {}",
            plateau.history.len(),
            plateau.best_epoch
        ));
    }

    // (c) restored weights reproduce the best recorded validation loss
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        max_epochs: 60,
        patience: 5,
        ..TrainConfig::default()
    };
    let run = train_head(&config, &tc, m.scale, &set, &set).map_err(err)?;
    let best = run.history[run.best_epoch].val_loss;
    if run.history.iter().any(|r| r.val_loss < best) {
        return Err("(c) recorded best epoch is not the minimum".into());
    }
    let restored = predict_items(&run.head, &inputs, &set.items).map_err(err)?;
    let loss = restored.iter().zip(&set.targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 20.0;
    if (loss - best).abs() > 1e-12 {
        return Err(format!("(c) restored loss {loss} vs best {best}"));
    }

    // (d) finite differences for every head kind
    let mut grads = Vec::new();
    for kind in HeadKind::ALL {
        let worst = worst_gradient_error(kind);
        if worst >= GRAD_TOL {
            return Err(format!("(d) {kind} relative gradient error {worst:.2e}"));
        }
        grads.push(format!("{kind} {worst:.1e}"));
    }
    let took = start.elapsed();
    check(
        took < TRAINING_BUDGET,
        format!(
            "(a) RMSE {overfit:.4}; (b) stopped after {} epochs; (c) restore exact; (d) {}; {took:.2?}",
            plateau.history.len(),
            grads.join(", ")
        ),
    )
}

fn planted_criterion() -> Outcome {
    let (m, f) = synthetic("planted", 500, 16, 3, 5, |row, _| 1.0 + 4.0 * row[0] as f64);
    let mut config = HeadConfig::new(HeadKind::Ff, 16);
    config.ff_widths = vec![64, 32, 16];
    let inputs = HeadInputs::prepare(&config, &f, ids(&m), DEFAULT_MEMORY_LIMIT).map_err(err)?;
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    };
    let result = run_intra(&m, &inputs, &tc, &SplitSpec::default().with_splits(5, 11)).map_err(err)?;
    let s = result.summary.srcc;
    check(
        s.n == 5 && s.mean > PLANTED_SRCC,
        format!("500 videos, MOS linear in one coordinate: test SRCC {s} over {} splits (need > {PLANTED_SRCC})", s.n),
    )
}

fn noise_trend_criterion() -> Outcome {
    let counts = NOISE_VOTE_COUNTS;
    let mut mean = vec![0.0; counts.len()];
    for seed in 0..20 {
        let model = RaterModel::uniform(200, 1.0, 5.0, 1.0, seed).map_err(err)?;
        let votes = simulate_raters(&model, 100).map_err(err)?;
        let grid = noise_robustness_grid(&votes, &counts, &[1], 1, 50, seed).map_err(err)?;
        let agreement = label_agreement(&grid).map_err(err)?;
        if agreement.len() != counts.len() {
            return Err(format!("seed {seed}: only {} vote counts fit", agreement.len()));
        }
        for (m, (_, s)) in mean.iter_mut().zip(agreement) {
            *m += s / 20.0;
        }
    }
    let drops: Vec<f64> = mean.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let ok = drops.is_empty() || (drops.len() == 1 && drops[0] < INVERSION_TOL);
    let curve: Vec<String> = counts.iter().zip(&mean).map(|(v, s)| format!("{v}:{s:.3}")).collect();
    check(ok, format!("mean SRCC vs 50-vote MOS over 20 seeds [{}], {} inversions", curve.join(" "), drops.len()))
}

fn full_scale_statement() -> Outcome {
    let runbook = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/full-scale.md");
    let text = std::fs::read_to_string(&runbook).map_err(|e| format!("{}: {e}", runbook.display()))?;
    let missing: Vec<&str> = ["0.82", "0.83", "2.3", "konvid1k", "qualcomm", "cvd2014", "vqc", "proposed"]
        .into_iter()
        .filter(|k| !text.contains(k))
        .collect();
    check(
        missing.is_empty(),
        if missing.is_empty() {
            "NOT desk-reproducible: headline SRCC 0.82 (intra) / 0.83 (cross), budget and SOS tables and the coverage \
             median need the released datasets, backbone weights and GPU-scale training; targets and presets are in \
             docs/full-scale.md and are not asserted here"
                .into()
        } else {
            format!("runbook lacks {missing:?}")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gap oracle", gap_criterion),
        ("mlsp dimension", mlsp_dimension_criterion),
        ("coverage oracle", coverage_criterion),
        ("coverage curve shape", curve_property_criterion),
        ("sos recovery", sos_criterion),
        ("metric oracles", metrics_criterion),
        ("budget arithmetic", budget_criterion),
        ("training behaviour", training_criterion),
        ("planted intra protocol", planted_criterion),
        ("noise robustness trend", noise_trend_criterion),
        ("full-scale numbers", full_scale_statement),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
