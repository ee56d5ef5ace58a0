use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use mlspvqa::coverage::{one_vs_all, threshold_grid, CoverageCurve, PointSet, DEFAULT_GRID};
use mlspvqa::data::{
    archive_path, load_manifest, load_votes, read_feature_archive, write_feature_archive, DatasetManifest,
    RatingScale, VideoRecord,
};
use mlspvqa::eval::{
    group_rmse_deviation, predict_items, run_inter, run_intra, run_noise_grid, train_head, FeatureDir, HeadInputs,
    LabeledSet, MetricsSummary, Prepared, SplitMetrics, SplitSpec, TrainConfig, DEFAULT_MEMORY_LIMIT,
};
use mlspvqa::features::{collect_frames, decode_frames, extract_video, Backbone, BackboneSpec, StubBackbone};
use mlspvqa::nn::{load_head, save_head, HeadConfig};
use mlspvqa::subjective::{budget_plans, fit_sos, label_agreement, noise_robustness_grid, vote_variance};
use mlspvqa::{preprocess, report, seed, Error};

use crate::lock::OutputLock;
use crate::{
    BudgetArgs, CoverageArgs, CrossArgs, EvalArgs, ExtractArgs, HeadArgs, IntraArgs, NoiseGridArgs, PreprocessArgs,
    SosFitArgs, TrainArgs,
};
use crate::plots;

fn invalid(message: impl Into<String>) -> anyhow::Error {
    Error::Validation(message.into()).into()
}

fn emit(dir: &Path, name: &str, bytes: mlspvqa::Result<Vec<u8>>) -> Result<PathBuf> {
    let path = dir.join(name);
    report::write_report(&path, &bytes?)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn ids(m: &DatasetManifest) -> Vec<String> {
    m.records().iter().map(|r| r.video_id.clone()).collect()
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Feature width of the cached archives, read from the first video.
fn feature_dim(dir: &Path, video_id: &str) -> Result<usize> {
    let path = archive_path(dir, video_id);
    let archive = read_feature_archive(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(archive.dim())
}

impl HeadArgs {
    fn configs(&self, input_dim: usize) -> Result<(HeadConfig, TrainConfig)> {
        let mut hc = self.preset.head_config(self.head, input_dim);
        if let Some(t) = self.sequence_length {
            hc = hc.with_sequence_length(t);
        }
        hc.validate()?;
        let mut tc = self.preset.train_config(self.head, self.seed);
        if let Some(lr) = self.learning_rate {
            tc.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            tc.batch_size = b;
        }
        tc.max_epochs = self.max_epochs;
        tc.patience = self.patience;
        tc.validate()?;
        Ok((hc, tc))
    }

    fn memory_limit(&self) -> usize {
        self.memory_limit_mib.saturating_mul(1 << 20)
    }
}

fn print_summary(title: &str, s: &MetricsSummary) {
    println!("{title}");
    for (name, v) in [("SRCC", s.srcc), ("PLCC", s.plcc), ("RMSE", s.rmse), ("RMSE (0-1 scale)", s.rmse_normalized)] {
        println!("  {name:<17} {v}");
    }
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let _lock = OutputLock::acquire(&a.out.out)?;
    for input in &a.inputs {
        let stem = input
            .file_stem()
            .ok_or_else(|| invalid(format!("{} has no file name", input.display())))?;
        let output = a.out.out.join(stem).with_extension("mp4");
        let plan = preprocess::preprocess_video(input, &output)
            .with_context(|| format!("preprocessing {}", input.display()))?;
        println!(
            "{} -> {} (from {:.3} s{})",
            input.display(),
            output.display(),
            plan.start,
            if plan.rescale { ", rescaled" } else { "" }
        );
    }
    Ok(())
}

#[cfg(feature = "onnx")]
fn network_backbone(spec: &BackboneSpec) -> mlspvqa::Result<Box<dyn Backbone>> {
    Ok(Box::new(mlspvqa::features::onnx::OnnxBackbone::load(spec.clone())?))
}

#[cfg(not(feature = "onnx"))]
fn network_backbone(_spec: &BackboneSpec) -> mlspvqa::Result<Box<dyn Backbone>> {
    Err(Error::Backbone(
        "this build has no network runtime; rebuild with --features onnx or pass --stub-seed".into(),
    ))
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let spec = BackboneSpec::load(&a.backbone)?;
    if a.content && spec.content.is_none() {
        return Err(invalid(format!("{} declares no content output", a.backbone.display())));
    }
    let base = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let make = || -> mlspvqa::Result<Box<dyn Backbone>> {
        match a.stub_seed {
            Some(s) => Ok(Box::new(StubBackbone::projection(spec.clone(), s))),
            None => network_backbone(&spec),
        }
    };
    make()?;
    let _lock = OutputLock::acquire(&a.out)?;

    let results: Vec<Result<Option<Vec<f32>>>> = m
        .records()
        .par_iter()
        .map_init(
            || make().ok(),
            |backbone, rec| {
                let backbone = backbone
                    .as_mut()
                    .ok_or_else(|| Error::Backbone("backbone failed to load on a worker".into()))?;
                let target = archive_path(&a.out, &rec.video_id);
                if a.skip_existing && !a.content && target.exists() {
                    return Ok(None);
                }
                let media = rec
                    .media_path
                    .as_ref()
                    .ok_or_else(|| invalid(format!("video {} has no media_path", rec.video_id)))?;
                let media = if media.is_relative() { base.join(media) } else { media.clone() };
                let frames = collect_frames(decode_frames(&media)?)
                    .with_context(|| format!("decoding {}", media.display()))?;
                let video = extract_video(&rec.video_id, &frames, &a.sampling, backbone.as_mut(), a.content)?;
                write_feature_archive(&video.archive, &target)?;
                log::info!("{}: {} x {}", rec.video_id, video.archive.frames(), video.archive.dim());
                Ok(video.content.map(|c| c.to_vec()))
            },
        )
        .collect();
    let mut content = Vec::new();
    for (rec, r) in m.records().iter().zip(results) {
        let c = r.with_context(|| format!("extracting {}", rec.video_id))?;
        content.extend(c);
    }
    println!("extracted {} videos into {}", m.len(), a.out.display());

    if a.content {
        let width = spec.content_dim().unwrap_or(0);
        let rows = content.len();
        let flat: Vec<f64> = content.into_iter().flatten().map(f64::from).collect();
        let points = Array2::from_shape_vec((rows, width), flat).map_err(|e| invalid(e.to_string()))?;
        let set = PointSet::new(m.name.clone(), points)?;
        let path = archive_path(a.out.join("content"), &m.name);
        std::fs::create_dir_all(a.out.join("content")).map_err(|e| Error::io(a.out.join("content"), e))?;
        set.save(&path)?;
        println!("content vectors: {}", path.display());
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    if !(a.val_fraction > 0.0 && a.val_fraction < 1.0) {
        return Err(invalid(format!("--val-fraction must lie in (0, 1), got {}", a.val_fraction)));
    }
    let n = m.len();
    let n_val = (n as f64 * a.val_fraction).floor() as usize;
    if n_val == 0 || n_val == n {
        return Err(invalid(format!("{n} videos cannot be split with validation fraction {}", a.val_fraction)));
    }
    let dir = &a.features.features_dir;
    let (hc, tc) = a.head.configs(feature_dim(dir, &m.records()[0].video_id)?)?;
    let source = FeatureDir::new(dir.clone());
    let inputs = HeadInputs::prepare(&hc, &source, ids(&m), a.head.memory_limit())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derive_rng(a.head.seed, "train-val", 0));
    let (val, tr) = order.split_at(n_val);
    let (mut val, mut tr) = (val.to_vec(), tr.to_vec());
    val.sort_unstable();
    tr.sort_unstable();
    let mos = m.mos();
    let pick = |items: &[usize]| items.iter().map(|&i| mos[i]).collect::<Vec<_>>();
    let (tr_mos, val_mos) = (pick(&tr), pick(&val));
    let train_set = LabeledSet::new(&inputs, tr, &tr_mos, &m.scale)?;
    let val_set = LabeledSet::new(&inputs, val, &val_mos, &m.scale)?;

    let _lock = OutputLock::acquire(&a.out.out)?;
    let trained = train_head(&hc, &tc, m.scale, &train_set, &val_set)?;
    let model = a.out.out.join("head.mlsph");
    save_head(&trained, &model)?;
    emit(&a.out.out, "history.csv", report::history_csv(&trained.history))?;
    let best = &trained.history[trained.best_epoch];
    println!(
        "{} head, {} parameters, {} epochs; best epoch {} with validation loss {:.6}",
        hc.kind,
        trained.head.param_count(),
        trained.history.len(),
        best.epoch,
        best.val_loss
    );
    println!("saved {}", model.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let trained = load_head(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let m = manifest(&a.manifest)?;
    let source = FeatureDir::new(a.features.features_dir.clone());
    let inputs = HeadInputs::prepare(trained.config(), &source, ids(&m), DEFAULT_MEMORY_LIMIT)?;
    let all: Vec<usize> = (0..m.len()).collect();
    let predicted: Vec<f64> = predict_items(&trained.head, &inputs, &all)?
        .into_iter()
        .map(|p| trained.scale.denormalize(p))
        .collect();
    let mos = m.mos();
    let metrics = SplitMetrics::compute(&predicted, &mos, m.scale.hi - m.scale.lo)?;
    let summary = MetricsSummary::aggregate(vec![metrics])?;

    let _lock = OutputLock::acquire(&a.out.out)?;
    let rows = m.records().iter().zip(&predicted).map(|(r, &p)| (r.video_id.as_str(), p, r.mos));
    emit(&a.out.out, "predictions.csv", report::predictions_csv(rows))?;
    emit(&a.out.out, "summary.csv", report::summary_csv(&summary))?;
    print_summary(&format!("{} ({} videos)", m.name, m.len()), &summary);
    if let Some(tag) = &a.group {
        let groups = group_rmse_deviation(&predicted, &m, tag)?;
        emit(&a.out.out, "groups.csv", report::group_deviation_csv(&groups))?;
        println!("RMSE by {tag}");
        for g in &groups {
            println!("  {:<16} n={:<5} rmse {:.4} ({:+.1}%)", g.group, g.count, g.rmse, g.deviation_pct);
        }
    }
    Ok(())
}

pub fn intra(a: IntraArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let dir = &a.features.features_dir;
    let (hc, tc) = a.head.configs(feature_dim(dir, &m.records()[0].video_id)?)?;
    let spec = SplitSpec::default().with_splits(a.splits, a.head.seed);
    spec.validate()?;
    let source = FeatureDir::new(dir.clone());
    let inputs = HeadInputs::prepare(&hc, &source, ids(&m), a.head.memory_limit())?;

    let _lock = OutputLock::acquire(&a.out.out)?;
    let result = run_intra(&m, &inputs, &tc, &spec)?;
    emit(&a.out.out, "summary.csv", report::summary_csv(&result.summary))?;
    emit(&a.out.out, "splits.csv", report::splits_csv(&result.splits))?;
    print_summary(
        &format!("{} head on {}, {} splits ({})", hc.kind, m.name, a.splits, a.head.preset),
        &result.summary,
    );
    Ok(())
}

pub fn cross(a: CrossArgs) -> Result<()> {
    let train_m = manifest(&a.manifest)?;
    let val_m = manifest(&a.val_manifest)?;
    let test_ms = a.test_manifests.iter().map(|p| manifest(p)).collect::<Result<Vec<_>>>()?;
    let dir = &a.features.features_dir;
    let (hc, tc) = a.head.configs(feature_dim(dir, &train_m.records()[0].video_id)?)?;
    let source = FeatureDir::new(dir.clone());
    let limit = a.head.memory_limit();
    let prep = |m: &DatasetManifest| HeadInputs::prepare(&hc, &source, ids(m), limit);
    let train_in = prep(&train_m)?;
    let val_in = prep(&val_m)?;
    let test_in = test_ms.iter().map(prep).collect::<mlspvqa::Result<Vec<_>>>()?;
    let tests: Vec<Prepared> = test_ms
        .iter()
        .zip(&test_in)
        .map(|(manifest, inputs)| Prepared { manifest, inputs })
        .collect();

    let _lock = OutputLock::acquire(&a.out.out)?;
    let targets = run_inter(
        &Prepared { manifest: &train_m, inputs: &train_in },
        &Prepared { manifest: &val_m, inputs: &val_in },
        a.val_fraction,
        &tests,
        &tc,
        a.repeats,
    )?;
    emit(&a.out.out, "inter.csv", report::inter_csv(&targets))?;
    println!("{} head trained on {}, {} repeats", hc.kind, train_m.name, a.repeats);
    for t in &targets {
        print_summary(&format!("target {}", t.name), &t.summary);
    }
    Ok(())
}

pub fn coverage(a: CoverageArgs) -> Result<()> {
    if a.grid < 2 {
        return Err(invalid("--grid needs at least 2 thresholds"));
    }
    let sets = a
        .sets
        .iter()
        .map(|p| PointSet::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut curves: Vec<CoverageCurve> = one_vs_all(&sets, None)?;
    if a.grid != DEFAULT_GRID {
        let max = curves.iter().map(|c| c.max_distance).fold(0.0, f64::max);
        curves = one_vs_all(&sets, Some(&threshold_grid(max, a.grid)))?;
    }

    let out = &a.out.out;
    let _lock = OutputLock::acquire(out)?;
    emit(out, "coverage.csv", report::coverage_csv(&curves))?;
    emit(out, "coverage_summary.csv", report::coverage_summary_csv(&curves))?;
    println!("{:<24} {:>8} {:>16} {:>14}", "covering set", "points", "median distance", "max distance");
    for c in &curves {
        println!("{:<24} {:>8} {:>16.6} {:>14.6}", c.covering_name, c.n_covered, c.median_distance, c.max_distance);
    }
    if a.plot {
        let path = out.join("coverage.svg");
        plots::coverage(&path, &curves)?;
        println!("plot: {}", path.display());
    }
    Ok(())
}

pub fn sos_fit(a: SosFitArgs) -> Result<()> {
    let records: Vec<VideoRecord> = match (&a.manifest, &a.votes) {
        (Some(m), None) => manifest(m)?.records().to_vec(),
        (Some(m), Some(v)) => load_votes(v)?.attach_to(&manifest(m)?)?.records().to_vec(),
        (None, Some(v)) => {
            let table = load_votes(v)?;
            table
                .video_ids()
                .iter()
                .map(|id| VideoRecord::from_votes(id.clone(), table.votes_for(id)))
                .collect::<mlspvqa::Result<_>>()?
        }
        (None, None) => return Err(invalid("pass --manifest or --votes")),
    };
    let fit = fit_sos(&records)?;
    let points: Vec<(&str, f64, f64)> = records
        .iter()
        .filter_map(|r| vote_variance(&r.votes).map(|v| (r.video_id.as_str(), r.mos, v.sqrt())))
        .collect();

    let out = &a.out.out;
    let _lock = OutputLock::acquire(out)?;
    emit(out, "sos_fit.csv", report::sos_fit_csv(&fit))?;
    emit(out, "sos_points.csv", report::sos_points_csv(points.iter().copied(), &fit))?;
    println!("a = {:.6} over {} videos (residual RMS {:.6})", fit.a, fit.n_videos, fit.residual_rms);
    if a.plot {
        let path = out.join("sos.svg");
        let xy: Vec<(f64, f64)> = points.iter().map(|&(_, m, s)| (m, s)).collect();
        plots::sos(&path, &xy, &fit)?;
        println!("plot: {}", path.display());
    }
    Ok(())
}

pub fn budget_plan(a: BudgetArgs) -> Result<()> {
    let plans = budget_plans(a.budget, &a.precisions)?;
    if let Some(out) = &a.out {
        let _lock = OutputLock::acquire(out)?;
        emit(out, "budget.csv", report::budget_csv(&plans))?;
    }
    println!("{:<12} {:>10} {:>10} {:>8}", "plan", "precision", "videos", "unspent");
    for p in &plans {
        println!("{:<12} {:>10} {:>10} {:>8}", p.label(), p.precision, p.n_videos, p.unspent());
    }
    Ok(())
}

pub fn noise_grid(a: NoiseGridArgs) -> Result<()> {
    let table = load_votes(&a.votes).with_context(|| format!("loading {}", a.votes.display()))?;
    let grid = noise_robustness_grid(&table, &a.train_v, &a.val_v, a.repeats, a.test_votes, a.head.seed)?;
    let agreement = label_agreement(&grid)?;

    let cells = match &a.features_dir {
        Some(dir) => {
            let (hc, tc) = a.head.configs(feature_dim(dir, &grid.video_ids[0])?)?;
            let source = FeatureDir::new(dir.clone());
            let inputs = HeadInputs::prepare(&hc, &source, grid.video_ids.clone(), a.head.memory_limit())?;
            let spec = SplitSpec::default().with_splits(a.repeats, a.head.seed);
            Some(run_noise_grid(&grid, &inputs, RatingScale::ACR, &tc, &spec)?)
        }
        None => None,
    };

    let out = &a.out.out;
    let _lock = OutputLock::acquire(out)?;
    emit(out, "label_agreement.csv", report::label_agreement_csv(&agreement))?;
    for (tv, vv) in &grid.skipped {
        println!("skipped train={tv} val={vv}: not enough votes");
    }
    println!("training MOS vs {}-vote test MOS ({} repeats)", grid.test_votes, a.repeats);
    for (v, s) in &agreement {
        println!("  v={v:<4} SRCC {s:.4}");
    }
    if let Some(cells) = &cells {
        emit(out, "noise_grid.csv", report::noise_cells_csv(cells))?;
        println!("head predictions vs test MOS");
        for c in cells {
            println!("  train={:<4} val={:<4} SRCC {}", c.train_votes, c.val_votes, c.srcc);
        }
    }
    if a.plot {
        let path = out.join("noise_grid.svg");
        plots::noise_grid(&path, &agreement, cells.as_deref().unwrap_or(&[]))?;
        println!("plot: {}", path.display());
    }
    Ok(())
}
