//! Deterministic CSV renderings of experiment results.
//!
//! Floats use Rust's shortest round-trip formatting, so identical results
//! always produce identical bytes.

use std::path::Path;

use crate::coverage::CoverageCurve;
use crate::data::archive::write_atomic;
use crate::error::{Error, Result};
use crate::eval::{GroupDeviation, InterTarget, MetricsSummary, SplitOutcome};
use crate::subjective::{BudgetPlan, SosFit};

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Validation(format!("cannot render CSV: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Validation(format!("cannot render CSV: {e}")))
}

/// Writes `bytes` to `path` atomically.
pub fn write_report(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_atomic(path.as_ref(), bytes)
}

fn f(v: f64) -> String {
    v.to_string()
}

/// `metric,mean,std` for SRCC, PLCC and both RMSE scales.
pub fn summary_csv(summary: &MetricsSummary) -> Result<Vec<u8>> {
    let rows = [
        ("srcc", summary.srcc),
        ("plcc", summary.plcc),
        ("rmse", summary.rmse),
        ("rmse_normalized", summary.rmse_normalized),
    ];
    csv_bytes(
        &["metric", "mean", "std"],
        rows.iter().map(|(m, s)| vec![m.to_string(), f(s.mean), f(s.std)]),
    )
}

pub fn splits_csv(splits: &[SplitOutcome]) -> Result<Vec<u8>> {
    csv_bytes(
        &["split", "srcc", "plcc", "rmse", "rmse_normalized", "best_epoch", "epochs_run"],
        splits.iter().map(|s| {
            vec![
                s.split.to_string(),
                f(s.metrics.srcc),
                f(s.metrics.plcc),
                f(s.metrics.rmse),
                f(s.metrics.rmse_normalized),
                s.best_epoch.to_string(),
                s.epochs_run.to_string(),
            ]
        }),
    )
}

/// `video_id,predicted,mos` rows.
pub fn predictions_csv<'a>(rows: impl IntoIterator<Item = (&'a str, f64, f64)>) -> Result<Vec<u8>> {
    csv_bytes(
        &["video_id", "predicted", "mos"],
        rows.into_iter().map(|(id, p, m)| vec![id.to_string(), f(p), f(m)]),
    )
}

/// `target,metric,mean,std` for the cross-dataset protocol.
pub fn inter_csv(targets: &[InterTarget]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for t in targets {
        for (m, s) in [
            ("srcc", t.summary.srcc),
            ("plcc", t.summary.plcc),
            ("rmse", t.summary.rmse),
            ("rmse_normalized", t.summary.rmse_normalized),
        ] {
            rows.push(vec![t.name.clone(), m.to_string(), f(s.mean), f(s.std)]);
        }
    }
    csv_bytes(&["target", "metric", "mean", "std"], rows)
}

/// Long format `covered,covering,s,ratio`.
pub fn coverage_csv(curves: &[CoverageCurve]) -> Result<Vec<u8>> {
    let rows = curves.iter().flat_map(|c| {
        c.thresholds
            .iter()
            .zip(&c.ratios)
            .map(move |(&s, &r)| vec![c.covered_name.clone(), c.covering_name.clone(), f(s), f(r)])
    });
    csv_bytes(&["covered", "covering", "s", "ratio"], rows)
}

/// One row per curve: `covered,covering,n,median_distance,max_distance`.
pub fn coverage_summary_csv(curves: &[CoverageCurve]) -> Result<Vec<u8>> {
    csv_bytes(
        &["covered", "covering", "n", "median_distance", "max_distance"],
        curves.iter().map(|c| {
            vec![
                c.covered_name.clone(),
                c.covering_name.clone(),
                c.n_covered.to_string(),
                f(c.median_distance),
                f(c.max_distance),
            ]
        }),
    )
}

/// `a,residual_rms,n_videos` for an SOS fit.
pub fn sos_fit_csv(fit: &SosFit) -> Result<Vec<u8>> {
    csv_bytes(
        &["a", "residual_rms", "n_videos"],
        [vec![f(fit.a), f(fit.residual_rms), fit.n_videos.to_string()]],
    )
}

/// `video_id,mos,sos,fitted_sos` per video.
pub fn sos_points_csv<'a>(points: impl IntoIterator<Item = (&'a str, f64, f64)>, fit: &SosFit) -> Result<Vec<u8>> {
    csv_bytes(
        &["video_id", "mos", "sos", "fitted_sos"],
        points
            .into_iter()
            .map(|(id, mos, sos)| vec![id.to_string(), f(mos), f(sos), f(fit.sos(mos))]),
    )
}

pub fn budget_csv(plans: &[BudgetPlan]) -> Result<Vec<u8>> {
    csv_bytes(
        &["label", "budget", "precision", "n_videos", "unspent"],
        plans.iter().map(|p| {
            vec![
                p.label(),
                p.budget.to_string(),
                p.precision.to_string(),
                p.n_videos.to_string(),
                p.unspent().to_string(),
            ]
        }),
    )
}

/// `train_votes,srcc` from the label-only view of a noise grid.
pub fn label_agreement_csv(rows: &[(usize, f64)]) -> Result<Vec<u8>> {
    csv_bytes(
        &["train_votes", "srcc"],
        rows.iter().map(|&(v, s)| vec![v.to_string(), f(s)]),
    )
}

/// `train_votes,val_votes,srcc_mean,srcc_std,n` for trained grid cells.
pub fn noise_cells_csv(cells: &[crate::eval::NoiseCell]) -> Result<Vec<u8>> {
    csv_bytes(
        &["train_votes", "val_votes", "srcc_mean", "srcc_std", "n"],
        cells.iter().map(|c| {
            vec![
                c.train_votes.to_string(),
                c.val_votes.to_string(),
                f(c.srcc.mean),
                f(c.srcc.std),
                c.srcc.n.to_string(),
            ]
        }),
    )
}

/// `epoch,train_loss,val_loss` per completed epoch.
pub fn history_csv(history: &[crate::nn::EpochRecord]) -> Result<Vec<u8>> {
    csv_bytes(
        &["epoch", "train_loss", "val_loss"],
        history
            .iter()
            .map(|r| vec![r.epoch.to_string(), f(r.train_loss), f(r.val_loss)]),
    )
}

pub fn group_deviation_csv(groups: &[GroupDeviation]) -> Result<Vec<u8>> {
    csv_bytes(
        &["group", "count", "rmse", "deviation_pct"],
        groups
            .iter()
            .map(|g| vec![g.group.clone(), g.count.to_string(), f(g.rmse), f(g.deviation_pct)]),
    )
}
