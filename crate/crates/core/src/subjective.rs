//! Subjective-score statistics: vote subsampling, the SOS hypothesis fit,
//! label-noise grids, fixed vote budgets and a synthetic rater population.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{compute_mos, VideoRecord, VoteTable};
use crate::error::{Error, Result};
use crate::eval::metrics::srcc;
use crate::seed;

/// Vote counts sampled per MOS in the label-noise experiments.
pub const NOISE_VOTE_COUNTS: [usize; 7] = [1, 2, 4, 7, 14, 26, 50];

/// MOS of `v` votes drawn without replacement.
pub fn subsample_mos<R: Rng + ?Sized>(votes: &[u8], v: usize, rng: &mut R) -> Result<f64> {
    if v == 0 {
        return Err(Error::Validation("cannot sample zero votes".into()));
    }
    if v > votes.len() {
        return Err(Error::InsufficientVotes(format!("asked for {v} of {} votes", votes.len())));
    }
    let picked: Vec<u8> = sample(rng, votes.len(), v).into_iter().map(|i| votes[i]).collect();
    compute_mos(&picked)
}

/// `-x^2 + 6x - 5`, the SOS-hypothesis regressor on a 5-point scale.
pub fn sos_regressor(mos: f64) -> f64 {
    -mos * mos + 6.0 * mos - 5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SosFit {
    pub a: f64,
    pub residual_rms: f64,
    pub n_videos: usize,
}

impl SosFit {
    /// Predicted standard deviation of opinion scores at `mos`.
    pub fn sos(&self, mos: f64) -> f64 {
        (self.a * sos_regressor(mos)).max(0.0).sqrt()
    }
}

/// Sample variance (n - 1 denominator) of a video's votes.
pub fn vote_variance(votes: &[u8]) -> Option<f64> {
    if votes.len() < 2 {
        return None;
    }
    let n = votes.len() as f64;
    let mean = votes.iter().map(|&v| v as f64).sum::<f64>() / n;
    Some(votes.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Least-squares fit of `SOS^2 = a * g(MOS)` through the origin over
/// `(mos, variance)` pairs.
pub fn fit_sos_points(points: &[(f64, f64)]) -> Result<SosFit> {
    if points.is_empty() {
        return Err(Error::InsufficientVotes("no video has at least 2 votes".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(mos, var) in points {
        let g = sos_regressor(mos);
        num += g * var;
        den += g * g;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("every MOS lies at a scale extreme; SOS regressor is zero".into()));
    }
    let a = num / den;
    let ss: f64 = points
        .iter()
        .map(|&(mos, var)| (var - a * sos_regressor(mos)).powi(2))
        .sum();
    Ok(SosFit {
        a,
        residual_rms: (ss / points.len() as f64).sqrt(),
        n_videos: points.len(),
    })
}

/// Fits the SOS parameter from per-video votes; videos with fewer than two
/// votes are ignored. Manifests that carry only published MOS values are
/// refused rather than imputed.
pub fn fit_sos(records: &[VideoRecord]) -> Result<SosFit> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| vote_variance(&r.votes).map(|var| (r.mos, var)))
        .collect();
    fit_sos_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budget: usize,
    pub precision: usize,
    pub n_videos: usize,
}

impl BudgetPlan {
    pub fn unspent(&self) -> usize {
        self.budget - self.n_videos * self.precision
    }

    /// `videos@precision`, e.g. `200@5`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.n_videos, self.precision)
    }
}

/// Splits a fixed vote budget into `floor(budget / precision)` videos per
/// precision level.
pub fn budget_plans(budget: usize, precisions: &[usize]) -> Result<Vec<BudgetPlan>> {
    precisions
        .iter()
        .map(|&precision| {
            if precision == 0 {
                return Err(Error::Validation("precision must be at least 1 vote".into()));
            }
            if precision > budget {
                return Err(Error::Validation(format!(
                    "precision {precision} exceeds the budget of {budget} votes"
                )));
            }
            Ok(BudgetPlan {
                budget,
                precision,
                n_videos: budget / precision,
            })
        })
        .collect()
}

/// Synthetic raters: each vote is the true quality plus Gaussian noise,
/// rounded and clipped to the 1..=5 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterModel {
    pub true_quality: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl RaterModel {
    pub fn new(true_quality: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if let Some(q) = true_quality.iter().find(|q| !(1.0..=5.0).contains(*q)) {
            return Err(Error::Validation(format!("true quality {q} outside [1, 5]")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Validation(format!("rater noise must be >= 0, got {sigma}")));
        }
        Ok(RaterModel {
            true_quality,
            sigma,
            seed,
        })
    }

    /// Qualities drawn uniformly from `[lo, hi]`.
    pub fn uniform(n_videos: usize, lo: f64, hi: f64, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = seed::derive_rng(seed, "rater-quality", 0);
        let q = (0..n_videos).map(|_| rng.random_range(lo..=hi)).collect();
        Self::new(q, sigma, seed)
    }

    pub fn video_id(index: usize) -> String {
        format!("v{index:05}")
    }
}

pub fn simulate_raters(model: &RaterModel, votes_per_video: usize) -> Result<VoteTable> {
    if votes_per_video == 0 {
        return Err(Error::Validation("need at least one vote per video".into()));
    }
    let mut table = VoteTable::new();
    for (i, &q) in model.true_quality.iter().enumerate() {
        let mut rng = seed::derive_rng(model.seed, "raters", i as u64);
        let id = RaterModel::video_id(i);
        for r in 0..votes_per_video {
            let z: f64 = StandardNormal.sample(&mut rng);
            let vote = (q + model.sigma * z).round().clamp(1.0, 5.0) as u8;
            table.push(&id, &format!("r{r}"), vote)?;
        }
    }
    Ok(table)
}

/// One dataset variant of the label-noise grid: every video gets a training
/// MOS from `train_votes` votes, a validation MOS from `val_votes` votes and
/// a held-out test MOS, the test votes disjoint from the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVariant {
    pub train_votes: usize,
    pub val_votes: usize,
    pub repeat: usize,
    pub train_mos: Vec<f64>,
    pub val_mos: Vec<f64>,
    pub test_mos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub video_ids: Vec<String>,
    pub test_votes: usize,
    pub variants: Vec<NoiseVariant>,
    /// `(train_votes, val_votes)` cells dropped for lack of votes.
    pub skipped: Vec<(usize, usize)>,
}

/// Builds every `(train_v, val_v, repeat)` variant.
///
/// Per repeat the test votes are drawn first, from a stream shared by all
/// cells so every cell of a repeat is scored against the same test MOS;
/// train and validation votes are then drawn from the remaining votes with
/// a stream owned by the cell.
pub fn noise_robustness_grid(
    votes: &VoteTable,
    train_counts: &[usize],
    val_counts: &[usize],
    repeats: usize,
    test_votes: usize,
    seed: u64,
) -> Result<NoiseGrid> {
    if repeats == 0 || test_votes == 0 {
        return Err(Error::Validation("repeats and test vote count must be positive".into()));
    }
    if train_counts.contains(&0) || val_counts.contains(&0) {
        return Err(Error::Validation("vote counts must be positive".into()));
    }
    let ids = votes.video_ids().to_vec();
    if ids.is_empty() {
        return Err(Error::Empty("vote table"));
    }
    let per_video: Vec<Vec<u8>> = ids.iter().map(|id| votes.votes_for(id)).collect();
    let available = per_video.iter().map(Vec::len).min().unwrap_or(0);
    if available <= test_votes {
        return Err(Error::InsufficientVotes(format!(
            "some video has only {available} votes; {test_votes} are held out for testing"
        )));
    }

    // per repeat: (test MOS, remaining votes) for every video
    let held_out: Vec<(Vec<f64>, Vec<Vec<u8>>)> = (0..repeats)
        .map(|rep| {
            let mut rng = seed::derive_rng(seed, "noise-grid-test", rep as u64);
            let mut test_mos = Vec::with_capacity(ids.len());
            let mut rest = Vec::with_capacity(ids.len());
            for v in &per_video {
                let picked = sample(&mut rng, v.len(), test_votes).into_vec();
                let mut mask = vec![false; v.len()];
                picked.iter().for_each(|&i| mask[i] = true);
                let test: Vec<u8> = picked.iter().map(|&i| v[i]).collect();
                test_mos.push(compute_mos(&test)?);
                rest.push(v.iter().zip(&mask).filter(|(_, m)| !**m).map(|(x, _)| *x).collect());
            }
            Ok((test_mos, rest))
        })
        .collect::<Result<_>>()?;

    let mut variants = Vec::new();
    let mut skipped = Vec::new();
    let mut cell = 0u64;
    for &tv in train_counts {
        for &vv in val_counts {
            let idx = cell;
            cell += 1;
            if tv.max(vv) + test_votes > available {
                log::warn!(
                    "skipping noise cell train={tv} val={vv}: needs {} votes per video, minimum available is {available}",
                    tv.max(vv) + test_votes
                );
                skipped.push((tv, vv));
                continue;
            }
            let mut rng = seed::derive_rng(seed, "noise-grid", idx);
            for (rep, (test_mos, rest)) in held_out.iter().enumerate() {
                let mut train_mos = Vec::with_capacity(ids.len());
                let mut val_mos = Vec::with_capacity(ids.len());
                for r in rest {
                    train_mos.push(subsample_mos(r, tv, &mut rng)?);
                    val_mos.push(subsample_mos(r, vv, &mut rng)?);
                }
                variants.push(NoiseVariant {
                    train_votes: tv,
                    val_votes: vv,
                    repeat: rep,
                    train_mos,
                    val_mos,
                    test_mos: test_mos.clone(),
                });
            }
        }
    }
    if variants.is_empty() {
        return Err(Error::InsufficientVotes(format!(
            "no grid cell fits in {available} votes per video with {test_votes} held out"
        )));
    }
    Ok(NoiseGrid {
        video_ids: ids,
        test_votes,
        variants,
        skipped,
    })
}

/// Label-only view of the grid: for each training vote count, the SRCC
/// between the subsampled MOS and the held-out test MOS, averaged over
/// repeats (and over validation counts, which do not affect it).
pub fn label_agreement(grid: &NoiseGrid) -> Result<Vec<(usize, f64)>> {
    let mut counts: Vec<usize> = grid.variants.iter().map(|v| v.train_votes).collect();
    counts.sort_unstable();
    counts.dedup();
    counts
        .into_iter()
        .map(|tv| {
            let vals = grid
                .variants
                .iter()
                .filter(|v| v.train_votes == tv)
                .map(|v| srcc(&v.train_mos, &v.test_mos))
                .collect::<Result<Vec<_>>>()?;
            Ok((tv, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoRecord;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample_mos(&[2, 4], 2, &mut rng(0)).unwrap(), 3.0);
        let votes = [1, 2, 5, 5, 3, 4];
        assert_eq!(
            subsample_mos(&votes, votes.len(), &mut rng(1)).unwrap(),
            compute_mos(&votes).unwrap()
        );
        assert!(subsample_mos(&votes, 7, &mut rng(1)).is_err());
        assert!(subsample_mos(&votes, 0, &mut rng(1)).is_err());
    }

    #[test]
    fn single_vote_resamples_average_to_mos() {
        // outcomes 1, 1, 5 equally likely: expectation 7/3
        let mut r = rng(42);
        let n = 10_000;
        let mean = (0..n).map(|_| subsample_mos(&[1, 1, 5], 1, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 7.0 / 3.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn one_point_sos_fit_is_exact() {
        // votes [2, 4]: MOS 3, sample variance 2, g(3) = 4, so a = 0.5
        let rec = VideoRecord::from_votes("v", vec![2, 4]).unwrap();
        let fit = fit_sos(&[rec]).unwrap();
        assert!((fit.a - 0.5).abs() < 1e-15);
        assert!(fit.residual_rms < 1e-15);
        assert!((fit.sos(3.0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sos_fit_degenerate_cases() {
        let ones = VideoRecord::from_votes("a", vec![1, 1, 1]).unwrap();
        let fives = VideoRecord::from_votes("b", vec![5, 5]).unwrap();
        assert!(matches!(fit_sos(&[ones, fives]), Err(Error::Degenerate(_))));
        let single = VideoRecord::from_votes("c", vec![3]).unwrap();
        let published = VideoRecord::from_mos("d", 3.2);
        assert!(matches!(fit_sos(&[single, published]), Err(Error::InsufficientVotes(_))));
    }

    #[test]
    fn budget_examples() {
        let videos = |b, p: &[usize]| budget_plans(b, p).unwrap().iter().map(|x| x.n_videos).collect::<Vec<_>>();
        assert_eq!(videos(100_000, &[100, 5, 1]), vec![1000, 20_000, 100_000]);
        assert_eq!(videos(1000, &[100, 5, 1]), vec![10, 200, 1000]);
        let p = budget_plans(7, &[2]).unwrap()[0];
        assert_eq!((p.n_videos, p.unspent()), (3, 1));
        assert!(budget_plans(5, &[6]).is_err());
        assert!(budget_plans(5, &[0]).is_err());
    }

    #[test]
    fn noiseless_raters_vote_the_rounded_quality() {
        let m = RaterModel::new(vec![1.2, 2.6, 4.49, 5.0], 0.0, 3).unwrap();
        let t = simulate_raters(&m, 4).unwrap();
        for (i, want) in [1u8, 3, 4, 5].iter().enumerate() {
            assert!(t.votes_for(&RaterModel::video_id(i)).iter().all(|v| v == want));
        }
    }

    #[test]
    fn raters_are_deterministic_and_centred() {
        let m = RaterModel::new(vec![3.0], 1.0, 11).unwrap();
        let a = simulate_raters(&m, 10_000).unwrap();
        assert_eq!(a, simulate_raters(&m, 10_000).unwrap());
        let mos = compute_mos(&a.votes_for("v00000")).unwrap();
        assert!((mos - 3.0).abs() < 0.05, "{mos}");
    }

    #[test]
    fn grid_counts_variants() {
        let m = RaterModel::uniform(20, 1.0, 5.0, 0.8, 1).unwrap();
        let t = simulate_raters(&m, 10).unwrap();
        let g = noise_robustness_grid(&t, &[1, 2], &[1, 2], 2, 5, 9).unwrap();
        assert_eq!(g.variants.len(), 8);
        assert!(g.skipped.is_empty());
        // test MOS is shared by every cell of a repeat
        for v in &g.variants {
            let first = g.variants.iter().find(|w| w.repeat == v.repeat).unwrap();
            assert_eq!(v.test_mos, first.test_mos);
        }
    }

    #[test]
    fn grid_skips_cells_without_slack() {
        let m = RaterModel::uniform(10, 1.0, 5.0, 0.8, 1).unwrap();
        let t = simulate_raters(&m, 10).unwrap();
        let g = noise_robustness_grid(&t, &[5, 6], &[1], 1, 5, 0).unwrap();
        assert_eq!(g.skipped, vec![(6, 1)]);
        assert!(g.variants.iter().all(|v| v.train_votes == 5));
        assert!(noise_robustness_grid(&t, &[6], &[1], 1, 5, 0).is_err());
        assert!(noise_robustness_grid(&t, &[1], &[1], 1, 10, 0).is_err());
    }

    #[test]
    fn agreement_grows_with_votes() {
        let m = RaterModel::uniform(200, 1.0, 5.0, 1.0, 5).unwrap();
        let t = simulate_raters(&m, 100).unwrap();
        let g = noise_robustness_grid(&t, &[1, 50], &[1], 3, 50, 5).unwrap();
        let curve = label_agreement(&g).unwrap();
        assert!(curve[0].1 < curve[1].1, "{curve:?}");
    }
}
