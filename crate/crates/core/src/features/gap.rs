use ndarray::{Array1, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Global average pooling of an `H x W x C` activation map to a `C`-vector.
///
/// Sums are accumulated in `f64`.
pub fn gap(map: ArrayView3<'_, f32>) -> Result<Array1<f32>> {
    let (h, w, c) = map.dim();
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Empty("activation map with a zero-sized axis"));
    }
    let mut acc = vec![0.0f64; c];
    for (idx, plane) in map.axis_iter(Axis(2)).enumerate() {
        let mut sum = 0.0f64;
        for &v in plane.iter() {
            if !v.is_finite() {
                let (row, col) = first_non_finite(plane);
                return Err(Error::NonFinite { row, col });
            }
            sum += v as f64;
        }
        acc[idx] = sum;
    }
    let n = (h * w) as f64;
    Ok(acc.into_iter().map(|s| (s / n) as f32).collect())
}

fn first_non_finite(plane: ndarray::ArrayView2<'_, f32>) -> (usize, usize) {
    plane
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(ix, _)| ix)
        .unwrap_or((0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};

    fn nested_loop_mean(map: &Array3<f32>) -> Vec<f64> {
        let (h, w, c) = map.dim();
        let mut out = vec![0.0; c];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += map[[i, j, k]] as f64;
                }
            }
            *slot = s / (h * w) as f64;
        }
        out
    }

    #[test]
    fn identity_for_single_pixel() {
        let m = array![[[0.25f32, -3.0, 7.5]]];
        assert_eq!(gap(m.view()).unwrap().to_vec(), vec![0.25, -3.0, 7.5]);
    }

    #[test]
    fn mean_of_four() {
        let m = Array3::from_shape_vec((2, 2, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap(m.view()).unwrap().to_vec(), vec![2.5]);
    }

    #[test]
    fn matches_nested_loops_on_random_tensor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = Array3::from_shape_fn((3, 5, 7), |_| rng.random_range(-4.0f32..4.0));
        let got = gap(m.view()).unwrap();
        for (g, want) in got.iter().zip(nested_loop_mean(&m)) {
            assert!((*g as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_in_its_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let shape = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..6));
            let a = Array3::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0));
            let b = Array3::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0));
            let (alpha, beta) = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));
            let combo = &a * alpha + &b * beta;
            let lhs = gap(combo.view()).unwrap();
            let rhs = gap(a.view()).unwrap() * alpha + gap(b.view()).unwrap() * beta;
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                assert!((l - r).abs() < 1e-6, "{l} vs {r}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        let mut m = Array3::<f32>::zeros((2, 2, 2));
        m[[1, 0, 1]] = f32::INFINITY;
        assert!(matches!(gap(m.view()), Err(Error::NonFinite { row: 1, col: 0 })));
        assert!(gap(Array3::<f32>::zeros((0, 2, 2)).view()).is_err());
    }
}
