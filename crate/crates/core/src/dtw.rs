//! Dynamic time warping between two series of equal dimensionality.
//!
//! Multivariate series use dependent warping: one alignment is shared by all
//! dimensions and the pointwise cost is the Euclidean distance between the
//! two `D`-dimensional points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Accumulated pointwise distance along the optimal alignment.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DtwCost(f64);

impl DtwCost {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Largest `N * M` accepted by [`dtw_brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 36;

fn check_pair(a: &TimeSeries, b: &TimeSeries) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("DTW needs nonempty series".into()));
    }
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "DTW dimension mismatch: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

#[inline]
fn point_distance(p: &[f64], q: &[f64]) -> f64 {
    if p.len() == 1 {
        return (p[0] - q[0]).abs();
    }
    p.iter()
        .zip(q)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unconstrained DTW over the full `(N+1) x (M+1)` table.
pub fn dtw_distance(a: &TimeSeries, b: &TimeSeries) -> Result<DtwCost> {
    dtw_distance_banded(a, b, None)
}

/// DTW restricted to cells with `|i - j| <= radius`. The radius is widened to
/// `|N - M|` when smaller so that a boundary-anchored path always exists.
pub fn dtw_distance_banded(
    a: &TimeSeries,
    b: &TimeSeries,
    radius: Option<usize>,
) -> Result<DtwCost> {
    check_pair(a, b)?;
    let (n, m) = (a.len(), b.len());
    let radius = radius.map(|r| r.max(n.abs_diff(m)));
    let width = m + 1;
    let mut cost = vec![f64::INFINITY; (n + 1) * width];
    cost[0] = 0.0;
    for i in 1..=n {
        let (lo, hi) = match radius {
            Some(r) => ((i.saturating_sub(r)).max(1), (i + r).min(m)),
            None => (1, m),
        };
        let p = a.row(i - 1);
        for j in lo..=hi {
            let d = point_distance(p, b.row(j - 1));
            let best = cost[(i - 1) * width + j]
                .min(cost[i * width + j - 1])
                .min(cost[(i - 1) * width + j - 1]);
            cost[i * width + j] = d + best;
        }
    }
    Ok(DtwCost(cost[n * width + m]))
}

/// Minimum alignment cost by enumerating every monotone, continuous path from
/// `(0, 0)` to `(N-1, M-1)`. Exponential; refuses inputs with `N * M > 36`.
pub fn dtw_brute_force(a: &TimeSeries, b: &TimeSeries) -> Result<DtwCost> {
    check_pair(a, b)?;
    let (n, m) = (a.len(), b.len());
    if n * m > BRUTE_FORCE_LIMIT {
        return Err(Error::Argument(format!(
            "exhaustive alignment refused for {n}x{m} (limit {BRUTE_FORCE_LIMIT} cells)"
        )));
    }

    fn walk(a: &TimeSeries, b: &TimeSeries, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + point_distance(a.row(i), b.row(j));
        let (n, m) = (a.len(), b.len());
        if i + 1 == n && j + 1 == m {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < n {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < m {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }

    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    Ok(DtwCost(best))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate("u", v).unwrap()
    }

    #[test]
    fn identical_series_cost_zero() {
        let a = uni(&[0.3, -1.0, 2.5, 2.5]);
        assert_eq!(dtw_distance(&a, &a).unwrap().value(), 0.0);
        assert_eq!(dtw_brute_force(&a, &a).unwrap().value(), 0.0);
    }

    #[test]
    fn pinned_pairs() {
        // Enumerated by hand: the diagonal path costs 1 + 1, every other path 3.
        let (a, b) = (uni(&[0.0, 0.0]), uni(&[1.0, 1.0]));
        assert_eq!(dtw_brute_force(&a, &b).unwrap().value(), 2.0);
        assert_eq!(dtw_distance(&a, &b).unwrap().value(), 2.0);
        assert_eq!(
            dtw_distance(&uni(&[1.0]), &uni(&[5.0])).unwrap().value(),
            4.0
        );
    }

    #[test]
    fn multivariate_uses_euclidean_points() {
        let a = TimeSeries::new("a", 1, 2, vec![0.0, 0.0]).unwrap();
        let b = TimeSeries::new("b", 1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(dtw_distance(&a, &b).unwrap().value(), 5.0);
    }

    #[test]
    fn unequal_lengths_align() {
        let a = uni(&[0.0, 1.0, 2.0]);
        let b = uni(&[0.0, 0.0, 1.0, 1.0, 2.0]);
        assert_eq!(dtw_distance(&a, &b).unwrap().value(), 0.0);
    }

    #[test]
    fn errors() {
        let a = uni(&[0.0]);
        let b = TimeSeries::new("b", 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(dtw_distance(&a, &b), Err(Error::Shape(_))));
        let long = uni(&[0.0; 7]);
        let six = uni(&[0.0; 6]);
        assert!(matches!(
            dtw_brute_force(&long, &six),
            Err(Error::Argument(_))
        ));
        assert!(dtw_brute_force(&six, &six).is_ok());
    }

    #[test]
    fn wide_band_matches_unconstrained() {
        let a = uni(&[0.0, 2.0, 1.0, 3.0, 0.5]);
        let b = uni(&[1.0, 0.0, 2.5, 1.0]);
        let full = dtw_distance(&a, &b).unwrap();
        assert_eq!(dtw_distance_banded(&a, &b, Some(10)).unwrap(), full);
        // A zero radius still admits a path because it widens to |N - M|.
        assert!(dtw_distance_banded(&a, &b, Some(0)).unwrap().value() >= full.value());
    }
}
