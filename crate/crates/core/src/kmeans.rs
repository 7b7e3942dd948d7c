//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ScmlError};
use crate::linalg::sq_euclidean;

const MAX_ITER: usize = 300;

/// Index of the nearest center for every row; ties go to the smaller center index.
pub fn assign(x: &Array2<f64>, centers: &Array2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| nearest(row.as_slice().expect("layout"), centers).0)
        .collect()
}

fn nearest(x: &[f64], centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = sq_euclidean(x, center.as_slice().expect("layout"));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(x: &Array2<f64>, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let row = |i: usize| x.row(i).to_slice().expect("layout").to_vec();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_euclidean(&row(i), &row(chosen[0]))).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive mass exists")
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let c = row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_euclidean(&row(i), &c));
        }
    }
    x.select(Axis(0), &chosen)
}

/// Clusters the rows of `x` into `m` groups and returns the centers.
///
/// Runs Lloyd iterations until the assignment is stable, so on return every
/// center is the mean of the points assigned to it. Deterministic in `seed`.
pub fn kmeans(x: &Array2<f64>, m: usize, seed: u64) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(ScmlError::Empty("k-means input"));
    }
    if m == 0 || m > n {
        return Err(ScmlError::InvalidArgument(format!("k-means needs 1 <= m <= n, got m={m}, n={n}")));
    }
    let x = x.as_standard_layout().to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(&x, m, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..MAX_ITER {
        let mut next = assign(&x, &centers);
        // an empty cluster takes over the point worst served by its center
        loop {
            let mut counts = vec![0usize; m];
            for &a in &next {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let far = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .map(|i| (i, sq_euclidean(x.row(i).as_slice().expect("layout"), centers.row(next[i]).as_slice().expect("layout"))))
                .fold((usize::MAX, -1.0), |acc, (i, dd)| if dd > acc.1 { (i, dd) } else { acc });
            if far.0 == usize::MAX {
                break;
            }
            next[far.0] = empty;
            centers.row_mut(empty).assign(&x.row(far.0));
        }
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = Array2::<f64>::zeros((m, d));
        let mut counts = vec![0usize; m];
        for (i, &a) in assignment.iter().enumerate() {
            sums.row_mut(a).scaled_add(1.0, &x.row(i));
            counts[a] += 1;
        }
        for c in 0..m {
            if counts[c] > 0 {
                let k = counts[c] as f64;
                centers.row_mut(c).assign(&sums.row(c).mapv(|v| v / k));
            }
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn single_center_is_mean() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]];
        let c = kmeans(&x, 1, 3).unwrap();
        assert_eq!(c.row(0).to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn m_equals_n_recovers_rows() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0], [-1.0, 0.5]];
        let c = kmeans(&x, 4, 11).unwrap();
        let mut got: Vec<Vec<f64>> = c.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut want: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn result_is_a_lloyd_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>() * 10.0);
        let centers = kmeans(&x, 5, 42).unwrap();
        let a = assign(&x, &centers);
        // oracle: one more Lloyd step from scratch
        for c in 0..5 {
            let members: Vec<usize> = (0..60).filter(|&i| a[i] == c).collect();
            assert!(!members.is_empty());
            for j in 0..3 {
                let mean = members.iter().map(|&i| x[[i, j]]).sum::<f64>() / members.len() as f64;
                assert!((mean - centers[[c, j]]).abs() < 1e-12);
            }
        }
        assert_eq!(assign(&x, &centers), a);
    }

    #[test]
    fn deterministic_and_validated() {
        let x = array![[0.0], [1.0], [5.0], [6.0], [20.0]];
        assert_eq!(kmeans(&x, 2, 9).unwrap(), kmeans(&x, 2, 9).unwrap());
        assert!(kmeans(&x, 0, 1).is_err());
        assert!(kmeans(&x, 6, 1).is_err());
        assert!(kmeans(&Array2::zeros((0, 2)), 1, 1).is_err());
    }
}
