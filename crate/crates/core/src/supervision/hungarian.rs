use crate::error::{Error, Result};

/// Minimum-cost assignment of every row of an `n x m` cost matrix
/// (`n <= m`) to a distinct column. Returns the column of each row.
///
/// Shortest augmenting paths with row/column potentials, O(n^2 m). Columns
/// are scanned in increasing order and only strictly better candidates
/// replace the current one, so ties resolve toward lower column indices
/// and the result is deterministic.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::shape("hungarian: ragged cost matrix"));
    }
    if n > m {
        return Err(Error::Assignment { rows: n, cols: m });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("hungarian cost".into()));
    }

    // 1-based, with row/column 0 as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(hungarian(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian(&[vec![5.0, 2.0, 7.0]]).unwrap(), vec![1]);
        assert_eq!(hungarian(&[]).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn ties_prefer_low_columns() {
        assert_eq!(hungarian(&[vec![0.0; 3], vec![0.0; 3]]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian(&[vec![1.0, 1.0, 1.0]]).unwrap(), vec![0]);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(matches!(
            hungarian(&[vec![0.0], vec![1.0]]),
            Err(Error::Assignment { rows: 2, cols: 1 })
        ));
        assert!(hungarian(&[vec![0.0, f64::NAN]]).is_err());
        assert!(hungarian(&[vec![0.0, 1.0], vec![0.0]]).is_err());
    }
}
