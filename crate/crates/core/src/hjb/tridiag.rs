//! Tridiagonal systems of the form
//! `(β + lo_i + up_i) v_i − lo_i v_{i−1} − up_i v_{i+1} = r_i`.

use crate::error::{Error, Result};

/// One row of a monotone tridiagonal system.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Row {
    /// Weight on `v_{i−1} − v_i`.
    pub lo: f64,
    /// Weight on `v_{i+1} − v_i`.
    pub up: f64,
    pub rhs: f64,
}

/// Checks that every row is an M-matrix row and solves with the Thomas
/// algorithm. `x` is only used to label diagnostics.
pub fn solve_monotone(beta: f64, rows: &[Row], x: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    for (i, r) in rows.iter().enumerate() {
        if !(r.lo >= 0.0 && r.up >= 0.0) || !r.rhs.is_finite() {
            return Err(Error::Monotonicity {
                node: i,
                x: x[i],
                diagnosis: format!(
                    "off-diagonal weights must be nonnegative (lo = {:e}, up = {:e}, rhs = {:e})",
                    r.lo, r.up, r.rhs
                ),
            });
        }
        let diag = beta + r.lo + r.up;
        let off = r.lo * (i > 0) as u8 as f64 + r.up * (i + 1 < n) as u8 as f64;
        if !(diag > off) {
            return Err(Error::Monotonicity {
                node: i,
                x: x[i],
                diagnosis: format!("row is not diagonally dominant ({diag:e} vs {off:e})"),
            });
        }
    }
    if rows[0].lo != 0.0 || rows[n - 1].up != 0.0 {
        return Err(Error::Numerical(
            "boundary rows reference nodes outside the grid".into(),
        ));
    }

    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let b0 = beta + rows[0].up;
    cp[0] = -rows[0].up / b0;
    dp[0] = rows[0].rhs / b0;
    for i in 1..n {
        let a = -rows[i].lo;
        let b = beta + rows[i].lo + rows[i].up;
        let m = b - a * cp[i - 1];
        cp[i] = -rows[i].up / m;
        dp[i] = (rows[i].rhs - a * dp[i - 1]) / m;
    }
    let mut v = vec![0.0; n];
    v[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        v[i] = dp[i] - cp[i] * v[i + 1];
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(beta: f64, rows: &[Row], v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut s = (beta + rows[i].lo + rows[i].up) * v[i];
                if i > 0 {
                    s -= rows[i].lo * v[i - 1];
                }
                if i + 1 < n {
                    s -= rows[i].up * v[i + 1];
                }
                s
            })
            .collect()
    }

    #[test]
    fn solves_random_monotone_system() {
        let n = 50;
        let mut rows: Vec<Row> = (0..n)
            .map(|i| Row {
                lo: 1.0 + (i as f64 * 0.37).sin().abs(),
                up: 2.0 + (i as f64 * 0.11).cos().abs(),
                rhs: (i as f64).sqrt(),
            })
            .collect();
        rows[0].lo = 0.0;
        rows[n - 1].up = 0.0;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let v = solve_monotone(0.05, &rows, &x).unwrap();
        let back = apply(0.05, &rows, &v);
        for i in 0..n {
            assert!((back[i] - rows[i].rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_rhs_gives_constant_solution() {
        let n = 10;
        let mut rows = vec![
            Row {
                lo: 3.0,
                up: 4.0,
                rhs: 2.0
            };
            n
        ];
        rows[0].lo = 0.0;
        rows[n - 1].up = 0.0;
        let x = vec![1.0; n];
        let v = solve_monotone(0.5, &rows, &x).unwrap();
        assert!(v.iter().all(|&vi| (vi - 4.0).abs() < 1e-12));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let rows = vec![
            Row { lo: 0.0, up: 1.0, rhs: 0.0 },
            Row { lo: -1.0, up: 1.0, rhs: 0.0 },
            Row { lo: 1.0, up: 0.0, rhs: 0.0 },
        ];
        let err = solve_monotone(1.0, &rows, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Monotonicity { node: 1, .. }));
    }
}
