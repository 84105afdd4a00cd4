//! Box-constrained linear least squares in three unknowns.
//!
//! Radial-velocity constraints give one scalar equation per radar point, so
//! a cluster with rows `a_j` and measurements `b_j` defines
//! `min ||A v - b||_2` subject to `|v_i| <= bound` per axis. The system may
//! be over- or under-determined; both are supported regimes:
//!
//! * full rank, interior minimizer: the solution equals the unconstrained
//!   normal-equation solution (to 1e-9 and better),
//! * rank deficient: singular values below `1e-8 * sigma_max` are treated as
//!   zero and the minimum-norm completion on the null space is returned,
//! * active bounds: the minimizer over the box is found by enumerating the
//!   27 sign patterns of the three coordinates (free, at +bound, at -bound)
//!   and solving the reduced least-squares problem of each pattern. The
//!   objective is convex, so the optimizer's own active set is among the
//!   patterns and the best feasible candidate is a global minimizer. Among
//!   near-equal objectives the smaller-norm candidate wins, which keeps the
//!   result deterministic and minimum-norm in the degenerate cases.

use nalgebra::{DMatrix, DVector};

use crate::types::Vec3;

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-8;

/// Result of a bounded least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedSolve {
    /// Minimizer, componentwise within `[-bound, bound]`.
    pub x: Vec3,
    /// Root-mean-square of `A x - b` over the rows.
    pub residual_rms: f64,
    /// Numerical rank of `A`.
    pub rank: usize,
}

/// Minimum-norm least-squares solution via the SVD, treating singular values
/// below `RANK_TOL * sigma_max` as zero. Returns the solution and the rank.
fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> (Vec3, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let tol = RANK_TOL * sigma_max;

    let mut x = Vec3::zeros();
    let mut rank = 0;
    for i in 0..sigma.len() {
        if sigma[i] > tol && sigma[i] > 0.0 {
            rank += 1;
            let coeff = u.column(i).dot(b) / sigma[i];
            for k in 0..v_t.ncols() {
                x[k] += coeff * v_t[(i, k)];
            }
        }
    }
    (x, rank)
}

fn objective(a: &DMatrix<f64>, b: &DVector<f64>, x: &Vec3) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        let pred = a[(r, 0)] * x.x + a[(r, 1)] * x.y + a[(r, 2)] * x.z;
        let e = pred - b[r];
        s += e * e;
    }
    s
}

/// Solve `min ||A v - b||` with `|v_i| <= bound`.
///
/// `rows` holds the rows of `A` as 3-vectors; `rhs` the entries of `b`.
/// An empty system returns the zero vector with rank 0.
pub fn solve_bounded(rows: &[Vec3], rhs: &[f64], bound: f64) -> BoundedSolve {
    assert_eq!(rows.len(), rhs.len(), "rows and rhs must align");
    assert!(bound > 0.0, "bound must be positive");
    let n = rows.len();
    if n == 0 {
        return BoundedSolve {
            x: Vec3::zeros(),
            residual_rms: 0.0,
            rank: 0,
        };
    }

    let a = DMatrix::from_fn(n, 3, |r, c| rows[r][c]);
    let b = DVector::from_column_slice(rhs);

    let (x_mn, rank) = min_norm_solution(&a, &b);
    if x_mn.iter().all(|v| v.abs() <= bound) {
        let obj = objective(&a, &b, &x_mn);
        return BoundedSolve {
            x: x_mn,
            residual_rms: (obj / n as f64).sqrt(),
            rank,
        };
    }

    // Unconstrained minimizer violates the box: enumerate active sets.
    // State per coordinate: 0 = free, 1 = at +bound, 2 = at -bound.
    let mut best: Option<(f64, f64, Vec3)> = None; // (objective, norm2, x)
    let feas_tol = 1e-9 * bound;
    for pattern in 0..27u32 {
        let states = [pattern % 3, (pattern / 3) % 3, (pattern / 9) % 3];
        let free: Vec<usize> = (0..3).filter(|&i| states[i] == 0).collect();

        let mut x = Vec3::zeros();
        let mut b_red = b.clone();
        for i in 0..3 {
            let s = match states[i] {
                1 => 1.0,
                2 => -1.0,
                _ => continue,
            };
            x[i] = s * bound;
            for r in 0..n {
                b_red[r] -= a[(r, i)] * x[i];
            }
        }

        if !free.is_empty() {
            let a_red = DMatrix::from_fn(n, free.len(), |r, c| a[(r, free[c])]);
            let (x_red, _) = {
                let svd = a_red.clone().svd(true, true);
                let u = svd.u.as_ref().expect("svd with u");
                let v_t = svd.v_t.as_ref().expect("svd with v_t");
                let sigma = &svd.singular_values;
                let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
                let tol = RANK_TOL * sigma_max;
                let mut xr = vec![0.0; free.len()];
                let mut rk = 0;
                for i in 0..sigma.len() {
                    if sigma[i] > tol && sigma[i] > 0.0 {
                        rk += 1;
                        let coeff = u.column(i).dot(&b_red) / sigma[i];
                        for (k, xk) in xr.iter_mut().enumerate() {
                            *xk += coeff * v_t[(i, k)];
                        }
                    }
                }
                (xr, rk)
            };
            if x_red.iter().any(|v| v.abs() > bound + feas_tol) {
                continue;
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] = x_red[k].clamp(-bound, bound);
            }
        }

        let obj = objective(&a, &b, &x);
        let norm2 = x.norm_squared();
        let better = match &best {
            None => true,
            Some((bo, bn, bx)) => {
                let tol = 1e-12 * (1.0 + bo.abs());
                if obj < bo - tol {
                    true
                } else if obj > bo + tol {
                    false
                } else if norm2 < bn - 1e-12 * (1.0 + bn.abs()) {
                    true
                } else if norm2 > bn + 1e-12 * (1.0 + bn.abs()) {
                    false
                } else {
                    // Full tie: lexicographic order keeps it deterministic.
                    (x.x, x.y, x.z) < (bx.x, bx.y, bx.z)
                }
            }
        };
        if better {
            best = Some((obj, norm2, x));
        }
    }

    let (obj, _, x) = best.expect("corner patterns are always feasible");
    BoundedSolve {
        x,
        residual_rms: (obj / n as f64).sqrt(),
        rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_unit(rng: &mut ChaCha12Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn orthonormal_directions_invert_exactly() {
        let rows = vec![Vec3::x(), Vec3::y(), Vec3::z()];
        let rhs = vec![3.0, -1.0, 2.0];
        let sol = solve_bounded(&rows, &rhs, 60.0);
        assert!((sol.x - Vec3::new(3.0, -1.0, 2.0)).norm() < 1e-12);
        assert!(sol.residual_rms < 1e-12);
        assert_eq!(sol.rank, 3);
    }

    #[test]
    fn single_row_gives_minimum_norm_solution() {
        let sol = solve_bounded(&[Vec3::x()], &[5.0], 60.0);
        assert!((sol.x - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(sol.rank, 1);
        assert!(sol.residual_rms < 1e-12);
    }

    #[test]
    fn recovers_velocity_from_random_directions() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let truth = Vec3::new(12.0, -3.0, 0.0);
        let rows: Vec<Vec3> = (0..10).map(|_| random_unit(&mut rng)).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.dot(&truth)).collect();
        let sol = solve_bounded(&rows, &rhs, 60.0);
        assert!((sol.x - truth).norm() < 1e-6, "error {}", (sol.x - truth).norm());
        assert_eq!(sol.rank, 3);
    }

    #[test]
    fn bound_active_solution_projects_onto_box() {
        // One-dimensional check: minimizing (v_x - 80)^2 over |v_x| <= 60
        // lands on the +60 face, and the free axes stay at zero.
        let sol = solve_bounded(&[Vec3::x()], &[80.0], 60.0);
        assert!((sol.x - Vec3::new(60.0, 0.0, 0.0)).norm() < 1e-9);
        assert!((sol.residual_rms - 20.0).abs() < 1e-9);
    }

    #[test]
    fn interior_full_rank_matches_normal_equations() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..200 {
            let rows: Vec<Vec3> = (0..8).map(|_| random_unit(&mut rng)).collect();
            let rhs: Vec<f64> = rows
                .iter()
                .map(|r| r.dot(&Vec3::new(4.0, -7.5, 2.0)) + rng.random_range(-0.5..0.5))
                .collect();

            // Normal equations via explicit 3x3 solve (independent route).
            let mut ata = nalgebra::Matrix3::<f64>::zeros();
            let mut atb = Vec3::zeros();
            for (r, &b) in rows.iter().zip(&rhs) {
                ata += r * r.transpose();
                atb += r * b;
            }
            let x_ne = ata.try_inverse().unwrap() * atb;
            if x_ne.iter().any(|v| v.abs() > 59.0) {
                continue;
            }
            let sol = solve_bounded(&rows, &rhs, 60.0);
            assert!(
                (sol.x - x_ne).norm() < 1e-9,
                "bounded solve disagrees with normal equations: {:?} vs {:?}",
                sol.x,
                x_ne
            );
        }
    }

    #[test]
    fn consistent_rows_keep_residual_at_zero() {
        // Appending consistent measurements to a full-rank system must not
        // push the residual above numerical zero.
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let truth = Vec3::new(-20.0, 14.0, 1.0);
        let mut rows: Vec<Vec3> = (0..3).map(|_| random_unit(&mut rng)).collect();
        let mut rhs: Vec<f64> = rows.iter().map(|r| r.dot(&truth)).collect();
        for _ in 0..40 {
            rows.push(random_unit(&mut rng));
            rhs.push(rows.last().unwrap().dot(&truth));
            let sol = solve_bounded(&rows, &rhs, 60.0);
            assert!(sol.residual_rms < 1e-9, "residual {}", sol.residual_rms);
        }
    }

    #[test]
    fn rank_deficient_active_bound_stays_minimum_norm() {
        // Two parallel rows, inconsistent targets, optimum outside the box.
        let rows = vec![Vec3::x(), Vec3::x()];
        let sol = solve_bounded(&rows, &[70.0, 90.0], 60.0);
        assert!((sol.x - Vec3::new(60.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn empty_system_returns_zero() {
        let sol = solve_bounded(&[], &[], 60.0);
        assert_eq!(sol.x, Vec3::zeros());
        assert_eq!(sol.rank, 0);
    }
}
