//! High-accuracy solve of the HVC problem reduced to `q` alone:
//!
//! `F(q) = 1/2 |X(q+w) - mu|^2 + gamma/2 |X(q+w) - mu|_B^2` over the box.
//!
//! With `u = X(q+w) - mu` the gradient is `X u + gamma u` and the Hessian is
//! `H = X X + gamma X`, so this is a strictly convex box-constrained QP. It is
//! solved by a primal active-set method, which shares nothing with the PPD
//! iteration and terminates at the exact optimum up to rounding.

use nalgebra::{DMatrix, DVector};

use super::HvcProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Equality multiplier `X (mu - v)`.
    pub lambda: Vec<f64>,
    /// Active-set changes taken.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
}

pub fn reference_qp_solve(problem: &HvcProblem) -> Result<ReferenceSolution> {
    let n = problem.n();
    let gamma = problem.gamma();
    let x = problem.bbus().inverse();
    let mut h = &x * &x + &x * gamma;
    let ht = h.transpose();
    h += ht;
    h *= 0.5;

    let w = DVector::from_column_slice(problem.w().as_slice());
    let mu = DVector::from_column_slice(problem.mu());
    let u0 = &x * &w - &mu;
    let h0 = &x * &u0 + &u0 * gamma;
    let lo = problem.q_lo();
    let hi = problem.q_hi();

    let unconstrained = h
        .clone()
        .cholesky()
        .ok_or(Error::SingularBlock)?
        .solve(&(-&h0));
    let mut q = vec![0.0; n];
    let mut status = vec![Status::Free; n];
    for j in 0..n {
        let u = unconstrained[j];
        (q[j], status[j]) = if u <= lo[j] {
            (lo[j], Status::Lower)
        } else if u >= hi[j] {
            (hi[j], Status::Upper)
        } else {
            (u, Status::Free)
        };
    }

    let grad = |q: &[f64]| &h * DVector::from_column_slice(q) + &h0;
    let budget = 50 * (n + 1) * (n + 1);
    let mut changes = 0;
    loop {
        if changes > budget {
            return Err(Error::InvalidProblem(
                "active-set reference solve did not terminate".into(),
            ));
        }
        let free: Vec<usize> = (0..n).filter(|&j| status[j] == Status::Free).collect();
        let g = grad(&q);
        let d = subspace_step(&h, &g, &free)?;

        // ratio test against the bounds of the free variables
        let mut t = 1.0;
        let mut blocking = None;
        for (pos, &j) in free.iter().enumerate() {
            let dj = d[pos];
            let room = if dj < 0.0 {
                (lo[j] - q[j]) / dj
            } else if dj > 0.0 {
                (hi[j] - q[j]) / dj
            } else {
                continue;
            };
            if room < t {
                t = room.max(0.0);
                blocking = Some((j, dj < 0.0));
            }
        }
        for (pos, &j) in free.iter().enumerate() {
            q[j] += t * d[pos];
        }
        if let Some((j, lower)) = blocking {
            (q[j], status[j]) = if lower {
                (lo[j], Status::Lower)
            } else {
                (hi[j], Status::Upper)
            };
            changes += 1;
            continue;
        }

        // subspace minimum: release the bound with the most wrongly signed
        // multiplier, if any
        let g = grad(&q);
        let scale = 1.0 + g.amax();
        let mut release = None;
        let mut worst = 1e-15 * scale;
        for j in 0..n {
            if lo[j] == hi[j] {
                continue;
            }
            let violation = match status[j] {
                Status::Lower => -g[j],
                Status::Upper => g[j],
                Status::Free => continue,
            };
            if violation > worst {
                worst = violation;
                release = Some(j);
            }
        }
        match release {
            Some(j) => {
                status[j] = Status::Free;
                changes += 1;
            }
            None => break,
        }
    }

    // one refinement pass on the free block
    let free: Vec<usize> = (0..n).filter(|&j| status[j] == Status::Free).collect();
    let d = subspace_step(&h, &grad(&q), &free)?;
    for (pos, &j) in free.iter().enumerate() {
        q[j] = (q[j] + d[pos]).clamp(lo[j], hi[j]);
    }

    let v = problem.linear_voltage(&q)?.0;
    let gap: Vec<f64> = mu.iter().zip(&v).map(|(m, vj)| m - vj).collect();
    let lambda = problem.bbus().solve(&gap);
    Ok(ReferenceSolution {
        q,
        v,
        lambda,
        iterations: changes,
    })
}

/// Newton step `H_FF d = -g_F` restricted to the free indices.
fn subspace_step(h: &DMatrix<f64>, g: &DVector<f64>, free: &[usize]) -> Result<Vec<f64>> {
    if free.is_empty() {
        return Ok(Vec::new());
    }
    let m = free.len();
    let h_ff = DMatrix::from_fn(m, m, |r, c| h[(free[r], free[c])]);
    let rhs = DVector::from_iterator(m, free.iter().map(|&j| -g[j]));
    let chol = h_ff.cholesky().ok_or(Error::SingularBlock)?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbus::BbusMatrix;
    use crate::flow::OperatingCondition;
    use crate::ppd::{kkt_residuals, PpdState};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn problem(b: DMatrix<f64>, w: Vec<f64>, gamma: f64, lo: Vec<f64>, hi: Vec<f64>) -> HvcProblem {
        let n = b.nrows();
        let root = (0..n).map(|r| b.row(r).sum()).collect();
        let bb = BbusMatrix::from_parts(b, (1..=n).collect(), root).unwrap();
        HvcProblem::new(
            Arc::new(bb),
            OperatingCondition(w),
            vec![1.0; n],
            gamma,
            lo,
            hi,
        )
        .unwrap()
    }

    /// Try every free/lower/upper pattern and keep the one satisfying KKT.
    fn enumerate(p: &HvcProblem) -> Vec<f64> {
        let n = p.n();
        let x = p.bbus().inverse();
        let h = &x * &x + &x * p.gamma();
        let u0 = &x * DVector::from_column_slice(p.w().as_slice())
            - DVector::from_column_slice(p.mu());
        let h0 = &x * &u0 + &u0 * p.gamma();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let pattern: Vec<usize> = (0..n).map(|j| code / 3usize.pow(j as u32) % 3).collect();
            let mut q: Vec<f64> = (0..n)
                .map(|j| match pattern[j] {
                    1 => p.q_lo()[j],
                    2 => p.q_hi()[j],
                    _ => 0.0,
                })
                .collect();
            let free: Vec<usize> = (0..n).filter(|&j| pattern[j] == 0).collect();
            if !free.is_empty() {
                let fixed = DVector::from_column_slice(&q);
                let g = &h * fixed + &h0;
                let m = free.len();
                let a = DMatrix::from_fn(m, m, |r, c| h[(free[r], free[c])]);
                let b = DVector::from_iterator(m, free.iter().map(|&j| -g[j]));
                let sol = a.lu().solve(&b).unwrap();
                for (k, &j) in free.iter().enumerate() {
                    q[j] = sol[k];
                }
            }
            let feasible = (0..n).all(|j| q[j] >= p.q_lo()[j] - 1e-12 && q[j] <= p.q_hi()[j] + 1e-12);
            if !feasible {
                continue;
            }
            let f = p.objective(&q).unwrap();
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, q));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn two_bus_capped() {
        let p = problem(DMatrix::from_element(1, 1, 10.0), vec![9.9], 0.5, vec![-0.05], vec![0.05]);
        let s = reference_qp_solve(&p).unwrap();
        assert_abs_diff_eq!(s.q[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(s.v[0], 0.995, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lambda[0], 0.0005, epsilon = 1e-14);
    }

    #[test]
    fn unlimited_box_reaches_mu() {
        let b = DMatrix::from_row_slice(3, 3, &[20.0, -10.0, 0.0, -10.0, 25.0, -15.0, 0.0, -15.0, 15.0]);
        for gamma in [0.0, 0.017, 0.5, 5.0] {
            let p = problem(b.clone(), vec![9.7, 0.2, -0.3], gamma, vec![-10.0; 3], vec![10.0; 3]);
            let s = reference_qp_solve(&p).unwrap();
            for v in &s.v {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matches_enumeration_on_three_buses() {
        let b = DMatrix::from_row_slice(3, 3, &[30.0, -10.0, -5.0, -10.0, 18.0, -8.0, -5.0, -8.0, 13.0]);
        let cases = [
            (vec![28.9, -0.4, 0.1], 0.5, 0.05),
            (vec![29.5, 0.3, -0.2], 0.017, 0.02),
            (vec![30.4, 0.1, 0.1], 5.0, 0.1),
            (vec![29.0, 0.0, 0.0], 1.0, 1.0),
        ];
        for (w, gamma, cap) in cases {
            let p = problem(b.clone(), w, gamma, vec![-cap; 3], vec![cap; 3]);
            let s = reference_qp_solve(&p).unwrap();
            let e = enumerate(&p);
            for j in 0..3 {
                assert_abs_diff_eq!(s.q[j], e[j], epsilon = 1e-9);
            }
            let state = PpdState {
                v: s.v.clone(),
                q: s.q.clone(),
                lambda: s.lambda.clone(),
                k: 0,
            };
            assert!(kkt_residuals(&state, &p).unwrap().max() < 1e-10);
        }
    }

    #[test]
    fn degenerate_box() {
        let p = problem(DMatrix::from_element(1, 1, 10.0), vec![9.9], 0.5, vec![0.02], vec![0.02]);
        let s = reference_qp_solve(&p).unwrap();
        assert_eq!(s.q[0], 0.02);
    }
}
