//! Reduced weighted graph Laplacian ("Bbus") of a feeder.
//!
//! `B[j][j] = sum of 1/x over lines at j`, `B[j][i] = -1/x_ji` for lines,
//! with the substation row and column removed. For a connected feeder B is
//! symmetric positive definite and `B * 1` is the vector of couplings to the
//! substation (`1/x_0j` for buses adjacent to it, 0 elsewhere).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;

#[derive(Debug, Clone)]
pub struct BbusMatrix {
    matrix: DMatrix<f64>,
    /// Feeder bus id of each row.
    bus_ids: Vec<usize>,
    /// `B * 1`: effective coupling of each row to the substation.
    root_coupling: Vec<f64>,
    /// Nonzero pattern of each row, ascending column order, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
    chol: Cholesky<f64, Dyn>,
    eta_tilde: f64,
    l_tilde: f64,
}

/// Assemble the reduced Bbus matrix of `model`.
pub fn build_bbus(model: &FeederModel) -> Result<BbusMatrix> {
    let n = model.n_controllable();
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut root = vec![0.0; n];
    for line in model.lines() {
        let g = 1.0 / line.x;
        match (line.from, line.to) {
            (0, j) | (j, 0) => {
                b[(j - 1, j - 1)] += g;
                root[j - 1] += g;
            }
            (a, c) => {
                let (a, c) = (a - 1, c - 1);
                b[(a, a)] += g;
                b[(c, c)] += g;
                b[(a, c)] -= g;
                b[(c, a)] -= g;
            }
        }
    }
    BbusMatrix::from_parts(b, (1..=n).collect(), root)
}

impl BbusMatrix {
    /// Wrap an already assembled matrix. `matrix` must be symmetric positive
    /// definite; `root_coupling` is `matrix * 1`.
    pub fn from_parts(
        matrix: DMatrix<f64>,
        bus_ids: Vec<usize>,
        root_coupling: Vec<f64>,
    ) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "Bbus columns",
                expected: n,
                got: matrix.ncols(),
            });
        }
        if bus_ids.len() != n || root_coupling.len() != n {
            return Err(Error::DimensionMismatch {
                what: "Bbus row labels",
                expected: n,
                got: bus_ids.len().min(root_coupling.len()),
            });
        }
        if n == 0 {
            return Err(Error::InvalidProblem("Bbus matrix has no rows".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Bbus matrix"));
        }

        let eig = SymmetricEigen::new(matrix.clone());
        let eta_tilde = eig.eigenvalues.min();
        let l_tilde = eig.eigenvalues.max();
        if eta_tilde.is_nan() || eta_tilde <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: eta_tilde,
            });
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: eta_tilde,
        })?;

        let rows = (0..n)
            .map(|j| {
                (0..n)
                    .filter_map(|i| {
                        let v = matrix[(j, i)];
                        (v != 0.0).then_some((i, v))
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            matrix,
            bus_ids,
            root_coupling,
            rows,
            chol,
            eta_tilde,
            l_tilde,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[(row, col)]
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn row_of_bus(&self, bus: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn root_coupling(&self) -> &[f64] {
        &self.root_coupling
    }

    /// Smallest singular value (= smallest eigenvalue, B being SPD).
    pub fn eta_tilde(&self) -> f64 {
        self.eta_tilde
    }

    /// Largest singular value.
    pub fn l_tilde(&self) -> f64 {
        self.l_tilde
    }

    /// Nonzero entries `(col, B[row][col])` of one row, ascending columns.
    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    /// Rows that share a line with `row` (excluding `row` itself).
    pub fn neighbors(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[row]
            .iter()
            .map(|&(i, _)| i)
            .filter(move |&i| i != row)
    }

    /// `sum_i B[row][i] * value(i)` over the row's nonzero pattern, in
    /// ascending column order. Every matrix-vector product in the solver and
    /// the agent simulator goes through here so that both evaluate the same
    /// floating-point expression.
    #[inline]
    pub fn row_dot_with(&self, row: usize, mut value: impl FnMut(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for &(i, bji) in &self.rows[row] {
            acc += bji * value(i);
        }
        acc
    }

    #[inline]
    pub fn row_dot(&self, row: usize, x: &[f64]) -> f64 {
        self.row_dot_with(row, |i| x[i])
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n());
        (0..self.n()).map(|j| self.row_dot(j, x)).collect()
    }

    /// Solve `B y = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let y = self.chol.solve(&DVector::from_column_slice(rhs));
        y.as_slice().to_vec()
    }

    /// Materialize `X = B^-1`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut x = self.chol.inverse();
        // symmetrize away rounding
        let xt = x.transpose();
        x += xt;
        x *= 0.5;
        x
    }

    /// Schur-complement elimination of every bus not in `keep`.
    pub fn kron_reduce(&self, keep: &[usize]) -> Result<BbusMatrix> {
        kron_reduce(self, keep)
    }
}

/// Kron-reduce `b` onto the bus ids in `keep`. Eliminated buses are assumed
/// to carry no controllable injection. Rows of the result keep the relative
/// order they had in `b`.
pub fn kron_reduce(b: &BbusMatrix, keep: &[usize]) -> Result<BbusMatrix> {
    if keep.is_empty() {
        return Err(Error::EmptyKeepSet);
    }
    let mut keep_mask = vec![false; b.n()];
    for &bus in keep {
        let row = b.row_of_bus(bus).ok_or(Error::NotInMatrix(bus))?;
        keep_mask[row] = true;
    }
    let kept: Vec<usize> = (0..b.n()).filter(|&i| keep_mask[i]).collect();
    let elim: Vec<usize> = (0..b.n()).filter(|&i| !keep_mask[i]).collect();

    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| b.matrix[(rows[r], cols[c])])
    };
    let b_kk = sub(&kept, &kept);
    let g_k = DVector::from_iterator(kept.len(), kept.iter().map(|&i| b.root_coupling[i]));
    let bus_ids: Vec<usize> = kept.iter().map(|&i| b.bus_ids[i]).collect();

    if elim.is_empty() {
        return BbusMatrix::from_parts(b_kk, bus_ids, g_k.as_slice().to_vec());
    }

    let b_ke = sub(&kept, &elim);
    let b_ee = sub(&elim, &elim);
    let g_e = DVector::from_iterator(elim.len(), elim.iter().map(|&i| b.root_coupling[i]));
    let chol_ee = Cholesky::new(b_ee).ok_or(Error::SingularBlock)?;

    let b_ek = b_ke.transpose();
    let reduced = &b_kk - &b_ke * chol_ee.solve(&b_ek);
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let g_red = &g_k - &b_ke * chol_ee.solve(&g_e);

    BbusMatrix::from_parts(reduced, bus_ids, g_red.as_slice().to_vec())
}
