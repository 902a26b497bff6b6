//! Null-space elimination of per-agent equality rows.
//!
//! Each agent's `A_eq u + B_eq = 0` is row-reduced with partial pivoting; the
//! solutions are `u = particular + basis · z` with `z` free. The agent's
//! inequality and coupled rows are then rewritten over `z`, leaving a problem
//! with independent variables only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{AgentBlock, GeneralLinearSpec};

/// Pivots smaller than this in magnitude are treated as zero.
pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EliminationMap {
    /// Stacked particular solution over all original variables.
    pub particular: DVector<f64>,
    /// Block-diagonal null-space basis, original variables × reduced variables.
    pub basis: DMatrix<f64>,
    pub reduced_spec: GeneralLinearSpec,
}

impl EliminationMap {
    pub fn n_reduced(&self) -> usize {
        self.basis.ncols()
    }

    /// `particular + basis · z`.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_reduced() {
            return Err(Error::DimensionMismatch {
                expected: self.n_reduced(),
                got: z.len(),
            });
        }
        let z = DVector::from_column_slice(z);
        Ok((&self.particular + &self.basis * z).as_slice().to_vec())
    }
}

pub fn eliminate_equalities(spec: &GeneralLinearSpec) -> Result<EliminationMap> {
    let parts = spec
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            null_space_split(&b.a_eq, &b.b_eq).map_err(|e| match e {
                Error::Infeasible(msg) => Error::Infeasible(format!("agent {i}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_vars = spec.n_vars();
    let n_reduced: usize = parts.iter().map(|(_, n)| n.ncols()).sum();
    let mut particular = DVector::zeros(n_vars);
    let mut basis = DMatrix::zeros(n_vars, n_reduced);
    let mut blocks = Vec::with_capacity(parts.len());
    let (mut row, mut col) = (0, 0);
    for (b, (p, nb)) in spec.blocks().iter().zip(&parts) {
        particular.rows_mut(row, p.len()).copy_from(p);
        basis.view_mut((row, col), nb.shape()).copy_from(nb);
        row += p.len();
        col += nb.ncols();
        blocks.push(AgentBlock {
            a_eq: DMatrix::zeros(0, nb.ncols()),
            b_eq: DVector::zeros(0),
            a_ineq: &b.a_ineq * nb,
            b_ineq: &b.a_ineq * p + &b.b_ineq,
            a_coupled: &b.a_coupled * nb,
            b_coupled: &b.a_coupled * p + &b.b_coupled,
        });
    }
    Ok(EliminationMap {
        particular,
        basis,
        reduced_spec: GeneralLinearSpec::new(blocks)?,
    })
}

/// Particular solution (free variables at zero) and null-space basis of
/// `a u + b = 0`, by reduction to row echelon form with partial pivoting.
fn null_space_split(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    let mut aug = DMatrix::zeros(m, n + 1);
    aug.view_mut((0, 0), (m, n)).copy_from(a);
    aug.set_column(n, &(-b));

    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..n {
        if r == m {
            break;
        }
        let (offset, best) = aug
            .view((r, c), (m - r, 1))
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            });
        if best < PIVOT_TOL {
            continue;
        }
        aug.swap_rows(r, r + offset);
        let pivot = aug[(r, c)];
        for k in c..=n {
            aug[(r, k)] /= pivot;
        }
        for i in 0..m {
            if i != r {
                let f = aug[(i, c)];
                if f != 0.0 {
                    for k in c..=n {
                        aug[(i, k)] -= f * aug[(r, k)];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }

    let scale = 1.0 + b.amax();
    for i in r..m {
        if aug[(i, n)].abs() > PIVOT_TOL * scale {
            return Err(Error::Infeasible(format!(
                "equality rows are inconsistent (residual {:e})",
                aug[(i, n)]
            )));
        }
    }

    let mut particular = DVector::zeros(n);
    for (i, &c) in pivots.iter().enumerate() {
        particular[c] = aug[(i, n)];
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut basis = DMatrix::zeros(n, free.len());
    for (j, &f) in free.iter().enumerate() {
        basis[(f, j)] = 1.0;
        for (i, &c) in pivots.iter().enumerate() {
            basis[(c, j)] = -aug[(i, f)];
        }
    }
    Ok((particular, basis))
}
