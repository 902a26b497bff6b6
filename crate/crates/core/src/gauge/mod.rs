//! Closed-form feasibility layer.
//!
//! Given a strictly interior point `u0` of the constraint polytope, every
//! inequality is written relative to it as `a_r · z ≤ h_r` with `h_r > 0`
//! (`z = u − u0`). The gauge of a direction is `ψ(v) = max(0, max_r a_r·v / h_r)`
//! and the map
//!
//! ```text
//! T(v) = u0 + v / max(1, ψ(v))
//! ```
//!
//! leaves points inside the polytope alone and pulls outside points back along
//! the ray from `u0` onto the boundary. No iteration, no solver.

mod elimination;

pub use elimination::{eliminate_equalities, EliminationMap, PIVOT_TOL};

use crate::error::{Error, Result};
use crate::ops::{symmetric_sum, symmetric_sum_by, tally};
use crate::problem::{DecisionVector, ProblemInstance};

/// Margin keeping the interior-point scale factor away from 0 and 1.
pub const INTERIOR_MARGIN: f64 = 1e-3;

/// Coefficient pattern of one normalized row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowSupport {
    /// `sign · v_agent`
    Agent { agent: usize, sign: f64 },
    /// `sign · Σ_i v_i`
    AllAgents { sign: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeRow {
    pub support: RowSupport,
    /// Slack of `u0` on this row; strictly positive.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeData {
    pub u0: DecisionVector,
    /// Canonical order: per agent (upper box, lower box), then coupled (upper, lower).
    pub rows: Vec<GaugeRow>,
}

/// Scaled-capacity interior point `u0 = t · p_cap`.
///
/// `t` is the midpoint of `((Σd − P)/Σc, (Σd + P)/Σc) ∩ (ε, 1 − ε)`. Every term
/// is either per-agent or a symmetric sum, so permuting the agents permutes
/// `u0` bit for bit.
pub fn compute_interior_point(instance: &ProblemInstance) -> Result<DecisionVector> {
    let total_cap = instance.total_cap();
    let total_dem = instance.total_dem();
    let lo = ((total_dem - instance.p_omax) / total_cap).max(INTERIOR_MARGIN);
    let hi = ((total_dem + instance.p_omax) / total_cap).min(1.0 - INTERIOR_MARGIN);
    // Written as a negated comparison so NaN bounds also fail.
    if !(lo < hi) {
        return Err(Error::Infeasible(format!(
            "no interior scale factor: interval ({lo}, {hi}) is empty"
        )));
    }
    let t = 0.5 * (lo + hi);
    tally(6 + instance.len());
    Ok(DecisionVector(
        instance.agents.iter().map(|a| t * a.p_cap).collect(),
    ))
}

/// Normalized rows of the box and net-output constraints around `u0`.
pub fn build_gauge_data(instance: &ProblemInstance, u0: &DecisionVector) -> Result<GaugeData> {
    let n = instance.len();
    if u0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u0.len(),
        });
    }
    let mut rows = Vec::with_capacity(2 * n + 2);
    for (i, (a, &u)) in instance.agents.iter().zip(&u0.0).enumerate() {
        rows.push(GaugeRow {
            support: RowSupport::Agent { agent: i, sign: 1.0 },
            slack: a.p_cap - u,
        });
        rows.push(GaugeRow {
            support: RowSupport::Agent { agent: i, sign: -1.0 },
            slack: u,
        });
    }
    let net = symmetric_sum_by(n, |i| u0.0[i] - instance.agents[i].p_dem);
    rows.push(GaugeRow {
        support: RowSupport::AllAgents { sign: 1.0 },
        slack: instance.p_omax - net,
    });
    rows.push(GaugeRow {
        support: RowSupport::AllAgents { sign: -1.0 },
        slack: instance.p_omax + net,
    });
    tally(4 * n + 4);
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| !(r.slack > 0.0)) {
        return Err(Error::NonInterior {
            row,
            slack: r.slack,
        });
    }
    Ok(GaugeData {
        u0: u0.clone(),
        rows,
    })
}

/// Interior point and rows in one step.
pub fn gauge_for(instance: &ProblemInstance) -> Result<GaugeData> {
    let u0 = compute_interior_point(instance)?;
    build_gauge_data(instance, &u0)
}

/// Gauge value and the first row attaining the row maximum (`None` when the
/// maximum is clamped at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeEval {
    pub psi: f64,
    pub active_row: Option<usize>,
}

impl GaugeData {
    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `ψ(v)` together with the attaining row.
    pub fn evaluate(&self, v: &[f64]) -> Result<GaugeEval> {
        self.check(v)?;
        let total = symmetric_sum(v);
        let mut best = GaugeEval {
            psi: 0.0,
            active_row: None,
        };
        for (r, row) in self.rows.iter().enumerate() {
            let value = match row.support {
                RowSupport::Agent { agent, sign } => sign * v[agent],
                RowSupport::AllAgents { sign } => sign * total,
            } / row.slack;
            if value > best.psi {
                best = GaugeEval {
                    psi: value,
                    active_row: Some(r),
                };
            }
        }
        tally(2 * self.rows.len());
        if v.iter().any(|x| x.is_nan()) {
            best.psi = f64::NAN;
        }
        Ok(best)
    }

    /// Vector-Jacobian product of `T` at `v` for an upstream gradient on `u`.
    ///
    /// Inside the region `T` is a translation and the gradient passes through.
    /// Outside, `T(v) = u0 + v / ψ(v)` with `ψ` linear in `v` on the active row:
    /// `∂L/∂v = g/ψ − (g·v) a_r / (ψ² h_r)`. Ties take the first attaining row in
    /// canonical order.
    pub fn map_vjp(&self, v: &[f64], grad_u: &[f64]) -> Result<Vec<f64>> {
        self.check(grad_u)?;
        let eval = self.evaluate(v)?;
        let row = match eval.active_row {
            Some(r) if eval.psi > 1.0 => self.rows[r],
            _ => return Ok(grad_u.to_vec()),
        };
        let psi = eval.psi;
        let g_dot_v: f64 = grad_u.iter().zip(v).map(|(g, x)| g * x).sum();
        let coeff = g_dot_v / (psi * psi * row.slack);
        let mut out: Vec<f64> = grad_u.iter().map(|g| g / psi).collect();
        match row.support {
            RowSupport::Agent { agent, sign } => out[agent] -= coeff * sign,
            RowSupport::AllAgents { sign } => out.iter_mut().for_each(|o| *o -= coeff * sign),
        }
        Ok(out)
    }
}

/// `ψ(v) = max(0, max_r a_r·v / h_r)`; `ψ(v) ≤ 1` iff `u0 + v` is feasible.
pub fn gauge_psi(gd: &GaugeData, v: &DecisionVector) -> Result<f64> {
    Ok(gd.evaluate(&v.0)?.psi)
}

/// `u0 + v / max(1, ψ(v))`.
pub fn gauge_map(gd: &GaugeData, v: &DecisionVector) -> Result<DecisionVector> {
    let psi = gauge_psi(gd, v)?;
    let scale = psi.max(1.0);
    tally(2 * v.len() + 1);
    Ok(DecisionVector(
        gd.u0
            .0
            .iter()
            .zip(&v.0)
            .map(|(u, x)| u + x / scale)
            .collect(),
    ))
}
