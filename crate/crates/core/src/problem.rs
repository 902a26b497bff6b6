//! Problem representation for set-structured VPP dispatch.
//!
//! An instance is an unordered set of agents, each with a generation capability
//! and a load demand, plus a bound on the net output of the whole plant:
//!
//! ```text
//! min  Σ_i (u_i − p_cap_i)²
//! s.t. 0 ≤ u_i ≤ p_cap_i                      (local box)
//!      −p_omax ≤ Σ_i (u_i − p_dem_i) ≤ p_omax  (coupled net output)
//! ```
//!
//! Agents are stored in a `Vec` but nothing downstream may depend on that order.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{symmetric_sum, symmetric_sum_by};

/// Tolerance (kW) under which a constraint violation counts as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Inputs of one agent, in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentInput {
    pub p_cap: f64,
    pub p_dem: f64,
}

impl AgentInput {
    pub fn new(p_cap: f64, p_dem: f64) -> Result<Self> {
        let agent = AgentInput { p_cap, p_dem };
        agent.validate()?;
        Ok(agent)
    }

    fn validate(&self) -> Result<()> {
        if !(self.p_cap.is_finite() && self.p_cap > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "p_cap must be finite and > 0, got {}",
                self.p_cap
            )));
        }
        if !(self.p_dem.is_finite() && self.p_dem >= 0.0) {
            return Err(Error::InvalidInstance(format!(
                "p_dem must be finite and >= 0, got {}",
                self.p_dem
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub p_omax: f64,
    pub agents: Vec<AgentInput>,
}

impl ProblemInstance {
    pub fn new(agents: Vec<AgentInput>, p_omax: f64) -> Result<Self> {
        let instance = ProblemInstance { p_omax, agents };
        instance.validate()?;
        Ok(instance)
    }

    /// Convenience constructor from parallel capability/demand slices.
    pub fn from_slices(p_cap: &[f64], p_dem: &[f64], p_omax: f64) -> Result<Self> {
        if p_cap.len() != p_dem.len() {
            return Err(Error::DimensionMismatch {
                expected: p_cap.len(),
                got: p_dem.len(),
            });
        }
        let agents = p_cap
            .iter()
            .zip(p_dem)
            .map(|(&c, &d)| AgentInput { p_cap: c, p_dem: d })
            .collect();
        Self::new(agents, p_omax)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidInstance("instance has no agents".into()));
        }
        if !(self.p_omax.is_finite() && self.p_omax > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "p_omax must be finite and > 0, got {}",
                self.p_omax
            )));
        }
        self.agents.iter().try_for_each(AgentInput::validate)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn p_cap(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.p_cap).collect()
    }

    pub fn p_dem(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.p_dem).collect()
    }

    pub fn total_cap(&self) -> f64 {
        symmetric_sum_by(self.len(), |i| self.agents[i].p_cap)
    }

    pub fn total_dem(&self) -> f64 {
        symmetric_sum_by(self.len(), |i| self.agents[i].p_dem)
    }

    /// Whether the constraint set is nonempty.
    ///
    /// The upper coupled side is always reachable with `u = 0` (demands are
    /// nonnegative), so only the lower side can fail: the plant must be able to
    /// cover `Σ p_dem − p_omax` from its capability.
    pub fn is_feasible(&self) -> bool {
        self.total_dem() - self.p_omax <= self.total_cap()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: n,
            });
        }
        Ok(())
    }
}

/// Per-agent decision (generation, kW), in the same order as the instance's agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector(pub Vec<f64>);

impl DecisionVector {
    pub fn zeros(n: usize) -> Self {
        DecisionVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        symmetric_sum_by(self.len(), |i| self.0[i] * self.0[i])
    }

    pub fn max_abs_diff(&self, other: &DecisionVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for DecisionVector {
    fn from(v: Vec<f64>) -> Self {
        DecisionVector(v)
    }
}

/// A cost over an instance and a decision. `WastedResource` is the only one
/// instantiated; the trait is the seam for other separable costs.
pub trait Objective {
    fn value(&self, instance: &ProblemInstance, u: &DecisionVector) -> Result<f64>;

    /// Gradient of `value` with respect to `u`.
    fn gradient(&self, instance: &ProblemInstance, u: &DecisionVector) -> Result<Vec<f64>>;
}

/// `Σ (u_i − p_cap_i)²`: squared shortfall from full capability.
#[derive(Debug, Clone, Copy, Default)]
pub struct WastedResource;

impl Objective for WastedResource {
    fn value(&self, instance: &ProblemInstance, u: &DecisionVector) -> Result<f64> {
        instance.check_len(u.len())?;
        Ok(symmetric_sum_by(u.len(), |i| {
            let d = u.0[i] - instance.agents[i].p_cap;
            d * d
        }))
    }

    fn gradient(&self, instance: &ProblemInstance, u: &DecisionVector) -> Result<Vec<f64>> {
        instance.check_len(u.len())?;
        Ok(u.0
            .iter()
            .zip(&instance.agents)
            .map(|(ui, a)| 2.0 * (ui - a.p_cap))
            .collect())
    }
}

/// Wasted-resource objective in kW².
pub fn objective(instance: &ProblemInstance, u: &DecisionVector) -> Result<f64> {
    WastedResource.value(instance, u)
}

/// Largest constraint violation in kW (0 when feasible).
pub fn feasibility_gap(instance: &ProblemInstance, u: &DecisionVector) -> Result<f64> {
    instance.check_len(u.len())?;
    let mut worst = 0.0f64;
    for (ui, a) in u.0.iter().zip(&instance.agents) {
        worst = worst.max(-ui).max(ui - a.p_cap);
    }
    let net = symmetric_sum_by(u.len(), |i| u.0[i] - instance.agents[i].p_dem);
    worst = worst.max(net - instance.p_omax).max(-net - instance.p_omax);
    // NaN compares false everywhere above; surface it rather than report 0.
    if u.0.iter().any(|x| !x.is_finite()) {
        return Ok(f64::INFINITY);
    }
    Ok(worst)
}

/// `‖u − u*‖² / ‖u*‖²`.
pub fn optimality_gap(u: &DecisionVector, u_star: &DecisionVector) -> Result<f64> {
    let (num, den) = gap_terms(u, u_star)?;
    if den == 0.0 {
        return Err(Error::UndefinedGap);
    }
    Ok(num / den)
}

/// Optimality gap that falls back to the absolute `‖u − u*‖²` when `‖u*‖ = 0`.
/// The flag is true when the fallback was taken.
pub fn optimality_gap_or_absolute(u: &DecisionVector, u_star: &DecisionVector) -> Result<(f64, bool)> {
    let (num, den) = gap_terms(u, u_star)?;
    if den == 0.0 {
        Ok((num, true))
    } else {
        Ok((num / den, false))
    }
}

fn gap_terms(u: &DecisionVector, u_star: &DecisionVector) -> Result<(f64, f64)> {
    if u.len() != u_star.len() {
        return Err(Error::DimensionMismatch {
            expected: u_star.len(),
            got: u.len(),
        });
    }
    let num = symmetric_sum_by(u.len(), |i| {
        let d = u.0[i] - u_star.0[i];
        d * d
    });
    Ok((num, u_star.norm_sq()))
}

/// A bijection on agent positions; output position `i` takes input position `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidPermutation(format!(
                    "{perm:?} is not a bijection on 0..{n}"
                )));
            }
            seen[p] = true;
        }
        Ok(Permutation { perm })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            perm: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Permutation { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Permutation { perm: inv }
    }

    pub fn apply_slice<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.perm.len() {
            return Err(Error::DimensionMismatch {
                expected: self.perm.len(),
                got: items.len(),
            });
        }
        Ok(self.perm.iter().map(|&p| items[p].clone()).collect())
    }
}

/// Things whose agent order can be permuted.
pub trait Permute: Sized {
    fn permute(&self, perm: &Permutation) -> Result<Self>;
}

impl Permute for ProblemInstance {
    fn permute(&self, perm: &Permutation) -> Result<Self> {
        Ok(ProblemInstance {
            p_omax: self.p_omax,
            agents: perm.apply_slice(&self.agents)?,
        })
    }
}

impl Permute for DecisionVector {
    fn permute(&self, perm: &Permutation) -> Result<Self> {
        Ok(DecisionVector(perm.apply_slice(&self.0)?))
    }
}

pub fn apply_permutation<T: Permute>(perm: &Permutation, item: &T) -> Result<T> {
    item.permute(perm)
}

/// Linear constraints of one agent over its own variables `u^i`:
/// `a_eq u + b_eq = 0`, `a_ineq u + b_ineq ≤ 0`, and its contribution
/// `a_coupled u + b_coupled` to the plant-wide rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBlock {
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_coupled: DMatrix<f64>,
    pub b_coupled: DVector<f64>,
}

impl AgentBlock {
    pub fn n_vars(&self) -> usize {
        self.a_ineq.ncols()
    }
}

/// Explicit matrix form: per-agent local rows plus coupled rows
/// `Σ_i (a_coupled^i u^i + b_coupled^i) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLinearSpec {
    blocks: Vec<AgentBlock>,
    n_coupled: usize,
}

impl GeneralLinearSpec {
    pub fn new(blocks: Vec<AgentBlock>) -> Result<Self> {
        let n_coupled = blocks.first().map_or(0, |b| b.a_coupled.nrows());
        for (i, b) in blocks.iter().enumerate() {
            let n = b.n_vars();
            let consistent = b.a_eq.ncols() == n
                && b.a_coupled.ncols() == n
                && b.a_eq.nrows() == b.b_eq.len()
                && b.a_ineq.nrows() == b.b_ineq.len()
                && b.a_coupled.nrows() == b.b_coupled.len()
                && b.a_coupled.nrows() == n_coupled;
            if !consistent {
                return Err(Error::InvalidInstance(format!(
                    "agent block {i} has inconsistent dimensions"
                )));
            }
        }
        Ok(GeneralLinearSpec { blocks, n_coupled })
    }

    pub fn blocks(&self) -> &[AgentBlock] {
        &self.blocks
    }

    pub fn n_coupled(&self) -> usize {
        self.n_coupled
    }

    pub fn n_vars(&self) -> usize {
        self.blocks.iter().map(AgentBlock::n_vars).sum()
    }

    /// Offsets of each agent's variables in the stacked vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.n_vars();
                o
            })
            .collect()
    }

    /// Largest violation over every equality (absolute residual), local
    /// inequality, and coupled row, for the stacked variable vector `u`.
    pub fn max_violation(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars(),
                got: u.len(),
            });
        }
        let offsets = self.offsets();
        let mut worst = 0.0f64;
        let mut coupled_terms = vec![Vec::with_capacity(self.blocks.len()); self.n_coupled];
        for (b, &o) in self.blocks.iter().zip(&offsets) {
            let ui = DVector::from_column_slice(&u[o..o + b.n_vars()]);
            let eq = &b.a_eq * &ui + &b.b_eq;
            worst = eq.iter().fold(worst, |w, r| w.max(r.abs()));
            let ineq = &b.a_ineq * &ui + &b.b_ineq;
            worst = ineq.iter().fold(worst, |w, &r| w.max(r));
            let coupled = &b.a_coupled * &ui + &b.b_coupled;
            for (terms, &c) in coupled_terms.iter_mut().zip(coupled.iter()) {
                terms.push(c);
            }
        }
        for terms in &coupled_terms {
            worst = worst.max(symmetric_sum(terms));
        }
        Ok(worst)
    }
}

/// Writes the dispatch problem in general per-agent matrix form.
///
/// Each agent owns one variable with box rows `−u ≤ 0` and `u − p_cap ≤ 0`.
/// The two coupled rows carry `±(u_i − p_dem_i) − p_omax / N` per agent, so the
/// agent sums reproduce `±Σ(u_i − p_dem_i) − p_omax ≤ 0`.
pub fn to_general_spec(instance: &ProblemInstance) -> GeneralLinearSpec {
    let share = instance.p_omax / instance.len() as f64;
    let blocks = instance
        .agents
        .iter()
        .map(|a| AgentBlock {
            a_eq: DMatrix::zeros(0, 1),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
            b_ineq: DVector::from_column_slice(&[0.0, -a.p_cap]),
            a_coupled: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            b_coupled: DVector::from_column_slice(&[-a.p_dem - share, a.p_dem - share]),
        })
        .collect();
    GeneralLinearSpec::new(blocks).expect("dispatch blocks are consistent")
}
