//! Exact solver for the dispatch problem, and slower independent solvers used
//! to check it.
//!
//! The optimum is the Euclidean projection of `p_cap` onto the constraint set.
//! When the net-output cap does not bind the answer is `p_cap` itself;
//! otherwise every agent gives up the same amount `λ` of its capability,
//! clipped at zero, with `λ` found by bisection on the total.

use std::time::{Duration, Instant};

use crate::composite;
use crate::error::{Error, Result};
use crate::neural::ModelParams;
use crate::ops::{symmetric_sum, symmetric_sum_by};
use crate::problem::{feasibility_gap, objective, DecisionVector, ProblemInstance, FEASIBILITY_TOL};

/// Sum tolerance (kW) for the bisection on `λ`.
pub const SUM_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

/// Which constraint determines the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// `p_cap` is feasible and optimal.
    None,
    /// The upper net-output side binds: `Σ u = Σ p_dem + p_omax`.
    NetOutputUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub u: DecisionVector,
    /// Common curtailment of unclipped agents (0 when nothing binds).
    pub lambda: f64,
    pub binding: Binding,
}

/// Unique optimum of the dispatch problem.
pub fn solve_exact(instance: &ProblemInstance) -> Result<DecisionVector> {
    Ok(solve_exact_detailed(instance)?.u)
}

pub fn solve_exact_detailed(instance: &ProblemInstance) -> Result<ExactSolution> {
    instance.validate()?;
    if !instance.is_feasible() {
        return Err(Error::Infeasible(format!(
            "total capability {} cannot reach demand minus net-output cap {}",
            instance.total_cap(),
            instance.total_dem() - instance.p_omax
        )));
    }
    let caps = instance.p_cap();
    let surplus = symmetric_sum_by(caps.len(), |i| caps[i] - instance.agents[i].p_dem);
    // A surplus below −p_omax is exactly the infeasible case rejected above, so
    // the lower side never binds at the optimum.
    if surplus <= instance.p_omax {
        return Ok(ExactSolution {
            u: DecisionVector(caps),
            lambda: 0.0,
            binding: Binding::None,
        });
    }

    let target = instance.total_dem() + instance.p_omax;
    let supplied = |lambda: f64| symmetric_sum_by(caps.len(), |i| (caps[i] - lambda).max(0.0));
    let mut lo = 0.0;
    let mut hi = caps.iter().copied().fold(0.0, f64::max);
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        lambda = 0.5 * (lo + hi);
        let s = supplied(lambda);
        if (s - target).abs() <= SUM_TOL || !(lo < lambda && lambda < hi) {
            break;
        }
        if s > target {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    // With the active set known, λ has a closed form; keep it if it reproduces
    // the same active set.
    let active: Vec<f64> = caps.iter().copied().filter(|&c| c > lambda).collect();
    if !active.is_empty() {
        let exact = (symmetric_sum(&active) - target) / active.len() as f64;
        let same_set = caps.iter().all(|&c| (c > lambda) == (c > exact));
        if same_set && exact >= 0.0 {
            lambda = exact;
        }
    }
    let u = DecisionVector(caps.iter().map(|&c| (c - lambda).max(0.0)).collect());
    Ok(ExactSolution {
        u,
        lambda,
        binding: Binding::NetOutputUpper,
    })
}

/// Largest `N` handled by exhaustive active-set enumeration.
pub const ENUMERATION_MAX_AGENTS: usize = 6;

/// Slow reference solver, used only to check [`solve_exact`].
///
/// For `N ≤ 6` every combination of active constraints is enumerated and each
/// candidate KKT point is solved in closed form; the best feasible one wins.
/// Larger instances fall back to projected gradient with the given step size.
pub fn solve_bruteforce(instance: &ProblemInstance, step: f64) -> Result<DecisionVector> {
    instance.validate()?;
    if instance.len() <= ENUMERATION_MAX_AGENTS {
        solve_by_enumeration(instance)
    } else {
        solve_projected_gradient(instance, step, 100_000)
    }
}

#[derive(Clone, Copy)]
enum AgentState {
    AtZero,
    AtCap,
    Free,
}

pub fn solve_by_enumeration(instance: &ProblemInstance) -> Result<DecisionVector> {
    let n = instance.len();
    let caps = instance.p_cap();
    let total_dem: f64 = instance.p_dem().iter().sum();
    let sum_targets = [
        None,
        Some(total_dem + instance.p_omax),
        Some(total_dem - instance.p_omax),
    ];
    let mut best: Option<(f64, DecisionVector)> = None;
    let mut states = vec![AgentState::AtZero; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for s in states.iter_mut() {
            *s = match c % 3 {
                0 => AgentState::AtZero,
                1 => AgentState::AtCap,
                _ => AgentState::Free,
            };
            c /= 3;
        }
        for target in sum_targets {
            let Some(u) = kkt_candidate(&caps, &states, target) else {
                continue;
            };
            let u = DecisionVector(u);
            if feasibility_gap(instance, &u)? > FEASIBILITY_TOL {
                continue;
            }
            let f = objective(instance, &u)?;
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, u));
            }
        }
    }
    best.map(|(_, u)| u)
        .ok_or_else(|| Error::Infeasible("no feasible active set".into()))
}

fn kkt_candidate(caps: &[f64], states: &[AgentState], sum_target: Option<f64>) -> Option<Vec<f64>> {
    let mut u: Vec<f64> = caps
        .iter()
        .zip(states)
        .map(|(&c, s)| match s {
            AgentState::AtZero => 0.0,
            AgentState::AtCap | AgentState::Free => c,
        })
        .collect();
    let Some(target) = sum_target else {
        return Some(u);
    };
    let free: Vec<usize> = (0..caps.len())
        .filter(|&i| matches!(states[i], AgentState::Free))
        .collect();
    let current: f64 = u.iter().sum();
    if free.is_empty() {
        return ((current - target).abs() <= FEASIBILITY_TOL).then_some(u);
    }
    let shift = (current - target) / free.len() as f64;
    for &i in &free {
        u[i] -= shift;
    }
    Some(u)
}

/// Projected gradient on the objective, with each projection onto
/// `{0 ≤ u ≤ p_cap} ∩ {|Σ(u − p_dem)| ≤ p_omax}` computed by Dykstra's
/// alternating projections between the box and the slab.
pub fn solve_projected_gradient(
    instance: &ProblemInstance,
    step: f64,
    max_iter: usize,
) -> Result<DecisionVector> {
    let caps = instance.p_cap();
    let total_dem: f64 = instance.p_dem().iter().sum();
    let (lo, hi) = (total_dem - instance.p_omax, total_dem + instance.p_omax);
    let mut u = dykstra(&vec![0.0; caps.len()], &caps, lo, hi)?;
    for _ in 0..max_iter {
        let moved: Vec<f64> = u
            .iter()
            .zip(&caps)
            .map(|(x, c)| x - step * 2.0 * (x - c))
            .collect();
        let next = dykstra(&moved, &caps, lo, hi)?;
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        if delta <= 1e-13 {
            return Ok(DecisionVector(u));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
    })
}

fn dykstra(y: &[f64], caps: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 100_000;
    let n = y.len() as f64;
    let mut x = y.to_vec();
    let mut p = vec![0.0; y.len()];
    let mut q = vec![0.0; y.len()];
    for _ in 0..MAX_ITER {
        let boxed: Vec<f64> = x
            .iter()
            .zip(&p)
            .zip(caps)
            .map(|((xi, pi), &c)| (xi + pi).clamp(0.0, c))
            .collect();
        for i in 0..x.len() {
            p[i] += x[i] - boxed[i];
        }
        let shifted: Vec<f64> = boxed.iter().zip(&q).map(|(b, qi)| b + qi).collect();
        let s: f64 = shifted.iter().sum();
        let shift = if s > hi {
            (s - hi) / n
        } else if s < lo {
            (s - lo) / n
        } else {
            0.0
        };
        let slab: Vec<f64> = shifted.iter().map(|v| v - shift).collect();
        for i in 0..x.len() {
            q[i] = shifted[i] - slab[i];
        }
        let change = slab
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = slab;
        let box_violation = x
            .iter()
            .zip(caps)
            .map(|(&v, &c)| (-v).max(v - c))
            .fold(0.0, f64::max);
        if change <= 1e-15 && box_violation <= 1e-12 {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
    })
}

/// Side-by-side wall-clock medians for one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingComparison {
    pub oracle: Duration,
    pub model: Duration,
}

/// Number of repetitions whose median is reported.
pub const TIMING_REPEATS: usize = 11;

/// Median-of-11 wall-clock for the exact solver and for model inference
/// (forward pass plus gauge map) on the same instance.
pub fn time_solver(instance: &ProblemInstance, params: &ModelParams) -> Result<TimingComparison> {
    time_solver_with(instance, params, TIMING_REPEATS)
}

pub fn time_solver_with(
    instance: &ProblemInstance,
    params: &ModelParams,
    repeats: usize,
) -> Result<TimingComparison> {
    let oracle = median_time(repeats, || solve_exact(instance).map(drop))?;
    let model = median_time(repeats, || composite::predict(params, instance).map(drop))?;
    Ok(TimingComparison { oracle, model })
}

pub(crate) fn median_time(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Duration> {
    let mut samples = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed());
    }
    samples.sort_unstable();
    Ok(samples[samples.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Permutation, Permute};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(cap: &[f64], dem: &[f64], p_omax: f64) -> ProblemInstance {
        ProblemInstance::from_slices(cap, dem, p_omax).unwrap()
    }

    fn random_feasible(rng: &mut ChaCha8Rng, n: usize) -> ProblemInstance {
        loop {
            let cap: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..30.0)).collect();
            let dem: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
            let x = inst(&cap, &dem, rng.random_range(1.0..60.0));
            if x.is_feasible() {
                return x;
            }
        }
    }

    #[test]
    fn unconstrained_optimum_is_capability() {
        let x = inst(&[20.0, 20.0], &[5.0, 5.0], 100.0);
        let sol = solve_exact_detailed(&x).unwrap();
        assert_eq!(sol.u.0, vec![20.0, 20.0]);
        assert_eq!(sol.binding, Binding::None);
        assert_eq!(solve_bruteforce(&x, 1e-2).unwrap().0, vec![20.0, 20.0]);
    }

    #[test]
    fn symmetric_curtailment() {
        let x = inst(&[20.0, 20.0], &[0.0, 0.0], 10.0);
        let sol = solve_exact_detailed(&x).unwrap();
        assert_eq!(sol.u.0, vec![5.0, 5.0]);
        assert_eq!(sol.lambda, 15.0);
        assert_eq!(objective(&x, &sol.u).unwrap(), 450.0);
        assert!(solve_bruteforce(&x, 1e-2).unwrap().max_abs_diff(&sol.u) <= 1e-9);
    }

    #[test]
    fn small_agent_clipped_at_zero() {
        let x = inst(&[30.0, 10.0], &[0.0, 0.0], 10.0);
        let sol = solve_exact_detailed(&x).unwrap();
        assert_eq!(sol.u.0, vec![10.0, 0.0]);
        assert_eq!(sol.lambda, 20.0);
        assert!(solve_bruteforce(&x, 1e-2).unwrap().max_abs_diff(&sol.u) <= 1e-9);
    }

    #[test]
    fn single_agent_capped_by_net_output() {
        let x = inst(&[10.0], &[0.0], 4.0);
        assert_eq!(solve_exact(&x).unwrap().0, vec![4.0]);
        assert!((solve_bruteforce(&x, 1e-2).unwrap().0[0] - 4.0).abs() <= 1e-9);
    }

    #[test]
    fn infeasible_rejected() {
        let x = ProblemInstance {
            p_omax: 50.0,
            agents: vec![crate::problem::AgentInput {
                p_cap: 10.0,
                p_dem: 200.0,
            }],
        };
        assert!(matches!(solve_exact(&x), Err(Error::Infeasible(_))));
        assert!(solve_bruteforce(&x, 1e-2).is_err());
    }

    #[test]
    fn lower_side_boundary_returns_capability() {
        // Σ(p_cap − p_dem) = −p_omax exactly: p_cap is feasible and optimal.
        let x = inst(&[10.0, 10.0], &[30.0, 40.0], 50.0);
        assert_eq!(solve_exact(&x).unwrap().0, vec![10.0, 10.0]);
    }

    #[test]
    fn kkt_stationarity_and_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(1..=20);
            let x = random_feasible(&mut rng, n);
            let sol = solve_exact_detailed(&x).unwrap();
            assert!(feasibility_gap(&x, &sol.u).unwrap() <= 1e-9);
            if sol.binding == Binding::NetOutputUpper {
                for (u, a) in sol.u.0.iter().zip(&x.agents) {
                    if *u > 0.0 {
                        assert!((a.p_cap - u - sol.lambda).abs() <= 1e-9);
                    } else {
                        assert!(a.p_cap <= sol.lambda + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn equivariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let x = random_feasible(&mut rng, n);
            let p = Permutation::random(n, &mut rng);
            let a = solve_exact(&x.permute(&p).unwrap()).unwrap();
            let b = solve_exact(&x).unwrap().permute(&p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn projected_gradient_agrees_on_larger_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x = random_feasible(&mut rng, 9);
            let exact = solve_exact(&x).unwrap();
            let pg = solve_bruteforce(&x, 1e-2).unwrap();
            assert!(pg.max_abs_diff(&exact) <= 1e-6, "{pg:?} vs {exact:?}");
            let (fe, fp) = (objective(&x, &exact).unwrap(), objective(&x, &pg).unwrap());
            assert!(fe <= fp + 1e-6 * (1.0 + fp));
        }
    }
}
