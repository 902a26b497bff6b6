//! Self-check suites run by `loop-pe check`.
//!
//! Each suite exercises one structural property on seeded random inputs and
//! reports pass/fail with the worst observed deviation. A [`Fault`] swaps in a
//! deliberately broken component so the suites can be shown to catch it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composite::loss_and_grad;
use crate::error::Result;
use crate::gauge::{gauge_for, gauge_map, gauge_psi, GaugeData};
use crate::neural::{forward_features, init_params, normalize_inputs, HyperParams, ModelParams, POWER_SCALE};
use crate::oracle::{solve_bruteforce, solve_exact};
use crate::problem::{feasibility_gap, objective, DecisionVector, Permutation, Permute, ProblemInstance};

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Adds an index-dependent offset to each agent's features.
    PositionalEncoding,
    /// Divides by the raw gauge instead of `max(1, ψ)`.
    MissingClamp,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Fault::None),
            "positional-encoding" => Ok(Fault::PositionalEncoding),
            "missing-clamp" => Ok(Fault::MissingClamp),
            other => Err(format!(
                "unknown fault `{other}` (expected none, positional-encoding, missing-clamp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {:<24} {}", self.name, self.detail)
    }
}

/// Random instance in the dataset's value ranges with a strictly feasible interior.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> ProblemInstance {
    loop {
        let cap: Vec<f64> = (0..n).map(|_| rng.random_range(9.0..27.5)).collect();
        let dem: Vec<f64> = (0..n).map(|_| rng.random_range(9.0..27.5)).collect();
        let x = ProblemInstance::from_slices(&cap, &dem, 100.0).expect("valid ranges");
        if gauge_for(&x).is_ok() {
            return x;
        }
    }
}

fn model_output(params: &ModelParams, x: &ProblemInstance, fault: Fault) -> Result<Vec<f64>> {
    let mut features = normalize_inputs(x);
    if fault == Fault::PositionalEncoding {
        for i in 0..features.nrows() {
            features[(i, 0)] += 0.05 * i as f64;
        }
    }
    Ok(forward_features(params, features)?.0)
}

fn feasibility_map(gd: &GaugeData, v: &DecisionVector, fault: Fault) -> Result<DecisionVector> {
    if fault == Fault::MissingClamp {
        let psi = gauge_psi(gd, v)?;
        return Ok(DecisionVector(
            gd.u0.0.iter().zip(&v.0).map(|(u, x)| u + x / psi).collect(),
        ));
    }
    gauge_map(gd, v)
}

fn composed(params: &ModelParams, x: &ProblemInstance, fault: Fault) -> Result<DecisionVector> {
    let gd = gauge_for(x)?;
    let v = DecisionVector(model_output(params, x, fault)?);
    feasibility_map(&gd, &v, fault)
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, |m, d| if d.is_nan() || m.is_nan() { f64::NAN } else { m.max(d) })
}

fn verdict(name: &'static str, outcome: Result<(bool, String)>) -> SuiteResult {
    match outcome {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Composed model within 1e−6 kW; gauge map and oracle bit for bit.
pub fn equivariance_suite(seed: u64, fault: Fault) -> SuiteResult {
    verdict("equivariance", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst_model, mut bitwise_ok) = (0.0f64, true);
        for t in 0..100 {
            let params = init_params(HyperParams { d_h: 16, ..HyperParams::default() }, seed ^ t)?;
            let n = rng.random_range(1..=20);
            let x = random_instance(&mut rng, n);
            // Start from a non-identity permutation so a defect cannot hide.
            let sigma = loop {
                let p = Permutation::random(n, &mut rng);
                if n == 1 || p != Permutation::identity(n) {
                    break p;
                }
            };
            let px = x.permute(&sigma)?;

            let a = composed(&params, &px, fault)?;
            let b = composed(&params, &x, fault)?.permute(&sigma)?;
            let err = max_abs(&a.0, &b.0);
            worst_model = if err.is_nan() { f64::NAN } else { worst_model.max(err) };

            let v = DecisionVector((0..n).map(|_| rng.random_range(-50.0..50.0)).collect());
            let gauge_a = feasibility_map(&gauge_for(&px)?, &v.permute(&sigma)?, fault)?;
            let gauge_b = feasibility_map(&gauge_for(&x)?, &v, fault)?.permute(&sigma)?;
            let oracle_a = solve_exact(&px)?;
            let oracle_b = solve_exact(&x)?.permute(&sigma)?;
            let same_bits = |p: &DecisionVector, q: &DecisionVector| {
                p.0.iter().zip(&q.0).all(|(s, t)| s.to_bits() == t.to_bits())
            };
            bitwise_ok &= same_bits(&gauge_a, &gauge_b) && same_bits(&oracle_a, &oracle_b);
        }
        Ok((
            worst_model <= 1e-6 && bitwise_ok,
            format!("model max dev {worst_model:.3e} kW, gauge/oracle bitwise {bitwise_ok}"),
        ))
    })())
}

/// Untrained weights still yield feasible decisions.
pub fn feasibility_suite(seed: u64, fault: Fault) -> SuiteResult {
    verdict("feasibility", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut worst = 0.0f64;
        for k in 0..10 {
            let params = init_params(HyperParams { d_h: 16, ..HyperParams::default() }, seed.wrapping_mul(31) + k)?;
            for _ in 0..100 {
                let n = rng.random_range(1..=20);
                let x = random_instance(&mut rng, n);
                let gap = feasibility_gap(&x, &composed(&params, &x, fault)?)?;
                worst = if gap.is_nan() { f64::INFINITY } else { worst.max(gap) };
            }
        }
        Ok((worst <= 1e-6, format!("max gap {worst:.3e} kW over 1000 samples")))
    })())
}

/// Identity at `v = 0` and inside, boundary law outside, positive homogeneity.
pub fn gauge_suite(seed: u64, fault: Fault) -> SuiteResult {
    verdict("gauge laws", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let (mut zero_ok, mut inside_ok) = (true, true);
        let (mut boundary_dev, mut homog_dev) = (0.0f64, 0.0f64);
        for _ in 0..500 {
            let n = rng.random_range(1..=20);
            let x = random_instance(&mut rng, n);
            let gd = gauge_for(&x)?;
            zero_ok &= feasibility_map(&gd, &DecisionVector::zeros(n), fault)? == gd.u0;

            let scale = 10f64.powf(rng.random_range(-1.0..2.0));
            let v = DecisionVector((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect());
            let psi = gauge_psi(&gd, &v)?;
            let u = feasibility_map(&gd, &v, fault)?;
            if psi <= 1.0 {
                let shifted: Vec<f64> = gd.u0.0.iter().zip(&v.0).map(|(a, b)| a + b).collect();
                inside_ok &= u.0 == shifted;
            } else {
                let back = DecisionVector(u.0.iter().zip(&gd.u0.0).map(|(a, b)| a - b).collect());
                boundary_dev = boundary_dev.max((gauge_psi(&gd, &back)? - 1.0).abs());
            }
            for alpha in [0.5, 2.0, 10.0] {
                let scaled = DecisionVector(v.0.iter().map(|x| alpha * x).collect());
                let lhs = gauge_psi(&gd, &scaled)?;
                let rhs = alpha * psi;
                homog_dev = homog_dev.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
            }
        }
        let passed = zero_ok && inside_ok && boundary_dev <= 1e-8 && homog_dev <= 1e-10;
        Ok((
            passed,
            format!(
                "v=0 -> u0 {zero_ok}, inside identity {inside_ok}, boundary dev {boundary_dev:.2e}, homogeneity dev {homog_dev:.2e}"
            ),
        ))
    })())
}

/// Exact solver against exhaustive active-set enumeration.
pub fn oracle_suite(seed: u64) -> SuiteResult {
    verdict("oracle cross-check", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let (mut worst_u, mut worst_obj) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let n = rng.random_range(2..=5);
            // Smaller net-output caps than the dataset so the binding branch is exercised.
            let mut x = random_instance(&mut rng, n);
            x.p_omax = rng.random_range(1.0..40.0);
            if !x.is_feasible() {
                continue;
            }
            let exact = solve_exact(&x)?;
            let brute = solve_bruteforce(&x, 1e-2)?;
            worst_u = worst_u.max(exact.max_abs_diff(&brute));
            let (fe, fb) = (objective(&x, &exact)?, objective(&x, &brute)?);
            worst_obj = worst_obj.max((fe - fb) / fb.abs().max(1.0));
        }
        Ok((
            worst_u <= 1e-4 && worst_obj <= 1e-6,
            format!("max |u_exact - u_bf| {worst_u:.2e} kW, objective excess {worst_obj:.2e}"),
        ))
    })())
}

/// Relative error of the analytic gradient through gauge and network against
/// central differences.
pub fn gradient_suite(seed: u64) -> SuiteResult {
    verdict("gradient", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let hyper = HyperParams { d_h: 8, ..HyperParams::default() };
        let normalized_loss = |u: &DecisionVector, x: &ProblemInstance| -> Result<(f64, Vec<f64>)> {
            let s = POWER_SCALE * POWER_SCALE;
            let f = objective(x, u)? / s;
            Ok((f, u.0.iter().zip(&x.agents).map(|(v, a)| 2.0 * (v - a.p_cap) / s).collect()))
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut attempt = 0u64;
        while checked < 20 {
            attempt += 1;
            let params = init_params(hyper, seed.wrapping_add(attempt))?;
            let x = random_instance(&mut rng, 3);
            let gd = gauge_for(&x)?;
            let v = DecisionVector(model_output(&params, &x, Fault::None)?);
            if (gauge_psi(&gd, &v)? - 1.0).abs() <= 0.05 {
                continue;
            }
            let (_, grads) = loss_and_grad(&params, &x, &gd, |u| normalized_loss(u, &x))?;
            let analytic = grads.flatten();
            let idx = rng.random_range(0..analytic.len());
            let h = 1e-4;
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                *p.scalar_mut(idx).expect("index in range") += delta;
                let u = crate::composite::predict_with_gauge(&p, &x, &gd)?.u;
                Ok(normalized_loss(&u, &x)?.0)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            checked += 1;
        }
        Ok((worst <= 1e-4, format!("max relative error {worst:.2e} over {checked} coordinates")))
    })())
}

pub fn run_all(seed: u64, fault: Fault) -> Vec<SuiteResult> {
    vec![
        equivariance_suite(seed, fault),
        feasibility_suite(seed, fault),
        gauge_suite(seed, fault),
        oracle_suite(seed),
        gradient_suite(seed),
    ]
}
