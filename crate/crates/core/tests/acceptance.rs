//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loop_pe::composite::{loss_and_grad, predict, predict_with_gauge};
use loop_pe::gauge::{eliminate_equalities, gauge_for, gauge_map, gauge_psi};
use loop_pe::neural::{forward, init_params, HyperParams, ModelParams};
use loop_pe::ops::count_ops;
use loop_pe::oracle::{solve_bruteforce, solve_exact, time_solver};
use loop_pe::pipeline::{evaluate_with, generate_dataset, train, DataGenConfig, TrainConfig};
use loop_pe::problem::{
    feasibility_gap, objective, AgentBlock, DecisionVector, GeneralLinearSpec, Permutation, Permute,
    ProblemInstance,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, p_omax: f64) -> ProblemInstance {
    loop {
        let cap: Vec<f64> = (0..n).map(|_| rng.random_range(9.0..27.5)).collect();
        let dem: Vec<f64> = (0..n).map(|_| rng.random_range(9.0..27.5)).collect();
        let x = ProblemInstance::from_slices(&cap, &dem, p_omax).unwrap();
        if gauge_for(&x).is_ok() {
            return x;
        }
    }
}

fn bits(u: &DecisionVector) -> Vec<u64> {
    u.0.iter().map(|x| x.to_bits()).collect()
}

fn structural_feasibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let params: Vec<ModelParams> = (0..10)
        .map(|s| init_params(HyperParams::default(), 1000 + s).unwrap())
        .collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let x = random_instance(&mut rng, n, 100.0);
        for p in &params {
            let gap = feasibility_gap(&x, &predict(p, &x).unwrap()).unwrap();
            worst = worst.max(gap);
            count += 1;
        }
    }
    ensure(worst <= 1e-6, format!("max feasibility gap {worst:.3e} kW over {count} predictions"))
}

fn permutation_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst, mut gauge_exact, mut oracle_exact) = (0.0f64, true, true);
    for t in 0..100 {
        let p = init_params(HyperParams::default(), 2000 + t).unwrap();
        let n = rng.random_range(1..=20);
        let x = random_instance(&mut rng, n, 100.0);
        let sigma = Permutation::random(n, &mut rng);
        let px = x.permute(&sigma).unwrap();

        let a = predict(&p, &px).unwrap();
        let b = predict(&p, &x).unwrap().permute(&sigma).unwrap();
        worst = worst.max(a.max_abs_diff(&b));

        let v = DecisionVector((0..n).map(|_| rng.random_range(-60.0..60.0)).collect());
        let ga = gauge_map(&gauge_for(&px).unwrap(), &v.permute(&sigma).unwrap()).unwrap();
        let gb = gauge_map(&gauge_for(&x).unwrap(), &v).unwrap().permute(&sigma).unwrap();
        gauge_exact &= bits(&ga) == bits(&gb);

        // Tighter cap so the clipped-shift branch is exercised too.
        let mut tight = x.clone();
        tight.p_omax = rng.random_range(1.0..60.0);
        if tight.is_feasible() {
            let oa = solve_exact(&tight.permute(&sigma).unwrap()).unwrap();
            let ob = solve_exact(&tight).unwrap().permute(&sigma).unwrap();
            oracle_exact &= bits(&oa) == bits(&ob);
        }
    }
    ensure(
        worst <= 1e-6 && gauge_exact && oracle_exact,
        format!("model max dev {worst:.3e} kW; gauge bitwise {gauge_exact}; oracle bitwise {oracle_exact}"),
    )
}

fn gauge_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut inside, mut outside) = (0, 0);
    let (mut identity_ok, mut boundary_dev, mut homog_dev) = (true, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let x = random_instance(&mut rng, n, 100.0);
        let gd = gauge_for(&x).unwrap();
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let v = DecisionVector((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect());
        let psi = gauge_psi(&gd, &v).unwrap();
        let u = gauge_map(&gd, &v).unwrap();
        if psi <= 1.0 {
            inside += 1;
            let expect: Vec<f64> = gd.u0.0.iter().zip(&v.0).map(|(a, b)| a + b).collect();
            identity_ok &= bits(&u) == bits(&DecisionVector(expect));
        } else {
            outside += 1;
            let z = DecisionVector(u.0.iter().zip(&gd.u0.0).map(|(a, b)| a - b).collect());
            boundary_dev = boundary_dev.max((gauge_psi(&gd, &z).unwrap() - 1.0).abs());
        }
        for alpha in [0.5, 2.0, 10.0] {
            let scaled = DecisionVector(v.0.iter().map(|x| alpha * x).collect());
            let lhs = gauge_psi(&gd, &scaled).unwrap();
            let rhs = alpha * psi;
            if rhs != 0.0 {
                homog_dev = homog_dev.max((lhs - rhs).abs() / rhs);
            } else {
                homog_dev = homog_dev.max(lhs.abs());
            }
        }
    }
    ensure(
        identity_ok && boundary_dev <= 1e-8 && homog_dev <= 1e-10 && inside > 0 && outside > 0,
        format!(
            "(a) identity on {inside} inside pairs: {identity_ok}; (b) boundary dev {boundary_dev:.2e} on {outside}; (c) homogeneity rel dev {homog_dev:.2e}"
        ),
    )
}

fn oracle_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut worst_u, mut worst_obj, mut binding, mut tested) = (0.0f64, 0.0f64, 0, 0);
    while tested < 200 {
        let n = rng.random_range(2..=5);
        let p_omax = rng.random_range(1.0..50.0);
        let x = random_instance(&mut rng, n, p_omax);
        let exact = solve_exact(&x).unwrap();
        let brute = solve_bruteforce(&x, 1e-2).unwrap();
        worst_u = worst_u.max(exact.max_abs_diff(&brute));
        let (fe, fb) = (objective(&x, &exact).unwrap(), objective(&x, &brute).unwrap());
        worst_obj = worst_obj.max((fe - fb).abs() / fb.abs().max(1e-12));
        if exact.0.iter().zip(&x.agents).any(|(u, a)| *u != a.p_cap) {
            binding += 1;
        }
        tested += 1;
    }
    ensure(
        worst_u <= 1e-4 && worst_obj <= 1e-6,
        format!("{tested} instances ({binding} with binding cap): max |du| {worst_u:.2e} kW, rel objective diff {worst_obj:.2e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let hyper = HyperParams {
        d_h: 8,
        ..HyperParams::default()
    };
    let scale = 625.0;
    let loss_of = |x: &ProblemInstance, u: &DecisionVector| objective(x, u).unwrap() / scale;
    let (mut worst, mut checked, mut outside, mut attempt) = (0.0f64, 0, 0, 0u64);
    while checked < 20 {
        attempt += 1;
        let p = init_params(hyper, 5000 + attempt).unwrap();
        let x = random_instance(&mut rng, 3, 100.0);
        let gd = gauge_for(&x).unwrap();
        let psi = gauge_psi(&gd, &DecisionVector(forward(&p, &x).unwrap())).unwrap();
        if (psi - 1.0).abs() <= 0.05 {
            continue;
        }
        let (_, grads) = loss_and_grad(&p, &x, &gd, |u| {
            let g = u.0.iter().zip(&x.agents).map(|(v, a)| 2.0 * (v - a.p_cap) / scale).collect();
            Ok((loss_of(&x, u), g))
        })
        .unwrap();
        let analytic = grads.flatten();
        let idx = rng.random_range(0..analytic.len());
        let h = 1e-4;
        let at = |delta: f64| {
            let mut q = p.clone();
            *q.scalar_mut(idx).unwrap() += delta;
            loss_of(&x, &predict_with_gauge(&q, &x, &gd).unwrap().u)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let a = analytic[idx];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        outside += usize::from(psi > 1.0);
        checked += 1;
    }
    ensure(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over {checked} coordinates ({outside} with psi > 1)"),
    )
}

fn end_to_end_gaps() -> Outcome {
    let data_cfg = DataGenConfig::default();
    let ds = generate_dataset(&data_cfg).unwrap();
    let (train_set, test_set) = ds.split(data_cfg.n_test);
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let outcome = train(init_params(cfg.hyper(), cfg.seed).unwrap(), train_set, &cfg).unwrap();
    let train_time = start.elapsed();
    let report = evaluate_with(&outcome.params, test_set, 0).unwrap();
    let agg = &report.aggregate;
    let loss_down = outcome.history.last().unwrap() <= &outcome.history[0];
    ensure(
        test_set.len() == 100
            && agg.opt_gap.avg <= 0.10
            && agg.opt_gap.max <= 0.30
            && agg.feas_gap_kw.max <= 1e-6
            && loss_down
            && train_time <= Duration::from_secs(15 * 60),
        format!(
            "opt gap avg {:.3e} / min {:.3e} / max {:.3e}, max feas gap {:.2e} kW on {} test samples; loss {:.3} -> {:.5}; training {:.1}s",
            agg.opt_gap.avg,
            agg.opt_gap.min,
            agg.opt_gap.max,
            agg.feas_gap_kw.max,
            test_set.len(),
            outcome.history[0],
            outcome.history.last().unwrap(),
            train_time.as_secs_f64()
        ),
    )
}

fn fixed_inference_cost() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let p = init_params(HyperParams::default(), 7).unwrap();
    let mut quiet = p.clone();
    quiet.head.w *= 1e-4;
    let mut fixed = true;
    let mut per_size = Vec::new();
    for n in [1, 5, 10, 20] {
        let mut counts = Vec::new();
        for k in 0..10 {
            let x = random_instance(&mut rng, n, if k % 2 == 0 { 100.0 } else { 5.0 });
            // Alternate weights so both the pass-through and the rescaling branch run.
            let params = if k % 3 == 0 { &quiet } else { &p };
            counts.push(count_ops(|| predict(params, &x).unwrap()).1);
        }
        fixed &= counts.iter().all(|&c| c == counts[0]);
        per_size.push(format!("N={n}: {}", counts[0]));
    }

    let (mut oracle_ms, mut model_ms) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let n = rng.random_range(5..=20);
        let x = random_instance(&mut rng, n, 100.0);
        let t = time_solver(&x, &p).unwrap();
        oracle_ms.push(t.oracle.as_secs_f64() * 1e3);
        model_ms.push(t.model.as_secs_f64() * 1e3);
    }
    let stats = |v: &[f64]| {
        let avg = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(0.0, f64::max);
        (avg, min, max)
    };
    let (oa, omin, omax) = stats(&oracle_ms);
    let (ma, mmin, mmax) = stats(&model_ms);
    println!("    time (ms)   exact solver      model");
    println!("    average   {oa:>12.4} {ma:>10.4}");
    println!("    minimum   {omin:>12.4} {mmin:>10.4}");
    println!("    maximum   {omax:>12.4} {mmax:>10.4}");
    ensure(fixed, format!("op count fixed per size: {fixed} ({})", per_size.join(", ")))
}

fn equality_elimination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (mut worst, mut rejected) = (0.0f64, 0);
    for _ in 0..50 {
        let n_vars = rng.random_range(1..=8);
        let rows = rng.random_range(1..=4usize);
        let mut a = DMatrix::from_fn(rows, n_vars, |_, _| rng.random_range(-2.0..2.0));
        if rows > 1 && rng.random_bool(0.3) {
            // Duplicate a row to make the system rank deficient.
            let r = a.row(0).into_owned();
            a.set_row(rows - 1, &r);
        }
        let solution = DVector::from_fn(n_vars, |_, _| rng.random_range(-5.0..5.0));
        let b = -(&a * &solution);
        let block = AgentBlock {
            a_eq: a.clone(),
            b_eq: b.clone(),
            a_ineq: DMatrix::zeros(0, n_vars),
            b_ineq: DVector::zeros(0),
            a_coupled: DMatrix::zeros(0, n_vars),
            b_coupled: DVector::zeros(0),
        };
        let spec = GeneralLinearSpec::new(vec![block.clone()]).unwrap();
        let map = eliminate_equalities(&spec).map_err(|e| format!("consistent system rejected: {e}"))?;
        for _ in 0..100 {
            let z: Vec<f64> = (0..map.n_reduced()).map(|_| rng.random_range(-10.0..10.0)).collect();
            let u = DVector::from_vec(map.reconstruct(&z).unwrap());
            worst = worst.max((&a * u + &b).amax());
        }

        // Contradict the first row: same coefficients, shifted right-hand side.
        let mut bad = block;
        bad.a_eq = a.clone().insert_row(rows, 0.0);
        bad.a_eq.set_row(rows, &a.row(0).into_owned());
        bad.b_eq = b.clone().insert_row(rows, b[0] + 1.0);
        if eliminate_equalities(&GeneralLinearSpec::new(vec![bad]).unwrap()).is_err() {
            rejected += 1;
        }
    }
    ensure(
        worst <= 1e-9 && rejected == 50,
        format!("max residual {worst:.2e} over 50 systems x 100 z; {rejected}/50 inconsistent systems rejected"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("1 structural feasibility", structural_feasibility, Duration::from_secs(30)),
        ("2 permutation equivariance", permutation_equivariance, Duration::from_secs(10)),
        ("3 gauge-map laws", gauge_laws, Duration::from_secs(5)),
        ("4 oracle correctness", oracle_correctness, Duration::from_secs(120)),
        ("5 gradient fidelity", gradient_fidelity, Duration::from_secs(60)),
        ("6 end-to-end gaps", end_to_end_gaps, Duration::from_secs(15 * 60)),
        ("7 fixed inference cost", fixed_inference_cost, Duration::from_secs(60)),
        ("8 equality elimination", equality_elimination, Duration::from_secs(5)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (status, detail) = match (&result, elapsed <= limit) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over runtime limit {limit:?}")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {name}: {status} [{:.2}s] {detail}", elapsed.as_secs_f64());
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
