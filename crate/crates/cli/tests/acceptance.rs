//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stla_core::analysis::{build_s, inf_norm, lie_bracket, split_s, SecondOrderData};
use stla_core::catalog;
use stla_core::config::Problem;
use stla_core::eigen::eigh;
use stla_core::expr::parse;
use stla_core::spectral::{classify, AttainabilityCertificate, Tolerances, Verdict};
use stla_core::study::{
    bch_study, bracket3_study, halving_times, min_time_probe, prop1_study, prop2_same_field_study, prop2_study,
    prop3_decay_study, ConvergenceStudy, DECAY_LIMIT_TOL, DECAY_ORDER_MIN, EXPANSION_ORDER_MIN, EXPONENT_BAND,
    MAX_CENSORED_FRACTION,
};
use stla_core::system::{Control, ControlSystem, DerivativeOracle, TargetFunction};
use stla_core::trajectory::DEFAULT_STEPS_PER_SEGMENT;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const ORACLE: DerivativeOracle = DerivativeOracle::Dual;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn problem(name: &str) -> Problem {
    catalog::lookup(name).unwrap()
}

fn certify(p: &Problem, x: &[f64]) -> AttainabilityCertificate {
    classify(&p.system, &p.target, &ORACLE, x, &Tolerances::default()).unwrap()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}

fn criterion_1() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut worst = 0.0f64;
    let mut compare = |label: &str, got: &DMatrix<f64>, want: DMatrix<f64>| -> Result<(), String> {
        let d = max_abs_diff(got, &want);
        worst = worst.max(d);
        check(d <= TOL, format!("{label}: got {got}, expected {want}"))
    };
    let s_at = |name: &str, x: &[f64]| {
        let p = problem(name);
        SecondOrderData::at(&p.system, &p.target, &ORACLE, x).unwrap()
    };

    let d = s_at("rotation", &[0.0, 1.0]);
    compare("rotation S", &d.s, DMatrix::from_row_slice(1, 1, &[-1.0]))?;
    compare(
        "rotation K",
        &d.k,
        DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]),
    )?;
    for x in [1.0, -2.0] {
        let d = s_at("shear", &[x, 0.0]);
        compare(
            &format!("shear S({x},0)"),
            &d.s,
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, x, 1.0]),
        )?;
    }
    for z in [1.0, 2.0] {
        let d = s_at("heisenberg", &[0.0, 0.0, z]);
        compare(
            &format!("heisenberg S(0,0,{z})"),
            &d.s,
            DMatrix::from_row_slice(2, 2, &[1.0, -z, z, 1.0]),
        )?;
        if z == 1.0 {
            #[rustfmt::skip]
            let k = DMatrix::from_row_slice(4, 4, &[
                1.0, 0.0, 1.0, 1.0,
                0.0, 1.0, -1.0, 1.0,
                1.0, -1.0, 1.0, 0.0,
                1.0, 1.0, 0.0, 1.0,
            ]);
            compare("heisenberg K(0,0,1)", &d.k, k)?;
        }
    }
    for y in [1.0, 3.0] {
        let d = s_at("dubins", &[0.0, y, 0.0]);
        compare(
            &format!("dubins S(0,{y},0)"),
            &d.s,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, y, 1.0]),
        )?;
    }
    Ok(format!("9 matrices, max abs deviation {worst:.1e} <= {TOL:e}"))
}

fn criterion_2() -> Outcome {
    let rot = certify(&problem("rotation"), &[0.0, 1.0]);
    check(
        (rot.lambda_min + 2.0).abs() <= 1e-9,
        format!("rotation lambda_min = {}", rot.lambda_min),
    )?;
    let v = rot.spectrum.vector(0);
    check(
        (v[0] - v[1]).abs() <= 1e-10,
        format!("rotation eigenvector {v} is not proportional to (1,1)"),
    )?;

    let p = problem("heisenberg");
    let cert = certify(&p, &[0.0, 0.0, 1.0]);
    let target = 1.0 - 2f64.sqrt();
    check(
        (cert.lambda_min - target).abs() <= 1e-9,
        format!("heisenberg lambda_min = {}", cert.lambda_min),
    )?;
    let mult = cert.spectrum.min_multiplicity(1e-9);
    check(mult == 2, format!("heisenberg multiplicity {mult}"))?;

    let h = std::f64::consts::FRAC_1_SQRT_2;
    let b1 = DVector::from_vec(vec![-h, h, 1.0, 0.0]);
    let b2 = DVector::from_vec(vec![-h, -h, 0.0, 1.0]);
    // orthonormal basis of the listed span
    let e1 = b1.normalize();
    let e2 = (&b2 - &e1 * e1.dot(&b2)).normalize();
    let k = &cert.data.k;
    let (mut residual, mut projection) = (0.0f64, 0.0f64);
    for idx in 0..2 {
        let v = cert.spectrum.vector(idx);
        let lambda = cert.spectrum.eigenvalues[idx];
        residual = residual.max((k * &v - &v * lambda).amax());
        let proj = &e1 * e1.dot(&v) + &e2 * e2.dot(&v);
        projection = projection.max((&v - proj).norm());
    }
    check(residual <= 1e-10, format!("eigenvector residual {residual:e}"))?;
    check(projection <= 1e-8, format!("projection residual {projection:e}"))?;
    Ok(format!(
        "rotation -2 along (1,1); heisenberg {:.12} x{mult}, residual {residual:.1e}, projection {projection:.1e}",
        cert.lambda_min
    ))
}

/// Points of the step-0.05 grid on `[-1,1]^m` that lie in the closed unit ball.
fn ball_grid(m: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..=40).map(|k| -1.0 + 0.05 * k as f64).collect();
    let mut pts: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..m {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    pts.retain(|p| p.iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12);
    pts
}

fn criterion_3() -> Outcome {
    let mut summary = Vec::new();
    for name in catalog::names() {
        let p = problem(&name);
        let m = p.system.control_dim();
        if m > 2 {
            continue;
        }
        let cert = certify(&p, p.point.as_ref().unwrap());
        let k = &cert.data.k;
        let grid = ball_grid(m);
        let mut min_h = f64::INFINITY;
        let mut v = vec![0.0; 2 * m];
        for a1 in &grid {
            v[..m].copy_from_slice(a1);
            for a2 in &grid {
                v[m..].copy_from_slice(a2);
                let mut h = 0.0;
                for r in 0..2 * m {
                    for c in 0..2 * m {
                        h += k[(r, c)] * v[r] * v[c];
                    }
                }
                min_h = min_h.min(h);
            }
        }
        let expected = (2.0 * cert.lambda_min).min(0.0);
        let band = 0.05 * inf_norm(k);
        check(
            (min_h - expected).abs() <= band,
            format!("{name}: grid min {min_h} vs {expected} (band {band})"),
        )?;
        for (idx, &lambda) in cert.spectrum.eigenvalues.iter().enumerate() {
            if lambda.abs() <= 1e-9 {
                continue;
            }
            let e = cert.spectrum.vector(idx);
            let gap = (e.rows(0, m).norm() - e.rows(m, m).norm()).abs();
            check(gap <= 1e-8, format!("{name}: eigenpair {idx} halves differ by {gap:e}"))?;
        }
        summary.push(format!("{name} {min_h:.4}/{expected:.4}"));
    }
    Ok(format!("grid min vs min(0,2λ): {}", summary.join(", ")))
}

struct Fixture {
    system: ControlSystem,
    target: TargetFunction,
    point: Vec<f64>,
}

fn coef(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

fn term(c: f64, monomial: &str) -> String {
    format!("({c:?})*{monomial}")
}

/// Random polynomial system and target at the origin with every field tangent to the level set.
fn random_fixture(rng: &mut ChaCha8Rng, idx: usize) -> Fixture {
    let n = rng.gen_range(2..=3);
    let m = rng.gen_range(1..=2);
    // a third of the fixtures use constant fields, so S is symmetric and only curvature decides
    let constant_fields = idx.is_multiple_of(3);
    let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();

    let mut g: Vec<f64> = (0..n).map(|_| coef(rng)).collect();
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    g.iter_mut().for_each(|v| *v /= gn);

    let mut u_terms: Vec<String> = g.iter().zip(&vars).map(|(c, v)| term(*c, v)).collect();
    for i in 0..n {
        for j in i..n {
            u_terms.push(term(coef(rng), &format!("{}*{}", vars[i], vars[j])));
        }
    }
    u_terms.push(term(coef(rng), &format!("{}^3", vars[0])));
    let u = parse(&u_terms.join(" + "), &vars).unwrap();

    let mut sigma = vec![Vec::new(); n];
    for _ in 0..m {
        let w: Vec<f64> = (0..n).map(|_| coef(rng)).collect();
        let wg: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        let v: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - wg * b).collect();
        for (row, entry) in sigma.iter_mut().enumerate() {
            let mut terms = vec![format!("({:?})", v[row])];
            if !constant_fields {
                for var in &vars {
                    terms.push(term(coef(rng), var));
                }
                terms.push(term(coef(rng), &format!("{}^2", vars[n - 1])));
            }
            entry.push(parse(&terms.join(" + "), &vars).unwrap());
        }
    }
    Fixture {
        system: ControlSystem::new(format!("fixture-{idx}"), vars, sigma).unwrap(),
        target: TargetFunction::new(u),
        point: vec![0.0; n],
    }
}

fn criterion_4() -> Outcome {
    const TAU: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut certified, mut nonsym, mut curvature) = (0, 0, 0);
    for idx in 0..1000 {
        let f = random_fixture(&mut rng, idx);
        let d = SecondOrderData::at(&f.system, &f.target, &ORACLE, &f.point).unwrap();
        let tangency = d.tangency.amax();
        check(tangency < 1e-12, format!("fixture {idx}: tangency {tangency:e}"))?;

        let s = &d.s;
        let tau_sym = TAU * inf_norm(s).max(1.0);
        let defect = (s - s.transpose()).abs().max();
        let non_symmetric = defect > tau_sym;
        let s_negative = ((s + s.transpose()) * 0.5).symmetric_eigen().eigenvalues.min() < -TAU;
        let s_verdict = non_symmetric || s_negative;
        let k_verdict = eigh(&d.k).unwrap().min_eigenvalue() < -TAU;
        check(
            s_verdict == k_verdict,
            format!("fixture {idx}: S route {s_verdict}, K route {k_verdict}, S = {s}"),
        )?;
        let cert = classify(&f.system, &f.target, &ORACLE, &f.point, &Tolerances::default())
            .map_err(|e| format!("fixture {idx}: {e}"))?;
        check(
            (cert.kind == Verdict::SecondOrder) == k_verdict,
            format!("fixture {idx}: classify says {}", cert.kind.as_str()),
        )?;
        certified += usize::from(k_verdict);
        nonsym += usize::from(non_symmetric);
        curvature += usize::from(!non_symmetric && s_negative);
    }
    check(
        certified < 1000,
        "every fixture certified; the negative side is not exercised",
    )?;
    Ok(format!(
        "1000/1000 agree ({certified} certified: {nonsym} non-symmetric, {curvature} by curvature; {} not)",
        1000 - certified
    ))
}

fn expansion_pass(label: &str, study: &ConvergenceStudy, log: &mut Vec<String>) -> Result<(), String> {
    check(
        study.fitted_order >= EXPANSION_ORDER_MIN,
        format!("{label}: order {} < {EXPANSION_ORDER_MIN}", study.fitted_order),
    )?;
    log.push(if study.is_exact() {
        format!("{label}=exact")
    } else {
        format!("{label}={:.2}", study.fitted_order)
    });
    Ok(())
}

fn criterion_5() -> Outcome {
    let t = halving_times(0.1, 9);
    let steps = DEFAULT_STEPS_PER_SEGMENT;
    let generic_a1 = Control::new(vec![0.6, 0.8]).unwrap();
    let generic_a2 = Control::new(vec![-0.28, 0.96]).unwrap();
    let mut log = Vec::new();
    for name in ["heisenberg", "dubins"] {
        let p = problem(name);
        let (sys, tf) = (&p.system, &p.target);
        let catalog_point = p.point.clone().unwrap();
        let (c1, c2) = certify(&p, &catalog_point).switch_order().unwrap();
        let fixtures = [
            ("cert", catalog_point, c1, c2),
            ("generic", vec![0.3, -0.2, 0.7], generic_a1.clone(), generic_a2.clone()),
        ];
        for (tag, x, a1, a2) in &fixtures {
            let l = |s: &str| format!("{name}/{tag}/{s}");
            expansion_pass(
                &l("prop1"),
                &prop1_study(sys, &ORACLE, a1, a2, x, &t, steps).unwrap(),
                &mut log,
            )?;
            expansion_pass(
                &l("prop2"),
                &prop2_study(sys, tf, &ORACLE, a1, a2, x, &t, steps).unwrap(),
                &mut log,
            )?;
            expansion_pass(
                &l("prop2ff"),
                &prop2_same_field_study(sys, tf, &ORACLE, a1, x, &t, steps).unwrap(),
                &mut log,
            )?;
            expansion_pass(
                &l("bch"),
                &bch_study(sys, &ORACLE, a1, a2, x, &t, steps).unwrap(),
                &mut log,
            )?;
            expansion_pass(
                &l("bracket3"),
                &bracket3_study(sys, &ORACLE, 0, 1, x, &t, steps).unwrap(),
                &mut log,
            )?;
        }
    }
    Ok(log.join(" "))
}

fn criterion_6() -> Outcome {
    let t = halving_times(0.1, 9);
    let mut log = Vec::new();
    for (name, expected) in [("rotation", -2.0), ("heisenberg", 1.0 - 2f64.sqrt())] {
        let p = problem(name);
        let x = p.point.clone().unwrap();
        let cert = certify(&p, &x);
        let decay = prop3_decay_study(&p.system, &p.target, &cert, &x, &t, DEFAULT_STEPS_PER_SEGMENT).unwrap();
        let gap = (decay.limit() - expected).abs();
        check(
            gap <= DECAY_LIMIT_TOL,
            format!("{name}: limit {} vs {expected}", decay.limit()),
        )?;
        check(
            decay.study.fitted_order >= DECAY_ORDER_MIN,
            format!("{name}: deviation order {}", decay.study.fitted_order),
        )?;
        log.push(format!(
            "{name} limit={:.8} gap={gap:.1e} order={:.2}",
            decay.limit(),
            decay.study.fitted_order
        ));
    }
    Ok(log.join("; "))
}

fn criterion_7() -> Outcome {
    let deltas = [1e-2, 1e-3, 1e-4, 1e-5];
    let mut cases: Vec<(String, Problem, Vec<f64>, f64)> = catalog::names()
        .into_iter()
        .map(|name| {
            let p = problem(&name);
            let x = p.point.clone().unwrap();
            (name, p, x, 0.5)
        })
        .collect();
    cases.push((
        "constant-field@(0,1)".into(),
        problem("constant-field"),
        vec![0.0, 1.0],
        1.0,
    ));
    let mut log = Vec::new();
    for (label, p, x, expected) in cases {
        let cert = certify(&p, &x);
        let want = if expected == 1.0 {
            Verdict::FirstOrder
        } else {
            Verdict::SecondOrder
        };
        check(cert.kind == want, format!("{label}: verdict {}", cert.kind.as_str()))?;
        let probe = min_time_probe(
            &p.system,
            &p.target,
            &cert,
            &x,
            &deltas,
            16,
            7,
            DEFAULT_STEPS_PER_SEGMENT,
        )
        .unwrap();
        check(
            (probe.fitted_exponent - expected).abs() <= EXPONENT_BAND,
            format!("{label}: exponent {} vs {expected}", probe.fitted_exponent),
        )?;
        check(
            probe.censored_fraction() <= MAX_CENSORED_FRACTION,
            format!("{label}: censored fraction {}", probe.censored_fraction()),
        )?;
        log.push(format!("{label}={:.3}", probe.fitted_exponent));
    }
    Ok(log.join(" "))
}

/// `[σᵢ,σⱼ]` from central differences of `σ` alone.
fn fd_bracket(sys: &ControlSystem, i: usize, j: usize, x: &[f64]) -> DVector<f64> {
    let n = x.len();
    let sigma = sys.eval_sigma(x).unwrap();
    let dir_derivative = |col: usize, dir: DVector<f64>| -> DVector<f64> {
        let h = 1e-5;
        let shift = |s: f64| -> Vec<f64> { (0..n).map(|k| x[k] + s * h * dir[k]).collect() };
        let plus = sys.eval_sigma(&shift(1.0)).unwrap().column(col).into_owned();
        let minus = sys.eval_sigma(&shift(-1.0)).unwrap().column(col).into_owned();
        (plus - minus) / (2.0 * h)
    };
    dir_derivative(j, sigma.column(i).into_owned()) - dir_derivative(i, sigma.column(j).into_owned())
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for name in catalog::names() {
        let p = problem(&name);
        let (n, m) = (p.system.state_dim(), p.system.control_dim());
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = build_s(&p.system, &p.target, &ORACLE, &x).unwrap();
            let (_, skew) = split_s(&s).unwrap();
            let grad = ORACLE.grad_u(&p.target, &x).unwrap();
            for i in 0..m {
                for j in 0..m {
                    let exact = grad.dot(&lie_bracket(&p.system, &ORACLE, i, j, &x).unwrap());
                    let fd = grad.dot(&fd_bracket(&p.system, i, j, &x));
                    let lhs = 2.0 * skew[(i, j)];
                    let rel = (lhs - exact).abs() / exact.abs().max(1.0);
                    worst = worst.max(rel);
                    check(
                        rel <= 1e-8,
                        format!("{name} at {x:?}: 2Se[{i}][{j}] = {lhs} vs {exact}"),
                    )?;
                    // independent of the derivative oracle, limited by the difference step
                    let rel_fd = (lhs - fd).abs() / fd.abs().max(1.0);
                    check(
                        rel_fd <= 1e-6,
                        format!("{name} at {x:?}: 2Se[{i}][{j}] = {lhs} vs differenced {fd}"),
                    )?;
                }
            }
        }
    }
    Ok(format!(
        "5 systems x 20 points, max relative deviation {worst:.1e} <= 1e-8"
    ))
}

fn run_stla(args: &[&str], threads: &str) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_stla"))
        .args(args)
        .env("STLA_THREADS", threads)
        .output()
        .expect("failed to launch stla");
    (out.stdout, out.status.code().unwrap_or(-1))
}

fn criterion_9() -> Outcome {
    let dir = std::env::temp_dir().join(format!("stla-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut log = Vec::new();
    let runs: [&[&str]; 3] = [
        &["verify", "mintime", "--catalog", "heisenberg", "--seed", "7"],
        &[
            "verify",
            "mintime",
            "--catalog",
            "dubins",
            "--seed",
            "11",
            "--samples",
            "8",
        ],
        &["verify", "prop1", "--catalog", "dubins"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "4"].iter().enumerate() {
            let file = dir.join(format!("run{k}-{run}.csv"));
            let mut full: Vec<&str> = args.to_vec();
            let path = file.to_str().unwrap().to_string();
            full.extend(["--out", &path]);
            let (stdout, code) = run_stla(&full, threads);
            check(code == 0, format!("`stla {}` exited {code}", args.join(" ")))?;
            let csv = std::fs::read(&file).unwrap();
            let (plain, _) = run_stla(args, threads);
            outputs.push((stdout, csv, plain));
        }
        check(
            outputs[0] == outputs[1],
            format!("`stla {}` differs between runs", args.join(" ")),
        )?;
        log.push(format!("`{}` ({} bytes)", args.join(" "), outputs[0].2.len()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "byte-identical across runs with 1 and 4 threads: {}",
        log.join(", ")
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("matrix regression", criterion_1),
        ("eigenvalue regression", criterion_2),
        ("quadratic-form oracle", criterion_3),
        ("classification equivalence", criterion_4),
        ("expansion orders", criterion_5),
        ("decay-rate limit", criterion_6),
        ("minimum-time scaling", criterion_7),
        ("bracket/skew consistency", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}) [{secs:.1}s]: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}) [{secs:.1}s]: {detail}", k + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
