//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 9 each write a report file. The whole set is then rerun on a
//! rayon pool with a different thread count and criterion 10 compares the two
//! sets of files byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use locsvm_core::analysis::{
    one_sided_cell_check, random_localized_model, rate_experiment, straddling_cell_check,
    theory_exponents, tv_adaptivity, variance_bound_check, zhang_check, RateConfig, RateMethod,
};
use locsvm_core::geometry::build_rnet;
use locsvm_core::kernel::gauss_ball_mass;
use locsvm_core::rng;
use locsvm_core::solver::{brute_force_dual, grid_gap_bound, kkt_violation, solve_cell};
use locsvm_core::{fmt_f64, CellProblem, MarginDistribution, SolverOptions};
use rand::Rng;

struct Outcome {
    pass: bool,
    summary: String,
    report: String,
}

type Check = fn() -> Outcome;

const CHECKS: [(Check, Duration); 9] = [
    (solver_oracle, Duration::from_secs(60)),
    (partition_invariants, Duration::from_secs(60)),
    (ball_mass_identity, Duration::from_secs(120)),
    (approximation_bounds, Duration::from_secs(120)),
    (margin_exponents, Duration::from_secs(300)),
    (zhang_and_variance, Duration::from_secs(300)),
    (theory_calculator, Duration::from_secs(1)),
    (learning_rates, Duration::from_secs(1800)),
    (tv_adaptivity_check, Duration::from_secs(900)),
];

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let base = rayon::current_num_threads();
    let other = base + 2;

    let mut first_dir = None;
    for (round, threads) in [(0, base), (1, other)] {
        let dir = root.join(format!("threads-{threads}"));
        fs::create_dir_all(&dir).expect("create report dir");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        for (k, (check, limit)) in CHECKS.iter().enumerate() {
            let start = Instant::now();
            let out = pool.install(check);
            let took = start.elapsed();
            fs::write(dir.join(format!("criterion-{}.txt", k + 1)), &out.report)
                .expect("write report");
            if round == 0 {
                let pass = out.pass && took < *limit;
                println!(
                    "criterion {}: {} ({}; {:.1}s of {}s)",
                    k + 1,
                    verdict(pass),
                    out.summary,
                    took.as_secs_f64(),
                    limit.as_secs()
                );
            }
        }
        if round == 0 {
            first_dir = Some(dir);
        } else {
            let (pass, summary) = compare_reports(first_dir.as_deref().unwrap(), &dir, base, other);
            println!("criterion 10: {} ({summary})", verdict(pass));
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn compare_reports(a: &Path, b: &Path, ta: usize, tb: usize) -> (bool, String) {
    let mut differing = Vec::new();
    for k in 1..=CHECKS.len() {
        let name = format!("criterion-{k}.txt");
        let x = fs::read(a.join(&name)).expect("read report");
        let y = fs::read(b.join(&name)).expect("read report");
        if x != y {
            differing.push(k);
        }
    }
    if differing.is_empty() {
        (
            true,
            format!("reports 1-9 identical with {ta} and {tb} threads"),
        )
    } else {
        (
            false,
            format!("reports differ for criteria {differing:?} between {ta} and {tb} threads"),
        )
    }
}

fn solver_oracle() -> Outcome {
    let mut g = rng::seeded(101);
    let opts = SolverOptions::default();
    let mut report = String::from("problem,n,objective,grid_objective,gap_bound,kkt\n");
    let mut worst_kkt: f64 = 0.0;
    let mut failures = 0;
    for t in 0..100 {
        let n = 1 + t % 4;
        let d = 1 + g.random_range(0..3);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            points.extend(rng::uniform_ball(&mut g, d));
            labels.push(if g.random::<f64>() < 0.5 { -1.0 } else { 1.0 });
        }
        let n_global = n + g.random_range(0..20);
        let lambda = 10f64.powf(g.random_range(-3.0..0.0));
        let gamma = g.random_range(0.05..1.5);
        let p = CellProblem::new(d, points, labels, lambda, gamma, n_global).unwrap();
        let sol = solve_cell(&p, &opts).unwrap();
        let step = p.box_constant() / 30.0;
        let grid = brute_force_dual(&p, step).unwrap();
        let ours = sol.dual_objective(&p);
        let best = grid.dual_objective(&p);
        let bound = grid_gap_bound(&p, step);
        let kkt = kkt_violation(&sol.alpha, &sol.outputs, p.labels(), p.box_constant());
        let in_box = sol
            .alpha
            .iter()
            .all(|&a| (0.0..=p.box_constant()).contains(&a));
        worst_kkt = worst_kkt.max(kkt);
        if !(ours >= best - 1e-9 && ours <= best + bound && kkt <= 1e-6 && in_box) {
            failures += 1;
        }
        writeln!(
            report,
            "{t},{n},{},{},{},{}",
            fmt_f64(ours),
            fmt_f64(best),
            fmt_f64(bound),
            fmt_f64(kkt)
        )
        .unwrap();
    }
    Outcome {
        pass: failures == 0,
        summary: format!(
            "{failures} of 100 problems off the grid oracle, worst KKT violation {worst_kkt:.1e}"
        ),
        report,
    }
}

fn partition_invariants() -> Outcome {
    let mut g = rng::seeded(202);
    let mut report = String::from("build,d,r,cells,min_separation,max_cover,size_bound,ok\n");
    let mut failures = 0;
    for t in 0..20 {
        let d = 1 + t % 4;
        let r = g.random_range(0.25..1.2);
        let p = build_rnet(d, r, rng::derive(202, t as u64)).unwrap();
        let inv = p.check_invariants(20_000, rng::derive(203, t as u64));
        let ok = inv.min_separation >= r / 2.0 && inv.covering_ok && inv.size_ok;
        failures += usize::from(!ok);
        writeln!(
            report,
            "{t},{d},{},{},{},{},{},{ok}",
            fmt_f64(r),
            inv.cells,
            fmt_f64(inv.min_separation),
            fmt_f64(inv.max_cover_distance),
            fmt_f64(inv.size_bound)
        )
        .unwrap();
    }
    Outcome {
        pass: failures == 0,
        summary: format!("{failures} of 20 builds violate separation, covering or size"),
        report,
    }
}

fn ball_mass_identity() -> Outcome {
    let mut g = rng::seeded(303);
    let mut report = String::from("triple,d,rho,gamma,exact,monte_carlo,stderr\n");
    let mut worst: f64 = 0.0;
    let n = 1_000_000;
    for t in 0..20 {
        let d = 1 + g.random_range(0..5);
        let gamma = g.random_range(0.05..1.0);
        let rho = gamma * g.random_range(0.2..2.0);
        let exact = gauss_ball_mass(d, rho, gamma).unwrap();
        let mut s = rng::seeded(rng::derive(303, t));
        let origin = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut hits = 0usize;
        for _ in 0..n {
            rng::gaussian_into(&mut s, &origin, gamma / 2.0, &mut y);
            if y.iter().map(|v| v * v).sum::<f64>() <= rho * rho {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        worst = worst.max((p - exact).abs() / se);
        writeln!(
            report,
            "{t},{d},{},{},{},{},{}",
            fmt_f64(rho),
            fmt_f64(gamma),
            fmt_f64(exact),
            fmt_f64(p),
            fmt_f64(se)
        )
        .unwrap();
    }
    Outcome {
        pass: worst <= 4.0,
        summary: format!("largest deviation {worst:.2} standard errors"),
        report,
    }
}

fn approximation_bounds() -> Outcome {
    let mut report = String::from("check,d,cell,value,target,bound,stderr\n");
    let mut failures = 0;
    let mut total = 0;
    let (r, gamma) = (0.25, 0.1);
    for d in [1usize, 2] {
        let dist = MarginDistribution::halfspace(d, 1.0, 1.0).unwrap();
        let p = build_rnet(d, r, 404 + d as u64).unwrap();
        let straddling =
            straddling_cell_check(&dist, &p, gamma, 50, 20_000, 405 + d as u64).unwrap();
        let mut g = rng::seeded(406 + d as u64);
        let omega: f64 = gamma * g.random_range(0.5..2.0);
        let one_sided =
            one_sided_cell_check(&dist, &p, gamma, omega, 50, 20_000, 407 + d as u64).unwrap();
        for (name, pts) in [("straddling", &straddling), ("one_sided", &one_sided)] {
            for pt in pts {
                total += 1;
                if !(pt.within(3.0) && pt.bounded(3.0)) {
                    failures += 1;
                }
                writeln!(
                    report,
                    "{name},{d},{},{},{},{},{}",
                    pt.cell,
                    fmt_f64(pt.value),
                    fmt_f64(pt.target),
                    fmt_f64(pt.bound),
                    fmt_f64(pt.stderr)
                )
                .unwrap();
            }
        }
    }
    Outcome {
        pass: failures == 0,
        summary: format!("{failures} of {total} convolution points outside their bound"),
        report,
    }
}

fn margin_exponents() -> Outcome {
    let mut report = String::from("zeta,q_hat,beta_hat,alpha_hat,lc_holds,lc_constant\n");
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let n_mc = 1_000_000;
    for (k, zeta) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let dist = MarginDistribution::halfspace(2, zeta, 1.0).unwrap();
        let seed = 500 + k as u64;
        let q = dist.estimate_ne(n_mc, seed).unwrap();
        let beta = dist.estimate_mne(n_mc, seed).unwrap();
        let alpha = dist.estimate_me(n_mc, seed).unwrap();
        let lc = dist.check_lc(n_mc, seed).unwrap();
        let errs = [
            (q - 1.0 / zeta).abs() / 0.15,
            (beta - (1.0 + zeta)).abs() / 0.2,
            (alpha - 1.0).abs() / 0.1,
            (q - alpha / zeta).abs() / 0.15,
        ];
        worst = errs.iter().fold(worst, |a, &b| a.max(b));
        pass &= errs.iter().all(|&e| e <= 1.0) && lc.holds && lc.constant <= 1.0 + 1e-6;
        writeln!(
            report,
            "{zeta},{},{},{},{},{}",
            fmt_f64(q),
            fmt_f64(beta),
            fmt_f64(alpha),
            lc.holds,
            fmt_f64(lc.constant)
        )
        .unwrap();
    }
    Outcome {
        pass,
        summary: format!(
            "largest estimator error {:.0}% of its tolerance",
            100.0 * worst
        ),
        report,
    }
}

fn zhang_and_variance() -> Outcome {
    let dist = MarginDistribution::halfspace(2, 1.0, 1.0).unwrap();
    let mut report = String::from("model,excess_class,excess_hinge,holds\n");
    let mut zhang_ok = 0;
    for t in 0..20u64 {
        let m = random_localized_model(&dist, rng::derive(600, t)).unwrap();
        let z = zhang_check(&m, &dist, 100_000, rng::derive(601, t)).unwrap();
        zhang_ok += usize::from(z.holds);
        writeln!(
            report,
            "{t},{},{},{}",
            fmt_f64(z.excess_classification),
            fmt_f64(z.excess_hinge),
            z.holds
        )
        .unwrap();
    }
    let honest = variance_bound_check(&dist, 0.25, 1.0, 1.0, 1_000_000, 10, 602).unwrap();
    let falsified = variance_bound_check(&dist, 0.25, 1.0, 1e-3, 1_000_000, 10, 602).unwrap();
    report.push_str("constant,trial,second_moment,first_moment,stderr,holds\n");
    for v in [&honest, &falsified] {
        for (t, tr) in v.trials.iter().enumerate() {
            writeln!(
                report,
                "{},{t},{},{},{},{}",
                fmt_f64(v.constant),
                fmt_f64(tr.second_moment),
                fmt_f64(tr.first_moment),
                fmt_f64(tr.stderr),
                tr.holds
            )
            .unwrap();
        }
    }
    let falsified_caught = falsified.trials.iter().any(|t| !t.holds);
    Outcome {
        pass: zhang_ok == 20 && honest.holds && falsified_caught,
        summary: format!(
            "comparison holds on {zhang_ok}/20 models, second-moment bound {} at c=1 and {} at c=1e-3",
            if honest.holds { "holds" } else { "fails" },
            if falsified_caught { "is violated" } else { "still holds" }
        ),
        report,
    }
}

fn theory_calculator() -> Outcome {
    let a = theory_exponents(2.0, 1.0, 2, 1.0).unwrap();
    let b = theory_exponents(1.0, 1.0, 2, 1.0).unwrap();
    let worked = a.kappa == 0.2
        && a.nu == 0.25
        && a.localized == 0.5
        && a.global == 0.4
        && b.localized == 0.375;
    let mut g = rng::seeded(707);
    let mut worst_rel: f64 = 0.0;
    let mut ordered = true;
    let mut report = format!(
        "{}\n{}\n{}\n",
        locsvm_core::TheoryExponents::CSV_HEADER,
        a.csv_row(),
        b.csv_row()
    );
    for _ in 0..100 {
        let t = theory_exponents(
            g.random_range(0.1..6.0),
            g.random_range(0.0..4.0),
            1 + g.random_range(0..6),
            g.random_range(0.0..5.0),
        )
        .unwrap();
        worst_rel = worst_rel.max((t.localized_direct - t.localized).abs() / t.localized);
        ordered &= t.localized >= t.global;
        report.push_str(&t.csv_row());
        report.push('\n');
    }
    Outcome {
        pass: worked && worst_rel <= 1e-12 && ordered,
        summary: format!(
            "worked values {}, two-route relative gap {worst_rel:.1e}, localized >= global on {} draws",
            if worked { "exact" } else { "wrong" },
            if ordered { "all" } else { "not all" }
        ),
        report,
    }
}

fn learning_rates() -> Outcome {
    let dist = MarginDistribution::halfspace(2, 1.0, 1.0).unwrap();
    let local = rate_experiment(&dist, &RateConfig::default()).unwrap();
    let global = rate_experiment(
        &dist,
        &RateConfig {
            method: RateMethod::Global,
            ..RateConfig::default()
        },
    )
    .unwrap();
    let in_band = (-0.70..=-0.30).contains(&local.slope);
    let not_slower = local.slope <= global.slope + 0.05;
    let mut report = String::new();
    for r in [&local, &global] {
        report.push_str(&r.to_csv());
        report.push_str(&r.summary_csv());
        report.push_str(&r.plot_data());
    }
    Outcome {
        pass: in_band && not_slower,
        summary: format!(
            "localized slope {:.3} (se {:.3}, theory -{}), global slope {:.3} (se {:.3}, theory -{})",
            local.slope, local.slope_stderr, local.theory_exponent, global.slope, global.slope_stderr, global.theory_exponent
        ),
        report,
    }
}

fn tv_adaptivity_check() -> Outcome {
    let dist = MarginDistribution::halfspace(2, 1.0, 1.0).unwrap();
    let n = 4096;
    let r = (n as f64).powf(-0.25);
    let cmp = tv_adaptivity(
        &dist,
        n,
        r,
        6,
        &[0, 1, 2, 3, 4],
        100_000,
        &SolverOptions::default(),
    )
    .unwrap();
    let mut report = String::from("seed,tv_excess,best_fixed_excess,best_lambda,best_gamma\n");
    for row in &cmp.rows {
        writeln!(
            report,
            "{},{},{},{},{}",
            row.seed,
            fmt_f64(row.tv_excess),
            fmt_f64(row.best_fixed_excess),
            fmt_f64(row.best_lambda),
            fmt_f64(row.best_gamma)
        )
        .unwrap();
    }
    Outcome {
        pass: cmp.ratio() <= 2.0,
        summary: format!(
            "mean excess {:.4} for TV-SVM vs {:.4} for the best fixed pair, ratio {:.2}",
            cmp.mean_tv,
            cmp.mean_best_fixed,
            cmp.ratio()
        ),
        report,
    }
}
