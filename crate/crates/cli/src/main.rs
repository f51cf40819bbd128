//! `locsvm`: batch front end for partitions, localized and TV-SVM training,
//! margin-exponent estimation, rate theory, and learning-curve experiments.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use locsvm_core::analysis::{
    estimate_risk, rate_experiment, rule_parameters, theory_exponents, RateConfig, RateMethod,
    RiskEstimate,
};
use locsvm_core::geometry::build_rnet;
use locsvm_core::tvsvm::{build_nets, train_tv};
use locsvm_core::{
    fmt_f64, model::train_localized, rng, Family, MarginDistribution, NetMode, SolverOptions,
    TheoryExponents,
};

use config::{key, key_help, Config, Key};

const DIST_KEYS: [Key; 5] = [
    key("family", "halfspace", "halfspace or sphere"),
    key("d", "2", "input dimension"),
    key("zeta", "1", "margin-noise exponent of the posterior"),
    key("tau", "1", "distance at which the posterior saturates"),
    key("R", "0.5", "sphere radius (sphere family only)"),
];
const SEED: Key = key(
    "seed",
    "",
    "random seed (falls back to LOCSVM_SEED, then 0)",
);
const OUT: Key = key("out_dir", ".", "directory for output files");

const PARTITION_KEYS: [Key; 5] = [
    key("d", "2", "input dimension"),
    key("r", "0.5", "net radius"),
    key("probes", "20000", "random probes for the covering check"),
    SEED,
    OUT,
];

const THEORY_KEYS: [Key; 5] = [
    key("beta", "2", "margin-noise exponent"),
    key("q", "1", "noise exponent"),
    key("d", "2", "input dimension"),
    key("zeta", "1", "lower-control exponent"),
    OUT,
];

fn with_dist(extra: &[Key]) -> Vec<Key> {
    DIST_KEYS
        .iter()
        .chain(extra)
        .map(|k| key(k.name, k.default, k.help))
        .collect()
}

fn train_keys() -> Vec<Key> {
    with_dist(&[
        key("n", "1024", "training sample size"),
        key("nu", "0.25", "cell exponent, r = n^-nu when r is unset"),
        key("r", "", "net radius (default: n^-nu)"),
        key("s", "", "separation for near/far cells (default: r)"),
        key(
            "sigma",
            "",
            "regularization exponent, lambda = n^-sigma (default: from theory)",
        ),
        key("n_test", "100000", "test points for the risk estimate"),
        key("probe_budget", "64", "probes per cell for classification"),
        key("eps_kkt", "1e-6", "solver KKT tolerance"),
        SEED,
        OUT,
    ])
}

fn tvsvm_keys() -> Vec<Key> {
    with_dist(&[
        key(
            "n",
            "4096",
            "sample size (split into training and validation halves)",
        ),
        key("nu", "0.25", "cell exponent, r = n^-nu when r is unset"),
        key("r", "", "net radius (default: n^-nu)"),
        key("net_mode", "geometric", "exact or geometric parameter nets"),
        key("net_size", "6", "points per net (geometric mode)"),
        key("n_test", "100000", "test points for the risk estimate"),
        key("eps_kkt", "1e-6", "solver KKT tolerance"),
        SEED,
        OUT,
    ])
}

fn margins_keys() -> Vec<Key> {
    with_dist(&[key("n_mc", "1000000", "Monte Carlo samples"), SEED, OUT])
}

fn rates_keys() -> Vec<Key> {
    with_dist(&[
        key(
            "n_ladder",
            "256,512,1024,2048,4096,8192",
            "comma-separated sample sizes",
        ),
        key("reps", "5", "repetitions per sample size"),
        key("method", "localized", "localized or global"),
        key("nu", "0.25", "cell exponent, r = c n^-nu"),
        key("c", "1", "cell radius constant"),
        key(
            "sigma",
            "",
            "regularization exponent (default: from theory)",
        ),
        key("n_test", "100000", "test points per repetition"),
        key("probe_budget", "64", "probes per cell for classification"),
        key("eps_kkt", "1e-3", "solver KKT tolerance"),
        key(
            "drop_smallest",
            "false",
            "leave the smallest n out of the slope fit",
        ),
        SEED,
        OUT,
    ])
}

#[derive(Parser)]
#[command(
    name = "locsvm",
    version,
    about = "Localized Gaussian-kernel SVMs on Voronoi partitions"
)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Settings {
    /// File with one key=value per line; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides.
    settings: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build an r-net and report its invariants.
    #[command(after_help = key_help(&PARTITION_KEYS))]
    Partition(Settings),
    /// Train a localized SVM with the rate-theory parameters.
    #[command(after_help = key_help(&train_keys()))]
    Train(Settings),
    /// Train a localized SVM with per-cell training/validation selection.
    #[command(after_help = key_help(&tvsvm_keys()))]
    Tvsvm(Settings),
    /// Estimate margin exponents of a synthetic distribution.
    #[command(after_help = key_help(&margins_keys()))]
    Margins(Settings),
    /// Tabulate rate exponents.
    #[command(after_help = key_help(&THEORY_KEYS))]
    Theory(Settings),
    /// Run a learning-curve experiment.
    #[command(after_help = key_help(&rates_keys()))]
    Rates(Settings),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("locsvm: error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Partition(s) => cmd_partition(&Config::load(
            s.config.as_ref(),
            &s.settings,
            &PARTITION_KEYS,
        )?),
        Command::Train(s) => cmd_train(&Config::load(
            s.config.as_ref(),
            &s.settings,
            &train_keys(),
        )?),
        Command::Tvsvm(s) => cmd_tvsvm(&Config::load(
            s.config.as_ref(),
            &s.settings,
            &tvsvm_keys(),
        )?),
        Command::Margins(s) => cmd_margins(&Config::load(
            s.config.as_ref(),
            &s.settings,
            &margins_keys(),
        )?),
        Command::Theory(s) => {
            cmd_theory(&Config::load(s.config.as_ref(), &s.settings, &THEORY_KEYS)?)
        }
        Command::Rates(s) => cmd_rates(&Config::load(
            s.config.as_ref(),
            &s.settings,
            &rates_keys(),
        )?),
    }
}

fn seed(cfg: &Config) -> Result<u64> {
    if let Some(s) = cfg.get_opt::<u64>("seed")? {
        return Ok(s);
    }
    match std::env::var("LOCSVM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|e| anyhow::anyhow!("bad LOCSVM_SEED `{v}`: {e}")),
        Err(_) => Ok(0),
    }
}

fn out_dir(cfg: &Config, keys: &[Key]) -> Result<PathBuf> {
    let dir: PathBuf = cfg.get::<String>("out_dir", keys)?.into();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))
}

fn bounded<T: PartialOrd + std::fmt::Display + Copy>(name: &str, v: T, lo: T, hi: T) -> Result<T> {
    if !(v >= lo && v <= hi) {
        bail!("`{name}` must lie in [{lo}, {hi}], got {v}");
    }
    Ok(v)
}

fn dimension(cfg: &Config, keys: &[Key]) -> Result<usize> {
    bounded("d", cfg.get("d", keys)?, 1, 16)
}

fn distribution(cfg: &Config, keys: &[Key]) -> Result<MarginDistribution> {
    let d = dimension(cfg, keys)?;
    let zeta: f64 = cfg.get("zeta", keys)?;
    let tau: f64 = cfg.get("tau", keys)?;
    let family = match cfg.get::<String>("family", keys)?.as_str() {
        "halfspace" => {
            if cfg.raw("R").is_some() {
                bail!("`R` only applies to the sphere family");
            }
            Family::Halfspace
        }
        "sphere" => Family::Sphere {
            radius: cfg.get("R", keys)?,
        },
        other => bail!("unknown family `{other}` (halfspace or sphere)"),
    };
    Ok(MarginDistribution::new(family, d, zeta, tau)?)
}

fn solver(cfg: &Config, keys: &[Key]) -> Result<SolverOptions> {
    Ok(SolverOptions {
        eps_kkt: cfg.get("eps_kkt", keys)?,
        ..SolverOptions::default()
    })
}

/// Radius from `r`, or `n^-nu`.
fn radius(cfg: &Config, keys: &[Key], n: usize) -> Result<f64> {
    let r = match cfg.get_opt::<f64>("r")? {
        Some(r) => r,
        None => {
            let nu: f64 = cfg.get("nu", keys)?;
            if !(nu > 0.0 && nu.is_finite()) {
                bail!("`nu` must be positive, got {nu}");
            }
            (n as f64).powf(-nu).min(2.0)
        }
    };
    if !(r > 0.0 && r <= 2.0) {
        bail!("`r` must lie in (0, 2], got {r}");
    }
    Ok(r)
}

fn risk_csv(risk: &RiskEstimate, bayes: f64) -> String {
    format!(
        "classification,hinge,excess_class,excess_hinge,stderr_class,stderr_hinge,stderr_excess,bayes_risk,n_test\n{},{},{},{},{},{},{},{},{}\n",
        fmt_f64(risk.classification),
        fmt_f64(risk.hinge),
        fmt_f64(risk.excess_classification),
        fmt_f64(risk.excess_hinge),
        fmt_f64(risk.stderr_classification),
        fmt_f64(risk.stderr_hinge),
        fmt_f64(risk.stderr_excess),
        fmt_f64(bayes),
        risk.n_test
    )
}

fn cmd_partition(cfg: &Config) -> Result<()> {
    let keys = &PARTITION_KEYS;
    let d = dimension(cfg, keys)?;
    let r: f64 = cfg.get("r", keys)?;
    let probes = bounded("probes", cfg.get("probes", keys)?, 1, 10_000_000)?;
    let seed = seed(cfg)?;
    let dir = out_dir(cfg, keys)?;
    let p = build_rnet(d, r, seed)?;
    let inv = p.check_invariants(probes, rng::derive(seed, 1));
    write(&dir, "partition.txt", &p.to_text())?;
    write(
        &dir,
        "partition_invariants.csv",
        &format!(
            "cells,min_separation,max_cover_distance,size_bound,separation_ok,covering_ok,size_ok\n{},{},{},{},{},{},{}\n",
            inv.cells,
            fmt_f64(inv.min_separation),
            fmt_f64(inv.max_cover_distance),
            fmt_f64(inv.size_bound),
            inv.separation_ok,
            inv.covering_ok,
            inv.size_ok
        ),
    )?;
    println!(
        "{} cells, invariants {}",
        inv.cells,
        if inv.all_ok() { "ok" } else { "VIOLATED" }
    );
    Ok(())
}

fn cmd_train(cfg: &Config) -> Result<()> {
    let keys = &train_keys();
    let dist = distribution(cfg, keys)?;
    let n = bounded("n", cfg.get("n", keys)?, 1, 2_000_000)?;
    let n_test = bounded("n_test", cfg.get("n_test", keys)?, 1000, 10_000_000)?;
    let budget = bounded("probe_budget", cfg.get("probe_budget", keys)?, 1, 100_000)?;
    let r = radius(cfg, keys, n)?;
    let s = cfg.get_opt::<f64>("s")?.unwrap_or(r);
    let opts = solver(cfg, keys)?;
    let seed = seed(cfg)?;
    let dir = out_dir(cfg, keys)?;

    let sheet = dist.exponents();
    let theory = theory_exponents(sheet.beta, sheet.q, dist.dim(), sheet.zeta)?;
    // exponent with r = n^-nu, for the default sigma
    let nu = if n > 1 {
        -r.ln() / (n as f64).ln()
    } else {
        0.0
    };
    let sigma = match cfg.get_opt::<f64>("sigma")? {
        Some(v) => v,
        None => theory.sigma_at(nu.max(0.0)),
    };
    let data = dist.sample(n, rng::derive(seed, 0));
    let p = build_rnet(dist.dim(), r, rng::derive(seed, 1))?;
    let (lambdas, gammas) = rule_parameters(
        &dist,
        &p,
        n,
        s,
        sigma,
        theory.kappa,
        budget,
        rng::derive(seed, 2),
    )?;
    let model = train_localized(&data, &p, &lambdas, &gammas, &opts)?;
    let risk = estimate_risk(&model, &dist, n_test, rng::derive(seed, 3))?;
    write(&dir, "model.txt", &model.to_text())?;
    write(&dir, "risk.csv", &risk_csv(&risk, dist.bayes_risk()))?;
    println!(
        "{} cells, excess classification risk {:.5} (se {:.5})",
        p.num_cells(),
        risk.excess_classification,
        risk.stderr_excess
    );
    Ok(())
}

fn cmd_tvsvm(cfg: &Config) -> Result<()> {
    let keys = &tvsvm_keys();
    let dist = distribution(cfg, keys)?;
    let n = bounded("n", cfg.get("n", keys)?, 2, 2_000_000)?;
    let n_test = bounded("n_test", cfg.get("n_test", keys)?, 1000, 10_000_000)?;
    let net_size = bounded("net_size", cfg.get("net_size", keys)?, 1, 64)?;
    let mode = match cfg.get::<String>("net_mode", keys)?.as_str() {
        "exact" => NetMode::Exact,
        "geometric" => NetMode::Geometric,
        other => bail!("unknown net_mode `{other}` (exact or geometric)"),
    };
    let r = radius(cfg, keys, n)?;
    let opts = solver(cfg, keys)?;
    let seed = seed(cfg)?;
    let dir = out_dir(cfg, keys)?;

    let data = dist.sample(n, rng::derive(seed, 0));
    let p = build_rnet(dist.dim(), r, rng::derive(seed, 1))?;
    let nets = build_nets(n, r, mode, net_size)?;
    let (model, report) = train_tv(&data, &p, &nets, &opts)?;
    let risk = estimate_risk(&model, &dist, n_test, rng::derive(seed, 2))?;
    write(&dir, "model.txt", &model.to_text())?;
    write(&dir, "tv_report.csv", &report.to_csv())?;
    write(&dir, "risk.csv", &risk_csv(&risk, dist.bayes_risk()))?;
    println!(
        "{} cells, {} candidate pairs, excess classification risk {:.5} (se {:.5})",
        p.num_cells(),
        nets.len(),
        risk.excess_classification,
        risk.stderr_excess
    );
    Ok(())
}

fn cmd_margins(cfg: &Config) -> Result<()> {
    let keys = &margins_keys();
    let dist = distribution(cfg, keys)?;
    let n_mc = bounded("n_mc", cfg.get("n_mc", keys)?, 1, 100_000_000)?;
    let seed = seed(cfg)?;
    let dir = out_dir(cfg, keys)?;
    let sheet = dist.exponents();
    let q = dist.fit_ne(n_mc, seed)?;
    let beta = dist.fit_mne(n_mc, seed)?;
    let alpha = dist.fit_me(n_mc, seed)?;
    let lc = dist.check_lc(n_mc, seed)?;
    let mut out = String::from("quantity,declared,estimated,stderr\n");
    for (name, declared, fit) in [
        ("q", sheet.q, &q),
        ("beta", sheet.beta, &beta),
        ("alpha", sheet.alpha, &alpha),
    ] {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            fmt_f64(declared),
            fmt_f64(fit.slope),
            fmt_f64(fit.stderr)
        ));
    }
    out.push_str(&format!(
        "lc_constant,{},{},NA\n",
        fmt_f64(sheet.zeta),
        fmt_f64(lc.constant)
    ));
    write(&dir, "margins.csv", &out)?;
    println!(
        "q {:.3} (declared {}), beta {:.3} (declared {}), alpha {:.3} (declared {}), lower control {}",
        q.slope,
        sheet.q,
        beta.slope,
        sheet.beta,
        alpha.slope,
        sheet.alpha,
        if lc.holds { "holds" } else { "fails" }
    );
    Ok(())
}

fn cmd_theory(cfg: &Config) -> Result<()> {
    let keys = &THEORY_KEYS;
    let t = theory_exponents(
        cfg.get("beta", keys)?,
        cfg.get("q", keys)?,
        dimension(cfg, keys)?,
        cfg.get("zeta", keys)?,
    )?;
    let dir = out_dir(cfg, keys)?;
    let table = format!("{}\n{}\n", TheoryExponents::CSV_HEADER, t.csv_row());
    write(&dir, "theory.csv", &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_rates(cfg: &Config) -> Result<()> {
    let keys = &rates_keys();
    let dist = distribution(cfg, keys)?;
    let ladder = cfg
        .get::<String>("n_ladder", keys)?
        .split(',')
        .map(|v| {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("bad n_ladder entry `{v}`: {e}"))?;
            bounded("n_ladder entry", n, 4, 200_000)
        })
        .collect::<Result<Vec<_>>>()?;
    let method = match cfg.get::<String>("method", keys)?.as_str() {
        "localized" => RateMethod::Localized,
        "global" => RateMethod::Global,
        other => bail!("unknown method `{other}` (localized or global)"),
    };
    let rc = RateConfig {
        ladder,
        reps: bounded("reps", cfg.get("reps", keys)?, 1, 1000)?,
        radius_scale: cfg.get("c", keys)?,
        nu: cfg.get("nu", keys)?,
        sigma: cfg.get_opt("sigma")?,
        n_test: bounded("n_test", cfg.get("n_test", keys)?, 1000, 10_000_000)?,
        probe_budget: bounded("probe_budget", cfg.get("probe_budget", keys)?, 1, 100_000)?,
        seed: seed(cfg)?,
        drop_smallest: cfg.get("drop_smallest", keys)?,
        method,
        solver: solver(cfg, keys)?,
    };
    let dir = out_dir(cfg, keys)?;
    let report = rate_experiment(&dist, &rc)?;
    write(&dir, "rates.csv", &report.to_csv())?;
    write(&dir, "rates_summary.csv", &report.summary_csv())?;
    write(&dir, "rates_plot.dat", &report.plot_data())?;
    if report.floored {
        eprintln!("locsvm: warning: some mean excess risks were floored at 1e-6 before the fit");
    }
    println!(
        "slope {:.3} (se {:.3}), theory -{}",
        report.slope, report.slope_stderr, report.theory_exponent
    );
    Ok(())
}
