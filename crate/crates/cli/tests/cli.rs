use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use locsvm_core::Partition;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn locsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locsvm"))
        .args(args)
        .env_remove("LOCSVM_SEED")
        .output()
        .expect("run locsvm")
}

fn ok(args: &[&str]) -> String {
    let out = locsvm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn out_arg(dir: &Path) -> String {
    format!("out_dir={}", dir.display())
}

#[test]
fn theory_row_has_worked_exponents() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "theory",
        "beta=2",
        "q=1",
        "d=2",
        "zeta=1",
        &out_arg(dir.path()),
    ]);
    let table = fs::read_to_string(dir.path().join("theory.csv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("localized"), "0.5");
    assert_eq!(col("global"), "0.4");
    assert_eq!(col("kappa"), "0.2");
    assert_eq!(col("nu"), "0.25");
}

#[test]
fn partition_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["partition", "d=2", "r=0.5", "seed=3", &out_arg(dir.path())]);
    let text = fs::read_to_string(dir.path().join("partition.txt")).unwrap();
    let p = Partition::from_text(&text).unwrap();
    assert_eq!(p.to_text(), text);
    assert_eq!(p.radius(), 0.5);
    let inv = fs::read_to_string(dir.path().join("partition_invariants.csv")).unwrap();
    assert!(inv.lines().nth(1).unwrap().ends_with("true,true,true"));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let cases: [&[&str]; 4] = [
        &["train", "n=512", "n_test=5000", "seed=11"],
        &["tvsvm", "n=512", "n_test=5000", "net_size=3", "seed=11"],
        &["margins", "n_mc=20000", "seed=11"],
        &[
            "rates",
            "n_ladder=32,64,128,256",
            "reps=3",
            "n_test=2000",
            "seed=11",
        ],
    ];
    for args in cases {
        let mut outputs = Vec::new();
        for threads in ["1", "3", "1"] {
            let dir = tempfile::tempdir().unwrap();
            let out = out_arg(dir.path());
            let mut full = vec!["--threads", threads];
            full.extend_from_slice(args);
            full.push(&out);
            ok(&full);
            outputs.push(files(dir.path()));
        }
        assert!(!outputs[0].is_empty());
        assert_eq!(outputs[0], outputs[1], "{args:?}");
        assert_eq!(outputs[0], outputs[2], "{args:?}");
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["partition", "r=0.4", "seed=9", &out_arg(a.path())]);
    let status = Command::new(env!("CARGO_BIN_EXE_locsvm"))
        .args(["partition", "r=0.4", &out_arg(b.path())])
        .env("LOCSVM_SEED", "9")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn margins_recover_noise_exponent() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "margins",
        "family=halfspace",
        "zeta=1",
        "tau=1",
        "n_mc=1000000",
        "seed=7",
        &out_arg(dir.path()),
    ]);
    let csv = fs::read_to_string(dir.path().join("margins.csv")).unwrap();
    let q_row: Vec<&str> = csv
        .lines()
        .find(|l| l.starts_with("q,"))
        .unwrap()
        .split(',')
        .collect();
    let q: f64 = q_row[2].parse().unwrap();
    assert!((0.9..=1.1).contains(&q), "q estimate {q}");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("theory.cfg");
    fs::write(&cfg, "# rate theory\nbeta = 1\nq=1\nd=2\nzeta=1\n").unwrap();
    let out = ok(&[
        "theory",
        "--config",
        cfg.to_str().unwrap(),
        &out_arg(dir.path()),
    ]);
    assert!(out.contains(",0.375,"), "{out}");
    let out = ok(&[
        "theory",
        "--config",
        cfg.to_str().unwrap(),
        "beta=2",
        &out_arg(dir.path()),
    ]);
    assert!(out.contains(",0.5,0.4,"), "{out}");
}

#[test]
fn help_lists_every_key() {
    let expected: [(&str, &[&str]); 6] = [
        ("partition", &["d", "r", "probes", "seed", "out_dir"]),
        (
            "train",
            &[
                "family", "d", "zeta", "tau", "R", "n", "nu", "r", "s", "sigma", "n_test", "seed",
                "out_dir",
            ],
        ),
        (
            "tvsvm",
            &[
                "family", "n", "r", "net_mode", "net_size", "seed", "out_dir",
            ],
        ),
        (
            "margins",
            &["family", "d", "zeta", "tau", "R", "n_mc", "seed", "out_dir"],
        ),
        ("theory", &["beta", "q", "d", "zeta", "out_dir"]),
        (
            "rates",
            &[
                "family", "n_ladder", "reps", "nu", "sigma", "c", "method", "seed", "out_dir",
            ],
        ),
    ];
    for (cmd, keys) in expected {
        let help = ok(&[cmd, "--help"]);
        for k in keys {
            assert!(
                help.contains(&format!("\n  {k} ")),
                "{cmd} --help misses {k}"
            );
        }
    }
}

const BAD_ITEMS: [&str; 24] = [
    "bogus=1",
    "n",
    "=3",
    "n=",
    "n=-5",
    "n=abc",
    "n=1e99",
    "d=0",
    "d=banana",
    "zeta=-1",
    "tau=0",
    "tau=nan",
    "family=cube",
    "r=0",
    "r=-0.3",
    "r=7",
    "seed=-1",
    "seed=1.5",
    "n_test=10",
    "net_mode=random",
    "method=best",
    "n_ladder=64,32,16,8",
    "reps=1",
    "beta=0",
];

const COMMANDS: [&str; 6] = ["partition", "train", "tvsvm", "margins", "theory", "rates"];

#[test]
fn malformed_configs_fail_cleanly() {
    let mut rng = StdRng::seed_from_u64(2024);
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    for case in 0..100 {
        let cmd = COMMANDS[rng.random_range(0..COMMANDS.len())];
        let bad = BAD_ITEMS[rng.random_range(0..BAD_ITEMS.len())];
        let mut args: Vec<String> = vec![cmd.into()];
        if case % 3 == 0 {
            let cfg = dir.path().join(format!("bad{case}.cfg"));
            let junk: String = (0..rng.random_range(0..20))
                .map(|_| char::from(rng.random_range(b' '..=b'~')))
                .collect();
            fs::write(&cfg, format!("{bad}\n{junk}\n")).unwrap();
            args.push("--config".into());
            args.push(cfg.to_string_lossy().into_owned());
        } else {
            args.push(bad.into());
        }
        args.push(out.clone());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let res = locsvm(&refs);
        let stderr = String::from_utf8_lossy(&res.stderr);
        let code = res.status.code();
        assert!(
            code.is_some() && code != Some(0) && code != Some(101),
            "{args:?} exited with {code:?}: {stderr}"
        );
        assert!(!stderr.trim().is_empty(), "{args:?} printed no diagnostic");
    }
}
