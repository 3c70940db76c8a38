use std::path::{Path, PathBuf};
use std::process::Command;

use evse_auction::model::{Preference, UserType};
use evse_auction::options::OptionPolicy;
use evse_auction::pricing::{generation_cost, PricingMode};
use evse_auction::scenario_io::{load_scenario, load_users, preset, save_scenario, save_users};
use evse_cli::output::read_ledger;
use evse_cli::report::OfflineKind;
use evse_cli::{
    cmd_compare, cmd_gen_scenario, cmd_simulate, CompareArgs, GenArgs, InputArgs, SimulateArgs,
};

fn simulate(input: InputArgs, out: &Path) -> SimulateArgs {
    SimulateArgs {
        input,
        mode: PricingMode::Exact,
        policy: OptionPolicy::Exhaustive,
        out: out.to_path_buf(),
    }
}

fn compare(input: InputArgs, out: &Path) -> CompareArgs {
    CompareArgs {
        input,
        mode: PricingMode::Exact,
        policy: OptionPolicy::Exhaustive,
        oracle_budget: 1e7,
        no_prune: false,
        require_exact: false,
        out: out.to_path_buf(),
    }
}

fn user(id: u64, arrival: usize, departure: usize, demand: u32, value: f64) -> UserType {
    UserType {
        id,
        submitted: arrival,
        arrival,
        departure,
        demand,
        preferences: vec![Preference {
            location: "L1".into(),
            value,
        }],
        schedules: None,
    }
}

/// Writes the S1 scenario (optionally with one cable) and `users`.
fn s1_files(dir: &Path, cables: u32, users: &[UserType]) -> (PathBuf, PathBuf) {
    let mut s = preset("s1", 0).unwrap().scenario;
    s.locations[0].cables_per_evse = cables;
    let (sp, up) = (dir.join("scenario.json"), dir.join("users.jsonl"));
    save_scenario(&sp, &s).unwrap();
    save_users(&up, users).unwrap();
    (sp, up)
}

fn evse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evse"))
}

#[test]
fn s1_single_user_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_simulate(&simulate(InputArgs::preset("s1"), &dir.path().join("run"))).unwrap();
    assert_eq!(r.online.welfare, 2.0);
    assert!((r.online.revenue - 0.35).abs() < 1e-12);
    assert!((r.online.total_utility - 1.65).abs() < 1e-12);
    assert_eq!(r.online.operational_cost, 0.0);
    for f in ["ledger.csv", "locations.csv", "summary.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn summary_matches_ledger_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let mut input = InputArgs::preset("downtown9");
    input.seed = 5;
    let out = dir.path().join("run");
    let r = cmd_simulate(&simulate(input, &out)).unwrap();
    let scenario = preset("downtown9", 5).unwrap().scenario;
    let rows = read_ledger(&out.join("ledger.csv")).unwrap();
    assert_eq!(rows.len(), r.users);

    let accepted: Vec<_> = rows.iter().filter(|r| r.decision == "accepted").collect();
    assert_eq!(accepted.len(), r.online.accepted);
    let valuation: f64 = accepted.iter().map(|r| r.valuation).sum();
    let revenue: f64 = rows.iter().map(|r| r.payment_total).sum();
    let utility: f64 = rows.iter().map(|r| r.utility).sum();

    let mut drawn = vec![0.0; scenario.slots()];
    for row in &accepted {
        let energy = row.energy.as_deref().unwrap();
        for (t, e) in energy.split(' ').enumerate() {
            drawn[t] += e.parse::<f64>().unwrap();
        }
    }
    let pool = &scenario.pools[0];
    let cost: f64 = (0..scenario.slots())
        .map(|t| generation_cost(drawn[t], pool, t).finite().unwrap())
        .sum();

    assert!((revenue - r.online.revenue).abs() < 1e-6);
    assert!((utility - r.online.total_utility).abs() < 1e-6);
    assert!((cost - r.online.operational_cost).abs() < 1e-6);
    assert!((valuation - cost - r.online.welfare).abs() < 1e-6);
    let served: usize = r.locations.iter().map(|l| l.served).sum();
    assert_eq!(served, accepted.len());
}

#[test]
fn congested_locations_post_higher_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let mut input = InputArgs::preset("downtown9");
    input.seed = 42;
    let r = cmd_simulate(&simulate(input, dir.path())).unwrap();
    let peak = |i: usize| r.locations[i].peak_cable_price;
    let congested = [2, 3, 5].map(peak);
    let quiet = [4, 6, 8].map(peak);
    let mean = |xs: [f64; 3]| xs.iter().sum::<f64>() / 3.0;
    assert!(mean(congested) >= mean(quiet));
    assert_eq!(r.users, 1000);
}

#[test]
fn ledgers_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let mut input = InputArgs::preset("downtown9");
        input.seed = 9;
        let mut args = simulate(input, &dir.path().join(run));
        args.policy = OptionPolicy::Heuristic(4);
        cmd_simulate(&args).unwrap();
    }
    let a = std::fs::read(dir.path().join("a/ledger.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/ledger.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn compare_on_small_fixtures() {
    let dir = tempfile::tempdir().unwrap();

    let (s, u) = s1_files(
        dir.path(),
        1,
        &[user(1, 1, 4, 2, 0.5), user(2, 2, 4, 2, 5.0)],
    );
    let r = cmd_compare(&compare(
        InputArgs::files(s, u),
        &dir.path().join("congested"),
    ))
    .unwrap();
    let base = r.baseline.unwrap();
    assert!(r.online.welfare >= base.welfare);
    assert_eq!((r.online.welfare, base.welfare), (5.0, 0.5));
    assert_eq!(r.offline.unwrap().kind, OfflineKind::Exact);

    let (s, u) = s1_files(
        dir.path(),
        2,
        &[user(1, 1, 2, 1, 2.0), user(2, 3, 4, 1, 2.0)],
    );
    let out = dir.path().join("quiet");
    let r = cmd_compare(&compare(InputArgs::files(s, u), &out)).unwrap();
    let online: Vec<_> = read_ledger(&out.join("ledger.csv"))
        .unwrap()
        .into_iter()
        .map(|r| r.decision)
        .collect();
    let base: Vec<_> = read_ledger(&out.join("baseline_ledger.csv"))
        .unwrap()
        .into_iter()
        .map(|r| r.decision)
        .collect();
    assert_eq!(online, base);
    assert_eq!(r.online.accepted, 2);

    let (s, u) = s1_files(dir.path(), 2, &[]);
    let r = cmd_compare(&compare(InputArgs::files(s, u), &dir.path().join("empty"))).unwrap();
    assert_eq!(r.online.welfare, 0.0);
    assert_eq!(r.baseline.unwrap().welfare, 0.0);
    assert_eq!(r.offline.unwrap().welfare, 0.0);
}

#[test]
fn compare_falls_back_to_upper_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = compare(InputArgs::preset("downtown9"), dir.path());
    args.oracle_budget = 1e3;
    let r = cmd_compare(&args).unwrap();
    let offline = r.offline.unwrap();
    assert_eq!(offline.kind, OfflineKind::UpperBound);
    assert!(offline.welfare >= r.online.welfare);
    assert!(r.empirical_ratio.is_none());
    let table = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 10);
}

#[test]
fn gen_scenario_presets_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (sp, up) = cmd_gen_scenario(&GenArgs {
        preset: "downtown9".into(),
        overrides: vec!["evse_count.1=10".into(), "users=50".into()],
        seed: 1,
        out: dir.path().join("d9"),
    })
    .unwrap();
    let s = load_scenario(&sp).unwrap();
    let m: Vec<usize> = s.locations.iter().map(|l| l.evse_count).collect();
    assert_eq!(m, vec![10, 4, 8, 8, 2, 8, 2, 4, 2]);
    assert!(s.locations.iter().all(|l| l.cables_per_evse == 4));
    assert!(evse_auction::model::validate_scenario(&s).is_empty());
    assert_eq!(load_users(&up).unwrap().len(), 50);

    let (sp, up) = cmd_gen_scenario(&GenArgs {
        preset: "s1".into(),
        overrides: vec![],
        seed: 0,
        out: dir.path().join("s1"),
    })
    .unwrap();
    assert_eq!(
        load_scenario(&sp).unwrap(),
        preset("s1", 0).unwrap().scenario
    );
    assert_eq!(load_users(&up).unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let status = evse()
        .args(["simulate", "--preset", "s1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let (sp, up) = s1_files(dir.path(), 0, &[user(1, 1, 2, 1, 2.0)]);
    let output = evse()
        .args(["simulate", "--scenario"])
        .arg(&sp)
        .arg("--users")
        .arg(&up)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("cables_per_evse"));

    let status = evse()
        .args([
            "compare",
            "--preset",
            "downtown9",
            "--require-exact",
            "--oracle-budget",
            "10",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let status = evse()
        .args([
            "simulate",
            "--preset",
            "s1",
            "--price-trace",
            "/nonexistent/prices.csv",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_ne!(status.code(), Some(0));

    let status = evse()
        .args(["gen-scenario", "--preset", "uptown", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = evse()
        .args([
            "validate-dapr",
            "--preset",
            "downtown9",
            "--alpha-factor",
            "0.25",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_ne!(status.code(), Some(0));
    let status = evse()
        .args(["validate-dapr", "--preset", "downtown9", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("dapr.csv").exists());
}

#[test]
fn price_trace_replaces_grid_prices() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("prices.csv");
    let body: String = std::iter::once("timestamp,value\n".to_string())
        .chain((0..16).map(|q| format!("{q},0.1\n")))
        .collect();
    std::fs::write(&trace, body).unwrap();
    let mut input = InputArgs::preset("s1");
    input.price_trace = Some(trace);
    let r = cmd_simulate(&simulate(input, dir.path())).unwrap();
    assert_eq!(r.online.accepted, 1);
    assert!(r.online.revenue < 0.35);
}
