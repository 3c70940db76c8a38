use std::path::{Path, PathBuf};

use evse_auction::engine::{run_auction, AuctionOutcome};
use evse_auction::model::{
    validate_bounds, validate_scenario, validate_users, ChargeOption, Scenario, UserType,
    ValueBounds,
};
use evse_auction::options::{generate_options, OptionPolicy, DEFAULT_MAX_OPTIONS};
use evse_auction::oracle::{
    no_mechanism_baseline, offline_upper_bound, search_leaves, solve_offline_exact, OracleConfig,
    Ratio,
};
use evse_auction::pricing::{
    alpha_1, alpha_2, compute_bounds, verify_dapr, CapacityCost, GenerationCost, PriceCurve,
    PricingMode,
};
use evse_auction::scenario_io::{
    apply_override, generate_users, load_price_trace, load_scenario, load_solar_trace, load_users,
    preset, save_scenario, save_users, UserPopulationSpec,
};
use evse_auction::Error;

use crate::output::{
    write_json, write_ledger, write_locations, write_rows, ComparisonRow, DaprRow,
};
use crate::report::{scenario_digest, OfflineKind, OfflineSummary, RunReport, RunSummary};
use crate::{CliError, CliResult, CompareArgs, DaprArgs, GenArgs, InputArgs, SimulateArgs};

/// A validated scenario, its users and the bounds to price with.
pub struct Inputs {
    pub scenario: Scenario,
    pub users: Vec<UserType>,
    pub bounds: ValueBounds,
}

fn load_base_scenario(input: &InputArgs) -> CliResult<(Scenario, Option<Vec<UserType>>)> {
    let (mut scenario, preset_users) = match (&input.scenario, &input.preset) {
        (Some(path), _) => (load_scenario(path)?, None),
        (None, Some(name)) => {
            let p = preset(name, input.seed)?;
            let users = p.users()?;
            (p.scenario, Some(users))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --scenario or --preset is required".into(),
            ))
        }
    };
    let slots = scenario.slots();
    if let Some(path) = &input.price_trace {
        let prices = load_price_trace(path, slots)?;
        for pool in &mut scenario.pools {
            pool.grid_price = prices.clone();
        }
    }
    if let Some(path) = &input.solar_trace {
        let solar = load_solar_trace(path, slots, input.band_fraction)?;
        for pool in &mut scenario.pools {
            pool.solar = solar.actual.clone();
            pool.solar_lower = solar.lower.clone();
            pool.solar_upper = solar.upper.clone();
        }
    }
    let violations = validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    Ok((scenario, preset_users))
}

pub fn load_inputs(input: &InputArgs) -> CliResult<Inputs> {
    let (scenario, preset_users) = load_base_scenario(input)?;
    let users = if let Some(path) = &input.users {
        load_users(path)?
    } else if let Some(path) = &input.users_spec {
        let text = std::fs::read(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let mut spec: UserPopulationSpec =
            serde_json::from_slice(&text).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?;
        spec.seed = input.seed;
        generate_users(&spec, &scenario)?
    } else if let Some(users) = preset_users {
        users
    } else {
        return Err(CliError::Usage(
            "one of --users or --users-spec is required".into(),
        ));
    };
    let violations = validate_users(&scenario, &users);
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    let bounds = if input.derive_bounds {
        let options = exhaustive_options(&scenario, &users, input.seed);
        compute_bounds(&users, &options, &scenario)?
    } else {
        scenario.bounds
    };
    let violations = validate_bounds(&scenario, &bounds);
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    Ok(Inputs {
        scenario,
        users,
        bounds,
    })
}

fn exhaustive_options(
    scenario: &Scenario,
    users: &[UserType],
    seed: u64,
) -> Vec<Vec<ChargeOption>> {
    users
        .iter()
        .map(|u| {
            generate_options(
                u,
                scenario,
                OptionPolicy::Exhaustive,
                DEFAULT_MAX_OPTIONS,
                None,
                seed,
            )
        })
        .collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn finite(x: evse_auction::Result<f64>) -> Option<f64> {
    x.ok().filter(|a| a.is_finite())
}

fn base_report(
    inputs: &Inputs,
    mode: PricingMode,
    policy: OptionPolicy,
    seed: u64,
    online: &AuctionOutcome,
) -> RunReport {
    RunReport {
        scenario_digest: scenario_digest(&inputs.scenario),
        mode,
        policy: policy.to_string(),
        seed,
        users: inputs.users.len(),
        bounds: inputs.bounds,
        alpha_1: finite(alpha_1(&inputs.scenario, &inputs.bounds)),
        alpha_2: finite(alpha_2(&inputs.scenario, &inputs.bounds)),
        online: RunSummary::from(online),
        baseline: None,
        offline: None,
        empirical_ratio: None,
        locations: online.locations.clone(),
    }
}

/// Runs the online mechanism. Writes `ledger.csv`, `locations.csv` and
/// `summary.json` into `args.out`.
pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<RunReport> {
    let inputs = load_inputs(&args.input)?;
    let seed = args.input.seed;
    let online = run_auction(
        &inputs.scenario,
        &inputs.users,
        &inputs.bounds,
        args.mode,
        args.policy,
        seed,
    )?;
    let report = base_report(&inputs, args.mode, args.policy, seed, &online);
    create_dir(&args.out)?;
    write_ledger(
        &args.out.join("ledger.csv"),
        &inputs.scenario,
        &online.ledger,
    )?;
    write_locations(&args.out.join("locations.csv"), &online.locations)?;
    write_json(&args.out.join("summary.json"), &report)?;
    Ok(report)
}

enum Offline {
    Exact(evse_auction::oracle::OfflineSolution),
    Bound(evse_auction::oracle::UpperBound),
}

/// Runs the online mechanism, the no-mechanism baseline and the offline
/// reference on the same inputs. Adds `baseline_ledger.csv` and
/// `comparison.csv` to the simulate outputs.
pub fn cmd_compare(args: &CompareArgs) -> CliResult<RunReport> {
    let inputs = load_inputs(&args.input)?;
    let seed = args.input.seed;
    let (s, users) = (&inputs.scenario, &inputs.users);
    let config = OracleConfig {
        budget: args.oracle_budget,
        prune: !args.no_prune,
    };

    let (online, baseline, offline) = std::thread::scope(|scope| {
        let online =
            scope.spawn(|| run_auction(s, users, &inputs.bounds, args.mode, args.policy, seed));
        let baseline = scope.spawn(|| no_mechanism_baseline(s, users, args.policy, seed));
        let offline = scope.spawn(|| -> evse_auction::Result<(Offline, f64)> {
            let options = exhaustive_options(s, users, seed);
            let leaves = search_leaves(s, users, &options);
            if leaves <= config.budget || args.require_exact {
                Ok((
                    Offline::Exact(solve_offline_exact(s, users, &options, config)?),
                    leaves,
                ))
            } else {
                Ok((
                    Offline::Bound(offline_upper_bound(s, users, &options)),
                    leaves,
                ))
            }
        });
        (
            online.join().expect("online run"),
            baseline.join().expect("baseline run"),
            offline.join().expect("offline run"),
        )
    });
    let online = online?;
    let baseline = baseline?;
    let (offline, leaves) = offline?;

    let (kind, offline_welfare, offline_per_location) = match &offline {
        Offline::Exact(sol) => (OfflineKind::Exact, sol.welfare, sol.per_location_welfare(s)),
        Offline::Bound(ub) => (OfflineKind::UpperBound, ub.welfare, ub.per_location.clone()),
    };
    let mut report = base_report(&inputs, args.mode, args.policy, seed, &online);
    report.baseline = Some(RunSummary::from(&baseline));
    report.offline = Some(OfflineSummary {
        kind,
        welfare: offline_welfare,
        search_leaves: leaves,
    });
    report.empirical_ratio =
        (kind == OfflineKind::Exact).then(|| Ratio::of(offline_welfare, online.welfare));

    let kind_label = match kind {
        OfflineKind::Exact => "exact",
        OfflineKind::UpperBound => "upper_bound",
    };
    let rows: Vec<ComparisonRow> = s
        .locations
        .iter()
        .enumerate()
        .map(|(l, loc)| ComparisonRow {
            location: loc.id.clone(),
            online_welfare: online.locations[l].welfare,
            baseline_welfare: baseline.locations[l].welfare,
            offline_welfare: offline_per_location[l],
            offline_kind: kind_label.into(),
            online_served: online.locations[l].served,
            baseline_served: baseline.locations[l].served,
        })
        .collect();

    create_dir(&args.out)?;
    write_ledger(&args.out.join("ledger.csv"), s, &online.ledger)?;
    write_ledger(&args.out.join("baseline_ledger.csv"), s, &baseline.ledger)?;
    write_locations(&args.out.join("locations.csv"), &online.locations)?;
    write_rows(&args.out.join("comparison.csv"), &rows)?;
    write_json(&args.out.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaprVerdict {
    pub holds: bool,
    pub min_slack: f64,
    pub worst_curve: String,
    pub curves: usize,
    pub grid_points: usize,
}

impl std::fmt::Display for DaprVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let word = if self.holds { "holds" } else { "VIOLATED" };
        write!(
            f,
            "DAPR {word}: min slack {:e} on {} ({} curves, {} grid points)",
            self.min_slack, self.worst_curve, self.curves, self.grid_points
        )
    }
}

/// Checks every cable and energy curve with its own `2 ln(K U / L)` and
/// every active procurement curve with α₁ (exact) or α₂ (conservative),
/// each scaled by `alpha_factor`. Writes `dapr.csv`; a violation is an
/// error after the file is written.
pub fn cmd_validate_dapr(args: &DaprArgs) -> CliResult<DaprVerdict> {
    if args.grid_points < 2 {
        return Err(CliError::Usage("--grid-points must be at least 2".into()));
    }
    let (scenario, _) = load_base_scenario(&args.input)?;
    let bounds = match &args.bounds {
        Some(path) => {
            let text = std::fs::read(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_slice(&text).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?
        }
        None => scenario.bounds,
    };
    let violations = validate_bounds(&scenario, &bounds);
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    let scale = scenario.price_scale();
    let generation_alpha = match args.mode {
        PricingMode::Exact => alpha_1(&scenario, &bounds)?,
        PricingMode::Conservative => alpha_2(&scenario, &bounds)?,
    } * args.alpha_factor;

    let mut rows = Vec::new();
    let mut verdict = DaprVerdict {
        holds: true,
        min_slack: f64::INFINITY,
        worst_curve: String::new(),
        curves: 0,
        grid_points: args.grid_points,
    };
    let mut check = |name: String,
                     resource: &str,
                     location: Option<&str>,
                     pool: Option<&str>,
                     slot: Option<usize>,
                     curve: PriceCurve,
                     cost: &dyn evse_auction::pricing::ResourceCost,
                     alpha: f64| {
        if curve.capacity <= 0.0 {
            return;
        }
        let report = verify_dapr(&curve, cost, alpha, args.grid_points);
        verdict.curves += 1;
        verdict.holds &= report.holds;
        if report.min_slack < verdict.min_slack {
            verdict.min_slack = report.min_slack;
            verdict.worst_curve = name;
        }
        rows.extend(report.points.iter().map(|p| DaprRow {
            resource: resource.into(),
            location: location.map(String::from),
            pool: pool.map(String::from),
            slot,
            alpha,
            y: p.y,
            price: p.price,
            slack: p.slack,
        }));
    };
    for loc in &scenario.locations {
        let cable = PriceCurve::cable(&bounds, loc, scale);
        let cost = CapacityCost {
            capacity: cable.capacity,
        };
        let alpha = cable.competitive_alpha() * args.alpha_factor;
        check(
            format!("cable {}", loc.id),
            "cable",
            Some(&loc.id),
            None,
            None,
            cable,
            &cost,
            alpha,
        );
        let energy = PriceCurve::energy(&bounds, loc, scale);
        let cost = CapacityCost {
            capacity: energy.capacity,
        };
        let alpha = energy.competitive_alpha() * args.alpha_factor;
        check(
            format!("energy {}", loc.id),
            "energy",
            Some(&loc.id),
            None,
            None,
            energy,
            &cost,
            alpha,
        );
    }
    for p in scenario.active_pools() {
        let pool = &scenario.pools[p];
        for t in 0..scenario.slots() {
            let curve = PriceCurve::generation(pool, t, &bounds, scale, args.mode)?;
            let cost = GenerationCost::worst_case(pool, t, args.mode);
            check(
                format!("generation {} slot {}", pool.id, t + 1),
                "generation",
                None,
                Some(&pool.id),
                Some(t + 1),
                curve,
                &cost,
                generation_alpha,
            );
        }
    }
    create_dir(&args.out)?;
    write_rows(&args.out.join("dapr.csv"), &rows)?;
    if verdict.holds {
        Ok(verdict)
    } else {
        Err(CliError::DaprViolated {
            min_slack: verdict.min_slack,
            curve: verdict.worst_curve,
        })
    }
}

/// Writes `scenario.json` and `users.jsonl` for a preset into `args.out`.
pub fn cmd_gen_scenario(args: &GenArgs) -> CliResult<(PathBuf, PathBuf)> {
    let mut p = preset(&args.preset, args.seed)?;
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{kv}` is not KEY=VALUE")))?;
        apply_override(&mut p, key.trim(), value.trim())?;
    }
    let violations = validate_scenario(&p.scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    let users = p.users()?;
    create_dir(&args.out)?;
    let scenario_path = args.out.join("scenario.json");
    let users_path = args.out.join("users.jsonl");
    save_scenario(&scenario_path, &p.scenario)?;
    save_users(&users_path, &users)?;
    Ok((scenario_path, users_path))
}
