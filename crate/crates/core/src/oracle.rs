//! Offline references for the online mechanism: the exact welfare optimum
//! by exhaustive search, a capacity-relaxed upper bound, and the
//! first-come-first-served baseline with no prices.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::engine::{
    check_inputs, run_auction, submission_order, AllocationResult, Assignment, AuctionOutcome,
    Decision, PaymentBreakdown,
};
use crate::error::{Error, Result};
use crate::model::{ChargeOption, DemandState, Scenario, UserType, ValueBounds};
use crate::options::{generate_options, OptionPolicy, DEFAULT_MAX_OPTIONS};
use crate::pricing::{alpha_1, alpha_2, generation_cost, GenerationCost, PricingMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Largest search tree (in leaves) the exact solver will attempt.
    pub budget: f64,
    pub prune: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            budget: 1e7,
            prune: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OfflineChoice {
    pub option: usize,
    pub location: usize,
    pub evse: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    pub assignment: Vec<Option<OfflineChoice>>,
    pub welfare: f64,
    pub demand: DemandState,
}

impl OfflineSolution {
    /// Valuations minus attributed procurement cost, per location.
    pub fn per_location_welfare(&self, scenario: &Scenario) -> Vec<f64> {
        let mut out = crate::engine::attributed_costs(scenario, &self.demand)
            .into_iter()
            .map(|c| -c)
            .collect::<Vec<_>>();
        for choice in self.assignment.iter().flatten() {
            out[choice.location] += choice.value;
        }
        out
    }
}

/// One (option, EVSE) pair a user may be assigned to.
#[derive(Debug, Clone, Copy)]
struct Pair {
    option: usize,
    location: usize,
    evse: usize,
    value: f64,
}

fn pairs_for(scenario: &Scenario, user: &UserType, options: &[ChargeOption]) -> Vec<Pair> {
    let mut out = Vec::new();
    for (i, opt) in options.iter().enumerate() {
        let loc = &scenario.locations[opt.location];
        if let Some(value) = user.value_at(&loc.id) {
            for evse in 0..loc.evse_count {
                out.push(Pair {
                    option: i,
                    location: opt.location,
                    evse,
                    value,
                });
            }
        }
    }
    out
}

/// Leaves in the full search tree: `Π_n (pairs_n + 1)`.
pub fn search_leaves(
    scenario: &Scenario,
    users: &[UserType],
    options: &[Vec<ChargeOption>],
) -> f64 {
    users
        .iter()
        .zip(options)
        .map(|(u, o)| (pairs_for(scenario, u, o).len() + 1) as f64)
        .product()
}

struct Search<'a> {
    scenario: &'a Scenario,
    options: &'a [Vec<ChargeOption>],
    pairs: Vec<Vec<Pair>>,
    /// `remaining[n]` is the sum of the best valuations of users `n..`.
    remaining: Vec<f64>,
    pool_caps: Vec<Vec<f64>>,
    prune: bool,
    demand: DemandState,
    current: Vec<Option<OfflineChoice>>,
    best: Vec<Option<OfflineChoice>>,
    best_welfare: f64,
}

impl Search<'_> {
    fn slot_cost(&self, pool: usize, slot: usize, y: f64) -> f64 {
        generation_cost(y, &self.scenario.pools[pool], slot)
            .finite()
            .expect("capacity check keeps procurement finite")
    }

    fn visit(&mut self, n: usize, value: f64, cost: f64) {
        if n == self.pairs.len() {
            let welfare = value - cost;
            if welfare > self.best_welfare {
                self.best_welfare = welfare;
                self.best = self.current.clone();
            }
            return;
        }
        if self.prune && value + self.remaining[n] - cost <= self.best_welfare {
            return;
        }
        for k in 0..self.pairs[n].len() {
            let pair = self.pairs[n][k];
            let option = &self.options[n][pair.option];
            let loc = &self.scenario.locations[pair.location];
            let pool = self.demand.pool_of(pair.location);
            if !self.demand.fits(
                option,
                pair.evse,
                loc.cables_per_evse,
                loc.max_charge_rate,
                &self.pool_caps[pool],
            ) {
                continue;
            }
            let mut delta = 0.0;
            for (t, &e) in option.energy.iter().enumerate() {
                if e > 0 {
                    let y = self.demand.generation(pool, t);
                    delta += self.slot_cost(pool, t, y + f64::from(e)) - self.slot_cost(pool, t, y);
                }
            }
            self.demand.allocate(option, pair.evse);
            self.current[n] = Some(OfflineChoice {
                option: pair.option,
                location: pair.location,
                evse: pair.evse,
                value: pair.value,
            });
            self.visit(n + 1, value + pair.value, cost + delta);
            self.current[n] = None;
            self.demand.release(option, pair.evse);
        }
        self.visit(n + 1, value, cost);
    }
}

/// Welfare-optimal assignment by depth-first search over every user's
/// (option, EVSE) pairs, optionally pruning branches whose remaining best
/// valuations cannot beat the incumbent.
pub fn solve_offline_exact(
    scenario: &Scenario,
    users: &[UserType],
    options: &[Vec<ChargeOption>],
    config: OracleConfig,
) -> Result<OfflineSolution> {
    let leaves = search_leaves(scenario, users, options);
    if leaves > config.budget {
        return Err(Error::BudgetExceeded {
            leaves,
            budget: config.budget,
        });
    }
    let pairs: Vec<Vec<Pair>> = users
        .iter()
        .zip(options)
        .map(|(u, o)| pairs_for(scenario, u, o))
        .collect();
    let mut remaining = vec![0.0; pairs.len() + 1];
    for n in (0..pairs.len()).rev() {
        let top = pairs[n].iter().map(|p| p.value).fold(0.0, f64::max);
        remaining[n] = remaining[n + 1] + top;
    }
    let pool_caps = scenario
        .pools
        .iter()
        .map(|p| {
            (0..scenario.slots())
                .map(|t| p.solar[t] + p.grid_limit[t])
                .collect()
        })
        .collect();
    let mut search = Search {
        scenario,
        options,
        pairs,
        remaining,
        pool_caps,
        prune: config.prune,
        demand: DemandState::new(scenario),
        current: vec![None; users.len()],
        best: vec![None; users.len()],
        best_welfare: 0.0,
    };
    search.visit(0, 0.0, 0.0);

    let mut demand = DemandState::new(scenario);
    for (n, choice) in search.best.iter().enumerate() {
        if let Some(c) = choice {
            demand.allocate(&options[n][c.option], c.evse);
        }
    }
    Ok(OfflineSolution {
        welfare: search.best_welfare,
        assignment: search.best,
        demand,
    })
}

/// Reference solver with no shared state with [`solve_offline_exact`]:
/// walks every assignment as a mixed-radix counter, rebuilds the demand
/// sums from scratch, and scores feasible ones.
pub fn enumerate_offline(
    scenario: &Scenario,
    users: &[UserType],
    options: &[Vec<ChargeOption>],
    budget: f64,
) -> Result<f64> {
    let leaves = search_leaves(scenario, users, options);
    if leaves > budget {
        return Err(Error::BudgetExceeded { leaves, budget });
    }
    let pairs: Vec<Vec<Pair>> = users
        .iter()
        .zip(options)
        .map(|(u, o)| pairs_for(scenario, u, o))
        .collect();
    let slots = scenario.slots();
    let pools = scenario.location_pools();
    let mut digits = vec![0usize; pairs.len()];
    let mut best: f64 = 0.0;
    loop {
        let zeroed = || -> Vec<Vec<Vec<u32>>> {
            scenario
                .locations
                .iter()
                .map(|loc| vec![vec![0; slots]; loc.evse_count])
                .collect()
        };
        let (mut cables, mut energy) = (zeroed(), zeroed());
        let mut generation = vec![vec![0u32; slots]; scenario.pools.len()];
        let mut value = 0.0;
        for (n, &d) in digits.iter().enumerate() {
            if d == 0 {
                continue;
            }
            let pair = pairs[n][d - 1];
            let opt = &options[n][pair.option];
            value += pair.value;
            for t in 0..slots {
                cables[pair.location][pair.evse][t] += u32::from(opt.cable[t]);
                energy[pair.location][pair.evse][t] += opt.energy[t];
                generation[pools[pair.location]][t] += opt.energy[t];
            }
        }
        let within_evse = scenario.locations.iter().enumerate().all(|(l, loc)| {
            (0..loc.evse_count).all(|m| {
                (0..slots).all(|t| {
                    cables[l][m][t] <= loc.cables_per_evse
                        && f64::from(energy[l][m][t]) <= loc.max_charge_rate
                })
            })
        });
        if within_evse {
            let mut cost = Some(0.0);
            for (p, pool) in scenario.pools.iter().enumerate() {
                for t in 0..slots {
                    cost = match (
                        cost,
                        generation_cost(f64::from(generation[p][t]), pool, t).finite(),
                    ) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
            }
            if let Some(c) = cost {
                best = best.max(value - c);
            }
        }

        let mut n = 0;
        while n < digits.len() {
            digits[n] += 1;
            if digits[n] <= pairs[n].len() {
                break;
            }
            digits[n] = 0;
            n += 1;
        }
        if n == digits.len() {
            return Ok(best);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperBound {
    pub welfare: f64,
    pub served: usize,
    pub per_location: Vec<f64>,
}

/// Welfare with EVSE capacities and transformer limits lifted: every user
/// independently takes the schedule and location with the largest
/// valuation minus grid cost beyond solar (as if alone), if positive.
pub fn offline_upper_bound(
    scenario: &Scenario,
    users: &[UserType],
    options: &[Vec<ChargeOption>],
) -> UpperBound {
    let pools = scenario.location_pools();
    let mut per_location = vec![0.0; scenario.locations.len()];
    let mut served = 0;
    for (user, opts) in users.iter().zip(options) {
        let mut best: Option<(f64, usize)> = None;
        for opt in opts {
            let Some(value) = user.value_at(&scenario.locations[opt.location].id) else {
                continue;
            };
            let pool = &scenario.pools[pools[opt.location]];
            let cost: f64 = opt
                .energy
                .iter()
                .enumerate()
                .map(|(t, &e)| {
                    let c = GenerationCost::actual(pool, t);
                    c.grid_price * (f64::from(e) - c.solar).max(0.0)
                })
                .sum();
            let surplus = value - cost;
            if best.is_none_or(|(s, _)| surplus > s) {
                best = Some((surplus, opt.location));
            }
        }
        if let Some((surplus, l)) = best.filter(|&(s, _)| s > 0.0) {
            per_location[l] += surplus;
            served += 1;
        }
    }
    UpperBound {
        welfare: per_location.iter().sum(),
        served,
        per_location,
    }
}

/// Users arrive in submission order, see no prices, and take the feasible
/// option at their most valued location, filling earliest first on the
/// lowest-index EVSE with room. The operator absorbs procurement cost.
pub fn no_mechanism_baseline(
    scenario: &Scenario,
    users: &[UserType],
    policy: OptionPolicy,
    seed: u64,
) -> Result<AuctionOutcome> {
    check_inputs(scenario, users, None)?;
    let mut demand = DemandState::new(scenario);
    let pool_caps: Vec<Vec<f64>> = scenario
        .pools
        .iter()
        .map(|p| {
            (0..scenario.slots())
                .map(|t| p.solar[t] + p.grid_limit[t])
                .collect()
        })
        .collect();
    let mut ledger = Vec::with_capacity(users.len());
    for user in submission_order(users) {
        let mut options = generate_options(user, scenario, policy, DEFAULT_MAX_OPTIONS, None, seed);
        // most valued location first, then earliest fill
        options.sort_by(|a, b| {
            let va = user
                .value_at(&scenario.locations[a.location].id)
                .unwrap_or(0.0);
            let vb = user
                .value_at(&scenario.locations[b.location].id)
                .unwrap_or(0.0);
            vb.total_cmp(&va)
                .then(a.location.cmp(&b.location))
                .then(b.energy.cmp(&a.energy))
        });
        let mut result = AllocationResult::rejected(user);
        'search: for opt in options {
            let loc = &scenario.locations[opt.location];
            let value = user.value_at(&loc.id).unwrap_or(0.0);
            if value <= 0.0 {
                continue;
            }
            let pool = demand.pool_of(opt.location);
            for evse in 0..loc.evse_count {
                if demand.fits(
                    &opt,
                    evse,
                    loc.cables_per_evse,
                    loc.max_charge_rate,
                    &pool_caps[pool],
                ) {
                    demand.allocate(&opt, evse);
                    result = AllocationResult {
                        user_id: user.id,
                        submitted: user.submitted,
                        decision: Decision::Accepted,
                        valuation: value,
                        utility: value,
                        payment: PaymentBreakdown::default(),
                        assignment: Some(Assignment {
                            location: opt.location,
                            evse,
                            option: opt,
                        }),
                    };
                    break 'search;
                }
            }
        }
        ledger.push(result);
    }
    let peaks = vec![(0.0, 0.0); scenario.locations.len()];
    Ok(AuctionOutcome::assemble(scenario, ledger, demand, &peaks))
}

/// Offline-to-online welfare ratio; `Infinite` when only the online side
/// is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    Infinite,
}

impl Ratio {
    pub fn of(offline: f64, online: f64) -> Self {
        const EPS: f64 = 1e-12;
        if offline.abs() <= EPS {
            Ratio::Finite(1.0)
        } else if online <= EPS {
            Ratio::Infinite
        } else {
            Ratio::Finite(offline / online)
        }
    }

    pub fn at_most(self, bound: f64) -> bool {
        match self {
            Ratio::Finite(r) => r <= bound,
            Ratio::Infinite => false,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(r) => write!(f, "{r}"),
            Ratio::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(r) => s.serialize_f64(*r),
            Ratio::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    /// Worst ratio over the trials.
    pub ratio: Ratio,
    pub offline_welfare: f64,
    /// Online welfare of the worst trial.
    pub online_welfare: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
}

/// Compares the exact offline optimum (exhaustive options) with the online
/// mechanism in exact mode. Each of `trials` online runs uses seed
/// `seed + i`, which only matters for heuristic option policies.
pub fn empirical_ratio(
    scenario: &Scenario,
    users: &[UserType],
    bounds: &ValueBounds,
    policy: OptionPolicy,
    trials: usize,
    seed: u64,
    config: OracleConfig,
) -> Result<RatioReport> {
    check_inputs(scenario, users, Some(bounds))?;
    let options: Vec<Vec<ChargeOption>> = users
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
        .collect();
    let offline = solve_offline_exact(scenario, users, &options, config)?;
    let mut worst: Option<(Ratio, f64)> = None;
    for i in 0..trials.max(1) {
        let online = run_auction(
            scenario,
            users,
            bounds,
            PricingMode::Exact,
            policy,
            seed.wrapping_add(i as u64),
        )?;
        let r = Ratio::of(offline.welfare, online.welfare);
        let worse = match (worst, r) {
            (None, _) => true,
            (Some((Ratio::Infinite, _)), _) => false,
            (Some(_), Ratio::Infinite) => true,
            (Some((Ratio::Finite(a), _)), Ratio::Finite(b)) => b > a,
        };
        if worse {
            worst = Some((r, online.welfare));
        }
    }
    let (ratio, online_welfare) = worst.unwrap();
    Ok(RatioReport {
        ratio,
        offline_welfare: offline.welfare,
        online_welfare,
        alpha_1: alpha_1(scenario, bounds)?,
        alpha_2: alpha_2(scenario, bounds)?,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::fixtures::{s1, user};

    fn exhaustive(s: &Scenario, users: &[UserType]) -> Vec<Vec<ChargeOption>> {
        users
            .iter()
            .map(|u| generate_options(u, s, OptionPolicy::Exhaustive, 1000, None, 0))
            .collect()
    }

    #[test]
    fn singleton_within_solar() {
        let s = s1();
        let users = [user(1, 1, 2, 2, 2.0)];
        let opts = exhaustive(&s, &users);
        let sol = solve_offline_exact(&s, &users, &opts, OracleConfig::default()).unwrap();
        assert_eq!(sol.welfare, 2.0);
        assert!(sol.assignment[0].is_some());
    }

    #[test]
    fn single_cable_prefers_high_value() {
        let mut s = s1();
        s.locations[0].cables_per_evse = 1;
        let users = [user(1, 1, 4, 2, 1.0), user(2, 1, 4, 2, 2.0)];
        let opts = exhaustive(&s, &users);
        let sol = solve_offline_exact(&s, &users, &opts, OracleConfig::default()).unwrap();
        assert_eq!(sol.welfare, 2.0);
        assert!(sol.assignment[0].is_none());
        assert!(sol.assignment[1].is_some());
        assert_eq!(enumerate_offline(&s, &users, &opts, 1e6).unwrap(), 2.0);
    }

    #[test]
    fn infinite_cost_option_left_unassigned() {
        let mut s = s1();
        s.pools[0].solar = vec![0.0; 4];
        s.pools[0].solar_lower = vec![0.0; 4];
        s.pools[0].grid_limit = vec![0.0; 4];
        let users = [user(1, 1, 2, 1, 5.0)];
        let opts = exhaustive(&s, &users);
        let sol = solve_offline_exact(&s, &users, &opts, OracleConfig::default()).unwrap();
        assert!(sol.assignment[0].is_none());
        assert_eq!(sol.welfare, 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let s = s1();
        let users: Vec<_> = (0..8).map(|i| user(i, 1, 4, 2, 1.0)).collect();
        let opts = exhaustive(&s, &users);
        let config = OracleConfig {
            budget: 1000.0,
            prune: true,
        };
        assert!(matches!(
            solve_offline_exact(&s, &users, &opts, config),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn upper_bound_examples() {
        let s = s1();
        let users = [user(1, 1, 2, 1, 2.0)];
        let ub = offline_upper_bound(&s, &users, &exhaustive(&s, &users));
        assert_eq!(ub.welfare, 2.0);

        let mut dark = s1();
        dark.pools[0].solar = vec![0.0; 4];
        dark.pools[0].solar_lower = vec![0.0; 4];
        let ub = offline_upper_bound(&dark, &users, &exhaustive(&dark, &users));
        assert_relative_eq!(ub.welfare, 1.8, epsilon = 1e-12);

        let cheap = [user(1, 1, 2, 1, 0.1)];
        assert_eq!(
            offline_upper_bound(&dark, &cheap, &exhaustive(&dark, &cheap)).welfare,
            0.0
        );
    }

    #[test]
    fn baseline_first_come_first_served() {
        let mut s = s1();
        s.locations[0].cables_per_evse = 1;
        let users = [user(1, 1, 4, 2, 0.5), user(2, 2, 4, 2, 5.0)];
        let base = no_mechanism_baseline(&s, &users, OptionPolicy::Exhaustive, 0).unwrap();
        assert!(base.ledger[0].is_accepted());
        assert!(!base.ledger[1].is_accepted());
        assert_eq!(base.revenue, 0.0);
        // earliest fill
        assert_eq!(
            base.ledger[0].assignment.as_ref().unwrap().option.energy,
            vec![1, 1, 0, 0]
        );
        assert_eq!(
            no_mechanism_baseline(&s, &[], OptionPolicy::Exhaustive, 0)
                .unwrap()
                .welfare,
            0.0
        );
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(Ratio::of(0.0, 0.0), Ratio::Finite(1.0));
        assert_eq!(Ratio::of(2.0, 0.0), Ratio::Infinite);
        assert_eq!(Ratio::of(3.0, 2.0), Ratio::Finite(1.5));
        assert!(!Ratio::Infinite.at_most(1e9));
    }

    #[test]
    fn ratio_single_user_is_one() {
        let s = s1();
        let users = [user(1, 1, 2, 1, 2.0)];
        let r = empirical_ratio(
            &s,
            &users,
            &s.bounds,
            OptionPolicy::Exhaustive,
            1,
            0,
            OracleConfig::default(),
        )
        .unwrap();
        assert_eq!(r.ratio, Ratio::Finite(1.0));
        assert_relative_eq!(r.alpha_1, 2.0 * 56f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn per_location_welfare_sums_to_total() {
        let mut s = s1();
        s.pools[0].solar = vec![0.0, 1.0, 0.0, 0.0];
        s.pools[0].solar_lower = vec![0.0, 0.5, 0.0, 0.0];
        let users = [user(1, 1, 3, 2, 2.0), user(2, 1, 4, 3, 3.0)];
        let opts = exhaustive(&s, &users);
        let sol = solve_offline_exact(&s, &users, &opts, OracleConfig::default()).unwrap();
        let sum: f64 = sol.per_location_welfare(&s).iter().sum();
        assert_relative_eq!(sum, sol.welfare, epsilon = 1e-12);
        assert_relative_eq!(
            enumerate_offline(&s, &users, &opts, 1e7).unwrap(),
            sol.welfare,
            epsilon = 1e-12
        );
    }
}
