//! Builds the option set of a request: every way (or a bounded sample of
//! ways) to deliver the user's demand inside the visit window at each
//! preferred location.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ChargeOption, Scenario, UserType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionPolicy {
    /// Every schedule over the configured energy levels.
    Exhaustive,
    /// At most `k` schedules per location: earliest fill, latest fill,
    /// cheapest at current prices, then seeded random fills.
    Heuristic(usize),
}

impl fmt::Display for OptionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptionPolicy::Exhaustive => f.write_str("exhaustive"),
            OptionPolicy::Heuristic(k) => write!(f, "heuristic-{k}"),
        }
    }
}

impl FromStr for OptionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "exhaustive" {
            return Ok(OptionPolicy::Exhaustive);
        }
        s.strip_prefix("heuristic-")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(OptionPolicy::Heuristic)
            .ok_or_else(|| format!("unknown policy `{s}`, expected exhaustive|heuristic-K"))
    }
}

/// Per-location, per-slot marginal cost of one kWh (energy plus
/// procurement), used by the cheapest-fill heuristic.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSnapshot {
    pub per_location: Vec<Vec<f64>>,
}

/// Default bound on options emitted per location.
pub const DEFAULT_MAX_OPTIONS: usize = 10_000;

/// Generates the user's options, sorted by location index then energy
/// schedule. An empty result means the demand cannot be met anywhere.
///
/// Explicit schedules on the user record take precedence over `policy`.
/// Exhaustive enumeration stops after `max_per_location` schedules.
pub fn generate_options(
    user: &UserType,
    scenario: &Scenario,
    policy: OptionPolicy,
    max_per_location: usize,
    prices: Option<&PriceSnapshot>,
    seed: u64,
) -> Vec<ChargeOption> {
    let mut locations: Vec<usize> = user
        .preferences
        .iter()
        .filter_map(|p| scenario.location_index(&p.location))
        .collect();
    locations.sort_unstable();
    locations.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user.id);

    let window = user.window();
    let width = user.window_len();
    let mut out = Vec::new();
    for l in locations {
        let loc = &scenario.locations[l];
        let mut levels: Vec<u32> = scenario
            .energy_levels
            .iter()
            .copied()
            .filter(|&v| f64::from(v) <= loc.max_charge_rate)
            .chain(std::iter::once(0))
            .collect();
        levels.sort_unstable();
        levels.dedup();
        let top = *levels.last().unwrap();
        if u64::from(user.demand) > u64::from(top) * width as u64 {
            continue;
        }

        let schedules: Vec<Vec<u32>> = if let Some(explicit) = &user.schedules {
            let set: BTreeSet<Vec<u32>> = explicit
                .iter()
                .filter(|s| {
                    s.len() == width
                        && s.iter().sum::<u32>() == user.demand
                        && s.iter().all(|&e| f64::from(e) <= loc.max_charge_rate)
                })
                .cloned()
                .collect();
            set.into_iter().take(max_per_location).collect()
        } else {
            match policy {
                OptionPolicy::Exhaustive => {
                    enumerate(width, user.demand, &levels, max_per_location)
                }
                OptionPolicy::Heuristic(k) => {
                    let costs = prices.map(|p| &p.per_location[l][window.clone()]);
                    heuristic(
                        width,
                        user.demand,
                        &levels,
                        k.min(max_per_location),
                        costs,
                        &mut rng,
                    )
                }
            }
        };

        let slots = scenario.slots();
        for sched in schedules {
            let mut cable = vec![0u8; slots];
            let mut energy = vec![0u32; slots];
            cable[window.clone()].fill(1);
            energy[window.clone()].copy_from_slice(&sched);
            out.push(ChargeOption {
                location: l,
                cable,
                energy,
            });
        }
    }
    out
}

/// All sequences of `width` values from `levels` summing to `demand`, in
/// lexicographic order, stopping after `limit`.
fn enumerate(width: usize, demand: u32, levels: &[u32], limit: usize) -> Vec<Vec<u32>> {
    fn recurse(
        slot: usize,
        remaining: u32,
        current: &mut Vec<u32>,
        levels: &[u32],
        top: u32,
        limit: usize,
        out: &mut Vec<Vec<u32>>,
    ) {
        if out.len() >= limit {
            return;
        }
        let width = current.len();
        if slot == width {
            if remaining == 0 {
                out.push(current.clone());
            }
            return;
        }
        let left_after = (width - slot - 1) as u64;
        for &lvl in levels {
            if lvl > remaining {
                break;
            }
            if u64::from(remaining - lvl) > left_after * u64::from(top) {
                continue;
            }
            current[slot] = lvl;
            recurse(slot + 1, remaining - lvl, current, levels, top, limit, out);
        }
        current[slot] = 0;
    }

    let mut out = Vec::new();
    let top = levels.last().copied().unwrap_or(0);
    let mut current = vec![0; width];
    recurse(0, demand, &mut current, levels, top, limit, &mut out);
    out
}

/// Fills slots in `order`, each with the largest level not exceeding what
/// is still owed.
fn greedy_fill(width: usize, demand: u32, levels: &[u32], order: &[usize]) -> Option<Vec<u32>> {
    let mut sched = vec![0; width];
    let mut remaining = demand;
    for &t in order {
        if remaining == 0 {
            break;
        }
        let lvl = levels
            .iter()
            .rev()
            .copied()
            .find(|&l| l <= remaining)
            .unwrap_or(0);
        sched[t] = lvl;
        remaining -= lvl;
    }
    (remaining == 0).then_some(sched)
}

fn heuristic(
    width: usize,
    demand: u32,
    levels: &[u32],
    k: usize,
    costs: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<u32>> {
    let mut found = BTreeSet::new();
    let forward: Vec<usize> = (0..width).collect();
    let backward: Vec<usize> = (0..width).rev().collect();
    let mut orders = vec![forward.clone(), backward];
    if let Some(costs) = costs {
        let mut cheapest = forward.clone();
        cheapest.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        orders.push(cheapest);
    }
    for order in &orders {
        if found.len() >= k {
            break;
        }
        if let Some(s) = greedy_fill(width, demand, levels, order) {
            found.insert(s);
        }
    }
    let mut order = forward;
    let mut attempts = 4 * k;
    while found.len() < k && attempts > 0 {
        attempts -= 1;
        order.shuffle(rng);
        if let Some(s) = greedy_fill(width, demand, levels, &order) {
            found.insert(s);
        }
    }
    found.into_iter().collect()
}
