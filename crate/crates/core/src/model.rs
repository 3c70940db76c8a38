//! Domain types shared by every module: the scenario (time grid, generation
//! pools, locations, value bounds), user types, charge options, and the
//! running demand tallies the pricing curves read from.
//!
//! Slot indices are 1-based in every file format and on [`UserType`]; all
//! per-slot arrays are stored 0-based, so slot `t` lives at index `t - 1`.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slot_count: usize,
    /// Metadata only; nothing in the mechanism depends on it.
    pub slot_duration_minutes: u32,
}

/// Behind-the-meter solar plus a grid connection, possibly shared by several
/// locations. All series are per slot, in kWh (energy) or $/kWh (price).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPool {
    pub id: String,
    pub solar: Vec<f64>,
    pub solar_lower: Vec<f64>,
    pub solar_upper: Vec<f64>,
    pub grid_limit: Vec<f64>,
    pub grid_price: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub evse_count: usize,
    pub cables_per_evse: u32,
    /// kWh per slot deliverable by one EVSE.
    pub max_charge_rate: f64,
    pub pool: String,
}

impl Location {
    /// Largest configured energy level this location can deliver in one slot.
    pub fn max_level(&self, levels: &[u32]) -> u32 {
        levels
            .iter()
            .copied()
            .filter(|&lvl| f64::from(lvl) <= self.max_charge_rate)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

/// Per-resource bounds on users' value per unit of resource per slot.
///
/// Procurement uses the energy bounds: there is no separate field, so the
/// two can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub cable: Bound,
    pub energy: Bound,
}

impl ValueBounds {
    pub fn generation(&self) -> Bound {
        self.energy
    }
}

fn default_energy_levels() -> Vec<u32> {
    vec![0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time_grid: TimeGrid,
    /// Allowed per-slot charge amounts (kWh) for generated schedules.
    #[serde(default = "default_energy_levels")]
    pub energy_levels: Vec<u32>,
    pub pools: Vec<GenerationPool>,
    pub locations: Vec<Location>,
    pub bounds: ValueBounds,
}

impl Scenario {
    pub fn slots(&self) -> usize {
        self.time_grid.slot_count
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.id == id)
    }

    pub fn pool_index(&self, id: &str) -> Option<usize> {
        self.pools.iter().position(|p| p.id == id)
    }

    /// Pool index serving each location, in location order.
    ///
    /// Panics if a location names an unknown pool; validate first.
    pub fn location_pools(&self) -> Vec<usize> {
        self.locations
            .iter()
            .map(|l| {
                self.pool_index(&l.pool)
                    .unwrap_or_else(|| panic!("location `{}` references unknown pool", l.id))
            })
            .collect()
    }

    /// The constant `4 * sum_l (M_l + 1/2)` that scales every pricing curve.
    pub fn price_scale(&self) -> f64 {
        4.0 * self
            .locations
            .iter()
            .map(|l| l.evse_count as f64 + 0.5)
            .sum::<f64>()
    }

    /// Pools referenced by at least one location.
    pub fn active_pools(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .locations
            .iter()
            .filter_map(|l| self.pool_index(&l.pool))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub location: String,
    pub value: f64,
}

/// One reservation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserType {
    pub id: u64,
    /// Slot at which the request is submitted.
    pub submitted: usize,
    /// First slot parked (inclusive).
    pub arrival: usize,
    /// Last slot parked (inclusive).
    pub departure: usize,
    /// Total energy requested, kWh.
    pub demand: u32,
    /// Preferred locations in the user's order, each with its valuation.
    pub preferences: Vec<Preference>,
    /// Explicit energy schedules over the visit window, replacing generated
    /// options when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedules: Option<Vec<Vec<u32>>>,
}

impl UserType {
    /// Number of slots in `[arrival, departure]`.
    pub fn window_len(&self) -> usize {
        self.departure + 1 - self.arrival
    }

    /// 0-based slot range of the visit.
    pub fn window(&self) -> Range<usize> {
        self.arrival - 1..self.departure
    }

    pub fn value_at(&self, location_id: &str) -> Option<f64> {
        self.preferences
            .iter()
            .find(|p| p.location == location_id)
            .map(|p| p.value)
    }
}

/// One feasible way to serve a user at a location. Both profiles span the
/// whole time grid; the option applies to any EVSE at the location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChargeOption {
    pub location: usize,
    pub cable: Vec<u8>,
    pub energy: Vec<u32>,
}

impl ChargeOption {
    pub fn total_energy(&self) -> u32 {
        self.energy.iter().sum()
    }

    pub fn cable_slots(&self) -> u32 {
        self.cable.iter().map(|&c| u32::from(c)).sum()
    }

    /// Energy schedule restricted to `window` (0-based).
    pub fn schedule_in(&self, window: Range<usize>) -> &[u32] {
        &self.energy[window]
    }
}

/// Allocated quantities per EVSE and per pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandState {
    /// `[location][evse][slot]`
    cables: Vec<Vec<Vec<u32>>>,
    /// `[location][evse][slot]`, kWh
    energy: Vec<Vec<Vec<f64>>>,
    /// `[pool][slot]`, kWh
    generation: Vec<Vec<f64>>,
    location_pool: Vec<usize>,
}

impl DemandState {
    pub fn new(scenario: &Scenario) -> Self {
        let slots = scenario.slots();
        let cables = scenario
            .locations
            .iter()
            .map(|l| vec![vec![0; slots]; l.evse_count])
            .collect();
        let energy = scenario
            .locations
            .iter()
            .map(|l| vec![vec![0.0; slots]; l.evse_count])
            .collect();
        DemandState {
            cables,
            energy,
            generation: vec![vec![0.0; slots]; scenario.pools.len()],
            location_pool: scenario.location_pools(),
        }
    }

    pub fn cables(&self, location: usize, evse: usize, slot: usize) -> u32 {
        self.cables[location][evse][slot]
    }

    pub fn energy(&self, location: usize, evse: usize, slot: usize) -> f64 {
        self.energy[location][evse][slot]
    }

    pub fn generation(&self, pool: usize, slot: usize) -> f64 {
        self.generation[pool][slot]
    }

    pub fn pool_of(&self, location: usize) -> usize {
        self.location_pool[location]
    }

    /// Energy drawn by all EVSEs of `location` in `slot`.
    pub fn location_energy(&self, location: usize, slot: usize) -> f64 {
        self.energy[location].iter().map(|e| e[slot]).sum()
    }

    pub fn evse_count(&self, location: usize) -> usize {
        self.cables[location].len()
    }

    pub fn slot_count(&self) -> usize {
        self.generation.first().map_or(0, Vec::len)
    }

    /// Whether adding `option` at `evse` keeps every tally within
    /// `cable_cap`, `energy_cap` and the per-slot pool capacity.
    pub fn fits(
        &self,
        option: &ChargeOption,
        evse: usize,
        cable_cap: u32,
        energy_cap: f64,
        pool_cap: &[f64],
    ) -> bool {
        let loc = option.location;
        let pool = self.location_pool[loc];
        let cables = &self.cables[loc][evse];
        let energy = &self.energy[loc][evse];
        let generation = &self.generation[pool];
        for t in 0..option.cable.len() {
            let c = option.cable[t];
            if c != 0 && cables[t] + u32::from(c) > cable_cap {
                return false;
            }
            let e = f64::from(option.energy[t]);
            if e > 0.0 && (energy[t] + e > energy_cap || generation[t] + e > pool_cap[t]) {
                return false;
            }
        }
        true
    }

    /// Adds `option` at `evse`, updating the EVSE and pool tallies together.
    pub fn allocate(&mut self, option: &ChargeOption, evse: usize) {
        let loc = option.location;
        let pool = self.location_pool[loc];
        for t in 0..option.cable.len() {
            self.cables[loc][evse][t] += u32::from(option.cable[t]);
            let e = f64::from(option.energy[t]);
            self.energy[loc][evse][t] += e;
            self.generation[pool][t] += e;
        }
    }

    /// Reverses a prior [`allocate`](Self::allocate) of the same option.
    pub fn release(&mut self, option: &ChargeOption, evse: usize) {
        let loc = option.location;
        let pool = self.location_pool[loc];
        for t in 0..option.cable.len() {
            self.cables[loc][evse][t] -= u32::from(option.cable[t]);
            let e = f64::from(option.energy[t]);
            self.energy[loc][evse][t] -= e;
            self.generation[pool][t] -= e;
        }
    }

    /// Recomputes pool demand from per-EVSE energy.
    pub fn recomputed_generation(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.slot_count()]; self.generation.len()];
        for (loc, evses) in self.energy.iter().enumerate() {
            let pool = self.location_pool[loc];
            for evse in evses {
                for (t, e) in evse.iter().enumerate() {
                    out[pool][t] += e;
                }
            }
        }
        out
    }

    pub fn generation_profile(&self, pool: usize) -> &[f64] {
        &self.generation[pool]
    }
}

/// A violated invariant: where, and what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub fn validate_scenario(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let slots = scenario.slots();
    if slots == 0 {
        out.push(Violation::new(
            "time_grid.slot_count",
            "slot_count must be ≥ 1",
        ));
    }
    if scenario.time_grid.slot_duration_minutes == 0 {
        out.push(Violation::new(
            "time_grid.slot_duration_minutes",
            "slot_duration_minutes must be ≥ 1",
        ));
    }

    if !scenario.energy_levels.iter().any(|&l| l > 0) {
        out.push(Violation::new(
            "energy_levels",
            "at least one positive level required",
        ));
    }

    let mut pool_ids = HashSet::new();
    for (i, pool) in scenario.pools.iter().enumerate() {
        let at = |field: &str| format!("pools[{i}].{field}");
        if !pool_ids.insert(pool.id.as_str()) {
            out.push(Violation::new(
                at("id"),
                format!("duplicate pool id `{}`", pool.id),
            ));
        }
        let series = [
            ("solar", &pool.solar),
            ("solar_lower", &pool.solar_lower),
            ("solar_upper", &pool.solar_upper),
            ("grid_limit", &pool.grid_limit),
            ("grid_price", &pool.grid_price),
        ];
        let mut lengths_ok = true;
        for (name, values) in series {
            if values.len() != slots {
                lengths_ok = false;
                out.push(Violation::new(
                    at(name),
                    format!("length {} differs from slot_count {slots}", values.len()),
                ));
            }
            if let Some(t) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
                out.push(Violation::new(
                    format!("{}[{}]", at(name), t + 1),
                    "must be finite and ≥ 0",
                ));
            }
        }
        if lengths_ok {
            for t in 0..slots {
                if !(pool.solar_lower[t] <= pool.solar[t] && pool.solar[t] <= pool.solar_upper[t]) {
                    out.push(Violation::new(
                        format!("{}[{}]", at("solar"), t + 1),
                        "forecast band must satisfy solar_lower ≤ solar ≤ solar_upper",
                    ));
                }
            }
        }
    }

    if scenario.locations.is_empty() {
        out.push(Violation::new(
            "locations",
            "at least one location required",
        ));
    }
    let mut location_ids = HashSet::new();
    for (i, loc) in scenario.locations.iter().enumerate() {
        let at = |field: &str| format!("locations[{i}].{field}");
        if !location_ids.insert(loc.id.as_str()) {
            out.push(Violation::new(
                at("id"),
                format!("duplicate location id `{}`", loc.id),
            ));
        }
        if loc.evse_count < 1 {
            out.push(Violation::new(at("evse_count"), "evse_count must be ≥ 1"));
        }
        if loc.cables_per_evse < 1 {
            out.push(Violation::new(
                at("cables_per_evse"),
                "cables_per_evse must be ≥ 1",
            ));
        }
        if !(loc.max_charge_rate > 0.0 && loc.max_charge_rate.is_finite()) {
            out.push(Violation::new(
                at("max_charge_rate"),
                "max_charge_rate must be > 0",
            ));
        }
        if scenario.pool_index(&loc.pool).is_none() {
            out.push(Violation::new(
                at("pool"),
                format!("unknown pool `{}`", loc.pool),
            ));
        }
    }

    out.extend(validate_bounds(scenario, &scenario.bounds));
    out
}

/// Checks `bounds` on their own and against the grid prices of `scenario`.
pub fn validate_bounds(scenario: &Scenario, b: &ValueBounds) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, bound) in [("cable", b.cable), ("energy", b.energy)] {
        if !(bound.lower > 0.0 && bound.lower < bound.upper && bound.upper.is_finite()) {
            out.push(Violation::new(
                format!("bounds.{name}"),
                format!(
                    "need 0 < lower < upper, got lower={} upper={}",
                    bound.lower, bound.upper
                ),
            ));
        }
    }
    let lower_g = b.generation().lower;
    for p in scenario.active_pools() {
        let pool = &scenario.pools[p];
        if let Some((t, &pi)) = pool
            .grid_price
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            if lower_g <= pi {
                out.push(Violation::new(
                    format!("pools[{p}].grid_price[{}]", t + 1),
                    format!("energy lower bound {lower_g} must exceed grid price {pi}"),
                ));
            }
        }
    }
    out
}

pub fn validate_users(scenario: &Scenario, users: &[UserType]) -> Vec<Violation> {
    let mut out = Vec::new();
    let slots = scenario.slots();
    let mut ids = HashSet::new();
    for (i, u) in users.iter().enumerate() {
        let at = |field: &str| format!("users[{i}].{field}");
        if !ids.insert(u.id) {
            out.push(Violation::new(
                at("id"),
                format!("duplicate user id {}", u.id),
            ));
        }
        if u.submitted < 1 {
            out.push(Violation::new(at("submitted"), "slots are 1-based"));
        }
        if u.submitted > u.arrival {
            out.push(Violation::new(
                at("submitted"),
                "submission must not follow arrival",
            ));
        }
        if u.arrival >= u.departure {
            out.push(Violation::new(
                at("arrival"),
                "arrival must precede departure",
            ));
            continue;
        }
        if u.departure > slots {
            out.push(Violation::new(
                at("departure"),
                format!("departure beyond slot {slots}"),
            ));
            continue;
        }
        if u.arrival < 1 {
            out.push(Violation::new(at("arrival"), "slots are 1-based"));
            continue;
        }
        if u.demand == 0 {
            out.push(Violation::new(at("demand"), "demand must be positive"));
        }
        if u.preferences.is_empty() {
            out.push(Violation::new(
                at("preferences"),
                "at least one preferred location",
            ));
        }
        let mut seen = HashSet::new();
        let mut any_fits = false;
        for (j, pref) in u.preferences.iter().enumerate() {
            let path = format!("users[{i}].preferences[{j}]");
            if !seen.insert(pref.location.as_str()) {
                out.push(Violation::new(&path, "duplicate preferred location"));
            }
            if !(pref.value >= 0.0 && pref.value.is_finite()) {
                out.push(Violation::new(&path, "valuation must be finite and ≥ 0"));
            }
            match scenario.location_index(&pref.location) {
                None => out.push(Violation::new(
                    &path,
                    format!("unknown location `{}`", pref.location),
                )),
                Some(l) => {
                    let per_slot = scenario.locations[l].max_level(&scenario.energy_levels);
                    if u64::from(u.demand) <= u64::from(per_slot) * u.window_len() as u64 {
                        any_fits = true;
                    }
                }
            }
        }
        if !u.preferences.is_empty() && !any_fits {
            out.push(Violation::new(
                at("demand"),
                "demand exceeds charge capacity of the window at every preferred location",
            ));
        }
        if let Some(schedules) = &u.schedules {
            for (k, s) in schedules.iter().enumerate() {
                if s.len() != u.window_len() || s.iter().sum::<u32>() != u.demand {
                    out.push(Violation::new(
                        format!("users[{i}].schedules[{k}]"),
                        "schedule must span the window and sum to demand",
                    ));
                }
            }
        }
    }
    out
}

/// Checks an option against the user's window and demand.
pub fn option_is_feasible(
    option: &ChargeOption,
    user: &UserType,
    scenario: &Scenario,
) -> Result<bool> {
    let loc = scenario
        .locations
        .get(option.location)
        .ok_or(Error::UnknownLocation(option.location))?;
    let slots = scenario.slots();
    if option.cable.len() != slots || option.energy.len() != slots {
        return Ok(false);
    }
    if user.arrival < 1 || user.arrival > user.departure || user.departure > slots {
        return Ok(false);
    }
    let window = user.window();
    for t in 0..slots {
        let c = option.cable[t];
        let e = option.energy[t];
        if c > 1 {
            return Ok(false);
        }
        if !window.contains(&t) && (c != 0 || e != 0) {
            return Ok(false);
        }
        if e > 0 && c != 1 {
            return Ok(false);
        }
        if f64::from(e) > loc.max_charge_rate {
            return Ok(false);
        }
    }
    Ok(option.total_energy() == user.demand)
}
