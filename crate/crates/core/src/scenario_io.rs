//! Scenario and user files, price/solar trace ingestion, seeded synthetic
//! populations, and the shipped presets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Bound, GenerationPool, Location, Preference, Scenario, TimeGrid, UserType, ValueBounds,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    let mut text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Reads one JSON user record per non-blank line.
pub fn load_users(path: &Path) -> Result<Vec<UserType>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut users = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let user = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        users.push(user);
    }
    Ok(users)
}

pub fn save_users(path: &Path, users: &[UserType]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for u in users {
        let line = serde_json::to_string(u).expect("user serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Averages consecutive groups of rows onto `slots` slots. The row count
/// must be a positive multiple of `slots`.
pub fn resample(values: &[f64], slots: usize) -> Result<Vec<f64>> {
    if slots == 0 || values.is_empty() || !values.len().is_multiple_of(slots) {
        return Err(Error::TraceLength {
            rows: values.len(),
            slots,
        });
    }
    let group = values.len() / slots;
    Ok(values
        .chunks(group)
        .map(|c| c.iter().sum::<f64>() / group as f64)
        .collect())
}

/// Rows of a headed CSV trace as float columns after the timestamp.
fn read_trace(path: &Path, min_columns: usize) -> Result<(csv::StringRecord, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < min_columns + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "expected at least {} columns, found {}",
                    min_columns + 1,
                    record.len()
                ),
            });
        }
        let values = record
            .iter()
            .skip(1)
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("`{field}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("negative or non-finite value {v}"),
            });
        }
        rows.push(values);
    }
    Ok((headers, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Grid price per slot from a `(timestamp, value)` CSV.
pub fn load_price_trace(path: &Path, slots: usize) -> Result<Vec<f64>> {
    let (_, rows) = read_trace(path, 1)?;
    let values: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    resample(&values, slots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolarTrace {
    pub actual: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Solar generation per slot. A file with `lower` and `upper` columns
/// supplies its own forecast band; otherwise the band is
/// `actual * (1 ± band_fraction)`.
pub fn load_solar_trace(path: &Path, slots: usize, band_fraction: f64) -> Result<SolarTrace> {
    if !(0.0..1.0).contains(&band_fraction) {
        return Err(Error::InvalidSpec(format!(
            "band_fraction {band_fraction} outside [0, 1)"
        )));
    }
    let (headers, rows) = read_trace(path, 1)?;
    let column = |name: &str| {
        headers
            .iter()
            .skip(1)
            .position(|h| h.eq_ignore_ascii_case(name))
    };
    let actual = resample(&rows.iter().map(|r| r[0]).collect::<Vec<_>>(), slots)?;
    let pick = |col: usize| -> Result<Vec<f64>> {
        let values = rows
            .iter()
            .map(|r| r.get(col).copied().unwrap_or(f64::NAN))
            .collect::<Vec<_>>();
        resample(&values, slots)
    };
    let (lower, upper) = match (column("lower"), column("upper")) {
        (Some(lo), Some(hi)) => (pick(lo)?, pick(hi)?),
        _ => (
            actual.iter().map(|s| s * (1.0 - band_fraction)).collect(),
            actual.iter().map(|s| s * (1.0 + band_fraction)).collect(),
        ),
    };
    Ok(SolarTrace {
        actual,
        lower,
        upper,
    })
}

/// Inputs for a synthetic user population. Durations are in slots,
/// demands in kWh, values in $.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPopulationSpec {
    pub count: usize,
    /// Relative arrival weight per slot; length must equal the slot count.
    pub arrival_weights: Vec<f64>,
    pub duration_min: usize,
    pub duration_max: usize,
    pub demand_min: u32,
    pub demand_max: u32,
    /// Range of the per-kWh value draw, sampled log-uniformly.
    pub value_per_kwh: (f64, f64),
    /// Total valuations are clamped into this range.
    pub value_total: (f64, f64),
    pub preferred_locations: usize,
    /// Relative popularity per location; empty means uniform.
    pub location_weights: Vec<f64>,
    /// Submissions precede arrival by up to this many slots.
    pub max_lead_slots: usize,
    pub seed: u64,
}

impl UserPopulationSpec {
    fn check(&self, scenario: &Scenario) -> Result<()> {
        let slots = scenario.slots();
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.duration_min < 2 || self.duration_min > self.duration_max {
            return fail(format!(
                "durations need 2 ≤ min ≤ max, got {}..{}",
                self.duration_min, self.duration_max
            ));
        }
        if self.duration_max > slots {
            return fail(format!(
                "duration {} exceeds {slots} slots",
                self.duration_max
            ));
        }
        if self.demand_min == 0 || self.demand_min > self.demand_max {
            return fail("demands need 1 ≤ min ≤ max".into());
        }
        let ranges = [
            ("value_per_kwh", self.value_per_kwh),
            ("value_total", self.value_total),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return fail(format!("{name} needs 0 < lo ≤ hi"));
            }
        }
        if self.arrival_weights.len() != slots
            || self
                .arrival_weights
                .iter()
                .any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.arrival_weights.iter().sum::<f64>() <= 0.0
        {
            return fail(
                "arrival_weights must be one non-negative weight per slot, not all zero".into(),
            );
        }
        if !self.location_weights.is_empty()
            && (self.location_weights.len() != scenario.locations.len()
                || self
                    .location_weights
                    .iter()
                    .any(|w| !(*w > 0.0 && w.is_finite())))
        {
            return fail("location_weights must be one positive weight per location".into());
        }
        if self.preferred_locations == 0 {
            return fail("preferred_locations must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Two daytime arrival bumps (morning and midday) over a small all-day floor.
pub fn two_peak_weights(slots: usize) -> Vec<f64> {
    let bump = |x: f64, centre: f64, width: f64| (-((x - centre) / width).powi(2) / 2.0).exp();
    (0..slots)
        .map(|t| {
            let x = (t as f64 + 0.5) / slots as f64;
            0.02 + bump(x, 0.34, 0.05) + 0.8 * bump(x, 0.52, 0.05)
        })
        .collect()
}

/// Draws `spec.count` users. Deterministic in `spec.seed`; every user has a
/// feasible window at each preferred location.
pub fn generate_users(spec: &UserPopulationSpec, scenario: &Scenario) -> Result<Vec<UserType>> {
    spec.check(scenario)?;
    let slots = scenario.slots();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_locations = scenario.locations.len();
    let picks = spec.preferred_locations.min(n_locations);
    let location_weights = if spec.location_weights.is_empty() {
        vec![1.0; n_locations]
    } else {
        spec.location_weights.clone()
    };

    let mut users = Vec::with_capacity(spec.count);
    for id in 1..=spec.count as u64 {
        let width = rng.random_range(spec.duration_min..=spec.duration_max);
        let last_start = slots - width + 1;
        let arrival = match WeightedIndex::new(&spec.arrival_weights[..last_start]) {
            Ok(dist) => dist.sample(&mut rng) + 1,
            Err(_) => rng.random_range(1..=last_start),
        };
        let departure = arrival + width - 1;
        let lead = rng.random_range(0..=spec.max_lead_slots).min(arrival - 1);

        let mut remaining = location_weights.clone();
        let mut chosen = Vec::with_capacity(picks);
        for _ in 0..picks {
            let dist = WeightedIndex::new(&remaining).expect("positive weights remain");
            let l = dist.sample(&mut rng);
            remaining[l] = 0.0;
            chosen.push(l);
        }
        let per_slot = chosen
            .iter()
            .map(|&l| scenario.locations[l].max_level(&scenario.energy_levels))
            .min()
            .unwrap_or(0)
            .max(1);
        let cap = u32::try_from(width)
            .unwrap_or(u32::MAX)
            .saturating_mul(per_slot);
        let demand = rng.random_range(spec.demand_min..=spec.demand_max).min(cap);

        let (lo, hi) = spec.value_per_kwh;
        let mut values: Vec<f64> = (0..picks)
            .map(|_| {
                let rate = if lo < hi {
                    rng.random_range(lo.ln()..hi.ln()).exp()
                } else {
                    lo
                };
                (f64::from(demand) * rate).clamp(spec.value_total.0, spec.value_total.1)
            })
            .collect();
        values.sort_by(|a, b| b.total_cmp(a));

        users.push(UserType {
            id,
            submitted: arrival - lead,
            arrival,
            departure,
            demand,
            preferences: chosen
                .iter()
                .zip(values)
                .map(|(&l, value)| Preference {
                    location: scenario.locations[l].id.clone(),
                    value,
                })
                .collect(),
            schedules: None,
        });
    }
    Ok(users)
}

/// Shape of a random test instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub slots: usize,
    pub locations: usize,
    pub max_evses: usize,
    pub max_cables: u32,
    pub users: usize,
    pub max_demand: u32,
    pub max_duration: usize,
    pub seed: u64,
}

/// Bounds used by [`random_instance`]; the energy floor sits above every
/// drawn grid price.
pub const RANDOM_BOUNDS: ValueBounds = ValueBounds {
    cable: Bound {
        lower: 0.01,
        upper: 8.0,
    },
    energy: Bound {
        lower: 0.35,
        upper: 8.0,
    },
};

/// A one-pool scenario with random capacities, solar, grid prices and
/// forecast bands, plus a random population. Deterministic in `spec.seed`.
pub fn random_instance(spec: &InstanceSpec) -> Result<(Scenario, Vec<UserType>)> {
    if spec.slots < 2 || spec.locations == 0 || spec.max_evses == 0 || spec.max_cables == 0 {
        return Err(Error::InvalidSpec(
            "instance needs ≥ 2 slots and ≥ 1 location, EVSE and cable".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.locations as f64;
    let mut pool = GenerationPool {
        id: "p".into(),
        solar: Vec::with_capacity(spec.slots),
        solar_lower: Vec::with_capacity(spec.slots),
        solar_upper: Vec::with_capacity(spec.slots),
        grid_limit: Vec::with_capacity(spec.slots),
        grid_price: Vec::with_capacity(spec.slots),
    };
    for _ in 0..spec.slots {
        let s = rng.random_range(0.0..2.0 * scale);
        let f = rng.random_range(0.0..0.5);
        pool.solar.push(s);
        pool.solar_lower.push(s * (1.0 - f));
        pool.solar_upper.push(s * (1.0 + f));
        pool.grid_limit.push(rng.random_range(0.5..2.0 * scale));
        pool.grid_price.push(rng.random_range(0.05..0.3));
    }
    let locations = (0..spec.locations)
        .map(|i| Location {
            id: format!("L{}", i + 1),
            evse_count: rng.random_range(1..=spec.max_evses),
            cables_per_evse: rng.random_range(1..=spec.max_cables),
            max_charge_rate: if rng.random_bool(0.5) { 1.0 } else { 2.0 },
            pool: "p".into(),
        })
        .collect();
    let scenario = Scenario {
        time_grid: TimeGrid {
            slot_count: spec.slots,
            slot_duration_minutes: 60,
        },
        energy_levels: vec![0, 1, 2],
        pools: vec![pool],
        locations,
        bounds: RANDOM_BOUNDS,
    };
    let population = UserPopulationSpec {
        count: spec.users,
        arrival_weights: vec![1.0; spec.slots],
        duration_min: 2,
        duration_max: spec.max_duration.clamp(2, spec.slots),
        demand_min: 1,
        demand_max: spec.max_demand.max(1),
        value_per_kwh: (0.1, 4.0),
        value_total: (0.1, 8.0),
        preferred_locations: spec.locations.min(2),
        location_weights: Vec::new(),
        max_lead_slots: 1,
        seed: rng.random(),
    };
    let users = generate_users(&population, &scenario)?;
    Ok((scenario, users))
}

/// A shipped scenario with its matching population.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub scenario: Scenario,
    pub population: PresetUsers,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PresetUsers {
    Fixed(Vec<UserType>),
    Generated(UserPopulationSpec),
}

impl Preset {
    pub fn users(&self) -> Result<Vec<UserType>> {
        match &self.population {
            PresetUsers::Fixed(users) => Ok(users.clone()),
            PresetUsers::Generated(spec) => generate_users(spec, &self.scenario),
        }
    }
}

pub const PRESETS: [&str; 2] = ["s1", "downtown9"];

pub fn preset(name: &str, seed: u64) -> Result<Preset> {
    match name {
        "s1" => Ok(s1_preset()),
        "downtown9" => Ok(downtown9_preset(seed)),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

fn s1_preset() -> Preset {
    let scenario = Scenario {
        time_grid: TimeGrid {
            slot_count: 4,
            slot_duration_minutes: 60,
        },
        energy_levels: vec![0, 1],
        pools: vec![GenerationPool {
            id: "p1".into(),
            solar: vec![1.0; 4],
            solar_lower: vec![0.5; 4],
            solar_upper: vec![1.0; 4],
            grid_limit: vec![2.0; 4],
            grid_price: vec![0.2; 4],
        }],
        locations: vec![Location {
            id: "L1".into(),
            evse_count: 1,
            cables_per_evse: 2,
            max_charge_rate: 1.0,
            pool: "p1".into(),
        }],
        bounds: ValueBounds {
            cable: Bound {
                lower: 0.05,
                upper: 3.0,
            },
            energy: Bound {
                lower: 0.5,
                upper: 3.0,
            },
        },
    };
    let user = UserType {
        id: 1,
        submitted: 1,
        arrival: 1,
        departure: 2,
        demand: 1,
        preferences: vec![Preference {
            location: "L1".into(),
            value: 2.0,
        }],
        schedules: None,
    };
    Preset {
        scenario,
        population: PresetUsers::Fixed(vec![user]),
    }
}

/// EVSE counts of the nine downtown locations.
pub const DOWNTOWN9_EVSES: [usize; 9] = [4, 4, 8, 8, 2, 8, 2, 4, 2];

fn downtown9_preset(seed: u64) -> Preset {
    let slots = 24;
    // hourly slots; slot t covers hour t-1
    let solar: Vec<f64> = (0..slots)
        .map(|h| {
            let x = (h as f64 + 0.5 - 6.0) / 13.0;
            if (0.0..=1.0).contains(&x) {
                512.0 * (std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        })
        .collect();
    let grid_price: Vec<f64> = (0..slots)
        .map(|h| match h {
            0..=6 => 0.08,
            7..=9 => 0.14,
            10..=15 => 0.06,
            16..=20 => 0.24,
            _ => 0.12,
        })
        .collect();
    let pool = GenerationPool {
        id: "downtown".into(),
        solar_lower: solar.iter().map(|s| 0.8 * s).collect(),
        solar_upper: solar.iter().map(|s| 1.2 * s).collect(),
        solar,
        grid_limit: vec![512.0; slots],
        grid_price,
    };
    let locations = DOWNTOWN9_EVSES
        .iter()
        .enumerate()
        .map(|(i, &m)| Location {
            id: format!("L{}", i + 1),
            evse_count: m,
            cables_per_evse: 4,
            max_charge_rate: 2.0,
            pool: "downtown".into(),
        })
        .collect();
    let scenario = Scenario {
        time_grid: TimeGrid {
            slot_count: slots,
            slot_duration_minutes: 60,
        },
        energy_levels: vec![0, 1],
        pools: vec![pool],
        locations,
        bounds: ValueBounds {
            cable: Bound {
                lower: 0.002,
                upper: 7.5,
            },
            energy: Bound {
                lower: 0.3,
                upper: 7.5,
            },
        },
    };
    let population = UserPopulationSpec {
        count: 1000,
        arrival_weights: two_peak_weights(slots),
        duration_min: 2,
        duration_max: 8,
        demand_min: 2,
        demand_max: 5,
        value_per_kwh: (0.05, 3.75),
        value_total: (0.5, 7.5),
        preferred_locations: 3,
        location_weights: DOWNTOWN9_EVSES.iter().map(|&m| (m * m) as f64).collect(),
        max_lead_slots: 2,
        seed,
    };
    Preset {
        scenario,
        population: PresetUsers::Generated(population),
    }
}

/// Applies one `key=value` override to a preset. Location keys take a
/// 1-based location number: `evse_count.3=10`, `cables_per_evse.1=2`,
/// `max_charge_rate.2=1.5`. `users=N` sets the generated population size.
pub fn apply_override(preset: &mut Preset, key: &str, value: &str) -> Result<()> {
    let bad = |m: &str| Error::InvalidSpec(format!("override `{key}={value}`: {m}"));
    if key == "users" {
        let n: usize = value.parse().map_err(|_| bad("expected an integer"))?;
        return match &mut preset.population {
            PresetUsers::Generated(spec) => {
                spec.count = n;
                Ok(())
            }
            PresetUsers::Fixed(_) => Err(bad("preset has a fixed population")),
        };
    }
    let (field, index) = key
        .split_once('.')
        .ok_or_else(|| bad("expected field.location"))?;
    let index: usize = index
        .parse()
        .map_err(|_| bad("location number must be an integer"))?;
    let loc = index
        .checked_sub(1)
        .and_then(|i| preset.scenario.locations.get_mut(i))
        .ok_or_else(|| bad("no such location"))?;
    match field {
        "evse_count" | "M" => {
            loc.evse_count = value.parse().map_err(|_| bad("expected an integer"))?
        }
        "cables_per_evse" | "C" => {
            loc.cables_per_evse = value.parse().map_err(|_| bad("expected an integer"))?
        }
        "max_charge_rate" | "E" => {
            loc.max_charge_rate = value.parse().map_err(|_| bad("expected a number"))?
        }
        _ => return Err(bad("unknown field")),
    }
    Ok(())
}
