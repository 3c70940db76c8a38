//! CSV and JSON files written by the subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use evse_auction::engine::{AllocationResult, Decision, LocationStats};
use evse_auction::model::Scenario;

use crate::{CliError, CliResult};

/// One row of `ledger.csv`. EVSE numbers are 1-based; `energy` lists the
/// kWh drawn in every slot of the horizon, space separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub user_id: u64,
    pub submitted: usize,
    pub decision: String,
    pub location: Option<String>,
    pub evse: Option<usize>,
    pub valuation: f64,
    pub utility: f64,
    pub payment_cable: f64,
    pub payment_energy: f64,
    pub payment_procurement: f64,
    pub payment_total: f64,
    pub energy: Option<String>,
}

impl LedgerRow {
    pub fn new(scenario: &Scenario, r: &AllocationResult) -> Self {
        let a = r.assignment.as_ref();
        LedgerRow {
            user_id: r.user_id,
            submitted: r.submitted,
            decision: match r.decision {
                Decision::Accepted => "accepted".into(),
                Decision::Rejected => "rejected".into(),
            },
            location: a.map(|a| scenario.locations[a.location].id.clone()),
            evse: a.map(|a| a.evse + 1),
            valuation: r.valuation,
            utility: r.utility,
            payment_cable: r.payment.cable,
            payment_energy: r.payment.energy,
            payment_procurement: r.payment.procurement,
            payment_total: r.payment.total(),
            energy: a.map(|a| {
                a.option
                    .energy
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            }),
        }
    }
}

/// One row of `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub location: String,
    pub online_welfare: f64,
    pub baseline_welfare: f64,
    pub offline_welfare: f64,
    pub offline_kind: String,
    pub online_served: usize,
    pub baseline_served: usize,
}

/// One row of `dapr.csv`. `location` is empty for generation curves and
/// `pool` is empty for cable and energy curves; `slot` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaprRow {
    pub resource: String,
    pub location: Option<String>,
    pub pool: Option<String>,
    pub slot: Option<usize>,
    pub alpha: f64,
    pub y: f64,
    pub price: f64,
    pub slack: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_ledger(
    path: &Path,
    scenario: &Scenario,
    ledger: &[AllocationResult],
) -> CliResult<()> {
    write_rows(path, ledger.iter().map(|r| LedgerRow::new(scenario, r)))
}

pub fn write_locations(path: &Path, stats: &[LocationStats]) -> CliResult<()> {
    write_rows(path, stats)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_ledger(path: &Path) -> CliResult<Vec<LedgerRow>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err)
}
