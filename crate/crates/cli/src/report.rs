use serde::Serialize;
use sha2::{Digest, Sha256};

use evse_auction::engine::{AuctionOutcome, LocationStats};
use evse_auction::model::{Scenario, ValueBounds};
use evse_auction::oracle::Ratio;
use evse_auction::pricing::PricingMode;

/// Hex SHA-256 of the scenario's JSON encoding.
pub fn scenario_digest(scenario: &Scenario) -> String {
    let bytes = serde_json::to_vec(scenario).expect("scenario serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub welfare: f64,
    pub revenue: f64,
    pub operational_cost: f64,
    pub total_utility: f64,
    pub accepted: usize,
}

impl From<&AuctionOutcome> for RunSummary {
    fn from(o: &AuctionOutcome) -> Self {
        RunSummary {
            welfare: o.welfare,
            revenue: o.revenue,
            operational_cost: o.operational_cost,
            total_utility: o.total_utility,
            accepted: o.accepted(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineKind {
    Exact,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineSummary {
    pub kind: OfflineKind,
    pub welfare: f64,
    /// Unpruned search-tree size of the instance.
    pub search_leaves: f64,
}

/// Everything written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario_digest: String,
    pub mode: PricingMode,
    pub policy: String,
    pub seed: u64,
    pub users: usize,
    pub bounds: ValueBounds,
    pub alpha_1: Option<f64>,
    pub alpha_2: Option<f64>,
    pub online: RunSummary,
    pub baseline: Option<RunSummary>,
    pub offline: Option<OfflineSummary>,
    /// Offline over online welfare; only when the offline side is exact.
    pub empirical_ratio: Option<Ratio>,
    pub locations: Vec<LocationStats>,
}
