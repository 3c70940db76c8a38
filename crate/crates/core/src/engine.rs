//! The online reservation mechanism. Each request is quoted against the
//! current posted prices, admitted at the utility-maximising (option, EVSE)
//! pair when that utility is positive, charged the pre-update payment, and
//! then folded into the demand tallies. Decisions are never revisited.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    validate_bounds, validate_scenario, validate_users, ChargeOption, DemandState, Scenario,
    UserType, ValueBounds,
};
use crate::options::{generate_options, OptionPolicy, PriceSnapshot, DEFAULT_MAX_OPTIONS};
use crate::pricing::{GenerationCost, PriceCurve, PricingMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PaymentBreakdown {
    pub cable: f64,
    pub energy: f64,
    pub procurement: f64,
}

impl PaymentBreakdown {
    pub fn total(&self) -> f64 {
        self.cable + self.energy + self.procurement
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub location: usize,
    pub evse: usize,
    pub option: ChargeOption,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub user_id: u64,
    pub submitted: usize,
    pub decision: Decision,
    /// Valuation realised at the chosen location; 0 when rejected.
    pub valuation: f64,
    pub utility: f64,
    pub payment: PaymentBreakdown,
    pub assignment: Option<Assignment>,
}

impl AllocationResult {
    pub fn rejected(user: &UserType) -> Self {
        AllocationResult {
            user_id: user.id,
            submitted: user.submitted,
            decision: Decision::Rejected,
            valuation: 0.0,
            utility: 0.0,
            payment: PaymentBreakdown::default(),
            assignment: None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.decision == Decision::Accepted
    }
}

/// A feasible (option, EVSE) pair with its quoted payment.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub option: usize,
    pub location: usize,
    pub evse: usize,
    pub value: f64,
    pub payment: PaymentBreakdown,
}

impl Candidate {
    pub fn utility(&self) -> f64 {
        self.value - self.payment.total()
    }
}

/// Returns the index of the best candidate: highest utility, then lowest
/// location, lowest EVSE, and lexicographically smallest energy schedule.
pub fn select_best(candidates: &[Candidate], options: &[ChargeOption]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let incumbent = &candidates[b];
                let (u, ub) = (c.utility(), incumbent.utility());
                u > ub
                    || (u == ub
                        && (c.location, c.evse, &options[c.option].energy)
                            < (
                                incumbent.location,
                                incumbent.evse,
                                &options[incumbent.option].energy,
                            ))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

pub struct AuctionState<'a> {
    scenario: &'a Scenario,
    bounds: ValueBounds,
    mode: PricingMode,
    demand: DemandState,
    ledger: Vec<AllocationResult>,
    cable_curves: Vec<PriceCurve>,
    energy_curves: Vec<PriceCurve>,
    /// `[pool][slot]`
    generation_curves: Vec<Vec<PriceCurve>>,
    /// `[pool][slot]`, the procurement cap for this mode
    pool_caps: Vec<Vec<f64>>,
    valuation_sum: f64,
    revenue: f64,
}

impl<'a> AuctionState<'a> {
    /// Fails when the bounds make a procurement curve undefined.
    pub fn new(scenario: &'a Scenario, bounds: ValueBounds, mode: PricingMode) -> Result<Self> {
        let scale = scenario.price_scale();
        let cable_curves = scenario
            .locations
            .iter()
            .map(|l| PriceCurve::cable(&bounds, l, scale))
            .collect();
        let energy_curves = scenario
            .locations
            .iter()
            .map(|l| PriceCurve::energy(&bounds, l, scale))
            .collect();
        let mut generation_curves = Vec::with_capacity(scenario.pools.len());
        let active = scenario.active_pools();
        for (p, pool) in scenario.pools.iter().enumerate() {
            let curves = if active.contains(&p) {
                (0..scenario.slots())
                    .map(|t| PriceCurve::generation(pool, t, &bounds, scale, mode))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            generation_curves.push(curves);
        }
        let pool_caps = generation_curves
            .iter()
            .map(|curves| curves.iter().map(|c| c.capacity).collect())
            .collect();
        Ok(AuctionState {
            scenario,
            bounds,
            mode,
            demand: DemandState::new(scenario),
            ledger: Vec::new(),
            cable_curves,
            energy_curves,
            generation_curves,
            pool_caps,
            valuation_sum: 0.0,
            revenue: 0.0,
        })
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn bounds(&self) -> &ValueBounds {
        &self.bounds
    }

    pub fn mode(&self) -> PricingMode {
        self.mode
    }

    pub fn demand(&self) -> &DemandState {
        &self.demand
    }

    pub fn ledger(&self) -> &[AllocationResult] {
        &self.ledger
    }

    pub fn revenue(&self) -> f64 {
        self.revenue
    }

    /// Procurement capacity per slot of `pool` under this mode.
    pub fn pool_capacity(&self, pool: usize) -> &[f64] {
        &self.pool_caps[pool]
    }

    pub fn cable_price(&self, location: usize, evse: usize, slot: usize) -> f64 {
        self.cable_curves[location].eval(f64::from(self.demand.cables(location, evse, slot)))
    }

    pub fn energy_price(&self, location: usize, evse: usize, slot: usize) -> f64 {
        self.energy_curves[location].eval(self.demand.energy(location, evse, slot))
    }

    pub fn generation_price(&self, pool: usize, slot: usize) -> f64 {
        self.generation_curves[pool][slot].eval(self.demand.generation(pool, slot))
    }

    /// Posted payment for `option` at `evse`, or `None` if any slot would
    /// exceed a capacity.
    pub fn quote(&self, option: &ChargeOption, evse: usize) -> Option<PaymentBreakdown> {
        let l = option.location;
        let loc = &self.scenario.locations[l];
        if evse >= loc.evse_count {
            return None;
        }
        let pool = self.demand.pool_of(l);
        if !self.demand.fits(
            option,
            evse,
            loc.cables_per_evse,
            loc.max_charge_rate,
            &self.pool_caps[pool],
        ) {
            return None;
        }
        let mut pay = PaymentBreakdown::default();
        for t in 0..option.cable.len() {
            let c = option.cable[t];
            if c != 0 {
                pay.cable += f64::from(c) * self.cable_price(l, evse, t);
            }
            let e = option.energy[t];
            if e != 0 {
                let e = f64::from(e);
                pay.energy += e * self.energy_price(l, evse, t);
                pay.procurement += e * self.generation_price(pool, t);
            }
        }
        Some(pay)
    }

    /// Every feasible (option, EVSE) pair for `user` at current prices.
    pub fn candidates(&self, user: &UserType, options: &[ChargeOption]) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (i, opt) in options.iter().enumerate() {
            let Some(loc) = self.scenario.locations.get(opt.location) else {
                continue;
            };
            let Some(value) = user.value_at(&loc.id) else {
                continue;
            };
            for evse in 0..loc.evse_count {
                if let Some(payment) = self.quote(opt, evse) {
                    out.push(Candidate {
                        option: i,
                        location: opt.location,
                        evse,
                        value,
                        payment,
                    });
                }
            }
        }
        out
    }

    /// Decides on `user` and appends the outcome to the ledger.
    pub fn admit(&mut self, user: &UserType, options: &[ChargeOption]) -> &AllocationResult {
        let candidates = self.candidates(user, options);
        let result = match select_best(&candidates, options) {
            Some(b) if candidates[b].utility() > 0.0 => {
                let c = &candidates[b];
                let option = options[c.option].clone();
                self.demand.allocate(&option, c.evse);
                self.valuation_sum += c.value;
                self.revenue += c.payment.total();
                AllocationResult {
                    user_id: user.id,
                    submitted: user.submitted,
                    decision: Decision::Accepted,
                    valuation: c.value,
                    utility: c.utility(),
                    payment: c.payment,
                    assignment: Some(Assignment {
                        location: c.location,
                        evse: c.evse,
                        option,
                    }),
                }
            }
            _ => AllocationResult::rejected(user),
        };
        self.ledger.push(result);
        self.ledger.last().unwrap()
    }

    /// Cheapest per-kWh energy-plus-procurement price per location and slot.
    pub fn price_snapshot(&self) -> PriceSnapshot {
        let per_location = (0..self.scenario.locations.len())
            .map(|l| {
                let pool = self.demand.pool_of(l);
                (0..self.scenario.slots())
                    .map(|t| {
                        let energy = (0..self.demand.evse_count(l))
                            .map(|m| self.energy_price(l, m, t))
                            .fold(f64::INFINITY, f64::min);
                        energy + self.generation_price(pool, t)
                    })
                    .collect()
            })
            .collect();
        PriceSnapshot { per_location }
    }

    /// Actual procurement cost of the current demand.
    pub fn operational_cost(&self) -> f64 {
        operational_cost(self.scenario, &self.demand)
    }

    pub fn welfare(&self) -> f64 {
        self.valuation_sum - self.operational_cost()
    }

    pub fn into_outcome(self) -> AuctionOutcome {
        let peaks: Vec<(f64, f64)> = (0..self.scenario.locations.len())
            .map(|l| self.final_peaks(l))
            .collect();
        AuctionOutcome::assemble(self.scenario, self.ledger, self.demand, &peaks)
    }

    /// Highest posted cable price over the location's EVSEs and the highest
    /// procurement price over slots where the location draws energy, both at
    /// the current demand.
    fn final_peaks(&self, l: usize) -> (f64, f64) {
        let pool = self.demand.pool_of(l);
        let mut cable: f64 = 0.0;
        let mut generation: f64 = 0.0;
        for t in 0..self.scenario.slots() {
            for m in 0..self.demand.evse_count(l) {
                cable = cable.max(self.cable_price(l, m, t));
            }
            if self.demand.location_energy(l, t) > 0.0 {
                generation = generation.max(self.generation_price(pool, t));
            }
        }
        (cable, generation)
    }
}

/// Procurement cost of `demand` against actual solar. Tallies past the
/// transformer limit are charged at the grid price; callers that can reach
/// that branch check feasibility themselves.
pub fn operational_cost(scenario: &Scenario, demand: &DemandState) -> f64 {
    let mut total = 0.0;
    for p in scenario.active_pools() {
        let pool = &scenario.pools[p];
        for t in 0..scenario.slots() {
            let y = demand.generation(p, t);
            let cost = GenerationCost::actual(pool, t);
            total += cost
                .cost(y)
                .finite()
                .unwrap_or(cost.grid_price * (y - cost.solar));
        }
    }
    total
}

/// Procurement cost attributed to each location, splitting every pool-slot
/// in proportion to the energy each location draws there.
pub fn attributed_costs(scenario: &Scenario, demand: &DemandState) -> Vec<f64> {
    let mut out = vec![0.0; scenario.locations.len()];
    for t in 0..scenario.slots() {
        for (l, share) in out.iter_mut().enumerate() {
            let e = demand.location_energy(l, t);
            if e <= 0.0 {
                continue;
            }
            let p = demand.pool_of(l);
            let y = demand.generation(p, t);
            let cost = GenerationCost::actual(&scenario.pools[p], t);
            let c = cost
                .cost(y)
                .finite()
                .unwrap_or(cost.grid_price * (y - cost.solar));
            *share += c * e / y;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationStats {
    pub location: String,
    pub served: usize,
    pub valuation: f64,
    pub attributed_cost: f64,
    pub welfare: f64,
    pub revenue: f64,
    pub peak_cable_price: f64,
    pub peak_generation_price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub ledger: Vec<AllocationResult>,
    pub welfare: f64,
    pub revenue: f64,
    pub operational_cost: f64,
    pub total_utility: f64,
    pub locations: Vec<LocationStats>,
    pub demand: DemandState,
}

impl AuctionOutcome {
    pub(crate) fn assemble(
        scenario: &Scenario,
        ledger: Vec<AllocationResult>,
        demand: DemandState,
        peaks: &[(f64, f64)],
    ) -> Self {
        let costs = attributed_costs(scenario, &demand);
        let mut locations: Vec<LocationStats> = scenario
            .locations
            .iter()
            .zip(costs)
            .zip(peaks)
            .map(|((loc, cost), &(cable, generation))| LocationStats {
                location: loc.id.clone(),
                served: 0,
                valuation: 0.0,
                attributed_cost: cost,
                welfare: 0.0,
                revenue: 0.0,
                peak_cable_price: cable,
                peak_generation_price: generation,
            })
            .collect();
        let mut valuation = 0.0;
        let mut revenue = 0.0;
        let mut total_utility = 0.0;
        for r in &ledger {
            if let Some(a) = &r.assignment {
                let s = &mut locations[a.location];
                s.served += 1;
                s.valuation += r.valuation;
                s.revenue += r.payment.total();
            }
            valuation += r.valuation;
            revenue += r.payment.total();
            total_utility += r.utility;
        }
        for s in &mut locations {
            s.welfare = s.valuation - s.attributed_cost;
        }
        let operational_cost = operational_cost(scenario, &demand);
        AuctionOutcome {
            ledger,
            welfare: valuation - operational_cost,
            revenue,
            operational_cost,
            total_utility,
            locations,
            demand,
        }
    }

    pub fn accepted(&self) -> usize {
        self.ledger.iter().filter(|r| r.is_accepted()).count()
    }
}

/// Orders users by submission slot, ties by id.
pub fn submission_order(users: &[UserType]) -> Vec<&UserType> {
    let mut order: Vec<&UserType> = users.iter().collect();
    order.sort_by_key(|u| (u.submitted, u.id));
    order
}

pub(crate) fn check_inputs(
    scenario: &Scenario,
    users: &[UserType],
    bounds: Option<&ValueBounds>,
) -> Result<()> {
    let mut violations = validate_scenario(scenario);
    if let Some(b) = bounds {
        violations.extend(validate_bounds(scenario, b));
    }
    if violations.is_empty() {
        violations = validate_users(scenario, users);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

/// Runs the mechanism over `users` in submission order.
pub fn run_auction(
    scenario: &Scenario,
    users: &[UserType],
    bounds: &ValueBounds,
    mode: PricingMode,
    policy: OptionPolicy,
    seed: u64,
) -> Result<AuctionOutcome> {
    check_inputs(scenario, users, Some(bounds))?;
    let mut state = AuctionState::new(scenario, *bounds, mode)?;
    for user in submission_order(users) {
        let snapshot = matches!(policy, OptionPolicy::Heuristic(_)).then(|| state.price_snapshot());
        let options = generate_options(
            user,
            scenario,
            policy,
            DEFAULT_MAX_OPTIONS,
            snapshot.as_ref(),
            seed,
        );
        state.admit(user, &options);
    }
    Ok(state.into_outcome())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::fixtures::{s1, user};

    fn option(cable: [u8; 4], energy: [u32; 4]) -> ChargeOption {
        ChargeOption {
            location: 0,
            cable: cable.to_vec(),
            energy: energy.to_vec(),
        }
    }

    #[test]
    fn quotes_at_empty_state() {
        let s = s1();
        let state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let pay = state.quote(&option([1, 1, 0, 0], [1, 0, 0, 0]), 0).unwrap();
        assert_relative_eq!(pay.cable, 2.0 * 0.05 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(pay.energy, 0.5 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(pay.procurement, 0.25, epsilon = 1e-12);
        assert_relative_eq!(pay.total(), 0.35, epsilon = 1e-12);

        let cables_only = state.quote(&option([1, 1, 0, 0], [0; 4]), 0).unwrap();
        assert_relative_eq!(cables_only.total(), 0.0166667, epsilon = 1e-7);
        assert_eq!(
            state.quote(&option([0; 4], [0; 4]), 0).unwrap().total(),
            0.0
        );
        assert!(state
            .quote(&option([1, 1, 0, 0], [1, 0, 0, 0]), 1)
            .is_none());
    }

    #[test]
    fn admit_s1_user() {
        let s = s1();
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let u = user(1, 1, 2, 1, 2.0);
        let r = state
            .admit(&u, &[option([1, 1, 0, 0], [1, 0, 0, 0])])
            .clone();
        assert!(r.is_accepted());
        assert_relative_eq!(r.utility, 1.65, epsilon = 1e-12);
        assert_relative_eq!(r.payment.total(), 0.35, epsilon = 1e-12);
        assert_eq!(state.demand().cables(0, 0, 0), 1);
        assert_eq!(state.demand().generation(0, 0), 1.0);
    }

    #[test]
    fn low_value_user_rejected() {
        let s = s1();
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let u = user(1, 1, 2, 1, 0.01);
        let r = state.admit(&u, &[option([1, 1, 0, 0], [1, 0, 0, 0])]);
        assert_eq!(r.decision, Decision::Rejected);
        assert_eq!(r.utility, 0.0);
        assert_eq!(r.payment.total(), 0.0);
        assert_eq!(state.demand().cables(0, 0, 0), 0);
    }

    #[test]
    fn full_cable_rejects() {
        let s = s1();
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let cables = option([1, 1, 0, 0], [0; 4]);
        for id in 0..2 {
            assert!(state
                .admit(&user(id, 1, 2, 1, 2.0), &[cables.clone()])
                .is_accepted());
        }
        // price at capacity equals the upper bound
        assert_relative_eq!(state.cable_price(0, 0, 0), 3.0, epsilon = 1e-9);
        assert!(!state
            .admit(&user(9, 1, 2, 1, 100.0), &[cables])
            .is_accepted());
    }

    #[test]
    fn zero_utility_is_rejection() {
        let s = s1();
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let opt = option([1, 1, 0, 0], [1, 0, 0, 0]);
        let price = state.quote(&opt, 0).unwrap().total();
        assert!(!state.admit(&user(1, 1, 2, 1, price), &[opt]).is_accepted());
    }

    #[test]
    fn ties_prefer_smallest_schedule() {
        let s = s1();
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let opts = vec![
            option([1, 1, 0, 0], [1, 0, 0, 0]),
            option([1, 1, 0, 0], [0, 1, 0, 0]),
        ];
        let r = state.admit(&user(1, 1, 2, 1, 2.0), &opts);
        assert_eq!(
            r.assignment.as_ref().unwrap().option.energy,
            vec![0, 1, 0, 0]
        );
    }

    #[test]
    fn emptier_evse_wins() {
        let mut s = s1();
        s.locations[0].evse_count = 2;
        let mut state = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let opt = option([1, 1, 0, 0], [1, 0, 0, 0]);
        assert_eq!(
            state
                .admit(&user(1, 1, 2, 1, 2.0), &[opt.clone()])
                .assignment
                .as_ref()
                .unwrap()
                .evse,
            0
        );
        assert_eq!(
            state
                .admit(&user(2, 1, 2, 1, 2.0), &[opt])
                .assignment
                .as_ref()
                .unwrap()
                .evse,
            1
        );
    }

    #[test]
    fn run_auction_single_user() {
        let s = s1();
        let out = run_auction(
            &s,
            &[user(1, 1, 2, 1, 2.0)],
            &s.bounds,
            PricingMode::Exact,
            OptionPolicy::Exhaustive,
            0,
        )
        .unwrap();
        assert_eq!(out.accepted(), 1);
        assert_relative_eq!(out.revenue, 0.35, epsilon = 1e-12);
        assert_relative_eq!(out.total_utility, 1.65, epsilon = 1e-12);
        assert_relative_eq!(out.welfare, 2.0, epsilon = 1e-12);
        assert_eq!(out.operational_cost, 0.0);
        assert_eq!(out.locations[0].served, 1);
    }

    #[test]
    fn run_auction_empty() {
        let s = s1();
        let out = run_auction(
            &s,
            &[],
            &s.bounds,
            PricingMode::Exact,
            OptionPolicy::Exhaustive,
            0,
        )
        .unwrap();
        assert_eq!(
            (out.welfare, out.revenue, out.operational_cost),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn run_auction_capacity_one() {
        let mut s = s1();
        s.locations[0].cables_per_evse = 1;
        let users = [user(1, 1, 4, 2, 2.5), user(2, 1, 4, 2, 2.5)];
        let out = run_auction(
            &s,
            &users,
            &s.bounds,
            PricingMode::Exact,
            OptionPolicy::Exhaustive,
            0,
        )
        .unwrap();
        assert!(out.ledger[0].is_accepted());
        assert!(!out.ledger[1].is_accepted());
    }

    #[test]
    fn run_auction_rejects_invalid_scenario() {
        let mut s = s1();
        s.locations[0].evse_count = 0;
        let err = run_auction(
            &s,
            &[],
            &s.bounds.clone(),
            PricingMode::Exact,
            OptionPolicy::Exhaustive,
            0,
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn conservative_mode_caps_procurement() {
        let mut s = s1();
        s.pools[0].solar_lower = vec![0.0; 4];
        s.pools[0].grid_limit = vec![1.0; 4];
        s.locations[0].evse_count = 3;
        s.locations[0].cables_per_evse = 4;
        let opt = option([1, 0, 0, 0], [1, 0, 0, 0]);
        let mut exact = AuctionState::new(&s, s.bounds, PricingMode::Exact).unwrap();
        let mut cons = AuctionState::new(&s, s.bounds, PricingMode::Conservative).unwrap();
        let rich = |id| UserType {
            departure: 2,
            ..user(id, 1, 2, 1, 50.0)
        };
        let accepted = |st: &mut AuctionState, n| {
            (0..n)
                .filter(|&i| st.admit(&rich(i), &[opt.clone()]).is_accepted())
                .count()
        };
        assert_eq!(accepted(&mut exact, 3), 2);
        assert_eq!(accepted(&mut cons, 3), 1);
    }
}
