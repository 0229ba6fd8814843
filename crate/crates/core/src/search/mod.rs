//! Plan search: single-player Monte-Carlo Tree Search with UCT, optional
//! Progressive History and MAST roll-outs, a time-controlled variant that
//! commits one service per phase, and a Dijkstra baseline.
//!
//! The reward of a plan is `1 - risk`. Search runs against a
//! [`PatientScorer`] for speed; the risks it reports are recomputed with
//! [`score_risk`] so they match every other scoring path exactly.

mod dijkstra;
mod mcts;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{CarePlan, PatientRecord, ServiceCatalog, ServiceId};
use crate::error::{Error, Result};
use crate::scoring::{score_risk, EnsembleModel, PatientScorer};

pub use dijkstra::{dijkstra_search, edge_weight, DijkstraConfig};
pub use mcts::{mcts_search, time_controlled_search, PhTable};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Vanilla,
    PhMast,
    TimeControlled,
    PhAndTime,
}

impl SearchMode {
    pub const ALL: [SearchMode; 4] = [
        SearchMode::Vanilla,
        SearchMode::PhMast,
        SearchMode::TimeControlled,
        SearchMode::PhAndTime,
    ];

    pub fn uses_history(self) -> bool {
        matches!(self, SearchMode::PhMast | SearchMode::PhAndTime)
    }

    pub fn is_time_controlled(self) -> bool {
        matches!(self, SearchMode::TimeControlled | SearchMode::PhAndTime)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Vanilla => "vanilla",
            SearchMode::PhMast => "ph_mast",
            SearchMode::TimeControlled => "time_controlled",
            SearchMode::PhAndTime => "ph_and_time",
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SearchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown search mode {s:?}")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Simulations(u64),
    Seconds(f64),
}

impl Budget {
    pub fn is_zero(self) -> bool {
        match self {
            Budget::Simulations(n) => n == 0,
            Budget::Seconds(s) => s <= 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// UCT exploration constant `C`.
    pub exploration: f64,
    /// Progressive History weight `W`.
    pub history_weight: f64,
    /// Probability of a uniformly random roll-out action under MAST.
    pub epsilon: f64,
    pub max_plan_size: usize,
    pub budget: Budget,
    pub mode: SearchMode,
    pub seed: u64,
    /// Services forced into the plan, in root-path order.
    pub pinned: Vec<ServiceId>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            exploration: 0.05,
            history_weight: 0.1,
            epsilon: 0.1,
            max_plan_size: 8,
            budget: Budget::Simulations(10_000),
            mode: SearchMode::PhAndTime,
            seed: 0,
            pinned: Vec::new(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, n_services: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return bad(format!("exploration constant must be >= 0, got {}", self.exploration));
        }
        if !(self.history_weight >= 0.0 && self.history_weight.is_finite()) {
            return bad(format!("history weight must be >= 0, got {}", self.history_weight));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.max_plan_size < 1 || self.max_plan_size > n_services {
            return bad(format!(
                "plan size must lie in [1, {n_services}], got {}",
                self.max_plan_size
            ));
        }
        if let Budget::Seconds(s) = self.budget {
            if !s.is_finite() {
                return bad("time budget must be finite".into());
            }
        }
        if self.pinned.len() > self.max_plan_size {
            return bad(format!(
                "{} pinned services exceed the plan size {}",
                self.pinned.len(),
                self.max_plan_size
            ));
        }
        if let Some(s) = self.pinned.iter().find(|s| s.index() >= n_services) {
            return bad(format!("pinned service {s} is not in the catalog"));
        }
        if CarePlan::new(self.pinned.clone()).is_err() {
            return bad("pinned services contain a duplicate".into());
        }
        Ok(())
    }
}

/// Selection value of a visited child: mean reward, UCT
/// exploration, and a Progressive History bonus that fades as the child
/// accumulates visits and reward. `history` is `hr / hn` for the child's
/// action, or `None` when the action has never been played.
pub fn uct_ph_value(
    total_reward: f64,
    visits: f64,
    parent_visits: f64,
    history: Option<f64>,
    exploration: f64,
    history_weight: f64,
) -> f64 {
    if visits <= 0.0 {
        return f64::INFINITY;
    }
    let n = visits;
    let mean = total_reward / n;
    let explore = exploration * (parent_visits.ln() / n).sqrt();
    let bonus = match history {
        Some(h) => h * history_weight / ((1.0 - mean) * n + 1.0),
        None => 0.0,
    };
    mean + explore + bonus
}

/// One phase of a time-controlled search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase: usize,
    pub simulations: u64,
    /// Service committed as the new root after the phase.
    pub committed: Option<String>,
    pub best_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub algorithm: String,
    pub plan: Vec<String>,
    pub services: CarePlan,
    pub risk: f64,
    pub initial_risk: f64,
    /// `100 * (initial_risk - risk)`, percentage points.
    pub risk_reduction: f64,
    pub simulations: u64,
    /// Services on the final root path: pins, then committed services.
    pub root_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<PhaseTrace>,
    /// Accumulated edge weight to the returned vertex (Dijkstra only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_distance: Option<f64>,
    /// The evaluation budget ran out and the plan was completed greedily.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub budget_exhausted: bool,
}

/// Raw outcome of a search engine before canonical rescoring.
pub(crate) struct Found {
    pub plan: CarePlan,
    pub simulations: u64,
    pub root_path: Vec<ServiceId>,
    pub phases: Vec<PhaseTrace>,
    pub path_distance: Option<f64>,
    pub budget_exhausted: bool,
}

pub(crate) fn finish(
    algorithm: &str,
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
    found: Found,
) -> Result<SearchResult> {
    let initial_risk = score_risk(ensemble, patient, &patient.observed_plan)?;
    let risk = score_risk(ensemble, patient, &found.plan)?;
    Ok(SearchResult {
        algorithm: algorithm.to_string(),
        plan: catalog.plan_codes(&found.plan),
        services: found.plan,
        risk,
        initial_risk,
        risk_reduction: 100.0 * (initial_risk - risk),
        simulations: found.simulations,
        root_path: found
            .root_path
            .iter()
            .map(|&s| catalog.code(s).to_string())
            .collect(),
        phases: found.phases,
        path_distance: found.path_distance,
        budget_exhausted: found.budget_exhausted,
    })
}

pub(crate) fn scorer_for(
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
) -> Result<PatientScorer> {
    patient.validate(catalog)?;
    PatientScorer::new(ensemble, patient, catalog.len())
}

/// Runs the MCTS variant selected by `cfg.mode`.
pub fn search(
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    if cfg.mode.is_time_controlled() {
        time_controlled_search(ensemble, catalog, patient, cfg)
    } else {
        mcts_search(ensemble, catalog, patient, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_history_weight_is_plain_uct() {
        for (r, n, np, h) in [(3.2, 5.0, 40.0, Some(0.7)), (0.1, 1.0, 2.0, Some(0.0)), (7.5, 9.0, 100.0, None)] {
            let plain = r / n + 0.3 * (f64::ln(np) / n).sqrt();
            assert_eq!(uct_ph_value(r, n, np, h, 0.3, 0.0), plain);
        }
    }

    #[test]
    fn hand_computed_values() {
        let v = uct_ph_value(1.0, 1.0, std::f64::consts::E, None, 1.0, 0.0);
        assert!((v - 2.0).abs() < 1e-12);
        let got = uct_ph_value(1.0, 2.0, 4.0, Some(0.5), 0.05, 0.1);
        assert!((got - 0.566_63).abs() < 1e-5, "{got}");
        assert_eq!(uct_ph_value(0.0, 0.0, 10.0, None, 0.05, 0.1), f64::INFINITY);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SearchMode::ALL {
            assert_eq!(m.as_str().parse::<SearchMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fast".parse::<SearchMode>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = SearchConfig::default();
        assert!(ok.validate(10).is_ok());
        assert!(ok.validate(5).is_err());
        let dup = SearchConfig {
            pinned: vec![ServiceId(1), ServiceId(1)],
            ..ok.clone()
        };
        assert!(dup.validate(10).is_err());
        let eps = SearchConfig { epsilon: 1.5, ..ok.clone() };
        assert!(eps.validate(10).is_err());
        let c = SearchConfig { exploration: -1.0, ..ok };
        assert!(c.validate(10).is_err());
    }
}
