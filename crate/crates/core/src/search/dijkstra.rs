use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{finish, scorer_for, Found, SearchResult};
use crate::catalog::{CarePlan, PatientRecord, ServiceCatalog, ServiceId};
use crate::error::{Error, Result};
use crate::scoring::{EnsembleModel, PatientScorer};

/// Weight of the edge from a plan with risk `from` to a plan with one more
/// service and risk `to`. Lies in `[0, 2]` for risks in `[0, 1]`.
pub fn edge_weight(from: f64, to: f64) -> f64 {
    1.0 - (from - to)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DijkstraConfig {
    pub max_plan_size: usize,
    /// Largest number of queued vertices before giving up.
    pub frontier_limit: usize,
    /// Plan evaluations allowed; when spent, the deepest settled plan is
    /// completed greedily.
    pub max_evaluations: Option<u64>,
    pub pinned: Vec<ServiceId>,
}

impl Default for DijkstraConfig {
    fn default() -> Self {
        DijkstraConfig {
            max_plan_size: 8,
            frontier_limit: 2_000_000,
            max_evaluations: None,
            pinned: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    distance: f64,
    plan: Vec<ServiceId>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.plan.cmp(&other.plan))
    }
}

struct Evaluator<'a> {
    scorer: &'a PatientScorer,
    cache: HashMap<Vec<ServiceId>, f64>,
    evaluations: u64,
}

impl Evaluator<'_> {
    fn risk(&mut self, plan: &[ServiceId]) -> f64 {
        if let Some(&r) = self.cache.get(plan) {
            return r;
        }
        self.evaluations += 1;
        let r = self.scorer.risk(plan);
        self.cache.insert(plan.to_vec(), r);
        r
    }
}

fn with(plan: &[ServiceId], s: ServiceId) -> Vec<ServiceId> {
    let mut next = plan.to_vec();
    let pos = next.binary_search(&s).unwrap_err();
    next.insert(pos, s);
    next
}

/// Shortest path from the pinned (or empty) plan to a plan of
/// `max_plan_size` services over the lattice of service sets, where each
/// edge adds one service. Vertices are canonical sets, so a set reached along
/// several orders is settled once. Equal distances settle in lexicographic
/// plan order.
pub fn dijkstra_search(
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
    cfg: &DijkstraConfig,
) -> Result<SearchResult> {
    let n = catalog.len();
    let d = cfg.max_plan_size;
    if d < 1 || d > n {
        return Err(Error::InvalidConfig(format!("plan size must lie in [1, {n}], got {d}")));
    }
    let source = CarePlan::new(cfg.pinned.clone())
        .map_err(|_| Error::InvalidConfig("pinned services contain a duplicate".into()))?;
    if source.len() > d || source.iter().any(|s| s.index() >= n) {
        return Err(Error::InvalidConfig("pinned services do not fit the catalog and plan size".into()));
    }
    let scorer = scorer_for(ensemble, catalog, patient)?;
    let mut eval = Evaluator {
        scorer: &scorer,
        cache: HashMap::new(),
        evaluations: 0,
    };
    let source = source.as_slice().to_vec();
    let mut best: HashMap<Vec<ServiceId>, f64> = HashMap::new();
    let mut settled: HashSet<Vec<ServiceId>> = HashSet::new();
    let mut heap = BinaryHeap::new();
    eval.risk(&source);
    best.insert(source.clone(), 0.0);
    heap.push(Reverse(Entry {
        distance: 0.0,
        plan: source.clone(),
    }));
    // first settled vertex of the largest size seen, for the fallback
    let mut deepest = Entry {
        distance: 0.0,
        plan: source,
    };

    let mut exhausted = false;
    'outer: while let Some(Reverse(entry)) = heap.pop() {
        if !settled.insert(entry.plan.clone()) {
            continue;
        }
        if entry.plan.len() > deepest.plan.len() {
            deepest = entry.clone();
        }
        if entry.plan.len() == d {
            let found = Found {
                plan: entry.plan.iter().copied().collect(),
                simulations: eval.evaluations,
                root_path: cfg.pinned.clone(),
                phases: Vec::new(),
                path_distance: Some(entry.distance),
                budget_exhausted: false,
            };
            return finish("dijkstra", ensemble, catalog, patient, found);
        }
        let here = eval.risk(&entry.plan);
        for s in (0..n as u16).map(ServiceId) {
            if entry.plan.binary_search(&s).is_ok() {
                continue;
            }
            let next = with(&entry.plan, s);
            if settled.contains(&next) {
                continue;
            }
            if cfg.max_evaluations.is_some_and(|m| eval.evaluations >= m) && !eval.cache.contains_key(&next) {
                exhausted = true;
                break 'outer;
            }
            let distance = entry.distance + edge_weight(here, eval.risk(&next));
            if best.get(&next).is_none_or(|&b| distance < b) {
                best.insert(next.clone(), distance);
                heap.push(Reverse(Entry { distance, plan: next }));
                if heap.len() > cfg.frontier_limit {
                    return Err(Error::FrontierOverflow {
                        limit: cfg.frontier_limit,
                    });
                }
            }
        }
    }
    debug_assert!(exhausted, "the lattice always contains a plan of the requested size");

    // greedy completion of the deepest settled plan
    let mut plan = deepest.plan;
    let mut distance = deepest.distance;
    while plan.len() < d {
        let here = eval.risk(&plan);
        let mut choice: Option<(f64, Vec<ServiceId>)> = None;
        for s in (0..n as u16).map(ServiceId) {
            if plan.binary_search(&s).is_ok() {
                continue;
            }
            let next = with(&plan, s);
            let r = eval.risk(&next);
            if choice.as_ref().is_none_or(|(br, _)| r < *br) {
                choice = Some((r, next));
            }
        }
        let (r, next) = choice.expect("a service is available");
        distance += edge_weight(here, r);
        plan = next;
    }
    let found = Found {
        plan: plan.into_iter().collect(),
        simulations: eval.evaluations,
        root_path: cfg.pinned.clone(),
        phases: Vec::new(),
        path_distance: Some(distance),
        budget_exhausted: exhausted,
    };
    finish("dijkstra", ensemble, catalog, patient, found)
}
