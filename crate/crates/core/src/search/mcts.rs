use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finish, scorer_for, uct_ph_value, Budget, Found, PhaseTrace, SearchConfig, SearchResult};
use crate::catalog::{CarePlan, PatientRecord, ServiceCatalog, ServiceId};
use crate::error::Result;
use crate::scoring::{EnsembleModel, PatientScorer, PlanAccumulator};

/// Global per-action play counts and rewards shared by every node.
#[derive(Clone, Debug)]
pub struct PhTable {
    plays: Vec<u64>,
    rewards: Vec<f64>,
}

impl PhTable {
    pub fn new(n_services: usize) -> Self {
        PhTable {
            plays: vec![0; n_services],
            rewards: vec![0.0; n_services],
        }
    }

    pub fn record(&mut self, service: ServiceId, reward: f64) {
        self.plays[service.index()] += 1;
        self.rewards[service.index()] += reward;
    }

    pub fn plays(&self, service: ServiceId) -> u64 {
        self.plays[service.index()]
    }

    /// `hr / hn`, or `None` for an action never played.
    pub fn score(&self, service: ServiceId) -> Option<f64> {
        let n = self.plays[service.index()];
        (n > 0).then(|| self.rewards[service.index()] / n as f64)
    }

    /// Best action by history score; unplayed actions rank below any played
    /// one and ties go to the lower index.
    pub fn best(&self, candidates: impl Iterator<Item = ServiceId>) -> Option<ServiceId> {
        let mut best: Option<(ServiceId, Option<f64>)> = None;
        for s in candidates {
            let h = self.score(s);
            let better = match &best {
                None => true,
                Some((b, bh)) => match (h, bh) {
                    (Some(x), Some(y)) => x > *y || (x == *y && s < *b),
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => s < *b,
                },
            };
            if better {
                best = Some((s, h));
            }
        }
        best.map(|(s, _)| s)
    }
}

#[derive(Clone, Debug)]
struct Node {
    service: Option<ServiceId>,
    visits: u64,
    total: f64,
    children: Vec<usize>,
    /// Actions not yet expanded; filled on first visit.
    untried: Option<Vec<ServiceId>>,
    /// Best complete roll-out that passed through this node.
    best_reward: f64,
    best_plan: Vec<ServiceId>,
}

impl Node {
    fn new(service: Option<ServiceId>) -> Self {
        Node {
            service,
            visits: 0,
            total: 0.0,
            children: Vec::new(),
            untried: None,
            best_reward: f64::NEG_INFINITY,
            best_plan: Vec::new(),
        }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total / self.visits as f64
        }
    }
}

pub(crate) struct Engine<'a> {
    scorer: &'a PatientScorer,
    cfg: &'a SearchConfig,
    use_history: bool,
    nodes: Vec<Node>,
    root: usize,
    root_path: Vec<ServiceId>,
    root_acc: PlanAccumulator,
    pub(crate) ph: PhTable,
    rng: ChaCha8Rng,
    pub(crate) simulations: u64,
    best_risk: f64,
    best_plan: Vec<ServiceId>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(scorer: &'a PatientScorer, cfg: &'a SearchConfig) -> Self {
        let mut nodes = vec![Node::new(None)];
        let mut acc = scorer.accumulator();
        let mut root = 0;
        for &s in &cfg.pinned {
            nodes.push(Node::new(Some(s)));
            let child = nodes.len() - 1;
            nodes[root].children.push(child);
            nodes[root].untried = Some(Vec::new());
            root = child;
            scorer.push(&mut acc, s);
        }
        let best_risk = scorer.risk_of(&acc);
        Engine {
            scorer,
            cfg,
            use_history: cfg.mode.uses_history(),
            nodes,
            root,
            root_path: cfg.pinned.clone(),
            root_acc: acc,
            ph: PhTable::new(scorer.n_services()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            simulations: 0,
            best_risk,
            best_plan: cfg.pinned.clone(),
        }
    }

    fn depth_limit(&self) -> usize {
        self.cfg.max_plan_size
    }

    fn on_path(&self, path: &[ServiceId], s: ServiceId) -> bool {
        path.contains(&s)
    }

    fn available(&self, path: &[ServiceId]) -> Vec<ServiceId> {
        (0..self.scorer.n_services() as u16)
            .map(ServiceId)
            .filter(|s| !self.on_path(path, *s))
            .collect()
    }

    /// Next action to expand at a node: best history score first in history
    /// modes, otherwise the lowest index.
    fn pick_untried(&self, untried: &[ServiceId]) -> usize {
        if self.use_history {
            let best = self.ph.best(untried.iter().copied()).expect("non-empty");
            untried.iter().position(|&s| s == best).expect("present")
        } else {
            untried
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| **s)
                .map(|(i, _)| i)
                .expect("non-empty")
        }
    }

    fn select_child(&self, node: usize) -> usize {
        let parent = &self.nodes[node];
        let w = if self.use_history { self.cfg.history_weight } else { 0.0 };
        let mut best: Option<(usize, f64, ServiceId)> = None;
        for &c in &parent.children {
            let child = &self.nodes[c];
            let s = child.service.expect("child has a service");
            let history = if self.use_history { self.ph.score(s) } else { None };
            let v = uct_ph_value(
                child.total,
                child.visits as f64,
                parent.visits as f64,
                history,
                self.cfg.exploration,
                w,
            );
            let better = match best {
                None => true,
                Some((_, bv, bs)) => v > bv || (v == bv && s < bs),
            };
            if better {
                best = Some((c, v, s));
            }
        }
        best.expect("node has children").0
    }

    fn rollout_action(&mut self, path: &[ServiceId]) -> ServiceId {
        let avail = self.available(path);
        let greedy = self.use_history && self.rng.random::<f64>() >= self.cfg.epsilon;
        if greedy {
            self.ph.best(avail.into_iter()).expect("an action is available")
        } else {
            avail[self.rng.random_range(0..avail.len())]
        }
    }

    fn note_plan(&mut self, acc: &PlanAccumulator) -> f64 {
        let risk = self.scorer.risk_of(acc);
        if risk < self.best_risk {
            self.best_risk = risk;
            self.best_plan = acc.services().to_vec();
        }
        risk
    }

    /// Selection, expansion, roll-out and backpropagation; returns the reward.
    pub(crate) fn simulate_once(&mut self) -> f64 {
        let d = self.depth_limit();
        let mut acc = self.root_acc.clone();
        let mut path = vec![self.root];
        let mut sequence: Vec<ServiceId> = Vec::new();
        let mut node = self.root;
        loop {
            if acc.len() >= d {
                break;
            }
            if self.nodes[node].untried.is_none() {
                let avail = self.available(acc.services());
                self.nodes[node].untried = Some(avail);
            }
            let untried = self.nodes[node].untried.as_ref().expect("filled");
            if !untried.is_empty() {
                let i = self.pick_untried(untried);
                let s = self.nodes[node].untried.as_mut().expect("filled").swap_remove(i);
                self.nodes.push(Node::new(Some(s)));
                let child = self.nodes.len() - 1;
                self.nodes[node].children.push(child);
                self.scorer.push(&mut acc, s);
                self.note_plan(&acc);
                sequence.push(s);
                path.push(child);
                break;
            }
            node = self.select_child(node);
            let s = self.nodes[node].service.expect("child has a service");
            self.scorer.push(&mut acc, s);
            self.note_plan(&acc);
            sequence.push(s);
            path.push(node);
        }
        while acc.len() < d {
            let s = self.rollout_action(acc.services());
            self.scorer.push(&mut acc, s);
            self.note_plan(&acc);
            sequence.push(s);
        }
        let reward = 1.0 - self.scorer.risk_of(&acc);
        for &n in &path {
            let node = &mut self.nodes[n];
            node.visits += 1;
            node.total += reward;
            if reward > node.best_reward {
                node.best_reward = reward;
                node.best_plan = acc.services().to_vec();
            }
        }
        if self.use_history {
            for &s in &sequence {
                self.ph.record(s, reward);
            }
        }
        self.simulations += 1;
        reward
    }

    fn most_visited_child(&self, node: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for &c in &self.nodes[node].children {
            let cn = &self.nodes[c];
            let better = match best {
                None => true,
                Some(b) => {
                    let bn = &self.nodes[b];
                    cn.visits > bn.visits
                        || (cn.visits == bn.visits
                            && (cn.mean() > bn.mean()
                                || (cn.mean() == bn.mean() && cn.service < bn.service)))
                }
            };
            if better {
                best = Some(c);
            }
        }
        best
    }

    /// Follows max-visit children from the root and completes the plan with
    /// the best roll-out through the deepest node; the better of that plan
    /// and the best plan evaluated anywhere is returned.
    pub(crate) fn extract(&self) -> Vec<ServiceId> {
        let mut node = self.root;
        let mut path = self.root_path.clone();
        while let Some(c) = self.most_visited_child(node) {
            node = c;
            path.push(self.nodes[c].service.expect("child has a service"));
        }
        let candidate = if self.nodes[node].best_plan.len() > path.len() {
            self.nodes[node].best_plan.clone()
        } else {
            path
        };
        if self.scorer.risk(&candidate) <= self.best_risk {
            candidate
        } else {
            self.best_plan.clone()
        }
    }

    /// Makes the most visited child of the root the new root; `None` when
    /// the root has no children.
    pub(crate) fn commit(&mut self) -> Option<ServiceId> {
        let c = self.most_visited_child(self.root)?;
        let s = self.nodes[c].service.expect("child has a service");
        self.root = c;
        self.root_path.push(s);
        self.scorer.push(&mut self.root_acc, s);
        Some(s)
    }

    pub(crate) fn best_risk(&self) -> f64 {
        self.best_risk
    }

    pub(crate) fn root_path(&self) -> &[ServiceId] {
        &self.root_path
    }

    #[cfg(test)]
    pub(crate) fn root_visits(&self) -> u64 {
        self.nodes[self.root].visits
    }

    /// Runs simulations until the budget is spent.
    fn run(&mut self, budget: Budget) {
        match budget {
            Budget::Simulations(n) => {
                for _ in 0..n {
                    self.simulate_once();
                }
            }
            Budget::Seconds(s) => {
                if s <= 0.0 {
                    return;
                }
                let deadline = Instant::now() + Duration::from_secs_f64(s);
                while Instant::now() < deadline {
                    self.simulate_once();
                }
            }
        }
    }

    #[cfg(test)]
    fn check_integrity(&self) {
        let n_services = self.scorer.n_services();
        let mut stack = vec![(self.root, self.root_path.clone())];
        while let Some((n, path)) = stack.pop() {
            let node = &self.nodes[n];
            assert!(node.total <= node.visits as f64 + 1e-9);
            assert!(node.children.len() <= n_services - path.len());
            let child_visits: u64 = node.children.iter().map(|&c| self.nodes[c].visits).sum();
            assert!(node.visits >= child_visits);
            for &c in &node.children {
                let s = self.nodes[c].service.unwrap();
                assert!(!path.contains(&s), "service repeats on a path");
                let mut p = path.clone();
                p.push(s);
                stack.push((c, p));
            }
        }
    }
}

/// Plain MCTS over the whole budget, with history and MAST when the mode
/// asks for them.
pub fn mcts_search(
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate(catalog.len())?;
    let scorer = scorer_for(ensemble, catalog, patient)?;
    let mut engine = Engine::new(&scorer, cfg);
    engine.run(cfg.budget);
    let plan: CarePlan = engine.extract().into_iter().collect();
    let found = Found {
        plan,
        simulations: engine.simulations,
        root_path: engine.root_path().to_vec(),
        phases: Vec::new(),
        path_distance: None,
        budget_exhausted: false,
    };
    finish(cfg.mode.as_str(), ensemble, catalog, patient, found)
}

/// Splits `budget` into `phases` equal parts; count budgets give the
/// remainder to the earliest phases.
fn phase_budgets(budget: Budget, phases: usize) -> Vec<Budget> {
    match budget {
        Budget::Simulations(n) => {
            let (base, extra) = (n / phases as u64, n % phases as u64);
            (0..phases as u64)
                .map(|i| Budget::Simulations(base + u64::from(i < extra)))
                .collect()
        }
        Budget::Seconds(s) => vec![Budget::Seconds(s / phases as f64); phases],
    }
}

/// Time-controlled MCTS: the budget is split over the services still to be
/// chosen. After each phase the most visited child of the root becomes the
/// new root, keeping its subtree and the history table. From the second
/// phase on, a phase that does not improve the best plan found so far ends
/// the search.
pub fn time_controlled_search(
    ensemble: &EnsembleModel,
    catalog: &ServiceCatalog,
    patient: &PatientRecord,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate(catalog.len())?;
    let scorer = scorer_for(ensemble, catalog, patient)?;
    let mut engine = Engine::new(&scorer, cfg);
    let n_phases = cfg.max_plan_size - cfg.pinned.len();
    let mut phases = Vec::new();
    if !cfg.budget.is_zero() {
        for (i, budget) in phase_budgets(cfg.budget, n_phases).into_iter().enumerate() {
            let before_sims = engine.simulations;
            let before_risk = engine.best_risk();
            engine.run(budget);
            let committed = engine.commit();
            phases.push(PhaseTrace {
                phase: i + 1,
                simulations: engine.simulations - before_sims,
                committed: committed.map(|s| catalog.code(s).to_string()),
                best_risk: engine.best_risk(),
            });
            if committed.is_none() || (i > 0 && engine.best_risk() >= before_risk) {
                break;
            }
        }
    }
    let plan: CarePlan = engine.extract().into_iter().collect();
    let found = Found {
        plan,
        simulations: engine.simulations,
        root_path: engine.root_path().to_vec(),
        phases,
        path_distance: None,
        budget_exhausted: false,
    };
    finish(cfg.mode.as_str(), ensemble, catalog, patient, found)
}
