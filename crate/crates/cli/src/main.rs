use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use caresel_core::datagen::{export_cohort, generate_ground_truth, import_cohort, sample_cohort, save_truth, CohortSpec};
use caresel_core::feature_select::{split_holdout, train_ensemble, write_trace_csv, EnsembleSpec};
use caresel_core::harness::{
    build_test_set, case_report, evaluate_model, run_seed, run_sweep, suite_configs, write_report, write_roc_report,
    TestSet, TestSetConfig,
};
use caresel_core::propensity::{
    compute_weights, fit_all_propensities, load_weights, save_weights, CohortWeights, PropensityConfig,
};
use caresel_core::scoring::{load_model, save_model, score_risk};
use caresel_core::{search, Budget, Cohort, SearchConfig, SearchMode};
use caresel_service::{serve, AppState, ScoreResponse, DEFAULT_MAX_SIMULATIONS};

#[derive(Parser)]
#[command(name = "caresel", version, about = "Care-plan risk models and plan search")]
struct Cli {
    /// Log verbosity on stderr: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and the ground truth behind it.
    Datagen(DatagenArgs),
    /// Fit per-service propensity models and write record weights.
    Weights(WeightsArgs),
    /// Screen predictors and build the ensemble model.
    Train(TrainArgs),
    /// Search for the lowest-risk plan for one patient, or score a plan.
    Recommend(RecommendArgs),
    /// Run an evaluation suite and write its tables.
    Experiment(ExperimentArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct DatagenArgs {
    /// JSON cohort spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Overrides the seed given with `--spec`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-factor clip bounds as `lo,hi`.
    #[arg(long, default_value = "0.05,20", value_parser = parse_clip)]
    clip: (f64, f64),
    /// Family-wise level for keeping a characteristic in a propensity model.
    #[arg(long, default_value_t = 0.05)]
    selection_alpha: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Record weights; unit weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    target_models: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Initial predictors per group.
    #[arg(long, default_value_t = 50.0)]
    features_per_group: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of the cohort kept out of training for evaluation.
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the regrouping trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    patient: String,
    #[arg(long, default_value = "ph_and_time", value_parser = parse_mode)]
    mode: SearchMode,
    #[arg(long, conflicts_with = "budget_secs")]
    budget_sims: Option<u64>,
    /// Wall-clock budget; results then depend on machine speed.
    #[arg(long)]
    budget_secs: Option<f64>,
    #[arg(long, default_value_t = 8)]
    plan_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    exploration: f64,
    #[arg(long, default_value_t = 0.1)]
    history_weight: f64,
    /// Service forced into the plan; repeatable.
    #[arg(long = "pin")]
    pins: Vec<String>,
    /// Print `{risk, reward}` of `--plan` (default: the observed plan) without searching.
    #[arg(long)]
    score_only: bool,
    /// Comma-separated service codes scored by `--score-only`.
    #[arg(long, value_delimiter = ',', requires = "score_only")]
    plan: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// tuning, enhancements, plan-size, dijkstra or roc.
    #[arg(long)]
    suite: String,
    /// Trained model; not used by the roc suite, which retrains per fold.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Simulations per search at the suite's full budget.
    #[arg(long, default_value_t = 10_000)]
    simulations: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    pool_size: usize,
    #[arg(long, default_value_t = 10)]
    per_decile: usize,
    /// Record weights for the roc suite; unit weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 15)]
    target_models: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Configuration whose plans fill `cases.json`; defaults to the suite's last.
    #[arg(long)]
    case_config: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CARESEL_MODEL")]
    model: PathBuf,
    #[arg(long, env = "CARESEL_COHORT")]
    cohort: PathBuf,
    /// `test_set.json` from an experiment run; enables `/deciles`.
    #[arg(long, env = "CARESEL_TEST_SET")]
    test_set: Option<PathBuf>,
    #[arg(long, env = "CARESEL_HOST", default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, env = "CARESEL_PORT", default_value_t = 8080)]
    port: u16,
    /// Largest simulation budget a request may ask for.
    #[arg(long, env = "CARESEL_MAX_SIMULATIONS", default_value_t = DEFAULT_MAX_SIMULATIONS)]
    max_simulations: u64,
}

fn parse_clip(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("lo: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("hi: {e}"))?;
    Ok((lo, hi))
}

fn parse_mode(s: &str) -> Result<SearchMode, String> {
    s.parse().map_err(|e: caresel_core::Error| e.to_string())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Datagen(a) => datagen(a),
        Command::Weights(a) => weights(a),
        Command::Train(a) => train(a),
        Command::Recommend(a) => recommend(a),
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_cohort(path: &Path) -> Result<Cohort> {
    import_cohort(path).with_context(|| format!("loading cohort {}", path.display()))
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let mut spec: CohortSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => CohortSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let truth = generate_ground_truth(&spec)?;
    let cohort = sample_cohort(&truth, &spec)?;
    export_cohort(&cohort, &a.out)?;
    if let Some(p) = &a.truth {
        save_truth(&truth, p)?;
    }
    tracing::info!(patients = cohort.len(), services = cohort.catalog.len(), "cohort written");
    Ok(())
}

fn weights(a: WeightsArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let cfg = PropensityConfig {
        selection_alpha: Some(a.selection_alpha),
        ..PropensityConfig::default()
    };
    let models = fit_all_propensities(&cohort, &cfg)?;
    let w = compute_weights(&cohort, &models, a.clip)?;
    tracing::info!(mean = w.mean(), clipped = w.clipped_factors, "weights computed");
    save_weights(&w, &a.out)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let all = match &a.weights {
        Some(p) => load_weights(p)?,
        None => CohortWeights::uniform(&cohort),
    };
    let train = if a.holdout > 0.0 {
        let (idx, _) = split_holdout(cohort.len(), a.holdout, a.seed);
        cohort.subset(&idx)
    } else {
        cohort
    };
    let w = all.for_cohort(&train)?;
    let spec = EnsembleSpec {
        target_models: a.target_models,
        alpha: a.alpha,
        initial_features_per_group: a.features_per_group,
        seed: a.seed,
        ..EnsembleSpec::default()
    };
    let mut built = train_ensemble(&spec, &train, &w)?;
    built.model.metadata.weighted = a.weights.is_some();
    save_model(&built.model, &a.out)?;
    if let Some(p) = &a.trace {
        let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_trace_csv(&built.trace, f)?;
    }
    tracing::info!(
        members = built.model.members().len(),
        auc = built.model.metadata.training_auc,
        "model written"
    );
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn recommend(a: RecommendArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cohort = load_cohort(&a.cohort)?;
    let patient = cohort
        .patient(&a.patient)
        .ok_or_else(|| caresel_core::Error::UnknownPatient(a.patient.clone()))?;
    if a.score_only {
        let plan = match &a.plan {
            Some(codes) => cohort.catalog.plan_from_codes(codes)?,
            None => patient.observed_plan.clone(),
        };
        let risk = score_risk(&model, patient, &plan)?;
        let body = serde_json::to_string(&ScoreResponse {
            risk,
            reward: 1.0 - risk,
        })?;
        return emit(&body, a.out.as_deref());
    }
    cohort.catalog.plan_from_codes(&a.pins)?;
    let budget = match (a.budget_sims, a.budget_secs) {
        (_, Some(s)) => Budget::Seconds(s),
        (Some(n), None) => Budget::Simulations(n),
        (None, None) => Budget::Simulations(60_000),
    };
    let cfg = SearchConfig {
        exploration: a.exploration,
        history_weight: a.history_weight,
        max_plan_size: a.plan_size,
        budget,
        mode: a.mode,
        seed: a.seed,
        pinned: a.pins.iter().map(|c| cohort.catalog.lookup(c).expect("validated")).collect(),
        ..SearchConfig::default()
    };
    let result = search(&model, &cohort.catalog, patient, &cfg)?;
    emit(&serde_json::to_string_pretty(&result)?, a.out.as_deref())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    if a.suite == "roc" {
        let w = match &a.weights {
            Some(p) => load_weights(p)?,
            None => CohortWeights::uniform(&cohort),
        }
        .for_cohort(&cohort)?;
        let spec = EnsembleSpec {
            target_models: a.target_models,
            alpha: a.alpha,
            seed: a.seed,
            ..EnsembleSpec::default()
        };
        let report = evaluate_model(&cohort, &w, &spec, a.folds, a.seed)?;
        write_roc_report(&a.out, &report)?;
        tracing::info!(auc = report.ensemble_mean, sd = report.ensemble_sd, "roc report written");
        return Ok(());
    }
    let configs = suite_configs(&a.suite, a.simulations)?;
    let Some(model_path) = &a.model else {
        bail!("--model is required for the {} suite", a.suite);
    };
    let model = load_model(model_path)?;
    let ts_cfg = TestSetConfig {
        pool_size: a.pool_size,
        per_decile: a.per_decile,
        seed: a.seed,
    };
    let test_set = build_test_set(&cohort, &model, &ts_cfg)?;
    let report = run_sweep(&configs, &test_set, &cohort, &model, a.repeats, a.seed)?;
    write_report(&a.out, &format!("{} suite", a.suite), &report, &test_set)?;
    let case_config = match &a.case_config {
        Some(name) => configs
            .iter()
            .find(|c| &c.name == name)
            .with_context(|| format!("no configuration named {name:?} in the {} suite", a.suite))?,
        None => configs.last().expect("suites are non-empty"),
    };
    write_cases(&a.out.join("cases.json"), case_config, &test_set, &cohort, &model, a.seed)?;
    for t in &report.timing {
        tracing::info!(config = %t.config, rate = t.simulations_per_second, "simulations per second");
    }
    Ok(())
}

/// For each decile, the configuration's plan for the patient it helped most
/// in the first repeat, next to the observed plan.
fn write_cases(
    path: &Path,
    config: &caresel_core::harness::SweepConfig,
    test_set: &TestSet,
    cohort: &Cohort,
    model: &caresel_core::EnsembleModel,
    base_seed: u64,
) -> Result<()> {
    let mut cases = Vec::new();
    for decile in 1..=caresel_core::harness::DECILES {
        let mut best = None;
        for (i, e) in test_set.patients.iter().enumerate().filter(|(_, e)| e.decile == decile) {
            let p = cohort.patient(&e.id).expect("test set drawn from cohort");
            let r = config.run(model, &cohort.catalog, p, run_seed(base_seed, 0, i))?;
            if best.as_ref().is_none_or(|(_, b): &(_, caresel_core::SearchResult)| r.risk_reduction > b.risk_reduction) {
                best = Some((p, r));
            }
        }
        if let Some((p, r)) = best {
            cases.push(case_report(&cohort.catalog, p, decile, &r));
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(&cases)?).with_context(|| format!("writing {}", path.display()))
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cohort = load_cohort(&a.cohort)?;
    let mut state = AppState::new(model, cohort);
    state.max_simulations = a.max_simulations;
    state.model_id = a.model.display().to_string();
    state.cohort_id = a.cohort.display().to_string();
    if let Some(p) = &a.test_set {
        let ts: TestSet = read_json(p)?;
        state.deciles = Some(ts.bounds);
    }
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(addr, Arc::new(state)))?;
    Ok(())
}
