//! Grids of training runs, validation-based model selection and the
//! likelihood-vs-BPR frontier experiment.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Objective, TrainConfig};
use super::train::{initialize, train, StopReason, TrainOutcome};
use crate::data::{PanelDataset, SplitName};
use crate::error::Result;
use crate::eval::evaluate_model;
use crate::models::GenerativeModel;
use crate::rng::{domain, StreamKey};

pub const TRIALS_SCHEMA_VERSION: u32 = 1;

/// Split index used for evaluation streams: train 0, validation 1, test 2.
const TEST_STREAM: u64 = 2;

pub type ModelFactory<'a> = dyn Fn() -> Result<Box<dyn GenerativeModel>> + Sync + 'a;

/// Hyperparameters crossed with the base config. Empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub seeds: Vec<u64>,
    pub step_sizes: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl SweepGrid {
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let seeds = if self.seeds.is_empty() { vec![base.seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &step_size in &or_base(&self.step_sizes, base.step_size) {
            for &sigma in &or_base(&self.sigmas, base.sigma) {
                for &seed in &seeds {
                    out.push(TrainConfig { step_size, sigma, seed, ..base.clone() });
                }
            }
        }
        out
    }
}

/// One trained model. Test columns are filled only for selected models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub label: String,
    pub objective: Objective,
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub step_size: f64,
    pub sigma: f64,
    pub epochs: usize,
    pub stop: Option<StopReason>,
    pub selected: bool,
    pub train_nll: Option<f64>,
    pub train_bpr_mean: Option<f64>,
    pub val_nll: Option<f64>,
    pub val_bpr_mean: Option<f64>,
    pub test_loglik: Option<f64>,
    pub test_bpr_mean: Option<f64>,
    pub test_bpr_p05: Option<f64>,
    pub test_bpr_p50: Option<f64>,
    pub test_bpr_p95: Option<f64>,
    pub error: Option<String>,
}

impl TrialResult {
    /// Row for a finished run, reporting its selected checkpoint.
    pub fn from_outcome(cfg: &TrainConfig, out: &TrainOutcome) -> Self {
        let b = &out.best;
        TrialResult {
            epochs: out.state.epoch,
            stop: Some(out.stop),
            train_nll: Some(b.train_nll),
            train_bpr_mean: Some(b.train_bpr_mean),
            val_nll: Some(b.val_nll),
            val_bpr_mean: Some(b.val_bpr_mean),
            ..TrialResult::blank(cfg)
        }
    }

    pub fn failed(cfg: &TrainConfig, err: impl std::fmt::Display) -> Self {
        TrialResult { error: Some(err.to_string()), ..Self::blank(cfg) }
    }

    fn blank(cfg: &TrainConfig) -> Self {
        TrialResult {
            label: cfg.label(),
            objective: cfg.objective,
            epsilon: cfg.epsilon,
            lambda: cfg.lambda,
            seed: cfg.seed,
            step_size: cfg.step_size,
            sigma: cfg.sigma,
            epochs: 0,
            stop: None,
            selected: false,
            train_nll: None,
            train_bpr_mean: None,
            val_nll: None,
            val_bpr_mean: None,
            test_loglik: None,
            test_bpr_mean: None,
            test_bpr_p05: None,
            test_bpr_p50: None,
            test_bpr_p95: None,
            error: None,
        }
    }
}

/// A finished run with its selected parameters.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub result: TrialResult,
    pub phi: Option<Vec<f64>>,
}

fn run_one(factory: &ModelFactory<'_>, data: &PanelDataset, cfg: &TrainConfig, init: Option<&[f64]>) -> TrialRun {
    let attempt = || -> Result<TrialRun> {
        let mut model = factory()?;
        match init {
            Some(phi) => model.set_params(phi)?,
            None => initialize(model.as_mut(), data, cfg)?,
        }
        let out = train(model.as_mut(), data, cfg, None)?;
        Ok(TrialRun { result: TrialResult::from_outcome(cfg, &out), phi: Some(out.best.phi.clone()) })
    };
    attempt().unwrap_or_else(|e| {
        log::warn!("trial {} seed {} failed: {e}", cfg.label(), cfg.seed);
        TrialRun { result: TrialResult::failed(cfg, &e), phi: None }
    })
}

/// Trains one model per grid point. Failed trials are kept with their error.
pub fn run_sweep(
    factory: &ModelFactory<'_>,
    data: &PanelDataset,
    base: &TrainConfig,
    grid: &SweepGrid,
    init: Option<&[f64]>,
) -> Vec<TrialRun> {
    grid.configs(base).iter().map(|cfg| run_one(factory, data, cfg, init)).collect()
}

/// Index of the run kept under the objective's selection rule. DAML runs
/// keep the best validation likelihood among those whose validation BPR
/// reaches `reference_bpr` (the likelihood model's), else the best BPR.
pub fn select_best(objective: Objective, runs: &[TrialResult], reference_bpr: Option<f64>) -> Option<usize> {
    let ok: Vec<(usize, f64, f64)> = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| Some((i, r.val_nll?, r.val_bpr_mean?)))
        .filter(|(_, nll, bpr)| nll.is_finite() && bpr.is_finite())
        .collect();
    let min_by = |items: &mut dyn Iterator<Item = &(usize, f64, f64)>, key: &dyn Fn(&(usize, f64, f64)) -> f64| {
        items.min_by(|a, b| key(a).total_cmp(&key(b))).map(|x| x.0)
    };
    match objective {
        Objective::Nll => min_by(&mut ok.iter(), &|x| x.1),
        Objective::Bpr => min_by(&mut ok.iter(), &|x| -x.2),
        Objective::Daml => {
            let floor = reference_bpr.unwrap_or(f64::NEG_INFINITY);
            min_by(&mut ok.iter().filter(|x| x.2 >= floor), &|x| x.1)
                .or_else(|| min_by(&mut ok.iter(), &|x| -x.2))
        }
    }
}

/// `{1.0}` plus `n` values evenly spaced strictly inside `(low, high)`,
/// clipped to `[0, 1]`, ascending, duplicates removed.
pub fn epsilon_grid(low: f64, high: f64, n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (1..=n)
        .map(|i| (low + (high - low) * i as f64 / (n + 1) as f64).clamp(0.0, 1.0))
        .chain(std::iter::once(1.0))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoConfig {
    /// Shared settings; the objective and epsilon are set per run.
    pub base: TrainConfig,
    pub grid: SweepGrid,
    /// Explicit DAML thresholds. `None` derives them from the training BPR
    /// of the likelihood and BPR models; an empty list skips DAML.
    pub epsilons: Option<Vec<f64>>,
    pub n_bracket: usize,
    /// Start DAML runs from the selected likelihood model.
    pub warm_start: bool,
    pub test_trials: usize,
    pub test_samples: usize,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        ParetoConfig {
            base: TrainConfig::default(),
            grid: SweepGrid::default(),
            epsilons: None,
            n_bracket: 4,
            warm_start: true,
            test_trials: 1000,
            test_samples: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectedModel {
    pub result: TrialResult,
    pub phi: Vec<f64>,
    /// Mean test BPR of each evaluation trial; empty without a test split.
    pub test_bpr_trials: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParetoOutcome {
    /// Every trial, selected ones carrying test metrics.
    pub trials: Vec<TrialResult>,
    /// One entry per model on the frontier plot: NLL, BPR, then DAML by ascending epsilon.
    pub selected: Vec<SelectedModel>,
}

impl ParetoOutcome {
    pub fn selected_by(&self, objective: Objective) -> impl Iterator<Item = &SelectedModel> {
        self.selected.iter().filter(move |m| m.result.objective == objective)
    }
}

fn finish_group(
    factory: &ModelFactory<'_>,
    data: &PanelDataset,
    cfg: &ParetoConfig,
    mut runs: Vec<TrialRun>,
    reference_bpr: Option<f64>,
    trials: &mut Vec<TrialResult>,
    selected: &mut Vec<SelectedModel>,
) -> Result<Option<SelectedModel>> {
    let objective = runs.first().map(|r| r.result.objective);
    let results: Vec<TrialResult> = runs.iter().map(|r| r.result.clone()).collect();
    let pick = objective.and_then(|o| select_best(o, &results, reference_bpr));
    let mut chosen = None;
    if let Some(i) = pick {
        let run = &mut runs[i];
        let phi = run.phi.clone().expect("selected runs succeeded");
        let test = data.split().range(SplitName::Test);
        let mut test_bpr_trials = Vec::new();
        if !test.is_empty() {
            let mut model = factory()?;
            model.set_params(&phi)?;
            let key = StreamKey::new(cfg.base.seed).child(domain::EVAL).child(TEST_STREAM);
            let rep = evaluate_model(model.as_ref(), data, test, cfg.base.k, cfg.test_samples, cfg.test_trials, key)?;
            run.result.test_loglik = rep.loglik;
            run.result.test_bpr_mean = Some(rep.bpr_mean);
            run.result.test_bpr_p05 = Some(rep.bpr_p05);
            run.result.test_bpr_p50 = Some(rep.bpr_p50);
            run.result.test_bpr_p95 = Some(rep.bpr_p95);
            test_bpr_trials = rep.bpr_trials;
        }
        run.result.selected = true;
        let model = SelectedModel { result: run.result.clone(), phi, test_bpr_trials };
        selected.push(model.clone());
        chosen = Some(model);
    }
    trials.extend(runs.into_iter().map(|r| r.result));
    Ok(chosen)
}

/// Likelihood run, BPR run, then DAML across the threshold grid, each
/// swept over `cfg.grid` and reduced to one model by validation.
pub fn run_pareto(factory: &ModelFactory<'_>, data: &PanelDataset, cfg: &ParetoConfig) -> Result<ParetoOutcome> {
    cfg.base.validate(data.n_sites())?;
    let mut trials = Vec::new();
    let mut selected = Vec::new();
    let with = |objective, epsilon| TrainConfig { objective, epsilon, ..cfg.base.clone() };

    let nll_runs = run_sweep(factory, data, &with(Objective::Nll, 0.0), &cfg.grid, None);
    let nll = finish_group(factory, data, cfg, nll_runs, None, &mut trials, &mut selected)?;
    let bpr_runs = run_sweep(factory, data, &with(Objective::Bpr, 0.0), &cfg.grid, None);
    let bpr = finish_group(factory, data, cfg, bpr_runs, None, &mut trials, &mut selected)?;

    let epsilons = match (&cfg.epsilons, &nll, &bpr) {
        (Some(e), _, _) => e.clone(),
        (None, Some(n), Some(b)) => {
            let low = n.result.train_bpr_mean.unwrap_or(0.0);
            let high = b.result.train_bpr_mean.unwrap_or(1.0).max(low);
            epsilon_grid(low, high, cfg.n_bracket)
        }
        _ => vec![1.0],
    };
    let reference_bpr = nll.as_ref().and_then(|n| n.result.val_bpr_mean);
    let init = if cfg.warm_start { nll.as_ref().map(|n| n.phi.clone()) } else { None };
    for eps in epsilons {
        let runs = run_sweep(factory, data, &with(Objective::Daml, eps), &cfg.grid, init.as_deref());
        finish_group(factory, data, cfg, runs, reference_bpr, &mut trials, &mut selected)?;
    }
    Ok(ParetoOutcome { trials, selected })
}

pub const TRIAL_COLUMNS: [&str; 20] = [
    "label",
    "objective",
    "epsilon",
    "lambda",
    "seed",
    "step_size",
    "sigma",
    "epochs",
    "stop",
    "selected",
    "train_nll",
    "train_bpr_mean",
    "val_nll",
    "val_bpr_mean",
    "test_loglik",
    "test_bpr_mean",
    "test_bpr_p05",
    "test_bpr_p50",
    "test_bpr_p95",
    "error",
];

/// Writes one row per trial under a `# schema_version` comment line.
pub fn write_trials_csv(rows: &[TrialResult], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "# schema_version {TRIALS_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TRIAL_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let stop = r
            .stop
            .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .unwrap_or_default();
        w.write_record([
            r.label.clone(),
            r.objective.name().to_string(),
            r.epsilon.to_string(),
            r.lambda.to_string(),
            r.seed.to_string(),
            r.step_size.to_string(),
            r.sigma.to_string(),
            r.epochs.to_string(),
            stop,
            r.selected.to_string(),
            opt(r.train_nll),
            opt(r.train_bpr_mean),
            opt(r.val_nll),
            opt(r.val_bpr_mean),
            opt(r.test_loglik),
            opt(r.test_bpr_mean),
            opt(r.test_bpr_p05),
            opt(r.test_bpr_p50),
            opt(r.test_bpr_p95),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_1d, Split};
    use crate::models::TruncGaussMixture;

    fn row(objective: Objective, val_nll: f64, val_bpr: f64) -> TrialResult {
        TrialResult {
            val_nll: Some(val_nll),
            val_bpr_mean: Some(val_bpr),
            ..TrialResult::blank(&TrainConfig { objective, ..TrainConfig::default() })
        }
    }

    #[test]
    fn selection_rules() {
        let runs = vec![
            row(Objective::Daml, 5.0, 0.70),
            row(Objective::Daml, 3.0, 0.80),
            row(Objective::Daml, 4.0, 0.90),
            TrialResult { error: Some("boom".into()), ..TrialResult::blank(&TrainConfig::default()) },
        ];
        assert_eq!(select_best(Objective::Nll, &runs, None), Some(1));
        assert_eq!(select_best(Objective::Bpr, &runs, None), Some(2));
        assert_eq!(select_best(Objective::Daml, &runs, Some(0.75)), Some(1));
        assert_eq!(select_best(Objective::Daml, &runs, Some(0.85)), Some(2));
        // Nobody qualifies: fall back to the highest BPR.
        assert_eq!(select_best(Objective::Daml, &runs, Some(0.95)), Some(2));
        assert_eq!(select_best(Objective::Nll, &runs[3..], None), None);
    }

    #[test]
    fn epsilon_grid_shape() {
        let g = epsilon_grid(0.8, 1.0, 4);
        let want = [0.84, 0.88, 0.92, 0.96, 1.0];
        assert_eq!(g.len(), 5);
        assert!(g.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12), "{g:?}");
        let g = epsilon_grid(0.6, 0.9, 4);
        assert_eq!(g.len(), 5);
        assert_eq!(epsilon_grid(0.9, 0.9, 4), vec![0.9, 1.0]);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn grid_expands_and_defaults() {
        let base = TrainConfig { seed: 9, ..TrainConfig::default() };
        assert_eq!(SweepGrid::default().configs(&base), vec![base.clone()]);
        let grid = SweepGrid { seeds: vec![1, 2], step_sizes: vec![0.1, 0.01, 0.001], sigmas: vec![] };
        assert_eq!(grid.configs(&base).len(), 6);
    }

    fn small() -> PanelDataset {
        let full = gen_synthetic_1d(4);
        let counts = full.counts().slice(ndarray::s![..24, ..]).to_owned();
        PanelDataset::new(counts, Split::new(0..12, 12..18, 18..24, 24).unwrap()).unwrap()
    }

    fn base() -> TrainConfig {
        TrainConfig {
            k: 5,
            n_samples: 10,
            n_perturbations: 10,
            eval_samples: 10,
            max_epochs: 3,
            step_size: 0.05,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_point_sweep_equals_train() {
        let data = small();
        let factory = || -> Result<Box<dyn GenerativeModel>> { Ok(Box::new(TruncGaussMixture::new(7, 2)?)) };
        let cfg = base();
        let runs = run_sweep(&factory, &data, &cfg, &SweepGrid::default(), None);
        let mut m = TruncGaussMixture::new(7, 2).unwrap();
        initialize(&mut m, &data, &cfg).unwrap();
        let direct = train(&mut m, &data, &cfg, None).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].phi.as_deref(), Some(direct.best.phi.as_slice()));
    }

    #[test]
    fn failures_are_recorded() {
        let data = small();
        let factory = || -> Result<Box<dyn GenerativeModel>> { Err(crate::Error::invalid("no model")) };
        let runs = run_sweep(&factory, &data, &base(), &SweepGrid { seeds: vec![1, 2], ..Default::default() }, None);
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|r| r.result.error.is_some() && r.phi.is_none()));
    }

    #[test]
    fn pareto_with_empty_grid_has_two_models() {
        let data = small();
        let factory = || -> Result<Box<dyn GenerativeModel>> { Ok(Box::new(TruncGaussMixture::new(7, 2)?)) };
        let cfg = ParetoConfig { base: base(), epsilons: Some(vec![]), test_trials: 5, test_samples: 10, ..Default::default() };
        let out = run_pareto(&factory, &data, &cfg).unwrap();
        assert_eq!(out.selected.len(), 2);
        assert!(out.selected.iter().all(|m| m.result.test_bpr_p50.is_some()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        write_trials_csv(&out.trials, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# schema_version 1\nlabel,objective,epsilon"));
        assert_eq!(text.lines().count(), 4);
    }
}
