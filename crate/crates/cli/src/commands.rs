use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use daml_core::data::{abc_demo_table, gen_negbin_panel, gen_synthetic_1d, write_panel_csv, NegBinPanelSpec, PanelDataset, SplitName};
use daml_core::eval::{evaluate_baseline, evaluate_model, BaselineRanker};
use daml_core::models::checkpoint::ParamFile;
use daml_core::models::{AbcDemoModel, GenerativeModel, ModelSpec};
use daml_core::rng::{domain, StreamKey};
use daml_core::training::{
    checkpoint_file, initialize, run_pareto, select_best, train as train_model, write_metrics_csv, write_trials_csv,
    TrainConfig, TrainState, TrialResult, TRIALS_SCHEMA_VERSION,
};
use serde::Serialize;

use crate::config::{read_config, DataConfig, EvalRunConfig, ParetoRunConfig, TrainRunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::{BaselineArg, DemoArgs, EvalArgs, GenArgs, Generator, GlobalOpts, ParetoArgs, SplitArg, TrainArgs};

const EVAL_SCHEMA_VERSION: u32 = 1;
const DEMO_SCHEMA_VERSION: u32 = 1;

fn split_stream(split: SplitName) -> u64 {
    match split {
        SplitName::Train => 0,
        SplitName::Val => 1,
        SplitName::Test => 2,
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn model_meta(spec: &ModelSpec) -> String {
    serde_json::to_string(spec).expect("model specs serialize")
}

fn build_model(spec: &ModelSpec, data: &PanelDataset) -> CliResult<Box<dyn GenerativeModel>> {
    Ok(spec.build(data.n_sites(), data.n_features())?)
}

// ---------------------------------------------------------------------------

pub fn demo_appb(args: &DemoArgs) -> CliResult<()> {
    let rows = abc_demo_table(&args.ks, args.trials, args.samples, args.seed)?;
    let mut counters = [0usize; 3];
    let sites: Vec<String> = AbcDemoModel::SITES
        .iter()
        .map(|t| {
            let label = t.label();
            let slot = &mut counters[(label as u8 - b'A') as usize];
            *slot += 1;
            format!("freq_{label}{slot}")
        })
        .collect();
    let mut text = format!("# schema_version {DEMO_SCHEMA_VERSION}\n");
    text.push_str("estimator,k,bpr_mean,bpr_std_err");
    for s in &sites {
        text.push(',');
        text.push_str(s);
    }
    text.push('\n');
    for r in &rows {
        text.push_str(&format!("{},{},{},{}", r.estimator.name(), r.k, r.bpr_mean, r.bpr_std_err));
        for f in &r.selection_freq {
            text.push_str(&format!(",{f}"));
        }
        text.push('\n');
    }
    write_text(args.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------

struct RunFiles {
    metrics: PathBuf,
    best: PathBuf,
    state: PathBuf,
}

impl RunFiles {
    fn in_dir(dir: &Path) -> Self {
        RunFiles { metrics: dir.join("metrics.csv"), best: dir.join("best.params"), state: dir.join("state.params") }
    }
}

/// Trains one configuration and writes its metrics log and parameter files.
fn train_one(
    spec: &ModelSpec,
    data: &PanelDataset,
    cfg: &TrainConfig,
    resume: Option<&Path>,
    files: &RunFiles,
    timing: bool,
) -> CliResult<(TrialResult, Vec<f64>)> {
    let mut model = build_model(spec, data)?;
    let state = match resume {
        Some(path) => {
            let file = ParamFile::read(path)?;
            check_model_meta(&file, spec, path)?;
            let state = TrainState::from_param_file(&file, model.as_mut())?;
            if state.optimizer_kind() != cfg.optimizer {
                return Err(CliError::config("resume state uses a different optimizer"));
            }
            Some(state)
        }
        None => {
            initialize(model.as_mut(), data, cfg)?;
            None
        }
    };
    let out = train_model(model.as_mut(), data, cfg, state)?;
    write_metrics_csv(&out.history, &files.metrics, timing, resume.is_some())?;
    let meta = model_meta(spec);
    checkpoint_file(model.as_ref(), &out.best, &cfg.label())?.with_meta("model", &meta).write(&files.best)?;
    out.state.to_param_file(model.as_ref())?.with_meta("model", &meta).write(&files.state)?;
    Ok((TrialResult::from_outcome(cfg, &out), out.best.phi))
}

fn check_model_meta(file: &ParamFile, spec: &ModelSpec, path: &Path) -> CliResult<()> {
    if let Some(recorded) = file.meta.get("model") {
        let recorded: ModelSpec = serde_json::from_str(recorded)
            .map_err(|e| CliError::config(format!("{}: bad model record: {e}", path.display())))?;
        if &recorded != spec {
            return Err(CliError::config(format!("{} was written for a different model", path.display())));
        }
    }
    Ok(())
}

fn fill_test_metrics(
    row: &mut TrialResult,
    model: &dyn GenerativeModel,
    data: &PanelDataset,
    k: usize,
    n_samples: usize,
    n_trials: usize,
    seed: u64,
) -> CliResult<Vec<f64>> {
    let test = data.split().range(SplitName::Test);
    if test.is_empty() || n_trials == 0 || n_samples == 0 {
        return Ok(Vec::new());
    }
    let key = StreamKey::new(seed).child(domain::EVAL).child(split_stream(SplitName::Test));
    let rep = evaluate_model(model, data, test, k, n_samples, n_trials, key)?;
    row.test_loglik = rep.loglik;
    row.test_bpr_mean = Some(rep.bpr_mean);
    row.test_bpr_p05 = Some(rep.bpr_p05);
    row.test_bpr_p50 = Some(rep.bpr_p50);
    row.test_bpr_p95 = Some(rep.bpr_p95);
    Ok(rep.bpr_trials)
}

pub fn train(args: &TrainArgs, global: &GlobalOpts) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: TrainRunConfig = read_config(&args.config, "train")?;
    if let Some(d) = &args.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    // A seed or step size given on the command line replaces the grid over it.
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.grid.seeds.clear();
    }
    if let Some(s) = args.step_size {
        cfg.train.step_size = s;
        cfg.grid.step_sizes.clear();
    }
    if let Some(e) = args.max_epochs {
        cfg.train.max_epochs = e;
    }
    let out_dir = cfg.out_dir.clone().ok_or_else(|| CliError::config("no output directory (set out_dir or --out-dir)"))?;

    let data = cfg.data.load()?;
    let configs = cfg.grid.configs(&cfg.train);
    for c in &configs {
        c.validate(data.n_sites())?;
    }
    build_model(&cfg.model, &data)?;
    if args.resume.is_some() && configs.len() != 1 {
        return Err(CliError::config("--resume needs a single run, not a grid"));
    }
    create_dir(&out_dir)?;

    let timing = !global.no_timing;
    let single = configs.len() == 1;
    let mut rows = Vec::with_capacity(configs.len());
    let mut phis = Vec::with_capacity(configs.len());
    let mut outputs = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let dir = if single { out_dir.clone() } else { out_dir.join(format!("run_{i:03}")) };
        create_dir(&dir)?;
        let files = RunFiles::in_dir(&dir);
        log::info!("training {} (seed {}, step {}) -> {}", c.label(), c.seed, c.step_size, dir.display());
        match train_one(&cfg.model, &data, c, args.resume.as_deref(), &files, timing) {
            Ok((row, phi)) => {
                rows.push(row);
                phis.push(Some(phi));
            }
            // A grid keeps going past a failed point, as a sweep does.
            Err(CliError::Numerical(msg)) if !single => {
                log::warn!("run {i} failed: {msg}");
                rows.push(TrialResult::failed(c, msg));
                phis.push(None);
            }
            Err(e) => return Err(e),
        }
        let rel = |p: &Path| p.strip_prefix(&out_dir).unwrap_or(p).display().to_string();
        outputs.extend([rel(&files.metrics), rel(&files.best), rel(&files.state)]);
    }

    let pick = select_best(cfg.train.objective, &rows, None)
        .ok_or_else(|| CliError::Numerical("every run failed".to_string()))?;
    rows[pick].selected = true;
    let mut model = build_model(&cfg.model, &data)?;
    model.set_params(phis[pick].as_deref().expect("selected runs succeeded"))?;
    fill_test_metrics(
        &mut rows[pick],
        model.as_ref(),
        &data,
        cfg.train.k,
        cfg.test_samples,
        cfg.test_trials,
        cfg.train.seed,
    )?;
    let trials_path = out_dir.join("trials.csv");
    write_trials_csv(&rows, &trials_path)?;
    outputs.push("trials.csv".to_string());

    let seeds = configs.iter().map(|c| c.seed).collect();
    let mut manifest = Manifest::new("train", &cfg, seeds);
    manifest.resumed_from = args.resume.as_ref().map(|p| p.display().to_string());
    manifest.outputs = outputs;
    manifest.finish(started, timing, &out_dir.join("manifest.json"))
}

// ---------------------------------------------------------------------------

fn parse_epsilons(text: &str) -> CliResult<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| CliError::config(format!("bad epsilon '{t}'")))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(CliError::config(format!("epsilon {v} outside [0, 1]")))
            }
        })
        .collect()
}

pub fn pareto(args: &ParetoArgs, global: &GlobalOpts) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: ParetoRunConfig = read_config(&args.config, "pareto")?;
    if let Some(d) = &args.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if let Some(s) = args.seed {
        cfg.pareto.base.seed = s;
    }
    if let Some(e) = &args.epsilons {
        cfg.pareto.epsilons = Some(parse_epsilons(e)?);
    }
    if let Some(t) = args.test_trials {
        cfg.pareto.test_trials = t;
    }
    if let Some(m) = args.test_samples {
        cfg.pareto.test_samples = m;
    }
    if let Some(eps) = &cfg.pareto.epsilons {
        if let Some(bad) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(CliError::config(format!("epsilon {bad} outside [0, 1]")));
        }
    }
    let out_dir = cfg.out_dir.clone().ok_or_else(|| CliError::config("no output directory (set out_dir or --out-dir)"))?;
    let data = cfg.data.load()?;
    for c in cfg.pareto.grid.configs(&cfg.pareto.base) {
        c.validate(data.n_sites())?;
    }
    build_model(&cfg.model, &data)?;
    create_dir(&out_dir)?;

    let factory = || cfg.model.build(data.n_sites(), data.n_features());
    let outcome = run_pareto(&factory, &data, &cfg.pareto)?;
    write_trials_csv(&outcome.trials, &out_dir.join("trials.csv"))?;
    let mut outputs = vec!["trials.csv".to_string()];

    let mut density = format!("# schema_version {TRIALS_SCHEMA_VERSION}\nlabel,trial,test_bpr_mean\n");
    let meta = model_meta(&cfg.model);
    for sel in &outcome.selected {
        let mut model = factory()?;
        model.set_params(&sel.phi)?;
        let r = &sel.result;
        let name = format!("{}.params", r.label);
        ParamFile::from_model(model.as_ref())
            .with_meta("label", &r.label)
            .with_meta("model", &meta)
            .with_meta("objective", r.objective.name())
            .with_meta("epsilon", r.epsilon)
            .with_meta("lambda", r.lambda)
            .with_meta("seed", r.seed)
            .write(&out_dir.join(&name))?;
        outputs.push(name);
        for (i, b) in sel.test_bpr_trials.iter().enumerate() {
            density.push_str(&format!("{},{i},{b}\n", r.label));
        }
    }
    let density_path = out_dir.join("test_bpr_trials.csv");
    std::fs::write(&density_path, density).map_err(|e| CliError::io(&density_path, e))?;
    outputs.push("test_bpr_trials.csv".to_string());

    let seeds = if cfg.pareto.grid.seeds.is_empty() { vec![cfg.pareto.base.seed] } else { cfg.pareto.grid.seeds.clone() };
    let mut manifest = Manifest::new("pareto", &cfg, seeds);
    manifest.outputs = outputs;
    manifest.finish(started, !global.no_timing, &out_dir.join("manifest.json"))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalOutput<'a> {
    schema_version: u32,
    config: &'a EvalRunConfig,
    report: daml_core::eval::EvalReport,
}

pub fn evaluate(args: &EvalArgs) -> CliResult<()> {
    let mut cfg: EvalRunConfig = match (&args.config, &args.data_csv) {
        (Some(path), _) => read_config(path, "evaluate")?,
        (None, Some(_)) => serde_json::from_value(serde_json::json!({"data": {"source": "csv", "path": ""}}))
            .expect("minimal config parses"),
        (None, None) => return Err(CliError::config("evaluate needs --config or --data-csv")),
    };
    if let Some(p) = &args.data_csv {
        cfg.data = match cfg.data {
            DataConfig::Csv { train_frac, val_frac, standardize, lags, .. } => {
                DataConfig::Csv { path: p.clone(), train_frac, val_frac, standardize, lags }
            }
            _ => serde_json::from_value(serde_json::json!({"source": "csv", "path": p})).expect("csv config parses"),
        };
    }
    if let Some(c) = &args.checkpoint {
        cfg.checkpoint = Some(c.clone());
        cfg.baseline = None;
    }
    if let Some(b) = args.baseline {
        cfg.baseline = Some(match b {
            BaselineArg::Chance => BaselineRanker::Chance,
            BaselineArg::HistoricalAverage => BaselineRanker::HistoricalAverage,
        });
        cfg.checkpoint = None;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(m) = args.samples {
        cfg.n_samples = m;
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    if let Some(s) = args.split {
        cfg.split = match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }

    let data = cfg.data.load()?;
    let periods = data.split().range(cfg.split);
    if periods.is_empty() {
        return Err(CliError::config(format!("the {:?} split is empty", cfg.split)));
    }
    let key = StreamKey::new(cfg.seed).child(domain::EVAL).child(split_stream(cfg.split));
    let report = match (&cfg.checkpoint, cfg.baseline) {
        (Some(path), None) => {
            let file = ParamFile::read(path)?;
            let spec = match (file.meta.get("model"), &cfg.model) {
                (_, Some(spec)) => {
                    check_model_meta(&file, spec, path)?;
                    spec.clone()
                }
                (Some(m), None) => serde_json::from_str(m)
                    .map_err(|e| CliError::config(format!("{}: bad model record: {e}", path.display())))?,
                (None, None) => return Err(CliError::config("checkpoint does not record its model; set \"model\"")),
            };
            let mut model = build_model(&spec, &data)?;
            file.load_into(model.as_mut())?;
            evaluate_model(model.as_ref(), &data, periods, cfg.k, cfg.n_samples, cfg.n_trials, key)?
        }
        (None, Some(ranker)) => evaluate_baseline(ranker, &data, periods, cfg.k, cfg.n_trials, key)?,
        _ => return Err(CliError::config("give exactly one of a checkpoint or a baseline")),
    };
    let out = EvalOutput { schema_version: EVAL_SCHEMA_VERSION, config: &cfg, report };
    let text = serde_json::to_string_pretty(&out).map_err(|e| CliError::config(e.to_string()))? + "\n";
    write_text(args.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------

pub fn gen_data(args: &GenArgs) -> CliResult<()> {
    let panel = match args.generator {
        Generator::Synthetic1d => {
            if args.sites.is_some() || args.periods.is_some() || args.features.is_some() || args.q_low.is_some() || args.q_high.is_some() {
                return Err(CliError::config("the synthetic-1d generator has a fixed shape"));
            }
            gen_synthetic_1d(args.seed)
        }
        Generator::Negbin => {
            let d = NegBinPanelSpec::default();
            gen_negbin_panel(NegBinPanelSpec {
                n_sites: args.sites.unwrap_or(d.n_sites),
                n_periods: args.periods.unwrap_or(d.n_periods),
                n_features: args.features.unwrap_or(d.n_features),
                seed: args.seed,
                q_range: (args.q_low.unwrap_or(d.q_range.0), args.q_high.unwrap_or(d.q_range.1)),
            })?
        }
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_panel_csv(&panel, &args.out)?;
    Ok(())
}
