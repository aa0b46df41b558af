use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Objective, OptimizerKind, TrainConfig};
use super::objectives::evaluate_objective;
use super::optimizer::Optimizer;
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::eval::{split_metrics, SplitMetrics};
use crate::models::checkpoint::ParamFile;
use crate::models::{init_params, GenerativeModel};
use crate::rng::{domain, StreamKey};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One row of the training log. Evaluation fields are `None` on epochs
/// without an evaluation; `objective` and `grad_norm` are `None` at epoch 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective at the start of the epoch, before the update.
    pub objective: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Per-period means, evaluated after the update.
    pub train_nll: Option<f64>,
    pub train_bpr_mean: Option<f64>,
    pub val_nll: Option<f64>,
    pub val_bpr_mean: Option<f64>,
    pub val_objective: Option<f64>,
    pub wall_ms: u64,
}

/// Parameters and metrics at one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub phi: Vec<f64>,
    pub epoch: usize,
    pub train_nll: f64,
    pub train_bpr_mean: f64,
    pub val_nll: f64,
    pub val_bpr_mean: f64,
    /// Selection score; lower is better.
    pub val_objective: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub phi: Vec<f64>,
    pub epoch: usize,
    pub optimizer: Optimizer,
    pub best: Checkpoint,
    pub stale_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    GradientTolerance,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Random initialization around the model's data-informed centre.
pub fn initialize(model: &mut dyn GenerativeModel, data: &PanelDataset, cfg: &TrainConfig) -> Result<()> {
    let values = data.values_in(data.split().train.clone());
    init_params(model, &values, cfg.init_scale, StreamKey::new(cfg.seed).child(domain::INIT))
}

struct Evaluation {
    train: SplitMetrics,
    val: SplitMetrics,
}

impl Evaluation {
    fn run(model: &dyn GenerativeModel, data: &PanelDataset, cfg: &TrainConfig) -> Result<Self> {
        let key = StreamKey::new(cfg.seed).child(domain::EVAL);
        let split = data.split();
        Ok(Evaluation {
            train: split_metrics(model, data, split.train.clone(), cfg.k, cfg.eval_samples, key.child(0))?,
            val: split_metrics(model, data, split.val.clone(), cfg.k, cfg.eval_samples, key.child(1))?,
        })
    }

    /// Validation metrics, or training metrics when there is no validation split.
    fn selection(&self) -> &SplitMetrics {
        if self.val.is_empty() {
            &self.train
        } else {
            &self.val
        }
    }

    fn score(&self, cfg: &TrainConfig) -> f64 {
        let m = self.selection();
        match cfg.objective {
            Objective::Nll => m.nll_mean(),
            Objective::Bpr => -m.bpr_mean(),
            Objective::Daml => {
                let total: f64 = m
                    .nll
                    .iter()
                    .zip(&m.bpr)
                    .map(|(nll, bpr)| nll + cfg.lambda * (cfg.epsilon - bpr).max(0.0))
                    .sum();
                total / m.len() as f64
            }
        }
    }

    fn checkpoint(&self, phi: &[f64], epoch: usize, cfg: &TrainConfig) -> Checkpoint {
        let sel = self.selection();
        Checkpoint {
            phi: phi.to_vec(),
            epoch,
            train_nll: self.train.nll_mean(),
            train_bpr_mean: self.train.bpr_mean(),
            val_nll: sel.nll_mean(),
            val_bpr_mean: sel.bpr_mean(),
            val_objective: self.score(cfg),
        }
    }
}

fn eval_record(epoch: usize, ev: &Evaluation, cfg: &TrainConfig, wall_ms: u64) -> EpochRecord {
    let val = (!ev.val.is_empty()).then_some(&ev.val);
    EpochRecord {
        epoch,
        objective: None,
        grad_norm: None,
        train_nll: Some(ev.train.nll_mean()),
        train_bpr_mean: Some(ev.train.bpr_mean()),
        val_nll: val.map(SplitMetrics::nll_mean),
        val_bpr_mean: val.map(SplitMetrics::bpr_mean),
        val_objective: Some(ev.score(cfg)),
        wall_ms,
    }
}

/// Runs the configured objective with full-batch gradients over the
/// training periods. Without `resume`, the model's current parameters are
/// the starting point and are evaluated as epoch 0. On return the model
/// holds the best checkpoint's parameters.
pub fn train(
    model: &mut dyn GenerativeModel,
    data: &PanelDataset,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate(data.n_sites())?;
    if model.n_sites() != data.n_sites() {
        return Err(Error::shape("model and data have different site counts"));
    }
    let started = Instant::now();
    let mut history = Vec::new();
    let mut state = match resume {
        Some(state) => {
            if state.phi.len() != model.n_params() {
                return Err(Error::shape("resume state does not match the model"));
            }
            model.set_params(&state.phi)?;
            state
        }
        None => {
            let phi = model.params().to_vec();
            let ev = Evaluation::run(model, data, cfg)?;
            history.push(eval_record(0, &ev, cfg, started.elapsed().as_millis() as u64));
            TrainState {
                best: ev.checkpoint(&phi, 0, cfg),
                optimizer: Optimizer::new(cfg.optimizer, cfg.step_size, phi.len()),
                phi,
                epoch: 0,
                stale_evals: 0,
            }
        }
    };

    let mut stop = StopReason::MaxEpochs;
    let train_periods = data.split().train.clone();
    while state.epoch < cfg.max_epochs {
        let epoch = state.epoch + 1;
        let epoch_key = StreamKey::new(cfg.seed).child(domain::EPOCH).child(epoch as u64);
        let obj = evaluate_objective(model, data, train_periods.clone(), cfg, epoch_key)?;
        let grad_norm = obj.grad_norm();
        let converged = grad_norm < cfg.grad_tol;
        if !converged {
            state.optimizer.step(&mut state.phi, &obj.grad)?;
            model.set_params(&state.phi)?;
        }
        state.epoch = epoch;

        let evaluate = converged || epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
        let mut record = if evaluate {
            let ev = Evaluation::run(model, data, cfg)?;
            let candidate = ev.checkpoint(&state.phi, epoch, cfg);
            if candidate.val_objective < state.best.val_objective {
                state.best = candidate;
                state.stale_evals = 0;
            } else {
                state.stale_evals += 1;
            }
            eval_record(epoch, &ev, cfg, 0)
        } else {
            EpochRecord {
                epoch,
                objective: None,
                grad_norm: None,
                train_nll: None,
                train_bpr_mean: None,
                val_nll: None,
                val_bpr_mean: None,
                val_objective: None,
                wall_ms: 0,
            }
        };
        record.objective = Some(obj.value);
        record.grad_norm = Some(grad_norm);
        record.wall_ms = started.elapsed().as_millis() as u64;
        log::debug!("epoch {epoch}: objective {:.6} grad {:.3e}", obj.value, grad_norm);
        history.push(record);

        if converged {
            stop = StopReason::GradientTolerance;
            break;
        }
        if cfg.patience > 0 && state.stale_evals >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    model.set_params(&state.best.phi)?;
    Ok(TrainOutcome { best: state.best.clone(), state, history, stop })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the log as CSV. `include_timing = false` blanks `wall_ms` so
/// reruns produce identical bytes.
pub fn write_metrics_csv(history: &[EpochRecord], path: &Path, include_timing: bool, append: bool) -> Result<()> {
    let exists = append && path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut out = std::io::BufWriter::new(file);
    if !exists {
        writeln!(out, "# schema_version {METRICS_SCHEMA_VERSION}")?;
        writeln!(out, "epoch,objective,train_nll,train_bpr_mean,val_nll,val_bpr_mean,grad_norm,wall_ms")?;
    }
    for r in history {
        let wall = if include_timing { r.wall_ms.to_string() } else { String::new() };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            opt(r.objective),
            opt(r.train_nll),
            opt(r.train_bpr_mean),
            opt(r.val_nll),
            opt(r.val_bpr_mean),
            opt(r.grad_norm),
            wall
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Parameter file of a checkpoint, readable by [`ParamFile::load_into`].
pub fn checkpoint_file(model: &dyn GenerativeModel, ck: &Checkpoint, label: &str) -> Result<ParamFile> {
    let mut scratch = ParamFile::from_model(model);
    let mut offset = 0;
    for arr in &mut scratch.arrays {
        let len = arr.values.len();
        arr.values = ck.phi[offset..offset + len].to_vec();
        offset += len;
    }
    if offset != ck.phi.len() {
        return Err(Error::shape("checkpoint does not match the model"));
    }
    Ok(scratch
        .with_meta("label", label)
        .with_meta("epoch", ck.epoch)
        .with_meta("train_nll", ck.train_nll)
        .with_meta("train_bpr_mean", ck.train_bpr_mean)
        .with_meta("val_nll", ck.val_nll)
        .with_meta("val_bpr_mean", ck.val_bpr_mean)
        .with_meta("val_objective", ck.val_objective))
}

fn checkpoint_from(file: &ParamFile, phi: Vec<f64>, prefix: &str) -> Result<Checkpoint> {
    let get = |k: &str| -> Result<f64> {
        file.meta_parse(&format!("{prefix}{k}"))
            .ok_or_else(|| Error::invalid(format!("state file lacks '{prefix}{k}'")))
    };
    Ok(Checkpoint {
        phi,
        epoch: get("epoch")? as usize,
        train_nll: get("train_nll")?,
        train_bpr_mean: get("train_bpr_mean")?,
        val_nll: get("val_nll")?,
        val_bpr_mean: get("val_bpr_mean")?,
        val_objective: get("val_objective")?,
    })
}

impl TrainState {
    /// Current parameters in the model's block layout, with the optimizer
    /// moments and the best checkpoint as extra arrays.
    pub fn to_param_file(&self, model: &dyn GenerativeModel) -> Result<ParamFile> {
        let current = Checkpoint { phi: self.phi.clone(), ..self.best.clone() };
        let mut file = checkpoint_file(model, &current, "state")?;
        file.meta.retain(|k, _| k == "label");
        file = file.with_meta("epoch", self.epoch).with_meta("stale_evals", self.stale_evals);
        let b = &self.best;
        file = file
            .with_meta("best_epoch", b.epoch)
            .with_meta("best_train_nll", b.train_nll)
            .with_meta("best_train_bpr_mean", b.train_bpr_mean)
            .with_meta("best_val_nll", b.val_nll)
            .with_meta("best_val_bpr_mean", b.val_bpr_mean)
            .with_meta("best_val_objective", b.val_objective);
        file.push_array("best_phi", &b.phi);
        match &self.optimizer {
            Optimizer::Sgd { step_size } => {
                file = file.with_meta("optimizer", "sgd").with_meta("step_size", step_size);
            }
            Optimizer::Adam { step_size, m, v, t } => {
                file = file
                    .with_meta("optimizer", "adam")
                    .with_meta("step_size", step_size)
                    .with_meta("adam_t", t);
                file.push_array("adam_m", m);
                file.push_array("adam_v", v);
            }
        }
        Ok(file)
    }

    pub fn from_param_file(file: &ParamFile, model: &mut dyn GenerativeModel) -> Result<Self> {
        file.load_into(model)?;
        let phi = model.params().to_vec();
        let array = |name: &str| -> Result<Vec<f64>> {
            file.array(name)
                .map(|a| a.values.clone())
                .ok_or_else(|| Error::invalid(format!("state file lacks array '{name}'")))
        };
        let meta = |k: &str| -> Result<String> {
            file.meta.get(k).cloned().ok_or_else(|| Error::invalid(format!("state file lacks '{k}'")))
        };
        let parse = |k: &str| -> Result<f64> {
            meta(k)?.parse().map_err(|_| Error::invalid(format!("state file has a bad '{k}'")))
        };
        let step_size = parse("step_size")?;
        let optimizer = match meta("optimizer")?.as_str() {
            "sgd" => Optimizer::Sgd { step_size },
            "adam" => Optimizer::Adam { step_size, m: array("adam_m")?, v: array("adam_v")?, t: parse("adam_t")? as u64 },
            other => return Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        };
        let best = checkpoint_from(file, array("best_phi")?, "best_")?;
        Ok(TrainState { phi, epoch: parse("epoch")? as usize, optimizer, best, stale_evals: parse("stale_evals")? as usize })
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }
}

/// Reads a checkpoint's metrics back from its parameter file.
pub fn read_checkpoint(file: &ParamFile, model: &mut dyn GenerativeModel) -> Result<Checkpoint> {
    file.load_into(model)?;
    checkpoint_from(file, model.params().to_vec(), "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_1d, Split};
    use crate::models::TruncGaussMixture;
    use std::path::Path;

    fn panel() -> PanelDataset {
        let full = gen_synthetic_1d(2);
        let counts = full.counts().slice(ndarray::s![..40, ..]).to_owned();
        PanelDataset::new(counts, Split::new(0..30, 30..40, 40..40, 40).unwrap()).unwrap()
    }

    fn cfg(objective: Objective, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            objective,
            k: 5,
            epsilon: 0.95,
            n_samples: 20,
            n_perturbations: 20,
            eval_samples: 20,
            max_epochs,
            step_size: 0.05,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn fresh(data: &PanelDataset, c: &TrainConfig) -> TruncGaussMixture {
        let mut m = TruncGaussMixture::new(7, 2).unwrap();
        initialize(&mut m, data, c).unwrap();
        m
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = panel();
        let c = cfg(Objective::Nll, 0);
        let mut m = fresh(&data, &c);
        let init = m.params().to_vec();
        let out = train(&mut m, &data, &c, None).unwrap();
        assert_eq!(out.best.phi, init);
        assert_eq!(out.history.len(), 1);
        assert_eq!(m.params(), init.as_slice());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let data = panel();
        let c = cfg(Objective::Daml, 8);
        let mut a = fresh(&data, &c);
        let full = train(&mut a, &data, &c, None).unwrap();
        let mut b = fresh(&data, &c);
        let again = train(&mut b, &data, &c, None).unwrap();
        assert_eq!(full.state, again.state);

        let mut first = fresh(&data, &c);
        let half = train(&mut first, &data, &TrainConfig { max_epochs: 4, ..c.clone() }, None).unwrap();
        let file = half.state.to_param_file(&first).unwrap();
        let text = file.render();
        let parsed = ParamFile::parse(&text, Path::new("mem")).unwrap();
        let mut resumed_model = TruncGaussMixture::new(7, 2).unwrap();
        let state = TrainState::from_param_file(&parsed, &mut resumed_model).unwrap();
        assert_eq!(state, half.state);
        let rest = train(&mut resumed_model, &data, &c, Some(state)).unwrap();
        assert_eq!(rest.state, full.state);
        let strip = |h: &[EpochRecord]| h.iter().map(|r| EpochRecord { wall_ms: 0, ..r.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&full.history[5..]), strip(&rest.history));
    }

    #[test]
    fn nll_best_so_far_never_worsens() {
        let data = panel();
        let c = cfg(Objective::Nll, 30);
        let mut m = fresh(&data, &c);
        let out = train(&mut m, &data, &c, None).unwrap();
        let first = out.history[0].train_nll.unwrap();
        let last = out.history.last().unwrap().train_nll.unwrap();
        assert!(last < first, "{first} -> {last}");
        assert!(out.best.val_objective <= out.history[0].val_objective.unwrap());
    }

    #[test]
    fn metrics_csv_without_timing_is_stable() {
        let data = panel();
        let c = cfg(Objective::Bpr, 3);
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for i in 0..2 {
            let mut m = fresh(&data, &c);
            let out = train(&mut m, &data, &c, None).unwrap();
            let path = dir.path().join(format!("m{i}.csv"));
            write_metrics_csv(&out.history, &path, false, false).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        let text = String::from_utf8(bytes.pop().unwrap()).unwrap();
        assert!(text.starts_with("# schema_version 1\nepoch,objective,"));
        assert_eq!(text.lines().count(), 2 + 4);
    }
}
