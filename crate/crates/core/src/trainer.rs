//! Alternating discriminator / model optimization.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroupSelector, TabularDataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, deo, delta_dp, GroupedPredictions};
use crate::model::{
    dbrf_objective, discriminator_loss_grad, encode, predict_ideal, sample_fake, ArchConfig, Batch, BatchNoise,
    Hyperparams, LossBreakdown, ModelParams, TcMode, TermMask,
};
use crate::numeric::checkpoint::{Checkpoint, NamedTensor};
use crate::numeric::{adam_step, AdamConfig, Matrix, OptimizerState};
use crate::parallel::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Evaluations without improvement of the epoch-mean total loss.
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_disc: f64,
    pub disc_steps_per_model_step: usize,
    pub seed: u64,
    /// Evaluate every this many epochs; 0 evaluates only after the last.
    pub eval_every: usize,
    pub tc_mode: TcMode,
    pub early_stopping: Option<EarlyStopping>,
    /// Not serialized: results do not depend on it.
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr_model: 1e-3,
            lr_disc: 1e-3,
            disc_steps_per_model_step: 1,
            seed: 0,
            eval_every: 1,
            tc_mode: TcMode::Prior,
            early_stopping: None,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training rows",
                self.batch_size, n_train
            )));
        }
        AdamConfig::default().with_learning_rate(self.lr_model).validate()?;
        AdamConfig::default().with_learning_rate(self.lr_disc).validate()?;
        Ok(())
    }
}

/// The parts of a dataset a training procedure may read: features, observed
/// labels and sensitive bits. Ideal labels are deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub x: Matrix,
    pub y: Vec<u8>,
    /// `n x k` sensitive bits.
    pub a: Matrix,
}

impl TrainView {
    pub fn new(data: &TabularDataset) -> Self {
        let k = data.n_sensitive();
        let a = data.sensitive_bits().iter().map(|&b| b as f64).collect();
        Self {
            x: data.features().clone(),
            y: data.observed_labels().to_vec(),
            a: Matrix::from_vec(data.len(), k, a).expect("sized"),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i] as f64).collect(),
            a: self.a.select_rows(idx),
            w_b: None,
        }
    }
}

/// Mutable training state; everything needed to resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt_model: OptimizerState,
    pub opt_disc: OptimizerState,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
    pub steps_done: u64,
}

/// Serializable part of [`TrainState`] that is not a parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    opt_model: OptimizerState,
    opt_disc: OptimizerState,
    rng_seed: String,
    rng_stream: u64,
    /// Decimal string; word positions exceed `u64`.
    rng_word_pos: String,
    epochs_done: usize,
    steps_done: u64,
    arch: ArchConfig,
    onehot: Vec<bool>,
    sensitive_dim: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Result<Self> {
        let lens = |t: Vec<&[f64]>| t.iter().map(|s| s.len()).collect::<Vec<_>>();
        let opt_model = OptimizerState::new(
            AdamConfig::default().with_learning_rate(config.lr_model),
            &lens(params.model_tensors()),
        )?;
        let opt_disc = OptimizerState::new(
            AdamConfig::default().with_learning_rate(config.lr_disc),
            &lens(params.disc_tensors()),
        )?;
        Ok(Self {
            params,
            opt_model,
            opt_disc,
            // Offset so the training stream differs from the initialization stream.
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
            epochs_done: 0,
            steps_done: 0,
        })
    }

    /// Fresh parameters initialized from `config.seed`.
    pub fn init(data: &TabularDataset, arch: ArchConfig, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::new(data.column_kinds(), data.n_sensitive(), arch, &mut rng)?;
        Self::new(params, config)
    }

    pub fn to_checkpoint<C: Serialize + serde::de::DeserializeOwned>(&self, config: C) -> Result<Checkpoint<C>> {
        let resume = ResumeState {
            opt_model: self.opt_model.clone(),
            opt_disc: self.opt_disc.clone(),
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            epochs_done: self.epochs_done,
            steps_done: self.steps_done,
            arch: self.params.arch,
            onehot: self.params.onehot.clone(),
            sensitive_dim: self.params.sensitive_dim,
        };
        let mut ck = Checkpoint::new(config, self.params.named_tensors());
        ck.state = Some(serde_json::to_value(resume)?);
        Ok(ck)
    }

    pub fn from_checkpoint<C: Serialize + serde::de::DeserializeOwned>(ck: &Checkpoint<C>) -> Result<Self> {
        let state = ck
            .state
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?;
        let r: ResumeState = serde_json::from_value(state)?;
        let params = params_from_tensors(r.arch, r.onehot.clone(), r.sensitive_dim, &ck.tensors)?;
        let mut rng = ChaCha8Rng::from_seed(parse_seed(&r.rng_seed)?);
        rng.set_stream(r.rng_stream);
        rng.set_word_pos(
            r.rng_word_pos
                .parse()
                .map_err(|_| Error::Checkpoint("bad rng position".into()))?,
        );
        Ok(Self {
            params,
            opt_model: r.opt_model,
            opt_disc: r.opt_disc,
            rng,
            epochs_done: r.epochs_done,
            steps_done: r.steps_done,
        })
    }
}

fn parse_seed(s: &str) -> Result<[u8; 32]> {
    let bytes = hex::decode(s).map_err(|_| Error::Checkpoint("bad rng seed".into()))?;
    bytes.try_into().map_err(|_| Error::Checkpoint("bad rng seed length".into()))
}

/// Rebuilds model parameters of the given architecture from named tensors.
pub fn params_from_tensors(
    arch: ArchConfig,
    onehot: Vec<bool>,
    sensitive_dim: usize,
    tensors: &[NamedTensor],
) -> Result<ModelParams> {
    let kinds: Vec<_> = onehot
        .iter()
        .map(|&h| {
            if h {
                crate::data::ColumnKind::OneHot
            } else {
                crate::data::ColumnKind::Continuous
            }
        })
        .collect();
    let mut params = ModelParams::new(&kinds, sensitive_dim, arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    params.load_named_tensors(tensors)?;
    Ok(params)
}

/// Losses observed during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Mean over the discriminator updates of this step, when any ran.
    pub disc_loss: Option<f64>,
}

/// One step: discriminator update(s) against the current encoder, then one
/// model update with the discriminator frozen.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    hyper: &Hyperparams,
    mask: TermMask,
    config: &TrainConfig,
) -> Result<StepReport> {
    let noise = BatchNoise::sample(&state.params, batch.len(), &mut state.rng);
    let disc_loss = discriminator_phase(state, batch, &noise, config)?;
    let loss = model_phase(state, batch, &noise, hyper, mask, config.exec)?;
    Ok(StepReport { loss, disc_loss })
}

/// Discriminator updates on encoder samples drawn with `noise`. Returns the
/// mean discriminator loss, or `None` when no update is configured.
pub fn discriminator_phase(
    state: &mut TrainState,
    batch: &Batch,
    noise: &BatchNoise,
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let steps = config.disc_steps_per_model_step;
    if steps == 0 {
        return Ok(None);
    }
    let real = encode(&state.params, &batch.x, &noise.eps_z, &noise.eps_b)?;
    let mut sum = 0.0;
    for _ in 0..steps {
        let (fz, fb) = sample_fake(config.tc_mode, &real, &mut state.rng);
        let (dl, g) = discriminator_loss_grad(&state.params.discriminator, &real, &fz, &fb, true)?;
        let g = g.expect("gradient requested");
        adam_step(&mut state.params.disc_tensors_mut(), &g.tensors(), &mut state.opt_disc)?;
        sum += dl;
    }
    Ok(Some(sum / steps as f64))
}

/// One model update with the discriminator frozen; `w_b` comes from the
/// current b-head.
pub fn model_phase(
    state: &mut TrainState,
    batch: &Batch,
    noise: &BatchNoise,
    hyper: &Hyperparams,
    mask: TermMask,
    exec: Exec,
) -> Result<LossBreakdown> {
    let (loss, grad) = dbrf_objective(&state.params, batch, noise, hyper, mask, exec, true)?;
    let grad = grad.expect("gradient requested");
    adam_step(&mut state.params.model_tensors_mut(), &grad.model_tensors(), &mut state.opt_model)?;
    state.steps_done += 1;
    Ok(loss)
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl: f64,
    pub tc: f64,
    pub h_y_rm: f64,
    pub h_y_b: f64,
    pub supervised: f64,
    pub total: f64,
    pub disc_loss: Option<f64>,
    /// Training accuracy of the learned ideal labels against observed labels.
    pub acc_observed: f64,
    /// Test accuracy against ideal labels (observed labels when unknown).
    pub acc_ideal: Option<f64>,
    pub dp: Option<f64>,
    pub deo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const HEADER: [&'static str; 13] = [
        "epoch",
        "recon_x",
        "recon_a",
        "kl",
        "tc",
        "h_y_rm",
        "h_y_b",
        "supervised",
        "disc_loss",
        "acc_observed",
        "acc_ideal",
        "dp",
        "deo",
    ];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(Self::HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.recon_x.to_string(),
                r.recon_a.to_string(),
                r.kl.to_string(),
                r.tc.to_string(),
                r.h_y_rm.to_string(),
                r.h_y_b.to_string(),
                r.supervised.to_string(),
                opt(r.disc_loss),
                r.acc_observed.to_string(),
                opt(r.acc_ideal),
                opt(r.dp),
                opt(r.deo),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }

    pub fn recon_x(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.recon_x).collect()
    }
}

/// Test-set evaluation of the learned ideal labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub delta_dp: f64,
    pub deo: f64,
}

/// Scores predictions against ideal labels when known, otherwise observed.
pub fn evaluate_predictions(pred: &[u8], data: &TabularDataset, group: GroupSelector) -> Result<Evaluation> {
    let labels = data.ideal_labels().unwrap_or(data.observed_labels());
    let g = data.protected(group)?;
    let gp = GroupedPredictions::new(pred, labels, &g)?;
    Ok(Evaluation {
        accuracy: accuracy(pred, labels)?,
        delta_dp: delta_dp(&gp)?,
        deo: deo(&gp)?,
    })
}

#[derive(Debug, Default)]
struct EpochSums {
    loss: [f64; 8],
    disc: f64,
    disc_n: usize,
    steps: usize,
}

impl EpochSums {
    fn add(&mut self, r: &StepReport) {
        let l = &r.loss;
        let v = [
            l.recon_x,
            l.recon_a,
            l.kl,
            l.tc,
            l.h_y_given_rm,
            l.h_y_given_b,
            l.supervised,
            l.total,
        ];
        for (a, b) in self.loss.iter_mut().zip(v) {
            *a += b;
        }
        if let Some(d) = r.disc_loss {
            self.disc += d;
            self.disc_n += 1;
        }
        self.steps += 1;
    }

    fn mean(&self) -> [f64; 8] {
        self.loss.map(|v| v / self.steps.max(1) as f64)
    }
}

/// Everything [`fit`] needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSpec {
    pub train: TrainConfig,
    pub hyper: Hyperparams,
    pub mask: TermMask,
    pub group: GroupSelector,
}

/// Trains from scratch; see [`fit_from`].
pub fn fit(
    spec: &FitSpec,
    arch: ArchConfig,
    train: &TabularDataset,
    test: &TabularDataset,
) -> Result<(TrainState, TrainingHistory)> {
    let state = TrainState::init(train, arch, &spec.train)?;
    fit_from(state, spec, train, test)
}

/// Continues training until `spec.train.epochs` epochs are done, evaluating
/// on `test` at the configured cadence.
pub fn fit_from(
    mut state: TrainState,
    spec: &FitSpec,
    train: &TabularDataset,
    test: &TabularDataset,
) -> Result<(TrainState, TrainingHistory)> {
    let cfg = &spec.train;
    cfg.validate(train.len())?;
    spec.hyper.validate()?;
    let view = TrainView::new(train);
    let mut history = TrainingHistory::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    while state.epochs_done < cfg.epochs {
        let mut order: Vec<usize> = (0..view.len()).collect();
        order.shuffle(&mut state.rng);
        let mut sums = EpochSums::default();
        for idx in order.chunks(cfg.batch_size) {
            let rep = train_step(&mut state, &view.batch(idx), &spec.hyper, spec.mask, cfg)?;
            sums.add(&rep);
        }
        state.epochs_done += 1;
        let epoch = state.epochs_done;
        let last = epoch == cfg.epochs;
        let due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
        let mean = sums.mean();
        let mut stop = false;
        if let Some(es) = cfg.early_stopping {
            if mean[7] < best - es.min_delta {
                best = mean[7];
                stale = 0;
            } else {
                stale += 1;
                stop = stale > es.patience;
            }
        }
        if due || last || stop {
            let train_pred = predict_ideal(&state.params, train.features())?;
            let test_pred = predict_ideal(&state.params, test.features())?;
            let ev = evaluate_predictions(&test_pred, test, spec.group).ok();
            let acc_test = accuracy(&test_pred, test.ideal_labels().unwrap_or(test.observed_labels())).ok();
            history.records.push(EpochRecord {
                epoch,
                recon_x: mean[0],
                recon_a: mean[1],
                kl: mean[2],
                tc: mean[3],
                h_y_rm: mean[4],
                h_y_b: mean[5],
                supervised: mean[6],
                total: mean[7],
                disc_loss: (sums.disc_n > 0).then(|| sums.disc / sums.disc_n as f64),
                acc_observed: accuracy(&train_pred, train.observed_labels())?,
                acc_ideal: acc_test,
                dp: ev.map(|e| e.delta_dp),
                deo: ev.map(|e| e.deo),
            });
            log::debug!("epoch {epoch}: total {:.4} acc {:?}", mean[7], acc_test);
        }
        if stop {
            log::info!("early stopping after epoch {epoch}");
            break;
        }
    }
    Ok((state, history))
}
