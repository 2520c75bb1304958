use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{prepare_fold, ExperimentConfig, Fold};
use super::stats::MeanStd;
use super::svg::{render_line_chart, LineChart, Series};
use crate::baselines::{train_downstream, train_raw_lr, train_vanilla_vae};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::metrics::{delta_dp, GroupedPredictions};
use crate::model::{encode_means, predict_head, predict_ideal, Hyperparams, ModelParams, TermMask};
use crate::parallel::{map_items, Exec};
use crate::trainer::{evaluate_predictions, fit, Evaluation, TrainView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned ideal label from the proxy head.
    DbrfStar,
    /// Logistic regression on the DBRF `z` means.
    DbrfLr,
    /// Logistic regression on vanilla-VAE means.
    VaeLr,
    /// Logistic regression on the features.
    RawLr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::DbrfStar, Method::DbrfLr, Method::VaeLr, Method::RawLr];

    pub fn name(self) -> &'static str {
        match self {
            Method::DbrfStar => "dbrf_star",
            Method::DbrfLr => "dbrf_lr",
            Method::VaeLr => "vae_lr",
            Method::RawLr => "raw_lr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// How a trained DBRF model turns test features into labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    ProxyLabel,
    /// The `y_from_z` supervision head.
    ZHead,
    /// Logistic regression on `z` means fit to observed training labels.
    LogisticOnZ,
}

impl Readout {
    /// The proxy head is only trained when `H(y|r_m)` is on.
    pub fn for_mask(mask: TermMask) -> Self {
        if mask.umi_rm {
            Readout::ProxyLabel
        } else if mask.supervised {
            Readout::ZHead
        } else {
            Readout::LogisticOnZ
        }
    }
}

fn dbrf_readouts(
    cfg: &ExperimentConfig,
    fold: &Fold,
    rho: f64,
    fold_index: usize,
    readouts: &[Readout],
) -> Result<Vec<Vec<u8>>> {
    let (state, _) = fit(&cfg.fit_spec(rho, fold_index), cfg.arch, &fold.train, &fold.test)?;
    readouts
        .iter()
        .map(|r| readout_predictions(&state.params, *r, cfg, fold, fold_index))
        .collect()
}

pub fn readout_predictions(
    params: &ModelParams,
    readout: Readout,
    cfg: &ExperimentConfig,
    fold: &Fold,
    fold_index: usize,
) -> Result<Vec<u8>> {
    match readout {
        Readout::ProxyLabel => predict_ideal(params, fold.test.features()),
        Readout::ZHead => Ok(predict_head(&params.y_from_z, &encode_means(params, fold.test.features())?.0)),
        Readout::LogisticOnZ => {
            let (z_train, _) = encode_means(params, fold.train.features())?;
            let lr = train_downstream(&z_train, fold.train.observed_labels(), &cfg.logistic_at(fold_index))?;
            lr.predict(&encode_means(params, fold.test.features())?.0)
        }
    }
}

fn method_predictions(cfg: &ExperimentConfig, fold: &Fold, rho: f64, fold_index: usize, method: Method) -> Result<Vec<u8>> {
    match method {
        Method::DbrfStar => Ok(dbrf_readouts(cfg, fold, rho, fold_index, &[Readout::ProxyLabel])?.remove(0)),
        Method::DbrfLr => Ok(dbrf_readouts(cfg, fold, rho, fold_index, &[Readout::LogisticOnZ])?.remove(0)),
        Method::VaeLr => {
            let train = crate::trainer::TrainConfig {
                seed: cfg.fold_seed(fold_index),
                ..cfg.train
            };
            let x = fold.train.features();
            let (vae, _) = train_vanilla_vae(fold.train.column_kinds(), cfg.arch, &train, x)?;
            let lr = train_downstream(&vae.encode_means(x)?, fold.train.observed_labels(), &cfg.logistic_at(fold_index))?;
            lr.predict(&vae.encode_means(fold.test.features())?)
        }
        Method::RawLr => train_raw_lr(&TrainView::new(&fold.train), &cfg.logistic_at(fold_index))?.predict(fold.test.features()),
    }
}

/// One CSV row: a method evaluated on one fold at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: Method,
    pub rho: f64,
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub deo: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub rho: f64,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub rhos: Vec<f64>,
    pub methods: Vec<Method>,
    pub folds: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rhos.is_empty() || self.methods.is_empty() || self.folds == 0 {
            return Err(Error::Config("sweep needs noise levels, methods and at least one fold".into()));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(0.0..0.5).contains(*r)) {
            return Err(Error::Config(format!("rho {r} not in [0, 0.5)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    /// Mean over folds of the test-split ΔDP of the clean labels.
    pub reference_delta_dp: f64,
}

fn to_row(cfg: &ExperimentConfig, hash: &str, method: Method, rho: f64, fold: usize, ev: Evaluation) -> ResultRow {
    ResultRow {
        dataset: cfg.data.name().to_string(),
        method,
        rho,
        fold,
        seed: cfg.fold_seed(fold),
        accuracy: ev.accuracy,
        delta_dp: ev.delta_dp,
        deo: ev.deo,
        config_hash: hash.to_string(),
    }
}

/// Runs every (rho, fold) cell, each on its own split and label corruption,
/// so no cell depends on which others were requested. DBRF is trained once
/// per cell and shared by both DBRF readouts.
pub fn run_sweep(cfg: &ExperimentConfig, base: &TabularDataset, spec: &SweepSpec, exec: Exec) -> Result<SweepOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let hash = cfg.config_hash();
    let cells: Vec<(f64, usize)> = spec.rhos.iter().flat_map(|&r| (0..spec.folds).map(move |f| (r, f))).collect();
    let results = map_items(exec, &cells, |&(rho, fold)| {
        let mut out = Vec::new();
        let prepared = match prepare_fold(cfg, base, rho, fold) {
            Ok(p) => p,
            Err(e) => {
                for m in &spec.methods {
                    out.push(Err(failure(m.name(), rho, fold, &e)));
                }
                return out;
            }
        };
        let dbrf: Vec<Method> = spec.methods.iter().copied().filter(|m| matches!(m, Method::DbrfStar | Method::DbrfLr)).collect();
        let readouts: Vec<Readout> = dbrf
            .iter()
            .map(|m| if *m == Method::DbrfStar { Readout::ProxyLabel } else { Readout::LogisticOnZ })
            .collect();
        let mut dbrf_preds = if dbrf.is_empty() {
            None
        } else {
            Some(dbrf_readouts(cfg, &prepared, rho, fold, &readouts).map_err(|e| e.to_string()))
        };
        for &m in &spec.methods {
            let preds = match (&mut dbrf_preds, dbrf.iter().position(|d| *d == m)) {
                (Some(Ok(p)), Some(i)) => Ok(p[i].clone()),
                (Some(Err(msg)), Some(_)) => Err(msg.clone()),
                _ => method_predictions(cfg, &prepared, rho, fold, m).map_err(|e| e.to_string()),
            };
            let ev = preds.and_then(|p| evaluate_predictions(&p, &prepared.test, cfg.group).map_err(|e| e.to_string()));
            out.push(match ev {
                Ok(ev) => Ok(to_row(cfg, &hash, m, rho, fold, ev)),
                Err(message) => Err(CellFailure {
                    cell: m.name().into(),
                    rho,
                    fold,
                    message,
                }),
            });
        }
        out
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(SweepOutcome {
        rows,
        failures,
        reference_delta_dp: reference_delta_dp(cfg, base, spec.folds)?,
    })
}

fn failure(cell: &str, rho: f64, fold: usize, e: &Error) -> CellFailure {
    CellFailure {
        cell: cell.to_string(),
        rho,
        fold,
        message: e.to_string(),
    }
}

/// ΔDP of the clean test labels themselves, averaged over folds.
pub fn reference_delta_dp(cfg: &ExperimentConfig, base: &TabularDataset, folds: usize) -> Result<f64> {
    let mut total = 0.0;
    for fold in 0..folds {
        let f = prepare_fold(cfg, base, 0.0, fold)?;
        let labels = f.test.ideal_labels().expect("prepared folds carry ideal labels");
        let g = f.test.protected(cfg.group)?;
        total += delta_dp(&GroupedPredictions::new(labels, labels, &g)?)?;
    }
    Ok(total / folds as f64)
}

/// Mean ± std of the three metrics over the folds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub rho: f64,
    pub folds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub delta_dp_mean: f64,
    pub delta_dp_std: f64,
    pub deo_mean: f64,
    pub deo_std: f64,
}

/// Groups by `(cell, rho)` in first-appearance order.
pub fn summarize<'a>(items: impl IntoIterator<Item = (String, f64, &'a Evaluation)>) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, f64, Vec<Evaluation>)> = Vec::new();
    for (cell, rho, ev) in items {
        match groups.iter_mut().find(|g| g.0 == cell && g.1 == rho) {
            Some(g) => g.2.push(*ev),
            None => groups.push((cell, rho, vec![*ev])),
        }
    }
    groups
        .into_iter()
        .map(|(cell, rho, evs)| {
            let stat = |f: fn(&Evaluation) -> f64| MeanStd::of(&evs.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
            let (a, d, e) = (stat(|e| e.accuracy), stat(|e| e.delta_dp), stat(|e| e.deo));
            SummaryRow {
                cell,
                rho,
                folds: evs.len(),
                accuracy_mean: a.mean,
                accuracy_std: a.std,
                delta_dp_mean: d.mean,
                delta_dp_std: d.std,
                deo_mean: e.mean,
                deo_std: e.std,
            }
        })
        .collect()
}

impl ResultRow {
    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            accuracy: self.accuracy,
            delta_dp: self.delta_dp,
            deo: self.deo,
        }
    }
}

impl SweepOutcome {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let evs: Vec<(String, f64, Evaluation)> =
            self.rows.iter().map(|r| (r.method.name().to_string(), r.rho, r.evaluation())).collect();
        summarize(evs.iter().map(|(c, r, e)| (c.clone(), *r, e)))
    }

    /// Requested `(method, rho)` pairs with no successful fold.
    pub fn empty_cells(&self, spec: &SweepSpec) -> Vec<(Method, f64)> {
        let mut out = Vec::new();
        for &m in &spec.methods {
            for &r in &spec.rhos {
                if !self.rows.iter().any(|row| row.method == m && row.rho == r) {
                    out.push((m, r));
                }
            }
        }
        out
    }

    /// Accuracy and ΔDP against rho, one series per method; the ΔDP chart
    /// carries the clean-label reference line.
    pub fn charts(&self) -> Result<(String, String)> {
        let summary = self.summary();
        let series = |f: fn(&SummaryRow) -> f64| {
            let mut names: Vec<&str> = Vec::new();
            for s in &summary {
                if !names.contains(&s.cell.as_str()) {
                    names.push(&s.cell);
                }
            }
            names
                .into_iter()
                .map(|n| Series {
                    name: n.to_string(),
                    points: summary.iter().filter(|s| s.cell == n).map(|s| (s.rho, f(s))).collect(),
                })
                .collect::<Vec<_>>()
        };
        let acc = render_line_chart(&LineChart {
            title: "Accuracy vs label bias".into(),
            x_label: "rho".into(),
            y_label: "accuracy".into(),
            series: series(|s| s.accuracy_mean),
            reference_lines: vec![],
        })?;
        let dp = render_line_chart(&LineChart {
            title: "Demographic parity gap vs label bias".into(),
            x_label: "rho".into(),
            y_label: "delta_dp".into(),
            series: series(|s| s.delta_dp_mean),
            reference_lines: vec![("clean labels".into(), self.reference_delta_dp)],
        })?;
        Ok((acc, dp))
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// One loss-component combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub mask: TermMask,
}

/// The seven combinations: full loss, the disentangling VAE alone, and the
/// VAE plus subsets of the supervision and mutual-information terms.
pub fn ablation_variants() -> Vec<AblationVariant> {
    let m = |umi_rm, umi_b, supervised| TermMask {
        umi_rm,
        umi_b,
        supervised,
    };
    [
        ("full", m(true, true, true)),
        ("dbvae", m(false, false, false)),
        ("dbvae+p", m(false, false, true)),
        ("dbvae+umi", m(true, true, false)),
        ("dbvae+h_rm", m(true, false, false)),
        ("dbvae+h_b", m(false, true, false)),
        ("dbvae+h_b+p", m(false, true, true)),
    ]
    .into_iter()
    .map(|(n, mask)| AblationVariant { name: n.into(), mask })
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub variants: Vec<AblationVariant>,
    pub rho: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub variant: String,
    pub readout: Readout,
    pub rho: f64,
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub deo: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub failures: Vec<CellFailure>,
}

impl AblationOutcome {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let evs: Vec<(String, f64, Evaluation)> = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.variant.clone(),
                    r.rho,
                    Evaluation {
                        accuracy: r.accuracy,
                        delta_dp: r.delta_dp,
                        deo: r.deo,
                    },
                )
            })
            .collect();
        summarize(evs.iter().map(|(c, r, e)| (c.clone(), *r, e)))
    }
}

/// Trains one model per (variant, fold). Labels come from the head that
/// variant actually trains; see [`Readout::for_mask`].
pub fn run_ablation(cfg: &ExperimentConfig, base: &TabularDataset, spec: &AblationSpec, exec: Exec) -> Result<AblationOutcome> {
    cfg.validate()?;
    if spec.variants.is_empty() || spec.folds == 0 {
        return Err(Error::Config("ablation needs variants and at least one fold".into()));
    }
    let cells: Vec<(&AblationVariant, usize)> =
        spec.variants.iter().flat_map(|v| (0..spec.folds).map(move |f| (v, f))).collect();
    let results = map_items(exec, &cells, |&(variant, fold)| {
        let vcfg = ExperimentConfig {
            mask: variant.mask,
            ..cfg.clone()
        };
        let readout = Readout::for_mask(variant.mask);
        let run = || -> Result<AblationRow> {
            let prepared = prepare_fold(&vcfg, base, spec.rho, fold)?;
            let pred = dbrf_readouts(&vcfg, &prepared, spec.rho, fold, &[readout])?.remove(0);
            let ev = evaluate_predictions(&pred, &prepared.test, vcfg.group)?;
            Ok(AblationRow {
                dataset: vcfg.data.name().to_string(),
                variant: variant.name.clone(),
                readout,
                rho: spec.rho,
                fold,
                seed: vcfg.fold_seed(fold),
                accuracy: ev.accuracy,
                delta_dp: ev.delta_dp,
                deo: ev.deo,
                config_hash: vcfg.config_hash(),
            })
        };
        run().map_err(|e| failure(&variant.name, spec.rho, fold, &e))
    });
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(AblationOutcome { rows, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    BetaXi,
    Alpha,
    Lambda,
}

/// β×ξ grid at fixed α and λ, then lines over α and λ at β=0.5, ξ=0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub betas: Vec<f64>,
    pub xis: Vec<f64>,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub rho: f64,
    pub folds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            betas: vec![0.1, 0.3, 0.5, 0.7],
            xis: vec![0.1, 0.3, 0.5, 0.7],
            alphas: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lambdas: vec![0.0, 0.1, 0.5],
            rho: 0.45,
            folds: 3,
        }
    }
}

impl GridSpec {
    /// Every hyperparameter setting with the axis it belongs to.
    pub fn points(&self, base: &Hyperparams) -> Vec<(GridAxis, Hyperparams)> {
        let line = Hyperparams {
            alpha: 1.0,
            lambda: 0.1,
            beta: 0.5,
            xi: 0.1,
            ..*base
        };
        let mut out = Vec::new();
        for &beta in &self.betas {
            for &xi in &self.xis {
                out.push((
                    GridAxis::BetaXi,
                    Hyperparams {
                        alpha: 1.0,
                        lambda: 0.1,
                        beta,
                        xi,
                        ..*base
                    },
                ));
            }
        }
        out.extend(self.alphas.iter().map(|&alpha| (GridAxis::Alpha, Hyperparams { alpha, ..line })));
        out.extend(self.lambdas.iter().map(|&lambda| (GridAxis::Lambda, Hyperparams { lambda, ..line })));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub dataset: String,
    pub axis: GridAxis,
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub lambda: f64,
    pub rho: f64,
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub deo: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub failures: Vec<CellFailure>,
}

impl GridOutcome {
    /// Fold-mean `(value, accuracy, delta_dp)` along a line axis.
    pub fn line(&self, axis: GridAxis) -> Vec<(f64, f64, f64)> {
        let key = |r: &GridRow| match axis {
            GridAxis::Lambda => r.lambda,
            _ => r.alpha,
        };
        let mut out: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.axis == axis) {
            let k = key(r);
            match out.iter_mut().find(|o| o.0 == k) {
                Some(o) => {
                    o.1.push(r.accuracy);
                    o.2.push(r.delta_dp);
                }
                None => out.push((k, vec![r.accuracy], vec![r.delta_dp])),
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.iter().map(|(k, a, d)| (*k, mean(a), mean(d))).collect()
    }

    pub fn alpha_charts(&self) -> Result<(String, String)> {
        let line = self.line(GridAxis::Alpha);
        let chart = |y_label: &str, pick: fn(&(f64, f64, f64)) -> f64| {
            render_line_chart(&LineChart {
                title: format!("{y_label} vs alpha"),
                x_label: "alpha".into(),
                y_label: y_label.into(),
                series: vec![Series {
                    name: "dbrf_star".into(),
                    points: line.iter().map(|p| (p.0, pick(p))).collect(),
                }],
                reference_lines: vec![],
            })
        };
        Ok((chart("accuracy", |p| p.1)?, chart("delta_dp", |p| p.2)?))
    }
}

/// Full-loss DBRF at every grid point; the noise-dependent beta schedule is
/// ignored so the grid's beta applies.
pub fn run_hyper_grid(cfg: &ExperimentConfig, base: &TabularDataset, spec: &GridSpec, exec: Exec) -> Result<GridOutcome> {
    cfg.validate()?;
    if spec.folds == 0 {
        return Err(Error::Config("grid needs at least one fold".into()));
    }
    let points = spec.points(&cfg.hyper);
    if points.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let cells: Vec<(GridAxis, Hyperparams, usize)> =
        points.iter().flat_map(|&(a, h)| (0..spec.folds).map(move |f| (a, h, f))).collect();
    let results = map_items(exec, &cells, |&(axis, hyper, fold)| {
        let pcfg = ExperimentConfig {
            hyper,
            mask: TermMask::full(),
            beta_schedule: None,
            ..cfg.clone()
        };
        let run = || -> Result<GridRow> {
            pcfg.validate()?;
            let prepared = prepare_fold(&pcfg, base, spec.rho, fold)?;
            let pred = dbrf_readouts(&pcfg, &prepared, spec.rho, fold, &[Readout::ProxyLabel])?.remove(0);
            let ev = evaluate_predictions(&pred, &prepared.test, pcfg.group)?;
            Ok(GridRow {
                dataset: pcfg.data.name().to_string(),
                axis,
                alpha: hyper.alpha,
                beta: hyper.beta,
                xi: hyper.xi,
                lambda: hyper.lambda,
                rho: spec.rho,
                fold,
                seed: pcfg.fold_seed(fold),
                accuracy: ev.accuracy,
                delta_dp: ev.delta_dp,
                deo: ev.deo,
                config_hash: pcfg.config_hash(),
            })
        };
        run().map_err(|e| failure(&format!("{axis:?}"), spec.rho, fold, &e))
    });
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(GridOutcome { rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dbrf".parse::<Method>().is_err());
    }

    #[test]
    fn ablation_rows_keep_the_vae_and_differ() {
        let v = ablation_variants();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0].mask, TermMask::full());
        assert_eq!(v[1].mask, TermMask::vae_only());
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                assert_ne!(a.mask, b.mask);
            }
        }
    }

    #[test]
    fn readout_follows_trained_heads() {
        let v = ablation_variants();
        let r: Vec<Readout> = v.iter().map(|v| Readout::for_mask(v.mask)).collect();
        use Readout::*;
        assert_eq!(r, vec![ProxyLabel, LogisticOnZ, ZHead, ProxyLabel, ProxyLabel, LogisticOnZ, ZHead]);
    }

    #[test]
    fn grid_points_follow_the_protocol() {
        let spec = GridSpec::default();
        let pts = spec.points(&Hyperparams::default());
        assert_eq!(pts.len(), 16 + 5 + 3);
        for (axis, h) in &pts {
            match axis {
                GridAxis::BetaXi => assert_eq!((h.alpha, h.lambda), (1.0, 0.1)),
                GridAxis::Alpha => assert_eq!((h.beta, h.xi, h.lambda), (0.5, 0.1, 0.1)),
                GridAxis::Lambda => assert_eq!((h.alpha, h.beta, h.xi), (1.0, 0.5, 0.1)),
            }
        }
    }

    #[test]
    fn summary_groups_by_cell() {
        let e = |a| Evaluation {
            accuracy: a,
            delta_dp: 0.1,
            deo: 0.2,
        };
        let evs = [e(0.8), e(0.9), e(0.7)];
        let s = summarize(vec![
            ("a".to_string(), 0.0, &evs[0]),
            ("a".to_string(), 0.0, &evs[1]),
            ("a".to_string(), 0.1, &evs[2]),
        ]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].folds, 2);
        assert!((s[0].accuracy_mean - 0.85).abs() < 1e-12);
        assert_eq!(s[1].accuracy_std, 0.0);
    }

    #[test]
    fn sweep_spec_is_validated() {
        let ok = SweepSpec {
            rhos: vec![0.0],
            methods: vec![Method::RawLr],
            folds: 1,
        };
        assert!(ok.validate().is_ok());
        assert!(SweepSpec { folds: 0, ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { rhos: vec![0.5], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { methods: vec![], ..ok }.validate().is_err());
    }
}
