//! Experiment protocols: noise sweeps, ablations, hyperparameter grids and
//! representation projections, with CSV and SVG output.

pub mod config;
pub mod kpca;
pub mod run;
pub mod stats;
pub mod svg;

use std::io::Write;

pub use config::{prepare_fold, BetaSchedule, DataSource, ExperimentConfig, Fold};
pub use kpca::{group_separation, kernel_pca, project_rows, KernelPcaConfig, Projection};
pub use run::{
    ablation_variants, read_results, reference_delta_dp, run_ablation, run_hyper_grid, run_sweep, summarize,
    write_csv, AblationOutcome, AblationRow, AblationSpec, AblationVariant, CellFailure, GridAxis, GridOutcome,
    GridRow, GridSpec, Method, Readout, ResultRow, SummaryRow, SweepOutcome, SweepSpec,
};
pub use stats::{spearman, MeanStd};
pub use svg::{render_line_chart, render_scatter, LineChart, ScatterChart, Series};

use crate::data::{GroupSelector, TabularDataset};
use crate::error::Result;
use crate::model::{encode_means, ModelParams};

/// Kernel PCA of the features and of the `z` means over the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationProjection {
    pub x: Projection,
    pub z: Projection,
    /// Group of each projected row.
    pub group: Vec<u8>,
}

impl RepresentationProjection {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "group", "x1", "x2", "z1", "z2"])?;
        for i in 0..self.group.len() {
            let (x, z) = (self.x.coords.row(i), self.z.coords.row(i));
            w.write_record([
                self.x.rows[i].to_string(),
                self.group[i].to_string(),
                x[0].to_string(),
                x[1].to_string(),
                z[0].to_string(),
                z[1].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn scatter(&self, which_z: bool, title: &str) -> Result<String> {
        let p = if which_z { &self.z } else { &self.x };
        render_scatter(&ScatterChart {
            title: title.into(),
            points: p.coords.iter_rows().zip(&self.group).map(|(c, &g)| (c[0], c[1], g)).collect(),
        })
    }

    pub fn separation(&self) -> Result<(f64, f64)> {
        Ok((
            group_separation(&self.x.coords, &self.group)?,
            group_separation(&self.z.coords, &self.group)?,
        ))
    }
}

pub fn project_representations(
    params: &ModelParams,
    data: &TabularDataset,
    group: GroupSelector,
    cfg: &KernelPcaConfig,
) -> Result<RepresentationProjection> {
    let rows = kpca::subsample_rows(data.len(), cfg.max_rows, cfg.seed);
    let sub = data.select_rows(&rows);
    let (z, _) = encode_means(params, sub.features())?;
    let mut x = kernel_pca(sub.features(), cfg)?;
    let mut zp = kernel_pca(&z, cfg)?;
    x.rows.clone_from(&rows);
    zp.rows = rows;
    Ok(RepresentationProjection {
        x,
        z: zp,
        group: sub.protected(group)?,
    })
}
