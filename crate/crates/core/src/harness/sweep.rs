//! Runs over a list of regularization strengths, counting relevant dimensions.

use std::path::Path;

use super::config::{RunConfig, Variant};
use super::relevance::{relevance_report, RelevanceReport, Thresholds};
use super::train::train;
use crate::data::FactorDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    pub report: RelevanceReport,
}

/// Trains one run per `η` from `base` with its seed unchanged. For
/// `bfvae0` the value sets `eta`; for `bfvae2` it sets both `eta_s` and
/// `eta_h`. Each run writes to `<out_dir>/eta_<η>` when `base` has an output
/// directory (after the environment override).
pub fn cardinality_sweep(
    base: &RunConfig,
    etas: &[f64],
    ds: &FactorDataset,
    thresholds: &Thresholds,
) -> Result<Vec<SweepRow>> {
    if !matches!(base.variant, Variant::BfVae0 | Variant::BfVae2) {
        return Err(Error::NotApplicable(format!("η sweeps need bfvae0 or bfvae2, got {}", base.variant.name())));
    }
    let out = base.resolved_out_dir();
    etas.iter()
        .map(|&eta| {
            let mut cfg = base.clone();
            match cfg.variant {
                Variant::BfVae0 => cfg.eta = eta,
                _ => {
                    cfg.eta_s = eta;
                    cfg.eta_h = eta;
                }
            }
            cfg.out_dir = out.as_ref().map(|d| d.join(format!("eta_{eta}")));
            let run = train(&cfg, ds)?;
            let report = relevance_report(&run.checkpoint, thresholds)?;
            log::info!("eta {eta}: {} relevant", report.num_relevant());
            Ok(SweepRow { eta, report })
        })
        .collect()
}

/// `eta,num_relevant,indicator,threshold,dim0,…` with one row per run.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = rows.first().map_or(0, |r| r.report.evidence.len());
    let mut header = vec!["eta".to_string(), "num_relevant".into(), "indicator".into(), "threshold".into()];
    header.extend((0..d).map(|j| format!("dim{j}")));
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.eta.to_string(),
            r.report.num_relevant().to_string(),
            r.report.indicator.name().to_string(),
            r.report.threshold.to_string(),
        ];
        rec.extend(r.report.evidence.iter().map(|e| e.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)?)?;
    Ok(())
}
