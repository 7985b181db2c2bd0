//! Freeze / encoder size / delay sweep over the full pipeline.

use std::fs;
use std::path::PathBuf;

use affectcae::data::Partition;
use affectcae::metrics::Dimension;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::stages::{self, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dimension: Dimension,
    pub freeze: usize,
    pub encoder_size: usize,
    pub delay: usize,
    pub raw_ccc: Option<f64>,
    pub ccc: Option<f64>,
    pub status: String,
}

fn axis(values: &[usize], base: usize) -> Vec<usize> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

fn cell_dir(layout: &Layout, freeze: usize, d: usize) -> PathBuf {
    layout
        .root
        .join("sweep")
        .join(format!("freeze{freeze}_d{d}"))
}

/// Dev CCC per dimension, raw then post-processed.
fn run_delays(
    cfg: &RunConfig,
    cell: &Layout,
    delays: &[usize],
) -> Vec<(usize, Result<[(f64, f64); 2], String>)> {
    let encoded = stages::train_cae(cfg, cell).and_then(|_| stages::encode(cfg, cell));
    delays
        .iter()
        .map(|&n| {
            let r = encoded.as_ref().map_err(|e| e.to_string()).and_then(|_| {
                let mut c = cfg.clone();
                c.delay = n;
                let sub = Layout {
                    features: cell.features.clone(),
                    ..Layout::new(&cell.root.join(format!("delay{n}")))
                };
                stages::train_svr(&c, &sub)
                    .and_then(|_| stages::postprocess(&c, &sub))
                    .and_then(|_| stages::evaluate(&c, &sub))
                    .map_err(|e| e.to_string())
                    .map(|reports| {
                        let dev = |dim: Dimension, stage: &str| {
                            reports
                                .iter()
                                .find(|r| {
                                    r.dimension == dim
                                        && r.stage == stage
                                        && r.partition == Partition::Val.to_string()
                                })
                                .map_or(f64::NAN, |r| r.ccc)
                        };
                        Dimension::ALL.map(|d| (dev(d, "raw"), dev(d, "postprocessed")))
                    })
            });
            (n, r)
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    fs::create_dir_all(layout.root.join("sweep")).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(layout.root.join("sweep").join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if cfg.cae.transfer && !layout.pretrain_checkpoint().exists() {
        stages::pretrain(cfg, layout)?;
    }
    let freezes = axis(&cfg.sweep.freeze, cfg.cae.freeze);
    let sizes = axis(&cfg.sweep.encoder_sizes, cfg.cae.encoder_size);
    let delays = axis(&cfg.sweep.delays, cfg.delay);
    let cells: Vec<(usize, usize)> = freezes
        .iter()
        .flat_map(|&f| sizes.iter().map(move |&d| (f, d)))
        .collect();

    let results: Vec<_> = cells
        .par_iter()
        .map(|&(f, d)| {
            let mut c = cfg.clone();
            c.cae.freeze = f;
            c.cae.encoder_size = d;
            let cell = Layout {
                pretrain: layout.pretrain.clone(),
                ..Layout::new(&cell_dir(layout, f, d))
            };
            ((f, d), run_delays(&c, &cell, &delays))
        })
        .collect();

    let mut rows = Vec::new();
    for ((f, d), per_delay) in results {
        for (n, r) in per_delay {
            for (k, dim) in Dimension::ALL.into_iter().enumerate() {
                let (raw, ccc, status) = match &r {
                    Ok(s) => (Some(s[k].0), Some(s[k].1), "ok".to_string()),
                    Err(e) => {
                        log::warn!("sweep cell freeze={f} d={d} delay={n} failed: {e}");
                        (
                            None,
                            None,
                            format!("failed: {}", e.replace([',', '\n'], ";")),
                        )
                    }
                };
                rows.push(SweepRow {
                    dimension: dim,
                    freeze: f,
                    encoder_size: d,
                    delay: n,
                    raw_ccc: raw,
                    ccc,
                    status,
                });
            }
        }
    }
    rows.sort_by_key(|r| (r.dimension as usize, r.freeze, r.encoder_size, r.delay));
    let num = |v: Option<f64>| v.map(|v| format!("{v:.9}")).unwrap_or_default();
    let mut csv = String::from("dimension,freeze,encoder_size,delay,raw_ccc,ccc,status\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dimension,
            r.freeze,
            r.encoder_size,
            r.delay,
            num(r.raw_ccc),
            num(r.ccc),
            r.status
        ));
    }
    let path = layout.root.join("sweep").join("sweep.csv");
    fs::write(&path, csv).map_err(|e| CliError::Runtime(e.to_string()))?;

    // one CCC column per freeze count
    let mut table = String::from("dimension,encoder_size,delay");
    for f in &freezes {
        table.push_str(&format!(",ccc_freeze{f}"));
    }
    table.push('\n');
    for dim in Dimension::ALL {
        for &d in &sizes {
            for &n in &delays {
                table.push_str(&format!("{dim},{d},{n}"));
                for &f in &freezes {
                    let c = rows
                        .iter()
                        .find(|r| {
                            r.dimension == dim
                                && r.freeze == f
                                && r.encoder_size == d
                                && r.delay == n
                        })
                        .and_then(|r| r.ccc);
                    table.push_str(&format!(",{}", num(c)));
                }
                table.push('\n');
            }
        }
    }
    let path = layout.root.join("sweep").join("freeze_table.csv");
    fs::write(&path, table).map_err(|e| CliError::Runtime(e.to_string()))?;
    if rows.iter().all(|r| r.ccc.is_none()) {
        return Err(CliError::Runtime("every sweep cell failed".into()));
    }
    Ok(())
}
