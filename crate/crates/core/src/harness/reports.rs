use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::ControlPolicy;
use crate::error::{PtaError, Result};
use crate::training::{MetricsRecord, TrajectorySnapshot};

pub const DEFAULT_WINDOW: usize = 10;

/// Trajectory CSV columns: `meta_iteration,task_id,decoder_index,cost,
/// dropout_rate,p0,p1,...` where `p*` are the decoder weights (row-major)
/// followed by the bias. An unset or non-finite cost is an empty field.
/// Tasks with fewer parameters than the widest task leave trailing fields
/// empty.
pub fn write_trajectories_csv(snapshots: &[TrajectorySnapshot], out: &mut impl Write) -> Result<()> {
    if snapshots.is_empty() {
        return Err(PtaError::Contract("no trajectory snapshots to export".into()));
    }
    let width = snapshots.iter().map(|s| s.params.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["meta_iteration", "task_id", "decoder_index", "cost", "dropout_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|i| format!("p{i}")));
    let csv_err = |e: csv::Error| PtaError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for s in snapshots {
        let mut row = vec![
            s.meta_iteration.to_string(),
            s.task_id.to_string(),
            s.decoder_index.to_string(),
            s.cost.map(|c| c.to_string()).unwrap_or_default(),
            s.dropout_rate.to_string(),
        ];
        row.extend(s.params.iter().map(|p| p.to_string()));
        row.resize(5 + width, String::new());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory CSV of a completed run directory.
pub fn export_trajectories(run: &super::LoadedRun, out: &mut impl Write) -> Result<usize> {
    let snaps = run.snapshots()?;
    write_trajectories_csv(&snaps, out)?;
    Ok(snaps.len())
}

/// Simple moving average; the first `window - 1` entries average the
/// available prefix.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let s = &series[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Per task, the mean decoder dropout rate at each meta-iteration.
pub fn mean_rate_series(metrics: &[MetricsRecord]) -> Vec<Vec<f64>> {
    let tasks = metrics.first().map_or(0, |m| m.dropout_rates.len());
    (0..tasks)
        .map(|t| {
            metrics
                .iter()
                .map(|m| {
                    let r = &m.dropout_rates[t];
                    r.iter().sum::<f64>() / r.len() as f64
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSchedule {
    pub task_id: usize,
    pub window: usize,
    pub mean: Vec<f64>,
    pub moving_average: Vec<f64>,
}

pub fn dropout_schedules(metrics: &[MetricsRecord], policy: &ControlPolicy, window: usize) -> Result<Vec<DropoutSchedule>> {
    if !policy.flags.hyperperturb {
        return Err(PtaError::Contract(format!(
            "policy {} does not hyperperturb dropout rates; no schedule to report",
            policy.name()
        )));
    }
    if window == 0 {
        return Err(PtaError::validation("moving-average window must be at least 1"));
    }
    Ok(mean_rate_series(metrics)
        .into_iter()
        .enumerate()
        .map(|(t, mean)| DropoutSchedule {
            task_id: t,
            window,
            moving_average: moving_average(&mean, window),
            mean,
        })
        .collect())
}
