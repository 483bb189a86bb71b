use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One epoch of the metrics log. Columns that do not apply to a stage are
/// left empty in the CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub epoch: u64,
    pub stage: String,
    pub steps: u64,
    pub lr: f64,
    pub loss: f64,
    pub infonce: Option<f64>,
    pub reweighted: Option<f64>,
    pub proto: Option<f64>,
    pub dino: Option<f64>,
    /// Fraction of components flagged as false negatives by the filter.
    pub fn_fraction: Option<f64>,
    /// Oracle p_fn: fraction of anchors with a same-speaker key.
    pub pfn: Option<f64>,
    /// p_fn of the retained components after controlled dropout.
    pub retained_pfn: Option<f64>,
    pub queue_age: Option<f64>,
    pub phi_mean: Option<f64>,
    pub phi_min: Option<f64>,
    pub phi_max: Option<f64>,
    /// Mean per-sample teacher entropy.
    pub teacher_entropy: Option<f64>,
    /// Entropy of the batch-mean teacher distribution, averaged over steps.
    pub batch_mean_entropy: Option<f64>,
    /// Smallest batch-mean entropy seen in the epoch.
    pub batch_mean_entropy_min: Option<f64>,
    /// Entropy of the epoch-mean teacher distribution.
    pub epoch_mean_entropy: Option<f64>,
    pub center_std: Option<f64>,
    pub probe_eer: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,stage,steps,lr,loss,infonce,reweighted,proto,dino,fn_fraction,pfn,\
retained_pfn,queue_age,phi_mean,phi_min,phi_max,teacher_entropy,batch_mean_entropy,batch_mean_entropy_min,\
epoch_mean_entropy,center_std,probe_eer";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let cols = [
            self.epoch.to_string(),
            self.stage.clone(),
            self.steps.to_string(),
            self.lr.to_string(),
            self.loss.to_string(),
            opt(self.infonce),
            opt(self.reweighted),
            opt(self.proto),
            opt(self.dino),
            opt(self.fn_fraction),
            opt(self.pfn),
            opt(self.retained_pfn),
            opt(self.queue_age),
            opt(self.phi_mean),
            opt(self.phi_min),
            opt(self.phi_max),
            opt(self.teacher_entropy),
            opt(self.batch_mean_entropy),
            opt(self.batch_mean_entropy_min),
            opt(self.epoch_mean_entropy),
            opt(self.center_std),
            opt(self.probe_eer),
        ];
        cols.join(",")
    }
}

/// Writes the header if the file is new, then appends `rows`.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    Ok(())
}
