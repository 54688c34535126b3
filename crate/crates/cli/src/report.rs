//! Serializable artifacts written by the subcommands.

use std::fmt::Write as _;

use serde::Serialize;

use objscale::eval::{AlignMode, AteResult};
use objscale::optimizer::SolveReport;
use objscale::scale::{PipelineConfig, SampleRecord};

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub scale: f64,
    /// Relative scale error, when the map carries its true scale.
    pub rse: Option<f64>,
    /// RMS camera position error after applying the recovered scale.
    pub ate: Option<f64>,
    pub num_inliers: usize,
    pub num_outliers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub scale_mean: f64,
    pub scale_std: f64,
    pub rse_mean: f64,
    pub rse_std: f64,
    pub rse_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub config: PipelineConfig,
    pub runs: Vec<RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<SampleRecord>>,
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EstimateReport {
    pub fn new(config: &PipelineConfig, runs: Vec<RunRecord>, samples: Option<Vec<SampleRecord>>) -> Self {
        let rses: Option<Vec<f64>> = runs.iter().map(|r| r.rse).collect();
        let aggregate = match rses {
            Some(rses) if runs.len() > 1 => {
                let scales: Vec<f64> = runs.iter().map(|r| r.scale).collect();
                let (scale_mean, scale_std) = mean_std(&scales);
                let (rse_mean, rse_std) = mean_std(&rses);
                Some(Aggregate {
                    runs: runs.len(),
                    scale_mean,
                    scale_std,
                    rse_mean,
                    rse_std,
                    rse_max: rses.iter().copied().fold(0.0, f64::max),
                })
            }
            _ => None,
        };
        Self {
            config: config.clone(),
            runs,
            aggregate,
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per run, then `mean` and `std` rows when aggregated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,scale,rse,ate,num_inliers,num_outliers,runtime_ms\n");
        for r in &self.runs {
            let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{seed},{},{},{},{},{},{}",
                r.scale,
                opt(r.rse),
                opt(r.ate),
                r.num_inliers,
                r.num_outliers,
                opt(r.runtime_ms)
            );
        }
        if let Some(a) = &self.aggregate {
            let _ = writeln!(out, "mean,{},{},,,,", a.scale_mean, a.rse_mean);
            let _ = writeln!(out, "std,{},{},,,,", a.scale_std, a.rse_std);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mode: AlignMode,
    pub max_dt: f64,
    pub ate_rmse: f64,
    pub num_pairs: usize,
    /// Scale of the sim3 alignment, i.e. the ground-truth scale of the estimate.
    pub gt_scale: Option<f64>,
    /// Relative error of the supplied scale against `gt_scale`.
    pub rse: Option<f64>,
    pub alignment: Option<objscale::eval::SimilarityTransform>,
}

impl EvalReport {
    pub fn new(mode: AlignMode, max_dt: f64, result: &AteResult, scale: Option<f64>) -> Self {
        let gt_scale = match mode {
            AlignMode::Sim3 => result.alignment.as_ref().map(|a| a.scale),
            _ => None,
        };
        let rse = match (scale, gt_scale) {
            (Some(s), Some(truth)) => Some(objscale::eval::rse(s, truth)),
            _ => None,
        };
        Self {
            mode,
            max_dt,
            ate_rmse: result.rmse,
            num_pairs: result.pairs.len(),
            gt_scale,
            rse,
            alignment: result.alignment.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mode = serde_json::to_value(self.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        format!(
            "mode,max_dt,ate_rmse,num_pairs,gt_scale,rse\n{mode},{},{},{},{},{}\n",
            self.max_dt,
            self.ate_rmse,
            self.num_pairs,
            opt(self.gt_scale),
            opt(self.rse)
        )
    }
}

/// Per-iteration chi-square trace.
pub fn solve_csv(report: &SolveReport) -> String {
    let mut out = String::from("iteration,chi2\n");
    for (i, c) in report.chi2_history.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn single_run_has_no_aggregate() {
        let run = RunRecord {
            seed: None,
            scale: 2.0,
            rse: Some(0.01),
            ate: None,
            num_inliers: 3,
            num_outliers: 0,
            runtime_ms: None,
        };
        let r = EstimateReport::new(&PipelineConfig::default(), vec![run], None);
        assert!(r.aggregate.is_none());
        assert_eq!(r.to_csv().lines().count(), 2);
    }
}
