use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::CliError;

/// One trial of one configuration point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub variant: String,
    pub x: u64,
    pub trial: usize,
    /// In the order of [`BenchResult::metrics`].
    pub values: Vec<f64>,
}

/// Mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        assert!(n > 0, "summary of no samples");
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Summary { n, mean, stderr, lo: mean - 1.96 * stderr, hi: mean + 1.96 * stderr, min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub experiment: String,
    /// Echo of the parameters the run used.
    pub config: serde_json::Value,
    pub metrics: Vec<&'static str>,
    /// Metrics that measure wall time and vary between runs.
    pub timing: Vec<&'static str>,
    pub min_trials: usize,
    pub trials: Vec<Trial>,
}

impl BenchResult {
    pub fn new(experiment: &str, config: serde_json::Value, metrics: &[&'static str], timing: &[&'static str], min_trials: usize) -> Self {
        BenchResult {
            experiment: experiment.into(),
            config,
            metrics: metrics.to_vec(),
            timing: timing.to_vec(),
            min_trials,
            trials: Vec::new(),
        }
    }

    pub fn push(&mut self, variant: &str, x: u64, trial: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.metrics.len(), "one value per metric");
        self.trials.push(Trial { variant: variant.into(), x, trial, values });
    }

    fn column(&self, metric: &str) -> usize {
        self.metrics.iter().position(|m| *m == metric).unwrap_or_else(|| panic!("no metric {metric}"))
    }

    /// Trials grouped by configuration point, in first-seen order.
    pub fn points(&self) -> Vec<(String, u64)> {
        let mut out: Vec<(String, u64)> = Vec::new();
        for t in &self.trials {
            if !out.iter().any(|(v, x)| *v == t.variant && *x == t.x) {
                out.push((t.variant.clone(), t.x));
            }
        }
        out
    }

    pub fn values(&self, variant: &str, x: u64, metric: &str) -> Vec<f64> {
        let c = self.column(metric);
        self.trials.iter().filter(|t| t.variant == variant && t.x == x).map(|t| t.values[c]).collect()
    }

    /// Every value of `metric` across all trials.
    pub fn all(&self, metric: &str) -> Vec<f64> {
        let c = self.column(metric);
        self.trials.iter().map(|t| t.values[c]).collect()
    }

    pub fn summary(&self, variant: &str, x: u64, metric: &str) -> Summary {
        Summary::of(&self.values(variant, x, metric))
    }

    /// Fails if some configuration point has fewer trials than required.
    pub fn check_trials(&self) -> Result<(), CliError> {
        let mut counts: BTreeMap<(String, u64), usize> = BTreeMap::new();
        for t in &self.trials {
            *counts.entry((t.variant.clone(), t.x)).or_default() += 1;
        }
        match counts.iter().find(|(_, &n)| n < self.min_trials) {
            Some(((v, x), n)) => Err(CliError::Config(format!(
                "{} {v} x={x}: {n} trials, at least {} required",
                self.experiment, self.min_trials
            ))),
            None => Ok(()),
        }
    }

    /// `experiment,variant,x,trial,<metrics>`.
    pub fn write_trials<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["experiment", "variant", "x", "trial"];
        header.extend(&self.metrics);
        out.write_record(&header)?;
        for t in &self.trials {
            let mut row = vec![self.experiment.clone(), t.variant.clone(), t.x.to_string(), t.trial.to_string()];
            row.extend(t.values.iter().map(|v| fmt_value(*v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `experiment,variant,x,metric,trials,mean,stderr,ci95_lo,ci95_hi,min,max`.
    pub fn write_summary<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["experiment", "variant", "x", "metric", "trials", "mean", "stderr", "ci95_lo", "ci95_hi", "min", "max"])?;
        for (v, x) in self.points() {
            for m in &self.metrics {
                let s = self.summary(&v, x, m);
                out.write_record([
                    self.experiment.clone(),
                    v.clone(),
                    x.to_string(),
                    m.to_string(),
                    s.n.to_string(),
                    fmt_value(s.mean),
                    fmt_value(s.stderr),
                    fmt_value(s.lo),
                    fmt_value(s.hi),
                    fmt_value(s.min),
                    fmt_value(s.max),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_matches_hand_computation() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        // Sample variance 32/7.
        let se = (32.0f64 / 7.0 / 8.0).sqrt();
        assert!((s.stderr - se).abs() < 1e-12);
        assert!((s.hi - (5.0 + 1.96 * se)).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
        assert_eq!(Summary::of(&[3.0]).stderr, 0.0);
    }

    #[test]
    fn csv_layout() {
        let mut r = BenchResult::new("exp0", serde_json::json!({}), &["a", "b_us"], &["b_us"], 2);
        r.push("v", 10, 0, vec![1.0, 0.5]);
        assert!(r.check_trials().is_err());
        r.push("v", 10, 1, vec![3.0, 1.5]);
        r.check_trials().unwrap();
        let mut buf = Vec::new();
        r.write_trials(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "experiment,variant,x,trial,a,b_us\nexp0,v,10,0,1,0.500\nexp0,v,10,1,3,1.500\n");
        let mut buf = Vec::new();
        r.write_summary(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("experiment,variant,x,metric,trials,mean,stderr,ci95_lo,ci95_hi,min,max\nexp0,v,10,a,2,2,1,"));
    }
}
