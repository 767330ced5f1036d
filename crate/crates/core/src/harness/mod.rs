//! Batch experiments: twin runs, game evaluation, agent training and
//! method sweeps, written as CSV with a config-hash header line.

mod config;
mod run;

pub use config::{ExperimentConfig, GameParams, RequestParams, SweepParams, ValidationParams};
pub use run::{
    cmd_game, cmd_sweep, cmd_train, cmd_twin, cmd_verify_epg, eval_streams, train_agent,
    GameRow, SweepAxis, SweepCell, TrainSession, VALIDATION_SEED_BASE,
};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agent::AgentError;
use crate::game::GameError;
use crate::twin::TwinError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status for the binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Convergence(_) | HarnessError::Twin(TwinError::NoConvergence { .. }) => 3,
            _ => 1,
        }
    }
}

/// CSV file whose first line is `# config_hash=<hex> version=<crate version>`.
pub fn csv_writer(
    dir: &Path,
    name: &str,
    cfg: &ExperimentConfig,
) -> Result<csv::Writer<File>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut f = File::create(dir.join(name))?;
    writeln!(f, "# config_hash={} version={}", cfg.hash(), env!("CARGO_PKG_VERSION"))?;
    Ok(csv::Writer::from_writer(f))
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One-sided paired t-test p-value for `mean(a - b) > 0`.
pub fn paired_p_greater(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&d);
    let n = d.len();
    if n < 2 || sd == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof positive");
    1.0 - dist.cdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn paired_test() {
        // d = [1, 2, 3]: t = 2 / (1/√3) = 2√3 on 2 dof; upper tail = 0.03708...
        let p = paired_p_greater(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        let t = 2.0 * 3f64.sqrt();
        let want = 0.5 - t / (2.0 * (2.0 + t * t).sqrt());
        assert!((p - want).abs() < 1e-9, "{p} vs {want}");
        assert_eq!(paired_p_greater(&[1.0, 1.0], &[0.0, 0.0]), 0.0);
        assert!(paired_p_greater(&[0.0, 0.0, 0.1], &[1.0, 1.0, 1.0]) > 0.9);
    }

    #[test]
    fn exit_codes() {
        let c = HarnessError::Config { path: "x".into(), msg: "y".into() };
        assert_eq!(c.exit_code(), 2);
        assert_eq!(HarnessError::Convergence("g".into()).exit_code(), 3);
        assert_eq!(HarnessError::Verification("v".into()).exit_code(), 1);
    }
}
