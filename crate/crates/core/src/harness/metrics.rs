//! Per-epoch metrics and their CSV form.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "epoch,real_steps_total,imag_steps_total,eval_success_rate,mean_intrinsic_reward,model_loss,p_imag,wall_clock_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: u32,
    pub real_steps_total: u64,
    pub imag_steps_total: u64,
    pub eval_success_rate: f64,
    pub mean_intrinsic_reward: f64,
    /// Final training loss of the ensemble this epoch (NaN without a model).
    pub model_loss: f64,
    pub p_imag: f64,
    pub wall_clock_seconds: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?}",
            self.epoch,
            self.real_steps_total,
            self.imag_steps_total,
            self.eval_success_rate,
            self.mean_intrinsic_reward,
            self.model_loss,
            self.p_imag,
            self.wall_clock_seconds
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(Error::InvalidArgument(format!("metrics line has {} fields, expected 8", f.len())));
        }
        let float = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad metrics value '{s}'")))
        };
        let int = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad metrics value '{s}'")))
        };
        Ok(MetricsRow {
            epoch: int(f[0])? as u32,
            real_steps_total: int(f[1])?,
            imag_steps_total: int(f[2])?,
            eval_success_rate: float(f[3])?,
            mean_intrinsic_reward: float(f[4])?,
            model_loss: float(f[5])?,
            p_imag: float(f[6])?,
            wall_clock_seconds: float(f[7])?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_csv(rows).as_bytes())?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::InvalidArgument("metrics file lacks the expected header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::from_csv_line)
        .collect()
}

/// Real steps at the first row whose success rate reaches `threshold`.
pub fn steps_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<u64> {
    rows.iter()
        .find(|r| r.eval_success_rate >= threshold)
        .map(|r| r.real_steps_total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: u32, success: f64) -> MetricsRow {
        MetricsRow {
            epoch,
            real_steps_total: epoch as u64 * 100,
            imag_steps_total: 7,
            eval_success_rate: success,
            mean_intrinsic_reward: 0.1 + 0.2,
            model_loss: f64::NAN,
            p_imag: 1.0 / 3.0,
            wall_clock_seconds: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![row(1, 0.0), row(2, 0.5)];
        let line = rows[1].to_csv_line();
        let back = MetricsRow::from_csv_line(&line).unwrap();
        assert_eq!(back.mean_intrinsic_reward, rows[1].mean_intrinsic_reward);
        assert_eq!(back.p_imag, rows[1].p_imag);
        assert!(back.model_loss.is_nan());
        assert!(metrics_csv(&rows).starts_with(CSV_HEADER));
    }

    #[test]
    fn threshold_search() {
        let rows = vec![row(1, 0.2), row(2, 0.85), row(3, 0.9)];
        assert_eq!(steps_to_threshold(&rows, 0.8), Some(200));
        assert_eq!(steps_to_threshold(&rows, 0.95), None);
    }
}
