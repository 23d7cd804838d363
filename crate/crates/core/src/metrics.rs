//! Exploration statistics: bucket coverage, radius of gyration and the power
//! spectrum of action sequences.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::mazeworld::MazeSpec;

/// A box tiled into `side × side` equal buckets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub side: usize,
}

impl CoverageConfig {
    pub fn new(lo: [f64; 2], hi: [f64; 2], side: usize) -> Result<Self> {
        if side == 0 || !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Invalid(
                "coverage box must be non-empty with side >= 1".into(),
            ));
        }
        Ok(CoverageConfig { lo, hi, side })
    }

    /// The maze box split into 10 × 10 buckets.
    pub fn for_maze(spec: &MazeSpec) -> Self {
        let (lo, hi) = spec.bounds();
        CoverageConfig { lo, hi, side: 10 }
    }

    pub fn buckets(&self) -> usize {
        self.side * self.side
    }

    /// Bucket index of `p`; points on the upper edge fall in the last bucket.
    pub fn bucket(&self, p: [f64; 2]) -> Result<usize> {
        let mut idx = [0usize; 2];
        for d in 0..2 {
            if !(p[d] >= self.lo[d] && p[d] <= self.hi[d]) {
                return Err(Error::Domain {
                    op: "coverage",
                    detail: format!("point {p:?} outside box {:?}..{:?}", self.lo, self.hi),
                });
            }
            let f = (p[d] - self.lo[d]) / (self.hi[d] - self.lo[d]);
            idx[d] = ((f * self.side as f64) as usize).min(self.side - 1);
        }
        Ok(idx[1] * self.side + idx[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GyrationConfig {
    /// Diagonal of the box containing reachable states.
    pub delta: f64,
}

impl GyrationConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Invalid(format!("delta must be > 0, got {delta}")));
        }
        Ok(GyrationConfig { delta })
    }

    pub fn for_maze(spec: &MazeSpec) -> Self {
        GyrationConfig {
            delta: spec.diagonal(),
        }
    }
}

pub type Path2 = Vec<[f64; 2]>;

/// Fraction of buckets visited by any state of any trajectory.
pub fn coverage(trajectories: &[Path2], cfg: &CoverageConfig) -> Result<f64> {
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(Error::Invalid("coverage of no states".into()));
    }
    let mut seen = vec![false; cfg.buckets()];
    for p in trajectories.iter().flatten() {
        seen[cfg.bucket(*p)?] = true;
    }
    Ok(seen.iter().filter(|&&s| s).count() as f64 / cfg.buckets() as f64)
}

/// `U_g² = 1/(δ n) Σ_τ 1/(|τ|−1) Σ_{s∈τ} ‖s − τ̄‖²` over `n` trajectories.
pub fn gyration_sq(trajectories: &[Path2], cfg: &GyrationConfig) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Invalid("gyration of no trajectories".into()));
    }
    let mut total = 0.0;
    for t in trajectories {
        if t.len() < 2 {
            return Err(Error::Invalid(format!(
                "trajectory of length {} (need >= 2)",
                t.len()
            )));
        }
        let n = t.len() as f64;
        let mean = [
            t.iter().map(|p| p[0]).sum::<f64>() / n,
            t.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        let ss: f64 = t
            .iter()
            .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
            .sum();
        total += ss / (n - 1.0);
    }
    Ok(total / (cfg.delta * trajectories.len() as f64))
}

/// One-sided power spectrum over bins `0..=L/2`, averaged over columns and
/// sequences. Normalised so the bins sum to the mean squared value.
pub fn action_psd(sequences: &[Matrix]) -> Result<Vec<f64>> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::Invalid("psd of no sequences".into()))?;
    let (len, dims) = first.shape();
    if len == 0 || dims == 0 {
        return Err(Error::Invalid("psd of empty sequences".into()));
    }
    if let Some(bad) = sequences.iter().find(|s| s.shape() != (len, dims)) {
        return Err(Error::Shape {
            op: "action_psd",
            lhs: (len, dims),
            rhs: bad.shape(),
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(len);
    let bins = len / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for s in sequences {
        for d in 0..dims {
            for (t, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(s.get(t, d), 0.0);
            }
            fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                let two_sided = k != 0 && 2 * k != len;
                *p += buf[k].norm_sqr() * if two_sided { 2.0 } else { 1.0 };
            }
        }
    }
    let scale = 1.0 / ((len * len) as f64 * (dims * sequences.len()) as f64);
    power.iter_mut().for_each(|p| *p *= scale);
    Ok(power)
}

/// Share of total power in the lowest `fraction` of bins (at least one bin).
pub fn low_frequency_share(psd: &[f64], fraction: f64) -> f64 {
    let k = ((psd.len() as f64 * fraction).round() as usize).clamp(1, psd.len());
    let total: f64 = psd.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    psd[..k].iter().sum::<f64>() / total
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub environment: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "metric,environment,value,stderr")?;
        for r in rows {
            writeln!(f, "{},{},{},{}", r.metric, r.environment, r.value, r.stderr)?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
