use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{NoiseStreams, NORMALS_PER_DRAW};

/// Law `Ξ` of the initial segment on `[-τ, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialLaw {
    /// Every particle starts on the constant path at this point.
    ConstantPoint(Vec<f64>),
    /// Constant path at a draw from `N(mean, diag(sd²))`.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// Constant path at a draw from a Gaussian mixture with diagonal
    /// covariances.
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sds: Vec<Vec<f64>>,
    },
    /// Paths drawn uniformly from a table. Each row holds the path on the
    /// delay grid `-L dt, ..., 0`, oldest point first, `d` values per point.
    Table { dim: usize, rows: Vec<Vec<f64>> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::ConstantPoint(p) => p.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Mixture { means, .. } => means.first().map_or(0, |m| m.len()),
            InitialLaw::Table { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > NORMALS_PER_DRAW - 1 {
            return Err(Error::invalid(format!("initial law dimension {d} unsupported")));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            InitialLaw::ConstantPoint(p) => {
                if !finite(p) {
                    return Err(Error::invalid("initial point must be finite"));
                }
            }
            InitialLaw::Gaussian { mean, sd } => {
                if sd.len() != d || !finite(mean) || sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(Error::invalid(
                        "Gaussian initial law needs finite mean and nonnegative sd per component",
                    ));
                }
            }
            InitialLaw::Mixture { weights, means, sds } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != sds.len() {
                    return Err(Error::invalid(
                        "mixture weights, means and sds must have equal nonzero length",
                    ));
                }
                if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("mixture weights must be positive and sum to 1"));
                }
                for (m, s) in means.iter().zip(sds) {
                    if m.len() != d || s.len() != d || !finite(m) || s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                        return Err(Error::invalid("mixture component has a bad mean or sd"));
                    }
                }
            }
            InitialLaw::Table { rows, .. } => {
                if rows.is_empty() {
                    return Err(Error::Empty("initial path table"));
                }
                if rows
                    .iter()
                    .any(|r| r.len() != rows[0].len() || r.len() % d != 0 || !finite(r))
                {
                    return Err(Error::invalid(
                        "initial path table rows must be finite with equal length",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Path of `particle` on the delay grid with `history + 1` points,
    /// oldest first, from the particle's initial noise block.
    pub fn sample_path(&self, streams: &NoiseStreams, particle: u64, history: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let draw = streams.initial(particle);
        let z = draw.normals();
        // the last word is reserved for discrete choices
        let u = draw.uniform(NORMALS_PER_DRAW - 1);
        let point: Vec<f64> = match self {
            InitialLaw::ConstantPoint(p) => p.clone(),
            InitialLaw::Gaussian { mean, sd } => (0..d).map(|i| mean[i] + sd[i] * z[i]).collect(),
            InitialLaw::Mixture { weights, means, sds } => {
                let k = pick(weights, u);
                (0..d).map(|i| means[k][i] + sds[k][i] * z[i]).collect()
            }
            InitialLaw::Table { rows, .. } => {
                let row = &rows[((u * rows.len() as f64) as usize).min(rows.len() - 1)];
                if row.len() != (history + 1) * d {
                    return Err(Error::Dimension {
                        expected: (history + 1) * d,
                        got: row.len(),
                        context: "initial path table row",
                    });
                }
                return Ok(row.clone());
            }
        };
        Ok(point.repeat(history + 1))
    }

    /// `E ξ_0`.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::ConstantPoint(p) => p.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Mixture { weights, means, .. } => {
                let d = self.dim();
                (0..d)
                    .map(|i| weights.iter().zip(means).map(|(w, m)| w * m[i]).sum())
                    .collect()
            }
            InitialLaw::Table { dim, rows } => {
                let off = rows[0].len() - dim;
                (0..*dim)
                    .map(|i| rows.iter().map(|r| r[off + i]).sum::<f64>() / rows.len() as f64)
                    .collect()
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            InitialLaw::ConstantPoint(p) => format!("point{p:?}"),
            InitialLaw::Gaussian { mean, sd } => format!("gaussian(mean={mean:?}, sd={sd:?})"),
            InitialLaw::Mixture { weights, means, sds } => {
                format!("mixture(weights={weights:?}, means={means:?}, sds={sds:?})")
            }
            InitialLaw::Table { dim, rows } => format!("table(dim={dim}, rows={})", rows.len()),
        }
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}
