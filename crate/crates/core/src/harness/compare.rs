//! Step-aligned comparison of training runs.

use std::io::Write;

use super::config::Mode;
use super::run::RunManifest;
use crate::error::{Error, Result};

/// One aggregate curve read back from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub env_steps: Vec<f64>,
    pub norm_entropy: (Vec<f64>, Vec<f64>),
    pub support: (Vec<f64>, Vec<f64>),
}

/// Column label for a training manifest, e.g. `parallel_m2_K1` or `single_K2`.
pub fn label(manifest: &RunManifest) -> Result<String> {
    let mode = manifest.mode()?;
    Ok(match mode {
        Mode::Pgpse => format!("parallel_m{}_K{}", manifest.config_value("m")?, manifest.config_value("K")?),
        Mode::SingleBaseline => format!("single_K{}", manifest.config_value("k_prime")?),
        Mode::Random => format!("random_m{}", manifest.config_value("m")?),
        other => return Err(Error::domain(format!("mode `{other}` has no training curve to compare"))),
    })
}

pub fn read_curve(manifest: &RunManifest) -> Result<Curve> {
    let path = manifest.aggregate_path();
    let mut rdr = csv::Reader::from_path(&path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::domain(format!("{}: missing column `{name}`", path.display())))
    };
    let idx = [
        col("env_steps")?,
        col("norm_entropy_mean")?,
        col("norm_entropy_std")?,
        col("support_mean")?,
        col("support_std")?,
    ];
    let mut cols: [Vec<f64>; 5] = Default::default();
    for rec in rdr.records() {
        let rec = rec?;
        for (c, &i) in cols.iter_mut().zip(&idx) {
            let field = rec.get(i).unwrap_or("");
            c.push(field.parse().map_err(|_| Error::domain(format!("{}: bad number `{field}`", path.display())))?);
        }
    }
    let [env_steps, hm, hs, sm, ss] = cols;
    Ok(Curve {
        label: label(manifest)?,
        env_steps,
        norm_entropy: (hm, hs),
        support: (sm, ss),
    })
}

/// Linear interpolation of `ys` over increasing `xs`; `None` outside the range.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let first = *xs.first()?;
    let last = *xs.last()?;
    if x < first || x > last {
        return None;
    }
    let hi = xs.partition_point(|&v| v < x);
    if xs[hi] == x {
        return Some(ys[hi]);
    }
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    Some(ys[lo] + w * (ys[hi] - ys[lo]))
}

/// Aligns the aggregate curves of training runs on cumulative environment
/// steps. Each run contributes four columns; cells outside a run's step range
/// are left empty.
pub fn compare<W: Write>(manifests: &[RunManifest], writer: W) -> Result<()> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::Usage("compare needs at least one manifest".into()))?;
    let env = first.env()?;
    for m in &manifests[1..] {
        if m.env()? != env {
            return Err(Error::domain(format!("cannot compare runs on `{env}` and `{}`", m.env()?)));
        }
    }
    let mut curves = manifests.iter().map(read_curve).collect::<Result<Vec<_>>>()?;
    for i in 0..curves.len() {
        let dupes = curves[..i].iter().filter(|c| c.label == curves[i].label).count();
        if dupes > 0 {
            curves[i].label = format!("{}_{}", curves[i].label, dupes + 1);
        }
    }

    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.env_steps.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["env_steps".to_string()];
    for c in &curves {
        for suffix in ["norm_entropy_mean", "norm_entropy_std", "support_mean", "support_std"] {
            header.push(format!("{}_{suffix}", c.label));
        }
    }
    w.write_record(&header)?;
    for &x in &grid {
        let mut row = vec![format!("{x}")];
        for c in &curves {
            for ys in [&c.norm_entropy.0, &c.norm_entropy.1, &c.support.0, &c.support.1] {
                row.push(interpolate(&c.env_steps, ys, x).map(|v| format!("{v:.17e}")).unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
