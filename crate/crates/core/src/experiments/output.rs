//! CSV rendering of experiment results.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::ExperimentResult;
use crate::error::{Error, Result};

pub const RUNS_HEADER: [&str; 19] = [
    "study",
    "n",
    "seed",
    "alpha",
    "beta",
    "lambda0",
    "lambda1",
    "k",
    "nu",
    "gamma_n",
    "I_n",
    "Z0",
    "Zbeta",
    "largest",
    "err_alpha",
    "err_beta",
    "err_l0",
    "err_l1",
    "failures",
];

const ESTIMATES_HEADER: [&str; 10] = [
    "study",
    "n",
    "replicate",
    "seed",
    "termination",
    "alpha_hat",
    "beta_hat",
    "lambda0_hat",
    "lambda1_hat",
    "failures",
];

const AGGREGATE_HEADER: [&str; 22] = [
    "group",
    "bin",
    "lo",
    "hi",
    "runs",
    "count_alpha",
    "mean_alpha",
    "sd_alpha",
    "count_beta",
    "mean_beta",
    "sd_beta",
    "count_l0",
    "mean_l0",
    "sd_l0",
    "count_l1",
    "mean_l1",
    "sd_l1",
    "failed_alpha",
    "failed_beta",
    "failed_l0",
    "failed_l1",
    "mean_avg",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut buf);
        wtr.write_record(header)?;
        fill(&mut wtr)?;
        wtr.flush().map_err(|e| Error::io("<buffer>", e))?;
    }
    Ok(buf)
}

impl ExperimentResult {
    /// Output files as `(name, bytes)`, in a fixed order.
    pub fn render(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = Vec::new();

        files.push((
            "runs.csv".to_string(),
            csv_bytes(&RUNS_HEADER, |w| {
                for r in &self.records {
                    let p = &r.params;
                    let mut row = vec![
                        r.study.name().to_string(),
                        p.n.to_string(),
                        r.seed.to_string(),
                        p.alpha.to_string(),
                        p.beta.to_string(),
                        p.lambda0().to_string(),
                        p.lambda1.to_string(),
                        p.k.to_string(),
                        p.nu.to_string(),
                        opt(r.gamma_n),
                        r.i_n.to_string(),
                        r.z0.to_string(),
                        r.z_beta.to_string(),
                        r.largest.to_string(),
                    ];
                    row.extend(r.errors.iter().map(|e| opt(*e)));
                    row.push(r.estimates.failures.describe());
                    w.write_record(&row)?;
                }
                Ok(())
            })?,
        ));

        files.push((
            "estimates.csv".to_string(),
            csv_bytes(&ESTIMATES_HEADER, |w| {
                for r in &self.records {
                    let mut row = vec![
                        r.study.name().to_string(),
                        r.params.n.to_string(),
                        r.replicate.to_string(),
                        r.seed.to_string(),
                        format!("{:?}", r.termination).to_lowercase(),
                    ];
                    row.extend(r.estimates.values().iter().map(|v| opt(*v)));
                    row.push(r.estimates.failures.describe());
                    w.write_record(&row)?;
                }
                Ok(())
            })?,
        ));

        files.push((
            "aggregate.csv".to_string(),
            csv_bytes(&AGGREGATE_HEADER, |w| {
                for a in &self.aggregates {
                    let mut row = vec![
                        a.group.clone(),
                        a.bin.to_string(),
                        opt(a.lo),
                        opt(a.hi),
                        a.runs.to_string(),
                    ];
                    for s in &a.errors {
                        row.push(s.map_or(0, |s| s.count).to_string());
                        row.push(opt(s.map(|s| s.mean)));
                        row.push(opt(s.map(|s| s.sd)));
                    }
                    row.extend(a.failed.iter().map(|f| f.to_string()));
                    row.push(opt(a.mean_avg));
                    w.write_record(&row)?;
                }
                Ok(())
            })?,
        ));

        if let Some(conv) = &self.convergence {
            files.push((
                "deviations.csv".to_string(),
                csv_bytes(&["n", "replicate", "seed", "D0", "D1", "Dbeta", "status"], |w| {
                    for d in &conv.deviations {
                        w.write_record([
                            d.n.to_string(),
                            d.replicate.to_string(),
                            d.seed.to_string(),
                            opt(d.d0),
                            opt(d.d1),
                            opt(d.d_beta),
                            d.status.token().to_string(),
                        ])?;
                    }
                    Ok(())
                })?,
            ));
            files.push((
                "deviation_summary.csv".to_string(),
                csv_bytes(
                    &["n", "runs", "defined", "median_D0", "median_D1", "median_Dbeta"],
                    |w| {
                        for s in &conv.summary {
                            w.write_record([
                                s.n.to_string(),
                                s.runs.to_string(),
                                s.defined.to_string(),
                                opt(s.median_d0),
                                opt(s.median_d1),
                                opt(s.median_d_beta),
                            ])?;
                        }
                        Ok(())
                    },
                )?,
            ));
            files.push((
                "trajectories.csv".to_string(),
                csv_bytes(&["n", "replicate", "seed", "t", "Z0", "Z1", "Zbeta"], |w| {
                    for tr in &conv.trajectories {
                        for p in &tr.path {
                            w.write_record([
                                tr.n.to_string(),
                                tr.replicate.to_string(),
                                tr.seed.to_string(),
                                p.t().to_string(),
                                p.z0().to_string(),
                                p.z1().to_string(),
                                p.z_beta().to_string(),
                            ])?;
                        }
                    }
                    Ok(())
                })?,
            ));
            files.push((
                "ode.csv".to_string(),
                csv_bytes(&["n", "K", "t", "y0", "y1", "ybeta"], |w| {
                    for track in &conv.odes {
                        for s in &track.grid {
                            w.write_record([
                                track.n.to_string(),
                                track.capacity.to_string(),
                                s.t.to_string(),
                                s.y0.to_string(),
                                s.y1.to_string(),
                                s.y_beta.to_string(),
                            ])?;
                        }
                    }
                    Ok(())
                })?,
            ));
        }
        Ok(files)
    }

    /// Writes the rendered files into `dir` and returns their SHA-256
    /// digests by file name.
    pub fn save(&self, dir: &Path) -> Result<Vec<(String, String)>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut digests = Vec::new();
        for (name, bytes) in self.render()? {
            let path = dir.join(&name);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            digests.push((name, hex::encode(Sha256::digest(&bytes))));
        }
        Ok(digests)
    }
}
