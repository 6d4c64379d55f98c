//! CSV and gnuplot output.
//!
//! Every artifact becomes `<name>.csv`; plotted ones also get `<name>.gp`, a
//! gnuplot script that reads only that CSV and writes `<name>.png`. The file
//! `manifest.txt` lists each emitted file with its SHA-256.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{ComparisonRow, ErrorSeries, ErrorSummary};
use crate::error::{Error, Result};
use crate::transport::{GridDensity, L1Point};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    /// Mean/std error curves per split, plus a per-trajectory table.
    Errors {
        name: String,
        series: ErrorSeries,
        summary: ErrorSummary,
    },
    Comparison {
        name: String,
        rows: Vec<ComparisonRow>,
    },
    Density {
        name: String,
        density: GridDensity,
    },
    /// Loss per epoch.
    Loss {
        name: String,
        history: Vec<f64>,
    },
    /// Normalized L1 density error curves, one column per label.
    L1 {
        name: String,
        curves: Vec<(String, Vec<L1Point>)>,
    },
    /// Empirical W1 against time.
    W1 {
        name: String,
        points: Vec<(f64, f64)>,
    },
}

impl Artifact {
    pub fn name(&self) -> &str {
        match self {
            Artifact::Errors { name, .. }
            | Artifact::Comparison { name, .. }
            | Artifact::Density { name, .. }
            | Artifact::Loss { name, .. }
            | Artifact::L1 { name, .. }
            | Artifact::W1 { name, .. } => name,
        }
    }

    /// `(file name, contents)` pairs in emission order.
    pub fn render(&self) -> Vec<(String, String)> {
        let n = self.name();
        match self {
            Artifact::Errors { series, summary, .. } => vec![
                (format!("{n}.csv"), error_curves_csv(series, summary)),
                (format!("{n}_trajectories.csv"), per_trajectory_csv(series)),
                (format!("{n}.gp"), error_plot(n)),
            ],
            Artifact::Comparison { rows, .. } => vec![(format!("{n}.csv"), comparison_csv(rows))],
            Artifact::Density { density, .. } => vec![
                (format!("{n}.csv"), density.to_csv()),
                (format!("{n}.gp"), density_plot(n, density)),
            ],
            Artifact::Loss { history, .. } => {
                let mut s = String::from("epoch,loss\n");
                for (e, v) in history.iter().enumerate() {
                    let _ = writeln!(s, "{e},{v:e}");
                }
                vec![(format!("{n}.csv"), s), (format!("{n}.gp"), line_plot(n, "epoch", "loss", &["loss"], true))]
            }
            Artifact::L1 { curves, .. } => {
                let labels: Vec<&str> = curves.iter().map(|(l, _)| l.as_str()).collect();
                let mut s = format!("t,{}\n", labels.join(","));
                let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
                for i in 0..len {
                    let t = curves.iter().find_map(|(_, c)| c.get(i)).map(|p| p.t).unwrap_or(0.0);
                    s.push_str(&t.to_string());
                    for (_, c) in curves {
                        s.push(',');
                        if let Some(p) = c.get(i) {
                            let _ = write!(s, "{:e}", p.error);
                        }
                    }
                    s.push('\n');
                }
                vec![(format!("{n}.csv"), s), (format!("{n}.gp"), line_plot(n, "t", "normalized L1 error", &labels, false))]
            }
            Artifact::W1 { points, .. } => {
                let mut s = String::from("t,w1\n");
                for (t, w) in points {
                    let _ = writeln!(s, "{t},{w:e}");
                }
                vec![(format!("{n}.csv"), s), (format!("{n}.gp"), line_plot(n, "t", "W1", &["w1"], false))]
            }
        }
    }
}

fn error_curves_csv(s: &ErrorSeries, sum: &ErrorSummary) -> String {
    let mut out = String::from("t,train_mean,train_std,test_mean,test_std\n");
    for (l, t) in s.times.iter().enumerate() {
        let _ = writeln!(
            out,
            "{t},{:e},{:e},{:e},{:e}",
            sum.train.mean[l], sum.train.std[l], sum.test.mean[l], sum.test.std[l]
        );
    }
    out
}

fn per_trajectory_csv(s: &ErrorSeries) -> String {
    let mut out = String::from("trajectory,split");
    for t in &s.times {
        let _ = write!(out, ",t={t}");
    }
    out.push('\n');
    for (k, (row, split)) in s.errors.iter().zip(&s.splits).enumerate() {
        let _ = write!(out, "{k},{}", split.name());
        for e in row {
            let _ = write!(out, ",{e:e}");
        }
        out.push('\n');
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("P,kind,e_max,e_T,dof_paper,dof_literal\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{},{}",
            r.width, r.kind, r.e_max, r.e_t, r.dof_paper, r.dof_literal
        );
    }
    out
}

fn preamble(name: &str) -> String {
    format!("set datafile separator ','\nset terminal pngcairo size 800,600\nset output '{name}.png'\n")
}

fn error_plot(name: &str) -> String {
    let mut s = preamble(name);
    s.push_str("set key autotitle columnhead\nset xlabel 't'\nset ylabel 'error'\n");
    let _ = writeln!(
        s,
        "plot '{name}.csv' using 1:2 with lines lc rgb 'red' title 'train', \\\n     '{name}.csv' using 1:4 with lines lc rgb 'forest-green' title 'test'"
    );
    s
}

fn line_plot(name: &str, xlabel: &str, ylabel: &str, labels: &[&str], log_y: bool) -> String {
    let mut s = preamble(name);
    let _ = writeln!(s, "set xlabel '{xlabel}'\nset ylabel '{ylabel}'");
    if log_y {
        s.push_str("set logscale y\n");
    }
    let parts: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("'{name}.csv' skip 1 using 1:{} with lines title '{l}'", i + 2))
        .collect();
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s
}

fn density_plot(name: &str, d: &GridDensity) -> String {
    let g = &d.grid;
    let mut s = preamble(name);
    let _ = writeln!(
        s,
        "set title 't = {}'\nset xrange [{}:{}]\nset yrange [{}:{}]\nset size ratio -1\n\
         plot '{name}.csv' skip 3 matrix using ({} + $1 * {}):({} + $2 * {}):3 with image notitle",
        d.time,
        g.xmin,
        g.xmax,
        g.ymin,
        g.ymax,
        g.xmin,
        g.hx(),
        g.ymin,
        g.hy()
    );
    s
}

/// Writes every artifact under `out_dir` (created if missing) followed by the
/// manifest. Returns the written paths, manifest last.
pub fn emit(artifacts: &[Artifact], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut manifest = String::new();
    for a in artifacts {
        for (file, body) in a.render() {
            let path = out_dir.join(&file);
            fs::write(&path, &body).map_err(|e| Error::io(&path, e))?;
            let _ = writeln!(manifest, "{}  {file}", hex::encode(Sha256::digest(body.as_bytes())));
            written.push(path);
        }
    }
    let path = out_dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
