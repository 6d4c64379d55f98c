//! Densities sampled on rectangular node grids.
//!
//! File format (CSV): three header rows
//!
//! ```text
//! bounds,<xmin>,<xmax>,<ymin>,<ymax>
//! resolution,<nx>,<ny>
//! time,<t>
//! ```
//!
//! followed by `ny` rows of `nx` values; row `j` holds `y = y_j`, column `i` holds `x = x_i`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `nx × ny` nodes spanning `[xmin, xmax] × [ymin, ymax]`, boundaries included.
/// Each node stands for the `hx × hy` cell around it in quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
}

impl DensityGrid {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, nx: usize, ny: usize) -> Result<Self> {
        let ok = xmin.is_finite() && xmax.is_finite() && ymin.is_finite() && ymax.is_finite();
        if !ok || xmin >= xmax || ymin >= ymax || nx < 2 || ny < 2 {
            return Err(Error::Config(format!(
                "bad density grid [{xmin}, {xmax}]×[{ymin}, {ymax}] with {nx}×{ny} nodes"
            )));
        }
        Ok(DensityGrid { xmin, xmax, ymin, ymax, nx, ny })
    }

    /// `n × n` nodes on `[lo, hi]²`.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, hi, lo, hi, n, n)
    }

    pub fn hx(&self) -> f64 {
        (self.xmax - self.xmin) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.ymax - self.ymin) / (self.ny - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `idx` in row-major order.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx % self.nx, idx / self.nx);
        let x = if i + 1 == self.nx { self.xmax } else { self.xmin + i as f64 * self.hx() };
        let y = if j + 1 == self.ny { self.ymax } else { self.ymin + j as f64 * self.hy() };
        [x, y]
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: DensityGrid,
    pub time: f64,
    /// Row-major, `ny` rows of `nx`.
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: DensityGrid, time: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}×{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite density value {v}")));
        }
        Ok(GridDensity { grid, time, values })
    }

    /// Evaluates `f` at every node.
    pub fn sample(grid: DensityGrid, time: f64, f: impl Fn([f64; 2]) -> Result<f64>) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(grid, time, values)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    /// Cell-area-weighted sum of the values.
    pub fn total(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    /// Cell-area-weighted sum of `|values|`.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = format!(
            "bounds,{},{},{},{}\nresolution,{},{}\ntime,{}\n",
            g.xmin, g.xmax, g.ymin, g.ymax, g.nx, g.ny, self.time
        );
        for row in self.values.chunks(g.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let corrupt = |r: String| Error::corrupt(path, r);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let mut header = |tag: &str, n: usize| -> Result<Vec<String>> {
            let rec = records
                .next()
                .ok_or_else(|| corrupt(format!("missing `{tag}` row")))?
                .map_err(|e| corrupt(e.to_string()))?;
            if rec.get(0) != Some(tag) || rec.len() != n + 1 {
                return Err(corrupt(format!("expected `{tag}` row with {n} fields")));
            }
            Ok(rec.iter().skip(1).map(str::to_string).collect())
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| corrupt(format!("bad number `{v}`")));
        let b = header("bounds", 4)?;
        let r = header("resolution", 2)?;
        let t = header("time", 1)?;
        let count = |v: &str| v.trim().parse::<usize>().map_err(|_| corrupt(format!("bad count `{v}`")));
        let grid = DensityGrid::new(num(&b[0])?, num(&b[1])?, num(&b[2])?, num(&b[3])?, count(&r[0])?, count(&r[1])?)
            .map_err(|e| corrupt(e.to_string()))?;
        let mut values = Vec::with_capacity(grid.len());
        for rec in records {
            let rec = rec.map_err(|e| corrupt(e.to_string()))?;
            if rec.len() != grid.nx {
                return Err(corrupt(format!("row has {} values, expected {}", rec.len(), grid.nx)));
            }
            for v in rec.iter() {
                values.push(num(v)?);
            }
        }
        GridDensity::new(grid, num(&t[0])?, values).map_err(|e| corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// `Σ |approx − exact| · cell area / rho0_norm`.
pub fn l1_error(approx: &GridDensity, exact: &GridDensity, rho0_norm: f64) -> Result<f64> {
    if approx.grid != exact.grid {
        return Err(Error::Shape("L1 error needs identical grids".into()));
    }
    if !(rho0_norm > 0.0) {
        return Err(Error::Config(format!("normalizing L1 norm must be positive, got {rho0_norm}")));
    }
    let diff: f64 = approx
        .values
        .iter()
        .zip(&exact.values)
        .map(|(a, e)| (a - e).abs())
        .sum();
    Ok(diff * approx.grid.cell_area() / rho0_norm)
}
