//! Trajectory datasets and their two on-disk forms.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! b"SAND" | u32 version | u32 header_len | header (UTF-8 key=value lines) | f64 payload
//! ```
//!
//! The payload holds every trajectory in index order, each as `(M+1)·d` values
//! row-major by knot. The CSV bundle is a directory with `manifest.txt` (the same
//! header text) and one `traj_NNNNN.csv` per trajectory with columns `t,x1..xd`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::VectorField;
use crate::ode::{integrate, TimeGrid, Trajectory};

pub const DATASET_MAGIC: &[u8; 4] = b"SAND";
pub const DATASET_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";

/// Initial points on a uniform tensor grid, `count` nodes per axis over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub dim: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: -2.0,
            hi: 2.0,
            count: 9,
            dim: 2,
        }
    }
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, count: usize, dim: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || dim == 0 || count == 0 || (count > 1 && hi <= lo) {
            return Err(Error::Config(format!(
                "invalid grid [{lo}, {hi}] with {count} nodes per axis in d={dim}"
            )));
        }
        Ok(GridSpec { lo, hi, count, dim })
    }

    pub fn with_step(lo: f64, hi: f64, step: f64, dim: usize) -> Result<Self> {
        let n = (hi - lo) / step;
        if !(step > 0.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Config(format!("step {step} does not tile [{lo}, {hi}]")));
        }
        Self::new(lo, hi, n.round() as usize + 1, dim)
    }

    pub fn node(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.lo;
        }
        if i + 1 == self.count {
            return self.hi;
        }
        self.lo + i as f64 * (self.hi - self.lo) / (self.count - 1) as f64
    }

    /// All points, first coordinate varying slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let total = self.count.pow(self.dim as u32);
        (0..total)
            .map(|mut k| {
                let mut p = vec![0.0; self.dim];
                for j in (0..self.dim).rev() {
                    p[j] = self.node(k % self.count);
                    k /= self.count;
                }
                p
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub system: String,
    pub dim: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Integrates every initial point on `grid` and splits the trajectories, putting
/// `floor(N/2)` indices chosen with `seed` into the training set.
pub fn generate_dataset<F: VectorField + ?Sized>(
    field: &F,
    points: &[Vec<f64>],
    grid: TimeGrid,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if points.is_empty() {
        return Err(Error::Config("no initial points".into()));
    }
    let trajectories = points
        .par_iter()
        .map(|p| integrate(field, p, grid))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = half_split(points.len(), seed);
    TrajectoryDataset::new(field.name(), grid, seed, trajectories, train, test)
}

fn half_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = sample(&mut rng, n, n / 2).into_vec();
    train.sort_unstable();
    let test = (0..n).filter(|i| train.binary_search(i).is_err()).collect();
    (train, test)
}

impl TrajectoryDataset {
    pub fn new(
        system: String,
        grid: TimeGrid,
        seed: u64,
        trajectories: Vec<Trajectory>,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let dim = trajectories.first().map(|t| t.dim).unwrap_or(0);
        let ds = TrajectoryDataset {
            system,
            dim,
            grid,
            seed,
            trajectories,
            train,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.trajectories.len();
        if n == 0 || self.dim == 0 {
            return Err(Error::Shape("dataset holds no trajectories".into()));
        }
        for (k, t) in self.trajectories.iter().enumerate() {
            if t.dim != self.dim || t.grid != self.grid {
                return Err(Error::Shape(format!("trajectory {k} disagrees with the dataset grid or dimension")));
            }
            if t.states.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("trajectory {k} has non-finite states")));
            }
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Shape(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("split does not cover every trajectory".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn initial_points(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().map(|t| t.initial().to_vec()).collect()
    }

    pub fn train_set(&self) -> impl Iterator<Item = &Trajectory> {
        self.train.iter().map(|&i| &self.trajectories[i])
    }

    pub fn test_set(&self) -> impl Iterator<Item = &Trajectory> {
        self.test.iter().map(|&i| &self.trajectories[i])
    }

    /// Same trajectories with every one of them in the training set.
    pub fn all_for_training(mut self) -> Self {
        self.train = (0..self.len()).collect();
        self.test.clear();
        self
    }

    fn header(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "system={}\ndim={}\nt0={}\nt1={}\nsteps={}\nseed={}\ntrajectories={}\ntrain={}\ntest={}\n",
            self.system,
            self.dim,
            self.grid.t0(),
            self.grid.t1(),
            self.grid.steps(),
            self.seed,
            self.len(),
            join(&self.train),
            join(&self.test)
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let payload_len = self.len() * self.grid.steps().saturating_add(1) * self.dim * 8;
        let mut out = Vec::with_capacity(12 + header.len() + payload_len);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in &self.trajectories {
            for v in &t.states {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |r: &str| Error::corrupt(path, r);
        if bytes.len() < 12 || &bytes[..4] != DATASET_MAGIC {
            return Err(corrupt("missing SAND magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = bytes
            .get(12..12 + hlen)
            .and_then(|h| std::str::from_utf8(h).ok())
            .ok_or_else(|| corrupt("truncated or non-UTF-8 header"))?;
        let meta = Header::parse(header, path)?;
        let payload = &bytes[12 + hlen..];
        let per = (meta.grid.steps() + 1) * meta.dim;
        if payload.len() != meta.count * per * 8 {
            return Err(corrupt(&format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                meta.count * per * 8
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let trajectories = values
            .chunks_exact(per)
            .map(|c| Trajectory::from_states(meta.grid, meta.dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        meta.into_dataset(trajectories, path)
    }

    /// Hex SHA-256 of the binary encoding; identical for both file forms.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn save_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = dir.join(MANIFEST);
        let text = format!("format=sanode-dataset\nversion={DATASET_VERSION}\n{}", self.header());
        fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        let mut head = vec!["t".to_string()];
        head.extend((1..=self.dim).map(|j| format!("x{j}")));
        for (k, traj) in self.trajectories.iter().enumerate() {
            let path = dir.join(trajectory_file(k));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            w.write_record(&head).map_err(|e| csv_error(&path, e))?;
            for l in 0..traj.knots() {
                let mut row = vec![self.grid.knot(l).to_string()];
                row.extend(traj.state(l).iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load_csv(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("format=sanode-dataset") {
            return Err(Error::corrupt(&manifest, "not a dataset manifest"));
        }
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("version="))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::corrupt(&manifest, "missing version line"))?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: manifest,
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let rest: Vec<&str> = lines.collect();
        let meta = Header::parse(&rest.join("\n"), &manifest)?;
        let mut trajectories = Vec::with_capacity(meta.count);
        for k in 0..meta.count {
            let path = dir.join(trajectory_file(k));
            let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
            let mut states = Vec::with_capacity((meta.grid.steps() + 1) * meta.dim);
            for (l, rec) in r.records().enumerate() {
                let rec = rec.map_err(|e| csv_error(&path, e))?;
                if rec.len() != meta.dim + 1 {
                    return Err(Error::corrupt(&path, format!("row {} has {} columns", l + 1, rec.len())));
                }
                for field in rec.iter().skip(1) {
                    let v: f64 = field
                        .trim()
                        .parse()
                        .map_err(|_| Error::corrupt(&path, format!("row {}: bad number `{field}`", l + 1)))?;
                    states.push(v);
                }
            }
            let traj = Trajectory::from_states(meta.grid, meta.dim, states)
                .map_err(|e| Error::corrupt(&path, e.to_string()))?;
            trajectories.push(traj);
        }
        meta.into_dataset(trajectories, &manifest)
    }

    /// Writes a CSV bundle when `path` is a directory (or has no extension), a binary
    /// file otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.is_dir() || path.extension().is_none() {
            self.save_csv(path)
        } else {
            self.save_binary(path)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Self::load_csv(path)
        } else {
            Self::load_binary(path)
        }
    }
}

fn trajectory_file(k: usize) -> String {
    format!("traj_{k:05}.csv")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::corrupt(path, format!("{other:?}")),
    }
}

struct Header {
    system: String,
    dim: usize,
    grid: TimeGrid,
    seed: u64,
    count: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Header {
    fn parse(text: &str, path: &Path) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| l.split_once('='))
            .collect();
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::corrupt(path, format!("header lacks `{k}`")));
        fn num<T: std::str::FromStr>(v: &str, k: &str, path: &Path) -> Result<T> {
            v.trim().parse().map_err(|_| Error::corrupt(path, format!("bad `{k}` value `{v}`")))
        }
        let indices = |k: &str| -> Result<Vec<usize>> {
            get(k)?.split_whitespace().map(|v| num(v, k, path)).collect()
        };
        let grid = TimeGrid::new(
            num(get("t0")?, "t0", path)?,
            num(get("t1")?, "t1", path)?,
            num(get("steps")?, "steps", path)?,
        )
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
        Ok(Header {
            system: get("system")?.to_string(),
            dim: num(get("dim")?, "dim", path)?,
            grid,
            seed: num(get("seed")?, "seed", path)?,
            count: num(get("trajectories")?, "trajectories", path)?,
            train: indices("train")?,
            test: indices("test")?,
        })
    }

    fn into_dataset(self, trajectories: Vec<Trajectory>, path: &Path) -> Result<TrajectoryDataset> {
        if trajectories.len() != self.count {
            return Err(Error::corrupt(path, "trajectory count disagrees with header"));
        }
        TrajectoryDataset::new(self.system, self.grid, self.seed, trajectories, self.train, self.test)
            .map_err(|e| Error::corrupt(path, e.to_string()))
    }
}
