//! Path-parallel evaluation with a reduction whose result does not depend on
//! how the paths were split between workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paths per work unit. Fixed, so the unit boundaries never depend on the
/// worker count.
pub const CHUNK: u64 = 1024;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "IBPLAB_THREADS";

/// Per-path rows for the contiguous path range starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialBuffer {
    pub start: u64,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PartialBuffer {
    pub fn new(start: u64, width: usize) -> Self {
        Self {
            start,
            width,
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> u64 {
        self.values.len().checked_div(self.width).unwrap_or(0) as u64
    }
}

/// Mean and spread of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub n: u64,
    pub mean: f64,
    /// Unbiased sample variance (0 for fewer than two samples).
    pub variance: f64,
}

impl ColumnStats {
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance / self.n as f64).sqrt()
        }
    }

    pub fn from_values<I: IntoIterator<Item = f64> + Clone>(values: I) -> Self {
        let (n, sum) = values
            .clone()
            .into_iter()
            .fold((0u64, Neumaier::default()), |(n, mut s), x| {
                s.add(x);
                (n + 1, s)
            });
        if n == 0 {
            return Self {
                n: 0,
                mean: 0.0,
                variance: 0.0,
            };
        }
        let mean = sum.value() / n as f64;
        let variance = if n < 2 {
            0.0
        } else {
            compensated_sum(values.into_iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64
        };
        Self { n, mean, variance }
    }
}

/// Mean with standard error, as reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: u64,
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `mean / se`, with `0/0 = 0`.
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.mean / self.se
        } else if self.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.mean)
        }
    }
}

impl From<ColumnStats> for Estimate {
    fn from(s: ColumnStats) -> Self {
        Self {
            n: s.n,
            mean: s.mean,
            se: s.se(),
        }
    }
}

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Neumaier::default();
    values.into_iter().for_each(|x| acc.add(x));
    acc.value()
}

/// All per-path rows merged in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    width: usize,
    values: Vec<f64>,
}

impl Reduced {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn paths(&self) -> u64 {
        self.values.len().checked_div(self.width).unwrap_or(0) as u64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values.iter().skip(c).step_by(self.width.max(1)).copied()
    }

    pub fn stats(&self, c: usize) -> ColumnStats {
        ColumnStats::from_values(self.column(c))
    }

    /// Statistics of a quantity derived from each row.
    pub fn stats_of<F: Fn(&[f64]) -> f64>(&self, f: F) -> ColumnStats {
        let width = self.width.max(1);
        ColumnStats::from_values(self.values.chunks_exact(width).map(&f))
    }
}

/// Merge buffers by path index. Buffers may arrive in any order but must
/// tile a contiguous range starting at the smallest `start`.
pub fn reduce_deterministic(mut partials: Vec<PartialBuffer>) -> Result<Reduced> {
    partials.retain(|p| p.rows() > 0);
    partials.sort_by_key(|p| p.start);
    let width = partials.first().map_or(0, |p| p.width);
    let mut next = partials.first().map_or(0, |p| p.start);
    let mut values = Vec::with_capacity(partials.iter().map(|p| p.values.len()).sum());
    for p in partials {
        if p.width != width {
            return Err(Error::InvalidParameter(format!(
                "buffer at {} has width {} instead of {width}",
                p.start, p.width
            )));
        }
        if p.start != next {
            return Err(Error::BadRanges(p.start));
        }
        next = p.start + p.rows();
        values.extend(p.values);
    }
    Ok(Reduced { width, values })
}

/// Worker count from `IBPLAB_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluate `f(path_index, row)` for every path on `workers` threads; `f`
/// appends exactly `width` values per path.
pub fn run_paths<F>(paths: u64, width: usize, workers: usize, f: F) -> Result<Reduced>
where
    F: Fn(u64, &mut Vec<f64>) -> Result<()> + Sync,
{
    run_paths_chunked(paths, width, workers, CHUNK, f)
}

/// [`run_paths`] with an explicit work-unit size (e.g. 1 for long chains).
pub fn run_paths_chunked<F>(paths: u64, width: usize, workers: usize, chunk: u64, f: F) -> Result<Reduced>
where
    F: Fn(u64, &mut Vec<f64>) -> Result<()> + Sync,
{
    let chunk = chunk.max(1);
    let chunks = paths.div_ceil(chunk);
    let work = |c: u64| -> Result<PartialBuffer> {
        let start = c * chunk;
        let end = (start + chunk).min(paths);
        let mut buf = PartialBuffer::new(start, width);
        buf.values.reserve(((end - start) as usize) * width);
        for i in start..end {
            let before = buf.values.len();
            f(i, &mut buf.values)?;
            if buf.values.len() != before + width {
                return Err(Error::InvalidParameter(format!(
                    "path {i} produced {} values instead of {width}",
                    buf.values.len() - before
                )));
            }
        }
        Ok(buf)
    };
    let results: Vec<Result<PartialBuffer>> = if workers <= 1 {
        (0..chunks).map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..chunks).into_par_iter().map(work).collect())
    };
    let buffers = results.into_iter().collect::<Result<Vec<_>>>()?;
    reduce_deterministic(buffers)
}
