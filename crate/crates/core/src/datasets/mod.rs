//! Synthetic counting datasets and dataset plumbing.
//!
//! A dataset here is a directory of PNG images plus a line-delimited JSON
//! manifest ([`manifest::DatasetManifest`]) that records, for every image,
//! the ground-truth count vector and enough provenance to re-derive it
//! (placed object boxes for synthesized images, source window for crops).
//!
//! Generators:
//! - [`multi_mnist`]: digit glyphs composited onto a black canvas without
//!   overlap, counts fixed per image.
//! - [`shapes`]: colored geometric primitives (circle / square / triangle)
//!   on a black background.
//! - [`cropper`]: fixed-size windows cut from larger box-annotated images,
//!   with window counts derived from box containment.

pub mod annotations;
pub mod cropper;
pub mod glyphs;
pub mod loader;
pub mod manifest;
pub mod multi_mnist;
pub mod shapes;
pub mod split;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class object counts for one image, indexed by class id.
///
/// Displayed as `[2 1 0]`. Values are raw counts; normalization (division by
/// the dataset's `max_count`) happens only where a model consumes them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountVector(pub Vec<u32>);

impl CountVector {
    pub fn zeros(n_classes: usize) -> Self {
        CountVector(vec![0; n_classes])
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Counts scaled to `[0, 1]` by `max_count`, the form models consume.
    pub fn normalized(&self, max_count: u32) -> Vec<f32> {
        let denom = max_count.max(1) as f32;
        self.0.iter().map(|&c| c as f32 / denom).collect()
    }

    /// Check membership in the support grid: `n_classes` entries, each at
    /// most `max_count`, total at most `max_total` when given.
    pub fn validate(&self, n_classes: usize, max_count: u32, max_total: Option<u32>) -> Result<()> {
        if self.n_classes() != n_classes {
            return Err(Error::bad_counts(
                self,
                format!("expected {n_classes} classes, got {}", self.n_classes()),
            ));
        }
        if let Some(&worst) = self.0.iter().max() {
            if worst > max_count {
                return Err(Error::bad_counts(
                    self,
                    format!("per-class count {worst} exceeds max_count {max_count}"),
                ));
            }
        }
        if let Some(cap) = max_total {
            if self.total() > cap {
                return Err(Error::bad_counts(
                    self,
                    format!("total {} exceeds max_total {cap}", self.total()),
                ));
            }
        }
        Ok(())
    }

    /// Parse a comma-separated list such as `"2,1,0"`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut counts = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            let value: u32 = part.parse().map_err(|_| Error::InvalidCountVector {
                got: text.to_string(),
                reason: format!("`{part}` is not a non-negative integer"),
            })?;
            counts.push(value);
        }
        if counts.is_empty() {
            return Err(Error::InvalidCountVector {
                got: text.to_string(),
                reason: "empty count list".to_string(),
            });
        }
        Ok(CountVector(counts))
    }
}

impl fmt::Display for CountVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// Image geometry of a dataset: height, width, channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl Resolution {
    pub fn gray(side: u32) -> Self {
        Resolution {
            height: side,
            width: side,
            channels: 1,
        }
    }

    pub fn rgb(side: u32) -> Self {
        Resolution {
            height: side,
            width: side,
            channels: 3,
        }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Enumerate the full count-vector support in lexicographic order:
/// every vector in `{0..=max_count}^n_classes`, optionally dropping those
/// whose total exceeds `max_total`.
///
/// The all-zero vector is included: an empty canvas is a valid scene.
pub fn enumerate_combinations(
    n_classes: usize,
    max_count: u32,
    max_total: Option<u32>,
) -> Vec<CountVector> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n_classes];
    loop {
        let candidate = CountVector(current.clone());
        if max_total.is_none_or(|cap| candidate.total() <= cap) {
            out.push(candidate);
        }
        // Odometer increment, most-significant digit first so the output is
        // lexicographically sorted.
        let mut pos = n_classes;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if current[pos] < max_count {
                current[pos] += 1;
                break;
            }
            current[pos] = 0;
        }
    }
}

/// Run `job(i)` for `i in 0..n` on up to `workers` threads and return the
/// results in index order. Serial-equivalent by construction: jobs must not
/// communicate (generators derive an rng per index), so the worker count
/// changes wall time only, never output.
pub(crate) fn run_indexed<T, F>(n: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(job).collect();
    }
    let chunk = n.div_ceil(workers);
    let chunks = std::thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || -> Result<Vec<T>> {
                    (w * chunk..((w + 1) * chunk).min(n)).map(job).collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect::<Result<Vec<Vec<T>>>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Guard against combinatorial explosion before enumerating.
pub fn check_combination_budget(n_classes: usize, max_count: u32) -> Result<()> {
    if n_classes == 0 {
        return Err(Error::InvalidConfig("n_classes must be at least 1".into()));
    }
    let per_class = max_count as u64 + 1;
    let mut total: u64 = 1;
    for _ in 0..n_classes {
        total = total.saturating_mul(per_class);
        if total > 1_000_000 {
            return Err(Error::InvalidConfig(format!(
                "count grid too large: ({max_count}+1)^{n_classes} combinations"
            )));
        }
    }
    Ok(())
}
