//! Sparse tensors over a square grid, and the rulebooks that drive sparse
//! convolution and pooling.
//!
//! A [`SparseTensor`] stores a feature vector per *active site* of a
//! `K x K` grid. Activity is defined purely by coordinate membership: a
//! site whose features are all zero is still active, and an absent site
//! contributes nothing anywhere. This is what keeps every operation
//! independent of the grid resolution; nothing in this module allocates
//! `O(K^2)` memory except the explicitly capped [`SparseTensor::to_dense`]
//! debug helper.
//!
//! A [`RuleBook`] is the gather/scatter plan for one layer application:
//! a list of `(input site, kernel offset, output site)` triples. Building
//! it costs `O(active sites * kernel area)` hash lookups, and applying a
//! layer is a single pass over the rules.

use std::collections::HashMap;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row/column position on a `K x K` grid.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Coord {
    pub i: u32,
    pub j: u32,
}

impl Coord {
    pub fn new(i: u32, j: u32) -> Self {
        Coord { i, j }
    }

    /// Packs the pair into one 64-bit key; ordering of keys equals
    /// lexicographic ordering of `(i, j)`.
    #[inline]
    pub(crate) fn key(self) -> u64 {
        (u64::from(self.i) << 32) | u64::from(self.j)
    }

    #[inline]
    pub(crate) fn from_key(key: u64) -> Self {
        Coord {
            i: (key >> 32) as u32,
            j: key as u32,
        }
    }
}

/// Feature vectors attached to the active sites of a `K x K` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    grid_size: u32,
    channels: usize,
    sites: HashMap<u64, Vec<f64>>,
}

impl SparseTensor {
    /// Creates an empty tensor.
    pub fn new(grid_size: u32, channels: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::config("grid_size must be at least 1"));
        }
        if channels == 0 {
            return Err(Error::config("channels must be at least 1"));
        }
        Ok(SparseTensor {
            grid_size,
            channels,
            sites: HashMap::new(),
        })
    }

    /// Builds a one-channel binary map: every listed site becomes active
    /// with feature value 1.0. Duplicates collapse to a single site.
    pub fn from_points(points: &[Coord], grid_size: u32) -> Result<Self> {
        let mut t = SparseTensor::new(grid_size, 1)?;
        for &p in points {
            if p.i >= grid_size || p.j >= grid_size {
                return Err(Error::data(format!(
                    "point ({}, {}) outside grid of size {}",
                    p.i, p.j, grid_size
                )));
            }
            t.sites.insert(p.key(), vec![1.0]);
        }
        Ok(t)
    }

    pub fn grid_size(&self) -> u32 {
        self.grid_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of active sites.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, at: Coord) -> bool {
        self.sites.contains_key(&at.key())
    }

    pub fn get(&self, at: Coord) -> Option<&[f64]> {
        self.sites.get(&at.key()).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, at: Coord) -> Option<&mut [f64]> {
        self.sites.get_mut(&at.key()).map(Vec::as_mut_slice)
    }

    /// Activates `at` with the given feature vector, replacing any
    /// previous value.
    pub fn insert(&mut self, at: Coord, features: Vec<f64>) -> Result<()> {
        if at.i >= self.grid_size || at.j >= self.grid_size {
            return Err(Error::contract(format!(
                "site ({}, {}) outside grid of size {}",
                at.i, at.j, self.grid_size
            )));
        }
        if features.len() != self.channels {
            return Err(Error::contract(format!(
                "feature vector has {} channels, tensor has {}",
                features.len(),
                self.channels
            )));
        }
        self.sites.insert(at.key(), features);
        Ok(())
    }

    /// Active coordinates in ascending `(i, j)` order. All deterministic
    /// iteration in the crate goes through this ordering.
    pub fn sorted_coords(&self) -> Vec<Coord> {
        let mut keys: Vec<u64> = self.sites.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter().map(Coord::from_key).collect()
    }

    /// Iterates sites in ascending `(i, j)` order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = (Coord, &[f64])> {
        let mut entries: Vec<(u64, &Vec<f64>)> =
            self.sites.iter().map(|(k, v)| (*k, v)).collect();
        entries.sort_unstable_by_key(|(k, _)| *k);
        entries
            .into_iter()
            .map(|(k, v)| (Coord::from_key(k), v.as_slice()))
    }

    /// Materialises the full dense grid, row-major with the channel as the
    /// innermost axis. Debugging and oracle-checking only; refuses grids
    /// larger than 1024 so nobody densifies a production-scale map by
    /// accident.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        const DENSE_LIMIT: u32 = 1024;
        if self.grid_size > DENSE_LIMIT {
            return Err(Error::contract(format!(
                "to_dense refused: grid size {} exceeds the {} limit",
                self.grid_size, DENSE_LIMIT
            )));
        }
        let k = self.grid_size as usize;
        let mut dense = vec![0.0; k * k * self.channels];
        for (key, feats) in &self.sites {
            let at = Coord::from_key(*key);
            let base = (at.i as usize * k + at.j as usize) * self.channels;
            dense[base..base + self.channels].copy_from_slice(feats);
        }
        Ok(dense)
    }
}

/// What kind of layer a rulebook feeds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleBookKind {
    /// Same-support convolution: outputs exist exactly at input sites.
    Submanifold,
    /// 2x2 stride-2 max pooling: output site = input site halved.
    Pool2,
}

/// One gather/scatter instruction. Indices refer to the rulebook's
/// `input_support` / `output_support` arrays, which are sorted by `(i, j)`.
#[derive(Clone, Copy, Debug)]
pub struct Rule {
    pub input: u32,
    pub offset: u16,
    pub output: u32,
}

/// Gather/scatter plan for applying one sparse layer to one support.
#[derive(Clone, Debug)]
pub struct RuleBook {
    kind: RuleBookKind,
    kernel_size: usize,
    input_grid: u32,
    output_grid: u32,
    input_support: Vec<Coord>,
    output_support: Vec<Coord>,
    rules: Vec<Rule>,
}

impl RuleBook {
    pub fn kind(&self) -> RuleBookKind {
        self.kind
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn input_grid(&self) -> u32 {
        self.input_grid
    }

    pub fn output_grid(&self) -> u32 {
        self.output_grid
    }

    pub fn input_support(&self) -> &[Coord] {
        &self.input_support
    }

    pub fn output_support(&self) -> &[Coord] {
        &self.output_support
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Resolves a rule back to `(input site, offset index, output site)`.
    pub fn rule_sites(&self, rule: Rule) -> (Coord, usize, Coord) {
        (
            self.input_support[rule.input as usize],
            rule.offset as usize,
            self.output_support[rule.output as usize],
        )
    }
}

/// Plans a submanifold convolution over the active sites of `x`.
///
/// The convolution convention is cross-correlation: output `u` reads input
/// `u + delta` for every kernel offset `delta` in
/// `[-k/2, k/2] x [-k/2, k/2]`, and `offset = (di + k/2) * k + (dj + k/2)`.
/// A rule is emitted only when `u + delta` is itself active, and outputs
/// exist exactly at the input sites, so the support never grows or
/// shrinks. Rules come out sorted by `(output site, offset)`.
pub fn build_submanifold_rulebook(x: &SparseTensor, kernel_size: usize) -> Result<RuleBook> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::config(format!(
            "submanifold kernel size must be odd and positive, got {kernel_size}"
        )));
    }
    let support = x.sorted_coords();
    let index: HashMap<u64, u32> = support
        .iter()
        .enumerate()
        .map(|(n, c)| (c.key(), n as u32))
        .collect();

    let r = (kernel_size / 2) as i64;
    let k = kernel_size as i64;
    let grid = i64::from(x.grid_size());
    let mut rules = Vec::new();
    for (out_idx, u) in support.iter().enumerate() {
        for di in -r..=r {
            let ni = i64::from(u.i) + di;
            if ni < 0 || ni >= grid {
                continue;
            }
            for dj in -r..=r {
                let nj = i64::from(u.j) + dj;
                if nj < 0 || nj >= grid {
                    continue;
                }
                let neighbor = Coord::new(ni as u32, nj as u32);
                if let Some(&in_idx) = index.get(&neighbor.key()) {
                    rules.push(Rule {
                        input: in_idx,
                        offset: ((di + r) * k + (dj + r)) as u16,
                        output: out_idx as u32,
                    });
                }
            }
        }
    }

    Ok(RuleBook {
        kind: RuleBookKind::Submanifold,
        kernel_size,
        input_grid: x.grid_size(),
        output_grid: x.grid_size(),
        input_support: support.clone(),
        output_support: support,
        rules,
    })
}

/// Plans a 2x2 stride-2 max pooling over the active sites of `x`.
///
/// Input site `(i, j)` maps to output site `(i / 2, j / 2)` on a grid of
/// size `ceil(K / 2)`; the offset index records the position inside the
/// window as `(i % 2) * 2 + j % 2`. Every input site appears in exactly
/// one rule, and rules come out sorted by `(output site, offset)`.
pub fn build_pool_rulebook(x: &SparseTensor) -> Result<RuleBook> {
    let support = x.sorted_coords();
    let mut entries: Vec<(Coord, u16, u32)> = support
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let out = Coord::new(c.i / 2, c.j / 2);
            let offset = ((c.i % 2) * 2 + c.j % 2) as u16;
            (out, offset, n as u32)
        })
        .collect();
    entries.sort_unstable_by_key(|(out, offset, _)| (out.key(), *offset));

    let mut output_support: Vec<Coord> = Vec::new();
    let mut rules = Vec::with_capacity(entries.len());
    for (out, offset, in_idx) in entries {
        if output_support.last() != Some(&out) {
            output_support.push(out);
        }
        rules.push(Rule {
            input: in_idx,
            offset,
            output: (output_support.len() - 1) as u32,
        });
    }

    Ok(RuleBook {
        kind: RuleBookKind::Pool2,
        kernel_size: 2,
        input_grid: x.grid_size(),
        output_grid: x.grid_size().div_ceil(2),
        input_support: support,
        output_support,
        rules,
    })
}
