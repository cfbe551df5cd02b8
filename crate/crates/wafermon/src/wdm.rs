//! Wafer defect maps: the labeled point sets everything else consumes.
//!
//! A map lives on a `K x K` grid and records defective die positions
//! inside the wafer disk (radius `R`, centered on the grid). Maps travel
//! as JSON Lines (`.wdm.jsonl`), one record per line:
//!
//! ```text
//! {"id":"ring-00001","k":512,"radius":245.76,"label":"Ring","defects":[[12,300],...]}
//! ```
//!
//! `label` may be `null` for unlabeled maps. Lines starting with `#` are
//! comments; writers use the first line to stamp provenance. Defects are
//! stored sorted and deduplicated, so re-encoding a decoded file is
//! byte-stable.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{Coord, SparseTensor};

/// The thirteen wafer-map pattern classes, in alphabetical order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum ClassLabel {
    BasketBall,
    ClusterBig,
    ClusterSmall,
    Donut,
    Fingerprints,
    GeoScratch,
    Grid,
    HalfMoon,
    Incomplete,
    Normal,
    Ring,
    Slice,
    ZigZag,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 13] = [
        ClassLabel::BasketBall,
        ClassLabel::ClusterBig,
        ClassLabel::ClusterSmall,
        ClassLabel::Donut,
        ClassLabel::Fingerprints,
        ClassLabel::GeoScratch,
        ClassLabel::Grid,
        ClassLabel::HalfMoon,
        ClassLabel::Incomplete,
        ClassLabel::Normal,
        ClassLabel::Ring,
        ClassLabel::Slice,
        ClassLabel::ZigZag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::BasketBall => "BasketBall",
            ClassLabel::ClusterBig => "ClusterBig",
            ClassLabel::ClusterSmall => "ClusterSmall",
            ClassLabel::Donut => "Donut",
            ClassLabel::Fingerprints => "Fingerprints",
            ClassLabel::GeoScratch => "GeoScratch",
            ClassLabel::Grid => "Grid",
            ClassLabel::HalfMoon => "HalfMoon",
            ClassLabel::Incomplete => "Incomplete",
            ClassLabel::Normal => "Normal",
            ClassLabel::Ring => "Ring",
            ClassLabel::Slice => "Slice",
            ClassLabel::ZigZag => "ZigZag",
        }
    }

    /// Default class-frequency profile for mixed synthetic datasets,
    /// mirroring how lopsided real production lines are: the Normal class
    /// dominates and several defect patterns are two orders of magnitude
    /// rarer.
    pub fn reference_counts() -> [(ClassLabel, u32); 13] {
        [
            (ClassLabel::BasketBall, 74),
            (ClassLabel::ClusterBig, 537),
            (ClassLabel::ClusterSmall, 4393),
            (ClassLabel::Donut, 418),
            (ClassLabel::Fingerprints, 371),
            (ClassLabel::GeoScratch, 642),
            (ClassLabel::Grid, 283),
            (ClassLabel::HalfMoon, 568),
            (ClassLabel::Incomplete, 2946),
            (ClassLabel::Normal, 20309),
            (ClassLabel::Ring, 798),
            (ClassLabel::Slice, 71),
            (ClassLabel::ZigZag, 483),
        ]
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .iter()
            .find(|l| l.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
                Error::data(format!(
                    "unknown class label {s:?}; valid labels: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// One wafer defect map.
#[derive(Clone, Debug, PartialEq)]
pub struct Wdm {
    pub id: String,
    pub grid_size: u32,
    pub radius: f64,
    pub label: Option<ClassLabel>,
    defects: Vec<Coord>,
}

impl Wdm {
    /// Builds a map, sorting and deduplicating the defect list. Defects
    /// must lie on the grid; defects outside the wafer disk are accepted
    /// with a warning, since only generators guarantee the disk bound.
    pub fn new(
        id: impl Into<String>,
        grid_size: u32,
        radius: f64,
        label: Option<ClassLabel>,
        mut defects: Vec<Coord>,
    ) -> Result<Self> {
        let id = id.into();
        if grid_size == 0 {
            return Err(Error::data(format!("map {id}: grid size must be positive")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::data(format!("map {id}: radius must be positive")));
        }
        let center = (grid_size as f64 - 1.0) / 2.0;
        let mut outside = 0usize;
        for d in &defects {
            if d.i >= grid_size || d.j >= grid_size {
                return Err(Error::data(format!(
                    "map {id}: defect ({}, {}) outside grid of size {grid_size}",
                    d.i, d.j
                )));
            }
            let (di, dj) = (f64::from(d.i) - center, f64::from(d.j) - center);
            if (di * di + dj * dj).sqrt() > radius + 1e-9 {
                outside += 1;
            }
        }
        if outside > 0 {
            log::warn!("map {id}: {outside} defect(s) lie outside the wafer disk");
        }
        defects.sort_unstable();
        defects.dedup();
        Ok(Wdm {
            id,
            grid_size,
            radius,
            label,
            defects,
        })
    }

    pub fn defects(&self) -> &[Coord] {
        &self.defects
    }

    pub fn num_defects(&self) -> usize {
        self.defects.len()
    }

    /// Grid center; the disk is centered here regardless of parity of
    /// `grid_size`.
    pub fn center(&self) -> (f64, f64) {
        let c = (self.grid_size as f64 - 1.0) / 2.0;
        (c, c)
    }

    /// One-channel binary tensor with an active site per defect.
    pub fn to_tensor(&self) -> Result<SparseTensor> {
        SparseTensor::from_points(&self.defects, self.grid_size)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WdmRecord {
    id: String,
    k: u32,
    radius: f64,
    label: Option<String>,
    defects: Vec<(u32, u32)>,
}

/// Writes maps as `.wdm.jsonl`. When provenance is given, the first line
/// is a `#` comment carrying the config hash and seed.
pub fn write_jsonl(
    path: impl AsRef<Path>,
    maps: &[Wdm],
    provenance: Option<&crate::Provenance>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(p) = provenance {
        writeln!(out, "# config_hash={} seed={}", p.config_hash, p.seed)?;
    }
    for m in maps {
        let rec = WdmRecord {
            id: m.id.clone(),
            k: m.grid_size,
            radius: m.radius,
            label: m.label.map(|l| l.as_str().to_string()),
            defects: m.defects.iter().map(|c| (c.i, c.j)).collect(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::data(format!("failed to encode map {}: {e}", m.id)))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `.wdm.jsonl` file, skipping `#` comment lines and blank lines.
/// Parse errors report the offending line number.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Wdm>> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    let mut maps = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: WdmRecord = serde_json::from_str(trimmed).map_err(|e| {
            Error::data(format!("{}:{}: malformed record: {e}", path.display(), n + 1))
        })?;
        let label = rec
            .label
            .as_deref()
            .map(ClassLabel::from_str)
            .transpose()
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let defects = rec
            .defects
            .iter()
            .map(|&(i, j)| Coord::new(i, j))
            .collect();
        let map = Wdm::new(rec.id, rec.k, rec.radius, label, defects)
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        maps.push(map);
    }
    Ok(maps)
}

/// Split membership by map id: one stratified partition into a training
/// split, a small density-fit split and a small threshold-calibration
/// split.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub config_hash: String,
    pub seed: u64,
    pub fractions: (f64, f64, f64),
    pub train: Vec<String>,
    pub gmm_fit: Vec<String>,
    pub threshold: Vec<String>,
}

impl DatasetSplit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("failed to encode split manifest: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json)
            .map_err(|e| Error::data(format!("{}: malformed split manifest: {e}", path.display())))
    }

    /// Resolves the id lists back to maps, erroring on unknown ids.
    pub fn select<'a>(&self, maps: &'a [Wdm]) -> Result<(Vec<&'a Wdm>, Vec<&'a Wdm>, Vec<&'a Wdm>)> {
        let by_id: std::collections::HashMap<&str, &Wdm> =
            maps.iter().map(|m| (m.id.as_str(), m)).collect();
        let resolve = |ids: &[String]| -> Result<Vec<&'a Wdm>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::data(format!("split references unknown id {id:?}")))
                })
                .collect()
        };
        Ok((
            resolve(&self.train)?,
            resolve(&self.gmm_fit)?,
            resolve(&self.threshold)?,
        ))
    }
}

/// Stratified split into (train, density-fit, threshold) fractions, per
/// class, within one sample of the requested proportions. Classes with
/// fewer than three samples go entirely to training (warned), since they
/// cannot populate three disjoint splits.
pub fn split_dataset(maps: &[Wdm], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (f_train, f_fit, f_thr) = fractions;
    for f in [f_train, f_fit, f_thr] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config(format!("split fraction {f} outside [0, 1]")));
        }
    }
    if (f_train + f_fit + f_thr - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must sum to 1, got {}",
            f_train + f_fit + f_thr
        )));
    }

    let mut seen = std::collections::HashSet::new();
    for m in maps {
        if !seen.insert(m.id.as_str()) {
            return Err(Error::data(format!("duplicate map id {:?}", m.id)));
        }
        if m.label.is_none() {
            return Err(Error::data(format!(
                "map {:?} is unlabeled; splits need labeled data",
                m.id
            )));
        }
    }

    let mut by_class: std::collections::BTreeMap<ClassLabel, Vec<&Wdm>> =
        std::collections::BTreeMap::new();
    for m in maps {
        by_class.entry(m.label.unwrap()).or_default().push(m);
    }

    let mut split = DatasetSplit {
        config_hash: String::new(),
        seed,
        fractions,
        train: Vec::new(),
        gmm_fit: Vec::new(),
        threshold: Vec::new(),
    };
    for (class_idx, (label, members)) in by_class.into_iter().enumerate() {
        let mut members = members;
        let n = members.len();
        if n < 3 {
            log::warn!(
                "class {label} has only {n} sample(s); assigning all to the training split"
            );
            split.train.extend(members.iter().map(|m| m.id.clone()));
            continue;
        }
        let mut rng = crate::rng::stream(seed, &[class_idx as u64]);
        members.shuffle(&mut rng);
        let mut n_fit = (f_fit * n as f64).round() as usize;
        let mut n_thr = (f_thr * n as f64).round() as usize;
        while n_fit + n_thr > n {
            if n_thr > 0 {
                n_thr -= 1;
            } else {
                n_fit -= 1;
            }
        }
        for (k, m) in members.iter().enumerate() {
            if k < n_fit {
                split.gmm_fit.push(m.id.clone());
            } else if k < n_fit + n_thr {
                split.threshold.push(m.id.clone());
            } else {
                split.train.push(m.id.clone());
            }
        }
    }
    split.train.sort_unstable();
    split.gmm_fit.sort_unstable();
    split.threshold.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(id: &str, label: Option<ClassLabel>, defects: &[(u32, u32)]) -> Wdm {
        let coords: Vec<Coord> = defects.iter().map(|&(i, j)| Coord::new(i, j)).collect();
        Wdm::new(id, 64, 30.0, label, coords).unwrap()
    }

    #[test]
    fn labels_roundtrip_through_strings() {
        for l in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_str(l.as_str()).unwrap(), l);
        }
        assert!(ClassLabel::from_str("Donuts").is_err());
    }

    #[test]
    fn reference_counts_cover_all_classes() {
        let counts = ClassLabel::reference_counts();
        assert_eq!(counts.len(), 13);
        let total: u32 = counts.iter().map(|(_, n)| n).sum();
        assert_eq!(total, 31_893);
        // Normal dominates everything else combined.
        let normal = counts
            .iter()
            .find(|(l, _)| *l == ClassLabel::Normal)
            .unwrap()
            .1;
        assert!(normal * 2 > total);
    }

    #[test]
    fn wdm_sorts_and_dedups_defects() {
        let w = map("a", None, &[(5, 5), (1, 2), (5, 5), (1, 1)]);
        assert_eq!(
            w.defects(),
            &[Coord::new(1, 1), Coord::new(1, 2), Coord::new(5, 5)][..]
        );
    }

    #[test]
    fn wdm_rejects_out_of_grid_defects() {
        let r = Wdm::new("a", 8, 3.5, None, vec![Coord::new(8, 0)]);
        assert!(r.is_err());
    }

    #[test]
    fn jsonl_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wdm.jsonl");
        let maps = vec![
            map("a", Some(ClassLabel::Ring), &[(3, 4), (1, 1)]),
            map("b", None, &[(2, 2)]),
        ];
        let prov = crate::Provenance {
            config_hash: "abc123".into(),
            seed: 7,
        };
        write_jsonl(&path, &maps, Some(&prov)).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, maps);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc123 seed=7"));
        assert!(text.contains("\"label\":\"Ring\""));
        assert!(text.contains("\"label\":null"));
        assert!(text.contains("\"defects\":[[1,1],[3,4]]"));
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wdm.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"k\":8,\"radius\":3.5,\"label\":null,\"defects\":[]}\nnot json\n").unwrap();
        let err = read_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "error should name line 2: {err}");

        std::fs::write(
            &path,
            "{\"id\":\"a\",\"k\":8,\"radius\":3.5,\"label\":\"NoSuch\",\"defects\":[]}\n",
        )
        .unwrap();
        let err = read_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("NoSuch") && err.contains("valid labels"));
    }

    #[test]
    fn jsonl_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.wdm.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"k\":8,\"radius\":3.5,\"label\":null,\"defects\":[],\"extra\":1}\n",
        )
        .unwrap();
        assert!(read_jsonl(&path).is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_exhaustive() {
        let mut maps = Vec::new();
        for c in [ClassLabel::Normal, ClassLabel::Ring] {
            for n in 0..100 {
                maps.push(map(&format!("{c}-{n}"), Some(c), &[(n % 8, n / 16)]));
            }
        }
        let split = split_dataset(&maps, (0.9, 0.05, 0.05), 11).unwrap();
        assert_eq!(split.train.len(), 180);
        assert_eq!(split.gmm_fit.len(), 10);
        assert_eq!(split.threshold.len(), 10);
        // Per-class proportions hold exactly at n=100.
        for c in ["Normal", "Ring"] {
            assert_eq!(split.train.iter().filter(|id| id.starts_with(c)).count(), 90);
            assert_eq!(split.gmm_fit.iter().filter(|id| id.starts_with(c)).count(), 5);
        }
        let mut all: Vec<&String> = split
            .train
            .iter()
            .chain(&split.gmm_fit)
            .chain(&split.threshold)
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 200);

        // Same seed, same split.
        let again = split_dataset(&maps, (0.9, 0.05, 0.05), 11).unwrap();
        assert_eq!(again.train, split.train);
        assert_eq!(again.gmm_fit, split.gmm_fit);
    }

    #[test]
    fn tiny_class_falls_back_to_training() {
        let mut maps = vec![
            map("slice-0", Some(ClassLabel::Slice), &[(1, 1)]),
            map("slice-1", Some(ClassLabel::Slice), &[(2, 2)]),
        ];
        for n in 0..20 {
            maps.push(map(&format!("normal-{n}"), Some(ClassLabel::Normal), &[(n, n)]));
        }
        let split = split_dataset(&maps, (0.9, 0.05, 0.05), 3).unwrap();
        assert!(split.train.iter().any(|id| id == "slice-0"));
        assert!(split.train.iter().any(|id| id == "slice-1"));
        assert!(!split.gmm_fit.iter().any(|id| id.starts_with("slice")));
        assert!(!split.threshold.iter().any(|id| id.starts_with("slice")));
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let maps = vec![map("a", Some(ClassLabel::Normal), &[(1, 1)])];
        assert!(split_dataset(&maps, (0.8, 0.1, 0.2), 0).is_err());
        let unlabeled = vec![map("a", None, &[(1, 1)])];
        assert!(split_dataset(&unlabeled, (0.9, 0.05, 0.05), 0).is_err());
        let dup = vec![
            map("a", Some(ClassLabel::Normal), &[(1, 1)]),
            map("a", Some(ClassLabel::Normal), &[(2, 2)]),
        ];
        assert!(split_dataset(&dup, (0.9, 0.05, 0.05), 0).is_err());
    }

    #[test]
    fn manifest_roundtrip_and_selection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let maps = vec![
            map("a", Some(ClassLabel::Normal), &[(1, 1)]),
            map("b", Some(ClassLabel::Normal), &[(2, 2)]),
            map("c", Some(ClassLabel::Normal), &[(3, 3)]),
        ];
        let mut split = split_dataset(&maps, (0.9, 0.05, 0.05), 1).unwrap();
        split.config_hash = "deadbeef".into();
        split.save(&path).unwrap();
        let back = DatasetSplit::load(&path).unwrap();
        assert_eq!(back.config_hash, "deadbeef");
        assert_eq!(back.train, split.train);

        let (train, _, _) = back.select(&maps).unwrap();
        assert_eq!(train.len(), back.train.len());
        let missing = DatasetSplit {
            train: vec!["zzz".into()],
            ..back
        };
        assert!(missing.select(&maps).is_err());
    }
}
