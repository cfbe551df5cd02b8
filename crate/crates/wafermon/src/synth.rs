//! Synthetic wafer-map generators, one per pattern class.
//!
//! The generators are stylized: rings and donuts are annuli, scratches
//! are jittered polylines, grids are lattice bands, and so on. Counts are
//! Poisson-distributed around per-class budgets so no two maps have the
//! same size, and every map gets a sprinkle of uniform background noise.
//! All defects are guaranteed to land inside the wafer disk.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::Coord;
use crate::wdm::{ClassLabel, Wdm};

/// Tunable knobs of the generators. `density` scales every pattern's
/// point budget; the ring parameters are exposed because the Ring class
/// doubles as a geometric calibration target elsewhere in the test suite.
#[derive(Clone, Debug)]
pub struct SynthParams {
    /// Multiplies all per-class point budgets.
    pub density: f64,
    /// Poisson rate of uniform background defects added to every map.
    pub background_noise: f64,
    /// Poisson rate of the Normal class's scattered defects.
    pub normal_rate: f64,
    /// Ring center radius as a fraction of the wafer radius.
    pub ring_radius_frac: f64,
    /// Ring half-width as a fraction of the wafer radius.
    pub ring_width_frac: f64,
    /// Poisson rate of ring defects.
    pub ring_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            density: 1.0,
            background_noise: 8.0,
            normal_rate: 60.0,
            ring_radius_frac: 0.70,
            ring_width_frac: 0.05,
            ring_rate: 260.0,
        }
    }
}

/// Conventional wafer radius for a given grid: the disk fills 96% of the
/// half-width, leaving a margin of inactive edge cells.
pub fn default_radius(grid_size: u32) -> f64 {
    0.48 * f64::from(grid_size)
}

struct Disk {
    grid: u32,
    center: f64,
    radius: f64,
}

impl Disk {
    fn push_xy(&self, out: &mut Vec<Coord>, x: f64, y: f64) {
        let i = x.round();
        let j = y.round();
        if i < 0.0 || j < 0.0 || i >= f64::from(self.grid) || j >= f64::from(self.grid) {
            return;
        }
        let (di, dj) = (i - self.center, j - self.center);
        if (di * di + dj * dj).sqrt() > self.radius {
            return;
        }
        out.push(Coord::new(i as u32, j as u32));
    }

    fn push_polar(&self, out: &mut Vec<Coord>, theta: f64, r: f64) {
        self.push_xy(
            out,
            self.center + r * theta.sin(),
            self.center + r * theta.cos(),
        );
    }
}

fn poisson_count(rng: &mut impl Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Uniform over `[0, 2pi) x [0, r_max]` in polar coordinates; matches the
/// background-noise model used at augmentation time.
fn scatter_polar(disk: &Disk, out: &mut Vec<Coord>, rng: &mut impl Rng, n: usize, r_max: f64) {
    for _ in 0..n {
        let theta = rng.gen::<f64>() * TAU;
        let r = rng.gen::<f64>() * r_max;
        disk.push_polar(out, theta, r);
    }
}

fn annulus(
    disk: &Disk,
    out: &mut Vec<Coord>,
    rng: &mut impl Rng,
    n: usize,
    r0: f64,
    half_width: f64,
    theta_lo: f64,
    theta_span: f64,
) {
    for _ in 0..n {
        let theta = theta_lo + rng.gen::<f64>() * theta_span;
        let r = r0 + (rng.gen::<f64>() * 2.0 - 1.0) * half_width;
        disk.push_polar(out, theta, r);
    }
}

/// Walks straight segments, emitting jittered points roughly every 0.8
/// cells. Returns the end point of the walk.
fn walk_segment(
    disk: &Disk,
    out: &mut Vec<Coord>,
    rng: &mut impl Rng,
    from: (f64, f64),
    dir: f64,
    len: f64,
    jitter: f64,
) -> (f64, f64) {
    let steps = (len / 0.8).ceil().max(1.0) as usize;
    let (dx, dy) = (dir.sin() * len / steps as f64, dir.cos() * len / steps as f64);
    let noise = Normal::new(0.0, jitter).expect("jitter >= 0");
    let (mut x, mut y) = from;
    for _ in 0..steps {
        x += dx;
        y += dy;
        disk.push_xy(out, x + noise.sample(rng), y + noise.sample(rng));
    }
    (x, y)
}

/// Emits a jittered circular arc around `(cx, cy)` (which may lie outside
/// the disk); only in-disk cells survive.
fn arc(
    disk: &Disk,
    out: &mut Vec<Coord>,
    rng: &mut impl Rng,
    cx: f64,
    cy: f64,
    rho: f64,
    theta_lo: f64,
    theta_span: f64,
    jitter: f64,
) {
    let steps = ((rho * theta_span.abs()) / 0.8).ceil().max(1.0) as usize;
    let noise = Normal::new(0.0, jitter).expect("jitter >= 0");
    for s in 0..=steps {
        let theta = theta_lo + theta_span * s as f64 / steps as f64;
        let x = cx + rho * theta.sin() + noise.sample(rng);
        let y = cy + rho * theta.cos() + noise.sample(rng);
        disk.push_xy(out, x, y);
    }
}

/// Generates one synthetic map of the given class.
pub fn synth_generate(
    label: ClassLabel,
    params: &SynthParams,
    grid_size: u32,
    radius: f64,
    id: impl Into<String>,
    rng: &mut impl Rng,
) -> Result<Wdm> {
    if grid_size < 16 {
        return Err(Error::config(format!(
            "synthetic grids need at least 16 cells, got {grid_size}"
        )));
    }
    let max_radius = (f64::from(grid_size) - 1.0) / 2.0;
    if !(radius > 0.0) || radius > max_radius {
        return Err(Error::config(format!(
            "radius {radius} outside (0, {max_radius}] for grid {grid_size}"
        )));
    }
    if params.density <= 0.0 {
        return Err(Error::config("density must be positive"));
    }

    let disk = Disk {
        grid: grid_size,
        center: (f64::from(grid_size) - 1.0) / 2.0,
        radius,
    };
    let d = params.density;
    let r = radius;
    let mut pts: Vec<Coord> = Vec::new();

    match label {
        ClassLabel::Normal => {
            let n = poisson_count(rng, params.normal_rate * d);
            scatter_polar(&disk, &mut pts, rng, n, r);
        }
        ClassLabel::Ring => {
            let n = poisson_count(rng, params.ring_rate * d);
            annulus(
                &disk,
                &mut pts,
                rng,
                n,
                params.ring_radius_frac * r,
                params.ring_width_frac * r,
                0.0,
                TAU,
            );
        }
        ClassLabel::Donut => {
            let n = poisson_count(rng, 340.0 * d);
            annulus(&disk, &mut pts, rng, n, 0.55 * r, 0.12 * r, 0.0, TAU);
        }
        ClassLabel::HalfMoon => {
            let n = poisson_count(rng, 150.0 * d);
            let theta0 = rng.gen::<f64>() * TAU;
            annulus(&disk, &mut pts, rng, n, 0.70 * r, 0.06 * r, theta0, PI);
        }
        ClassLabel::Incomplete => {
            // A thin sparse ring with a missing arc.
            let n = poisson_count(rng, 140.0 * d);
            let gap_start = rng.gen::<f64>() * TAU;
            let gap = (1.0 + rng.gen::<f64>()) * PI / 3.0;
            annulus(
                &disk,
                &mut pts,
                rng,
                n,
                0.75 * r,
                0.04 * r,
                gap_start + gap,
                TAU - gap,
            );
        }
        ClassLabel::Slice => {
            let n = poisson_count(rng, 170.0 * d);
            let theta0 = rng.gen::<f64>() * TAU;
            let span = (25.0 + rng.gen::<f64>() * 30.0).to_radians();
            for _ in 0..n {
                let theta = theta0 + rng.gen::<f64>() * span;
                // Uniform over the sector's area, so slices look filled.
                let rr = r * (0.05 + 0.95 * rng.gen::<f64>()).sqrt();
                disk.push_polar(&mut pts, theta, rr);
            }
        }
        ClassLabel::GeoScratch => {
            let theta = rng.gen::<f64>() * TAU;
            let rho = 0.7 * r * rng.gen::<f64>().sqrt();
            let mut at = (
                disk.center + rho * theta.sin(),
                disk.center + rho * theta.cos(),
            );
            let mut dir = rng.gen::<f64>() * TAU;
            let segments = rng.gen_range(2..=4);
            for _ in 0..segments {
                let len = (0.30 + 0.35 * rng.gen::<f64>()) * r * d.sqrt();
                at = walk_segment(&disk, &mut pts, rng, at, dir, len, 0.7);
                dir += rng.gen_range(-0.6..0.6);
            }
        }
        ClassLabel::ZigZag => {
            let theta = rng.gen::<f64>() * TAU;
            let rho = 0.6 * r * rng.gen::<f64>().sqrt();
            let mut at = (
                disk.center + rho * theta.sin(),
                disk.center + rho * theta.cos(),
            );
            let mut dir = rng.gen::<f64>() * TAU;
            let mut sign = 1.0;
            let segments = rng.gen_range(4..=7);
            for _ in 0..segments {
                let len = (0.18 + 0.16 * rng.gen::<f64>()) * r * d.sqrt();
                at = walk_segment(&disk, &mut pts, rng, at, dir, len, 0.6);
                dir += sign * rng.gen_range(1.7..2.4);
                sign = -sign;
            }
        }
        ClassLabel::Grid => {
            // Lattice bands: points scattered along evenly spaced rows and
            // columns with a random pitch and phase.
            let k = f64::from(grid_size);
            let pitch = (0.14 + 0.08 * rng.gen::<f64>()) * k;
            let phase_i = rng.gen::<f64>() * pitch;
            let phase_j = rng.gen::<f64>() * pitch;
            let lines_i: Vec<f64> = (0..)
                .map(|m| phase_i + pitch * m as f64)
                .take_while(|v| *v < k)
                .collect();
            let lines_j: Vec<f64> = (0..)
                .map(|m| phase_j + pitch * m as f64)
                .take_while(|v| *v < k)
                .collect();
            let n = poisson_count(rng, 380.0 * d);
            let noise = Normal::new(0.0, 0.45).expect("positive sigma");
            for _ in 0..n {
                let along = rng.gen::<f64>() * k;
                let horizontal = rng.gen::<bool>();
                let (x, y) = if horizontal {
                    let line = lines_i[rng.gen_range(0..lines_i.len())];
                    (line + noise.sample(rng), along)
                } else {
                    let line = lines_j[rng.gen_range(0..lines_j.len())];
                    (along, line + noise.sample(rng))
                };
                disk.push_xy(&mut pts, x, y);
            }
        }
        ClassLabel::ClusterBig | ClassLabel::ClusterSmall => {
            let (rate, sigma_lo, sigma_hi, c_max) = if label == ClassLabel::ClusterBig {
                (320.0, 0.12, 0.18, 0.50)
            } else {
                (90.0, 0.03, 0.05, 0.80)
            };
            let theta = rng.gen::<f64>() * TAU;
            let rho = c_max * r * rng.gen::<f64>().sqrt();
            let (cx, cy) = (
                disk.center + rho * theta.sin(),
                disk.center + rho * theta.cos(),
            );
            let sigma = (sigma_lo + (sigma_hi - sigma_lo) * rng.gen::<f64>()) * r;
            let blob = Normal::new(0.0, sigma).expect("positive sigma");
            let n = poisson_count(rng, rate * d);
            for _ in 0..n {
                disk.push_xy(&mut pts, cx + blob.sample(rng), cy + blob.sample(rng));
            }
        }
        ClassLabel::Fingerprints => {
            // A family of short concentric arcs, like a smudged print.
            let theta = rng.gen::<f64>() * TAU;
            let rho = 0.45 * r * rng.gen::<f64>().sqrt();
            let (cx, cy) = (
                disk.center + rho * theta.sin(),
                disk.center + rho * theta.cos(),
            );
            let arcs = rng.gen_range(3..=5);
            let rho0 = (0.10 + 0.10 * rng.gen::<f64>()) * r;
            let gap = (0.035 + 0.02 * rng.gen::<f64>()) * r;
            let theta0 = rng.gen::<f64>() * TAU;
            let span = 1.0 + 1.4 * rng.gen::<f64>();
            for m in 0..arcs {
                let wobble = rng.gen_range(-0.2..0.2);
                arc(
                    &disk,
                    &mut pts,
                    rng,
                    cx,
                    cy,
                    rho0 + gap * m as f64,
                    theta0 + wobble,
                    span,
                    0.5,
                );
            }
        }
        ClassLabel::BasketBall => {
            // Seam-like curves: a random subset of four shallow cross-disk
            // arcs (circles centered far outside the disk) and four
            // mid-radius partial circles. The subset changes per map, which
            // gives the class its high within-class variability.
            let mut candidates: Vec<usize> = (0..8).collect();
            candidates.shuffle(rng);
            let picks = rng.gen_range(3..=6);
            for &which in candidates.iter().take(picks) {
                if which < 4 {
                    let side = which as f64 * PI / 2.0 + rng.gen_range(-0.2..0.2);
                    let dist = 2.2 * r;
                    let (cx, cy) = (
                        disk.center + dist * side.sin(),
                        disk.center + dist * side.cos(),
                    );
                    let rho = (2.05 + 0.30 * rng.gen::<f64>()) * r;
                    // Aim the arc back at the disk center.
                    let back = side + PI;
                    arc(&disk, &mut pts, rng, cx, cy, rho, back - 0.5, 1.0, 0.5);
                } else {
                    let rho = (0.45 + 0.30 * rng.gen::<f64>()) * r;
                    let theta0 = rng.gen::<f64>() * TAU;
                    let span = 1.2 + 1.0 * rng.gen::<f64>();
                    arc(
                        &disk,
                        &mut pts,
                        rng,
                        disk.center,
                        disk.center,
                        rho,
                        theta0,
                        span,
                        0.5,
                    );
                }
            }
        }
    }

    let n_noise = poisson_count(rng, params.background_noise * d);
    scatter_polar(&disk, &mut pts, rng, n_noise, r);

    Wdm::new(id, grid_size, radius, Some(label), pts)
}

/// Generates a whole dataset with the requested per-class counts. Ids are
/// `{label}-{index:05}`; each map draws from its own seeded stream, so the
/// result is independent of class ordering.
pub fn synth_dataset(
    counts: &[(ClassLabel, usize)],
    params: &SynthParams,
    grid_size: u32,
    radius: f64,
    seed: u64,
) -> Result<Vec<Wdm>> {
    let mut maps = Vec::new();
    for (label, n) in counts {
        let class_tag = ClassLabel::ALL
            .iter()
            .position(|l| l == label)
            .expect("label in ALL") as u64;
        for idx in 0..*n {
            let mut rng = rng::stream(seed, &[class_tag, idx as u64]);
            maps.push(synth_generate(
                *label,
                params,
                grid_size,
                radius,
                format!("{label}-{idx:05}"),
                &mut rng,
            )?);
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_from_center(w: &Wdm, c: Coord) -> f64 {
        let (ci, cj) = w.center();
        ((f64::from(c.i) - ci).powi(2) + (f64::from(c.j) - cj).powi(2)).sqrt()
    }

    #[test]
    fn all_classes_generate_in_disk() {
        let params = SynthParams::default();
        for (n, label) in ClassLabel::ALL.into_iter().enumerate() {
            let mut rng = rng::stream(42, &[n as u64]);
            let w = synth_generate(label, &params, 96, default_radius(96), "t", &mut rng).unwrap();
            assert!(w.num_defects() > 0, "{label} generated an empty map");
            for &c in w.defects() {
                assert!(
                    dist_from_center(&w, c) <= w.radius + 1e-9,
                    "{label} defect outside disk"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let params = SynthParams::default();
        let a = synth_dataset(&[(ClassLabel::Ring, 3)], &params, 64, 30.0, 9).unwrap();
        let b = synth_dataset(&[(ClassLabel::Ring, 3)], &params, 64, 30.0, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&[(ClassLabel::Ring, 3)], &params, 64, 30.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ring_defects_stay_in_the_requested_band() {
        let params = SynthParams {
            background_noise: 0.0,
            ring_radius_frac: 0.70,
            ring_width_frac: 0.05,
            ..SynthParams::default()
        };
        let mut rng = rng::stream(5, &[]);
        let w = synth_generate(ClassLabel::Ring, &params, 256, default_radius(256), "r", &mut rng)
            .unwrap();
        let r = w.radius;
        for &c in w.defects() {
            let d = dist_from_center(&w, c);
            // One cell of slack for integer rounding.
            assert!(d >= 0.65 * r - 1.0 && d <= 0.75 * r + 1.0, "radius {d} outside band");
        }
    }

    #[test]
    fn normal_counts_follow_the_requested_rate() {
        let params = SynthParams {
            background_noise: 0.0,
            normal_rate: 60.0,
            ..SynthParams::default()
        };
        let maps = synth_dataset(&[(ClassLabel::Normal, 200)], &params, 128, 61.0, 3).unwrap();
        let mean =
            maps.iter().map(|m| m.num_defects() as f64).sum::<f64>() / maps.len() as f64;
        // Poisson(60) sample mean over 200 maps; dedup loss is tiny at K=128.
        assert!((mean - 60.0).abs() < 5.0, "mean count {mean} far from 60");
    }

    #[test]
    fn dataset_counts_and_ids() {
        let params = SynthParams::default();
        let maps = synth_dataset(
            &[(ClassLabel::Normal, 4), (ClassLabel::Slice, 2)],
            &params,
            64,
            30.0,
            1,
        )
        .unwrap();
        assert_eq!(maps.len(), 6);
        assert_eq!(maps[0].id, "Normal-00000");
        assert_eq!(maps[5].id, "Slice-00001");
        assert_eq!(maps[5].label, Some(ClassLabel::Slice));
        let mut ids: Vec<&String> = maps.iter().map(|m| &m.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn ring_and_normal_separate_on_radial_histograms() {
        // Monte Carlo separability check: nearest-centroid on 8-bin radial
        // histograms should split Ring from Normal almost perfectly.
        let params = SynthParams::default();
        let feats = |w: &Wdm| -> Vec<f64> {
            let mut h = vec![0.0; 8];
            for &c in w.defects() {
                let bin = ((dist_from_center(w, c) / w.radius) * 8.0).min(7.0) as usize;
                h[bin] += 1.0;
            }
            let total: f64 = h.iter().sum();
            h.iter().map(|v| v / total.max(1.0)).collect()
        };
        let centroid = |maps: &[Wdm]| -> Vec<f64> {
            let mut c = vec![0.0; 8];
            for m in maps {
                for (a, b) in c.iter_mut().zip(feats(m)) {
                    *a += b;
                }
            }
            c.iter().map(|v| v / maps.len() as f64).collect()
        };
        let train_ring = synth_dataset(&[(ClassLabel::Ring, 50)], &params, 96, 46.0, 21).unwrap();
        let train_norm =
            synth_dataset(&[(ClassLabel::Normal, 50)], &params, 96, 46.0, 22).unwrap();
        let (c_ring, c_norm) = (centroid(&train_ring), centroid(&train_norm));

        let test_ring = synth_dataset(&[(ClassLabel::Ring, 500)], &params, 96, 46.0, 23).unwrap();
        let test_norm =
            synth_dataset(&[(ClassLabel::Normal, 500)], &params, 96, 46.0, 24).unwrap();
        let dist2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let mut correct = 0;
        for m in &test_ring {
            let f = feats(m);
            if dist2(&f, &c_ring) < dist2(&f, &c_norm) {
                correct += 1;
            }
        }
        for m in &test_norm {
            let f = feats(m);
            if dist2(&f, &c_norm) < dist2(&f, &c_ring) {
                correct += 1;
            }
        }
        let acc = correct as f64 / 1000.0;
        assert!(acc >= 0.95, "separability accuracy {acc} < 0.95");
    }
}
