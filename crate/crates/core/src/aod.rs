//! Departure-angle estimation from a window of packets.
//!
//! CSI of packets whose path angles have not changed is a set of linear
//! combinations of the same steering vectors, `X = A G`. Motion changes the
//! path weights in `G` from packet to packet, so the window covariance spans
//! the full signal subspace and MUSIC can separate coherent paths without
//! spatial smoothing.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ArrayGeometry};
use crate::types::{CsiRecord, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AodConfig {
    pub num_paths: usize,
    pub window_seconds: f64,
    /// Spectrum grid spacing, radians.
    pub grid_step: f64,
    pub min_packets: usize,
}

impl Default for AodConfig {
    fn default() -> Self {
        Self {
            num_paths: 2,
            window_seconds: 10.0,
            grid_step: 0.5f64.to_radians(),
            min_packets: 20,
        }
    }
}

impl AodConfig {
    pub fn validate(&self, antennas: usize) -> Result<()> {
        if self.num_paths == 0 || self.num_paths >= antennas {
            return Err(Error::config(
                "tracker.aod.num_paths",
                format!("must be in 1..={} for {antennas} antennas", antennas - 1),
            ));
        }
        if !(self.grid_step.is_finite() && self.grid_step > 0.0) {
            return Err(Error::config("tracker.aod.grid_step", "must be positive"));
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(Error::config("tracker.aod.window_seconds", "must be positive"));
        }
        if self.min_packets == 0 {
            return Err(Error::config("tracker.aod.min_packets", "must be at least 1"));
        }
        Ok(())
    }
}

/// Stacks the CSI of one AP's packets column by column.
pub fn concat_window(records: &[CsiRecord], min_packets: usize) -> Result<DMatrix<Complex64>> {
    if records.len() < min_packets.max(1) {
        return Err(Error::WindowUnderfull {
            have: records.len(),
            need: min_packets.max(1),
        });
    }
    let ap = records[0].ap;
    let m = records[0].csi.len();
    for r in records {
        if r.ap != ap {
            return Err(Error::MixedAps(ap, r.ap));
        }
        if r.csi.len() != m {
            return Err(Error::InvalidInput(format!(
                "packet {} has {} antennas, expected {m}",
                r.packet_index,
                r.csi.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(m, records.len(), |q, p| records[p].csi[q]))
}

/// `X X^H / P`.
pub fn sample_covariance(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (x * x.adjoint()).unscale(x.ncols() as f64)
}

/// Uniform angle grid covering the array's unambiguous span.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    angles: Vec<f64>,
    step: f64,
    cyclic: bool,
}

impl AngleGrid {
    pub fn for_geometry(geometry: &ArrayGeometry, step: f64) -> Self {
        let span = geometry.angle_span();
        let cyclic = span >= TAU;
        let n = (span / step).round().max(3.0) as usize;
        let step = span / n as f64;
        let count = if cyclic { n } else { n + 1 };
        Self {
            angles: (0..count).map(|i| i as f64 * step).collect(),
            step,
            cyclic,
        }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }
}

#[derive(Debug, Clone)]
pub struct MusicSpectrum {
    pub grid: AngleGrid,
    /// Pseudo-spectrum `1 / (a^H E_n E_n^H a)` per grid angle.
    pub values: Vec<f64>,
    noise_basis: DMatrix<Complex64>,
}

impl MusicSpectrum {
    /// Null-spectrum `|E_n^H a(theta)|^2`; zero at the true angles on clean data.
    pub fn null_spectrum(&self, geometry: &ArrayGeometry, theta: f64) -> f64 {
        projection_energy(&self.noise_basis, &geometry.steering_vector(theta))
    }

    pub fn noise_basis(&self) -> &DMatrix<Complex64> {
        &self.noise_basis
    }
}

fn projection_energy(basis: &DMatrix<Complex64>, a: &DVector<Complex64>) -> f64 {
    (basis.adjoint() * a).norm_squared()
}

/// Eigenvectors of the `M - num_paths` smallest covariance eigenvalues.
pub fn noise_subspace(cov: &DMatrix<Complex64>, num_paths: usize) -> Result<DMatrix<Complex64>> {
    if cov.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidInput("covariance is not finite".into()));
    }
    let m = cov.nrows();
    if num_paths >= m {
        return Err(Error::InvalidInput(format!(
            "{num_paths} paths leave no noise subspace with {m} antennas"
        )));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let cols: Vec<_> = order[..m - num_paths]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

/// MUSIC spectrum of a window over `grid`.
pub fn music_spectrum(
    x: &DMatrix<Complex64>,
    geometry: &ArrayGeometry,
    num_paths: usize,
    grid: &AngleGrid,
) -> Result<MusicSpectrum> {
    MusicEstimator::with_grid(geometry.clone(), grid.clone()).spectrum(x, num_paths)
}

/// MUSIC over a fixed geometry and grid, with the grid's steering vectors
/// precomputed.
#[derive(Debug, Clone)]
pub struct MusicEstimator {
    geometry: ArrayGeometry,
    grid: AngleGrid,
    grid_steering: DMatrix<Complex64>,
}

impl MusicEstimator {
    pub fn new(geometry: ArrayGeometry, grid_step: f64) -> Self {
        let grid = AngleGrid::for_geometry(&geometry, grid_step);
        Self::with_grid(geometry, grid)
    }

    pub fn with_grid(geometry: ArrayGeometry, grid: AngleGrid) -> Self {
        let grid_steering = geometry.steering_matrix(grid.angles());
        Self {
            geometry,
            grid,
            grid_steering,
        }
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    pub fn spectrum(&self, x: &DMatrix<Complex64>, num_paths: usize) -> Result<MusicSpectrum> {
        if x.nrows() != self.geometry.antennas() {
            return Err(Error::InvalidInput(format!(
                "CSI has {} antennas, geometry has {}",
                x.nrows(),
                self.geometry.antennas()
            )));
        }
        if x.iter().all(|z| z.norm_sqr() == 0.0) {
            return Err(Error::InvalidInput("CSI window is all zeros".into()));
        }
        let noise_basis = noise_subspace(&sample_covariance(x), num_paths)?;
        let proj = noise_basis.adjoint() * &self.grid_steering;
        let values = proj
            .column_iter()
            .map(|c| 1.0 / c.norm_squared().max(f64::MIN_POSITIVE))
            .collect();
        Ok(MusicSpectrum {
            grid: self.grid.clone(),
            values,
            noise_basis,
        })
    }

    /// Estimates the `num_paths` strongest departure angles from a window of
    /// one AP's packets. Angles come back sorted ascending.
    pub fn estimate(&self, records: &[CsiRecord], config: &AodConfig) -> Result<PathSet> {
        let x = concat_window(records, config.min_packets)?;
        let spectrum = self.spectrum(&x, config.num_paths)?;
        let grid = &self.grid;
        let geometry = &self.geometry;
        let peaks = local_maxima(&spectrum.values, grid.is_cyclic());
        let l = config.num_paths;
        let resolved = peaks.len() >= l;
        let mut chosen: Vec<usize> = peaks.into_iter().take(l).collect();
        if !resolved {
            let mut by_value: Vec<usize> = (0..spectrum.values.len()).collect();
            by_value.sort_by(|&a, &b| spectrum.values[b].total_cmp(&spectrum.values[a]).then(a.cmp(&b)));
            for i in by_value {
                if chosen.len() == l {
                    break;
                }
                if !chosen.contains(&i) {
                    chosen.push(i);
                }
            }
        }
        let span = geometry.angle_span();
        let aods: Vec<f64> = chosen
            .iter()
            .map(|&i| {
                let t = grid.angles()[i];
                let refined = if resolved { refine_peak(&spectrum, geometry, t) } else { t };
                if grid.is_cyclic() {
                    wrap_angle(refined)
                } else {
                    refined.clamp(0.0, span)
                }
            })
            .collect();
        let mut set = PathSet::sorted(records[0].ap, &aods, geometry);
        set.resolved = resolved;
        Ok(set)
    }
}

/// Grid indices of strict local maxima, strongest first.
fn local_maxima(values: &[f64], cyclic: bool) -> Vec<usize> {
    let n = values.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i > 0 {
                Some(values[i - 1])
            } else if cyclic {
                Some(values[n - 1])
            } else {
                None
            };
            let right = if i + 1 < n {
                Some(values[i + 1])
            } else if cyclic {
                Some(values[0])
            } else {
                None
            };
            left.is_none_or(|l| values[i] > l) && right.is_none_or(|r| values[i] > r)
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    peaks
}

/// Vertex offset, in units of `h`, of the parabola through `(-h, f0)`, `(0, f1)`, `(h, f2)`.
fn parabola_vertex(f0: f64, f1: f64, f2: f64) -> f64 {
    let denom = f0 - 2.0 * f1 + f2;
    if denom <= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (f0 - f2) / denom).clamp(-1.0, 1.0)
}

/// Minimizes the null-spectrum around a grid peak: a 3-point quadratic fit
/// on the grid, then repeated fits on shrinking brackets.
fn refine_peak(spectrum: &MusicSpectrum, geometry: &ArrayGeometry, theta: f64) -> f64 {
    let f = |t: f64| spectrum.null_spectrum(geometry, t);
    let mut center = theta;
    let mut h = spectrum.grid.step();
    while h > 1e-10 {
        let offset = parabola_vertex(f(center - h), f(center), f(center + h));
        center += offset * h;
        h *= 0.25;
    }
    center
}

/// One-shot convenience over [`MusicEstimator::estimate`].
pub fn estimate_paths(records: &[CsiRecord], geometry: &ArrayGeometry, config: &AodConfig) -> Result<PathSet> {
    MusicEstimator::new(geometry.clone(), config.grid_step).estimate(records, config)
}

/// Distance from `truth` to the closest estimated angle.
pub fn closest_aod_error(estimates: &[f64], truth: f64) -> f64 {
    estimates
        .iter()
        .map(|&e| crate::geometry::angular_distance(e, truth))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ap_rng, simulate_trajectory, ApChannel, OffsetModel, PathSpec, SimConfig};
    use crate::types::{ApId, Trajectory, TrajectoryPoint};
    use crate::geometry::angular_distance;

    fn record(p: u64, csi: Vec<Complex64>) -> CsiRecord {
        CsiRecord { ap: ApId(0), packet_index: p, timestamp: p as f64 * 0.006, csi }
    }

    fn sim_window(paths: Vec<PathSpec>, snr_db: f64, packets: usize, seed: u64) -> Vec<CsiRecord> {
        let cfg = SimConfig {
            geometry: ArrayGeometry::default_circular(),
            aps: vec![ApChannel {
                id: ApId(0),
                paths,
                offset: OffsetModel { initial_phase: 0.3, frequency_offset: 19_700.0, phase_jitter_std: 0.05 },
            }],
            packet_interval: 0.006,
            snr_db,
            quantize: false,
            seed,
            amplitude_drift: None,
        };
        // Slow diagonal walk so path weights keep changing.
        let w = Trajectory::from_points(
            (0..packets)
                .map(|p| TrajectoryPoint { t: p as f64 * 0.006, x: 1.1e-3 * p as f64, y: -0.4e-3 * p as f64 })
                .collect(),
        )
        .unwrap();
        simulate_trajectory(&cfg, &w).unwrap().records.remove(&ApId(0)).unwrap()
    }

    #[test]
    fn single_record_window() {
        let r = record(0, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(2.0, -1.0)]);
        let x = concat_window(std::slice::from_ref(&r), 1).unwrap();
        assert_eq!(x.shape(), (3, 1));
        for q in 0..3 {
            assert_eq!(x[(q, 0)], r.csi[q]);
        }
    }

    #[test]
    fn underfull_and_mixed_windows_rejected() {
        let r = record(0, vec![Complex64::new(1.0, 0.0); 3]);
        assert!(matches!(concat_window(std::slice::from_ref(&r), 20), Err(Error::WindowUnderfull { have: 1, need: 20 })));
        let mut other = r.clone();
        other.ap = ApId(2);
        assert!(matches!(concat_window(&[r, other], 1), Err(Error::MixedAps(..))));
    }

    #[test]
    fn noiseless_two_path_window_has_rank_two() {
        let paths = vec![
            PathSpec { aod: 0.8, gain: Complex64::new(1.0, 0.0) },
            PathSpec { aod: 2.1, gain: Complex64::new(0.4, 0.3) },
        ];
        let recs = sim_window(paths, f64::INFINITY, 60, 1);
        let x = concat_window(&recs, 20).unwrap();
        let sv = x.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] > 1e-3 * s[0]);
        assert!(s[2] < 1e-8 * s[0], "{s:?}");
    }

    #[test]
    fn single_path_peak_on_grid() {
        let g = ArrayGeometry::default_circular();
        let recs = sim_window(vec![PathSpec { aod: 1.0, gain: Complex64::new(0.8, 0.1) }], f64::INFINITY, 50, 2);
        let x = concat_window(&recs, 1).unwrap();
        let grid = AngleGrid::for_geometry(&g, 0.5f64.to_radians());
        let s = music_spectrum(&x, &g, 1, &grid).unwrap();
        let best = (0..s.values.len()).max_by(|&a, &b| s.values[a].total_cmp(&s.values[b])).unwrap();
        assert!(angular_distance(grid.angles()[best], 1.0) <= grid.step() + 1e-12);
    }

    #[test]
    fn two_paths_resolved_at_25db() {
        let g = ArrayGeometry::default_circular();
        let truth = [0.9, 0.9 + 60f64.to_radians()];
        let paths = vec![
            PathSpec { aod: truth[0], gain: Complex64::new(1.0, 0.0) },
            PathSpec { aod: truth[1], gain: Complex64::new(0.0, 0.7) },
        ];
        let recs = sim_window(paths, 25.0, 100, 3);
        let x = concat_window(&recs, 1).unwrap();
        let grid = AngleGrid::for_geometry(&g, 0.5f64.to_radians());
        let s = music_spectrum(&x, &g, 2, &grid).unwrap();
        let peaks = local_maxima(&s.values, true);
        let found: Vec<f64> = peaks[..2].iter().map(|&i| grid.angles()[i]).collect();
        for t in truth {
            assert!(closest_aod_error(&found, t) < 2f64.to_radians(), "{found:?}");
        }
    }

    #[test]
    fn identical_columns_still_return_spectrum() {
        let g = ArrayGeometry::default_circular();
        let h = vec![Complex64::new(1.0, 0.5), Complex64::new(-0.2, 0.1), Complex64::new(0.3, 0.9)];
        let recs: Vec<_> = (0..30).map(|p| record(p, h.clone())).collect();
        let x = concat_window(&recs, 1).unwrap();
        let grid = AngleGrid::for_geometry(&g, 0.01);
        let s = music_spectrum(&x, &g, 2, &grid).unwrap();
        assert_eq!(s.values.len(), grid.angles().len());
    }

    #[test]
    fn non_finite_and_zero_windows_rejected() {
        let g = ArrayGeometry::default_circular();
        let grid = AngleGrid::for_geometry(&g, 0.01);
        let zero = DMatrix::<Complex64>::zeros(3, 4);
        assert!(matches!(music_spectrum(&zero, &g, 2, &grid), Err(Error::InvalidInput(_))));
        let mut nan = DMatrix::<Complex64>::from_element(3, 4, Complex64::new(1.0, 0.0));
        nan[(1, 2)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(music_spectrum(&nan, &g, 2, &grid), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn estimate_paths_ideal() {
        let g = ArrayGeometry::default_circular();
        let paths = vec![
            PathSpec { aod: 0.8, gain: Complex64::new(1.0, 0.0) },
            PathSpec { aod: 2.1, gain: Complex64::new(-0.5, 0.2) },
        ];
        let recs = sim_window(paths, f64::INFINITY, 80, 4);
        let set = estimate_paths(&recs, &g, &AodConfig::default()).unwrap();
        assert!(set.resolved);
        assert!((set.aods()[0] - 0.8).abs() < 1e-6, "{:?}", set.aods());
        assert!((set.aods()[1] - 2.1).abs() < 1e-6, "{:?}", set.aods());
    }

    #[test]
    fn single_path_steering_column_matches() {
        let g = ArrayGeometry::default_circular();
        let recs = sim_window(vec![PathSpec { aod: 4.0, gain: Complex64::new(0.8, 0.1) }], 30.0, 40, 5);
        let cfg = AodConfig { num_paths: 1, ..AodConfig::default() };
        let set = estimate_paths(&recs, &g, &cfg).unwrap();
        assert_eq!(set.steering_matrix().column(0).into_owned(), g.steering_vector(set.aods()[0]));
    }

    #[test]
    fn per_column_phase_does_not_change_spectrum() {
        let g = ArrayGeometry::default_circular();
        let paths = vec![
            PathSpec { aod: 0.5, gain: Complex64::new(1.0, 0.0) },
            PathSpec { aod: 3.0, gain: Complex64::new(0.3, -0.5) },
        ];
        let recs = sim_window(paths, 20.0, 40, 6);
        let x = concat_window(&recs, 1).unwrap();
        let mut rng = ap_rng(9, ApId(0));
        let mut y = x.clone();
        for mut col in y.column_iter_mut() {
            let phi: f64 = rand::Rng::random_range(&mut rng, 0.0..TAU);
            col *= Complex64::from_polar(1.0, phi);
        }
        let grid = AngleGrid::for_geometry(&g, 0.02);
        let a = music_spectrum(&x, &g, 2, &grid).unwrap();
        let b = music_spectrum(&y, &g, 2, &grid).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn fallback_when_too_few_peaks() {
        // A single flat peak structure: one path but asking for two.
        let g = ArrayGeometry::default_circular();
        let h = g.steering_vector(1.0).iter().copied().collect::<Vec<_>>();
        let recs: Vec<_> = (0..5).map(|p| record(p, h.clone())).collect();
        let cfg = AodConfig { num_paths: 2, min_packets: 1, ..AodConfig::default() };
        let set = estimate_paths(&recs, &g, &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.aods()[0] <= set.aods()[1]);
    }

    #[test]
    fn grid_shapes() {
        let circ = AngleGrid::for_geometry(&ArrayGeometry::default_circular(), 0.5f64.to_radians());
        assert!(circ.is_cyclic());
        assert_eq!(circ.angles().len(), 720);
        let lin = AngleGrid::for_geometry(&ArrayGeometry::linear(3, 0.03, 0.06).unwrap(), 0.5f64.to_radians());
        assert!(!lin.is_cyclic());
        assert_eq!(lin.angles().len(), 361);
    }

    #[test]
    fn peaks_wrap_around_cyclic_grid() {
        let v = [5.0, 1.0, 0.5, 2.0, 1.0, 0.9, 4.0];
        assert_eq!(local_maxima(&v, true), vec![0, 3]);
        assert_eq!(local_maxima(&v, false), vec![0, 6, 3]);
    }

    #[test]
    fn parabola_vertex_exact_on_quadratic() {
        let f = |x: f64| 2.0 * (x - 0.3).powi(2) + 1.0;
        assert!((parabola_vertex(f(-1.0), f(0.0), f(1.0)) - 0.3).abs() < 1e-12);
    }
}
