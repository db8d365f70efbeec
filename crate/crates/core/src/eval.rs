//! Tracking quality metrics: stationary jitter, rigidly aligned trajectory
//! error and empirical CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Trajectory;

/// Root-mean-square distance of the points from their centroid.
pub fn jitter(traj: &Trajectory) -> Result<f64> {
    let pts = traj.points();
    if pts.len() < 2 {
        return Err(Error::Trajectory(format!("jitter needs 2 points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let ms = pts.iter().map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2)).sum::<f64>() / n;
    Ok(ms.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedError {
    /// Per-point distance after alignment, meters.
    pub errors: Vec<f64>,
    /// Rotation applied to the estimate, radians.
    pub rotation: f64,
    /// Estimate after translation and rotation, as `[x, y]`.
    pub aligned: Vec<[f64; 2]>,
}

impl AlignedError {
    pub fn median(&self) -> f64 {
        percentile(&self.errors, 50.0)
    }

    pub fn max(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn percentile(&self, q: f64) -> f64 {
        percentile(&self.errors, q)
    }

    pub fn rotation_matrix(&self) -> [[f64; 2]; 2] {
        rotation_matrix(self.rotation)
    }
}

pub fn rotation_matrix(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

/// Translates both trajectories to start at the origin, rotates the estimate
/// to minimize the RMSE against the truth (no scaling, no reflection) and
/// returns the per-point distances. If the time grids differ the estimate is
/// resampled onto the truth's timestamps.
pub fn align(estimate: &Trajectory, truth: &Trajectory) -> Result<AlignedError> {
    if estimate.len() < 2 || truth.len() < 2 {
        return Err(Error::Trajectory("alignment needs at least 2 points in each trajectory".into()));
    }
    let same_grid = estimate.len() == truth.len()
        && estimate.times().zip(truth.times()).all(|(a, b)| a == b);
    let resampled;
    let est = if same_grid {
        estimate
    } else {
        resampled = estimate.resample(truth.times())?;
        &resampled
    };
    let e0 = est.points()[0];
    let t0 = truth.points()[0];
    let e: Vec<[f64; 2]> = est.points().iter().map(|p| [p.x - e0.x, p.y - e0.y]).collect();
    let t: Vec<[f64; 2]> = truth.points().iter().map(|p| [p.x - t0.x, p.y - t0.y]).collect();

    // Orthogonal Procrustes in 2D: the optimal proper rotation angle is the
    // argument of sum(conj(e_i) * t_i).
    let (mut dot, mut cross) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&t) {
        dot += a[0] * b[0] + a[1] * b[1];
        cross += a[0] * b[1] - a[1] * b[0];
    }
    let rotation = if dot == 0.0 && cross == 0.0 { 0.0 } else { cross.atan2(dot) };
    let r = rotation_matrix(rotation);
    let aligned: Vec<[f64; 2]> = e
        .iter()
        .map(|p| [r[0][0] * p[0] + r[0][1] * p[1], r[1][0] * p[0] + r[1][1] * p[1]])
        .collect();
    let errors = aligned
        .iter()
        .zip(&t)
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
        .collect();
    Ok(AlignedError {
        errors,
        rotation,
        aligned,
    })
}

/// Linearly interpolated percentile (`q` in percent) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub error_m: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCdf {
    pub rows: Vec<CdfRow>,
    pub median: f64,
}

/// Empirical CDF of all per-point errors pooled across trajectories.
pub fn error_cdf(errors: &[AlignedError]) -> Result<ErrorCdf> {
    let pooled: Vec<f64> = errors.iter().flat_map(|e| e.errors.iter().copied()).collect();
    cdf_of(&pooled)
}

pub fn cdf_of(values: &[f64]) -> Result<ErrorCdf> {
    if values.is_empty() {
        return Err(Error::Trajectory("no errors to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let rows = v
        .iter()
        .enumerate()
        .map(|(i, &e)| CdfRow {
            error_m: e,
            fraction: (i + 1) as f64 / n,
        })
        .collect();
    Ok(ErrorCdf {
        rows,
        median: median(&v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TrajectoryPoint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn traj(pts: &[[f64; 2]]) -> Trajectory {
        Trajectory::from_points(
            pts.iter()
                .enumerate()
                .map(|(i, p)| TrajectoryPoint { t: i as f64 * 0.006, x: p[0], y: p[1] })
                .collect(),
        )
        .unwrap()
    }

    fn square() -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for i in 0..10 {
            v.push([0.01 * i as f64, 0.0]);
        }
        for i in 0..10 {
            v.push([0.1, 0.01 * i as f64]);
        }
        for i in 0..10 {
            v.push([0.1 - 0.01 * i as f64, 0.1]);
        }
        v
    }

    fn transform(pts: &[[f64; 2]], angle: f64, shift: [f64; 2], scale: f64) -> Vec<[f64; 2]> {
        let r = rotation_matrix(angle);
        pts.iter()
            .map(|p| {
                [
                    scale * (r[0][0] * p[0] + r[0][1] * p[1]) + shift[0],
                    scale * (r[1][0] * p[0] + r[1][1] * p[1]) + shift[1],
                ]
            })
            .collect()
    }

    #[test]
    fn jitter_cases() {
        assert_eq!(jitter(&traj(&[[0.3, 0.2]; 5])).unwrap(), 0.0);
        let alt: Vec<[f64; 2]> = (0..10).map(|i| [if i % 2 == 0 { 0.001 } else { -0.001 }, 0.0]).collect();
        assert_abs_diff_eq!(jitter(&traj(&alt)).unwrap(), 0.001, epsilon = 1e-15);
        assert!(jitter(&traj(&[[0.0, 0.0]])).is_err());
    }

    #[test]
    fn identical_trajectories_align_perfectly() {
        let t = traj(&square());
        let a = align(&t, &t).unwrap();
        assert_eq!(a.rotation, 0.0);
        assert!(a.errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn rotated_estimate_recovered() {
        let truth = square();
        let est = transform(&truth, 30f64.to_radians(), [0.0, 0.0], 1.0);
        let a = align(&traj(&est), &traj(&truth)).unwrap();
        assert_abs_diff_eq!(a.rotation, -30f64.to_radians(), epsilon = 1e-12);
        assert!(a.max() < 1e-12);
    }

    #[test]
    fn scaling_is_not_forgiven() {
        let truth = square();
        let est = transform(&truth, 0.0, [0.0, 0.0], 2.0);
        let a = align(&traj(&est), &traj(&truth)).unwrap();
        assert!(a.max() > 0.05);
    }

    #[test]
    fn differing_grids_resampled() {
        let truth = traj(&square());
        let dense = truth.resample((0..59).map(|i| i as f64 * 0.003)).unwrap();
        let a = align(&dense, &truth).unwrap();
        assert_eq!(a.errors.len(), truth.len());
        assert!(a.max() < 1e-12);
    }

    #[test]
    fn too_short_to_align() {
        let one = traj(&[[0.0, 0.0]]);
        assert!(align(&one, &one).is_err());
    }

    #[test]
    fn cdf_single_and_four() {
        let c = cdf_of(&[0.02]).unwrap();
        assert_eq!(c.rows, vec![CdfRow { error_m: 0.02, fraction: 1.0 }]);
        assert_eq!(c.median, 0.02);
        let c = cdf_of(&[0.04, 0.01, 0.03, 0.02]).unwrap();
        assert_abs_diff_eq!(c.median, 0.025, epsilon = 1e-15);
        let f: Vec<f64> = c.rows.iter().map(|r| r.fraction).collect();
        assert_eq!(f, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(error_cdf(&[]).is_err());
    }

    proptest! {
        #[test]
        fn alignment_ignores_rigid_motion(angle in -3.1f64..3.1, sx in -5.0f64..5.0, sy in -5.0f64..5.0) {
            let truth = square();
            let noisy: Vec<[f64; 2]> = truth.iter().enumerate().map(|(i, p)| [p[0] + 1e-3 * (i as f64).sin(), p[1] + 1e-3 * (i as f64 * 1.7).cos()]).collect();
            let base = align(&traj(&noisy), &traj(&truth)).unwrap();
            let moved = align(&traj(&transform(&noisy, angle, [sx, sy], 1.0)), &traj(&truth)).unwrap();
            for (a, b) in base.errors.iter().zip(&moved.errors) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let r = moved.rotation_matrix();
            let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
            prop_assert!((det - 1.0).abs() < 1e-12);
            prop_assert!((r[0][0] * r[0][1] + r[1][0] * r[1][1]).abs() < 1e-12);
        }

        #[test]
        fn jitter_rigid_invariant(angle in -3.1f64..3.1, sx in -5.0f64..5.0, sy in -5.0f64..5.0) {
            let pts: Vec<[f64; 2]> = (0..20).map(|i| [1e-3 * (i as f64).sin(), 2e-3 * (i as f64 * 0.3).cos()]).collect();
            let a = jitter(&traj(&pts)).unwrap();
            let b = jitter(&traj(&transform(&pts, angle, [sx, sy], 1.0))).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
