use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ArrayGeometry};

/// Access point identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub u32);

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One packet's CSI at one access point: one complex entry per transmit antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub ap: ApId,
    pub packet_index: u64,
    pub timestamp: f64,
    pub csi: Vec<Complex64>,
}

/// Estimated departure angles of the paths towards one AP, with their
/// steering matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub ap: ApId,
    aods: Vec<f64>,
    steering: DMatrix<Complex64>,
    /// False when the spectrum had fewer local maxima than requested paths.
    pub resolved: bool,
}

impl PathSet {
    /// Builds a path set in the given order. Angles are wrapped into `[0, 2 pi)`.
    pub fn new(ap: ApId, aods: &[f64], geometry: &ArrayGeometry) -> Self {
        let aods: Vec<f64> = aods.iter().map(|&t| wrap_angle(t)).collect();
        let steering = geometry.steering_matrix(&aods);
        Self {
            ap,
            aods,
            steering,
            resolved: true,
        }
    }

    /// Same as [`PathSet::new`] but with the angles sorted ascending.
    pub fn sorted(ap: ApId, aods: &[f64], geometry: &ArrayGeometry) -> Self {
        let mut v: Vec<f64> = aods.iter().map(|&t| wrap_angle(t)).collect();
        v.sort_by(f64::total_cmp);
        Self::new(ap, &v, geometry)
    }

    pub fn aods(&self) -> &[f64] {
        &self.aods
    }

    pub fn steering_matrix(&self) -> &DMatrix<Complex64> {
        &self.steering
    }

    pub fn len(&self) -> usize {
        self.aods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aods.is_empty()
    }

    /// Reorders paths; `order[i]` is the old index placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let aods: Vec<f64> = order.iter().map(|&i| self.aods[i]).collect();
        let cols: Vec<_> = order.iter().map(|&i| self.steering.column(i).into_owned()).collect();
        Self {
            ap: self.ap,
            aods,
            steering: DMatrix::from_columns(&cols),
            resolved: self.resolved,
        }
    }
}

/// Planar displacement in meters between two consecutive packets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Timestamped planar positions with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<TrajectoryPoint>) -> Result<Self> {
        let mut traj = Self::new();
        for p in points {
            traj.push(p.t, p.x, p.y)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, t: f64, x: f64, y: f64) -> Result<()> {
        if !(t.is_finite() && x.is_finite() && y.is_finite()) {
            return Err(Error::Trajectory(format!("non-finite point ({t}, {x}, {y})")));
        }
        if let Some(last) = self.points.last() {
            if t <= last.t {
                return Err(Error::Trajectory(format!(
                    "timestamps must increase: {t} after {}",
                    last.t
                )));
            }
        }
        self.points.push(TrajectoryPoint { t, x, y });
        Ok(())
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.t)
    }

    /// Linear interpolation of the position at time `t`, clamped at the ends.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        let pts = &self.points;
        let first = pts.first()?;
        if t <= first.t {
            return Some([first.x, first.y]);
        }
        let last = pts.last()?;
        if t >= last.t {
            return Some([last.x, last.y]);
        }
        let i = pts.partition_point(|p| p.t <= t);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let w = (t - a.t) / (b.t - a.t);
        Some([a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)])
    }

    /// Resamples onto the given time grid by linear interpolation.
    pub fn resample(&self, times: impl IntoIterator<Item = f64>) -> Result<Trajectory> {
        if self.is_empty() {
            return Err(Error::Trajectory("cannot resample an empty trajectory".into()));
        }
        let mut out = Trajectory::new();
        for t in times {
            let [x, y] = self.position_at(t).expect("non-empty");
            out.push(t, x, y)?;
        }
        Ok(out)
    }
}
