//! Ready-made simulation setups: room layouts, motion patterns and presets.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, ArrayGeometry};
use crate::io::RunConfig;
use crate::sim::{
    AmplitudeDrift, ApChannel, OffsetModel, PathSpec, SimConfig, DEFAULT_PACKET_INTERVAL, DEFAULT_PHASE_JITTER,
    TYPICAL_FREQUENCY_OFFSET,
};
use crate::tracker::TrackerConfig;
use crate::types::{ApId, Trajectory, TrajectoryPoint};

/// Number of APs in the default deployment.
pub const DEFAULT_AP_COUNT: usize = 4;
/// Room size of the default deployment, meters.
pub const ROOM: [f64; 2] = [5.0, 6.0];
/// Minimum separation between the two paths of one AP, radians.
pub const MIN_PATH_SEPARATION: f64 = 0.6;

/// How the transmitter moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MotionSpec {
    Stationary {
        packets: usize,
    },
    /// Counter-clockwise square starting and ending at the origin.
    Square {
        side: f64,
        speed: f64,
    },
    /// Smooth random curve whose bounding box spans `extent` meters.
    RandomSmooth {
        extent: f64,
        packets: usize,
        seed: u64,
    },
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("motion.{field}"), "must be positive"))
            }
        };
        match *self {
            MotionSpec::Stationary { packets } | MotionSpec::RandomSmooth { packets, .. } if packets < 2 => {
                Err(Error::config("motion.packets", "need at least 2 packets"))
            }
            MotionSpec::Stationary { .. } => Ok(()),
            MotionSpec::Square { side, speed } => {
                positive(side, "side")?;
                positive(speed, "speed")
            }
            MotionSpec::RandomSmooth { extent, .. } => positive(extent, "extent"),
        }
    }

    pub fn waypoints(&self, interval: f64) -> Result<Trajectory> {
        self.validate()?;
        match *self {
            MotionSpec::Stationary { packets } => Trajectory::from_points(
                (0..packets)
                    .map(|p| TrajectoryPoint { t: p as f64 * interval, x: 0.0, y: 0.0 })
                    .collect(),
            ),
            MotionSpec::Square { side, speed } => {
                let leg = side / speed;
                let corners = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side], [0.0, 0.0]];
                Trajectory::from_points(
                    corners
                        .iter()
                        .enumerate()
                        .map(|(i, c)| TrajectoryPoint { t: i as f64 * leg, x: c[0], y: c[1] })
                        .collect(),
                )
            }
            MotionSpec::RandomSmooth { extent, packets, seed } => random_smooth(extent, packets, interval, seed),
        }
    }
}

/// Sum of three low-frequency sinusoids per axis, shifted to start at the
/// origin and scaled so the larger bounding-box side equals `extent`.
pub fn random_smooth(extent: f64, packets: usize, interval: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = |n: usize| -> Vec<(f64, f64, f64)> {
        (0..n)
            .map(|_| (rng.random_range(0.3..1.0), rng.random_range(0.04..0.2), rng.random_range(0.0..TAU)))
            .collect()
    };
    let (tx, ty) = (terms(3), terms(3));
    let eval = |terms: &[(f64, f64, f64)], t: f64| -> f64 {
        terms.iter().map(|&(a, f, ph)| a * (TAU * f * t + ph).sin()).sum()
    };
    let raw: Vec<[f64; 3]> = (0..packets)
        .map(|p| {
            let t = p as f64 * interval;
            [t, eval(&tx, t), eval(&ty, t)]
        })
        .collect();
    let span = |i: usize| {
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[i]), hi.max(r[i])));
        hi - lo
    };
    let scale = extent / span(1).max(span(2)).max(f64::MIN_POSITIVE);
    let (x0, y0) = (raw[0][1], raw[0][2]);
    Trajectory::from_points(
        raw.iter()
            .map(|r| TrajectoryPoint { t: r[0], x: scale * (r[1] - x0), y: scale * (r[2] - y0) })
            .collect(),
    )
}

/// Knobs for [`room_channel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelKnobs {
    pub aps: usize,
    pub snr_db: f64,
    pub quantize: bool,
    pub offsets: bool,
    pub amplitude_drift: Option<AmplitudeDrift>,
}

impl ChannelKnobs {
    pub fn realistic() -> Self {
        Self {
            aps: DEFAULT_AP_COUNT,
            snr_db: 25.0,
            quantize: true,
            offsets: true,
            amplitude_drift: Some(AmplitudeDrift { depth: 0.3, period: 2.0 }),
        }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            quantize: false,
            amplitude_drift: None,
            ..Self::realistic()
        }
    }
}

/// A room with APs at the corners and the transmitter near the middle. Each
/// AP sees a direct path toward it and one reflection at a random angle at
/// least [`MIN_PATH_SEPARATION`] away; clocks run about 20 kHz apart.
pub fn room_channel(seed: u64, knobs: ChannelKnobs) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c5a1);
    let corners = [[0.0, 0.0], [ROOM[0], 0.0], [ROOM[0], ROOM[1]], [0.0, ROOM[1]]];
    let target = [
        ROOM[0] / 2.0 + rng.random_range(-1.0..1.0),
        ROOM[1] / 2.0 + rng.random_range(-1.0..1.0),
    ];
    let aps = (0..knobs.aps)
        .map(|i| {
            let c = corners[i % corners.len()];
            let direct = (c[1] - target[1]).atan2(c[0] - target[0]).rem_euclid(TAU);
            let reflected = loop {
                let t = rng.random_range(0.0..TAU);
                if angular_distance(t, direct) >= MIN_PATH_SEPARATION {
                    break t;
                }
            };
            let offset = if knobs.offsets {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                OffsetModel {
                    initial_phase: rng.random_range(0.0..TAU),
                    frequency_offset: sign * TYPICAL_FREQUENCY_OFFSET * rng.random_range(0.9..1.1),
                    phase_jitter_std: DEFAULT_PHASE_JITTER,
                }
            } else {
                OffsetModel::NONE
            };
            ApChannel {
                id: ApId(i as u32),
                paths: vec![
                    PathSpec { aod: direct, gain: Complex64::from_polar(1.0, rng.random_range(0.0..TAU)) },
                    PathSpec {
                        aod: reflected,
                        gain: Complex64::from_polar(rng.random_range(0.4..0.8), rng.random_range(0.0..TAU)),
                    },
                ],
                offset,
            }
        })
        .collect();
    SimConfig {
        geometry: ArrayGeometry::default_circular(),
        aps,
        packet_interval: DEFAULT_PACKET_INTERVAL,
        snr_db: knobs.snr_db,
        quantize: knobs.quantize,
        seed,
        amplitude_drift: knobs.amplitude_drift,
    }
}

/// Named, reproducible run setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 10 cm square, noiseless channel with clock offsets.
    Square,
    /// Four-AP room, 25 dB SNR, 8-bit CSI, clock offsets, 0.5 m random motion.
    Indoor4Ap,
    /// Same channel as `Indoor4Ap` with a stationary transmitter.
    Stationary,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Square, Preset::Indoor4Ap, Preset::Stationary];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Square => "square",
            Preset::Indoor4Ap => "indoor-4ap",
            Preset::Stationary => "stationary",
        }
    }

    pub fn config(self, seed: u64) -> RunConfig {
        let (knobs, motion) = match self {
            Preset::Square => (ChannelKnobs::noiseless(), MotionSpec::Square { side: 0.1, speed: 0.1 }),
            Preset::Indoor4Ap => (
                ChannelKnobs::realistic(),
                MotionSpec::RandomSmooth { extent: 0.5, packets: 1000, seed },
            ),
            Preset::Stationary => (ChannelKnobs::realistic(), MotionSpec::Stationary { packets: 1000 }),
        };
        RunConfig {
            sim: Some(room_channel(seed, knobs)),
            motion: Some(motion),
            tracker: TrackerConfig::default(),
            aps: None,
            output: Default::default(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}` (square, indoor-4ap, stationary)")))
    }
}
