//! Simulate-track-evaluate runs and method ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aod::{closest_aod_error, AodConfig, MusicEstimator};
use crate::displacement::ClockModel;
use crate::error::{Error, Result};
use crate::eval::{align, cdf_of, percentile, AlignedError, CdfRow};
use crate::geometry::ArrayGeometry;
use crate::io::{pair_streams, PacketGroup, RunConfig, TraceHeader};
use crate::sim::{simulate_trajectory, SimConfig, Simulation};
use crate::tracker::{track, AodMode, TrackOutput, TrackerConfig};
use crate::types::{ApId, CsiRecord, Trajectory};

/// Simulates the run described by `cfg`, using `waypoints` when given and the
/// config's motion otherwise.
pub fn simulate_run(cfg: &RunConfig, waypoints: Option<&Trajectory>) -> Result<(SimConfig, Simulation)> {
    let sim = cfg
        .sim
        .clone()
        .ok_or_else(|| Error::config("sim", "section required for simulation"))?;
    let generated;
    let waypoints = match waypoints {
        Some(w) => w,
        None => {
            let motion = cfg
                .motion
                .as_ref()
                .ok_or_else(|| Error::config("motion", "section required when no waypoints are given"))?;
            generated = motion.waypoints(sim.packet_interval)?;
            &generated
        }
    };
    let out = simulate_trajectory(&sim, waypoints)?;
    Ok((sim, out))
}

/// Trace header for a simulation, recording the tracker's path count and window.
pub fn trace_header(sim: &SimConfig, tracker: &TrackerConfig) -> TraceHeader {
    let mut h = TraceHeader::new(sim.geometry.clone(), sim.ap_ids(), sim.packet_interval);
    h.num_paths = Some(tracker.aod.num_paths);
    h.window_seconds = Some(tracker.aod.window_seconds);
    h
}

pub fn groups_of(sim_cfg: &SimConfig, sim: &Simulation) -> Vec<PacketGroup> {
    pair_streams(&sim_cfg.ap_ids(), sim.interleaved())
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub sim_config: SimConfig,
    pub simulation: Simulation,
    pub output: TrackOutput,
    pub aligned: AlignedError,
}

/// Simulates, tracks and aligns one run.
pub fn run_trial(cfg: &RunConfig) -> Result<Trial> {
    let (sim_config, simulation) = simulate_run(cfg, None)?;
    let groups = groups_of(&sim_config, &simulation);
    let output = track(&sim_config.geometry, &cfg.tracker, groups)?;
    let aligned = align(&output.trajectory, &simulation.truth)?;
    Ok(Trial {
        sim_config,
        simulation,
        output,
        aligned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Angles from the current packet only.
    SinglePacketAod,
    /// Path phase changes read as displacement without cancelling the clock.
    AssumeSameClock,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::SinglePacketAod => "single-packet-aod",
            AblationMode::AssumeSameClock => "assume-same-clock",
        }
    }

    pub fn apply(self, base: &TrackerConfig) -> TrackerConfig {
        let mut cfg = *base;
        match self {
            AblationMode::SinglePacketAod => cfg.aod_mode = AodMode::SinglePacket,
            AblationMode::AssumeSameClock => cfg.clock_model = ClockModel::AssumeSameClock,
        }
        cfg
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-packet-aod" => Ok(AblationMode::SinglePacketAod),
            "assume-same-clock" => Ok(AblationMode::AssumeSameClock),
            _ => Err(Error::config("mode", format!("unknown ablation `{s}`"))),
        }
    }
}

/// Per-packet angle errors of windowed and single-packet estimation on the
/// same packets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AodComparison {
    pub multi_packet: Vec<f64>,
    pub single_packet: Vec<f64>,
}

impl AodComparison {
    pub fn extend(&mut self, other: AodComparison) {
        self.multi_packet.extend(other.multi_packet);
        self.single_packet.extend(other.single_packet);
    }
}

/// For every `every`-th packet once the window holds `min_packets`, estimates
/// the paths from the trailing window and from that packet alone, and scores
/// each by the distance from `truth[ap]` to its closest estimated angle.
pub fn compare_aod(
    geometry: &ArrayGeometry,
    aod: &AodConfig,
    records: &BTreeMap<ApId, Vec<CsiRecord>>,
    truth: &BTreeMap<ApId, f64>,
    every: usize,
) -> Result<AodComparison> {
    let music = MusicEstimator::new(geometry.clone(), aod.grid_step);
    let single_cfg = AodConfig { min_packets: 1, ..*aod };
    let mut out = AodComparison::default();
    for (ap, stream) in records {
        let Some(&direct) = truth.get(ap) else { continue };
        for end in (aod.min_packets..=stream.len()).step_by(every.max(1)) {
            let now = stream[end - 1].timestamp;
            let start = stream[..end].partition_point(|r| r.timestamp < now - aod.window_seconds);
            let multi = music.estimate(&stream[start..end], aod)?;
            let single = music.estimate(&stream[end - 1..end], &single_cfg)?;
            out.multi_packet.push(closest_aod_error(multi.aods(), direct));
            out.single_packet.push(closest_aod_error(single.aods(), direct));
        }
    }
    Ok(out)
}

/// Direct-path (strongest) angle per AP of a simulation config.
pub fn direct_path_aods(sim: &SimConfig) -> BTreeMap<ApId, f64> {
    sim.aps
        .iter()
        .filter_map(|ap| {
            ap.paths
                .iter()
                .max_by(|a, b| a.gain.norm().total_cmp(&b.gain.norm()))
                .map(|p| (ap.id, p.aod))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: AblationMode,
    pub full_median_error_m: f64,
    pub ablated_median_error_m: f64,
    /// `ablated / full` median trajectory error.
    pub error_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aod: Option<AodSummary>,
}

impl AblationReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<report>", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("<report>", e.message().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AodSummary {
    pub multi_packet_p80_deg: f64,
    pub single_packet_p80_deg: f64,
    pub samples: usize,
}

/// Full method and ablated method on the same packets, plus pooled error CDFs.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub report: AblationReport,
    pub full: AlignedError,
    pub ablated: AlignedError,
    pub aod: Option<AodComparison>,
}

impl Ablation {
    /// `(series, error, fraction)` rows for every available CDF.
    pub fn cdf_series(&self) -> Result<Vec<(String, CdfRow)>> {
        let mut rows = Vec::new();
        let mut add = |name: &str, values: &[f64]| -> Result<()> {
            for r in cdf_of(values)?.rows {
                rows.push((name.to_string(), r));
            }
            Ok(())
        };
        add("full-trajectory", &self.full.errors)?;
        add(&format!("{}-trajectory", self.report.mode), &self.ablated.errors)?;
        if let Some(a) = &self.aod {
            add("multi-packet-aod", &a.multi_packet)?;
            add("single-packet-aod", &a.single_packet)?;
        }
        Ok(rows)
    }
}

/// Tracks `groups` with the full method and with `mode`, aligning both to
/// `truth`. Angle errors are compared when true direct-path angles are known.
pub fn ablate(
    geometry: &ArrayGeometry,
    base: &TrackerConfig,
    groups: &[PacketGroup],
    truth: &Trajectory,
    mode: AblationMode,
    aod_truth: Option<(&BTreeMap<ApId, Vec<CsiRecord>>, &BTreeMap<ApId, f64>)>,
) -> Result<Ablation> {
    let full = track(geometry, base, groups.iter().cloned())?;
    let ablated = track(geometry, &mode.apply(base), groups.iter().cloned())?;
    let full = align(&full.trajectory, truth)?;
    let ablated = align(&ablated.trajectory, truth)?;
    let aod = match (mode, aod_truth) {
        (AblationMode::SinglePacketAod, Some((records, angles))) => {
            Some(compare_aod(geometry, &base.aod, records, angles, 10)?)
        }
        _ => None,
    };
    let (fm, am) = (full.median(), ablated.median());
    let report = AblationReport {
        mode,
        full_median_error_m: fm,
        ablated_median_error_m: am,
        error_ratio: am / fm,
        aod: aod.as_ref().map(|a| AodSummary {
            multi_packet_p80_deg: percentile(&a.multi_packet, 80.0).to_degrees(),
            single_packet_p80_deg: percentile(&a.single_packet, 80.0).to_degrees(),
            samples: a.multi_packet.len(),
        }),
    };
    Ok(Ablation {
        report,
        full,
        ablated,
        aod,
    })
}

/// Groups records by AP.
pub fn by_ap(records: &[CsiRecord]) -> BTreeMap<ApId, Vec<CsiRecord>> {
    let mut map: BTreeMap<ApId, Vec<CsiRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.ap).or_default().push(r.clone());
    }
    for v in map.values_mut() {
        v.sort_by_key(|r| r.packet_index);
    }
    map
}
