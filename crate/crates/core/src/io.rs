//! File formats: CSI traces, run configs, trajectories and CDF tables.
//!
//! A trace is line-oriented text. Header lines start with `#`; the first one
//! names the format and version. Every other non-empty line is one record:
//!
//! ```text
//! # csitrack-trace v1
//! # antennas 3
//! # aps 0 1 2 3
//! # wavelength 6.0000000000000000e-2
//! # geometry x0 y0 x1 y1 x2 y2
//! # packet_interval 6.0000000000000000e-3
//! # paths 2
//! # window 1.0000000000000000e1
//! <ap> <packet> <timestamp> <re_0> <im_0> ... <re_M-1> <im_M-1>
//! ```
//!
//! Floats are written with 17 significant digits so reading a trace back
//! reproduces every bit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CdfRow;
use crate::geometry::ArrayGeometry;
use crate::scenario::MotionSpec;
use crate::sim::SimConfig;
use crate::tracker::{SampleQuality, TrackerConfig};
use crate::types::{ApId, CsiRecord, Trajectory, TrajectoryPoint};

pub const TRACE_MAGIC: &str = "csitrack-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub version: u32,
    pub geometry: ArrayGeometry,
    pub aps: Vec<ApId>,
    pub packet_interval: f64,
    /// Tracker defaults recorded by the producer, if any.
    pub num_paths: Option<usize>,
    pub window_seconds: Option<f64>,
}

impl TraceHeader {
    pub fn new(geometry: ArrayGeometry, aps: Vec<ApId>, packet_interval: f64) -> Self {
        Self {
            version: TRACE_VERSION,
            geometry,
            aps,
            packet_interval,
            num_paths: None,
            window_seconds: None,
        }
    }

    pub fn antennas(&self) -> usize {
        self.geometry.antennas()
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace<W: Write>(mut w: W, header: &TraceHeader, records: &[CsiRecord]) -> Result<()> {
    writeln!(w, "# {TRACE_MAGIC} v{}", header.version)?;
    writeln!(w, "# antennas {}", header.antennas())?;
    let aps: Vec<String> = header.aps.iter().map(|a| a.to_string()).collect();
    writeln!(w, "# aps {}", aps.join(" "))?;
    writeln!(w, "# wavelength {}", fmt_f64(header.geometry.wavelength()))?;
    let pos: Vec<String> = header
        .geometry
        .positions()
        .iter()
        .flat_map(|p| [fmt_f64(p[0]), fmt_f64(p[1])])
        .collect();
    writeln!(w, "# geometry {}", pos.join(" "))?;
    writeln!(w, "# packet_interval {}", fmt_f64(header.packet_interval))?;
    if let Some(l) = header.num_paths {
        writeln!(w, "# paths {l}")?;
    }
    if let Some(v) = header.window_seconds {
        writeln!(w, "# window {}", fmt_f64(v))?;
    }
    let mut line = String::new();
    for r in records {
        if r.csi.len() != header.antennas() {
            return Err(Error::InvalidInput(format!(
                "record for AP {} packet {} has {} antennas, header says {}",
                r.ap,
                r.packet_index,
                r.csi.len(),
                header.antennas()
            )));
        }
        line.clear();
        line.push_str(&format!("{} {} {}", r.ap, r.packet_index, fmt_f64(r.timestamp)));
        for z in &r.csi {
            line.push(' ');
            line.push_str(&fmt_f64(z.re));
            line.push(' ');
            line.push_str(&fmt_f64(z.im));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("bad {what} `{tok}`"),
    })
}

#[derive(Default)]
struct HeaderFields {
    version: Option<u32>,
    antennas: Option<usize>,
    aps: Option<Vec<ApId>>,
    wavelength: Option<f64>,
    geometry: Option<Vec<f64>>,
    packet_interval: Option<f64>,
    num_paths: Option<usize>,
    window_seconds: Option<f64>,
}

impl HeaderFields {
    fn finish(self, line: usize) -> Result<TraceHeader> {
        let missing = |what: &str| Error::Parse {
            line,
            reason: format!("header is missing `{what}`"),
        };
        let version = self.version.ok_or_else(|| missing("version"))?;
        let antennas = self.antennas.ok_or_else(|| missing("antennas"))?;
        let coords = self.geometry.ok_or_else(|| missing("geometry"))?;
        if coords.len() != 2 * antennas {
            return Err(Error::Parse {
                line,
                reason: format!("geometry has {} coordinates for {antennas} antennas", coords.len()),
            });
        }
        let geometry = ArrayGeometry::new(
            coords.chunks(2).map(|c| [c[0], c[1]]).collect(),
            self.wavelength.ok_or_else(|| missing("wavelength"))?,
        )
        .map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        Ok(TraceHeader {
            version,
            geometry,
            aps: self.aps.ok_or_else(|| missing("aps"))?,
            packet_interval: self.packet_interval.ok_or_else(|| missing("packet_interval"))?,
            num_paths: self.num_paths,
            window_seconds: self.window_seconds,
        })
    }
}

/// Reads a whole trace, checking the header, record widths and per-AP order.
pub fn read_trace<R: BufRead>(reader: R) -> Result<(TraceHeader, Vec<CsiRecord>)> {
    let mut fields = HeaderFields::default();
    let mut header: Option<TraceHeader> = None;
    let mut records = Vec::new();
    let mut last: BTreeMap<ApId, (u64, f64)> = BTreeMap::new();
    let mut line_no = 0;
    for line in reader.lines() {
        line_no += 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('#') {
            if header.is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "header line after records".into(),
                });
            }
            let mut tok = rest.split_whitespace();
            let key = tok.next().unwrap_or("");
            if line_no == 1 {
                if key != TRACE_MAGIC {
                    return Err(Error::Parse {
                        line: 1,
                        reason: format!("expected `{TRACE_MAGIC}` header"),
                    });
                }
                let v = tok.next().unwrap_or("");
                let version = v
                    .strip_prefix('v')
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&n| n == TRACE_VERSION)
                    .ok_or_else(|| Error::Version(v.to_string()))?;
                fields.version = Some(version);
                continue;
            }
            match key {
                "antennas" => fields.antennas = Some(parse(tok.next(), line_no, "antenna count")?),
                "aps" => fields.aps = Some(tok.map(|t| parse(Some(t), line_no, "AP id").map(ApId)).collect::<Result<_>>()?),
                "wavelength" => fields.wavelength = Some(parse(tok.next(), line_no, "wavelength")?),
                "geometry" => fields.geometry = Some(tok.map(|t| parse(Some(t), line_no, "coordinate")).collect::<Result<_>>()?),
                "packet_interval" => fields.packet_interval = Some(parse(tok.next(), line_no, "packet interval")?),
                "paths" => fields.num_paths = Some(parse(tok.next(), line_no, "path count")?),
                "window" => fields.window_seconds = Some(parse(tok.next(), line_no, "window")?),
                // Unknown keys are comments.
                _ => {}
            }
            continue;
        }
        if line_no == 1 {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected `{TRACE_MAGIC}` header"),
            });
        }
        if header.is_none() {
            header = Some(std::mem::take(&mut fields).finish(line_no)?);
        }
        let h = header.as_ref().expect("set above");
        let mut tok = text.split_whitespace();
        let ap = ApId(parse(tok.next(), line_no, "AP id")?);
        if !h.aps.contains(&ap) {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("AP {ap} not declared in header"),
            });
        }
        let packet_index: u64 = parse(tok.next(), line_no, "packet index")?;
        let timestamp: f64 = parse(tok.next(), line_no, "timestamp")?;
        let mut csi = Vec::with_capacity(h.antennas());
        for q in 0..h.antennas() {
            let re = parse(tok.next(), line_no, &format!("real part of antenna {q}"))?;
            let im = parse(tok.next(), line_no, &format!("imaginary part of antenna {q}"))?;
            csi.push(Complex64::new(re, im));
        }
        if tok.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("more than {} antennas", h.antennas()),
            });
        }
        if let Some(&(p, t)) = last.get(&ap) {
            if packet_index <= p || timestamp < t {
                return Err(Error::StreamOrder {
                    last: p,
                    got: packet_index,
                });
            }
        }
        last.insert(ap, (packet_index, timestamp));
        records.push(CsiRecord {
            ap,
            packet_index,
            timestamp,
            csi,
        });
    }
    let header = match header {
        Some(h) => h,
        None if line_no == 0 => {
            return Err(Error::Parse {
                line: 0,
                reason: "empty trace".into(),
            })
        }
        None => fields.finish(line_no)?,
    };
    Ok((header, records))
}

pub fn write_trace_file(path: &Path, header: &TraceHeader, records: &[CsiRecord]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trace(std::io::BufWriter::new(f), header, records)
}

pub fn read_trace_file(path: &Path) -> Result<(TraceHeader, Vec<CsiRecord>)> {
    let f = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(f))
}

/// Records of every AP for one packet. APs without a record are listed in
/// `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketGroup {
    pub packet_index: u64,
    pub records: BTreeMap<ApId, CsiRecord>,
    pub missing: Vec<ApId>,
}

impl PacketGroup {
    pub fn timestamp(&self) -> f64 {
        self.records
            .values()
            .map(|r| r.timestamp)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Groups records by packet index across `aps`. Groups follow packet order;
/// the result depends only on the multiset of input records. When an AP
/// reports the same packet twice, the earliest timestamp wins.
pub fn pair_streams(aps: &[ApId], records: impl IntoIterator<Item = CsiRecord>) -> Vec<PacketGroup> {
    let mut by_packet: BTreeMap<u64, BTreeMap<ApId, CsiRecord>> = BTreeMap::new();
    let mut known: BTreeSet<ApId> = aps.iter().copied().collect();
    for r in records {
        known.insert(r.ap);
        let slot = by_packet.entry(r.packet_index).or_default();
        match slot.get(&r.ap) {
            Some(old) if !record_precedes(&r, old) => {}
            _ => {
                slot.insert(r.ap, r);
            }
        }
    }
    by_packet
        .into_iter()
        .map(|(packet_index, records)| PacketGroup {
            packet_index,
            missing: known.iter().filter(|a| !records.contains_key(a)).copied().collect(),
            records,
        })
        .collect()
}

fn record_precedes(a: &CsiRecord, b: &CsiRecord) -> bool {
    let key = |r: &CsiRecord| -> Vec<u64> {
        std::iter::once(r.timestamp.to_bits())
            .chain(r.csi.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]))
            .collect()
    };
    a.timestamp
        .total_cmp(&b.timestamp)
        .then_with(|| key(a).cmp(&key(b)))
        .is_lt()
}

/// Output file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// Everything one run needs, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionSpec>,
    #[serde(default)]
    pub tracker: TrackerConfig,
    /// APs the tracker should use; all traced APs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aps: Option<Vec<ApId>>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = &self.sim {
            sim.validate()?;
            self.tracker.validate(sim.geometry.antennas())?;
            if let Some(aps) = &self.aps {
                let known = sim.ap_ids();
                for (i, ap) in aps.iter().enumerate() {
                    if !known.contains(ap) {
                        return Err(Error::config(format!("aps[{i}]"), format!("AP {ap} is not in sim.aps")));
                    }
                }
            }
        }
        if let Some(m) = &self.motion {
            m.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<root>".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<SampleQuality>,
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes `t,x,y` rows, with a `quality` column when flags are given.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, quality: Option<&[SampleQuality]>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (i, p) in traj.points().iter().enumerate() {
        out.serialize(TrajectoryRow {
            t: p.t,
            x: p.x,
            y: p.y,
            quality: quality.map(|q| q.get(i).copied().unwrap_or(SampleQuality::Ok)),
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: std::io::Read>(r: R) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut points = Vec::new();
    for row in rdr.deserialize::<TrajectoryRow>() {
        let row = row.map_err(csv_err)?;
        points.push(TrajectoryPoint {
            t: row.t,
            x: row.x,
            y: row.y,
        });
    }
    Trajectory::from_points(points)
}

pub fn write_trajectory_file(path: &Path, traj: &Trajectory, quality: Option<&[SampleQuality]>) -> Result<()> {
    write_trajectory(std::fs::File::create(path)?, traj, quality)
}

pub fn read_trajectory_file(path: &Path) -> Result<Trajectory> {
    read_trajectory(std::fs::File::open(path)?)
}

/// Writes `error_m,fraction` rows.
pub fn write_cdf<W: Write>(w: W, rows: &[CdfRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> TraceHeader {
        let mut h = TraceHeader::new(ArrayGeometry::default_circular(), vec![ApId(0), ApId(1)], 0.006);
        h.num_paths = Some(2);
        h.window_seconds = Some(10.0);
        h
    }

    fn rec(ap: u32, p: u64, seed: f64) -> CsiRecord {
        CsiRecord {
            ap: ApId(ap),
            packet_index: p,
            timestamp: p as f64 * 0.006,
            csi: (0..3).map(|q| Complex64::new(seed * 0.1 + q as f64 / 3.0, -seed / 7.0)).collect(),
        }
    }

    fn encode(h: &TraceHeader, r: &[CsiRecord]) -> String {
        let mut buf = Vec::new();
        write_trace(&mut buf, h, r).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip() {
        let recs: Vec<_> = (0..5).flat_map(|p| [rec(0, p, p as f64 + 0.1), rec(1, p, 1.0 / (p as f64 + 3.0))]).collect();
        let text = encode(&header(), &recs);
        let (h, back) = read_trace(text.as_bytes()).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, recs);
    }

    #[test]
    fn truncated_record_reports_its_line() {
        let recs: Vec<_> = (0..3).map(|p| rec(0, p, 1.0)).collect();
        let text = encode(&header(), &recs);
        let cut = &text[..text.trim_end().rfind(' ').unwrap()];
        let lines = cut.lines().count();
        match read_trace(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, lines),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = encode(&header(), &[]).replace("v1", "v9");
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Version(v)) if v == "v9"));
        assert!(read_trace("0 0 0.0 1 2 3 4 5 6\n".as_bytes()).is_err());
    }

    #[test]
    fn header_only_trace_reads() {
        let (h, r) = read_trace(encode(&header(), &[]).as_bytes()).unwrap();
        assert_eq!(h, header());
        assert!(r.is_empty());
    }

    #[test]
    fn undeclared_ap_and_disorder_rejected() {
        let text = encode(&header(), &[rec(0, 1, 0.0), rec(0, 0, 0.0)]);
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::StreamOrder { last: 1, got: 0 })));
        let text = encode(&header(), &[rec(1, 0, 0.0)]).replace("# aps 0 1", "# aps 0");
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn complete_streams_group_fully() {
        let recs: Vec<_> = (0..4).flat_map(|p| [rec(0, p, 0.0), rec(1, p, 1.0)]).collect();
        let groups = pair_streams(&[ApId(0), ApId(1)], recs);
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| g.records.len() == 2 && g.is_complete()));
    }

    #[test]
    fn missing_packet_marked_absent() {
        let recs: Vec<_> = (0..10)
            .flat_map(|p| [Some(rec(0, p, 0.0)), (p != 7).then(|| rec(2, p, 1.0))])
            .flatten()
            .collect();
        let groups = pair_streams(&[ApId(0), ApId(2)], recs);
        assert_eq!(groups[7].missing, vec![ApId(2)]);
        assert!(groups.iter().filter(|g| g.packet_index != 7).all(|g| g.is_complete()));
    }

    proptest! {
        #[test]
        fn arrival_order_does_not_matter(perm in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle()) {
            let recs: Vec<_> = (0..10).flat_map(|p| [rec(0, p, 0.5), rec(1, p, 1.5), rec(2, p, 2.5)]).collect();
            let shuffled: Vec<_> = perm.iter().map(|&i| recs[i].clone()).collect();
            let aps = [ApId(0), ApId(1), ApId(2)];
            prop_assert_eq!(pair_streams(&aps, shuffled), pair_streams(&aps, recs));
        }

        #[test]
        fn trace_floats_round_trip_bitwise(re in proptest::num::f64::NORMAL, im in proptest::num::f64::NORMAL, t in 0.0f64..1e6) {
            let r = CsiRecord { ap: ApId(1), packet_index: 3, timestamp: t, csi: vec![Complex64::new(re, im); 3] };
            let text = encode(&header(), std::slice::from_ref(&r));
            let (_, back) = read_trace(text.as_bytes()).unwrap();
            prop_assert_eq!(back[0].csi[0].re.to_bits(), re.to_bits());
            prop_assert_eq!(back[0].csi[0].im.to_bits(), im.to_bits());
            prop_assert_eq!(back[0].timestamp.to_bits(), t.to_bits());
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let t = Trajectory::from_points(vec![
            TrajectoryPoint { t: 0.0, x: 0.0, y: 0.0 },
            TrajectoryPoint { t: 0.006, x: 1.0 / 3.0, y: -2e-7 },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t, Some(&[SampleQuality::Ok, SampleQuality::Unobservable])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,quality\n"));
        assert_eq!(read_trajectory(buf.as_slice()).unwrap(), t);
    }
}
