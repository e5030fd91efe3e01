//! On-disk formats.
//!
//! * `*.rdhm`: sequence of little-endian frame records, each a 16-byte header
//!   (`RDHM`, u32 rows, u32 columns, u32 reserved = 0) followed by
//!   `rows·columns` f32 values, row-major. Heatmaps are `D × R` (Doppler
//!   rows); signature dumps are `D × 21` with a `.meta.jsonl` sidecar holding
//!   one [`SignatureMeta`] per record. Radar id and timestamps of heatmaps
//!   come from the matching point cloud file.
//! * `*.jsonl`: one JSON record per line.
//! * PM readings: CSV `sensor_id,timestamp,x,y,pm1,pm2_5,pm10` with ISO-8601
//!   UTC timestamps; session time 0 is [`EPOCH`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, TimeDelta, Utc};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::{PMField, PMSensorReading, PmClass, PmLevels};
use crate::geometry::Vec2;
use crate::radar_sim::{RDHeatmap, RadarId};
use crate::reid::GlobalId;
use crate::signatures::{Normalization, RDSignature, PATCH_ROWS};
use crate::tdscan::LocalId;

pub const RDHM_MAGIC: &[u8; 4] = b"RDHM";
const RDHM_HEADER: usize = 16;
/// Session time zero.
pub const EPOCH: &str = "2025-01-01T00:00:00Z";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Writes the frames of one heatmap stream. An empty stream is an empty file.
pub fn write_rdhm(path: &Path, frames: &[RDHeatmap]) -> Result<()> {
    let mut out = Vec::new();
    for f in frames {
        encode_rdhm_record(&f.data, &mut out);
    }
    write_bytes(path, &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Appends one record.
pub fn encode_rdhm_record(data: &Array2<f32>, out: &mut Vec<u8>) {
    let (rows, cols) = data.dim();
    out.reserve(RDHM_HEADER + 4 * rows * cols);
    out.extend(RDHM_MAGIC);
    for v in [rows as u32, cols as u32, 0] {
        out.extend(v.to_le_bytes());
    }
    for v in data.iter() {
        out.extend(v.to_le_bytes());
    }
}

/// Reads every record of an RDHM file.
pub fn read_rdhm(path: &Path) -> Result<Vec<Array2<f32>>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode_rdhm(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_rdhm(mut bytes: &[u8]) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let n = out.len();
        let header = bytes
            .get(..RDHM_HEADER)
            .ok_or_else(|| Error::Data(format!("record {n}: truncated header")))?;
        if &header[..4] != RDHM_MAGIC {
            return Err(Error::Data(format!("record {n}: bad magic")));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let (rows, cols, reserved) = (word(4) as usize, word(8) as usize, word(12));
        if reserved != 0 {
            return Err(Error::Data(format!("record {n}: reserved field is {reserved}, expected 0")));
        }
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Data(format!("record {n}: {rows}x{cols} overflows")))?;
        let body = bytes
            .get(RDHM_HEADER..RDHM_HEADER + len)
            .ok_or_else(|| Error::Data(format!("record {n}: truncated {rows}x{cols} body")))?;
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(Array2::from_shape_vec((rows, cols), values).expect("length checked"));
        bytes = &bytes[RDHM_HEADER + len..];
    }
    Ok(out)
}

/// Per-record metadata of a signature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureMeta {
    pub radar_id: RadarId,
    pub local_id: LocalId,
    pub timestamp_s: f64,
    pub center_range_bin: usize,
    pub normalization: Normalization,
}

pub fn signature_sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta.jsonl")
}

/// Writes signatures as `D × 21` records plus the sidecar. Values are
/// stored as f32, which is exact for raw patches cut from a heatmap.
pub fn write_signature_dump(path: &Path, sigs: &[RDSignature]) -> Result<()> {
    let mut out = Vec::new();
    let mut meta = Vec::with_capacity(sigs.len());
    for s in sigs {
        s.validate()?;
        encode_rdhm_record(&s.patch.t().mapv(|v| v as f32), &mut out);
        meta.push(SignatureMeta {
            radar_id: s.radar_id,
            local_id: s.local_id,
            timestamp_s: s.timestamp_s,
            center_range_bin: s.center_range_bin,
            normalization: s.normalization,
        });
    }
    write_bytes(path, &out)?;
    write_jsonl(&signature_sidecar(path), &meta)
}

pub fn read_signature_dump(path: &Path) -> Result<Vec<RDSignature>> {
    let records = read_rdhm(path)?;
    let meta_path = signature_sidecar(path);
    let meta: Vec<SignatureMeta> = read_jsonl(&meta_path)?;
    if meta.len() != records.len() {
        return Err(Error::Data(format!(
            "{} has {} records but {} has {}",
            path.display(),
            records.len(),
            meta_path.display(),
            meta.len()
        )));
    }
    records
        .into_iter()
        .zip(meta)
        .map(|(data, m)| {
            if data.ncols() != PATCH_ROWS {
                return Err(Error::Shape { expected: (data.nrows(), PATCH_ROWS), actual: data.dim() });
            }
            let sig = RDSignature {
                local_id: m.local_id,
                radar_id: m.radar_id,
                timestamp_s: m.timestamp_s,
                patch: data.t().mapv(f64::from),
                center_range_bin: m.center_range_bin,
                normalization: m.normalization,
            };
            sig.validate()?;
            Ok(sig)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(EPOCH).expect("valid epoch").with_timezone(&Utc)
}

/// Session seconds to an ISO-8601 UTC timestamp with nanosecond precision.
pub fn to_iso(t: f64) -> Result<String> {
    let ns = (t * 1e9).round();
    if !ns.is_finite() || ns.abs() > 9.0e18 {
        return Err(Error::Data(format!("timestamp {t} s out of range")));
    }
    let at = epoch() + TimeDelta::nanoseconds(ns as i64);
    Ok(at.format("%Y-%m-%dT%H:%M:%S%.9fZ").to_string())
}

pub fn from_iso(s: &str) -> Result<f64> {
    let at = DateTime::parse_from_rfc3339(s).map_err(|e| Error::Data(format!("timestamp {s:?}: {e}")))?;
    let d = at.with_timezone(&Utc) - epoch();
    let ns = d.num_nanoseconds().ok_or_else(|| Error::Data(format!("timestamp {s:?} out of range")))?;
    Ok(ns as f64 / 1e9)
}

#[derive(Debug, Serialize, Deserialize)]
struct PmRow {
    sensor_id: String,
    timestamp: String,
    x: f64,
    y: f64,
    pm1: f64,
    pm2_5: f64,
    pm10: f64,
}

pub fn write_pm_csv(path: &Path, readings: &[PMSensorReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in readings {
        w.serialize(PmRow {
            sensor_id: r.sensor_id.clone(),
            timestamp: to_iso(r.timestamp_s)?,
            x: r.position.x,
            y: r.position.y,
            pm1: r.levels.pm1,
            pm2_5: r.levels.pm2_5,
            pm10: r.levels.pm10,
        })
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pm_csv(path: &Path) -> Result<Vec<PMSensorReading>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<PmRow>().enumerate() {
        let ctx = |m: String| Error::Data(format!("{}: record {}: {m}", path.display(), i + 1));
        let row = row.map_err(|e| ctx(e.to_string()))?;
        let reading = PMSensorReading {
            sensor_id: row.sensor_id,
            position: Vec2::new(row.x, row.y),
            timestamp_s: from_iso(&row.timestamp).map_err(|e| ctx(e.to_string()))?,
            levels: PmLevels {
                pm1: row.pm1,
                pm2_5: row.pm2_5,
                pm10: row.pm10,
            },
        };
        reading.validate().map_err(|e| ctx(e.to_string()))?;
        out.push(reading);
    }
    Ok(out)
}

/// Identity decision for one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub timestamp_s: f64,
    pub radar_id: RadarId,
    pub local_id: LocalId,
    pub global_id: GlobalId,
    /// Correlation of the match that linked this detection in this frame.
    pub rho: Option<f64>,
    pub position: Vec2,
}

/// Zone values of every window, one row per zone and window.
pub fn write_heatmap_csv(path: &Path, fields: &[(f64, PMField)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["window_start_s", "ix", "iy", "x", "y", "pm1", "pm2_5", "pm10"])
        .map_err(err)?;
    for (t0, field) in fields {
        let PMField::Zones { grid, .. } = field else {
            continue;
        };
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let c = grid.center(ix, iy);
                let mut row = vec![t0.to_string(), ix.to_string(), iy.to_string(), c.x.to_string(), c.y.to_string()];
                for class in PmClass::ALL {
                    row.push(field.evaluate(c, class)?.to_string());
                }
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::{zone_field, ZoneGrid};
    use crate::radar_sim::{ChirpConfig, PointCloudFrame, RadarPoint};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn heatmaps(seed: u64, n: usize) -> Vec<RDHeatmap> {
        let cfg = ChirpConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut h = RDHeatmap::zeros(3, i as f64 * 0.1, &cfg);
                h.data.mapv_inplace(|_| rng.random::<f32>() * 1e-3);
                h.data[[0, 0]] = f32::MIN_POSITIVE / 3.0;
                h
            })
            .collect()
    }

    #[test]
    fn rdhm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("radar_3.rdhm");
        let frames = heatmaps(1, 4);
        write_rdhm(&p, &frames).unwrap();
        let back = read_rdhm(&p).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in frames.iter().zip(&back) {
            assert!(a.data.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 * (16 + 4 * 182 * 256));
        assert_eq!(&bytes[..4], b"RDHM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 182);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 256);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        // first value is Doppler bin 0, range bin 0; the next is range bin 1
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()).to_bits(), frames[0].data[[0, 0]].to_bits());
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()).to_bits(), frames[0].data[[0, 1]].to_bits());
        write_rdhm(&p, &[]).unwrap();
        assert!(read_rdhm(&p).unwrap().is_empty());
    }

    #[test]
    fn rdhm_rejects_corruption() {
        let mut bytes = Vec::new();
        for h in heatmaps(2, 2) {
            encode_rdhm_record(&h.data, &mut bytes);
        }
        assert_eq!(decode_rdhm(&bytes).unwrap().len(), 2);
        assert!(decode_rdhm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_rdhm(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_rdhm(&bad).is_err());
        let mut reserved = bytes.clone();
        reserved[12] = 1;
        assert!(decode_rdhm(&reserved).is_err());
    }

    #[test]
    fn signature_dump_round_trip() {
        let hm = &heatmaps(4, 1)[0];
        let sigs: Vec<RDSignature> = [0usize, 40, 255]
            .iter()
            .enumerate()
            .map(|(i, &r0)| {
                let mut s = crate::signatures::extract_signature(hm, r0, i as LocalId + 1).unwrap();
                s.timestamp_s = 0.1 * i as f64;
                s
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sigs.rdhm");
        write_signature_dump(&p, &sigs).unwrap();
        let first = &read_rdhm(&p).unwrap()[0];
        assert_eq!(first.dim(), (182, PATCH_ROWS));
        assert_eq!(read_signature_dump(&p).unwrap(), sigs);
        std::fs::write(signature_sidecar(&p), "").unwrap();
        assert!(matches!(read_signature_dump(&p), Err(Error::Data(_))));
    }

    #[test]
    fn jsonl_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("radar_1.points.jsonl");
        let frames = vec![
            PointCloudFrame {
                radar_id: 1,
                timestamp_s: 0.1,
                points: vec![RadarPoint { x: 0.1 + 0.2, y: 1.0 / 3.0, z: -0.0, doppler: 1e-300, power: 7.5e-9 }],
            },
            PointCloudFrame { radar_id: 1, timestamp_s: 0.2, points: vec![] },
        ];
        write_jsonl(&p, &frames).unwrap();
        let back: Vec<PointCloudFrame> = read_jsonl(&p).unwrap();
        assert_eq!(back, frames);
        assert_eq!(back[0].points[0].y.to_bits(), frames[0].points[0].y.to_bits());

        std::fs::write(&p, "{\"radar_id\": 1}\n").unwrap();
        let e = read_jsonl::<PointCloudFrame>(&p).unwrap_err();
        assert!(e.to_string().contains(":1:"), "{e}");
    }

    #[test]
    fn iso_timestamps() {
        assert_eq!(to_iso(0.0).unwrap(), "2025-01-01T00:00:00.000000000Z");
        assert_eq!(to_iso(3661.5).unwrap(), "2025-01-01T01:01:01.500000000Z");
        assert_eq!(from_iso("2025-01-01T00:00:07Z").unwrap(), 7.0);
        assert_eq!(from_iso("2025-01-01T02:00:07+02:00").unwrap(), 7.0);
        assert!(from_iso("yesterday").is_err());
    }

    #[test]
    fn pm_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pm.csv");
        let rs: Vec<PMSensorReading> = (0..6)
            .map(|i| PMSensorReading {
                sensor_id: format!("pm,{}", i % 2),
                position: Vec2::new(1.25, -0.5 * i as f64),
                timestamp_s: i as f64,
                levels: PmLevels { pm1: 10.0 / 3.0, pm2_5: 0.1 * i as f64, pm10: 1e5 },
            })
            .collect();
        write_pm_csv(&p, &rs).unwrap();
        assert_eq!(read_pm_csv(&p).unwrap(), rs);

        std::fs::write(&p, "sensor_id,timestamp,x,y,pm1,pm2_5,pm10\na,2025-01-01T00:00:00Z,0,0,-1,0,0\n").unwrap();
        assert!(read_pm_csv(&p).is_err());
    }

    #[test]
    fn heatmap_csv_has_one_row_per_zone() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("heat.csv");
        let grid = ZoneGrid { origin: Vec2::ZERO, cell_size_m: 2.0, nx: 2, ny: 1 };
        let rs = [
            PMSensorReading { sensor_id: "a".into(), position: Vec2::new(1.0, 1.0), timestamp_s: 0.0, levels: PmLevels { pm1: 1.0, pm2_5: 100.0, pm10: 3.0 } },
            PMSensorReading { sensor_id: "b".into(), position: Vec2::new(3.0, 1.0), timestamp_s: 0.0, levels: PmLevels { pm1: 1.0, pm2_5: 300.0, pm10: 3.0 } },
        ];
        let f = zone_field(&rs, &grid).unwrap();
        write_heatmap_csv(&p, &[(0.0, f.clone()), (5.0, f)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,0,1,1,"));
        let v: Vec<f64> = lines[1].split(',').skip(5).map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 120.0).abs() < 1e-9 && (v[2] - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn association_records_round_trip(t in 0.0f64..1e4, rho in proptest::option::of(0.0f64..1.0), x in -50.0f64..50.0) {
            let r = AssociationRecord { timestamp_s: t, radar_id: 2, local_id: 7, global_id: GlobalId(3), rho, position: Vec2::new(x, -x) };
            let s = serde_json::to_string(&r).unwrap();
            prop_assert_eq!(serde_json::from_str::<AssociationRecord>(&s).unwrap(), r);
        }

        #[test]
        fn iso_round_trip_on_millisecond_grid(ms in 0i64..1_000_000_000) {
            let t = ms as f64 / 1e3;
            prop_assert_eq!(from_iso(&to_iso(t).unwrap()).unwrap(), t);
        }
    }
}
