//! Recorded vehicle tracks at 10 Hz, cut into 6 s past / 4 s future pairs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATASET_HZ: f64 = 10.0;
pub const PAST_FRAMES: usize = 60;
pub const FUTURE_FRAMES: usize = 40;
pub const PAIR_FRAMES: usize = PAST_FRAMES + FUTURE_FRAMES;
/// Offset between consecutive windows of one vehicle, in frames.
pub const DEFAULT_STRIDE: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse `{column}` from {value:?}")]
    BadValue { row: usize, column: &'static str, value: String },
    #[error("vehicle {vehicle}: frame {frame} does not increase after {previous}")]
    NonMonotone { vehicle: u64, previous: i64, frame: i64 },
    #[error("vehicle {vehicle}: frames jump from {previous} to {frame}")]
    Gap { vehicle: u64, previous: i64, frame: i64 },
    #[error("stride must be positive")]
    InvalidStride,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub vehicle: u64,
    pub start_frame: i64,
    pub past: Vec<TrackRecord>,
    pub future: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub records: Vec<TrackRecord>,
    pub pairs: Vec<TrajectoryPair>,
    /// Vehicles shorter than one window.
    pub skipped: usize,
    pub stride: usize,
}

const COLUMNS: [(&str, &[&str]); 6] = [
    ("id", &["id", "vehicle_id", "track_id"]),
    ("frame", &["frame"]),
    ("x", &["x"]),
    ("y", &["y"]),
    ("vx", &["vx", "xVelocity"]),
    ("vy", &["vy", "yVelocity"]),
];

pub fn ingest_dataset(path: &Path, stride: usize) -> Result<TrajectoryDataset, DatasetError> {
    ingest_reader(std::fs::File::open(path)?, stride)
}

pub fn ingest_reader<R: Read>(reader: R, stride: usize) -> Result<TrajectoryDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, (name, aliases)) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| aliases.contains(&h))
            .ok_or(DatasetError::MissingColumn(name))?;
    }
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str, DatasetError> {
            rec.get(idx[k]).ok_or(DatasetError::MissingColumn(COLUMNS[k].0))
        };
        let num = |k: usize| -> Result<f64, DatasetError> {
            let v = field(k)?;
            v.parse().map_err(|_| DatasetError::BadValue {
                row: row + 1,
                column: COLUMNS[k].0,
                value: v.to_owned(),
            })
        };
        let int = |k: usize| -> Result<i64, DatasetError> {
            let v = field(k)?;
            v.parse().map_err(|_| DatasetError::BadValue {
                row: row + 1,
                column: COLUMNS[k].0,
                value: v.to_owned(),
            })
        };
        records.push(TrackRecord {
            id: int(0)? as u64,
            frame: int(1)?,
            x: num(2)?,
            y: num(3)?,
            vx: num(4)?,
            vy: num(5)?,
        });
    }
    from_records(records, stride)
}

pub fn from_records(records: Vec<TrackRecord>, stride: usize) -> Result<TrajectoryDataset, DatasetError> {
    if stride == 0 {
        return Err(DatasetError::InvalidStride);
    }
    let mut tracks: BTreeMap<u64, Vec<TrackRecord>> = BTreeMap::new();
    for r in &records {
        let t = tracks.entry(r.id).or_default();
        if let Some(prev) = t.last() {
            if r.frame <= prev.frame {
                return Err(DatasetError::NonMonotone {
                    vehicle: r.id,
                    previous: prev.frame,
                    frame: r.frame,
                });
            }
            if r.frame != prev.frame + 1 {
                return Err(DatasetError::Gap {
                    vehicle: r.id,
                    previous: prev.frame,
                    frame: r.frame,
                });
            }
        }
        t.push(*r);
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (id, track) in &tracks {
        if track.len() < PAIR_FRAMES {
            skipped += 1;
            continue;
        }
        let mut start = 0;
        while start + PAIR_FRAMES <= track.len() {
            let w = &track[start..start + PAIR_FRAMES];
            pairs.push(TrajectoryPair {
                vehicle: *id,
                start_frame: w[0].frame,
                past: w[..PAST_FRAMES].to_vec(),
                future: w[PAST_FRAMES..].iter().map(|r| [r.x, r.y]).collect(),
            });
            start += stride;
        }
    }
    Ok(TrajectoryDataset {
        records,
        pairs,
        skipped,
        stride,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn track(id: u64, frames: usize) -> Vec<TrackRecord> {
        (0..frames)
            .map(|f| TrackRecord {
                id,
                frame: f as i64,
                x: f as f64,
                y: 0.0,
                vx: 10.0,
                vy: 0.0,
            })
            .collect()
    }

    #[test]
    fn window_counts() {
        let ds = from_records(track(1, 100), DEFAULT_STRIDE).unwrap();
        assert_eq!(ds.pairs.len(), 1);
        assert_eq!((ds.pairs[0].past.len(), ds.pairs[0].future.len()), (60, 40));
        let ds = from_records(track(1, 99), DEFAULT_STRIDE).unwrap();
        assert_eq!((ds.pairs.len(), ds.skipped), (0, 1));
        // windows start at frames 0 and 50; 100 would end at 199
        let ds = from_records(track(1, 150), 50).unwrap();
        assert_eq!(ds.pairs.len(), 2);
        assert_eq!(ds.pairs[1].start_frame, 50);
    }

    #[test]
    fn csv_parsing_and_errors() {
        let text = "id,frame,x,y,xVelocity,yVelocity\n1,0,0.0,1.0,2.0,0.0\n1,1,0.2,1.0,2.0,0.0\n";
        let ds = ingest_reader(text.as_bytes(), DEFAULT_STRIDE).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.skipped, 1);
        let err = ingest_reader("id,frame,x,y,vx\n".as_bytes(), 100).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn("vy")));
        let err = ingest_reader("id,frame,x,y,vx,vy\n1,5,0,0,0,0\n1,4,0,0,0,0\n".as_bytes(), 100).unwrap_err();
        assert!(matches!(err, DatasetError::NonMonotone { vehicle: 1, previous: 5, frame: 4 }));
        let err = ingest_reader("id,frame,x,y,vx,vy\n1,0,a,0,0,0\n".as_bytes(), 100).unwrap_err();
        assert!(matches!(err, DatasetError::BadValue { column: "x", .. }));
    }
}
