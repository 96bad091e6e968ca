use std::fs;
use std::path::Path;

use crate::descriptors::DetectionRecord;
use crate::error::{Error, Result};

/// ℓ1 slack accepted on the `inet` scores when reading.
pub const INET_L1_TOLERANCE: f64 = 1e-4;

fn parse_line(line: &str) -> Result<DetectionRecord> {
    let mut rec: DetectionRecord = serde_json::from_str(line)?;
    if !rec.inet.is_empty() && rec.inet.iter().all(|x| x.is_finite() && *x >= 0.0) {
        let l1: f64 = rec.inet.iter().sum();
        if (l1 - 1.0).abs() > INET_L1_TOLERANCE {
            return Err(Error::invalid(format!("inet scores sum to {l1}, not 1")));
        }
        if rec.validate().is_err() && l1 > 0.0 {
            rec.inet.iter_mut().for_each(|x| *x /= l1);
        }
    }
    rec.validate()?;
    Ok(rec)
}

/// Parses JSON-lines detections. Blank lines are skipped; any malformed or
/// invalid record fails with its 1-based line number.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Records sorted by frame (stable within a frame).
pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut recs = parse_detections(&fs::read_to_string(path)?)?;
    recs.sort_by_key(|r| r.frame);
    Ok(recs)
}

pub fn detections_to_string(records: &[DetectionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, detections_to_string(records)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::INET_DIM;

    fn record() -> DetectionRecord {
        let mut inet = vec![0.0; INET_DIM];
        inet[3] = 0.3;
        inet[10] = 0.7;
        DetectionRecord {
            frame: 2,
            tau: 5,
            class_id: 17,
            score: 0.8125,
            bbox: [0.1, 0.2, 0.35, 0.9],
            inet,
        }
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_detections("").unwrap().is_empty());
    }

    #[test]
    fn roundtrip_is_exact() {
        let r = record();
        let text = detections_to_string(std::slice::from_ref(&r)).unwrap();
        assert_eq!(parse_detections(&text).unwrap(), vec![r]);
    }

    #[test]
    fn bad_class_names_line_and_field() {
        let mut r = record();
        r.class_id = 171;
        let text = serde_json::to_string(&r).unwrap();
        match parse_detections(&text) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("class_id"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loose_l1_is_renormalized_and_far_l1_rejected() {
        let mut r = record();
        r.inet[10] += 5e-5;
        let got = parse_detections(&serde_json::to_string(&r).unwrap()).unwrap();
        assert!((got[0].inet.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        r.inet[10] += 1e-3;
        assert!(parse_detections(&serde_json::to_string(&r).unwrap()).is_err());
    }

    #[test]
    fn score_out_of_range_rejected_on_second_line() {
        let mut bad = record();
        bad.score = 1.5;
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&record()).unwrap(),
            serde_json::to_string(&bad).unwrap()
        );
        match parse_detections(&text) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("score"));
            }
            other => panic!("{other:?}"),
        }
    }
}
