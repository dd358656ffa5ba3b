//! TSD container and CSV fallback.
//!
//! TSD layout (little-endian): `b"TSD1"`, `u32` header length, UTF-8 JSON
//! header, `f32` payload `[n][t][d]`, then `i32` labels `[n]` if present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSD1";

#[derive(Debug, Serialize, Deserialize)]
struct TsdHeader {
    n: usize,
    t: usize,
    d: usize,
    has_labels: bool,
    class_count: Option<usize>,
    #[serde(default)]
    name: String,
}

pub fn write_tsd(ds: &TimeSeriesDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let header = serde_json::to_vec(&TsdHeader {
        n: ds.n,
        t: ds.t,
        d: ds.d,
        has_labels: ds.labels.is_some(),
        class_count: ds.class_count,
        name: ds.name.clone(),
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + ds.samples.len() * 4 + ds.n * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &ds.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &ds.labels {
        for &l in labels {
            out.extend_from_slice(&(l as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_tsd(bytes: &[u8]) -> Result<TimeSeriesDataset> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic: not a TSD1 container"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| Error::format("malformed header: header length exceeds file size"))?;
    let header: TsdHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(format!("malformed header: {e}")))?;
    if header.has_labels && header.class_count.is_none() {
        return Err(Error::format("malformed header: class_count required when has_labels is true"));
    }
    let values = header
        .n
        .checked_mul(header.t)
        .and_then(|v| v.checked_mul(header.d))
        .ok_or_else(|| Error::format("malformed header: dimensions overflow"))?;
    let label_bytes = if header.has_labels { header.n * 4 } else { 0 };
    let payload = &bytes[8 + header_len..];
    if payload.len() != values * 4 + label_bytes {
        return Err(Error::format(format!(
            "payload size mismatch: header implies {} bytes, found {}",
            values * 4 + label_bytes,
            payload.len()
        )));
    }
    let samples = payload[..values * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if header.has_labels {
        let k = header.class_count.unwrap();
        let raw: Vec<i32> = payload[values * 4..]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(bad) = raw.iter().find(|&&l| l < 0 || l as usize >= k) {
            return Err(Error::format(format!("labels: value {bad} out of range for class_count {k}")));
        }
        Some(raw.into_iter().map(|l| l as u32).collect())
    } else {
        None
    };
    TimeSeriesDataset::new(header.name, header.n, header.t, header.d, samples, labels, header.class_count)
}

/// Univariate labeled CSV: one row per sample, `label,v1,...,vT`.
pub fn read_csv(text: &str, name: &str) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut t = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("csv row {row}: {e}")))?;
        if record.len() < 3 {
            return Err(Error::format(format!("csv row {row}: need a label and at least 2 values")));
        }
        let len = record.len() - 1;
        if *t.get_or_insert(len) != len {
            return Err(Error::format(format!("csv row {row}: expected {} values, found {len}", t.unwrap())));
        }
        let label: i64 = record[0]
            .parse()
            .map_err(|_| Error::format(format!("csv row {row}: label '{}' is not an integer", &record[0])))?;
        if label < 0 {
            return Err(Error::format(format!("csv row {row}: label {label} is negative")));
        }
        labels.push(label as u32);
        for field in record.iter().skip(1) {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::format(format!("csv row {row}: value '{field}' is not a number")))?;
            samples.push(v);
        }
    }
    let t = t.ok_or_else(|| Error::format("csv: no rows"))?;
    let k = *labels.iter().max().unwrap() as usize + 1;
    TimeSeriesDataset::new(name, labels.len(), t, 1, samples, Some(labels), Some(k))
}

/// Loads a `.csv` file through the CSV fallback and anything else as TSD.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .map_or(false, |e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
        read_csv(&fs::read_to_string(path)?, name)
    } else {
        read_tsd(&fs::read(path)?)
    }
}

pub fn write_dataset(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_tsd(ds)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> TimeSeriesDataset {
        TimeSeriesDataset::new(
            "tiny",
            2,
            4,
            1,
            vec![0.5, -1.0, 2.0, 3.25, 1e-3, 7.0, -8.5, 0.0],
            Some(vec![1, 0]),
            Some(2),
        )
        .unwrap()
    }

    fn with_header(header: &str, floats: usize, labels: usize) -> Vec<u8> {
        let mut out = b"TSD1".to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for i in 0..floats {
            out.extend_from_slice(&(i as f32).to_le_bytes());
        }
        for i in 0..labels {
            out.extend_from_slice(&((i % 2) as i32).to_le_bytes());
        }
        out
    }

    #[test]
    fn tsd_round_trip() {
        let ds = tiny();
        let back = read_tsd(&write_tsd(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        assert_eq!((back.n, back.t, back.d), (2, 4, 1));
    }

    #[test]
    fn payload_size_mismatch_is_rejected() {
        let bytes = with_header(r#"{"n":2,"t":4,"d":1,"has_labels":false,"class_count":null,"name":"x"}"#, 7, 0);
        let err = read_tsd(&bytes).unwrap_err().to_string();
        assert!(err.contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn malformed_header_and_labels_are_named() {
        let bytes = with_header(r#"{"n":2,"t":4"#, 8, 0);
        assert!(read_tsd(&bytes).unwrap_err().to_string().contains("malformed header"));

        let mut bytes = with_header(r#"{"n":2,"t":4,"d":1,"has_labels":true,"class_count":2,"name":"x"}"#, 8, 1);
        bytes.extend_from_slice(&5i32.to_le_bytes());
        assert!(read_tsd(&bytes).unwrap_err().to_string().contains("labels"));

        assert!(read_tsd(b"NOPE0000").unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn csv_fallback_matches_hand_parsed_values() {
        let text = "0,1.0,2.0,3.0\n1,-1.5,0.25,4\n0,0,0,1e1\n";
        let ds = read_csv(text, "fixture").unwrap();
        assert_eq!((ds.n, ds.t, ds.d), (3, 3, 1));
        assert_eq!(ds.labels, Some(vec![0, 1, 0]));
        assert_eq!(ds.class_count, Some(2));
        assert_eq!(ds.samples, vec![1.0, 2.0, 3.0, -1.5, 0.25, 4.0, 0.0, 0.0, 10.0]);
        assert!(read_csv("0,1,2\n1,1\n", "bad").is_err());
    }

    proptest! {
        #[test]
        fn tsd_round_trip_is_bit_exact(
            n in 1usize..5, t in 2usize..6, d in 1usize..3, k in 1usize..4,
            seed in any::<u64>(), labeled in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..n * t * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let labels = labeled.then(|| (0..n).map(|_| rng.random_range(0..k as u32)).collect());
            let ds = TimeSeriesDataset::new("p", n, t, d, samples, labels, labeled.then_some(k)).unwrap();
            let back = read_tsd(&write_tsd(&ds).unwrap()).unwrap();
            prop_assert_eq!(back.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            ds.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, ds);
        }
    }
}
