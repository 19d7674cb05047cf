//! Feature file formats.
//!
//! `VFF1` is the binary format: the magic `VFF1`, a little-endian `u32`
//! dimension, a little-endian `u64` row count and then `count * dim`
//! little-endian `f32` values, row-major. Ids are row indices unless a
//! sidecar list (one id per line) is supplied.
//!
//! The text format is JSON lines, one `{"id": ..., "vec": [...]}` object per
//! line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};

pub const VFF_MAGIC: &[u8; 4] = b"VFF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    JsonLines,
}

impl FeatureFormat {
    /// `.jsonl`/`.json` files are JSON lines, anything else is `VFF1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => FeatureFormat::JsonLines,
            _ => FeatureFormat::Binary,
        }
    }
}

pub fn ingest_features<R: Read>(source: R, format: FeatureFormat) -> Result<FeatureSet> {
    match format {
        FeatureFormat::Binary => read_vff(source, None),
        FeatureFormat::JsonLines => read_jsonl(BufReader::new(source)),
    }
}

/// Reads a `VFF1` stream. `ids`, when given, must hold one id per row.
pub fn read_vff<R: Read>(mut source: R, ids: Option<Vec<String>>) -> Result<FeatureSet> {
    let mut header = [0u8; 16];
    source
        .read_exact(&mut header)
        .map_err(|_| Error::malformed("truncated VFF1 header"))?;
    if &header[0..4] != VFF_MAGIC {
        return Err(Error::malformed("bad magic, expected VFF1"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(Error::malformed("VFF1 header declares dimension 0"));
    }
    let count = usize::try_from(count).map_err(|_| Error::malformed("row count overflows"))?;
    if let Some(ids) = &ids {
        if ids.len() != count {
            return Err(Error::malformed(format!(
                "id sidecar has {} entries for {count} rows",
                ids.len()
            )));
        }
    }

    let mut ids = ids.map(Vec::into_iter);
    let mut row = vec![0u8; dim * 4];
    let mut vectors = Vec::with_capacity(count.min(1 << 20));
    for r in 0..count {
        source
            .read_exact(&mut row)
            .map_err(|_| Error::malformed(format!("truncated data at row {r}")))?;
        let values = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let id = match ids.as_mut() {
            Some(it) => it.next().expect("length checked above"),
            None => r.to_string(),
        };
        vectors.push(FeatureVector::new(id, values)?);
    }
    let mut rest = [0u8; 1];
    if source.read(&mut rest)? != 0 {
        return Err(Error::malformed(format!(
            "trailing data after {count} rows of dimension {dim}"
        )));
    }
    FeatureSet::new(vectors)
}

pub fn write_vff<W: Write>(sink: W, set: &FeatureSet) -> Result<()> {
    let dim = set.dim().unwrap_or(0);
    let mut w = BufWriter::new(sink);
    w.write_all(VFF_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for v in set {
        for x in &v.values {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    vec: Vec<f64>,
}

pub fn read_jsonl<R: BufRead>(source: R) -> Result<FeatureSet> {
    let mut vectors: Vec<FeatureVector> = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = vectors.first() {
            if rec.vec.len() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: rec.vec.len(),
                });
            }
        }
        vectors.push(FeatureVector::new(rec.id, rec.vec)?);
    }
    FeatureSet::new(vectors)
}

pub fn write_jsonl<W: Write>(sink: W, set: &FeatureSet) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for v in set {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ids<R: BufRead>(source: R) -> Result<Vec<String>> {
    source
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_owned()).map_err(Error::from))
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .collect()
}

pub fn write_ids<W: Write>(sink: W, set: &FeatureSet) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for id in set.ids() {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a feature file, picking the format from the extension.
pub fn load_features(path: &Path, ids_path: Option<&Path>) -> Result<FeatureSet> {
    let file = BufReader::new(File::open(path)?);
    match FeatureFormat::from_path(path) {
        FeatureFormat::JsonLines => read_jsonl(file),
        FeatureFormat::Binary => {
            let ids = ids_path
                .map(|p| read_ids(BufReader::new(File::open(p)?)))
                .transpose()?;
            read_vff(file, ids)
        }
    }
}

pub fn save_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let file = File::create(path)?;
    match FeatureFormat::from_path(path) {
        FeatureFormat::JsonLines => write_jsonl(file, set),
        FeatureFormat::Binary => write_vff(file, set),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vff_bytes(dim: u32, count: u64, values: &[f32]) -> Vec<u8> {
        let mut b = VFF_MAGIC.to_vec();
        b.extend(dim.to_le_bytes());
        b.extend(count.to_le_bytes());
        for v in values {
            b.extend(v.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_single_binary_row() {
        let set = ingest_features(&vff_bytes(2, 1, &[1.0, 2.0])[..], FeatureFormat::Binary).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.vectors()[0].values, vec![1.0, 2.0]);
        assert_eq!(set.vectors()[0].id, "0");
    }

    #[test]
    fn decodes_json_line() {
        let src = br#"{"id":"a","vec":[0,0,0]}"#;
        let set = ingest_features(&src[..], FeatureFormat::JsonLines).unwrap();
        assert_eq!(set.dim(), Some(3));
        assert_eq!(set.vectors()[0].id, "a");
    }

    #[test]
    fn json_dimension_change_mid_stream_is_rejected() {
        let src = b"{\"id\":\"a\",\"vec\":[1,2]}\n{\"id\":\"b\",\"vec\":[1,2,3]}\n";
        assert!(matches!(
            ingest_features(&src[..], FeatureFormat::JsonLines),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn binary_row_overrun_is_rejected() {
        // second row carries 3 values under a d=2 header
        let bytes = vff_bytes(2, 2, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(ingest_features(&bytes[..], FeatureFormat::Binary).is_err());
    }

    #[test]
    fn malformed_headers() {
        assert!(read_vff(&b"VFF"[..], None).is_err());
        let mut bad = vff_bytes(2, 0, &[]);
        bad[0] = b'X';
        assert!(read_vff(&bad[..], None).is_err());
        assert!(read_vff(&vff_bytes(0, 0, &[])[..], None).is_err());
        assert!(read_vff(&vff_bytes(2, 2, &[1.0, 2.0])[..], None).is_err());
    }

    #[test]
    fn non_finite_and_duplicate_ids() {
        let nan = vff_bytes(1, 1, &[f32::NAN]);
        assert!(matches!(read_vff(&nan[..], None), Err(Error::NonFinite { .. })));
        let two = vff_bytes(1, 2, &[1.0, 2.0]);
        let ids = vec!["x".to_string(), "x".to_string()];
        assert!(matches!(read_vff(&two[..], Some(ids)), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn sidecar_ids_are_applied() {
        let two = vff_bytes(1, 2, &[1.0, 2.0]);
        let ids = read_ids(&b"cat\ndog\n"[..]).unwrap();
        let set = read_vff(&two[..], Some(ids)).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), ["cat", "dog"]);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 3), 1..20)
        ) {
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let bytes = vff_bytes(3, rows.len() as u64, &flat);
            let set = read_vff(&bytes[..], None).unwrap();
            let mut out = Vec::new();
            write_vff(&mut out, &set).unwrap();
            prop_assert_eq!(&out, &bytes);
            let again = read_vff(&out[..], None).unwrap();
            prop_assert_eq!(again, set);
        }
    }
}
