//! Model file I/O.
//!
//! A model file is a UTF-8 JSON document followed by one trailer line
//! `crc32:xxxxxxxx` holding the CRC-32 (IEEE) of the JSON bytes, including
//! the newline that ends the document. Every float is written in scientific
//! notation with 17 significant digits, which round-trips binary64 exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn fmt17(v: f64) -> String {
    debug_assert!(v.is_finite(), "non-finite value in model file");
    format!("{v:.16e}")
}

/// Serde adapter writing an `f64` with 17 significant digits.
pub mod f17 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(super::fmt17(*v)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

pub mod f17_vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    struct F(f64);

    impl serde::Serialize for F {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            super::f17::serialize(&self.0, s)
        }
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&F(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }

    pub(crate) struct Row<'a>(pub &'a [f64]);

    impl serde::Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            serialize(self.0, s)
        }
    }
}

pub mod f17_mat {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(m.len()))?;
        for row in m {
            seq.serialize_element(&super::f17_vec::Row(row))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d)
    }
}

/// Render a document with its checksum trailer.
pub fn to_model_bytes<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut json = serde_json::to_vec_pretty(doc)
        .map_err(|e| Error::Format(format!("serialization failed: {e}")))?;
    json.push(b'\n');
    let crc = crc32fast::hash(&json);
    json.extend_from_slice(format!("crc32:{crc:08x}\n").as_bytes());
    Ok(json)
}

/// Verify the trailer, check `format_version`, then parse the document.
pub fn from_model_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("file is not UTF-8".into()))?;
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| Error::Format("missing checksum trailer".into()))?;
    let (body, trailer) = text.split_at(body_end);
    let hex = trailer
        .trim_end()
        .strip_prefix("crc32:")
        .ok_or_else(|| Error::Format("missing checksum trailer".into()))?;
    let stored = u32::from_str_radix(hex, 16)
        .map_err(|_| Error::Format(format!("malformed checksum `{hex}`")))?;
    let computed = crc32fast::hash(body.as_bytes());
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| Error::Format(format!("invalid json: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("missing format_version".into()))? as u32;
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found,
        });
    }
    // Parse from text, not from `value`, so floats keep exact round-trip parsing.
    serde_json::from_str(body).map_err(|e| Error::Format(format!("invalid model: {e}")))
}

pub fn write_model_file<T: Serialize>(doc: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_model_bytes(doc)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_model_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_model_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        format_version: u32,
        #[serde(with = "f17")]
        x: f64,
        #[serde(with = "f17_vec")]
        v: Vec<f64>,
        #[serde(with = "f17_mat")]
        m: Vec<Vec<f64>>,
    }

    fn doc() -> Doc {
        Doc {
            format_version: FORMAT_VERSION,
            x: 0.1 + 0.2,
            v: vec![-1.0 / 3.0, 1e-300, 6.02214076e23],
            m: vec![vec![std::f64::consts::PI], vec![]],
        }
    }

    #[test]
    fn floats_use_seventeen_digits_and_round_trip() {
        let bytes = to_model_bytes(&doc()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("3.0000000000000004e-1"));
        let back: Doc = from_model_bytes(&bytes).unwrap();
        assert_eq!(back, doc());
        assert_eq!(to_model_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = to_model_bytes(&doc()).unwrap();
        let pos = bytes.iter().position(|&b| b == b'3').unwrap();
        bytes[pos] = b'4';
        assert!(matches!(
            from_model_bytes::<Doc>(&bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = to_model_bytes(&doc()).unwrap();
        assert!(from_model_bytes::<Doc>(&bytes[..bytes.len() / 2]).is_err());
        let mut old = doc();
        old.format_version = 0;
        let bytes = to_model_bytes(&old).unwrap();
        assert!(matches!(
            from_model_bytes::<Doc>(&bytes),
            Err(Error::Version { found: 0, .. })
        ));
    }
}
