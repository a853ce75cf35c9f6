//! Output plumbing: atomic writes, JSON reports and `ZSFM` blocks embedded in JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, ZslError};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| ZslError::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| ZslError::arg(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| ZslError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| ZslError::io(&tmp, e))?;
        f.sync_all().map_err(|e| ZslError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| ZslError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<V: Serialize>(value: &V) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| ZslError::parse("json serialization", e))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

/// Metric record `{metric, value, k, candidate_set_size}`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub k: Option<usize>,
    pub candidate_set_size: usize,
}

/// Serde adapter storing a matrix as a base64-encoded `ZSFM` block.
pub mod zsfm_b64 {
    use base64::Engine;
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::data::{decode_zsfm, encode_zsfm};
    use crate::scalar::Scalar;

    pub fn serialize<S: Serializer, T: Scalar>(m: &Array2<T>, s: S) -> Result<S::Ok, S::Error> {
        let bytes = encode_zsfm(m.view());
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(d: D) -> Result<Array2<T>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)?;
        decode_zsfm(&bytes).map_err(serde::de::Error::custom)
    }
}

/// Same as [`zsfm_b64`] for vectors, stored as `1 × n` blocks.
pub mod zsfm_b64_vec {
    use ndarray::{Array1, Array2, Axis};
    use serde::{Deserializer, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<S: Serializer, T: Scalar>(v: &Array1<T>, s: S) -> Result<S::Ok, S::Error> {
        let m: Array2<T> = v.clone().insert_axis(Axis(0));
        super::zsfm_b64::serialize(&m, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(d: D) -> Result<Array1<T>, D::Error> {
        let m: Array2<T> = super::zsfm_b64::deserialize(d)?;
        let n = m.len();
        m.into_shape_with_order(n).map_err(serde::de::Error::custom)
    }
}
