//! Model persistence: a single self-describing JSON document with a format
//! tag, schema version, and a content checksum over the payload bytes.
//!
//! Numbers serialize as shortest-round-trip decimal literals, so a load
//! reproduces every coefficient bit for bit and predictions match to 0 ULP.

use super::FittedModel;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_TAG: &str = "ahofm-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a model file: format tag is '{found}', expected '{FORMAT_TAG}'")]
    WrongFormat { found: String },
    #[error("unsupported schema version {found}; this build reads version {SCHEMA_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("checksum mismatch: file declares {stored}, payload hashes to {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("model contains non-finite numbers; refusing to save")]
    NonFiniteModel,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    schema_version: u32,
    checksum: String,
    payload: Box<RawValue>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(7 + digest.len() * 2);
    out.push_str("sha256:");
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Writes the model to `path`. Fails rather than persist non-finite
/// coefficients, which would not survive the round trip.
pub fn save(model: &FittedModel, path: &Path) -> Result<(), StoreError> {
    if !model.coefficients_finite() {
        return Err(StoreError::NonFiniteModel);
    }
    let payload = serde_json::to_string(model)?;
    let checksum = sha256_hex(payload.as_bytes());
    let envelope = Envelope {
        format: FORMAT_TAG.to_string(),
        schema_version: SCHEMA_VERSION,
        checksum,
        payload: RawValue::from_string(payload)?,
    };
    let text = serde_json::to_string(&envelope)?;
    std::fs::write(path, text).map_err(|source| StoreError::Io {
        action: "write",
        path: path.display().to_string(),
        source,
    })
}

/// Reads a model back, verifying the format tag, schema version, and the
/// payload checksum before deserializing.
pub fn load(path: &Path) -> Result<FittedModel, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        action: "read",
        path: path.display().to_string(),
        source,
    })?;
    let envelope: Envelope = serde_json::from_str(&text)?;
    if envelope.format != FORMAT_TAG {
        return Err(StoreError::WrongFormat {
            found: envelope.format,
        });
    }
    if envelope.schema_version != SCHEMA_VERSION {
        return Err(StoreError::VersionMismatch {
            found: envelope.schema_version,
        });
    }
    let computed = sha256_hex(envelope.payload.get().as_bytes());
    if computed != envelope.checksum {
        return Err(StoreError::ChecksumMismatch {
            stored: envelope.checksum,
            computed,
        });
    }
    Ok(serde_json::from_str(envelope.payload.get())?)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::toy_model;
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_predicts_identically_to_the_bit() {
        let model = toy_model(3, &[2, 1], 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((50, 3), |_| rng.random::<f64>());
        let a = model.predict(&x).unwrap();
        let b = loaded.predict(&x).unwrap();
        for (va, vb) in a.eta.iter().zip(&b.eta) {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
        assert_eq!(model.main.alpha0.to_bits(), loaded.main.alpha0.to_bits());
        for (ta, tb) in model.factors.iter().zip(&loaded.factors) {
            for (va, vb) in ta.as_flat().iter().zip(tb.as_flat()) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
        assert_eq!(model.feature_names, loaded.feature_names);
    }

    #[test]
    fn tampered_payload_fails_the_checksum() {
        let model = toy_model(2, &[1], 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Bump the first digit inside the payload; the JSON stays valid but
        // the bytes no longer hash to the declared checksum.
        let start = text.find("\"payload\":").unwrap();
        let pos = text[start..]
            .char_indices()
            .find(|(_, c)| c.is_ascii_digit())
            .map(|(i, _)| start + i)
            .unwrap();
        let mut bytes = text.into_bytes();
        bytes[pos] = if bytes[pos] == b'9' { b'8' } else { bytes[pos] + 1 };
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(StoreError::ChecksumMismatch { .. })));
    }

    #[test]
    fn wrong_format_and_version_are_rejected() {
        let model = toy_model(2, &[1], 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let other = text.replace("\"ahofm-model\"", "\"something-else\"");
        std::fs::write(&path, other).unwrap();
        assert!(matches!(load(&path), Err(StoreError::WrongFormat { .. })));

        let other = text.replace("\"schema_version\":1", "\"schema_version\":999");
        std::fs::write(&path, other).unwrap();
        assert!(matches!(
            load(&path),
            Err(StoreError::VersionMismatch { found: 999 })
        ));
    }

    #[test]
    fn non_finite_models_refuse_to_save() {
        let mut model = toy_model(2, &[1], 9);
        model.main.alpha0 = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        assert!(matches!(save(&model, &path), Err(StoreError::NonFiniteModel)));
        assert!(!path.exists());
    }

    #[test]
    fn missing_file_reports_the_path() {
        let err = load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
