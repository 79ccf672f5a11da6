//! Versioned, checksummed parameter bundle document.
//!
//! Layout (compact JSON, fields in this order, no whitespace):
//!
//! ```text
//! {"format_version":1,"bundle":{...},"checksum":"1c291ca3"}
//! ```
//!
//! The checksum is CRC-32 (IEEE, reflected polynomial `0xEDB88320`) over every
//! byte that precedes `,"checksum":`, written as eight lowercase hex digits.
//! Reals use the shortest decimal text that round-trips to the same `f64`.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::data::FeatureRange;
use crate::learners::{ClModel, ThresholdVector};
use crate::nn::NetworkParameters;

pub const FORMAT_VERSION: u64 = 1;

const CHECKSUM_OPEN: &str = ",\"checksum\":\"";
const CHECKSUM_CLOSE: &str = "\"}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "DCL")]
    Dcl,
    #[serde(rename = "CL")]
    Cl,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Dcl => "DCL",
            ModelKind::Cl => "CL",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DCL" => Ok(ModelKind::Dcl),
            "CL" => Ok(ModelKind::Cl),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BundleError {
    #[error("checksum mismatch: document says {stored:08x}, payload hashes to {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown bundle format_version {0}")]
    UnknownFormatVersion(u64),
    #[error("inconsistent bundle: {0}")]
    Shape(String),
    #[error("malformed bundle document: {0}")]
    Malformed(String),
    #[error("bundle contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBundle {
    pub model_kind: ModelKind,
    pub model_version: u64,
    /// Milliseconds since the Unix epoch (or simulated time).
    pub created_at: u64,
    pub params: NetworkParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdVector>,
    /// Scaling the client must apply to raw sensor values before predicting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Vec<FeatureRange>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

impl ParameterBundle {
    pub fn dcl(params: NetworkParameters, model_version: u64, created_at: u64) -> Self {
        Self {
            model_kind: ModelKind::Dcl,
            model_version,
            created_at,
            params,
            thresholds: None,
            normalization: None,
            class_names: Vec::new(),
        }
    }

    pub fn cl(model: ClModel, model_version: u64, created_at: u64) -> Self {
        Self {
            model_kind: ModelKind::Cl,
            model_version,
            created_at,
            params: model.params,
            thresholds: Some(model.thresholds),
            normalization: None,
            class_names: Vec::new(),
        }
    }

    pub fn with_normalization(mut self, ranges: Option<Vec<FeatureRange>>) -> Self {
        self.normalization = ranges;
        self
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = names;
        self
    }

    pub fn format_version(&self) -> u64 {
        FORMAT_VERSION
    }

    /// The CL model carried by a CL bundle.
    pub fn cl_model(&self) -> Option<ClModel> {
        let thresholds = self.thresholds.clone()?;
        ClModel::new(self.params.clone(), thresholds).ok()
    }

    /// Milliseconds between creation and `now` (zero if `now` is earlier).
    pub fn staleness(&self, now: u64) -> u64 {
        now.saturating_sub(self.created_at)
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        self.params.validate().map_err(|e| match e {
            crate::Error::NonFinite(_) => BundleError::NonFinite,
            other => BundleError::Shape(other.to_string()),
        })?;
        let spec = self.params.spec();
        match (self.model_kind, &self.thresholds) {
            (ModelKind::Cl, None) => return Err(BundleError::Shape("CL bundle without thresholds".into())),
            (ModelKind::Dcl, Some(_)) => return Err(BundleError::Shape("DCL bundle with thresholds".into())),
            (ModelKind::Cl, Some(t)) => {
                if !spec.is_single_layer() {
                    return Err(BundleError::Shape("CL network has hidden layers".into()));
                }
                if t.len() != spec.output_count {
                    return Err(BundleError::Shape(format!(
                        "{} thresholds for {} outputs",
                        t.len(),
                        spec.output_count
                    )));
                }
                ThresholdVector::new(t.as_slice().to_vec()).map_err(|e| BundleError::Shape(e.to_string()))?;
            }
            (ModelKind::Dcl, None) => {}
        }
        if let Some(r) = &self.normalization {
            if r.len() != spec.input_count {
                return Err(BundleError::Shape(format!(
                    "{} normalization ranges for {} inputs",
                    r.len(),
                    spec.input_count
                )));
            }
            if r.iter().any(|x| !x.min.is_finite() || !x.max.is_finite()) {
                return Err(BundleError::NonFinite);
            }
        }
        if !self.class_names.is_empty() && self.class_names.len() != spec.output_count {
            return Err(BundleError::Shape(format!(
                "{} class names for {} outputs",
                self.class_names.len(),
                spec.output_count
            )));
        }
        Ok(())
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Canonical document bytes for `bundle`.
pub fn encode_bundle(bundle: &ParameterBundle) -> Result<Vec<u8>, BundleError> {
    bundle.validate()?;
    let payload = serde_json::to_string(bundle).map_err(|e| BundleError::Malformed(e.to_string()))?;
    Ok(seal(FORMAT_VERSION, &payload))
}

/// Assembles a document around an already-serialized payload.
fn seal(format_version: u64, payload: &str) -> Vec<u8> {
    let mut doc = format!("{{\"format_version\":{format_version},\"bundle\":{payload}");
    let checksum = crc32(doc.as_bytes());
    doc.push_str(CHECKSUM_OPEN);
    doc.push_str(&format!("{checksum:08x}"));
    doc.push_str(CHECKSUM_CLOSE);
    doc.into_bytes()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<'a> {
    format_version: u64,
    #[serde(borrow)]
    bundle: &'a RawValue,
    #[allow(dead_code)]
    checksum: &'a str,
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ParameterBundle, BundleError> {
    let text = std::str::from_utf8(bytes).map_err(|e| BundleError::Malformed(e.to_string()))?;
    let suffix_len = CHECKSUM_OPEN.len() + 8 + CHECKSUM_CLOSE.len();
    if text.len() < suffix_len || !text.is_char_boundary(text.len() - suffix_len) {
        return Err(BundleError::Malformed("document too short".into()));
    }
    let (covered, suffix) = text.split_at(text.len() - suffix_len);
    let hex = suffix
        .strip_prefix(CHECKSUM_OPEN)
        .and_then(|s| s.strip_suffix(CHECKSUM_CLOSE))
        .ok_or_else(|| BundleError::Malformed("checksum field must close the document".into()))?;
    if !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(BundleError::Malformed("checksum must be 8 lowercase hex digits".into()));
    }
    let stored = u32::from_str_radix(hex, 16).map_err(|e| BundleError::Malformed(e.to_string()))?;

    let envelope: Envelope = serde_json::from_str(text).map_err(|e| BundleError::Malformed(e.to_string()))?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(BundleError::UnknownFormatVersion(envelope.format_version));
    }
    let computed = crc32(covered.as_bytes());
    if computed != stored {
        return Err(BundleError::ChecksumMismatch { stored, computed });
    }
    // Canonical documents carry nothing but the three fields in fixed order.
    let expected_prefix = format!("{{\"format_version\":{FORMAT_VERSION},\"bundle\":");
    if !covered.starts_with(&expected_prefix) || &covered[expected_prefix.len()..] != envelope.bundle.get() {
        return Err(BundleError::Malformed("non-canonical document layout".into()));
    }
    let bundle: ParameterBundle =
        serde_json::from_str(envelope.bundle.get()).map_err(|e| BundleError::Shape(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}
