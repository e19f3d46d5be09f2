//! Bridge wire protocol: JSON over HTTP.
//!
//! | endpoint            | request            | response            |
//! |---------------------|--------------------|---------------------|
//! | `POST /v1/describe` | `{}`               | [`BackendInfo`]     |
//! | `POST /v1/features` | [`FeaturesRequest`]| [`FeaturesResponse`]|
//! | `POST /v1/mask`     | [`MaskRequest`]    | [`MaskResponse`]    |
//!
//! Tensors travel as `{dtype, shape, data}` where `data` is base64 of the
//! raw little-endian row-major bytes. Images are `u8 [H, W, 3]`, features
//! `f32 [H_f, W_f, D]`, masks `u8 [H, W]` with non-zero foreground.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::anchor_bank::{FeatureMap, FeatureSource};
use crate::backend::{BoundingBox, EmbeddingHandle, MaskInput, MaskResult, PromptSet, SegmenterBackend};
use crate::error::{Error, Result};
use crate::prompt_selector::{PointLabel, PromptPoint};
use crate::raster::{Image, Mask};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEnvelope {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorEnvelope {
    pub fn from_u8(shape: Vec<usize>, values: &[u8]) -> Self {
        Self {
            dtype: Dtype::U8,
            shape,
            data: STANDARD.encode(values),
        }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dtype: Dtype::F32,
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn bytes(&self, want: Dtype) -> Result<Vec<u8>> {
        if self.dtype != want {
            return Err(Error::Transport(format!("expected {want:?} tensor, got {:?}", self.dtype)));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Transport(format!("tensor payload is not base64: {e}")))?;
        if bytes.len() != self.element_count() * want.width() {
            return Err(Error::Transport(format!(
                "tensor payload has {} bytes, shape {:?} needs {}",
                bytes.len(),
                self.shape,
                self.element_count() * want.width()
            )));
        }
        Ok(bytes)
    }

    pub fn to_u8(&self) -> Result<Vec<u8>> {
        self.bytes(Dtype::U8)
    }

    pub fn to_f32(&self) -> Result<Vec<f32>> {
        Ok(self
            .bytes(Dtype::F32)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn from_image(img: &Image) -> Self {
        Self::from_u8(vec![img.height(), img.width(), 3], img.as_bytes())
    }

    pub fn to_image(&self) -> Result<Image> {
        match self.shape.as_slice() {
            &[h, w, 3] => Image::from_raw(w, h, self.to_u8()?),
            other => Err(Error::domain(format!("image tensor must be [H, W, 3], got {other:?}"))),
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        let raw: Vec<u8> = mask.as_slice().iter().map(|&v| v as u8).collect();
        Self::from_u8(vec![mask.height(), mask.width()], &raw)
    }

    pub fn to_mask(&self) -> Result<Mask> {
        match self.shape.as_slice() {
            &[h, w] => Mask::from_vec(w, h, self.to_u8()?.into_iter().map(|v| v != 0).collect()),
            other => Err(Error::domain(format!("mask tensor must be [H, W], got {other:?}"))),
        }
    }

    pub fn from_features(fm: &FeatureMap<f32>) -> Self {
        Self::from_f32(vec![fm.height(), fm.width(), fm.dim()], fm.as_slice())
    }

    pub fn to_features(&self) -> Result<FeatureMap<f32>> {
        match self.shape.as_slice() {
            &[h, w, d] => FeatureMap::new(h, w, d, self.to_f32()?, FeatureSource::Board),
            other => Err(Error::domain(format!("feature tensor must be [H, W, D], got {other:?}"))),
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesRequest {
    pub image: TensorEnvelope,
    pub grid_points: Vec<[f64; 2]>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FeaturesResponse {
    pub features: TensorEnvelope,
}

/// Exactly one of `image` and `embedding_id` is set.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<TensorEnvelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_id: Option<String>,
    /// `[x, y, label]` with label 1 positive, 0 negative.
    pub points: Vec<[f64; 3]>,
    #[serde(rename = "box")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MaskResponse {
    pub mask: TensorEnvelope,
    pub score: f64,
    pub embedding_id: String,
    pub encoder_runs: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

impl MaskRequest {
    pub fn new(input: MaskInput<'_>, prompts: &PromptSet) -> Self {
        let (image, embedding_id) = match input {
            MaskInput::Image(img) => (Some(TensorEnvelope::from_image(img)), None),
            MaskInput::Handle(h) => (None, Some(h.0.clone())),
        };
        Self {
            image,
            embedding_id,
            points: prompts
                .points
                .iter()
                .map(|p| [p.x, p.y, p.label.as_wire() as f64])
                .collect(),
            bbox: prompts
                .bbox
                .map(|b| [b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64]),
        }
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        let points = self
            .points
            .iter()
            .map(|&[x, y, l]| {
                let label = match l as i64 {
                    1 => PointLabel::Positive,
                    0 => PointLabel::Negative,
                    other => return Err(Error::domain(format!("point label must be 0 or 1, got {other}"))),
                };
                Ok(PromptPoint {
                    x,
                    y,
                    label,
                    belief: 1.0,
                })
            })
            .collect::<Result<_>>()?;
        let bbox = match self.bbox {
            None => None,
            Some(b) if b.iter().all(|v| v.is_finite() && *v >= 0.0) => Some(BoundingBox {
                x0: b[0] as usize,
                y0: b[1] as usize,
                x1: b[2] as usize,
                y1: b[3] as usize,
            }),
            Some(b) => return Err(Error::domain(format!("invalid box {b:?}"))),
        };
        Ok(PromptSet { points, bbox })
    }
}

impl MaskResponse {
    pub fn from_result(r: &MaskResult) -> Self {
        Self {
            mask: TensorEnvelope::from_mask(&r.mask),
            score: r.score,
            embedding_id: r.handle.0.clone(),
            encoder_runs: r.encoder_runs,
        }
    }

    pub fn into_result(self) -> Result<MaskResult> {
        Ok(MaskResult {
            mask: self.mask.to_mask()?,
            score: self.score,
            handle: EmbeddingHandle(self.embedding_id),
            encoder_runs: self.encoder_runs,
        })
    }
}

/// HTTP status for a backend error, mirrored by the client.
pub fn status_for(err: &Error) -> u16 {
    match err.root() {
        Error::Transport(_) => 400,
        Error::Domain(_) => 422,
        Error::Session(_) => 410,
        _ => 500,
    }
}

/// Serves one protocol request against any backend. Returns the HTTP status
/// and the JSON response body.
pub fn dispatch(backend: &dyn SegmenterBackend, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T> {
        serde_json::from_slice(body).map_err(|e| Error::Transport(format!("malformed request: {e}")))
    }
    fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
        serde_json::to_vec(v).expect("protocol types serialize")
    }

    let outcome: Result<Vec<u8>> = match path {
        "/v1/describe" => backend.describe().map(|info| to_json(&info)),
        "/v1/features" => parse::<FeaturesRequest>(body).and_then(|req| {
            let image = req.image.to_image()?;
            let grid: Vec<PromptPoint> = req.grid_points.iter().map(|&[x, y]| PromptPoint::positive(x, y)).collect();
            let fm = backend.extract_features(&image, &grid)?;
            Ok(to_json(&FeaturesResponse {
                features: TensorEnvelope::from_features(&fm),
            }))
        }),
        "/v1/mask" => parse::<MaskRequest>(body).and_then(|req| {
            let prompts = req.prompts()?;
            let result = match (&req.image, &req.embedding_id) {
                (Some(t), None) => backend.predict_mask(MaskInput::Image(&t.to_image()?), &prompts)?,
                (None, Some(id)) => backend.predict_mask(MaskInput::Handle(&EmbeddingHandle(id.clone())), &prompts)?,
                _ => return Err(Error::Transport("exactly one of `image` and `embedding_id` is required".into())),
            };
            Ok(to_json(&MaskResponse::from_result(&result)))
        }),
        other => {
            return (
                404,
                to_json(&ErrorResponse {
                    error: format!("unknown endpoint {other}"),
                }),
            )
        }
    };
    match outcome {
        Ok(body) => (200, body),
        Err(e) => (status_for(&e), to_json(&ErrorResponse { error: e.to_string() })),
    }
}
