use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::debug;

use crate::anchor_bank::FeatureMap;
use crate::backend::wire::{
    ErrorResponse, FeaturesRequest, FeaturesResponse, MaskRequest, MaskResponse, TensorEnvelope,
};
use crate::backend::{BackendInfo, MaskInput, MaskResult, PromptSet, SegmenterBackend};
use crate::error::{Error, Result};
use crate::prompt_selector::PromptPoint;
use crate::raster::Image;

const UNSET: u64 = u64::MAX;

/// HTTP client for an external model bridge.
pub struct BridgeBackend {
    base_url: String,
    agent: ureq::Agent,
    info: OnceLock<BackendInfo>,
    encoder_runs: AtomicU64,
}

impl BridgeBackend {
    pub fn new(base_url: impl Into<String>, connect_timeout: Duration, request_timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_connect(Some(connect_timeout))
            .timeout_global(Some(request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
            info: OnceLock::new(),
            encoder_runs: AtomicU64::new(UNSET),
        }
    }

    pub fn with_defaults(base_url: impl Into<String>) -> Self {
        Self::new(base_url, Duration::from_secs(5), Duration::from_secs(300))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.base_url, path);
        debug!(%url, "bridge request");
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        if status != 200 {
            let message = serde_json::from_slice::<ErrorResponse>(&bytes)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(match status {
                410 => Error::Session(message),
                422 => Error::Domain(message),
                _ => Error::Transport(format!("{url}: HTTP {status}: {message}")),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| Error::Transport(format!("{url}: malformed response: {e}")))
    }
}

impl SegmenterBackend for BridgeBackend {
    fn describe(&self) -> Result<BackendInfo> {
        if let Some(info) = self.info.get() {
            return Ok(info.clone());
        }
        let info: BackendInfo = self.post("/v1/describe", &serde_json::json!({}))?;
        Ok(self.info.get_or_init(|| info).clone())
    }

    fn extract_features(&self, image: &Image, grid_points: &[PromptPoint]) -> Result<FeatureMap<f32>> {
        let req = FeaturesRequest {
            image: TensorEnvelope::from_image(image),
            grid_points: grid_points.iter().map(|p| [p.x, p.y]).collect(),
        };
        let resp: FeaturesResponse = self.post("/v1/features", &req)?;
        let fm = resp.features.to_features()?;
        let info = self.describe()?;
        if (fm.height(), fm.width(), fm.dim()) != (info.feature_height, info.feature_width, info.feature_dim) {
            return Err(Error::Transport(format!(
                "bridge returned {}x{}x{} features, describe promised {}x{}x{}",
                fm.height(),
                fm.width(),
                fm.dim(),
                info.feature_height,
                info.feature_width,
                info.feature_dim
            )));
        }
        Ok(fm)
    }

    fn predict_mask(&self, input: MaskInput<'_>, prompts: &PromptSet) -> Result<MaskResult> {
        if !prompts.is_usable() {
            return Err(Error::domain("prompt set needs a positive point or a box"));
        }
        let resp: MaskResponse = self.post("/v1/mask", &MaskRequest::new(input, prompts))?;
        self.encoder_runs.store(resp.encoder_runs, Ordering::Relaxed);
        let result = resp.into_result()?;
        if let MaskInput::Image(img) = input {
            if result.mask.dims() != img.dims() {
                return Err(Error::Transport("bridge mask does not match the input image size".into()));
            }
        }
        Ok(result)
    }

    fn encoder_runs(&self) -> Option<u64> {
        match self.encoder_runs.load(Ordering::Relaxed) {
            UNSET => None,
            n => Some(n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_bridge_is_a_transport_error() {
        // port 9 (discard) on loopback is closed in the test sandbox
        let b = BridgeBackend::new("http://127.0.0.1:9/", Duration::from_millis(500), Duration::from_secs(2));
        assert_eq!(b.base_url(), "http://127.0.0.1:9");
        let err = b.describe().unwrap_err();
        assert!(err.is_transport(), "{err}");
        assert_eq!(b.encoder_runs(), None);
    }
}
