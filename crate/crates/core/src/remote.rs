//! Blocking HTTP client shared by the remote detector and remote embedder.

use std::io::Cursor;
use std::time::Duration;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint answered with status {0}")]
    Status(u16),
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Posts `image` as a PNG body and returns the response text.
    pub fn post_image(&self, image: &RgbImage) -> Result<String, RemoteError> {
        let body = encode_png(image);
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "image/png")
            .send(&body[..])
            .map_err(map_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RemoteError::Status(status));
        }
        resp.body_mut().read_to_string().map_err(map_err)
    }
}

fn map_err(e: ureq::Error) -> RemoteError {
    match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => RemoteError::Timeout,
        ureq::Error::StatusCode(code) => RemoteError::Status(code),
        other => RemoteError::Unreachable(other.to_string()),
    }
}

pub(crate) fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}
