//! Blocking JSON-over-HTTP helper used by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub(crate) struct JsonClient {
    client: reqwest::blocking::Client,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(bearer: Option<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(JsonClient { client, bearer })
    }

    /// POSTs `body` and decodes the response; any non-200 status is an error.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| format!("{url}: {e}"))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let text = resp.text().unwrap_or_default();
            return Err(format!("{url}: HTTP {status}: {}", text.trim()));
        }
        resp.json().map_err(|e| format!("{url}: bad response body: {e}"))
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
