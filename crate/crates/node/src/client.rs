//! Blocking HTTP client for the node API, used by the CLI and the bench.

use std::time::Duration;

use reqwest::blocking::{multipart, Client as Http, RequestBuilder, Response};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {code}: {message}")]
    Api { status: u16, code: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(_) => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

impl Client {
    pub fn new(server: &str) -> ClientResult<Self> {
        let http = Http::builder().timeout(Duration::from_secs(300)).build()?;
        Ok(Client { base: server.trim_end_matches('/').to_string(), token: None, http })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn set_token(&mut self, token: String) {
        self.token = Some(token);
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{}", self.base, path)
    }

    fn send(&self, req: RequestBuilder) -> ClientResult<Response> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send()?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let body: Value = resp.json().unwrap_or(Value::Null);
        Err(ClientError::Api {
            status,
            code: body["error"].as_str().unwrap_or("unknown").to_string(),
            message: body["message"].as_str().unwrap_or_default().to_string(),
        })
    }

    fn json(&self, req: RequestBuilder) -> ClientResult<Value> {
        Ok(self.send(req)?.json()?)
    }

    pub fn register(&self, username: &str, password: &str, lang: &str) -> ClientResult<Value> {
        self.json(
            self.http
                .post(self.url("/register"))
                .json(&json!({"username": username, "password": password, "default_lang": lang})),
        )
    }

    /// Logs in and remembers the session token.
    pub fn login(&mut self, username: &str, password: &str) -> ClientResult<Value> {
        let session =
            self.json(self.http.post(self.url("/login")).json(&json!({"username": username, "password": password})))?;
        if let Some(t) = session["token"].as_str() {
            self.token = Some(t.to_string());
        }
        Ok(session)
    }

    pub fn follow(&self, username: &str) -> ClientResult<Value> {
        self.json(self.http.post(self.url(&format!("/users/{username}/follow"))))
    }

    pub fn post(&self, wav: Vec<u8>, lang: Option<&str>) -> ClientResult<Value> {
        let mut form = multipart::Form::new()
            .part("audio", multipart::Part::bytes(wav).file_name("post.wav").mime_str("audio/wav")?);
        if let Some(l) = lang {
            form = form.text("lang", l.to_string());
        }
        self.json(self.http.post(self.url("/posts")).multipart(form))
    }

    pub fn timeline(&self, cursor: Option<&str>, limit: Option<usize>, lang: Option<&str>) -> ClientResult<Value> {
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(c) = cursor {
            query.push(("cursor", c.to_string()));
        }
        if let Some(l) = limit {
            query.push(("limit", l.to_string()));
        }
        if let Some(l) = lang {
            query.push(("lang", l.to_string()));
        }
        self.json(self.http.get(self.url("/timeline")).query(&query))
    }

    fn lang_query(lang: Option<&str>) -> Vec<(&'static str, String)> {
        lang.map(|l| vec![("lang", l.to_string())]).unwrap_or_default()
    }

    pub fn transcript(&self, post_id: &str, lang: Option<&str>) -> ClientResult<Value> {
        self.json(self.http.get(self.url(&format!("/posts/{post_id}/transcript"))).query(&Self::lang_query(lang)))
    }

    pub fn audio(&self, post_id: &str, lang: Option<&str>) -> ClientResult<Vec<u8>> {
        let resp = self.send(self.http.get(self.url(&format!("/posts/{post_id}/audio"))).query(&Self::lang_query(lang)))?;
        Ok(resp.bytes()?.to_vec())
    }

    pub fn post_tx(&self, post_id: &str, lang: Option<&str>) -> ClientResult<Value> {
        self.json(self.http.get(self.url(&format!("/posts/{post_id}/tx"))).query(&Self::lang_query(lang)))
    }

    pub fn health(&self) -> ClientResult<Value> {
        self.json(self.http.get(self.url("/health")))
    }

    pub fn metrics(&self) -> ClientResult<Value> {
        self.json(self.http.get(self.url("/metrics")))
    }
}
