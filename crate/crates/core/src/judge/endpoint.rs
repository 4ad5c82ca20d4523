use std::collections::HashMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JudgeError, JudgeSource};
use crate::types::{Impression, JudgeScore};

pub const DEFAULT_TOKEN_ENV: &str = "PROPLAB_JUDGE_TOKEN";

pub const DEFAULT_PROMPT: &str = "\
You are a relevance assessor for a travel-experience search engine.
Rate how relevant the item is to the user's search query.

Query: {query}
Item title: {title}
Item description: {description}

Reply with a single integer between 0 and 100, where 0 means completely \
irrelevant and 100 means a perfect match. Reply with the integer only.
";

/// Connection settings for a chat-completion style judge endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8080/v1".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            model: "gpt-4o-mini".into(),
            timeout_secs: 30.0,
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

/// Plain-text prompt with `{query}`, `{title}` and `{description}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_PROMPT.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, JudgeError> {
        let text = text.into();
        if !text.contains("{query}") {
            return Err(JudgeError::MissingInput(
                "prompt template lacks a {query} placeholder".into(),
            ));
        }
        Ok(PromptTemplate { text })
    }

    pub fn render(&self, req: &JudgeRequest) -> String {
        self.text
            .replace("{query}", &req.query)
            .replace("{title}", &req.title)
            .replace("{description}", &req.description)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub query: String,
    pub title: String,
    pub description: String,
}

impl JudgeRequest {
    fn validate(&self) -> Result<(), JudgeError> {
        for (name, value) in [
            ("query", &self.query),
            ("title", &self.title),
            ("description", &self.description),
        ] {
            if value.trim().is_empty() {
                return Err(JudgeError::MissingInput(format!("empty {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub score: JudgeScore,
}

/// Accepts a bare integer reply (surrounding whitespace allowed).
pub fn parse_score(reply: &str) -> Result<JudgeScore, JudgeError> {
    let trimmed = reply.trim();
    let value: i64 = trimmed
        .parse()
        .map_err(|_| JudgeError::Malformed(trimmed.to_string()))?;
    if !(0..=i64::from(JudgeScore::MAX)).contains(&value) {
        return Err(JudgeError::OutOfRange(value));
    }
    Ok(JudgeScore::new(value as u8).expect("range checked"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemText {
    pub title: String,
    pub description: String,
}

/// Text behind the opaque ids of a log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub queries: HashMap<String, String>,
    pub items: HashMap<String, ItemText>,
}

impl Catalog {
    pub fn request_for(&self, imp: &Impression) -> Result<JudgeRequest, JudgeError> {
        let query = self
            .queries
            .get(&imp.query_id)
            .ok_or_else(|| JudgeError::MissingInput(format!("no text for query {}", imp.query_id)))?;
        let item = self
            .items
            .get(&imp.item_id)
            .ok_or_else(|| JudgeError::MissingInput(format!("no text for item {}", imp.item_id)))?;
        Ok(JudgeRequest {
            query: query.clone(),
            title: item.title.clone(),
            description: item.description.clone(),
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

/// HTTP judge. Retries transient failures (timeouts, transport errors,
/// 429 and 5xx) with exponential backoff; malformed or out-of-range replies
/// fail immediately.
pub struct EndpointJudge {
    config: EndpointConfig,
    template: PromptTemplate,
    catalog: Catalog,
    token: Option<String>,
    agent: ureq::Agent,
}

impl EndpointJudge {
    pub fn new(config: EndpointConfig, template: PromptTemplate, catalog: Catalog) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        EndpointJudge {
            config,
            template,
            catalog,
            token,
            agent,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// One logical judgement, including retries.
    pub fn call(&self, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        req.validate()?;
        let prompt = self.template.render(req);
        let attempts = self.config.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.call_once(&prompt) {
                Ok(score) => return Ok(JudgeResponse { score }),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("judge attempt {attempt}/{attempts} failed: {e}; retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn call_once(&self, prompt: &str) -> Result<JudgeScore, JudgeError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(&body).map_err(transport_error)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(JudgeError::Status(status));
        }
        let reply: ChatReply = response
            .body_mut()
            .read_json()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => JudgeError::Timeout,
                other => JudgeError::Malformed(other.to_string()),
            })?;
        let content = reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| JudgeError::Malformed("reply has no choices".into()))?;
        parse_score(&content)
    }
}

fn transport_error(e: ureq::Error) -> JudgeError {
    match e {
        ureq::Error::Timeout(_) => JudgeError::Timeout,
        ureq::Error::StatusCode(code) => JudgeError::Status(code),
        other => JudgeError::Transport(other.to_string()),
    }
}

impl JudgeSource for EndpointJudge {
    fn cache_key(&self, imp: &Impression) -> String {
        let mut hasher = Sha256::new();
        match self.catalog.request_for(imp) {
            Ok(req) => {
                for part in [&req.query, &req.title, &req.description] {
                    hasher.update((part.len() as u64).to_le_bytes());
                    hasher.update(part.as_bytes());
                }
            }
            // Unresolvable rows fail individually; key them by id.
            Err(_) => {
                hasher.update(b"ids");
                hasher.update(imp.query_id.as_bytes());
                hasher.update([0]);
                hasher.update(imp.item_id.as_bytes());
            }
        }
        hasher.update(self.template.hash().as_bytes());
        hex::encode(hasher.finalize())
    }

    fn judge(&self, imp: &Impression) -> Result<JudgeScore, JudgeError> {
        let req = self.catalog.request_for(imp)?;
        Ok(self.call(&req)?.score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::mock_server::{MockJudgeServer, MockReply};

    fn request() -> JudgeRequest {
        JudgeRequest {
            query: "rome food tour".into(),
            title: "Trastevere Street Food".into(),
            description: "Evening walking tour with tastings".into(),
        }
    }

    fn judge_for(server: &MockJudgeServer, attempts: u32) -> EndpointJudge {
        EndpointJudge::new(
            EndpointConfig {
                base_url: server.base_url(),
                max_attempts: attempts,
                backoff_ms: 1,
                timeout_secs: 2.0,
                ..Default::default()
            },
            PromptTemplate::default(),
            Catalog::default(),
        )
    }

    #[test]
    fn parse_score_examples() {
        assert_eq!(parse_score("87").unwrap().get(), 87);
        assert_eq!(parse_score(" 0\n").unwrap().get(), 0);
        assert!(matches!(parse_score("score: eighty"), Err(JudgeError::Malformed(_))));
        assert!(matches!(parse_score("150"), Err(JudgeError::OutOfRange(150))));
        assert!(matches!(parse_score("-3"), Err(JudgeError::OutOfRange(-3))));
        assert!(matches!(parse_score("87.5"), Err(JudgeError::Malformed(_))));
    }

    #[test]
    fn template_renders_placeholders() {
        let t = PromptTemplate::new("{query}|{title}|{description}").unwrap();
        assert_eq!(
            t.render(&request()),
            "rome food tour|Trastevere Street Food|Evening walking tour with tastings"
        );
        assert!(PromptTemplate::new("no placeholders").is_err());
        assert_ne!(t.hash(), PromptTemplate::default().hash());
    }

    #[test]
    fn endpoint_round_trip_through_mock() {
        let server = MockJudgeServer::start(|prompt| {
            assert!(prompt.contains("rome food tour"));
            MockReply::content("87")
        });
        let judge = judge_for(&server, 1);
        assert_eq!(judge.call(&request()).unwrap().score.get(), 87);
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn endpoint_rejects_bad_replies_without_retry() {
        let server = MockJudgeServer::start(|_| MockReply::content("score: eighty"));
        let judge = judge_for(&server, 3);
        assert!(matches!(judge.call(&request()), Err(JudgeError::Malformed(_))));
        assert_eq!(server.request_count(), 1);

        let server = MockJudgeServer::start(|_| MockReply::content("150"));
        let judge = judge_for(&server, 3);
        assert!(matches!(judge.call(&request()), Err(JudgeError::OutOfRange(150))));
    }

    #[test]
    fn endpoint_retries_server_errors() {
        let server = MockJudgeServer::start_sequence(vec![
            MockReply::status(503),
            MockReply::status(500),
            MockReply::content("42"),
        ]);
        let judge = judge_for(&server, 3);
        assert_eq!(judge.call(&request()).unwrap().score.get(), 42);
        assert_eq!(server.request_count(), 3);

        let server = MockJudgeServer::start(|_| MockReply::status(503));
        let judge = judge_for(&server, 2);
        assert_eq!(judge.call(&request()), Err(JudgeError::Status(503)));
        assert_eq!(server.request_count(), 2);
    }

    #[test]
    fn endpoint_times_out() {
        let server = MockJudgeServer::start(|_| MockReply::content("10").delayed(1500));
        let mut judge = judge_for(&server, 1);
        judge.agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(200)))
            .http_status_as_error(false)
            .build()
            .into();
        assert_eq!(judge.call(&request()), Err(JudgeError::Timeout));
    }

    #[test]
    fn empty_request_fields_rejected() {
        let server = MockJudgeServer::start(|_| MockReply::content("50"));
        let judge = judge_for(&server, 1);
        let mut req = request();
        req.title = " ".into();
        assert!(matches!(judge.call(&req), Err(JudgeError::MissingInput(_))));
        assert_eq!(server.request_count(), 0);
    }
}
