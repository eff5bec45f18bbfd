use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::datamodel::{parse_config, serialize_config, SysIdConfiguration, TrialRecord, TrialStatus};

use super::proposer::{Proposal, ProposeOutcome, Proposer, Rejection};
use super::SearchError;

/// Connection settings for a chat-completion proposal endpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlmProposerConfig {
    /// Base URL up to and including the API root (e.g. `http://host/v1`);
    /// `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key; the request is
    /// sent unauthenticated when the variable is unset or empty.
    pub api_key_env: String,
    /// Optional system-prompt template file; `{{problem}}`, `{{history}}`,
    /// `{{best}}` and `{{schema}}` are substituted. A built-in template is
    /// used when absent.
    pub prompt_template_path: Option<std::path::PathBuf>,
    pub max_retries: u32,
    pub timeout_seconds: f64,
}

impl LlmProposerConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.timeout_seconds > 0.0) {
            return Err(SearchError::BadSpace("timeout_seconds must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(SearchError::BadSpace("base_url must be set".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

const DEFAULT_TEMPLATE: &str = "You are assisting an automated system-identification experiment loop.\n\
Task description:\n{{problem}}\n\n\
Configuration JSON schema: an object with fields `model_class` (one of\n\
vanilla_rnn, lstm, gru, cfc, greybox_tank, physics_residual, kinematics_lstm,\n\
ensemble_of_best), `arch` (map), `train` (map), `seed` (integer).\n{{schema}}\n\n\
Trial history so far (JSON lines of iteration, configuration, metric,\n\
status):\n{{history}}\n\n\
Current best configuration:\n{{best}}\n\n\
Propose the next configuration to evaluate. Reply with exactly one JSON\n\
object: a patch over the current best configuration. Fields you omit keep\n\
their current values; when you change `model_class`, supply the full `arch`\n\
map for the new class. Lower metric is better.";

/// Proposer backed by an external chat-completion endpoint.
///
/// Each proposal renders the ledger history and the problem description into
/// the prompt, sends one request, and interprets the first JSON object in the
/// reply as a configuration patch over the current best configuration. Parse
/// and validation failures are retried with an error-explaining follow-up
/// message, up to `max_retries` times.
pub struct LlmProposer {
    cfg: LlmProposerConfig,
    client: reqwest::blocking::Client,
    template: String,
    problem: String,
    base_config: SysIdConfiguration,
    conversation: Vec<ChatMessage>,
}

impl LlmProposer {
    pub fn new(
        cfg: LlmProposerConfig,
        problem: impl Into<String>,
        base_config: SysIdConfiguration,
    ) -> Result<Self, SearchError> {
        cfg.validate()?;
        let template = match &cfg.prompt_template_path {
            Some(path) => std::fs::read_to_string(path).map_err(|e| {
                SearchError::BadSpace(format!("prompt template {}: {e}", path.display()))
            })?,
            None => DEFAULT_TEMPLATE.to_string(),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_seconds))
            .build()
            .map_err(|e| SearchError::BadSpace(e.to_string()))?;
        Ok(LlmProposer { cfg, client, template, problem: problem.into(), base_config, conversation: Vec::new() })
    }

    fn best_config(&self, history: &[TrialRecord]) -> SysIdConfiguration {
        history
            .iter()
            .filter(|r| r.status == TrialStatus::Ok)
            .min_by(|a, b| {
                a.aggregate_metric
                    .partial_cmp(&b.aggregate_metric)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .and_then(|r| r.configuration.clone())
            .unwrap_or_else(|| self.base_config.clone())
    }

    fn render_system(&self, history: &[TrialRecord], best: &SysIdConfiguration) -> String {
        let mut hist = String::new();
        for r in history {
            let line = serde_json::json!({
                "iteration": r.iteration,
                "configuration": r.configuration,
                "metric": r.aggregate_metric,
                "status": r.status,
                "rationale": r.rationale,
            });
            hist.push_str(&line.to_string());
            hist.push('\n');
        }
        self.template
            .replace("{{problem}}", &self.problem)
            .replace("{{schema}}", "")
            .replace("{{history}}", &hist)
            .replace("{{best}}", &serialize_config(best).unwrap_or_default())
    }

    fn request(&self, messages: &[ChatMessage]) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self
            .client
            .post(&url)
            .json(&ChatRequest { model: &self.cfg.model, messages });
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            if !key.is_empty() {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| format!("request failed: {e}"))?;
        if !resp.status().is_success() {
            return Err(format!("endpoint returned HTTP {}", resp.status()));
        }
        let parsed: ChatResponse =
            resp.json().map_err(|e| format!("malformed completion payload: {e}"))?;
        parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| "completion carried no message content".to_string())
    }

    fn interpret(&self, reply: &str, base: &SysIdConfiguration) -> Result<SysIdConfiguration, String> {
        let raw = extract_first_json_object(reply)
            .ok_or_else(|| "no JSON object found in the reply".to_string())?;
        let patch: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| format!("patch does not parse: {e}"))?;
        let obj = patch.as_object().ok_or_else(|| "patch is not an object".to_string())?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "model_class" | "arch" | "train" | "seed") {
                return Err(format!("unknown patch field {key}"));
            }
        }

        let mut merged = serde_json::to_value(base).expect("config serializes");
        let m = merged.as_object_mut().unwrap();
        let class_changed = obj
            .get("model_class")
            .is_some_and(|v| v != &m["model_class"]);
        if let Some(v) = obj.get("model_class") {
            m.insert("model_class".into(), v.clone());
        }
        if class_changed {
            // stale architecture keys rarely survive a class switch
            m.insert("arch".into(), obj.get("arch").cloned().unwrap_or_else(|| serde_json::json!({})));
        } else if let Some(arch) = obj.get("arch").and_then(|v| v.as_object()) {
            let slot = m.get_mut("arch").and_then(|v| v.as_object_mut()).unwrap();
            for (k, v) in arch {
                slot.insert(k.clone(), v.clone());
            }
        }
        if let Some(train) = obj.get("train").and_then(|v| v.as_object()) {
            let slot = m.get_mut("train").and_then(|v| v.as_object_mut()).unwrap();
            for (k, v) in train {
                slot.insert(k.clone(), v.clone());
            }
        }
        if let Some(seed) = obj.get("seed") {
            m.insert("seed".into(), seed.clone());
        }
        parse_config(&merged.to_string()).map_err(|e| e.to_string())
    }
}

impl Proposer for LlmProposer {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn propose(
        &mut self,
        history: &[TrialRecord],
        rejected: Option<&Rejection>,
    ) -> Result<Proposal, ProposeOutcome> {
        let best = self.best_config(history);
        match rejected {
            Some(r) => {
                // continue the running conversation with the rejection
                self.conversation.push(ChatMessage {
                    role: "user".into(),
                    content: format!(
                        "That proposal was rejected: {}. Reply with a corrected JSON object.",
                        r.reason
                    ),
                });
            }
            None => {
                self.conversation = vec![
                    ChatMessage { role: "system".into(), content: self.render_system(history, &best) },
                    ChatMessage {
                        role: "user".into(),
                        content: "Propose the next configuration as one JSON object.".into(),
                    },
                ];
            }
        }

        let mut last_reply = String::new();
        for attempt in 0..=self.cfg.max_retries {
            let reply = match self.request(&self.conversation) {
                Ok(r) => r,
                Err(reason) => {
                    return Err(ProposeOutcome::Failed {
                        reason: format!("attempt {attempt}: {reason}"),
                        raw_reply: (!last_reply.is_empty()).then(|| last_reply.clone()),
                    })
                }
            };
            last_reply = reply.clone();
            self.conversation.push(ChatMessage { role: "assistant".into(), content: reply.clone() });
            match self.interpret(&reply, &best) {
                Ok(config) => {
                    return Ok(Proposal {
                        config,
                        rationale: format!("llm proposal (retries: {attempt}): {reply}"),
                    })
                }
                Err(why) => {
                    self.conversation.push(ChatMessage {
                        role: "user".into(),
                        content: format!(
                            "That reply could not be used ({why}). Reply with ONLY one valid JSON configuration patch."
                        ),
                    });
                }
            }
        }
        Err(ProposeOutcome::Failed {
            reason: format!("no valid configuration after {} retries", self.cfg.max_retries),
            raw_reply: Some(last_reply),
        })
    }
}

/// First balanced `{ ... }` block in free text, string-literal aware.
pub fn extract_first_json_object(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..=i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}
