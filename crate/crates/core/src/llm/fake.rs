//! Deterministic scripted provider.
//!
//! A role whose model is `fake:<path>` answers from an ordered script of
//! reply records instead of a network service. The provider keeps no hidden
//! cursor: which records a session has consumed is recomputed from the
//! session's full message history on every call, so persisting and restoring
//! a session cannot change its future replies, and concurrent sessions never
//! interfere.
//!
//! Script file format (TOML):
//!
//! ```toml
//! [[turn]]
//! match = "optional substring"   # record fires only when the dialogue
//!                                # rendered so far contains this
//! reply = "the assistant reply"
//! ```
//!
//! Each send consumes exactly one record: the first unconsumed record whose
//! `match` is satisfied, else the first unconsumed unconditional record.
//! When neither exists the send fails with `ScriptExhausted`. A reply may
//! contain `{image_hash}`, replaced by the 16-hex content hash of the first
//! image in the triggering user message.
//!
//! Embeddings need no script: each text maps to a SHA-256 seeded, counter
//! expanded, L2-normalized vector, so equal texts embed equally and the
//! cosine of a text with itself is exactly 1.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use sha2::Digest;

use super::{ChatMessage, ChatRole, LlmError, Part, ProviderReply};

/// Extracts the script path from a `fake:<path>` model identifier.
pub fn script_path(model: &str) -> Option<&Path> {
    model.strip_prefix("fake:").map(Path::new)
}

#[derive(Debug, Clone, Deserialize)]
struct Turn {
    #[serde(rename = "match")]
    match_substring: Option<String>,
    reply: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptFile {
    #[serde(default, rename = "turn")]
    turns: Vec<Turn>,
}

pub struct FakeProvider {
    embedding_dim: usize,
    scripts: Mutex<HashMap<PathBuf, Arc<Vec<Turn>>>>,
}

impl FakeProvider {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            scripts: Mutex::new(HashMap::new()),
        }
    }

    fn load(&self, path: &Path) -> Result<Arc<Vec<Turn>>, LlmError> {
        let mut cache = self.scripts.lock().expect("script cache lock");
        if let Some(turns) = cache.get(path) {
            return Ok(Arc::clone(turns));
        }
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script {
            script: path.to_path_buf(),
            message: format!("cannot read: {e}"),
        })?;
        let parsed: ScriptFile = toml::from_str(&text).map_err(|e| LlmError::Script {
            script: path.to_path_buf(),
            message: format!("cannot parse: {e}"),
        })?;
        let turns = Arc::new(parsed.turns);
        cache.insert(path.to_path_buf(), Arc::clone(&turns));
        Ok(turns)
    }

    /// Answers the last user message of `messages` (which includes it).
    pub fn chat(&self, script: &Path, messages: &[ChatMessage]) -> Result<ProviderReply, LlmError> {
        let turns = self.load(script)?;
        let mut consumed = vec![false; turns.len()];
        let mut haystack = String::new();
        let mut chosen: Option<usize> = None;

        // Replay the whole dialogue, consuming one record per user message.
        // The record chosen for the final user message is the reply.
        for msg in messages {
            render_into(&mut haystack, msg);
            if msg.role != ChatRole::User {
                continue;
            }
            chosen = pick(&turns, &consumed, &haystack);
            if let Some(i) = chosen {
                consumed[i] = true;
            }
        }

        let Some(index) = chosen else {
            return Err(LlmError::ScriptExhausted {
                script: script.to_path_buf(),
            });
        };
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .expect("chat called with a user message");
        let text = substitute(&turns[index].reply, last_user);

        let input_tokens: u64 = messages
            .iter()
            .map(|m| m.text().split_whitespace().count() as u64)
            .sum();
        let output_tokens = text.split_whitespace().count() as u64;
        Ok(ProviderReply {
            text,
            input_tokens,
            output_tokens,
        })
    }

    pub fn embed(&self, texts: &[String]) -> Vec<Vec<f32>> {
        texts
            .iter()
            .map(|t| hash_embedding(t, self.embedding_dim))
            .collect()
    }
}

fn pick(turns: &[Turn], consumed: &[bool], haystack: &str) -> Option<usize> {
    // Conditionals take priority so scripts can interleave targeted replies
    // with a stream of defaults.
    let conditional = turns.iter().enumerate().position(|(i, t)| {
        !consumed[i]
            && t.match_substring
                .as_deref()
                .is_some_and(|m| haystack.contains(m))
    });
    conditional.or_else(|| {
        turns
            .iter()
            .enumerate()
            .position(|(i, t)| !consumed[i] && t.match_substring.is_none())
    })
}

fn render_into(haystack: &mut String, msg: &ChatMessage) {
    haystack.push_str(msg.role.as_str());
    haystack.push_str(": ");
    for part in &msg.parts {
        match part {
            Part::Text { text } => haystack.push_str(text),
            Part::Image { sha256_16, .. } => {
                haystack.push_str(" img:");
                haystack.push_str(sha256_16);
            }
        }
        haystack.push(' ');
    }
    haystack.push('\n');
}

fn substitute(reply: &str, trigger: &ChatMessage) -> String {
    if !reply.contains("{image_hash}") {
        return reply.to_string();
    }
    let hash = trigger.image_hashes().first().copied().unwrap_or("no-image");
    reply.replace("{image_hash}", hash)
}

/// SHA-256 seeded embedding: block `i` of the byte stream is
/// `sha256(seed || i as le bytes)`, each byte becomes `b/255 - 0.5`, and the
/// result is L2-normalized. Never the zero vector because no byte maps to
/// exactly zero.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let seed = sha2::Sha256::digest(text.as_bytes());
    let mut raw = Vec::with_capacity(dim);
    let mut counter: u32 = 0;
    while raw.len() < dim {
        let mut h = sha2::Sha256::new();
        h.update(seed);
        h.update(counter.to_le_bytes());
        let block = h.finalize();
        for b in block {
            if raw.len() == dim {
                break;
            }
            raw.push(b as f32 / 255.0 - 0.5);
        }
        counter += 1;
    }
    let norm = raw.iter().map(|x| x * x).sum::<f32>().sqrt();
    raw.iter().map(|x| x / norm).collect()
}
