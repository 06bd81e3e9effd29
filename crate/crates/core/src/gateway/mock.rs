//! Offline backend whose replies are pure functions of the request.
//!
//! The mock reads the material wrapped in `<document>` tags of the user prompt:
//! structured summaries are assembled from its sentences, extractions keep only
//! passages that name the requested speaker, and free-text replies keep a
//! hash-selected subset of paragraphs, each shortened.

use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatReply, CompletionRequest, GatewayError, ReplySchema};

pub const DOCUMENT_OPEN: &str = "<document>";
pub const DOCUMENT_CLOSE: &str = "</document>";

const EMPTY: &str = "none stated";
const KEEP_PERCENT: u64 = 70;
const PARAGRAPH_WORDS: usize = 40;

pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ChatBackend for MockBackend {
    fn chat(&self, _name: &str, request: &CompletionRequest) -> Result<ChatReply, GatewayError> {
        Ok(ChatReply {
            text: mock_structured_reply(request, self.seed),
            retries: 0,
            attempts: 1,
        })
    }
}

/// Text between the first `<document>` and the last `</document>` of the
/// prompt, or the whole prompt when no tags are present.
pub fn extract_document(prompt: &str) -> &str {
    match (prompt.find(DOCUMENT_OPEN), prompt.rfind(DOCUMENT_CLOSE)) {
        (Some(a), Some(b)) if a + DOCUMENT_OPEN.len() <= b => {
            prompt[a + DOCUMENT_OPEN.len()..b].trim()
        }
        _ => prompt.trim(),
    }
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch == '\n' {
            current.push(' ');
            continue;
        }
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn or_empty(s: Option<String>) -> String {
    match s {
        Some(s) if !s.trim().is_empty() => s,
        _ => EMPTY.to_string(),
    }
}

fn render(headline: String, fields: [String; 4], quotes: &[String]) -> String {
    let [issue, position, argument, proposal] = fields;
    let mut out = format!(
        "Headline: {headline}\nIssue: {issue}\nPosition: {position}\nArgument: {argument}\nProposal: {proposal}\nQuotes:"
    );
    if quotes.is_empty() {
        out.push(' ');
        out.push_str(EMPTY);
    } else {
        for q in quotes {
            out.push_str("\n- \"");
            out.push_str(q);
            out.push('"');
        }
    }
    out
}

fn summary_reply(document: &str, speaker: &str, seed: u64) -> String {
    let sents = sentences(document);
    let token = digest_u64(&[document.as_bytes(), &seed.to_le_bytes()]);
    let headline = format!(
        "{speaker} on {} (ref {:08x})",
        first_words(sents.first().map(String::as_str).unwrap_or(document), 8),
        token as u32
    );
    let proposal_idx = sents.iter().position(|s| {
        let l = s.to_lowercase();
        ["should", "must", "propose", "call on", "calls on", "need to", "urge"]
            .iter()
            .any(|k| l.contains(k))
    });
    let argument: Vec<&str> = sents
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(i, _)| Some(*i) != proposal_idx)
        .map(|(_, s)| s.as_str())
        .collect();
    let fields = [
        or_empty(sents.first().cloned()),
        or_empty(sents.get(1).cloned()),
        or_empty(Some(argument.join(" "))),
        or_empty(proposal_idx.map(|i| sents[i].clone())),
    ];
    let mut quotes = Vec::new();
    if let Some(q) = sents.first() {
        quotes.push(q.clone());
    }
    if sents.len() > 1 {
        quotes.push(sents[sents.len() - 1].clone());
    }
    render(headline, fields, &quotes)
}

fn extraction_reply(document: &str, speaker: &str) -> String {
    let needle = speaker.to_lowercase();
    let matched: Vec<String> = document
        .split("\n\n")
        .flat_map(|p| p.lines())
        .filter(|l| !needle.is_empty() && l.to_lowercase().contains(&needle))
        .map(|l| l.trim().to_string())
        .collect();
    if matched.is_empty() {
        return render(
            EMPTY.to_string(),
            [EMPTY.into(), EMPTY.into(), EMPTY.into(), EMPTY.into()],
            &[],
        );
    }
    let sents = sentences(&matched.join(" "));
    let headline = format!("{speaker}: {}", first_words(&sents[0], 10));
    let rest = if sents.len() > 3 {
        Some(sents[3..].join(" "))
    } else {
        None
    };
    let fields = [
        sents[0].clone(),
        sents.get(1).cloned().unwrap_or_else(|| sents[0].clone()),
        or_empty(sents.get(2).cloned()),
        or_empty(rest),
    ];
    render(headline, fields, &[])
}

fn free_text_reply(document: &str, request_hash: &str, seed: u64) -> String {
    let paragraphs: Vec<&str> = document
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let mut kept: Vec<String> = paragraphs
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            digest_u64(&[
                request_hash.as_bytes(),
                &seed.to_le_bytes(),
                &(*i as u64).to_le_bytes(),
            ]) % 100
                < KEEP_PERCENT
        })
        .map(|(_, p)| first_words(p, PARAGRAPH_WORDS))
        .collect();
    if kept.is_empty() {
        kept.push(first_words(paragraphs.first().copied().unwrap_or("debate"), PARAGRAPH_WORDS));
    }
    kept.join("\n\n")
}

/// Deterministic reply for `request`; identical inputs give identical bytes.
pub fn mock_structured_reply(request: &CompletionRequest, seed: u64) -> String {
    let document = extract_document(&request.user_prompt);
    match &request.schema {
        ReplySchema::FreeText => free_text_reply(document, &request.request_hash, seed),
        ReplySchema::StructuredSummary { speaker } => summary_reply(document, speaker, seed),
        ReplySchema::StructuredExtraction { speaker } => extraction_reply(document, speaker),
    }
}
