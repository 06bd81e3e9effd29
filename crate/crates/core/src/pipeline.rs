//! Intervention summarisation, debate-summary generation and per-speaker
//! reconstruction.
//!
//! Every model call goes through the [`Gateway`]. Summaries and
//! reconstructions share the six-heading schema of [`SummaryFields`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Debate, Intervention, Speaker};
use crate::gateway::{Gateway, GatewayError, ReplySchema};
use crate::metrics::count_tokens;
use crate::prompts::{PromptError, PromptSet};

/// Canonical marker for an element that is absent.
pub const EMPTY_MARKER: &str = "none stated";

const REPROMPT_NOTE: &str = "Your previous reply did not follow the required structure. \
Reply again using exactly the six headings (Headline, Issue, Position, Argument, Proposal, Quotes), \
each at the start of its own line.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no summary headings found in reply")]
    Parse,
    #[error("{stage} failed for {subject}: {message}")]
    Stage {
        stage: String,
        subject: String,
        message: String,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Default,
    Grouped,
    Hierarchical,
    Prompted,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Default,
        Method::Grouped,
        Method::Hierarchical,
        Method::Prompted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Default => "default",
            Method::Grouped => "grouped",
            Method::Hierarchical => "hierarchical",
            Method::Prompted => "prompted",
        }
    }

    /// Row label used in the fidelity/compression table.
    pub fn label(self) -> &'static str {
        match self {
            Method::Default => "Default",
            Method::Grouped => "Grouped",
            Method::Hierarchical => "Hierarchical",
            Method::Prompted => "Prompt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(Method::Default),
            "grouped" => Ok(Method::Grouped),
            "hierarchical" => Ok(Method::Hierarchical),
            "prompted" | "prompt" => Ok(Method::Prompted),
            other => Err(PipelineError::Input(format!("unknown method `{other}`"))),
        }
    }
}

/// The four substantive elements, in the order generators present them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Issue,
    Position,
    Argument,
    Proposal,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Issue, Field::Position, Field::Argument, Field::Proposal];

    pub fn key(self) -> &'static str {
        match self {
            Field::Issue => "issue",
            Field::Position => "position",
            Field::Argument => "argument",
            Field::Proposal => "proposal",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Field::Issue => "issues",
            Field::Position => "positions",
            Field::Argument => "arguments",
            Field::Proposal => "proposals",
        }
    }

    pub fn section_title(self) -> &'static str {
        match self {
            Field::Issue => "Issues",
            Field::Position => "Positions",
            Field::Argument => "Arguments",
            Field::Proposal => "Proposals",
        }
    }
}

/// The six-heading content shared by summaries and reconstructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFields {
    pub headline: String,
    pub issue: String,
    pub position: String,
    pub argument: String,
    pub proposal: String,
    /// Empty when no quotes were given.
    pub quotes: Vec<String>,
}

impl Default for SummaryFields {
    fn default() -> Self {
        Self::empty()
    }
}

impl SummaryFields {
    pub fn empty() -> Self {
        Self {
            headline: EMPTY_MARKER.into(),
            issue: EMPTY_MARKER.into(),
            position: EMPTY_MARKER.into(),
            argument: EMPTY_MARKER.into(),
            proposal: EMPTY_MARKER.into(),
            quotes: Vec::new(),
        }
    }

    pub fn field(&self, field: Field) -> &str {
        match field {
            Field::Issue => &self.issue,
            Field::Position => &self.position,
            Field::Argument => &self.argument,
            Field::Proposal => &self.proposal,
        }
    }

    /// True when every content element is the empty marker.
    pub fn is_empty(&self) -> bool {
        [
            &self.headline,
            &self.issue,
            &self.position,
            &self.argument,
            &self.proposal,
        ]
        .iter()
        .all(|s| is_empty_marker(s))
            && self.quotes.is_empty()
    }

    /// Canonical text: six headings in fixed order, empty markers included.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Headline: {}\nIssue: {}\nPosition: {}\nArgument: {}\nProposal: {}\nQuotes:",
            self.headline, self.issue, self.position, self.argument, self.proposal
        );
        if self.quotes.is_empty() {
            out.push(' ');
            out.push_str(EMPTY_MARKER);
        } else {
            for q in &self.quotes {
                out.push_str("\n- ");
                out.push_str(q);
            }
        }
        out
    }

    /// Whether every quote occurs in `source` after whitespace normalization.
    pub fn quotes_are_verbatim(&self, source: &str) -> bool {
        let hay = normalize_ws(source).to_lowercase();
        self.quotes
            .iter()
            .all(|q| hay.contains(&normalize_ws(q).to_lowercase()))
    }
}

pub fn is_empty_marker(s: &str) -> bool {
    let t = s.trim().trim_end_matches('.').trim();
    t.is_empty() || t.eq_ignore_ascii_case(EMPTY_MARKER)
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredSummary {
    pub speaker_id: String,
    pub order_index: u32,
    #[serde(flatten)]
    pub fields: SummaryFields,
    /// Set when the summariser could not produce a parseable reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl StructuredSummary {
    pub fn failed(intervention: &Intervention, reason: String) -> Self {
        Self {
            speaker_id: intervention.speaker.speaker_id.clone(),
            order_index: intervention.order_index,
            fields: SummaryFields::empty(),
            failed: Some(reason),
        }
    }

    pub fn render(&self) -> String {
        self.fields.render()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateSummary {
    pub debate_id: String,
    pub method: Method,
    pub text: String,
    /// Field summaries of the hierarchical generator, keyed by field name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<BTreeMap<String, String>>,
    pub backend: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionOutput {
    pub structured: StructuredSummary,
    pub found: bool,
}

impl ReconstructionOutput {
    pub fn failed(speaker: &Speaker, order_index: u32, reason: String) -> Self {
        Self {
            structured: StructuredSummary {
                speaker_id: speaker.speaker_id.clone(),
                order_index,
                fields: SummaryFields::empty(),
                failed: Some(reason),
            },
            found: false,
        }
    }
}

const HEADINGS: [&str; 6] = ["headline", "issue", "position", "argument", "proposal", "quotes"];

/// Finds a heading at the start of `line`, tolerating markdown decoration
/// (`## Issue:`, `**Issue:**`, `- Issue:`). Returns the heading index and the
/// remainder of the line.
fn match_heading(line: &str) -> Option<(usize, &str)> {
    let stripped = line.trim_start().trim_start_matches(['#', '*', '-', '_', ' ', '\t']);
    for (idx, h) in HEADINGS.iter().enumerate() {
        if stripped.len() < h.len() || !stripped.is_char_boundary(h.len()) {
            continue;
        }
        let (head, tail) = stripped.split_at(h.len());
        if !head.eq_ignore_ascii_case(h) {
            continue;
        }
        let tail = tail.trim_start_matches(['*', '_']);
        let tail = tail.trim_start();
        if let Some(rest) = tail.strip_prefix(':') {
            let rest = rest.trim_start_matches(['*', '_']);
            return Some((idx, rest.trim()));
        }
    }
    None
}

fn clean_quote(line: &str) -> Option<String> {
    let t = line
        .trim()
        .trim_start_matches(['-', '*', '•'])
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['.', ')'])
        .trim();
    let t = t
        .trim_matches(|c| matches!(c, '"' | '“' | '”' | '\''))
        .trim();
    if is_empty_marker(t) {
        None
    } else {
        Some(t.to_string())
    }
}

/// Lenient parser for six-heading replies.
///
/// Headings are matched case-insensitively at line starts; each field runs
/// until the next heading. Missing or blank fields become the empty marker.
pub fn parse_structured_summary(text: &str) -> Result<SummaryFields, PipelineError> {
    let mut slots: [Option<Vec<String>>; 6] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((idx, rest)) = match_heading(line) {
            if slots[idx].is_some() {
                log::warn!("heading `{}` repeated; keeping the first", HEADINGS[idx]);
                current = None;
                continue;
            }
            slots[idx] = Some(if rest.is_empty() { vec![] } else { vec![rest.to_string()] });
            current = Some(idx);
        } else if let Some(idx) = current {
            if !line.trim().is_empty() {
                slots[idx].as_mut().expect("open slot").push(line.trim().to_string());
            }
        }
    }
    if slots.iter().all(Option::is_none) {
        return Err(PipelineError::Parse);
    }
    let text_field = |slot: &Option<Vec<String>>, name: &str| -> String {
        match slot {
            Some(lines) if !lines.is_empty() => {
                let joined = lines.join(" ");
                if is_empty_marker(&joined) {
                    EMPTY_MARKER.to_string()
                } else {
                    joined
                }
            }
            Some(_) => EMPTY_MARKER.to_string(),
            None => {
                log::warn!("reply has no `{name}` heading; using `{EMPTY_MARKER}`");
                EMPTY_MARKER.to_string()
            }
        }
    };
    let quotes = match &slots[5] {
        Some(lines) => lines.iter().filter_map(|l| clean_quote(l)).collect(),
        None => {
            log::warn!("reply has no `quotes` heading");
            Vec::new()
        }
    };
    Ok(SummaryFields {
        headline: text_field(&slots[0], "headline"),
        issue: text_field(&slots[1], "issue"),
        position: text_field(&slots[2], "position"),
        argument: text_field(&slots[3], "argument"),
        proposal: text_field(&slots[4], "proposal"),
        quotes,
    })
}

/// Runs the three model-backed stages against a [`Gateway`].
pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
}

fn speaker_label(s: &Speaker) -> String {
    format!("{} ({})", s.display_name, s.party_group)
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Self { gateway, prompts }
    }

    /// Issues a structured request, re-prompting once if the reply cannot be
    /// parsed or is empty.
    fn structured_call(
        &self,
        backend: &str,
        stage: &str,
        system: String,
        user: String,
        schema: ReplySchema,
    ) -> Result<SummaryFields, PipelineError> {
        let first = self.gateway.request(backend, stage, system.clone(), user.clone(), schema.clone())?;
        let first_err = match self.gateway.complete(backend, &first) {
            Ok(r) => match parse_structured_summary(&r.text) {
                Ok(f) => return Ok(f),
                Err(e) => e.to_string(),
            },
            Err(GatewayError::Protocol { message, .. }) => message,
            Err(e) => return Err(e.into()),
        };
        log::warn!("{stage}: {first_err}; re-prompting once");
        let retry_user = format!("{user}\n\n{REPROMPT_NOTE}");
        let second = self.gateway.request(backend, stage, system, retry_user, schema)?;
        match self.gateway.complete(backend, &second) {
            Ok(r) => parse_structured_summary(&r.text).map_err(|e| PipelineError::Stage {
                stage: stage.into(),
                subject: String::new(),
                message: format!("{e} after re-prompt"),
            }),
            Err(GatewayError::Protocol { message, .. }) => Err(PipelineError::Stage {
                stage: stage.into(),
                subject: String::new(),
                message: format!("{message} after re-prompt"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn summarise_intervention(
        &self,
        debate: &Debate,
        intervention: &Intervention,
        backend: &str,
    ) -> Result<StructuredSummary, PipelineError> {
        let t = self.prompts.get("sum")?;
        let vars = [
            ("title", debate.title.as_str()),
            ("speaker", intervention.speaker.display_name.as_str()),
            ("party", intervention.speaker.party_group.as_str()),
            ("text", intervention.text.as_str()),
        ];
        let fields = self
            .structured_call(
                backend,
                "sum",
                t.render_system(&vars)?,
                t.render_user(&vars)?,
                ReplySchema::StructuredSummary {
                    speaker: intervention.speaker.display_name.clone(),
                },
            )
            .map_err(|e| with_subject(e, &intervention.debate_id, intervention.order_index))?;
        if !fields.quotes_are_verbatim(&intervention.text) {
            log::warn!(
                "{}#{}: summary quotes are not verbatim excerpts of the speech",
                intervention.debate_id,
                intervention.order_index
            );
        }
        Ok(StructuredSummary {
            speaker_id: intervention.speaker.speaker_id.clone(),
            order_index: intervention.order_index,
            fields,
            failed: None,
        })
    }

    /// Like [`summarise_intervention`](Self::summarise_intervention) but parse
    /// failures produce a summary marked failed. Transport errors still fail.
    pub fn summarise_or_mark_failed(
        &self,
        debate: &Debate,
        intervention: &Intervention,
        backend: &str,
    ) -> Result<StructuredSummary, PipelineError> {
        match self.summarise_intervention(debate, intervention, backend) {
            Ok(s) => Ok(s),
            Err(e @ PipelineError::Stage { .. }) => {
                log::error!("{e}");
                Ok(StructuredSummary::failed(intervention, e.to_string()))
            }
            Err(e) => Err(e),
        }
    }

    pub fn generate(
        &self,
        method: Method,
        debate: &Debate,
        summaries: &[StructuredSummary],
        backend: &str,
    ) -> Result<DebateSummary, PipelineError> {
        match method {
            Method::Default => self.generate_default(debate, summaries, backend),
            Method::Grouped => self.generate_grouped(debate, summaries, backend),
            Method::Hierarchical => self.generate_hierarchical(debate, summaries, backend),
            Method::Prompted => self.generate_prompted(debate, summaries, backend),
        }
    }

    fn free_text(
        &self,
        backend: &str,
        stage: &str,
        system: String,
        user: String,
    ) -> Result<String, PipelineError> {
        let req = self
            .gateway
            .request(backend, stage, system, user, ReplySchema::FreeText)?;
        Ok(self.gateway.complete(backend, &req)?.text)
    }

    fn finish(
        &self,
        debate: &Debate,
        method: Method,
        text: String,
        intermediate: Option<BTreeMap<String, String>>,
        backend: &str,
    ) -> DebateSummary {
        DebateSummary {
            debate_id: debate.debate_id.clone(),
            method,
            token_count: count_tokens(&text),
            text,
            intermediate,
            backend: backend.to_string(),
        }
    }

    /// System and user prompt of the default generator.
    pub fn default_prompts(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
    ) -> Result<(String, String), PipelineError> {
        let rendered = render_stacked(debate, summaries)?;
        let n = debate.n().to_string();
        let t = self.prompts.get("gen_default")?;
        let vars = [
            ("title", debate.title.as_str()),
            ("n", n.as_str()),
            ("summaries", rendered.as_str()),
        ];
        Ok((t.render_system(&vars)?, t.render_user(&vars)?))
    }

    pub fn generate_default(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
        backend: &str,
    ) -> Result<DebateSummary, PipelineError> {
        let (system, user) = self.default_prompts(debate, summaries)?;
        let text = self
            .free_text(backend, "gen_default", system, user)
            .map_err(|e| with_subject(e, &debate.debate_id, 0))?;
        Ok(self.finish(debate, Method::Default, text, None, backend))
    }

    pub fn prompted_prompts(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
    ) -> Result<(String, String), PipelineError> {
        let (system, user) = self.default_prompts(debate, summaries)?;
        let extra = &self.prompts.get("gen_prompted")?.system;
        Ok((format!("{system}\n{extra}"), user))
    }

    pub fn generate_prompted(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
        backend: &str,
    ) -> Result<DebateSummary, PipelineError> {
        let (system, user) = self.prompted_prompts(debate, summaries)?;
        let text = self
            .free_text(backend, "gen_prompted", system, user)
            .map_err(|e| with_subject(e, &debate.debate_id, 0))?;
        Ok(self.finish(debate, Method::Prompted, text, None, backend))
    }

    pub fn grouped_prompts(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
    ) -> Result<(String, String), PipelineError> {
        let sections = render_grouped(debate, summaries)?;
        let n = debate.n().to_string();
        let t = self.prompts.get("gen_grouped")?;
        let vars = [
            ("title", debate.title.as_str()),
            ("n", n.as_str()),
            ("sections", sections.as_str()),
        ];
        Ok((t.render_system(&vars)?, t.render_user(&vars)?))
    }

    pub fn generate_grouped(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
        backend: &str,
    ) -> Result<DebateSummary, PipelineError> {
        let (system, user) = self.grouped_prompts(debate, summaries)?;
        let text = self
            .free_text(backend, "gen_grouped", system, user)
            .map_err(|e| with_subject(e, &debate.debate_id, 0))?;
        Ok(self.finish(debate, Method::Grouped, text, None, backend))
    }

    /// Four field summaries, then one aggregation: five completions.
    pub fn generate_hierarchical(
        &self,
        debate: &Debate,
        summaries: &[StructuredSummary],
        backend: &str,
    ) -> Result<DebateSummary, PipelineError> {
        let pairs = pair_with_speakers(debate, summaries)?;
        let field_t = self.prompts.get("gen_hier_field")?;
        let mut intermediate = BTreeMap::new();
        for field in Field::ALL {
            let lines = attributed_lines(&pairs, field);
            let body = if lines.is_empty() {
                format!("(no speaker stated any {})", field.key())
            } else {
                lines.join("\n\n")
            };
            let vars = [
                ("title", debate.title.as_str()),
                ("field", field.key()),
                ("field_plural", field.plural()),
                ("lines", body.as_str()),
            ];
            let text = self
                .free_text(
                    backend,
                    "gen_hier_field",
                    field_t.render_system(&vars)?,
                    field_t.render_user(&vars)?,
                )
                .map_err(|e| PipelineError::Stage {
                    stage: "gen_hier_field".into(),
                    subject: format!("{} field `{}`", debate.debate_id, field.key()),
                    message: e.to_string(),
                })?;
            intermediate.insert(field.key().to_string(), text);
        }

        let combined = Field::ALL
            .iter()
            .map(|f| format!("## {}\n\n{}", f.section_title(), intermediate[f.key()]))
            .collect::<Vec<_>>()
            .join("\n\n");
        let final_t = self.prompts.get("gen_hier_final")?;
        let vars = [
            ("title", debate.title.as_str()),
            ("field_summaries", combined.as_str()),
        ];
        let text = self
            .free_text(
                backend,
                "gen_hier_final",
                final_t.render_system(&vars)?,
                final_t.render_user(&vars)?,
            )
            .map_err(|e| with_subject(e, &debate.debate_id, 0))?;
        Ok(self.finish(
            debate,
            Method::Hierarchical,
            text,
            Some(intermediate),
            backend,
        ))
    }

    /// Prompts of the reconstruction request: the debate summary and the
    /// speaker's name and party, nothing else.
    pub fn reconstruction_prompts(
        &self,
        summary: &DebateSummary,
        speaker: &Speaker,
    ) -> Result<(String, String), PipelineError> {
        let t = self.prompts.get("rec")?;
        let vars = [
            ("speaker", speaker.display_name.as_str()),
            ("party", speaker.party_group.as_str()),
            ("summary", summary.text.as_str()),
        ];
        Ok((t.render_system(&vars)?, t.render_user(&vars)?))
    }

    pub fn reconstruct_intervention(
        &self,
        summary: &DebateSummary,
        speaker: &Speaker,
        order_index: u32,
        backend: &str,
    ) -> Result<ReconstructionOutput, PipelineError> {
        if summary.text.trim().is_empty() {
            return Err(PipelineError::Input(format!(
                "debate summary {} is empty",
                summary.debate_id
            )));
        }
        let (system, user) = self.reconstruction_prompts(summary, speaker)?;
        let fields = self
            .structured_call(
                backend,
                "rec",
                system,
                user,
                ReplySchema::StructuredExtraction {
                    speaker: speaker.display_name.clone(),
                },
            )
            .map_err(|e| with_subject(e, &summary.debate_id, order_index))?;
        let found = !fields.is_empty();
        Ok(ReconstructionOutput {
            structured: StructuredSummary {
                speaker_id: speaker.speaker_id.clone(),
                order_index,
                fields,
                failed: None,
            },
            found,
        })
    }
}

fn with_subject(e: PipelineError, debate_id: &str, order: u32) -> PipelineError {
    let subject = if order == 0 {
        debate_id.to_string()
    } else {
        format!("{debate_id}#{order}")
    };
    match e {
        PipelineError::Stage { stage, message, .. } => PipelineError::Stage {
            stage,
            subject,
            message,
        },
        other => other,
    }
}

fn pair_with_speakers<'d>(
    debate: &'d Debate,
    summaries: &'d [StructuredSummary],
) -> Result<Vec<(&'d Intervention, &'d StructuredSummary)>, PipelineError> {
    if summaries.is_empty() {
        return Err(PipelineError::Input(format!(
            "debate {} has no intervention summaries",
            debate.debate_id
        )));
    }
    if summaries.windows(2).any(|w| w[0].order_index >= w[1].order_index) {
        return Err(PipelineError::Input(
            "summaries must be ordered by order_index".into(),
        ));
    }
    summaries
        .iter()
        .filter(|s| s.failed.is_none())
        .map(|s| {
            debate
                .interventions
                .iter()
                .find(|i| i.order_index == s.order_index)
                .map(|i| (i, s))
                .ok_or_else(|| {
                    PipelineError::Input(format!(
                        "summary #{} does not belong to debate {}",
                        s.order_index, debate.debate_id
                    ))
                })
        })
        .collect()
}

/// Speaker blocks in speaking order, for the default and prompted generators.
pub fn render_stacked(debate: &Debate, summaries: &[StructuredSummary]) -> Result<String, PipelineError> {
    let n = debate.n();
    let blocks: Vec<String> = pair_with_speakers(debate, summaries)?
        .into_iter()
        .map(|(iv, s)| {
            format!(
                "Speaker: {}, intervention {} of {}\n{}",
                speaker_label(&iv.speaker),
                iv.order_index,
                n,
                s.render()
            )
        })
        .collect();
    Ok(blocks.join("\n\n"))
}

fn attributed_lines(pairs: &[(&Intervention, &StructuredSummary)], field: Field) -> Vec<String> {
    pairs
        .iter()
        .filter(|(_, s)| !is_empty_marker(s.fields.field(field)))
        .map(|(iv, s)| format!("{}: {}", speaker_label(&iv.speaker), s.fields.field(field)))
        .collect()
}

/// Four sections (issues, positions, arguments, proposals), each listing the
/// speakers' attributed text in speaking order. Empty-marker lines are omitted.
pub fn render_grouped(debate: &Debate, summaries: &[StructuredSummary]) -> Result<String, PipelineError> {
    let pairs = pair_with_speakers(debate, summaries)?;
    let sections: Vec<String> = Field::ALL
        .iter()
        .map(|&f| {
            let mut s = format!("## {}", f.section_title());
            for line in attributed_lines(&pairs, f) {
                s.push_str("\n\n");
                s.push_str(&line);
            }
            s
        })
        .collect();
    Ok(sections.join("\n\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_text() {
        let text = "Headline: H\nIssue: I\nPosition: P\nArgument: A\nProposal: Pr\nQuotes:\n- \"q1\"\n- q2";
        let f = parse_structured_summary(text).unwrap();
        assert_eq!(f.headline, "H");
        assert_eq!(f.issue, "I");
        assert_eq!(f.position, "P");
        assert_eq!(f.argument, "A");
        assert_eq!(f.proposal, "Pr");
        assert_eq!(f.quotes, vec!["q1", "q2"]);
    }

    #[test]
    fn order_independent_and_case_insensitive() {
        let text = "QUOTES: none stated\nproposal: X\n**Issue:** Y\n## Position: Z\nargument: multi\nline\nheadline: h";
        let f = parse_structured_summary(text).unwrap();
        assert_eq!(f.proposal, "X");
        assert_eq!(f.issue, "Y");
        assert_eq!(f.position, "Z");
        assert_eq!(f.argument, "multi line");
        assert_eq!(f.headline, "h");
        assert!(f.quotes.is_empty());
    }

    #[test]
    fn only_headline() {
        let f = parse_structured_summary("Headline: X").unwrap();
        assert_eq!(f.headline, "X");
        for s in [&f.issue, &f.position, &f.argument, &f.proposal] {
            assert_eq!(s, EMPTY_MARKER);
        }
    }

    #[test]
    fn missing_proposal_becomes_marker() {
        let f = parse_structured_summary("Headline: a\nIssue: b\nPosition: c\nArgument: d\nQuotes: e").unwrap();
        assert_eq!(f.proposal, EMPTY_MARKER);
        assert_eq!(f.quotes, vec!["e"]);
    }

    #[test]
    fn no_headings_is_parse_error() {
        assert!(matches!(
            parse_structured_summary("Just a paragraph about issues: none."),
            Err(PipelineError::Parse)
        ));
        assert!(matches!(parse_structured_summary(""), Err(PipelineError::Parse)));
    }

    #[test]
    fn heading_words_inside_text_are_not_headings() {
        let f = parse_structured_summary("Headline: The issue: energy\nIssuer: x").unwrap();
        assert_eq!(f.headline, "The issue: energy Issuer: x");
    }

    #[test]
    fn render_roundtrips_through_parser() {
        let f = SummaryFields {
            headline: "h".into(),
            issue: "i".into(),
            position: EMPTY_MARKER.into(),
            argument: "a".into(),
            proposal: "p".into(),
            quotes: vec!["one".into(), "two".into()],
        };
        assert_eq!(parse_structured_summary(&f.render()).unwrap(), f);
        let e = SummaryFields::empty();
        assert!(e.is_empty());
        assert_eq!(parse_structured_summary(&e.render()).unwrap(), e);
    }

    #[test]
    fn verbatim_quotes_are_whitespace_lenient() {
        let mut f = SummaryFields::empty();
        f.quotes = vec!["we  must act\nnow".into()];
        assert!(f.quotes_are_verbatim("Colleagues, we must act now."));
        f.quotes.push("invented".into());
        assert!(!f.quotes_are_verbatim("Colleagues, we must act now."));
    }

    #[test]
    fn method_labels() {
        assert_eq!(Method::Prompted.label(), "Prompt");
        assert_eq!("prompt".parse::<Method>().unwrap(), Method::Prompted);
        assert!("other".parse::<Method>().is_err());
    }
}
