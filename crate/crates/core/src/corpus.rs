//! Debates, speakers and the per-intervention covariates derived from them.
//!
//! A corpus file is UTF-8 JSON lines with one debate per line:
//!
//! ```text
//! {"debate_id": "...", "title": "...", "interventions": [
//!     {"order": 1, "speaker_id": "...", "speaker_name": "...", "party_group": "...", "text": "..."}
//! ]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of interventions kept per debate unless configured otherwise.
pub const DEFAULT_CAP: usize = 70;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("debate {debate_id}: duplicate order index {order}")]
    DuplicateOrder { debate_id: String, order: u32 },
    #[error("debate {debate_id}: order indices must be exactly 1..{n}, found {found:?}")]
    OrderGap {
        debate_id: String,
        n: usize,
        found: Vec<u32>,
    },
    #[error("speaker {speaker_id} appears with conflicting metadata")]
    SpeakerConflict { speaker_id: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Speaker {
    pub speaker_id: String,
    pub display_name: String,
    pub party_group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub debate_id: String,
    /// 1-based speaking position within the debate.
    pub order_index: u32,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Debate {
    pub debate_id: String,
    pub title: String,
    pub interventions: Vec<Intervention>,
}

impl Debate {
    pub fn n(&self) -> usize {
        self.interventions.len()
    }

    /// Order covariate for the intervention at `order_index`.
    pub fn order_of(&self, order_index: u32) -> Result<OrderCovariate, CorpusError> {
        relative_order(order_index as usize, self.n())
    }

    /// Serializes back to the corpus line format.
    pub fn to_json_line(&self) -> String {
        let raw = RawDebate {
            debate_id: Some(self.debate_id.clone()),
            title: Some(self.title.clone()),
            interventions: Some(
                self.interventions
                    .iter()
                    .map(|i| RawIntervention {
                        order: Some(i.order_index as i64),
                        speaker_id: Some(i.speaker.speaker_id.clone()),
                        speaker_name: Some(i.speaker.display_name.clone()),
                        party_group: Some(i.speaker.party_group.clone()),
                        text: Some(i.text.clone()),
                    })
                    .collect(),
            ),
        };
        serde_json::to_string(&raw).expect("debate serializes")
    }
}

/// Position of an intervention relative to the length of its debate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderCovariate {
    /// `k / n`, in `(0, 1]`.
    pub relative: f64,
    /// `k / n - 0.5`; zero is the middle of the debate.
    pub centered: f64,
}

impl OrderCovariate {
    pub fn relative_squared(&self) -> f64 {
        self.relative * self.relative
    }

    pub fn centered_squared(&self) -> f64 {
        self.centered * self.centered
    }
}

pub fn relative_order(k: usize, n: usize) -> Result<OrderCovariate, CorpusError> {
    if n == 0 || k == 0 || k > n {
        return Err(CorpusError::Argument(format!(
            "relative order needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let relative = k as f64 / n as f64;
    Ok(OrderCovariate {
        relative,
        centered: relative - 0.5,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RawIntervention {
    order: Option<i64>,
    speaker_id: Option<String>,
    speaker_name: Option<String>,
    party_group: Option<String>,
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDebate {
    debate_id: Option<String>,
    title: Option<String>,
    interventions: Option<Vec<RawIntervention>>,
}

fn required<T>(value: Option<T>, line: usize, what: &str) -> Result<T, CorpusError> {
    value.ok_or_else(|| CorpusError::Record {
        line,
        message: format!("missing field `{what}`"),
    })
}

fn non_empty(value: String, line: usize, what: &str) -> Result<String, CorpusError> {
    if value.trim().is_empty() {
        Err(CorpusError::Record {
            line,
            message: format!("field `{what}` is empty"),
        })
    } else {
        Ok(value)
    }
}

fn parse_debate(text: &str, line: usize, cap: usize) -> Result<Debate, CorpusError> {
    let raw: RawDebate = serde_json::from_str(text).map_err(|e| CorpusError::Record {
        line,
        message: format!("malformed JSON: {e}"),
    })?;
    let debate_id = non_empty(required(raw.debate_id, line, "debate_id")?, line, "debate_id")?;
    let title = raw.title.unwrap_or_default();
    let raw_items = required(raw.interventions, line, "interventions")?;
    if raw_items.is_empty() {
        return Err(CorpusError::Record {
            line,
            message: format!("debate {debate_id} has no interventions"),
        });
    }

    let mut interventions = Vec::with_capacity(raw_items.len());
    for (pos, item) in raw_items.into_iter().enumerate() {
        let ctx = |m: &str| format!("intervention #{}: {m}", pos + 1);
        let order = item.order.ok_or_else(|| CorpusError::Record {
            line,
            message: ctx("missing field `order`"),
        })?;
        if order < 1 || order > u32::MAX as i64 {
            return Err(CorpusError::Record {
                line,
                message: ctx(&format!("order {order} out of range")),
            });
        }
        let field = |v: Option<String>, name: &str| -> Result<String, CorpusError> {
            match v {
                Some(s) if !s.trim().is_empty() => Ok(s),
                Some(_) => Err(CorpusError::Record {
                    line,
                    message: ctx(&format!("field `{name}` is empty")),
                }),
                None => Err(CorpusError::Record {
                    line,
                    message: ctx(&format!("missing field `{name}`")),
                }),
            }
        };
        let speaker = Speaker {
            speaker_id: field(item.speaker_id, "speaker_id")?,
            display_name: field(item.speaker_name, "speaker_name")?,
            party_group: field(item.party_group, "party_group")?,
        };
        let text = field(item.text, "text")?;
        interventions.push(Intervention {
            debate_id: debate_id.clone(),
            order_index: order as u32,
            speaker,
            text,
        });
    }

    interventions.sort_by_key(|i| i.order_index);
    for pair in interventions.windows(2) {
        if pair[0].order_index == pair[1].order_index {
            return Err(CorpusError::DuplicateOrder {
                debate_id,
                order: pair[0].order_index,
            });
        }
    }
    check_contiguous(&debate_id, &interventions)?;

    if interventions.len() > cap {
        log::warn!(
            "debate {debate_id} has {} interventions, truncating to the first {cap}",
            interventions.len()
        );
        interventions.truncate(cap);
    }
    if interventions.len() == 1 {
        log::warn!("debate {debate_id} has a single intervention; its relative order is 1");
    }
    Ok(Debate {
        debate_id,
        title,
        interventions,
    })
}

fn check_contiguous(debate_id: &str, interventions: &[Intervention]) -> Result<(), CorpusError> {
    let ok = interventions
        .iter()
        .enumerate()
        .all(|(i, iv)| iv.order_index as usize == i + 1);
    if ok {
        Ok(())
    } else {
        Err(CorpusError::OrderGap {
            debate_id: debate_id.to_string(),
            n: interventions.len(),
            found: interventions.iter().map(|i| i.order_index).collect(),
        })
    }
}

/// Parses corpus text (JSON lines). Blank lines are skipped.
pub fn parse_corpus(content: &str, cap: usize) -> Result<Vec<Debate>, CorpusError> {
    if cap == 0 {
        return Err(CorpusError::Argument("cap must be at least 1".into()));
    }
    let mut debates = Vec::new();
    let mut speakers: HashMap<String, Speaker> = HashMap::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    for (idx, text) in content.lines().enumerate() {
        let line = idx + 1;
        if text.trim().is_empty() {
            continue;
        }
        let debate = parse_debate(text, line, cap)?;
        if let Some(first) = seen_ids.insert(debate.debate_id.clone(), line) {
            return Err(CorpusError::Record {
                line,
                message: format!(
                    "debate id {} already defined on line {first}",
                    debate.debate_id
                ),
            });
        }
        for iv in &debate.interventions {
            match speakers.get(&iv.speaker.speaker_id) {
                Some(known) if known != &iv.speaker => {
                    return Err(CorpusError::SpeakerConflict {
                        speaker_id: iv.speaker.speaker_id.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    speakers.insert(iv.speaker.speaker_id.clone(), iv.speaker.clone());
                }
            }
        }
        debates.push(debate);
    }
    Ok(debates)
}

pub fn ingest_debates(path: &Path, cap: usize) -> Result<Vec<Debate>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&content, cap)
}

pub fn write_corpus(debates: &[Debate]) -> String {
    let mut out = String::new();
    for d in debates {
        out.push_str(&d.to_json_line());
        out.push('\n');
    }
    out
}

/// Dummy coding of party groups against a reference party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyLayout {
    pub reference: String,
    /// Non-reference parties, in lexicographic order; one dummy column each.
    pub columns: Vec<String>,
}

impl PartyLayout {
    /// 0/1 indicator vector for `party`; the reference party maps to all zeros.
    pub fn dummies(&self, party: &str) -> Result<Vec<f64>, CorpusError> {
        if party == self.reference {
            return Ok(vec![0.0; self.columns.len()]);
        }
        let pos = self
            .columns
            .iter()
            .position(|c| c == party)
            .ok_or_else(|| CorpusError::Argument(format!("party {party} not in layout")))?;
        let mut v = vec![0.0; self.columns.len()];
        v[pos] = 1.0;
        Ok(v)
    }

    pub fn parties(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.reference.as_str()).chain(self.columns.iter().map(String::as_str))
    }
}

/// Builds the party dummy layout from one party label per intervention.
///
/// Without an explicit reference the party with the most interventions is used,
/// ties going to the lexicographically smallest label.
pub fn party_design<'a, I>(parties: I, reference: Option<&str>) -> Result<PartyLayout, CorpusError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in parties {
        *counts.entry(p).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(CorpusError::Argument(format!(
            "party design needs at least 2 party groups, found {}",
            counts.len()
        )));
    }
    let reference = match reference {
        Some(r) => {
            if !counts.contains_key(r) {
                return Err(CorpusError::Argument(format!(
                    "reference party {r} not present in corpus"
                )));
            }
            r.to_string()
        }
        None => {
            // BTreeMap iterates lexicographically, so the first maximum wins ties.
            let mut best: Option<(&str, usize)> = None;
            for (&p, &c) in &counts {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((p, c));
                }
            }
            best.expect("non-empty").0.to_string()
        }
    };
    let columns = counts
        .keys()
        .filter(|p| **p != reference)
        .map(|p| p.to_string())
        .collect();
    Ok(PartyLayout { reference, columns })
}

/// Convenience wrapper taking speakers (one entry per intervention).
pub fn party_design_for_speakers(
    speakers: &[Speaker],
    reference: Option<&str>,
) -> Result<PartyLayout, CorpusError> {
    party_design(speakers.iter().map(|s| s.party_group.as_str()), reference)
}
