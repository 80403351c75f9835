use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Coarse rhetorical relation inventory emitted by the discourse parser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "alloc::string::String", into = "&'static str")]
pub enum RelationLabel {
    Attribution,
    Background,
    Cause,
    Comparison,
    Condition,
    Contrast,
    Elaboration,
    Enablement,
    Evaluation,
    Explanation,
    Joint,
    MannerMeans,
    SameUnit,
    Summary,
    Temporal,
    TextualOrganization,
    TopicChange,
    TopicComment,
}

pub const NUM_RELATIONS: usize = 18;

impl RelationLabel {
    pub const ALL: [RelationLabel; NUM_RELATIONS] = [
        RelationLabel::Attribution,
        RelationLabel::Background,
        RelationLabel::Cause,
        RelationLabel::Comparison,
        RelationLabel::Condition,
        RelationLabel::Contrast,
        RelationLabel::Elaboration,
        RelationLabel::Enablement,
        RelationLabel::Evaluation,
        RelationLabel::Explanation,
        RelationLabel::Joint,
        RelationLabel::MannerMeans,
        RelationLabel::SameUnit,
        RelationLabel::Summary,
        RelationLabel::Temporal,
        RelationLabel::TextualOrganization,
        RelationLabel::TopicChange,
        RelationLabel::TopicComment,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Name as written by the parser.
    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Attribution => "Attribution",
            RelationLabel::Background => "Background",
            RelationLabel::Cause => "Cause",
            RelationLabel::Comparison => "Comparison",
            RelationLabel::Condition => "Condition",
            RelationLabel::Contrast => "Contrast",
            RelationLabel::Elaboration => "Elaboration",
            RelationLabel::Enablement => "Enablement",
            RelationLabel::Evaluation => "Evaluation",
            RelationLabel::Explanation => "Explanation",
            RelationLabel::Joint => "Joint",
            RelationLabel::MannerMeans => "Manner-Means",
            RelationLabel::SameUnit => "Same-unit",
            RelationLabel::Summary => "Summary",
            RelationLabel::Temporal => "Temporal",
            RelationLabel::TextualOrganization => "Textual-organization",
            RelationLabel::TopicChange => "Topic-Change",
            RelationLabel::TopicComment => "Topic-Comment",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown rhetorical relation `{0}`")]
pub struct UnknownRelation(pub alloc::string::String);

impl FromStr for RelationLabel {
    type Err = UnknownRelation;

    /// Exact match on the canonical name, falling back to a case- and
    /// separator-insensitive match (`manner_means`, `same-unit`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(r) = Self::ALL.iter().find(|r| r.name() == s) {
            return Ok(*r);
        }
        let norm = |x: &str| -> alloc::string::String {
            x.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .map(|c| c.to_ascii_lowercase())
                .collect()
        };
        let key = norm(s);
        Self::ALL
            .iter()
            .find(|r| norm(r.name()) == key)
            .copied()
            .ok_or_else(|| UnknownRelation(s.into()))
    }
}

impl TryFrom<alloc::string::String> for RelationLabel {
    type Error = UnknownRelation;

    fn try_from(s: alloc::string::String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RelationLabel> for &'static str {
    fn from(r: RelationLabel) -> Self {
        r.name()
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
