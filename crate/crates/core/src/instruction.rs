//! Task instructions: a verb applied to a named object.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstructionError {
    #[error("unsupported verb `{0}`")]
    UnknownVerb(String),
    #[error("instruction `{0}` does not match any verb template")]
    Unparseable(String),
    #[error("instruction object is empty")]
    EmptyObject,
}

/// The supported task verbs, across both household environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    PickUp,
    Grab,
    Open,
    Break,
    Sit,
}

impl Verb {
    pub const ALL: [Verb; 5] = [Verb::PickUp, Verb::Grab, Verb::Open, Verb::Break, Verb::Sit];

    /// Surface form as it appears in an instruction.
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::PickUp => "pick up",
            Verb::Grab => "grab",
            Verb::Open => "open",
            Verb::Break => "break",
            Verb::Sit => "sit",
        }
    }

    /// Text placed between the verb and the object noun phrase.
    fn surface_prefix(self) -> &'static str {
        match self {
            Verb::PickUp => "pick up the ",
            Verb::Grab => "grab the ",
            Verb::Open => "open the ",
            Verb::Break => "break the ",
            Verb::Sit => "sit on the ",
        }
    }

    /// Past participle used by the critic prompts ("is {adj}").
    pub fn adjective(self) -> &'static str {
        match self {
            Verb::PickUp => "picked up",
            Verb::Grab => "grabbed",
            Verb::Open => "opened",
            Verb::Break => "broken",
            Verb::Sit => "sat on",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = InstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        match norm.as_str() {
            "pick up" | "pickup" => Ok(Verb::PickUp),
            "grab" => Ok(Verb::Grab),
            "open" => Ok(Verb::Open),
            "break" => Ok(Verb::Break),
            "sit" | "sit on" => Ok(Verb::Sit),
            _ => Err(InstructionError::UnknownVerb(s.to_string())),
        }
    }
}

/// Maps a verb token to the participle used in critic prompts.
pub fn verb_to_adjective(verb: &str) -> Result<&'static str, InstructionError> {
    verb.parse::<Verb>().map(Verb::adjective)
}

/// A task command. `raw` is always the verb template applied to `object`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Instruction {
    verb: Verb,
    object: String,
    raw: String,
}

impl Instruction {
    pub fn new(verb: Verb, object: impl Into<String>) -> Result<Self, InstructionError> {
        let object = object.into().trim().to_string();
        if object.is_empty() {
            return Err(InstructionError::EmptyObject);
        }
        let raw = format!("{}{}", verb.surface_prefix(), object);
        Ok(Self { verb, object, raw })
    }

    /// Parses raw instruction text. Multi-word verbs are tried first.
    pub fn parse(text: &str) -> Result<Self, InstructionError> {
        let norm = text.trim().trim_end_matches('.').to_ascii_lowercase();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        // "pick up" and "sit on" must win over any single-word prefix.
        const ORDER: [Verb; 5] = [Verb::PickUp, Verb::Sit, Verb::Grab, Verb::Open, Verb::Break];
        for verb in ORDER {
            if let Some(rest) = norm.strip_prefix(verb.surface_prefix()) {
                return Self::new(verb, rest);
            }
        }
        Err(InstructionError::Unparseable(text.to_string()))
    }

    pub fn verb(&self) -> Verb {
        self.verb
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Instruction {
    type Err = InstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Instruction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Instruction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Instruction::parse(&text).map_err(serde::de::Error::custom)
    }
}
