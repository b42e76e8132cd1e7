//! Big Five trait vocabulary.

use std::fmt;

pub const NUM_TRAITS: usize = 5;

/// Five trait scores in the canonical order E, A, C, N, O.
pub type TraitVector = [f64; NUM_TRAITS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trait {
    Extraversion,
    Agreeableness,
    Conscientiousness,
    Neuroticism,
    Openness,
}

impl Trait {
    pub const ALL: [Trait; NUM_TRAITS] = [
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Conscientiousness,
        Trait::Neuroticism,
        Trait::Openness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> &'static str {
        match self {
            Trait::Extraversion => "E",
            Trait::Agreeableness => "A",
            Trait::Conscientiousness => "C",
            Trait::Neuroticism => "N",
            Trait::Openness => "O",
        }
    }

    pub fn from_letter(s: &str) -> Option<Trait> {
        Trait::ALL.into_iter().find(|t| t.letter() == s)
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

/// The three input modalities, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Text,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Video];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Video => "video",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
