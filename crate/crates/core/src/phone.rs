//! Phone symbols and their place/manner attributes.

use std::fmt;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Place {
    Labial,
    Coronal,
    Dorsal,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Manner {
    Stop,
    Fricative,
    Vowel,
    Other,
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Place::Labial => "labial",
            Place::Coronal => "coronal",
            Place::Dorsal => "dorsal",
            Place::None => "none",
        })
    }
}

impl fmt::Display for Manner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Manner::Stop => "stop",
            Manner::Fricative => "fricative",
            Manner::Vowel => "vowel",
            Manner::Other => "other",
        })
    }
}

impl Place {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "labial" => Some(Place::Labial),
            "coronal" => Some(Place::Coronal),
            "dorsal" => Some(Place::Dorsal),
            "none" => Some(Place::None),
            _ => None,
        }
    }
}

impl Manner {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stop" => Some(Manner::Stop),
            "fricative" => Some(Manner::Fricative),
            "vowel" => Some(Manner::Vowel),
            "other" => Some(Manner::Other),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phone {
    pub label: String,
    pub place: Place,
    pub manner: Manner,
}

impl Phone {
    pub fn new(label: &str, place: Place, manner: Manner) -> Self {
        Self {
            label: label.to_string(),
            place,
            manner,
        }
    }

    pub fn is_vowel(&self) -> bool {
        self.manner == Manner::Vowel
    }
}

/// Lookup from label to attributes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhoneInventory {
    phones: Vec<Phone>,
}

impl Default for PhoneInventory {
    /// Vowels a, i, u and the six consonants of the synthetic corpus:
    /// p/f labial, t/s coronal, k/x dorsal (stop/fricative).
    fn default() -> Self {
        use Manner::*;
        use Place::*;
        Self {
            phones: vec![
                Phone::new("a", None, Vowel),
                Phone::new("i", None, Vowel),
                Phone::new("u", None, Vowel),
                Phone::new("p", Labial, Stop),
                Phone::new("f", Labial, Fricative),
                Phone::new("t", Coronal, Stop),
                Phone::new("s", Coronal, Fricative),
                Phone::new("k", Dorsal, Stop),
                Phone::new("x", Dorsal, Fricative),
            ],
        }
    }
}

impl PhoneInventory {
    pub fn new(phones: Vec<Phone>) -> Result<Self> {
        for (i, p) in phones.iter().enumerate() {
            if phones[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::Config(format!("duplicate phone {}", p.label)));
            }
        }
        Ok(Self { phones })
    }

    pub fn get(&self, label: &str) -> Option<&Phone> {
        self.phones.iter().find(|p| p.label == label)
    }

    pub fn phones(&self) -> &[Phone] {
        &self.phones
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    /// Parse `label<TAB>place<TAB>manner` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut phones = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::Parse { line: i + 1, message: m };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(format!("expected label, place, manner; got {} fields", f.len())));
            }
            let place = Place::parse(f[1]).ok_or_else(|| err(format!("unknown place {:?}", f[1])))?;
            let manner = Manner::parse(f[2]).ok_or_else(|| err(format!("unknown manner {:?}", f[2])))?;
            phones.push(Phone::new(f[0], place, manner));
        }
        Self::new(phones)
    }
}
