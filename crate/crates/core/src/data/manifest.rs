//! Clip manifest: per-clip metadata and its JSON representation.
//!
//! A manifest is a JSON array of [`ClipRecord`]. Enum fields use fixed string
//! spellings (`"Ego"`, `"Female"`, `"MiddleAged"`, ...) so manifests written
//! by other tooling stay interchangeable.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera viewpoint of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    /// Head-mounted camera worn by the subject; the wearer is never in frame.
    Ego,
    /// Stationary third-person camera that sees the wearer.
    Exo,
}

impl View {
    /// Lowercase name used on the command line and in checkpoint roles.
    pub fn as_str(self) -> &'static str {
        match self {
            View::Ego => "ego",
            View::Exo => "exo",
        }
    }

    pub fn opposite(self) -> View {
        match self {
            View::Ego => View::Exo,
            View::Exo => View::Ego,
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(View::Ego),
            "exo" => Ok(View::Exo),
            other => Err(Error::InvalidInput(format!(
                "unknown view '{other}' (expected ego or exo)"
            ))),
        }
    }
}

/// Dataset partition. Identities never straddle the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Lowercase name used on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown split '{other}' (expected train or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    Asian,
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Age {
    Young,
    MiddleAged,
    Senior,
}

/// Demographic attribute a classifier or consistency metric can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Race,
    Age,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::Race, Attribute::Age];

    /// Class labels in canonical index order.
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Attribute::Gender => &["Female", "Male"],
            Attribute::Race => &["Asian", "Black", "White"],
            Attribute::Age => &["Young", "MiddleAged", "Senior"],
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Attribute::Gender => "gender",
            Attribute::Race => "race",
            Attribute::Age => "age",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Attribute::Gender),
            "race" => Ok(Attribute::Race),
            "age" => Ok(Attribute::Age),
            other => Err(Error::InvalidInput(format!(
                "unknown attribute '{other}' (expected gender, race, or age)"
            ))),
        }
    }
}

/// Metadata for one video clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    /// Unique id; also the key into the embedding tables.
    pub clip_id: String,
    pub view: View,
    /// Camera wearer this clip belongs to (also for Exo clips, which show the wearer).
    pub identity_id: String,
    /// Recording session. Ego/Exo clips of one take are time-synchronized.
    pub take_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<Race>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<Age>,
    pub split: Split,
    /// Number of frame embeddings stored for this clip. Always positive.
    pub frame_count: u32,
}

impl ClipRecord {
    /// Class index of `attribute` for this clip, if labeled.
    /// Indices follow [`Attribute::classes`].
    pub fn class_index(&self, attribute: Attribute) -> Option<usize> {
        match attribute {
            Attribute::Gender => self.gender.map(|g| g as usize),
            Attribute::Race => self.race.map(|r| r as usize),
            Attribute::Age => self.age.map(|a| a as usize),
        }
    }

    /// Class label string of `attribute` for this clip, if labeled.
    pub fn class_label(&self, attribute: Attribute) -> Option<&'static str> {
        self.class_index(attribute).map(|i| attribute.classes()[i])
    }
}

/// Read a manifest (JSON array of records) from disk.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let file = File::open(path)?;
    let clips: Vec<ClipRecord> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    Ok(clips)
}

/// Write a manifest as pretty-printed JSON. Field and record order is preserved.
pub fn write_manifest(path: &Path, clips: &[ClipRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, clips)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_clip() -> ClipRecord {
        ClipRecord {
            clip_id: "id0001_t00_ego".into(),
            view: View::Ego,
            identity_id: "id0001".into(),
            take_id: "id0001_t00".into(),
            scene_id: Some("scene3".into()),
            gender: Some(Gender::Female),
            race: None,
            age: Some(Age::MiddleAged),
            split: Split::Train,
            frame_count: 8,
        }
    }

    #[test]
    fn enum_spellings_are_pinned() {
        let json = serde_json::to_string(&sample_clip()).unwrap();
        assert!(json.contains("\"Ego\""));
        assert!(json.contains("\"Female\""));
        assert!(json.contains("\"MiddleAged\""));
        assert!(json.contains("\"Train\""));
        // Unlabeled attributes are omitted, not null.
        assert!(!json.contains("race"));
    }

    #[test]
    fn manifest_round_trips() {
        let clip = sample_clip();
        let json = serde_json::to_string(&vec![clip.clone()]).unwrap();
        let back: Vec<ClipRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![clip]);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let json = r#"[{"clip_id":"a","view":"Ego","identity_id":"i","take_id":"t",
            "gender":"Nonexistent","split":"Train","frame_count":1}]"#;
        let parsed: std::result::Result<Vec<ClipRecord>, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn class_indices_follow_canonical_order() {
        let clip = sample_clip();
        assert_eq!(clip.class_index(Attribute::Gender), Some(0));
        assert_eq!(clip.class_index(Attribute::Age), Some(1));
        assert_eq!(clip.class_index(Attribute::Race), None);
        assert_eq!(clip.class_label(Attribute::Age), Some("MiddleAged"));
    }

    #[test]
    fn attribute_classes_match_enum_discriminants() {
        assert_eq!(Gender::Male as usize, 1);
        assert_eq!(Race::White as usize, 2);
        assert_eq!(Age::Senior as usize, 2);
        assert_eq!(Attribute::Gender.classes()[1], "Male");
        assert_eq!(Attribute::Race.classes()[2], "White");
        assert_eq!(Attribute::Age.classes()[2], "Senior");
    }
}
