//! Dataset manifest, its validation rules, and document/probe pairing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::DimProfile;
use crate::error::{DmadError, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const CAMERAS: std::ops::RangeInclusive<u8> = 1..=5;
pub const DISTANCES: std::ops::RangeInclusive<u8> = 1..=3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Enrolment image, e.g. the passport portrait.
    Document,
    /// Trusted live capture at the gate.
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Morph,
}

impl Label {
    /// Classifier target: morph is the positive class.
    pub fn sign(self) -> f64 {
        match self {
            Label::Morph => 1.0,
            Label::Bonafide => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Morph => "morph",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = DmadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "morph" => Ok(Label::Morph),
            other => Err(DmadError::InvalidConfig(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Digital,
    Printscan,
}

impl Medium {
    pub const ALL: [Medium; 2] = [Medium::Digital, Medium::Printscan];

    pub fn as_str(self) -> &'static str {
        match self {
            Medium::Digital => "digital",
            Medium::Printscan => "printscan",
        }
    }
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub subject_id: String,
    pub role: Role,
    pub label: Label,
    pub medium: Medium,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<u8>,
    pub split: Split,
    /// Subjects blended into a morph document. Present iff `label` is morph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contributors: Option<Vec<String>>,
}

impl SampleEntry {
    pub fn is_document(&self) -> bool {
        self.role == Role::Document
    }

    pub fn is_probe(&self) -> bool {
        self.role == Role::Probe
    }

    /// Whether a probe of `subject` is a legitimate comparison for this
    /// document: the enrolled subject for bona fide documents, any
    /// contributor for morphs.
    pub fn accepts_subject(&self, subject: &str) -> bool {
        match self.label {
            Label::Bonafide => self.subject_id == subject,
            Label::Morph => self
                .contributors
                .as_ref()
                .is_some_and(|c| c.iter().any(|s| s == subject)),
        }
    }

    fn check(&self) -> Result<()> {
        let id = &self.sample_id;
        let bad = |msg: String| Err(DmadError::InvalidManifest(format!("{id}: {msg}")));
        if id.is_empty() {
            return Err(DmadError::InvalidManifest("empty sample_id".into()));
        }
        if id.contains(['/', '\\']) {
            return bad("sample_id must not contain path separators".into());
        }
        if self.subject_id.is_empty() {
            return bad("empty subject_id".into());
        }
        match self.role {
            Role::Document => {
                if self.camera.is_some() || self.distance.is_some() {
                    return bad("documents carry no camera/distance".into());
                }
            }
            Role::Probe => {
                match self.camera {
                    None => return bad("probe without camera".into()),
                    Some(c) if !CAMERAS.contains(&c) => {
                        return bad(format!("camera {c} outside 1..=5"))
                    }
                    _ => {}
                }
                match self.distance {
                    None => return bad("probe without distance".into()),
                    Some(d) if !DISTANCES.contains(&d) => {
                        return bad(format!("distance {d} outside 1..=3"))
                    }
                    _ => {}
                }
                if self.label != Label::Bonafide {
                    return bad("probes must be bona fide".into());
                }
            }
        }
        match (self.label, &self.contributors) {
            (Label::Bonafide, Some(_)) => bad("contributors on a bona fide entry".into()),
            (Label::Morph, None) => bad("morph without contributors".into()),
            (Label::Morph, Some(c)) => {
                let distinct: HashSet<&String> = c.iter().collect();
                if distinct.len() < 2 || distinct.len() != c.len() {
                    bad("morph needs at least two distinct contributors".into())
                } else {
                    Ok(())
                }
            }
            (Label::Bonafide, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Provenance tag written by the synthetic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Feature dimensions per group; absent means the standard 4096/2048.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dims: Option<DimProfile>,
    pub entries: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<SampleEntry>) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            generator: None,
            feature_dims: None,
            entries,
        }
    }

    pub fn dims(&self) -> DimProfile {
        self.feature_dims.unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn entry(&self, sample_id: &str) -> Option<&SampleEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    /// Checks every manifest invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(DmadError::InvalidManifest(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if let Some(d) = self.feature_dims {
            if d.g1 == 0 || d.g2 == 0 {
                return Err(DmadError::InvalidManifest("feature_dims must be positive".into()));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(DmadError::DuplicateSampleId(e.sample_id.clone()));
            }
            e.check()?;
        }
        let enrolled: HashSet<(Split, &str)> = self
            .entries
            .iter()
            .filter(|e| e.is_document() && e.label == Label::Bonafide)
            .map(|e| (e.split, e.subject_id.as_str()))
            .collect();
        for e in self.entries.iter().filter(|e| e.is_probe()) {
            if !enrolled.contains(&(e.split, e.subject_id.as_str())) {
                return Err(DmadError::InvalidManifest(format!(
                    "{}: subject {:?} has probes but no document in the {} split",
                    e.sample_id, e.subject_id, e.split
                )));
            }
        }
        Ok(())
    }

    /// Probe counts per (split, camera, distance).
    pub fn probe_cells(&self) -> BTreeMap<(Split, u8, u8), usize> {
        let mut cells = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.is_probe()) {
            if let (Some(c), Some(d)) = (e.camera, e.distance) {
                *cells.entry((e.split, c, d)).or_insert(0) += 1;
            }
        }
        cells
    }

    pub fn document_media(&self) -> BTreeSet<(Split, Medium)> {
        self.entries
            .iter()
            .filter(|e| e.is_document())
            .map(|e| (e.split, e.medium))
            .collect()
    }
}

/// Attribute predicate for pair construction.
///
/// `medium` constrains the document side: probes are always native camera
/// captures, so inter-medium experiments differ only in which document
/// rendition is compared. `camera` and `distance` constrain the probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairFilter {
    pub medium: Option<Medium>,
    pub camera: Option<u8>,
    pub distance: Option<u8>,
}

impl PairFilter {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn cell(medium: Option<Medium>, camera: u8, distance: u8) -> Self {
        Self {
            medium,
            camera: Some(camera),
            distance: Some(distance),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.camera {
            if !CAMERAS.contains(&c) {
                return Err(DmadError::InvalidFilter(format!("camera {c} outside 1..=5")));
            }
        }
        if let Some(d) = self.distance {
            if !DISTANCES.contains(&d) {
                return Err(DmadError::InvalidFilter(format!("distance {d} outside 1..=3")));
            }
        }
        Ok(())
    }

    fn accepts_document(&self, e: &SampleEntry) -> bool {
        self.medium.is_none_or(|m| m == e.medium)
    }

    fn accepts_probe(&self, e: &SampleEntry) -> bool {
        self.camera.is_none_or(|c| e.camera == Some(c))
            && self.distance.is_none_or(|d| e.distance == Some(d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvaluationPair {
    pub document_id: String,
    pub probe_id: String,
    /// Label of the document.
    pub label: Label,
}

/// Every subject-consistent (document, probe) pair of `split` admitted by
/// `filter`, sorted by document id then probe id.
pub fn build_pairs(
    manifest: &DatasetManifest,
    split: Split,
    filter: &PairFilter,
) -> Result<Vec<EvaluationPair>> {
    filter.validate()?;
    let documents: Vec<&SampleEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.split == split && e.is_document() && filter.accepts_document(e))
        .collect();
    let probes: Vec<&SampleEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.split == split && e.is_probe() && filter.accepts_probe(e))
        .collect();

    let mut pairs = Vec::new();
    for doc in &documents {
        for probe in probes.iter().filter(|p| doc.accepts_subject(&p.subject_id)) {
            pairs.push(EvaluationPair {
                document_id: doc.sample_id.clone(),
                probe_id: probe.sample_id.clone(),
                label: doc.label,
            });
        }
    }
    pairs.sort();
    Ok(pairs)
}
