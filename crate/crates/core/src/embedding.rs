//! Network identifiers and the EMB1 embedding interchange format.
//!
//! An EMB1 file holds a single feature vector:
//!
//! ```text
//! "EMB1" | version u8 (0x01) | dim u32 LE | dim x f32 LE
//! ```
//!
//! The sample and the network are not stored in the payload; they are carried
//! by the file name `<sample_id>.<network>.emb`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DmadError, Result};

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u8 = 0x01;
pub const EMB1_EXTENSION: &str = "emb";

/// The six pre-trained backbones, in declaration order.
///
/// Declaration order matters: it fixes component order in fused scores and
/// breaks ties in pair selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkId {
    Alexnet,
    Vgg16,
    Vgg19,
    Resnet50,
    Resnet101,
    Xception,
}

impl NetworkId {
    pub const ALL: [NetworkId; 6] = [
        NetworkId::Alexnet,
        NetworkId::Vgg16,
        NetworkId::Vgg19,
        NetworkId::Resnet50,
        NetworkId::Resnet101,
        NetworkId::Xception,
    ];

    pub fn group(self) -> Group {
        match self {
            NetworkId::Alexnet | NetworkId::Vgg16 | NetworkId::Vgg19 => Group::G1,
            NetworkId::Resnet50 | NetworkId::Resnet101 | NetworkId::Xception => Group::G2,
        }
    }

    /// Position in [`NetworkId::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Position inside the network's group (0..3).
    pub fn index_in_group(self) -> usize {
        self.index() % 3
    }

    /// Feature dimension of the layer the backbone is tapped at (fc7 or the
    /// final pooling layer).
    pub fn expected_dim(self) -> usize {
        DimProfile::STANDARD.dim(self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkId::Alexnet => "alexnet",
            NetworkId::Vgg16 => "vgg16",
            NetworkId::Vgg19 => "vgg19",
            NetworkId::Resnet50 => "resnet50",
            NetworkId::Resnet101 => "resnet101",
            NetworkId::Xception => "xception",
        }
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetworkId {
    type Err = DmadError;

    fn from_str(s: &str) -> Result<Self> {
        NetworkId::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| DmadError::InvalidConfig(format!("unknown network {s:?}")))
    }
}

/// Networks sharing a feature dimension, and therefore eligible for SLERP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    G1,
    G2,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::G1, Group::G2];

    pub fn members(self) -> [NetworkId; 3] {
        match self {
            Group::G1 => [NetworkId::Alexnet, NetworkId::Vgg16, NetworkId::Vgg19],
            Group::G2 => [NetworkId::Resnet50, NetworkId::Resnet101, NetworkId::Xception],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::G1 => f.write_str("g1"),
            Group::G2 => f.write_str("g2"),
        }
    }
}

/// Per-group feature dimensions a dataset is expected to carry.
///
/// Real backbone exports use [`DimProfile::STANDARD`]; synthetic datasets may
/// shrink both groups to keep tests fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimProfile {
    pub g1: usize,
    pub g2: usize,
}

impl DimProfile {
    pub const STANDARD: DimProfile = DimProfile { g1: 4096, g2: 2048 };
    pub const SMALL: DimProfile = DimProfile { g1: 64, g2: 32 };

    pub fn dim(&self, network: NetworkId) -> usize {
        self.group_dim(network.group())
    }

    pub fn group_dim(&self, group: Group) -> usize {
        match group {
            Group::G1 => self.g1,
            Group::G2 => self.g2,
        }
    }
}

impl Default for DimProfile {
    fn default() -> Self {
        DimProfile::STANDARD
    }
}

/// One feature vector for one image under one network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub network: NetworkId,
    pub values: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(sample_id: impl Into<String>, network: NetworkId, values: Vec<f32>) -> Self {
        Self {
            sample_id: sample_id.into(),
            network,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self, dims: &DimProfile) -> Result<()> {
        validate_values(&self.values, dims.dim(self.network))
    }

    /// `<sample_id>.<network>.emb`
    pub fn file_name(&self) -> String {
        embedding_file_name(&self.sample_id, self.network)
    }
}

fn validate_values(values: &[f32], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(DmadError::DimensionMismatch {
            expected,
            actual: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(DmadError::NonFinite { index });
    }
    Ok(())
}

pub fn embedding_file_name(sample_id: &str, network: NetworkId) -> String {
    format!("{sample_id}.{network}.{EMB1_EXTENSION}")
}

/// Splits `<sample_id>.<network>.emb` back into its parts. Sample ids may
/// themselves contain dots.
pub fn parse_embedding_file_name(name: &str) -> Option<(String, NetworkId)> {
    let stem = name.strip_suffix(".emb")?;
    let (sample_id, network) = stem.rsplit_once('.')?;
    if sample_id.is_empty() {
        return None;
    }
    Some((sample_id.to_string(), network.parse().ok()?))
}

pub fn write_embedding<W: Write>(
    record: &EmbeddingRecord,
    dims: &DimProfile,
    mut sink: W,
) -> Result<()> {
    record.validate(dims)?;
    let dim = u32::try_from(record.dim()).map_err(|_| {
        DmadError::InvalidConfig(format!("dimension {} exceeds u32", record.dim()))
    })?;
    let mut buf = Vec::with_capacity(9 + 4 * record.dim());
    buf.extend_from_slice(&EMB1_MAGIC);
    buf.push(EMB1_VERSION);
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in &record.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_embedding<R: Read>(
    mut source: R,
    sample_id: &str,
    network: NetworkId,
    dims: &DimProfile,
) -> Result<EmbeddingRecord> {
    let mut header = [0u8; 9];
    read_prefix(&mut source, &mut header, 0)?;
    let magic: [u8; 4] = header[..4].try_into().expect("4-byte slice");
    if magic != EMB1_MAGIC {
        return Err(DmadError::BadMagic { found: magic });
    }
    if header[4] != EMB1_VERSION {
        return Err(DmadError::UnsupportedVersion(header[4]));
    }
    let declared = u32::from_le_bytes(header[5..9].try_into().expect("4-byte slice")) as usize;
    let expected = dims.dim(network);
    if declared != expected {
        return Err(DmadError::DimensionMismatch {
            expected,
            actual: declared,
        });
    }

    let mut body = vec![0u8; declared * 4];
    let filled = read_full(&mut source, &mut body)?;
    if filled < body.len() {
        return Err(DmadError::Truncated {
            declared,
            read: filled / 4,
        });
    }
    let mut extra = [0u8; 1];
    if read_full(&mut source, &mut extra)? != 0 {
        return Err(DmadError::TrailingBytes { declared });
    }

    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let record = EmbeddingRecord::new(sample_id, network, values);
    record.validate(dims)?;
    Ok(record)
}

fn read_prefix<R: Read>(source: &mut R, buf: &mut [u8], declared: usize) -> Result<()> {
    let n = read_full(source, buf)?;
    if n < 4 {
        // Too short to even carry a magic tag.
        let mut found = [0u8; 4];
        found[..n].copy_from_slice(&buf[..n]);
        if found != EMB1_MAGIC {
            return Err(DmadError::BadMagic { found });
        }
    }
    if n >= 4 && buf[..4] != EMB1_MAGIC {
        return Err(DmadError::BadMagic {
            found: buf[..4].try_into().expect("4-byte slice"),
        });
    }
    if n < buf.len() {
        return Err(DmadError::Truncated { declared, read: 0 });
    }
    Ok(())
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn write_embedding_file(dir: &Path, record: &EmbeddingRecord, dims: &DimProfile) -> Result<()> {
    let path = dir.join(record.file_name());
    let file = fs::File::create(&path).map_err(|e| DmadError::from(e).in_file(&path))?;
    write_embedding(record, dims, BufWriter::new(file)).map_err(|e| e.in_file(&path))
}

/// Reads `<dir>/<sample_id>.<network>.emb`. A missing file is reported as
/// [`DmadError::MissingEmbedding`].
pub fn read_embedding_file(
    dir: &Path,
    sample_id: &str,
    network: NetworkId,
    dims: &DimProfile,
) -> Result<EmbeddingRecord> {
    let path = dir.join(embedding_file_name(sample_id, network));
    let file = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(DmadError::MissingEmbedding {
                sample_id: sample_id.to_string(),
                network,
            })
        }
        Err(e) => return Err(DmadError::from(e).in_file(&path)),
    };
    read_embedding(BufReader::new(file), sample_id, network, dims).map_err(|e| e.in_file(&path))
}

/// All six network vectors of one image.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    vectors: [&'a [f32]; 6],
}

impl<'a> SampleView<'a> {
    pub fn new(vectors: [&'a [f32]; 6]) -> Self {
        Self { vectors }
    }

    pub fn get(&self, network: NetworkId) -> &'a [f32] {
        self.vectors[network.index()]
    }
}

/// In-memory embeddings keyed by sample id, with one slot per network.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    dims: DimProfile,
    samples: HashMap<String, [Option<Vec<f32>>; 6]>,
}

impl EmbeddingSet {
    pub fn new(dims: DimProfile) -> Self {
        Self {
            dims,
            samples: HashMap::new(),
        }
    }

    pub fn dims(&self) -> &DimProfile {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.samples.values().flatten().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<()> {
        record.validate(&self.dims)?;
        let slots = self.samples.entry(record.sample_id).or_default();
        slots[record.network.index()] = Some(record.values);
        Ok(())
    }

    pub fn get(&self, sample_id: &str, network: NetworkId) -> Option<&[f32]> {
        self.samples.get(sample_id)?[network.index()].as_deref()
    }

    pub fn require(&self, sample_id: &str, network: NetworkId) -> Result<&[f32]> {
        self.get(sample_id, network)
            .ok_or_else(|| DmadError::MissingEmbedding {
                sample_id: sample_id.to_string(),
                network,
            })
    }

    /// View over all six networks for `sample_id`; fails if any is absent.
    pub fn sample(&self, sample_id: &str) -> Result<SampleView<'_>> {
        let mut vectors: [&[f32]; 6] = [&[]; 6];
        for network in NetworkId::ALL {
            vectors[network.index()] = self.require(sample_id, network)?;
        }
        Ok(SampleView::new(vectors))
    }

    /// Iterates every stored record in sample-id then network order.
    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        let mut ids: Vec<&String> = self.samples.keys().collect();
        ids.sort();
        ids.into_iter().flat_map(move |id| {
            NetworkId::ALL.into_iter().filter_map(move |n| {
                self.get(id, n)
                    .map(|v| EmbeddingRecord::new(id.clone(), n, v.to_vec()))
            })
        })
    }
}
