//! Synthetic hypersphere embeddings laid out like a border-control morph
//! dataset: mugshot documents in digital and print-scan renditions, morphs
//! of subject pairs, and probes from five cameras at three distances.
//!
//! Identities are random non-negative unit vectors, one per subject and
//! backbone, mimicking post-ReLU activations. A morph is the spherical
//! midpoint of its two contributors. Probe noise grows with capture distance
//! and with lower camera resolution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embedding::{DimProfile, EmbeddingRecord, EmbeddingSet, NetworkId};
use crate::error::{DmadError, Result};
use crate::fusion::{slerp, SlerpConfig};
use crate::manifest::{DatasetManifest, Label, Medium, Role, SampleEntry, Split, CAMERAS, DISTANCES};

pub const GENERATOR_NAME: &str = "dmad-synth";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphBlend {
    /// Normalised great-circle midpoint of the contributors.
    #[default]
    Spherical,
    /// Normalised arithmetic mean of the contributors.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects_train: usize,
    pub n_subjects_test: usize,
    pub n_morphs_train: usize,
    pub n_morphs_test: usize,
    pub dims: DimProfile,
    /// Noise on document images (and morphs) around the identity. Noise
    /// levels are norms: each component gets `sigma / sqrt(dim)`.
    pub document_noise: f64,
    /// Base probe noise, multiplied by the camera and distance factors.
    pub probe_noise: f64,
    /// Per distance D1 (farthest) .. D3.
    pub distance_factors: [f64; 3],
    /// Per camera 1..5.
    pub camera_factors: [f64; 5],
    /// Weight of the fixed permutation mixed into print-scan renditions.
    pub printscan_mix: f64,
    pub printscan_noise: f64,
    pub morph_blend: MorphBlend,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects_train: 56,
            n_subjects_test: 21,
            n_morphs_train: 92,
            n_morphs_test: 28,
            dims: DimProfile::STANDARD,
            document_noise: 0.05,
            probe_noise: 0.1,
            distance_factors: [2.0, 1.5, 1.0],
            // Inverse resolution relative to the sharpest camera
            // (540, 480, 350, 460 and 480 TV lines).
            camera_factors: [1.0, 540.0 / 480.0, 540.0 / 350.0, 540.0 / 460.0, 540.0 / 480.0],
            printscan_mix: 0.15,
            printscan_noise: 0.02,
            morph_blend: MorphBlend::Spherical,
        }
    }
}

impl SynthConfig {
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            dims: DimProfile::SMALL,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DmadError::InvalidConfig(m));
        let sigmas = [self.document_noise, self.probe_noise, self.printscan_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise levels must be finite and non-negative".into());
        }
        let factors = self.distance_factors.iter().chain(&self.camera_factors);
        if factors.clone().any(|f| !(*f > 0.0 && f.is_finite())) {
            return bad("camera and distance factors must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.printscan_mix) {
            return bad("printscan_mix must lie in [0, 1]".into());
        }
        if self.dims.g1 < 2 || self.dims.g2 < 2 {
            return bad("feature dimensions must be at least 2".into());
        }
        for (subjects, morphs, split) in [
            (self.n_subjects_train, self.n_morphs_train, Split::Train),
            (self.n_subjects_test, self.n_morphs_test, Split::Test),
        ] {
            if morphs > 0 && subjects < 2 {
                return bad(format!("{split} split needs at least 2 subjects to build morphs"));
            }
            let possible = subjects * subjects.saturating_sub(1) / 2;
            if morphs > possible {
                return bad(format!(
                    "{split} split: {morphs} morphs requested but only {possible} subject pairs exist"
                ));
            }
        }
        Ok(())
    }
}

struct Generator {
    config: SynthConfig,
    rng: ChaCha8Rng,
    /// Fixed print-scan permutation per network.
    permutations: Vec<Vec<usize>>,
}

type Features = [Vec<f64>; 6];

impl Generator {
    fn new(config: SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let permutations = NetworkId::ALL
            .iter()
            .map(|&n| {
                let mut p: Vec<usize> = (0..config.dims.dim(n)).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        Self {
            config,
            rng,
            permutations,
        }
    }

    fn identity(&mut self) -> Features {
        NetworkId::ALL.map(|n| {
            let v: Vec<f64> = (0..self.config.dims.dim(n))
                .map(|_| self.rng.sample::<f64, _>(StandardNormal).abs())
                .collect();
            normalize(v)
        })
    }

    fn perturb(&mut self, base: &Features, sigma: f64) -> Features {
        std::array::from_fn(|i| {
            let v = &base[i];
            let scale = sigma / (v.len() as f64).sqrt();
            let noisy = v
                .iter()
                .map(|x| x + scale * self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            normalize(noisy)
        })
    }

    fn print_scan(&mut self, digital: &Features) -> Features {
        let alpha = self.config.printscan_mix;
        let mixed: Features = std::array::from_fn(|i| {
            let v = &digital[i];
            let p = &self.permutations[i];
            (0..v.len()).map(|k| (1.0 - alpha) * v[k] + alpha * v[p[k]]).collect()
        });
        self.perturb(&mixed, self.config.printscan_noise)
    }

    fn blend(&self, a: &Features, b: &Features) -> Result<Features> {
        let mut out: Features = Default::default();
        for i in 0..6 {
            out[i] = match self.config.morph_blend {
                MorphBlend::Spherical => slerp(&a[i], &b[i], &SlerpConfig::default())?,
                MorphBlend::Linear => a[i].iter().zip(&b[i]).map(|(x, y)| 0.5 * (x + y)).collect(),
            };
        }
        Ok(out)
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

struct Builder {
    entries: Vec<SampleEntry>,
    embeddings: EmbeddingSet,
}

impl Builder {
    fn add(&mut self, entry: SampleEntry, features: &Features) -> Result<()> {
        for n in NetworkId::ALL {
            let values = features[n.index()].iter().map(|&x| x as f32).collect();
            self.embeddings
                .insert(EmbeddingRecord::new(entry.sample_id.clone(), n, values))?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

fn document(sample_id: String, subject_id: String, medium: Medium, split: Split) -> SampleEntry {
    SampleEntry {
        sample_id,
        subject_id,
        role: Role::Document,
        label: Label::Bonafide,
        medium,
        camera: None,
        distance: None,
        split,
        contributors: None,
    }
}

/// Generates a dataset whose counts follow `config` exactly; identical
/// configs give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut g = Generator::new(config.clone());
    let mut out = Builder {
        entries: Vec::new(),
        embeddings: EmbeddingSet::new(config.dims),
    };

    for (split, n_subjects, n_morphs) in [
        (Split::Train, config.n_subjects_train, config.n_morphs_train),
        (Split::Test, config.n_subjects_test, config.n_morphs_test),
    ] {
        let subject_id = |s: usize| format!("{split}-s{s:03}");
        let identities: Vec<Features> = (0..n_subjects).map(|_| g.identity()).collect();

        for (s, id) in identities.iter().enumerate() {
            let digital = g.perturb(id, config.document_noise);
            let printed = g.print_scan(&digital);
            for (medium, features) in [(Medium::Digital, &digital), (Medium::Printscan, &printed)] {
                let entry = document(format!("{}-doc-{medium}", subject_id(s)), subject_id(s), medium, split);
                out.add(entry, features)?;
            }
        }

        let mut candidates: Vec<(usize, usize)> = (0..n_subjects)
            .flat_map(|a| (a + 1..n_subjects).map(move |b| (a, b)))
            .collect();
        candidates.shuffle(&mut g.rng);
        for (m, &(a, b)) in candidates.iter().take(n_morphs).enumerate() {
            let blended = g.blend(&identities[a], &identities[b])?;
            let digital = g.perturb(&blended, config.document_noise);
            let printed = g.print_scan(&digital);
            let contributors = vec![subject_id(a), subject_id(b)];
            for (medium, features) in [(Medium::Digital, &digital), (Medium::Printscan, &printed)] {
                let entry = SampleEntry {
                    label: Label::Morph,
                    contributors: Some(contributors.clone()),
                    ..document(
                        format!("{split}-m{m:03}-doc-{medium}"),
                        contributors.join("+"),
                        medium,
                        split,
                    )
                };
                out.add(entry, features)?;
            }
        }

        for (s, id) in identities.iter().enumerate() {
            for distance in DISTANCES {
                for camera in CAMERAS {
                    let sigma = config.probe_noise
                        * config.camera_factors[usize::from(camera) - 1]
                        * config.distance_factors[usize::from(distance) - 1];
                    let features = g.perturb(id, sigma);
                    let entry = SampleEntry {
                        role: Role::Probe,
                        camera: Some(camera),
                        distance: Some(distance),
                        ..document(
                            format!("{}-c{camera}-d{distance}", subject_id(s)),
                            subject_id(s),
                            Medium::Digital,
                            split,
                        )
                    };
                    out.add(entry, &features)?;
                }
            }
        }
    }

    let mut manifest = DatasetManifest::new(out.entries);
    manifest.generator = Some(format!("{GENERATOR_NAME} seed={}", config.seed));
    manifest.feature_dims = Some(config.dims);
    manifest.validate()?;
    Ok(Dataset {
        manifest,
        embeddings: out.embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{build_pairs, PairFilter};

    fn tiny(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects_train: 6,
            n_subjects_test: 4,
            n_morphs_train: 5,
            n_morphs_test: 3,
            dims: DimProfile { g1: 16, g2: 8 },
            ..SynthConfig::small(seed)
        }
    }

    #[test]
    fn counts_follow_config() {
        let cfg = tiny(1);
        let ds = generate(&cfg).unwrap();
        let m = &ds.manifest;
        let count = |split: Split, role: Role, label: Label| {
            m.entries
                .iter()
                .filter(|e| e.split == split && e.role == role && e.label == label)
                .count()
        };
        assert_eq!(count(Split::Train, Role::Probe, Label::Bonafide), 6 * 15);
        assert_eq!(count(Split::Test, Role::Probe, Label::Bonafide), 4 * 15);
        assert_eq!(count(Split::Train, Role::Document, Label::Bonafide), 6 * 2);
        assert_eq!(count(Split::Train, Role::Document, Label::Morph), 5 * 2);
        assert_eq!(count(Split::Test, Role::Document, Label::Morph), 3 * 2);
        assert_eq!(ds.embeddings.len(), m.entries.len() * 6);
        assert!(m.generator.as_deref().unwrap().starts_with("dmad-synth"));
    }

    #[test]
    fn deterministic_by_seed() {
        let a = generate(&tiny(9)).unwrap();
        let b = generate(&tiny(9)).unwrap();
        let c = generate(&tiny(10)).unwrap();
        assert_eq!(a.manifest, b.manifest);
        let ra: Vec<_> = a.embeddings.records().collect();
        let rb: Vec<_> = b.embeddings.records().collect();
        let rc: Vec<_> = c.embeddings.records().collect();
        assert_eq!(ra, rb);
        assert_ne!(ra, rc);
    }

    #[test]
    fn vectors_are_unit_norm() {
        let ds = generate(&tiny(2)).unwrap();
        for r in ds.embeddings.records() {
            let norm = r.values.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{} {}: {norm}", r.sample_id, r.network);
        }
    }

    #[test]
    fn noiseless_bonafide_pairs_have_zero_residual() {
        let cfg = SynthConfig {
            document_noise: 0.0,
            probe_noise: 0.0,
            ..tiny(4)
        };
        let ds = generate(&cfg).unwrap();
        let filter = PairFilter { medium: Some(Medium::Digital), ..PairFilter::any() };
        let pairs = build_pairs(&ds.manifest, Split::Train, &filter).unwrap();
        let mut checked = 0;
        for p in pairs.iter().filter(|p| p.label == Label::Bonafide) {
            for n in NetworkId::ALL {
                let d = ds.embeddings.get(&p.document_id, n).unwrap();
                let q = ds.embeddings.get(&p.probe_id, n).unwrap();
                assert_eq!(d, q);
            }
            checked += 1;
        }
        assert_eq!(checked, 6 * 15);
    }

    #[test]
    fn noiseless_morph_is_equidistant_from_contributors() {
        let cfg = SynthConfig {
            document_noise: 0.0,
            ..tiny(5)
        };
        let ds = generate(&cfg).unwrap();
        let angle = |a: &[f32], b: &[f32]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
            d.clamp(-1.0, 1.0).acos()
        };
        let morphs: Vec<_> = ds
            .manifest
            .entries
            .iter()
            .filter(|e| e.label == Label::Morph && e.medium == Medium::Digital)
            .collect();
        assert_eq!(morphs.len(), 5 + 3);
        for m in morphs {
            let c = m.contributors.as_ref().unwrap();
            for n in NetworkId::ALL {
                let v = ds.embeddings.get(&m.sample_id, n).unwrap();
                let a = ds.embeddings.get(&format!("{}-doc-digital", c[0]), n).unwrap();
                let b = ds.embeddings.get(&format!("{}-doc-digital", c[1]), n).unwrap();
                let (ta, tb) = (angle(v, a), angle(v, b));
                assert!((ta - tb).abs() < 1e-5, "{} {n}: {ta} vs {tb}", m.sample_id);
                assert!((ta + tb - angle(a, b)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_impossible_configs() {
        let cfg = SynthConfig { n_subjects_train: 1, ..tiny(0) };
        assert!(matches!(generate(&cfg), Err(DmadError::InvalidConfig(_))));
        let cfg = SynthConfig { n_morphs_test: 7, ..tiny(0) };
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig { probe_noise: -1.0, ..tiny(0) };
        assert!(generate(&cfg).is_err());
    }
}
