//! Eight-classifier training and sum-rule score fusion.
//!
//! Components, in fused order: one SVM per backbone on its residual
//! (alexnet, vgg16, vgg19, resnet50, resnet101, xception), then one SVM per
//! group on the SLERP residue (G1, G2).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{svm_score, train_linear_svm, LinearModel, TrainConfig};
use crate::embedding::{DimProfile, EmbeddingSet, Group, NetworkId, SampleView};
use crate::error::{DmadError, Result};
use crate::fusion::{
    residue_lenient, select_optimal_pairs, selected_residuals, DifferenceFeature, GroupSelection, PairScheme,
    SlerpConfig, SlerpInput,
};
use crate::manifest::{build_pairs, DatasetManifest, EvaluationPair, Label, PairFilter, Split};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const COMPONENTS: usize = 8;
pub const COMPONENT_NAMES: [&str; COMPONENTS] = [
    "alexnet",
    "vgg16",
    "vgg19",
    "resnet50",
    "resnet101",
    "xception",
    "slerp_residue_1",
    "slerp_residue_2",
];

/// Index of a group's residue score among the fused components.
pub fn residue_component(group: Group) -> usize {
    6 + group.index()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub slerp: SlerpConfig,
    pub pair_scheme: PairScheme,
    /// z-normalise each component with its training-score statistics before
    /// summing.
    pub normalize_scores: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            slerp: SlerpConfig::default(),
            pair_scheme: PairScheme::Proposed,
            normalize_scores: false,
        }
    }
}

impl PipelineConfig {
    /// Seed for component `j`; each classifier gets its own shuffle stream.
    pub fn component_seed(&self, component: usize) -> u64 {
        self.train.seed.wrapping_add(component as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmadModel {
    pub format_version: u32,
    pub feature_dims: DimProfile,
    pub network_models: BTreeMap<NetworkId, LinearModel>,
    /// Correlation-selected anchors, before any pair-scheme rotation.
    pub selected_pairs: BTreeMap<Group, GroupSelection>,
    /// Selections the residue classifiers were trained with.
    pub group_selections: BTreeMap<Group, GroupSelection>,
    pub residue_models: BTreeMap<Group, LinearModel>,
    pub slerp_config: SlerpConfig,
    pub pair_scheme: PairScheme,
    pub train_config: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_normalization: Option<Vec<ScoreStats>>,
}

impl DmadModel {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(DmadError::InvalidConfig(format!(
                "unsupported model format_version {}",
                self.format_version
            )));
        }
        for network in NetworkId::ALL {
            let m = self.network_models.get(&network).ok_or_else(|| {
                DmadError::InvalidConfig(format!("model lacks the {network} classifier"))
            })?;
            m.validate()?;
            check_dim(self.feature_dims.dim(network), m.feature_dim)?;
        }
        for group in Group::ALL {
            let m = self.residue_models.get(&group).ok_or_else(|| {
                DmadError::InvalidConfig(format!("model lacks the {group} residue classifier"))
            })?;
            m.validate()?;
            check_dim(self.feature_dims.group_dim(group), m.feature_dim)?;
            for map in [&self.group_selections, &self.selected_pairs] {
                let sel = map.get(&group).ok_or_else(|| {
                    DmadError::InvalidConfig(format!("model lacks the {group} pair selection"))
                })?;
                sel.validate()?;
                if sel.group != group {
                    return Err(DmadError::GroupMismatch(format!("{group} keyed selection for {}", sel.group)));
                }
            }
        }
        self.slerp_config.validate()?;
        if let Some(stats) = &self.score_normalization {
            if stats.len() != COMPONENTS || stats.iter().any(|s| s.std.is_nan() || s.std <= 0.0) {
                return Err(DmadError::InvalidConfig("malformed score normalisation".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: DmadModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    fn component_models(&self) -> [&LinearModel; COMPONENTS] {
        let net = |n: NetworkId| &self.network_models[&n];
        [
            net(NetworkId::Alexnet),
            net(NetworkId::Vgg16),
            net(NetworkId::Vgg19),
            net(NetworkId::Resnet50),
            net(NetworkId::Resnet101),
            net(NetworkId::Xception),
            &self.residue_models[&Group::G1],
            &self.residue_models[&Group::G2],
        ]
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(DmadError::DimensionMismatch { expected, actual })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScore {
    pub components: [f64; COMPONENTS],
    pub total: f64,
}

impl FusedScore {
    pub fn from_components(components: [f64; COMPONENTS]) -> Self {
        let mut total = 0.0;
        for s in components {
            total += s;
        }
        Self { components, total }
    }

    /// Left-to-right sum of the selected components.
    pub fn subset_sum(&self, selected: &[usize]) -> f64 {
        let mut total = 0.0;
        for &j in selected {
            total += self.components[j];
        }
        total
    }
}

/// Residuals of every training pair, computed once and reused by every
/// classifier stage.
#[derive(Debug, Clone)]
pub struct PreparedPairs<'a> {
    pairs: Vec<EvaluationPair>,
    embeddings: &'a EmbeddingSet,
    labels: Vec<Label>,
    /// `residuals[network][pair]`
    residuals: Vec<Vec<Vec<f64>>>,
}

impl<'a> PreparedPairs<'a> {
    pub fn new(pairs: Vec<EvaluationPair>, embeddings: &'a EmbeddingSet) -> Result<Self> {
        if pairs.is_empty() {
            return Err(DmadError::Empty("no training pairs".into()));
        }
        let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
        let morphs = labels.iter().filter(|&&l| l == Label::Morph).count();
        if morphs == 0 || morphs == labels.len() {
            let only = if morphs == 0 { Label::Bonafide } else { Label::Morph };
            return Err(DmadError::SingleClass(format!(
                "all {} training pairs are {only}",
                labels.len()
            )));
        }
        let per_pair = pairs
            .par_iter()
            .map(|p| pair_residuals(embeddings.sample(&p.document_id)?, embeddings.sample(&p.probe_id)?))
            .collect::<Result<Vec<_>>>()?;
        let mut residuals: Vec<Vec<Vec<f64>>> = (0..6).map(|_| Vec::with_capacity(pairs.len())).collect();
        for dfs in per_pair {
            for df in dfs {
                residuals[df.network.index()].push(df.values);
            }
        }
        Ok(Self {
            pairs,
            embeddings,
            labels,
            residuals,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn residuals(&self, network: NetworkId) -> &[Vec<f64>] {
        &self.residuals[network.index()]
    }

    pub fn select(&self, group: Group) -> Result<GroupSelection> {
        let [a, b, c] = group.members();
        select_optimal_pairs(group, [self.residuals(a), self.residuals(b), self.residuals(c)])
    }

    fn pair_dfs(&self, i: usize) -> Vec<DifferenceFeature> {
        NetworkId::ALL
            .into_iter()
            .map(|n| DifferenceFeature {
                network: n,
                values: self.residuals[n.index()][i].clone(),
            })
            .collect()
    }

    pub fn residues(&self, selection: &GroupSelection, slerp: &SlerpConfig) -> Result<Vec<Vec<f64>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let p = &self.pairs[i];
                group_residue(
                    selection,
                    slerp,
                    &self.pair_dfs(i),
                    self.embeddings.sample(&p.document_id)?,
                    self.embeddings.sample(&p.probe_id)?,
                )
            })
            .collect()
    }
}

fn pair_residuals(doc: SampleView<'_>, probe: SampleView<'_>) -> Result<Vec<DifferenceFeature>> {
    NetworkId::ALL
        .into_iter()
        .map(|n| DifferenceFeature::compute(n, doc.get(n), probe.get(n)))
        .collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn group_residue(
    selection: &GroupSelection,
    slerp: &SlerpConfig,
    dfs: &[DifferenceFeature],
    doc: SampleView<'_>,
    probe: SampleView<'_>,
) -> Result<Vec<f64>> {
    match slerp.input {
        SlerpInput::Residuals => {
            let [anchor, a, b] = selected_residuals(dfs, selection)?;
            residue_lenient(anchor, a, b, slerp)
        }
        SlerpInput::Features => {
            let side = |view: SampleView<'_>| {
                residue_lenient(
                    &to_f64(view.get(selection.anchor)),
                    &to_f64(view.get(selection.partner_a)),
                    &to_f64(view.get(selection.partner_b)),
                    slerp,
                )
            };
            let d = side(doc)?;
            let p = side(probe)?;
            Ok(d.iter().zip(&p).map(|(x, y)| x - y).collect())
        }
    }
}

/// Builds the training pairs of `train_filter` and fits a full model.
pub fn train_dmad(
    manifest: &DatasetManifest,
    embeddings: &EmbeddingSet,
    train_filter: &PairFilter,
    config: &PipelineConfig,
) -> Result<DmadModel> {
    let pairs = build_pairs(manifest, Split::Train, train_filter)?;
    let prepared = PreparedPairs::new(pairs, embeddings)?;
    train_prepared(&prepared, config)
}

pub fn train_prepared(prepared: &PreparedPairs<'_>, config: &PipelineConfig) -> Result<DmadModel> {
    config.train.validate()?;
    config.slerp.validate()?;
    let labels = prepared.labels();

    let mut network_models = BTreeMap::new();
    for network in NetworkId::ALL {
        let cfg = config.train.with_seed(config.component_seed(network.index()));
        let model = train_linear_svm(prepared.residuals(network), labels, &cfg)?;
        network_models.insert(network, model);
    }

    let mut selected_pairs = BTreeMap::new();
    for group in Group::ALL {
        selected_pairs.insert(group, prepared.select(group)?);
    }

    let mut model = DmadModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_dims: *prepared.embeddings.dims(),
        network_models,
        selected_pairs,
        group_selections: BTreeMap::new(),
        residue_models: BTreeMap::new(),
        slerp_config: config.slerp,
        pair_scheme: config.pair_scheme,
        train_config: config.train.clone(),
        seeds: (0..COMPONENTS).map(|j| config.component_seed(j)).collect(),
        score_normalization: None,
    };
    fit_residue_stage(&mut model, prepared, config)?;
    Ok(model)
}

/// Copy of `model` whose residue classifiers use `scheme` instead. The six
/// backbone classifiers and the correlation-selected anchors are reused.
pub fn retrain_with_scheme(
    model: &DmadModel,
    prepared: &PreparedPairs<'_>,
    scheme: PairScheme,
    normalize_scores: bool,
) -> Result<DmadModel> {
    let config = PipelineConfig {
        train: model.train_config.clone(),
        slerp: model.slerp_config,
        pair_scheme: scheme,
        normalize_scores,
    };
    let mut out = model.clone();
    out.pair_scheme = scheme;
    out.score_normalization = None;
    fit_residue_stage(&mut out, prepared, &config)?;
    Ok(out)
}

fn fit_residue_stage(model: &mut DmadModel, prepared: &PreparedPairs<'_>, config: &PipelineConfig) -> Result<()> {
    model.group_selections.clear();
    model.residue_models.clear();
    for group in Group::ALL {
        let selection = config.pair_scheme.apply(&model.selected_pairs[&group]);
        let features = prepared.residues(&selection, &config.slerp)?;
        let cfg = config.train.with_seed(config.component_seed(residue_component(group)));
        let m = train_linear_svm(&features, prepared.labels(), &cfg)?;
        model.group_selections.insert(group, selection);
        model.residue_models.insert(group, m);
    }
    model.score_normalization = None;
    if config.normalize_scores {
        let scores = (0..prepared.len())
            .into_par_iter()
            .map(|i| {
                let p = &prepared.pairs[i];
                raw_components(
                    model,
                    prepared.embeddings.sample(&p.document_id)?,
                    prepared.embeddings.sample(&p.probe_id)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        model.score_normalization = Some(component_stats(&scores));
    }
    Ok(())
}

fn component_stats(scores: &[[f64; COMPONENTS]]) -> Vec<ScoreStats> {
    let n = scores.len() as f64;
    (0..COMPONENTS)
        .map(|j| {
            let mean = scores.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = scores.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            ScoreStats {
                mean,
                std: if std > 1e-12 { std } else { 1.0 },
            }
        })
        .collect()
}

fn raw_components(model: &DmadModel, doc: SampleView<'_>, probe: SampleView<'_>) -> Result<[f64; COMPONENTS]> {
    let dfs = pair_residuals(doc, probe)?;
    let models = model.component_models();
    let mut out = [0.0; COMPONENTS];
    for df in &dfs {
        let j = df.network.index();
        out[j] = svm_score(models[j], &df.values)?;
    }
    for group in Group::ALL {
        let sel = &model.group_selections[&group];
        let r = group_residue(sel, &model.slerp_config, &dfs, doc, probe)?;
        let j = residue_component(group);
        out[j] = svm_score(models[j], &r)?;
    }
    Ok(out)
}

/// Eight component scores and their sum for one (document, probe) pair.
pub fn score_pair(model: &DmadModel, doc: SampleView<'_>, probe: SampleView<'_>) -> Result<FusedScore> {
    let mut components = raw_components(model, doc, probe)?;
    if let Some(stats) = &model.score_normalization {
        for (s, st) in components.iter_mut().zip(stats) {
            *s = (*s - st.mean) / st.std;
        }
    }
    Ok(FusedScore::from_components(components))
}

/// Scores every pair, in input order.
pub fn score_pairs(
    model: &DmadModel,
    pairs: &[EvaluationPair],
    embeddings: &EmbeddingSet,
) -> Result<Vec<FusedScore>> {
    pairs
        .par_iter()
        .map(|p| score_pair(model, embeddings.sample(&p.document_id)?, embeddings.sample(&p.probe_id)?))
        .collect()
}
