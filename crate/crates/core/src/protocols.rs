//! The three evaluation protocols as declarative run plans.
//!
//! - P1: one (train medium, test medium) combination and one
//!   (camera, distance) cell per run; 4 x 5 x 3 = 60 runs.
//! - P2: one medium combination per run, all cells pooled; 4 runs.
//! - P3: one cell per run, both media merged in train and test; 15 runs.
//!
//! Media constrain the document side only; probes are always camera
//! captures.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{DmadError, Result};
use crate::fusion::PairScheme;
use crate::manifest::{build_pairs, DatasetManifest, EvaluationPair, Medium, PairFilter, Split, CAMERAS, DISTANCES};
use crate::metrics::{d_eer, summarize, ScoredSample};
use crate::pipeline::{retrain_with_scheme, score_pairs, train_prepared, FusedScore, PipelineConfig, PreparedPairs, COMPONENT_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    P1,
    P2,
    P3,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::P1, Protocol::P2, Protocol::P3];

    pub fn number(self) -> u8 {
        match self {
            Protocol::P1 => 1,
            Protocol::P2 => 2,
            Protocol::P3 => 3,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.number())
    }
}

impl FromStr for Protocol {
    type Err = DmadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "p1" => Ok(Protocol::P1),
            "2" | "p2" => Ok(Protocol::P2),
            "3" | "p3" => Ok(Protocol::P3),
            other => Err(DmadError::InvalidConfig(format!("unknown protocol {other:?}"))),
        }
    }
}

/// (train, test) document media, in report order.
pub const MEDIUM_COMBOS: [(Medium, Medium); 4] = [
    (Medium::Digital, Medium::Digital),
    (Medium::Printscan, Medium::Printscan),
    (Medium::Digital, Medium::Printscan),
    (Medium::Printscan, Medium::Digital),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub protocol: Protocol,
    pub run_id: String,
    pub train_filter: PairFilter,
    pub test_filter: PairFilter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// P1 only: train on every cell of the training medium and test per
    /// cell, instead of training per cell.
    pub pooled_training: bool,
}

fn medium_label(m: Option<Medium>) -> &'static str {
    match m {
        Some(m) => m.as_str(),
        None => "digital+printscan",
    }
}

fn cells() -> impl Iterator<Item = (u8, u8)> {
    DISTANCES.flat_map(|d| CAMERAS.map(move |c| (c, d)))
}

/// Run plans in report order: medium combination, then distance, then
/// camera.
pub fn plan_protocol(protocol: Protocol, manifest: &DatasetManifest, options: PlanOptions) -> Result<Vec<RunPlan>> {
    let mut plans = Vec::new();
    match protocol {
        Protocol::P1 => {
            for (train, test) in MEDIUM_COMBOS {
                for (c, d) in cells() {
                    let train_filter = if options.pooled_training {
                        PairFilter { medium: Some(train), ..PairFilter::any() }
                    } else {
                        PairFilter::cell(Some(train), c, d)
                    };
                    plans.push(RunPlan {
                        protocol,
                        run_id: format!("p1-{train}-{test}-d{d}-c{c}"),
                        train_filter,
                        test_filter: PairFilter::cell(Some(test), c, d),
                    });
                }
            }
        }
        Protocol::P2 => {
            for (train, test) in MEDIUM_COMBOS {
                plans.push(RunPlan {
                    protocol,
                    run_id: format!("p2-{train}-{test}"),
                    train_filter: PairFilter { medium: Some(train), ..PairFilter::any() },
                    test_filter: PairFilter { medium: Some(test), ..PairFilter::any() },
                });
            }
        }
        Protocol::P3 => {
            for (c, d) in cells() {
                plans.push(RunPlan {
                    protocol,
                    run_id: format!("p3-d{d}-c{c}"),
                    train_filter: PairFilter::cell(None, c, d),
                    test_filter: PairFilter::cell(None, c, d),
                });
            }
        }
    }
    check_coverage(&plans, manifest)?;
    Ok(plans)
}

fn check_coverage(plans: &[RunPlan], manifest: &DatasetManifest) -> Result<()> {
    let probe_cells = manifest.probe_cells();
    let media = manifest.document_media();
    let mut missing = std::collections::BTreeSet::new();
    for plan in plans {
        for (split, filter) in [(Split::Train, &plan.train_filter), (Split::Test, &plan.test_filter)] {
            let required: Vec<Medium> = match filter.medium {
                Some(m) => vec![m],
                None => Medium::ALL.to_vec(),
            };
            for m in required {
                if !media.contains(&(split, m)) {
                    missing.insert(format!("{split}/{m} documents"));
                }
            }
            let covered = probe_cells.iter().any(|(&(s, c, d), &n)| {
                s == split
                    && n > 0
                    && filter.camera.is_none_or(|fc| fc == c)
                    && filter.distance.is_none_or(|fd| fd == d)
            });
            if !covered {
                let cell = match (filter.camera, filter.distance) {
                    (Some(c), Some(d)) => format!("{split}/camera{c}/distance{d}"),
                    _ => format!("{split}/probes"),
                };
                missing.insert(cell);
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(DmadError::MissingCells(missing.into_iter().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Also score each component alone and the alternative pairings.
    pub ablation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub protocol: Protocol,
    pub train_medium: String,
    pub test_medium: String,
    pub camera: Option<u8>,
    pub distance: Option<u8>,
    pub d_eer: f64,
    pub bpcer_at_5: f64,
    pub bpcer_at_10: f64,
    /// Ablation only: keyed by component name, plus `fused`.
    pub component_deers: Option<BTreeMap<String, f64>>,
    /// Ablation only: fused D-EER under each pairing scheme.
    pub pair_deers: Option<BTreeMap<PairScheme, f64>>,
}

impl ReportRow {
    /// True when the fused score has a strictly lower D-EER than every
    /// single component. `None` outside ablation mode.
    pub fn fusion_beats_all(&self) -> Option<bool> {
        let c = self.component_deers.as_ref()?;
        let fused = c["fused"];
        Some(COMPONENT_NAMES.iter().all(|n| fused < c[*n]))
    }

    /// Median of the eight single-component D-EERs.
    pub fn component_median(&self) -> Option<f64> {
        let c = self.component_deers.as_ref()?;
        let mut v: Vec<f64> = COMPONENT_NAMES.iter().map(|n| c[*n]).collect();
        v.sort_by(f64::total_cmp);
        Some(0.5 * (v[3] + v[4]))
    }
}

fn fused_samples(pairs: &[EvaluationPair], scores: &[FusedScore]) -> Vec<ScoredSample> {
    pairs
        .iter()
        .zip(scores)
        .map(|(p, s)| ScoredSample::new(s.total, p.label))
        .collect()
}

pub fn execute_run(
    plan: &RunPlan,
    manifest: &DatasetManifest,
    embeddings: &EmbeddingSet,
    config: &RunConfig,
) -> Result<ReportRow> {
    let train_pairs = build_pairs(manifest, Split::Train, &plan.train_filter)?;
    let prepared = PreparedPairs::new(train_pairs, embeddings)?;
    let model = train_prepared(&prepared, &config.pipeline)?;

    let test_pairs = build_pairs(manifest, Split::Test, &plan.test_filter)?;
    if test_pairs.is_empty() {
        return Err(DmadError::Empty(format!("run {}: no test pairs", plan.run_id)));
    }
    let scores = score_pairs(&model, &test_pairs, embeddings)?;
    let summary = summarize(&fused_samples(&test_pairs, &scores))?;

    let (component_deers, pair_deers) = if config.ablation {
        let mut components = BTreeMap::new();
        for (j, name) in COMPONENT_NAMES.iter().enumerate() {
            let samples: Vec<ScoredSample> = test_pairs
                .iter()
                .zip(&scores)
                .map(|(p, s)| ScoredSample::new(s.components[j], p.label))
                .collect();
            components.insert(name.to_string(), d_eer(&samples)?);
        }
        components.insert("fused".to_string(), summary.d_eer);

        let mut pairs = BTreeMap::new();
        for scheme in PairScheme::ALL {
            let deer = if scheme == config.pipeline.pair_scheme {
                summary.d_eer
            } else {
                let alt = retrain_with_scheme(&model, &prepared, scheme, config.pipeline.normalize_scores)?;
                let alt_scores = score_pairs(&alt, &test_pairs, embeddings)?;
                d_eer(&fused_samples(&test_pairs, &alt_scores))?
            };
            pairs.insert(scheme, deer);
        }
        (Some(components), Some(pairs))
    } else {
        (None, None)
    };

    Ok(ReportRow {
        run_id: plan.run_id.clone(),
        protocol: plan.protocol,
        train_medium: medium_label(plan.train_filter.medium).to_string(),
        test_medium: medium_label(plan.test_filter.medium).to_string(),
        camera: plan.test_filter.camera,
        distance: plan.test_filter.distance,
        d_eer: summary.d_eer,
        bpcer_at_5: summary.bpcer_at_5,
        bpcer_at_10: summary.bpcer_at_10,
        component_deers,
        pair_deers,
    })
}

/// Executes `plans` on up to `jobs` threads. Rows come back in plan order
/// whatever the scheduling.
pub fn execute_protocol(
    plans: &[RunPlan],
    manifest: &DatasetManifest,
    embeddings: &EmbeddingSet,
    config: &RunConfig,
    jobs: usize,
) -> Result<Vec<ReportRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DmadError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        plans
            .par_iter()
            .map(|p| execute_run(p, manifest, embeddings, config))
            .collect()
    })
}

pub const REPORT_HEADER: [&str; 9] = [
    "run_id",
    "protocol",
    "train_medium",
    "test_medium",
    "camera",
    "distance",
    "d_eer",
    "bpcer_at_5",
    "bpcer_at_10",
];

fn ablation_header() -> Vec<String> {
    COMPONENT_NAMES
        .iter()
        .copied()
        .chain(["fused"])
        .map(|n| format!("deer_{n}"))
        .chain(PairScheme::ALL.iter().map(|s| format!("deer_pairs_{}", s.as_str())))
        .collect()
}

fn fmt_opt(v: Option<u8>) -> String {
    v.map_or_else(|| "all".to_string(), |x| x.to_string())
}

/// Writes rows as CSV with six decimals. Ablation columns are added when
/// any row carries them.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let ablation = rows.iter().any(|r| r.component_deers.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = REPORT_HEADER.iter().map(|s| s.to_string()).collect();
    if ablation {
        header.extend(ablation_header());
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.run_id.clone(),
            r.protocol.number().to_string(),
            r.train_medium.clone(),
            r.test_medium.clone(),
            fmt_opt(r.camera),
            fmt_opt(r.distance),
            format!("{:.6}", r.d_eer),
            format!("{:.6}", r.bpcer_at_5),
            format!("{:.6}", r.bpcer_at_10),
        ];
        if ablation {
            let blank = || String::new();
            let c = r.component_deers.as_ref();
            for n in COMPONENT_NAMES.iter().copied().chain(["fused"]) {
                rec.push(c.map_or_else(blank, |c| format!("{:.6}", c[n])));
            }
            let p = r.pair_deers.as_ref();
            for s in PairScheme::ALL {
                rec.push(p.and_then(|p| p.get(&s)).map_or_else(blank, |v| format!("{v:.6}")));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a report written by [`write_report_csv`].
pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let base: Vec<usize> = REPORT_HEADER
        .iter()
        .map(|h| col(h).ok_or_else(|| DmadError::InvalidConfig(format!("report lacks column {h:?}"))))
        .collect::<Result<_>>()?;
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| DmadError::InvalidConfig(format!("bad {what} value {s:?}")))
    };
    let cell = |s: &str| -> Result<Option<u8>> {
        if s == "all" {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| DmadError::InvalidConfig(format!("bad cell value {s:?}")))
        }
    };

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| &rec[base[k]];
        let mut components = BTreeMap::new();
        for n in COMPONENT_NAMES.iter().copied().chain(["fused"]) {
            if let Some(i) = col(&format!("deer_{n}")).filter(|&i| !rec[i].is_empty()) {
                components.insert(n.to_string(), num(&rec[i], n)?);
            }
        }
        let mut pairs = BTreeMap::new();
        for s in PairScheme::ALL {
            if let Some(i) = col(&format!("deer_pairs_{}", s.as_str())).filter(|&i| !rec[i].is_empty()) {
                pairs.insert(s, num(&rec[i], s.as_str())?);
            }
        }
        rows.push(ReportRow {
            run_id: f(0).to_string(),
            protocol: f(1).parse()?,
            train_medium: f(2).to_string(),
            test_medium: f(3).to_string(),
            camera: cell(f(4))?,
            distance: cell(f(5))?,
            d_eer: num(f(6), "d_eer")?,
            bpcer_at_5: num(f(7), "bpcer_at_5")?,
            bpcer_at_10: num(f(8), "bpcer_at_10")?,
            component_deers: (!components.is_empty()).then_some(components),
            pair_deers: (!pairs.is_empty()).then_some(pairs),
        });
    }
    Ok(rows)
}
