use dmad_core::pipeline::COMPONENTS;
use dmad_core::{
    build_pairs, execute_run, generate, plan_protocol, score_pairs, summarize, train_dmad, Dataset,
    DimProfile, DmadModel, Label, Medium, PairFilter, PipelineConfig, PlanOptions, Protocol, RunConfig,
    ScoredSample, Split, SynthConfig,
};

fn small() -> Dataset {
    generate(&SynthConfig {
        probe_noise: 0.05,
        ..SynthConfig::small(21)
    })
    .unwrap()
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = small();
    let tmp = tempfile::tempdir().unwrap();
    ds.save(tmp.path()).unwrap();
    let back = Dataset::load(tmp.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert!(back.embeddings.records().eq(ds.embeddings.records()));
    assert_eq!(back.manifest.dims(), DimProfile::SMALL);
}

#[test]
fn one_cell_model_separates_and_serializes_stably() {
    let ds = small();
    let filter = PairFilter::cell(Some(Medium::Digital), 2, 3);
    let train_pairs = build_pairs(&ds.manifest, Split::Train, &filter).unwrap();
    assert_eq!(train_pairs.len(), 56 + 184);

    let model = train_dmad(&ds.manifest, &ds.embeddings, &filter, &PipelineConfig::default()).unwrap();
    let again = train_dmad(&ds.manifest, &ds.embeddings, &filter, &PipelineConfig::default()).unwrap();
    let json = model.to_json().unwrap();
    assert_eq!(json, again.to_json().unwrap());
    let reloaded = DmadModel::from_json(&json).unwrap();
    assert_eq!(reloaded.to_json().unwrap(), json);

    let test_pairs = build_pairs(&ds.manifest, Split::Test, &filter).unwrap();
    let scores = score_pairs(&reloaded, &test_pairs, &ds.embeddings).unwrap();
    for s in &scores {
        let sum = s.components.iter().fold(0.0, |acc, c| acc + c);
        assert_eq!(s.total, sum);
        assert_eq!(s.components.len(), COMPONENTS);
    }
    let samples: Vec<ScoredSample> = test_pairs
        .iter()
        .zip(&scores)
        .map(|(p, s)| ScoredSample::new(s.total, p.label))
        .collect();
    let summary = summarize(&samples).unwrap();
    assert!(summary.d_eer <= 2.0, "{summary:?}");
}

#[test]
fn normalized_fusion_uses_training_statistics() {
    let ds = small();
    let filter = PairFilter::cell(None, 1, 3);
    let cfg = PipelineConfig {
        normalize_scores: true,
        ..PipelineConfig::default()
    };
    let model = train_dmad(&ds.manifest, &ds.embeddings, &filter, &cfg).unwrap();
    let stats = model.score_normalization.as_ref().unwrap();
    assert_eq!(stats.len(), COMPONENTS);
    assert!(stats.iter().all(|s| s.std > 0.0));

    let train = build_pairs(&ds.manifest, Split::Train, &filter).unwrap();
    let scores = score_pairs(&model, &train, &ds.embeddings).unwrap();
    for j in 0..COMPONENTS {
        let mean = scores.iter().map(|s| s.components[j]).sum::<f64>() / scores.len() as f64;
        assert!(mean.abs() < 1e-9, "component {j}: mean {mean}");
    }
}

#[test]
fn reruns_reproduce_rows_exactly() {
    let ds = small();
    let plans = plan_protocol(Protocol::P1, &ds.manifest, PlanOptions::default()).unwrap();
    let cfg = RunConfig {
        ablation: true,
        ..RunConfig::default()
    };
    let plan = &plans[52];
    let a = execute_run(plan, &ds.manifest, &ds.embeddings, &cfg).unwrap();
    let b = execute_run(plan, &ds.manifest, &ds.embeddings, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train_medium, "printscan");
    assert_eq!(a.test_medium, "digital");
}

#[test]
fn fused_is_at_most_component_median() {
    let ds = generate(&SynthConfig::small(8)).unwrap();
    let cfg = RunConfig {
        ablation: true,
        ..RunConfig::default()
    };
    let mut beats_all = 0;
    let mut runs = 0;
    for protocol in [Protocol::P2, Protocol::P3] {
        for plan in plan_protocol(protocol, &ds.manifest, PlanOptions::default()).unwrap() {
            let row = execute_run(&plan, &ds.manifest, &ds.embeddings, &cfg).unwrap();
            let median = row.component_median().unwrap();
            assert!(row.d_eer <= median, "{}: fused {} > median {median}", row.run_id, row.d_eer);
            assert!((0.0..=100.0).contains(&row.d_eer));
            beats_all += usize::from(row.fusion_beats_all().unwrap());
            runs += 1;
        }
    }
    // Reported, not asserted.
    println!("fusion beats every component in {beats_all}/{runs} runs");
}

#[test]
fn pooled_protocol_one_trains_on_every_cell() {
    let ds = small();
    let plans = plan_protocol(Protocol::P1, &ds.manifest, PlanOptions { pooled_training: true }).unwrap();
    let pairs = build_pairs(&ds.manifest, Split::Train, &plans[0].train_filter).unwrap();
    assert_eq!(pairs.len(), 15 * (56 + 184));
    assert!(pairs.iter().any(|p| p.label == Label::Morph));
}

#[test]
fn features_mode_residue_trains() {
    let ds = small();
    let mut cfg = PipelineConfig::default();
    cfg.slerp.input = dmad_core::SlerpInput::Features;
    let filter = PairFilter::cell(Some(Medium::Printscan), 5, 1);
    let model = train_dmad(&ds.manifest, &ds.embeddings, &filter, &cfg).unwrap();
    let pairs = build_pairs(&ds.manifest, Split::Test, &filter).unwrap();
    let scores = score_pairs(&model, &pairs, &ds.embeddings).unwrap();
    assert!(scores.iter().all(|s| s.total.is_finite()));
}

#[test]
fn forty_training_pairs_fit_their_own_data() {
    let ds = small();
    let all = build_pairs(&ds.manifest, Split::Train, &PairFilter::cell(Some(Medium::Digital), 1, 3)).unwrap();
    let mut pairs: Vec<_> = all.iter().filter(|p| p.label == Label::Bonafide).take(20).cloned().collect();
    pairs.extend(all.iter().filter(|p| p.label == Label::Morph).take(20).cloned());
    assert_eq!(pairs.len(), 40);

    let prepared = dmad_core::PreparedPairs::new(pairs.clone(), &ds.embeddings).unwrap();
    let model = dmad_core::pipeline::train_prepared(&prepared, &PipelineConfig::default()).unwrap();
    let scores = score_pairs(&model, &pairs, &ds.embeddings).unwrap();
    let samples: Vec<ScoredSample> = pairs
        .iter()
        .zip(&scores)
        .map(|(p, s)| ScoredSample::new(s.total, p.label))
        .collect();
    let eer = dmad_core::d_eer(&samples).unwrap();
    assert!(eer <= 2.0, "training D-EER {eer}");
}
