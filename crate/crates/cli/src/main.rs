use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmad_core::metrics::DetCurve;
use dmad_core::pipeline::PreparedPairs;
use dmad_core::protocols::ReportRow;
use dmad_core::{
    build_pairs, det_curve, execute_protocol, generate, plan_protocol, read_report_csv, score_pairs,
    summarize, write_det_csv, write_report_csv, Dataset, DimProfile, DmadError, DmadModel, ErrorKind,
    Label, Medium, MorphBlend, PairFilter, PairScheme, PipelineConfig, PlanOptions, Protocol, RunConfig,
    ScoredSample, Split, SynthConfig, COMPONENT_NAMES,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "dmad", version, about = "Differential morphing attack detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Check a dataset's manifest and every embedding file.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model on the training split.
    Train(TrainArgs),
    /// Score (document, probe) pairs with a trained model.
    Score(ScoreArgs),
    /// Run one evaluation protocol and write its report.
    Evaluate(EvaluateArgs),
    /// DET sweep of a score file.
    Det(DetArgs),
    /// Print a report as a table.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 64/32-dimensional features instead of 4096/2048.
    #[arg(long)]
    small: bool,
    #[arg(long)]
    probe_noise: Option<f64>,
    #[arg(long)]
    document_noise: Option<f64>,
    /// Morph by normalised arithmetic mean instead of spherical midpoint.
    #[arg(long)]
    linear_morphs: bool,
}

#[derive(Args)]
struct Selection {
    #[arg(long, value_parser = parse_medium)]
    medium: Option<Medium>,
    #[arg(long)]
    camera: Option<u8>,
    #[arg(long)]
    distance: Option<u8>,
}

impl Selection {
    fn filter(&self) -> PairFilter {
        PairFilter {
            medium: self.medium,
            camera: self.camera,
            distance: self.distance,
        }
    }
}

#[derive(Args)]
struct ModelOptions {
    #[arg(long, default_value = "proposed", value_parser = parse_scheme)]
    pairs: PairScheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// z-normalise component scores before summing.
    #[arg(long)]
    normalize_scores: bool,
}

impl ModelOptions {
    fn pipeline(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            pair_scheme: self.pairs,
            normalize_scores: self.normalize_scores,
            ..PipelineConfig::default()
        };
        cfg.train.seed = self.seed;
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    options: ModelOptions,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[command(flatten)]
    selection: Selection,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Add per-component and per-pairing D-EER columns.
    #[arg(long)]
    ablation: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Protocol 1: train on all cells of the training medium.
    #[arg(long)]
    pooled_training: bool,
    #[command(flatten)]
    options: ModelOptions,
}

#[derive(Args)]
struct DetArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw the curve as an SVG polyline.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn parse_medium(s: &str) -> std::result::Result<Medium, String> {
    match s {
        "digital" => Ok(Medium::Digital),
        "printscan" => Ok(Medium::Printscan),
        _ => Err("expected digital or printscan".into()),
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err("expected train or test".into()),
    }
}

fn parse_scheme(s: &str) -> std::result::Result<PairScheme, String> {
    s.parse().map_err(|e: DmadError| e.to_string())
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    s.parse().map_err(|e: DmadError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            })
        }
    }
}

type Result<T> = std::result::Result<T, DmadError>;

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Validate { data } => validate(&data),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Det(a) => det(a),
        Command::Report { report } => show_report(&report),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        dims: if a.small { DimProfile::SMALL } else { DimProfile::STANDARD },
        ..SynthConfig::default()
    };
    if let Some(s) = a.probe_noise {
        cfg.probe_noise = s;
    }
    if let Some(s) = a.document_noise {
        cfg.document_noise = s;
    }
    if a.linear_morphs {
        cfg.morph_blend = MorphBlend::Linear;
    }
    let ds = generate(&cfg)?;
    ds.save(&a.out)?;
    eprintln!(
        "wrote {} samples ({} embeddings) to {}",
        ds.manifest.entries.len(),
        ds.embeddings.len(),
        a.out.display()
    );
    Ok(())
}

fn validate(dir: &Path) -> Result<()> {
    let ds = Dataset::load(dir)?;
    let probes = ds.manifest.entries.iter().filter(|e| e.is_probe()).count();
    println!(
        "ok: {} samples ({} documents, {} probes), {} embeddings",
        ds.manifest.entries.len(),
        ds.manifest.entries.len() - probes,
        probes,
        ds.embeddings.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let pairs = build_pairs(&ds.manifest, Split::Train, &a.selection.filter())?;
    let n = pairs.len();
    let prepared = PreparedPairs::new(pairs, &ds.embeddings)?;
    let model = dmad_core::pipeline::train_prepared(&prepared, &a.options.pipeline())?;
    let mut out = output(Some(&a.model))?;
    writeln!(out, "{}", model.to_json()?)?;
    out.flush()?;
    eprintln!("trained on {n} pairs; model written to {}", a.model.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let model = DmadModel::from_json(&std::fs::read_to_string(&a.model)?)?;
    let pairs = build_pairs(&ds.manifest, a.split, &a.selection.filter())?;
    let scores = score_pairs(&model, &pairs, &ds.embeddings)?;

    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let mut header = vec!["document_id".to_string(), "probe_id".into(), "label".into()];
    header.extend((1..=COMPONENT_NAMES.len()).map(|j| format!("s{j}")));
    header.push("score".into());
    w.write_record(&header)?;
    for (p, s) in pairs.iter().zip(&scores) {
        let mut rec = vec![p.document_id.clone(), p.probe_id.clone(), p.label.to_string()];
        rec.extend(s.components.iter().map(|c| c.to_string()));
        rec.push(s.total.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    if pairs.iter().any(|p| p.label == Label::Morph) && pairs.iter().any(|p| p.label == Label::Bonafide) {
        let samples: Vec<ScoredSample> = pairs
            .iter()
            .zip(&scores)
            .map(|(p, s)| ScoredSample::new(s.total, p.label))
            .collect();
        let s = summarize(&samples)?;
        eprintln!(
            "{} pairs: D-EER {:.2}%, BPCER@APCER=5% {:.2}%, BPCER@APCER=10% {:.2}%",
            pairs.len(),
            s.d_eer,
            s.bpcer_at_5,
            s.bpcer_at_10
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let options = PlanOptions {
        pooled_training: a.pooled_training,
    };
    let plans = plan_protocol(a.protocol, &ds.manifest, options)?;
    let config = RunConfig {
        pipeline: a.options.pipeline(),
        ablation: a.ablation,
    };
    // Rows come back in plan order regardless of --jobs.
    let rows = execute_protocol(&plans, &ds.manifest, &ds.embeddings, &config, a.jobs)?;
    write_report_csv(&rows, output(a.report.as_deref())?)?;
    let mean = rows.iter().map(|r| r.d_eer).sum::<f64>() / rows.len() as f64;
    eprintln!("{} runs, mean D-EER {mean:.2}%", rows.len());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DmadError::InvalidConfig(format!("{}: no {name:?} column", path.display())))
    };
    let (score_col, label_col) = (col("score")?, col("label")?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let score: f64 = rec[score_col].trim().parse().map_err(|_| {
            DmadError::InvalidConfig(format!("{}: row {}: bad score {:?}", path.display(), line + 1, &rec[score_col]))
        })?;
        out.push(ScoredSample::new(score, rec[label_col].trim().parse()?));
    }
    Ok(out)
}

fn det(a: DetArgs) -> Result<()> {
    let samples = read_scores(&a.scores)?;
    let curve = det_curve(&samples)?;
    write_det_csv(&curve, output(a.out.as_deref())?)?;
    if let Some(svg) = &a.svg {
        let mut f = BufWriter::new(File::create(svg)?);
        write_svg(&curve, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn write_svg(curve: &DetCurve, out: &mut impl Write) -> Result<()> {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let xy = |apcer: f64, bpcer: f64| (PAD + apcer / 100.0 * SIZE, PAD + (1.0 - bpcer / 100.0) * SIZE);
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| {
            let (x, y) = xy(p.apcer, p.bpcer);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let full = SIZE + 2.0 * PAD;
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    )?;
    writeln!(out, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#)?;
    let (x0, y0) = xy(0.0, 0.0);
    let (x1, y1) = xy(100.0, 100.0);
    writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="grey" stroke-dasharray="4"/>"#)?;
    writeln!(out, r#"<polyline fill="none" stroke="blue" points="{}"/>"#, points.join(" "))?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">APCER (%)</text>"#, PAD + SIZE / 2.0, full - 10.0)?;
    writeln!(
        out,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">BPCER (%)</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    )?;
    writeln!(out, "</svg>")?;
    Ok(())
}

fn show_report(path: &Path) -> Result<()> {
    let rows = read_report_csv(File::open(path)?)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<32} {:>7} {:>9} {:>10}",
        "run", "D-EER", "BPCER@5", "BPCER@10"
    )?;
    for r in &rows {
        writeln!(out, "{:<32} {:>7.2} {:>9.2} {:>10.2}", r.run_id, r.d_eer, r.bpcer_at_5, r.bpcer_at_10)?;
    }
    if rows.is_empty() {
        return Ok(());
    }
    let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    writeln!(
        out,
        "{:<32} {:>7.2} {:>9.2} {:>10.2}",
        "mean",
        mean(|r| r.d_eer),
        mean(|r| r.bpcer_at_5),
        mean(|r| r.bpcer_at_10)
    )?;
    let ablated: Vec<&ReportRow> = rows.iter().filter(|r| r.component_deers.is_some()).collect();
    if !ablated.is_empty() {
        let beats = ablated.iter().filter(|r| r.fusion_beats_all() == Some(true)).count();
        let median = ablated
            .iter()
            .filter(|r| r.component_median().is_some_and(|m| r.d_eer <= m))
            .count();
        writeln!(out, "fused below every component: {beats}/{} runs", ablated.len())?;
        writeln!(out, "fused at or below component median: {median}/{} runs", ablated.len())?;
    }
    Ok(())
}
