use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use serde_json::json;

use pif::classify::{loso_cv, Construct, Dataset, FeatureWeightReport, PipelineModel, RankStrategy};
use pif::features::{extract, FeatureRegistry, FeatureTable};
use pif::sensors::SensorData;
use pif::session::{serve as serve_session, SessionConfig};
use pif::simulator::live::{LiveOptions, LiveSimulator};
use pif::simulator::{generate, make_cohort_with, CohortOptions, Scenario, SubjectProfile};
use pif::story::{lint as lint_graph, parse, Severity, StorySource};
use pif::transport::net::{list_streams, subscribe};
use pif::transport::recording::record_to;
use pif::transport::{wall_clock, Recording, Registry, Replay, Speed, TcpServer, DEFAULT_CAPACITY};

use crate::{interrupted, Failure, Format};

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// A file, or standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_recording(path: &Path) -> Result<Recording, Failure> {
    Ok(Recording::parse(open(path)?)?)
}

pub fn lint(stories: &[PathBuf], strict: bool, format: Format) -> Result<(), Failure> {
    let mut failed = false;
    let mut all = Vec::new();
    for path in stories {
        let source = StorySource::from_file(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        let shown = source.origin.display_path();
        let diagnostics = match parse(&source) {
            Ok(graph) => lint_graph(&graph),
            Err(e) => e.diagnostics,
        };
        for d in diagnostics {
            failed |= d.severity != Severity::Info || strict;
            match format {
                Format::Text => println!("{}", d.render(&shown)),
                Format::Json => all.push(json!({
                    "path": shown,
                    "line": d.line,
                    "col": d.col,
                    "severity": d.severity,
                    "message": d.message,
                })),
            }
        }
    }
    if format == Format::Json {
        println!("{}", serde_json::Value::Array(all));
    }
    if failed {
        Err(Failure {
            code: 1,
            message: String::new(),
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario name or a scenario JSON file.
    #[arg(long, default_value = "story_pairs")]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "s01")]
    subject: String,
    /// Subject profile JSON (a typical subject by default).
    #[arg(long, conflicts_with = "random_profile")]
    profile: Option<PathBuf>,
    /// Draw a random subject profile from the seed.
    #[arg(long)]
    random_profile: bool,
    /// Simulate a cohort of N subjects and write its feature table (CSV) instead.
    #[arg(long, value_name = "N")]
    cohort: Option<usize>,
    /// Class separation of the cohort, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    separability: f64,
    /// Per-subject level shift of the cohort baselines (e.g. 0.5 for ±50%).
    #[arg(long, default_value_t = 0.0)]
    baseline_shift: f64,
    /// Stream live on this transport address until interrupted.
    #[arg(long, value_name = "HOST:PORT", conflicts_with = "cohort")]
    serve: Option<String>,
    /// With --serve: stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn load_scenario(name: &str) -> Result<Scenario, Failure> {
    if let Some(s) = Scenario::builtin(name) {
        return Ok(s);
    }
    let mut text = String::new();
    open(Path::new(name))?
        .read_to_string(&mut text)
        .map_err(|e| Failure::invalid(format!("{name}: {e}")))?;
    Scenario::from_json(&text).map_err(Failure::invalid)
}

fn load_profile(args: &SimulateArgs) -> Result<SubjectProfile, Failure> {
    let profile = match &args.profile {
        Some(p) => serde_json::from_reader(open(p)?).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?,
        None if args.random_profile => SubjectProfile::random(&args.subject, args.seed),
        None => SubjectProfile::typical(&args.subject, args.seed),
    };
    SubjectProfile::validate(&profile).map_err(Failure::invalid)?;
    Ok(profile)
}

pub fn simulate(args: &SimulateArgs, format: Format) -> Result<(), Failure> {
    if let Some(addr) = &args.serve {
        let profile = load_profile(args)?;
        let registry = Registry::new();
        let server = TcpServer::bind(registry.clone(), addr)?;
        let sim = LiveSimulator::start(&registry, &profile, LiveOptions::default())?;
        match format {
            Format::Text => eprintln!("simulating `{}` on {}", profile.id, server.local_addr()),
            Format::Json => eprintln!("{}", json!({"serving": server.local_addr().to_string()})),
        }
        wait(args.duration);
        sim.stop()?;
        return Ok(());
    }
    let scenario = load_scenario(&args.scenario)?;
    if let Some(n) = args.cohort {
        let cohort = make_cohort_with(
            &scenario,
            &CohortOptions {
                n_subjects: n,
                separability: args.separability,
                baseline_shift: args.baseline_shift,
                seed: args.seed,
                ..Default::default()
            },
        )
        .map_err(Failure::invalid)?;
        cohort.table.write_csv(sink(args.output.as_deref())?).map_err(Failure::runtime)?;
        return Ok(());
    }
    let profile = load_profile(args)?;
    let data = generate(&profile, &scenario).map_err(Failure::invalid)?;
    let rec = data.to_recording(&profile.id, 0.0);
    let mut out = sink(args.output.as_deref())?;
    rec.write_to(&mut out)?;
    out.flush().map_err(Failure::runtime)
}

/// Block until Ctrl-C or `duration` seconds.
fn wait(duration: Option<f64>) {
    let start = Instant::now();
    while !interrupted() && duration.is_none_or(|d| start.elapsed().as_secs_f64() < d) {
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn features(recordings: &[PathBuf], output: Option<&Path>) -> Result<(), Failure> {
    let registry = FeatureRegistry::default();
    let mut table = FeatureTable::new(registry.clone());
    for path in recordings {
        let data = SensorData::from_recording(&read_recording(path)?);
        let subject = data
            .subject
            .clone()
            .unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        table
            .rows
            .extend(data.feature_rows(&registry, &subject).into_iter().map(|(_, fv)| fv));
    }
    table.write_csv(sink(output)?).map_err(Failure::runtime)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature table CSV (as written by `pif features` or `pif simulate --cohort`).
    table: PathBuf,
    /// arousal, difficulty, valence, or a custom `labelA:labelB` pair.
    #[arg(long)]
    construct: String,
    /// Model file to write.
    #[arg(short, long, default_value = "model.json")]
    output: PathBuf,
    /// Per-subject LOSO results (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Feature-weight table (CSV).
    #[arg(long)]
    weights: Option<PathBuf>,
}

pub fn train(args: &TrainArgs, format: Format) -> Result<(), Failure> {
    let construct = Construct::parse(&args.construct).map_err(Failure::invalid)?;
    let table = FeatureTable::read_csv(open(&args.table)?).map_err(Failure::invalid)?;
    let dataset = Dataset::from_table(&table, construct);
    let report = loso_cv(&dataset).map_err(Failure::invalid)?;
    let model = pif::classify::fit(&dataset).map_err(Failure::invalid)?;
    let mut w = create(&args.output)?;
    w.write_all(model.to_json().map_err(Failure::runtime)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(Failure::runtime)?;
    if let Some(p) = &args.report {
        report.write_subjects_csv(create(p)?).map_err(Failure::runtime)?;
    }
    if let Some(p) = &args.weights {
        FeatureWeightReport::write_csv(std::slice::from_ref(&report.weights), create(p)?).map_err(Failure::runtime)?;
    }
    let top: Vec<(String, f64)> = report
        .weights
        .ranked()
        .into_iter()
        .take(5)
        .map(|i| (report.weights.names[i].clone(), report.weights.weights[i]))
        .collect();
    match format {
        Format::Json => println!(
            "{}",
            json!({
                "construct": report.construct,
                "accuracy": report.accuracy,
                "subjects": report.per_subject.len(),
                "observations": dataset.observations.len(),
                "top_features": top,
                "model": args.output,
            })
        ),
        Format::Text => {
            println!(
                "{}: LOSO accuracy {:.3} over {} subjects ({} windows)",
                report.construct,
                report.accuracy,
                report.per_subject.len(),
                dataset.observations.len()
            );
            for (name, w) in top {
                println!("  {w:+.3}  {name}");
            }
            println!("model written to {}", args.output.display());
        }
    }
    Ok(())
}

/// Windows to classify: the recording's tag windows, or fixed windows without tags.
fn windows(data: &SensorData, window: f64) -> Vec<(String, (f64, f64))> {
    let tagged = data.tag_windows();
    if !tagged.is_empty() {
        return tagged.into_iter().map(|w| (w.tag, w.span)).collect();
    }
    let times = [
        data.eda.as_ref().map(|s| (s.time(0), s.time(s.values.len().saturating_sub(1)))),
        data.breathing.as_ref().map(|s| (s.time(0), s.time(s.values.len().saturating_sub(1)))),
        data.gaze.first().zip(data.gaze.last()).map(|(a, b)| (a.t, b.t)),
    ];
    let Some((t0, t1)) = times
        .into_iter()
        .flatten()
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    else {
        return Vec::new();
    };
    let n = ((t1 - t0) / window).floor() as usize;
    (0..n)
        .map(|i| (format!("w{i}"), (t0 + i as f64 * window, t0 + (i + 1) as f64 * window)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankArg {
    Population,
    Recording,
}

pub fn classify(model_path: &Path, input: Option<&Path>, window: f64, rank: RankArg, format: Format) -> Result<(), Failure> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Failure::invalid("--window must be > 0"));
    }
    let mut text = String::new();
    open(model_path)?
        .read_to_string(&mut text)
        .map_err(|e| Failure::invalid(format!("{}: {e}", model_path.display())))?;
    let model = PipelineModel::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", model_path.display())))?;
    let rec = match input {
        Some(p) => read_recording(p)?,
        None => Recording::parse(io::stdin().lock())?,
    };
    let data = SensorData::from_recording(&rec);
    let wins = windows(&data, window);
    let rows: Vec<_> = wins
        .iter()
        .map(|(_, span)| extract(&data.window(*span), &model.registry, "input", None).values)
        .collect();
    let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
    let predictions = match (rank, refs.len()) {
        (_, 0) => Vec::new(),
        (RankArg::Recording, n) if n > 1 => model.predict_subject(&refs).map_err(Failure::invalid)?,
        _ => wins
            .iter()
            .map(|(_, span)| {
                let fv = extract(&data.window(*span), &model.registry, "input", None);
                model.predict(&fv, &[], RankStrategy::PopulationQuantile)
            })
            .collect::<Result<_, _>>()
            .map_err(Failure::invalid)?,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for ((tag, (t0, t1)), p) in wins.iter().zip(predictions) {
        let label = model.construct.label_of(p.class);
        let line = match format {
            Format::Json => json!({"tag": tag, "t0": t0, "t1": t1, "label": label, "score": p.score, "posterior_a": p.posterior_a})
                .to_string(),
            Format::Text => format!("{t0:.3}\t{t1:.3}\t{tag}\t{label}\t{:.4}", p.posterior_a),
        };
        writeln!(out, "{line}").map_err(Failure::runtime)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpeedArg {
    Realtime,
    Max,
}

pub fn replay(path: &Path, speed: SpeedArg, serve: Option<&str>) -> Result<(), Failure> {
    let rec = read_recording(path)?;
    let session_start = rec.session_start;
    let registry = Registry::new();
    let replay = Replay::open(&registry, rec)?;
    let speed = match speed {
        SpeedArg::Realtime => Speed::Realtime,
        SpeedArg::Max => Speed::Max,
    };
    if let Some(addr) = serve {
        let server = TcpServer::bind(registry.clone(), addr)?;
        eprintln!("replaying {} on {}", path.display(), server.local_addr());
        replay.run(speed)?;
        return Ok(());
    }
    let inlets = replay
        .infos()
        .iter()
        .map(|i| registry.open_inlet(&i.source_id, DEFAULT_CAPACITY))
        .collect::<Result<Vec<_>, _>>()?;
    let producer = std::thread::spawn(move || replay.run(speed));
    let stop = AtomicBool::new(false);
    let summary = record_to(&inlets, BufWriter::new(io::stdout().lock()), session_start, &stop)?;
    producer.join().map_err(|_| Failure::runtime("replay thread panicked"))??;
    if summary.total_overflow > 0 {
        return Err(Failure::runtime(format!("{} samples overflowed while replaying", summary.total_overflow)));
    }
    Ok(())
}

pub fn record(from: &str, streams: &[String], output: Option<&Path>, duration: Option<f64>) -> Result<(), Failure> {
    let timeout = Duration::from_secs(3);
    let infos: Vec<_> = list_streams(from, timeout)?
        .into_iter()
        .filter(|i| streams.is_empty() || streams.iter().any(|s| *s == i.name || *s == i.source_id))
        .collect();
    if infos.is_empty() {
        return Err(Failure::runtime(format!("no matching streams on {from}")));
    }
    let inlets = infos
        .iter()
        .map(|i| subscribe(from, &i.source_id, DEFAULT_CAPACITY, timeout))
        .collect::<Result<Vec<_>, _>>()?;
    let stop = Arc::new(AtomicBool::new(false));
    let timer = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            wait(duration);
            stop.store(true, Ordering::SeqCst);
        })
    };
    let summary = record_to(&inlets, sink(output)?, wall_clock(), &stop)?;
    stop.store(true, Ordering::SeqCst);
    let _ = timer.join();
    eprintln!(
        "recorded {} samples from {} streams ({} overflowed)",
        summary.total_samples,
        summary.streams.len(),
        summary.total_overflow
    );
    Ok(())
}

pub fn serve(config: &Path, format: Format) -> Result<(), Failure> {
    let config = SessionConfig::load(config)?;
    let session = serve_session(&config)?;
    match format {
        Format::Text => eprintln!("reader UI on ws://{}  (Ctrl-C to stop)", session.ui_addr()),
        Format::Json => eprintln!("{}", json!({"ui": format!("ws://{}", session.ui_addr())})),
    }
    while !interrupted() && !session.loop_exited() {
        std::thread::sleep(Duration::from_millis(50));
    }
    let summary = session.shutdown()?;
    match format {
        Format::Json => println!(
            "{}",
            json!({
                "story": summary.story_id,
                "finished": summary.finished,
                "branches": summary.branches,
                "variables": summary.variables,
                "markers": summary.markers.len(),
                "samples": summary.samples_consumed,
            })
        ),
        Format::Text => {
            println!(
                "{}: {} ({} markers, {} samples)",
                summary.story_id,
                if summary.finished { "finished" } else { "stopped" },
                summary.markers.len(),
                summary.samples_consumed
            );
            if !summary.branches.is_empty() {
                println!("branches: {}", summary.branches.join(" -> "));
            }
            for (k, v) in &summary.variables {
                println!("  {k} = {v:.4}");
            }
        }
    }
    Ok(())
}
