//! Live sessions over WebSocket, driven by a scripted reader.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread::sleep;
use std::time::{Duration, Instant};

use pif::classify::{fit, Construct, Dataset};
use pif::director::{Marker, MARKER_STREAM};
use pif::session::{
    read_reader_log, reproduce, serve, ConstructModel, Engine, Estimator, InputSource, ReaderAction, Rejection,
    ServerMessage, SessionConfig, SessionError, SimulatorInput,
};
use pif::simulator::{make_cohort_with, CohortOptions, GroundTruth, Scenario};
use pif::story::{parse_str, StorySource};
use pif::transport::{Recording, Sample, StreamInfo};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn story(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stories/valid").join(name)
}

fn sim(truth: GroundTruth) -> InputSource {
    InputSource::Simulator(SimulatorInput {
        seed: 3,
        profile: None,
        truth,
        state_rate: 20.0,
    })
}

fn config(story_name: &str, input: InputSource) -> SessionConfig {
    let mut c = SessionConfig::new(story(story_name), input);
    c.ui = "127.0.0.1:0".into();
    c.debounce_s = 0.05;
    c
}

struct Reader {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

impl Reader {
    fn connect(addr: SocketAddr) -> Reader {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        }
        Reader { ws }
    }

    fn send(&mut self, v: Value) {
        self.ws.send(Message::text(v.to_string())).unwrap();
    }

    /// Next message of type `ty`, skipping others.
    fn expect(&mut self, ty: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            match self.ws.read() {
                Ok(Message::Text(t)) => {
                    let v: Value = serde_json::from_str(t.as_str()).unwrap();
                    if v["type"] == ty {
                        return v;
                    }
                }
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(e) => panic!("socket error waiting for {ty}: {e}"),
            }
        }
        panic!("no `{ty}` message within 5 s");
    }

    /// Turn pages (first choice when offered) until the story ends. Returns visited knots.
    fn read_to_end(&mut self, pause: Duration) -> Vec<String> {
        let mut page = self.expect("page");
        let mut knots = vec![page["knot"].as_str().unwrap().to_string()];
        while page["finished"] == false {
            sleep(pause);
            if page["choices"].as_array().unwrap().is_empty() {
                self.send(json!({"type": "advance"}));
            } else {
                self.send(json!({"type": "choose", "index": 0}));
            }
            page = self.expect("page");
            let k = page["knot"].as_str().unwrap().to_string();
            if knots.last() != Some(&k) {
                knots.push(k);
            }
        }
        knots
    }
}

fn markers_of(rec: &Recording) -> Vec<Marker> {
    let k = rec.streams.iter().position(|s| s.name == MARKER_STREAM).unwrap();
    rec.samples_of(k).map(|s| s.as_marker().unwrap().parse::<Marker>().unwrap()).collect()
}

fn assert_balanced(markers: &[Marker]) {
    let mut open: BTreeMap<&str, i32> = BTreeMap::new();
    for m in markers {
        match m {
            Marker::TagStart(t) => *open.entry(t).or_default() += 1,
            Marker::TagStop(t) => {
                let n = open.entry(t).or_default();
                *n -= 1;
                assert!(*n >= 0, "TAG_STOP:{t} without start");
            }
            _ => {}
        }
    }
    assert!(open.values().all(|&n| n == 0), "unclosed tags: {open:?}");
}

#[test]
fn scripted_reader_completes_story_with_balanced_marker_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("pets.pif", sim(GroundTruth::default()));
    c.record = Some(dir.path().join("s.pifrec"));
    let session = serve(&c).unwrap();
    let mut reader = Reader::connect(session.ui_addr());
    let hello = reader.expect("hello");
    assert_eq!(hello["policy"], "neuroadaptive");
    assert_eq!(hello["simulator"], true);
    let knots = reader.read_to_end(Duration::from_millis(250));
    assert_eq!(&knots[..3], ["cat", "dog", "decide"]);
    assert!(session.story_finished());
    let summary = session.shutdown().unwrap();
    assert!(summary.finished);

    let rec = Recording::read(dir.path().join("s.pifrec")).unwrap();
    let logged = markers_of(&rec);
    assert_eq!(logged, summary.markers.iter().map(|m| m.1.clone()).collect::<Vec<_>>());
    assert_eq!(logged.first(), Some(&Marker::Story("pets".into())));
    assert_balanced(&logged);
    for tag in ["CAT", "DOG"] {
        assert!(logged.contains(&Marker::TagStart(tag.into())));
        assert!(summary.variables.contains_key(&format!("phys_{}_valence", tag.to_lowercase())));
    }
    assert!(logged.iter().any(|m| matches!(m, Marker::Branch(b) if b == "kitten" || b == "puppy")));
    // signal streams were recorded alongside the markers
    assert!(rec.streams.iter().any(|s| s.name == "eda"));
    assert!(summary.recording.unwrap().total_samples > 1000);
}

#[test]
fn page_turns_inside_debounce_are_rejected() {
    // same-clock engine check: 1.5 s rejected, 2.0 s accepted
    let graph = parse_str("== a ==\none\n---\ntwo\n---\nthree\n").unwrap();
    let mut engine = Engine::new(graph, Default::default(), None, vec![], 2.0, 0.0);
    engine.on_reader(10.0, ReaderAction::Advance).unwrap();
    let err = engine.on_reader(11.5, ReaderAction::Advance).unwrap_err();
    assert!(matches!(err, Rejection::Debounce { elapsed, .. } if (elapsed - 1.5).abs() < 1e-12));
    assert!(matches!(engine.page(), ServerMessage::Page { page_index: 1, .. }));
    engine.on_reader(12.0, ReaderAction::Advance).unwrap();
    assert!(matches!(engine.page(), ServerMessage::Page { page_index: 2, .. }));

    // live: a double press yields exactly one page turn
    let mut c = config("linear.pif", sim(GroundTruth::default()));
    c.debounce_s = 2.0;
    let session = serve(&c).unwrap();
    let mut reader = Reader::connect(session.ui_addr());
    assert_eq!(reader.expect("page")["page_index"], 0);
    reader.send(json!({"type": "advance"}));
    assert_eq!(reader.expect("page")["page_index"], 1);
    reader.send(json!({"type": "advance"}));
    let rejected = reader.expect("rejected");
    assert_eq!(rejected["action"], "advance");
    session.shutdown().unwrap();
}

/// Feed `arousal` on the state stream at 10 Hz over [t0, t1).
fn feed(engine: &mut Engine, t0: f64, t1: f64, arousal: f64) {
    let mut t = t0;
    while t < t1 {
        engine.on_sample(0, &Sample::values(t, vec![arousal]));
        t += 0.1;
    }
}

#[test]
fn tags_closing_on_a_page_turn_feed_the_automatic_choice_it_triggers() {
    let source = StorySource::from_file(story("nested_tags.pif")).unwrap();
    let graph = pif::story::parse(&source).unwrap();
    let state = StreamInfo::signal("state", "test-state", &["arousal"], 10.0);
    let run = |clearing: f64, rest: f64| {
        let mut engine = Engine::new(graph.clone(), Default::default(), None, vec![state.clone()], 0.0, 0.0);
        feed(&mut engine, 0.0, 5.0, clearing);
        engine.on_reader(5.0, ReaderAction::Advance).unwrap();
        feed(&mut engine, 5.0, 10.0, clearing);
        engine.on_reader(10.0, ReaderAction::Advance).unwrap();
        feed(&mut engine, 10.0, 20.0, rest);
        // FOREST closes and the argmin resolves in this one turn
        engine.on_reader(20.0, ReaderAction::Advance).unwrap();
        let forest = engine.variables()["phys_forest_arousal"];
        let clearing_mean = engine.variables()["phys_clearing_arousal"];
        (engine.branches().to_vec(), forest, clearing_mean)
    };
    // clearing calm, forest overall tenser: rest in the clearing
    let (branches, forest, clearing) = run(0.1, 0.9);
    assert!((clearing - 0.1).abs() < 1e-9, "{clearing}");
    assert!((forest - 0.5).abs() < 0.02, "{forest}");
    assert_eq!(branches, ["sun"]);
    let (branches, _, _) = run(0.9, 0.1);
    assert_eq!(branches, ["shade"]);
}

#[test]
fn second_reader_is_rejected() {
    let session = serve(&config("linear.pif", sim(GroundTruth::default()))).unwrap();
    let mut first = Reader::connect(session.ui_addr());
    first.expect("page");
    let mut second = Reader::connect(session.ui_addr());
    let msg = second.expect("rejected");
    assert_eq!(msg["action"], "connect");
    // the first reader is unaffected
    first.send(json!({"type": "advance"}));
    assert_eq!(first.expect("page")["page_index"], 1);
    session.shutdown().unwrap();
}

#[test]
fn slider_steers_the_next_automatic_choice() {
    for (arousal, expected) in [(1.0, "tense"), (0.0, "calm")] {
        let session = serve(&config("threshold.pif", sim(GroundTruth::default()))).unwrap();
        let mut reader = Reader::connect(session.ui_addr());
        reader.expect("page");
        reader.send(json!({"type": "sim", "arousal": arousal}));
        // let the state stream carry the new value before the choice point
        sleep(Duration::from_millis(400));
        reader.send(json!({"type": "advance"}));
        reader.expect("page");
        sleep(Duration::from_millis(100));
        reader.send(json!({"type": "advance"}));
        let page = reader.expect("page");
        assert_eq!(page["knot"], expected, "arousal {arousal}");
        session.shutdown().unwrap();
    }
}

#[test]
fn sim_messages_need_a_simulator_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = pif::simulator::generate(
        &pif::simulator::SubjectProfile::typical("s", 1),
        &Scenario::story_pairs(),
    )
    .unwrap();
    let path = dir.path().join("in.pifrec");
    data.to_recording("rec", 0.0).save(&path).unwrap();
    let input = InputSource::Replay {
        path,
        speed: pif::session::ReplaySpeed::Max,
    };
    let session = serve(&config("linear.pif", input)).unwrap();
    let mut reader = Reader::connect(session.ui_addr());
    assert_eq!(reader.expect("hello")["simulator"], false);
    reader.send(json!({"type": "sim", "arousal": 1.0}));
    assert_eq!(reader.expect("rejected")["action"], "sim");
    session.shutdown().unwrap();
}

fn train_arousal(dir: &Path) -> PathBuf {
    let cohort = make_cohort_with(
        &Scenario::story_pairs(),
        &CohortOptions {
            n_subjects: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let model = fit(&Dataset::from_table(&cohort.table, Construct::arousal())).unwrap();
    let path = dir.join("arousal.json");
    std::fs::write(&path, model.to_json().unwrap()).unwrap();
    path
}

#[test]
fn recorded_session_reproduces_branches_and_variables() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("pets.pif", sim(GroundTruth::default()));
    c.models.insert("arousal".into(), train_arousal(dir.path()));
    c.cadence_s = 0.25;
    c.window_s = 2.0;
    c.record = Some(dir.path().join("s.pifrec"));
    c.reader_log = Some(dir.path().join("reader.jsonl"));
    let session = serve(&c).unwrap();
    let mut reader = Reader::connect(session.ui_addr());
    reader.read_to_end(Duration::from_millis(600));
    let live = session.shutdown().unwrap();
    assert!(live.variables.contains_key("phys_cat_arousal"), "{:?}", live.variables);

    let rec = Recording::read(dir.path().join("s.pifrec")).unwrap();
    let log = read_reader_log(std::io::BufReader::new(std::fs::File::open(dir.path().join("reader.jsonl")).unwrap())).unwrap();
    assert!(log.len() >= 4);
    let graph = pif::story::parse(&StorySource::from_file(story("pets.pif")).unwrap()).unwrap();
    let model = pif::session::load_model("arousal", &dir.path().join("arousal.json")).unwrap();
    let run = || {
        reproduce(
            graph.clone(),
            c.director_config(),
            Some(Estimator::new(vec![ConstructModel::new(model.clone())], c.window_s, c.cadence_s)),
            c.debounce_s,
            &rec,
            &log,
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.branches(), live.branches.as_slice());
    assert_eq!(a.variables(), &live.variables);
    assert_eq!(a.markers(), live.markers.as_slice());
    assert_eq!(b.variables(), a.variables());
    assert!(a.finished());
}

#[test]
fn startup_errors() {
    // port in use
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let mut c = config("linear.pif", sim(GroundTruth::default()));
    c.ui = taken.local_addr().unwrap().to_string();
    assert!(matches!(serve(&c), Err(SessionError::Bind { .. })));

    // story parse failure, reported in lint format
    let bad = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stories/defects/unknown_target.pif");
    let c = SessionConfig {
        story: bad,
        ..config("linear.pif", sim(GroundTruth::default()))
    };
    match serve(&c) {
        Err(e @ SessionError::Story(_)) => {
            assert!(e.is_validation());
            assert!(e.to_string().contains("unknown_target.pif:5:"), "{e}");
        }
        other => panic!("{:?}", other.err()),
    }

    // missing story file
    let c = config("missing.pif", sim(GroundTruth::default()));
    assert!(matches!(serve(&c), Err(SessionError::Io { .. })));

    // a model trained for another construct
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("linear.pif", sim(GroundTruth::default()));
    c.models.insert("valence".into(), train_arousal(dir.path()));
    assert!(matches!(serve(&c), Err(SessionError::ModelMismatch { .. })));
}
