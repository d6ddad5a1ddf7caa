use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::os::unix::net::UnixStream;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use rankcascade::eval;
use rankcascade::pipeline::{
    builtin_overlap_score, builtin_pair_score, Aggregation, DuoConfig, Endpoint, Engine, ExternalScorer,
    MonoConfig, PairwiseScorer, PipelineConfig, PointwiseScorer, RetrievalMode, ScoreRequest, ScorerError,
    ScorerSpec,
};
use rankcascade::synthetic::{generate, SyntheticSpec};
use rankcascade::{Error, Stage};

#[derive(Clone, Copy, PartialEq)]
enum Behavior {
    /// Mirror the builtin scorer; answer each burst of requests in reverse.
    Mirror,
    /// Never answer request ids divisible by 3.
    DropSome,
    /// Answer the first burst only after `LATE`, then behave.
    LateFirstBurst,
    ErrorField,
    OutOfRange,
    UnknownId,
    MissingId,
    NotReady,
}

const LATE: Duration = Duration::from_millis(400);

fn answer(req: &Value) -> f64 {
    let q = req["query"].as_str().unwrap();
    let a = req["doc"].as_str().unwrap();
    match req["kind"].as_str().unwrap() {
        "mono" => builtin_overlap_score(q, a),
        "duo" => builtin_pair_score(q, a, req["doc_b"].as_str().unwrap()),
        k => panic!("unexpected kind {k}"),
    }
}

fn response(req: &Value, behavior: Behavior) -> Option<Value> {
    let id = req["id"].as_u64().unwrap();
    Some(match behavior {
        Behavior::DropSome if id.is_multiple_of(3) => return None,
        Behavior::ErrorField => json!({"id": id, "error": "model exploded"}),
        Behavior::OutOfRange => json!({"id": id, "score": 1.5}),
        Behavior::UnknownId => json!({"id": id + 1_000_000, "score": 0.5}),
        Behavior::MissingId => json!({"score": 0.5}),
        _ => json!({"id": id, "score": answer(req)}),
    })
}

/// Serve one connection until the client hangs up.
fn serve<R: Read + Send + 'static, W: Write>(reader: R, mut writer: W, behavior: Behavior) {
    let ready = behavior != Behavior::NotReady;
    if writeln!(writer, "{}", json!({"ready": ready, "tag": "mock"})).is_err() {
        return;
    }
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut pending: Vec<Value> = Vec::new();
    let mut bursts = 0;
    loop {
        match rx.recv_timeout(Duration::from_millis(15)) {
            Ok(line) => pending.push(serde_json::from_str(&line).unwrap()),
            Err(RecvTimeoutError::Timeout) if !pending.is_empty() => {
                if behavior == Behavior::LateFirstBurst && bursts == 0 {
                    thread::sleep(LATE);
                }
                bursts += 1;
                for req in pending.drain(..).rev() {
                    if let Some(resp) = response(&req, behavior) {
                        if writeln!(writer, "{resp}").is_err() {
                            return;
                        }
                    }
                }
                let _ = writer.flush();
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

fn tcp_mock(behavior: Behavior) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let reader = stream.try_clone().unwrap();
            thread::spawn(move || serve(reader, stream, behavior));
        }
    });
    format!("tcp://{addr}")
}

fn connect(behavior: Behavior, timeout: Duration) -> Result<ExternalScorer, ScorerError> {
    ExternalScorer::connect(&tcp_mock(behavior).parse().unwrap(), timeout)
}

fn pair_connect(behavior: Behavior, timeout: Duration) -> Result<ExternalScorer, ScorerError> {
    let (client, server) = UnixStream::pair().unwrap();
    let server_reader = server.try_clone().unwrap();
    thread::spawn(move || serve(server_reader, server, behavior));
    ExternalScorer::from_streams(client.try_clone().unwrap(), client, timeout)
}

const QUERY: &str = "red fox jumps";
const DOCS: [&str; 5] = [
    "The red fox.",
    "A fox jumps over the red dog.",
    "Nothing relevant here.",
    "jumps jumps jumps",
    "red",
];

fn requests(ids: std::ops::Range<u64>) -> Vec<ScoreRequest> {
    ids.map(|id| ScoreRequest {
        id,
        kind: rankcascade::pipeline::external::RequestKind::Mono,
        query: QUERY.into(),
        doc: DOCS[id as usize % DOCS.len()].into(),
        doc_b: None,
    })
    .collect()
}

#[test]
fn tcp_mono_matches_builtin_despite_reordering() {
    let scorer = connect(Behavior::Mirror, Duration::from_secs(5)).unwrap();
    assert_eq!(scorer.tag(), "mock");
    let got = PointwiseScorer::score(&scorer, QUERY, &DOCS).unwrap();
    let want: Vec<f64> = DOCS.iter().map(|d| builtin_overlap_score(QUERY, d)).collect();
    assert_eq!(got, want);
}

#[test]
fn duo_over_socket_pair_is_exactly_antisymmetric() {
    let scorer = pair_connect(Behavior::Mirror, Duration::from_secs(5)).unwrap();
    let mut pairs = Vec::new();
    for a in DOCS {
        for b in DOCS {
            if a != b {
                pairs.push((a, b));
            }
        }
    }
    let got = scorer.score_pairs(QUERY, &pairs).unwrap();
    for (i, &(a, b)) in pairs.iter().enumerate() {
        assert_eq!(got[i], builtin_pair_score(QUERY, a, b));
        let j = pairs.iter().position(|&(x, y)| x == b && y == a).unwrap();
        assert_eq!(got[i] + got[j], 1.0);
    }
}

#[test]
fn responses_come_back_in_request_order() {
    let scorer = pair_connect(Behavior::Mirror, Duration::from_secs(5)).unwrap();
    let reqs = requests(40..60);
    let resp = scorer.score_batch(&reqs).unwrap();
    assert_eq!(resp.iter().map(|r| r.id).collect::<Vec<_>>(), (40..60).collect::<Vec<_>>());
    for (r, q) in resp.iter().zip(&reqs) {
        assert_eq!(r.score, builtin_overlap_score(&q.query, &q.doc));
    }
}

#[test]
fn timeout_reports_pending_ids() {
    let scorer = connect(Behavior::DropSome, Duration::from_millis(300)).unwrap();
    let start = Instant::now();
    match scorer.score_batch(&requests(1..8)) {
        Err(ScorerError::Timeout { pending, answered }) => {
            assert_eq!(pending, vec![3, 6]);
            assert_eq!(answered, 5);
        }
        other => panic!("expected timeout, got {other:?}"),
    }
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn late_answers_to_abandoned_ids_are_ignored() {
    let scorer = pair_connect(Behavior::LateFirstBurst, Duration::from_millis(150)).unwrap();
    assert!(matches!(scorer.score_batch(&requests(1..4)), Err(ScorerError::Timeout { .. })));
    // wait for the stale answers to land before the next batch reads
    thread::sleep(LATE);
    let resp = scorer.score_batch(&requests(10..14)).unwrap();
    assert_eq!(resp.iter().map(|r| r.id).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
}

#[test]
fn protocol_violations_are_errors() {
    for behavior in [Behavior::ErrorField, Behavior::OutOfRange, Behavior::UnknownId, Behavior::MissingId] {
        let scorer = connect(behavior, Duration::from_secs(2)).unwrap();
        let err = scorer.score_batch(&requests(1..3)).unwrap_err();
        assert!(matches!(err, ScorerError::Protocol(_)), "{err:?}");
    }
    let scorer = pair_connect(Behavior::Mirror, Duration::from_secs(2)).unwrap();
    let mut dup = requests(1..3);
    dup[1].id = 1;
    assert!(matches!(scorer.score_batch(&dup), Err(ScorerError::Protocol(_))));
}

#[test]
fn handshake_failures() {
    assert!(matches!(
        pair_connect(Behavior::NotReady, Duration::from_secs(1)),
        Err(ScorerError::Protocol(_))
    ));
    // a peer that never speaks
    let (client, _server) = UnixStream::pair().unwrap();
    let r = ExternalScorer::from_streams(client.try_clone().unwrap(), client, Duration::from_millis(100));
    assert!(matches!(r, Err(ScorerError::Unreachable(_))));
}

#[test]
fn stdio_child_process() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("half.sh");
    std::fs::write(
        &script,
        "echo '{\"ready\": true, \"tag\": \"half\"}'\n\
         while read -r line; do\n\
           id=$(printf '%s' \"$line\" | sed 's/.*\"id\":\\([0-9]*\\).*/\\1/')\n\
           echo \"{\\\"id\\\": $id, \\\"score\\\": 0.5}\"\n\
         done\n",
    )
    .unwrap();
    let ep: Endpoint = format!("stdio:sh {}", script.display()).parse().unwrap();
    let scorer = ExternalScorer::connect(&ep, Duration::from_secs(5)).unwrap();
    assert_eq!(scorer.tag(), "half");
    assert_eq!(PointwiseScorer::score(&scorer, QUERY, &DOCS).unwrap(), vec![0.5; 5]);
    let ep: Endpoint = "stdio:/nonexistent/scorer-binary".parse().unwrap();
    assert!(matches!(
        ExternalScorer::connect(&ep, Duration::from_secs(1)),
        Err(ScorerError::Unreachable(_))
    ));
}

fn cascade_config(mono: ScorerSpec, duo: ScorerSpec) -> PipelineConfig {
    PipelineConfig {
        mode: RetrievalMode::Hybrid,
        k_sparse: 100,
        k_dense: 100,
        mono: Some(MonoConfig { depth: 30, scorer: mono }),
        duo: Some(DuoConfig {
            depth: 8,
            aggregation: Aggregation::SymSum,
            scorer: duo,
        }),
        ..PipelineConfig::default()
    }
}

fn run_bytes(cfg: &PipelineConfig) -> Result<Vec<u8>, Error> {
    let spec = SyntheticSpec {
        passages: 300,
        queries: 12,
        mismatch: 3,
        ..SyntheticSpec::default()
    };
    let run = Engine::from_data(cfg, generate(&spec).engine_data())?.run()?;
    let mut out = Vec::new();
    eval::write_run(&run, &mut out).unwrap();
    Ok(out)
}

#[test]
fn cascade_with_external_mirror_equals_builtin() {
    let builtin = run_bytes(&cascade_config(ScorerSpec::builtin(), ScorerSpec::builtin())).unwrap();
    let ep = tcp_mock(Behavior::Mirror);
    let external = run_bytes(&cascade_config(ScorerSpec::external(&ep), ScorerSpec::external(&ep))).unwrap();
    assert_eq!(builtin, external);
}

#[test]
fn stage_failures_name_the_stage() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dead = format!("tcp://127.0.0.1:{port}");
    match run_bytes(&cascade_config(ScorerSpec::external(&dead), ScorerSpec::builtin())) {
        Err(e @ Error::Stage(_)) => {
            assert_eq!(e.exit_code(), 3);
            let Error::Stage(f) = e else { unreachable!() };
            assert_eq!(f.stage, Stage::Mono);
        }
        other => panic!("expected stage failure, got {other:?}"),
    }
    let erroring = tcp_mock(Behavior::ErrorField);
    match run_bytes(&cascade_config(ScorerSpec::builtin(), ScorerSpec::external(&erroring))) {
        Err(Error::Stage(f)) => {
            assert_eq!(f.stage, Stage::Duo);
            assert!(f.attempted > 0);
        }
        other => panic!("expected duo failure, got {other:?}"),
    }
}
