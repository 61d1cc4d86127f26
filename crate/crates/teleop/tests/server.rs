use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tdcr_core::store::{read_store, StoreWriter};
use tdcr_core::tasks::DemoSource;
use tdcr_teleop::protocol::{ClientMsg, ErrorCode, RecordAction, ServerMsg, Surface};
use tdcr_teleop::session::{DemoSink, ServerConfig, TeleopSettings};
use tdcr_teleop::{Client, Server};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

fn presets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

struct Running {
    url: String,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Running {
    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        tokio::time::timeout(Duration::from_secs(10), self.handle).await.expect("server stops").unwrap().unwrap();
    }
}

async fn start(store: PathBuf) -> Running {
    let sink: Arc<Mutex<dyn DemoSink>> = Arc::new(Mutex::new(StoreWriter::open(store).unwrap()));
    let config = ServerConfig {
        preset_dirs: vec![presets()],
        default_task: Some("eight".into()),
        default_robot: None,
        settings: TeleopSettings::default(),
        sink,
    };
    let server = Server::bind("127.0.0.1:0", config).await.unwrap();
    let url = format!("ws://{}", server.local_addr().unwrap());
    let (stop, rx) = oneshot::channel();
    let handle = tokio::spawn(server.run_until(async {
        let _ = rx.await;
    }));
    Running { url, stop, handle }
}

async fn init(client: &mut Client, task: Option<&str>) -> ServerMsg {
    let env = client.request(&ClientMsg::Init { task: task.map(Into::into), robot: None }).await.unwrap();
    assert!(matches!(client.recv().await.unwrap(), ServerMsg::State { .. }));
    env
}

#[tokio::test(flavor = "multi_thread")]
async fn connect_and_disconnect_leave_the_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("demos.jsonl");
    let server = start(store.clone()).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    init(&mut client, None).await;
    client.close().await.unwrap();
    server.shutdown().await;
    assert!(!store.exists());
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_with_a_client_still_connected() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path().join("demos.jsonl")).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    init(&mut client, None).await;
    server.shutdown().await;
    assert!(client.recv().await.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn one_recorded_session_appends_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("demos.jsonl");
    let server = start(store.clone()).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    init(&mut client, Some("eight")).await;
    assert!(matches!(client.request(&ClientMsg::Context { values: vec![0.0, 0.13, 0.06, 0.03, 0.02] }).await.unwrap(), ServerMsg::Env { .. }));
    let started = client.request(&ClientMsg::Record { action: RecordAction::Start }).await.unwrap();
    assert!(matches!(started, ServerMsg::State { recording: true, .. }));
    for i in 0..40 {
        let t = i as f64 / 39.0;
        let reply = client.request(&ClientMsg::Target { p: [-0.02 + 0.04 * t, 0.13, 0.05] }).await.unwrap();
        assert!(matches!(reply, ServerMsg::State { recording: true, .. }));
    }
    client.request(&ClientMsg::Record { action: RecordAction::Stop }).await.unwrap();
    let saved = client.request(&ClientMsg::Record { action: RecordAction::Save }).await.unwrap();
    assert_eq!(saved, ServerMsg::Saved { index: 0 });
    client.close().await.unwrap();
    server.shutdown().await;
    let demos = read_store(&store).unwrap();
    assert_eq!(demos.len(), 1);
    assert_eq!(demos[0].meta.source, DemoSource::Teleop);
}

#[tokio::test(flavor = "multi_thread")]
async fn anatomy_sessions_receive_the_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path().join("demos.jsonl")).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    match init(&mut client, Some("anatomy")).await {
        ServerMsg::Env { version, descriptor } => {
            assert_eq!(version, tdcr_teleop::PROTOCOL_VERSION);
            assert_eq!(descriptor.schema, "anatomy");
            match descriptor.surface {
                Surface::Mesh { vertices, triangles } => {
                    assert!(vertices.len() > 100);
                    assert!(triangles.iter().flatten().all(|&i| i < vertices.len()));
                }
                other => panic!("expected a mesh, got {other:?}"),
            }
        }
        other => panic!("expected env, got {other:?}"),
    }
    client.close().await.unwrap();
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn protocol_errors_keep_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path().join("demos.jsonl")).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    let err = client.request(&ClientMsg::Target { p: [0.0, 0.13, 0.06] }).await.unwrap();
    assert!(matches!(err, ServerMsg::Error { code: ErrorCode::NotInitialized, .. }));
    init(&mut client, None).await;
    client.send_text("[]").await.unwrap();
    assert!(matches!(client.recv().await.unwrap(), ServerMsg::Error { code: ErrorCode::Malformed, .. }));
    client.send_text(r#"{"type":"target"}"#).await.unwrap();
    assert!(matches!(client.recv().await.unwrap(), ServerMsg::Error { code: ErrorCode::Malformed, .. }));
    let ok = client.request(&ClientMsg::Target { p: [0.0, 0.13, 0.06] }).await.unwrap();
    assert!(matches!(ok, ServerMsg::State { .. }));
    client.close().await.unwrap();
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path().join("demos.jsonl")).await;
    let mut a = Client::connect(&server.url).await.unwrap();
    let mut b = Client::connect(&server.url).await.unwrap();
    init(&mut a, None).await;
    init(&mut b, None).await;
    a.request(&ClientMsg::Record { action: RecordAction::Start }).await.unwrap();
    let other = b.request(&ClientMsg::Target { p: [0.0, 0.13, 0.06] }).await.unwrap();
    assert!(matches!(other, ServerMsg::State { recording: false, .. }));
    a.close().await.unwrap();
    b.close().await.unwrap();
    server.shutdown().await;
}

async fn playback_frames(client: &mut Client, model: &str, cadence_ms: u64) -> (usize, Duration) {
    let started = Instant::now();
    client
        .send(&ClientMsg::Playback { model: model.into(), context: vec![0.0, 0.13, 0.06, 0.03, 0.02], cadence_ms: Some(cadence_ms) })
        .await
        .unwrap();
    assert!(matches!(client.recv().await.unwrap(), ServerMsg::Env { descriptor, .. } if descriptor.predicted.is_some()));
    let mut states = 0;
    loop {
        match client.recv().await.unwrap() {
            ServerMsg::State { .. } => states += 1,
            ServerMsg::Ack { of } if of == "playback" => break,
            other => panic!("unexpected {other:?}"),
        }
    }
    (states, started.elapsed())
}

#[tokio::test(flavor = "multi_thread")]
async fn playback_streams_one_state_per_waypoint() {
    use tdcr_core::learning::{train_model, ModelHyper};
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("demos.jsonl");
    let server = start(store.clone()).await;
    let mut client = Client::connect(&server.url).await.unwrap();
    init(&mut client, None).await;
    client.request(&ClientMsg::Context { values: vec![0.0, 0.13, 0.06, 0.03, 0.02] }).await.unwrap();
    client.request(&ClientMsg::Record { action: RecordAction::Start }).await.unwrap();
    for i in 0..30 {
        client.request(&ClientMsg::Target { p: [-0.02 + 0.04 * i as f64 / 29.0, 0.13, 0.06] }).await.unwrap();
    }
    client.request(&ClientMsg::Record { action: RecordAction::Stop }).await.unwrap();
    client.request(&ClientMsg::Record { action: RecordAction::Save }).await.unwrap();
    let data = tdcr_core::store::training_set(&read_store(&store).unwrap()).unwrap();
    let model_path = dir.path().join("model.json");
    train_model(&data, &ModelHyper::Linear { alpha: 1e-6 }).unwrap().save(&model_path).unwrap();
    let model = model_path.to_str().unwrap();

    let (burst, _) = playback_frames(&mut client, model, 0).await;
    assert_eq!(burst, 50);
    let (paced, elapsed) = playback_frames(&mut client, model, 5).await;
    assert_eq!(paced, 50);
    assert!(elapsed >= Duration::from_millis(5 * 49), "paced playback took {elapsed:?}");
    client.close().await.unwrap();
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn port_in_use_fails_to_bind() {
    let dir = tempfile::tempdir().unwrap();
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let sink: Arc<Mutex<dyn DemoSink>> = Arc::new(Mutex::new(StoreWriter::open(dir.path().join("d.jsonl")).unwrap()));
    let config = ServerConfig { preset_dirs: vec![], default_task: None, default_robot: None, settings: TeleopSettings::default(), sink };
    assert!(Server::bind(addr, config).await.is_err());
}
