use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use prosody_core::analysis::wer::{bundled_homophones, bundled_minimal_pairs};
use prosody_core::analysis::{wer_report, TargetVowel};
use prosody_core::dsp::{write_wav, AudioBuffer, WavFormat};
use prosody_core::stimgen::{make_trial_batch, BaseStimulus, RandomizerConfig};
use prosody_session::{router, ExperimentConfig, QuestionnaireItem, Service, WerTarget};
use serde_json::{json, Value};
use tower::ServiceExt;

fn validation_config(audio_dir: &std::path::Path) -> ExperimentConfig {
    let bases: Vec<BaseStimulus> = [("peel", "pill"), ("fool", "full"), ("cot", "cut"), ("sheep", "ship")]
        .iter()
        .map(|(a, b)| BaseStimulus {
            id: format!("{a}-{b}"),
            alternatives: (a.to_string(), b.to_string()),
            audio_path: None,
        })
        .collect();
    let trials = make_trial_batch(&bases, 220, &RandomizerConfig::word(3)).unwrap();
    ExperimentConfig {
        v: 1,
        experiment_id: "validation".into(),
        trial_specs: trials,
        manifest: None,
        questionnaire: vec![QuestionnaireItem {
            item_id: "nMOS".into(),
            prompt: "How natural did the speech sound?".into(),
            scale_points: 10,
            required: true,
            locales: BTreeMap::new(),
        }],
        attention_checks: vec![17, 140],
        playback_limit: 1,
        demographics_schema: Default::default(),
        audio_dir: Some(audio_dir.to_path_buf()),
        seed: 11,
        wer_targets: BTreeMap::new(),
    }
}

fn demographics() -> Value {
    json!({
        "v": 1,
        "demographics": {
            "native_language": "French",
            "age": 31,
            "gender": "f",
            "english_proficiency": 4
        }
    })
}

struct Harness {
    app: axum::Router,
    svc: Arc<Service>,
    _dir: tempfile::TempDir,
}

fn harness(cfg: impl FnOnce(&std::path::Path) -> ExperimentConfig) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg(dir.path());
    let svc = Arc::new(Service::new(vec![cfg], dir.path().join("data")).unwrap());
    Harness { app: router(svc.clone()), svc, _dir: dir }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &axum::Router) -> Value {
    let (s, v) = call_json(app, "POST", "/experiments/validation/sessions", Some(demographics())).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

fn answer(next: &Value) -> Value {
    let trial = &next["trial"];
    json!({
        "v": 1,
        "trial_id": trial["trial_id"],
        "choice": trial["option_order"][0],
        "mos": {"nMOS": 7},
        "elapsed_ms": 1500
    })
}

async fn run_to_completion(app: &axum::Router, sid: &str) -> Vec<String> {
    let mut served = Vec::new();
    loop {
        let (s, next) = call_json(app, "GET", &format!("/sessions/{sid}/next"), None).await;
        assert_eq!(s, StatusCode::OK);
        if next["done"] == true {
            break;
        }
        served.push(next["trial"]["trial_id"].as_str().unwrap().to_string());
        let (s, ack) = call_json(app, "POST", &format!("/sessions/{sid}/responses"), Some(answer(&next))).await;
        assert_eq!(s, StatusCode::OK, "{ack}");
    }
    served
}

#[tokio::test]
async fn validation_session_has_220_trials() {
    let h = harness(validation_config);
    let s = new_session(&h.app).await;
    assert_eq!(s["n_trials"], 220);
    assert_eq!(s["cursor"], 0);
    assert_eq!(s["completed"], false);
    assert_eq!(s["v"], 1);
}

#[tokio::test]
async fn missing_proficiency_is_422_listing_the_field() {
    let h = harness(validation_config);
    let mut body = demographics();
    body["demographics"].as_object_mut().unwrap().remove("english_proficiency");
    let (s, v) = call_json(&h.app, "POST", "/experiments/validation/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["missing"], json!(["english_proficiency"]));
}

#[tokio::test]
async fn unknown_experiment_and_bad_version() {
    let h = harness(validation_config);
    let (s, _) = call_json(&h.app, "POST", "/experiments/nope/sessions", Some(demographics())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let mut body = demographics();
    body["v"] = json!(2);
    let (s, _) = call_json(&h.app, "POST", "/experiments/validation/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&h.app, "POST", "/experiments/validation/sessions", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sessions_get_different_orders_over_the_same_trials() {
    let h = harness(validation_config);
    let a = new_session(&h.app).await;
    let b = new_session(&h.app).await;
    assert_ne!(a["seed"], b["seed"]);
    assert_ne!(a["order"], b["order"]);
    let set = |v: &Value| -> BTreeSet<String> {
        v["order"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
    };
    assert_eq!(set(&a), set(&b));
    assert_eq!(set(&a).len(), 220);
}

#[tokio::test]
async fn explicit_seed_reproduces_order() {
    let h = harness(validation_config);
    let mut body = demographics();
    body["seed"] = json!(99);
    let (_, a) = call_json(&h.app, "POST", "/experiments/validation/sessions", Some(body.clone())).await;
    let (_, b) = call_json(&h.app, "POST", "/experiments/validation/sessions", Some(body)).await;
    assert_eq!(a["order"], b["order"]);
    assert_ne!(a["session_id"], b["session_id"]);
}

#[tokio::test]
async fn next_is_idempotent_until_answered() {
    let h = harness(validation_config);
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{sid}/next");
    let (_, first) = call(&h.app, "GET", &uri, None).await;
    let (_, again) = call(&h.app, "GET", &uri, None).await;
    assert_eq!(first, again);
    let first: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(first["trial_index"], 0);
    assert_eq!(
        first["audio_url"],
        format!("/audio/{}?session={sid}", first["trial"]["trial_id"].as_str().unwrap())
    );
    let (s, ack) = call_json(&h.app, "POST", &format!("/sessions/{sid}/responses"), Some(answer(&first))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["cursor"], 1);
    let (_, second) = call_json(&h.app, "GET", &uri, None).await;
    assert_eq!(second["trial_index"], 1);
    assert_ne!(second["trial"]["trial_id"], first["trial"]["trial_id"]);
}

fn peel_pill_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = validation_config(dir);
    cfg.trial_specs.retain(|t| t.base_stimulus_id == "peel-pill");
    cfg.trial_specs.truncate(3);
    cfg.attention_checks = vec![];
    cfg
}

#[tokio::test]
async fn out_of_pair_choice_and_replay_are_rejected() {
    let h = harness(peel_pill_config);
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let (_, next) = call_json(&h.app, "GET", &format!("/sessions/{sid}/next"), None).await;
    let post = format!("/sessions/{sid}/responses");

    let mut bad = answer(&next);
    bad["choice"] = json!("sheep");
    let (s, v) = call_json(&h.app, "POST", &post, Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let mut bad = answer(&next);
    bad["mos"] = json!({"nMOS": 11});
    assert_eq!(call(&h.app, "POST", &post, Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = answer(&next);
    bad["mos"] = json!({});
    assert_eq!(call(&h.app, "POST", &post, Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let good = answer(&next);
    assert_eq!(call(&h.app, "POST", &post, Some(good.clone())).await.0, StatusCode::OK);
    let (s, v) = call_json(&h.app, "POST", &post, Some(good)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("already answered"));

    let (_, next) = call_json(&h.app, "GET", &format!("/sessions/{sid}/next"), None).await;
    let mut stale = answer(&next);
    stale["trial_id"] = json!("not-a-trial");
    assert_eq!(call(&h.app, "POST", &post, Some(stale)).await.0, StatusCode::CONFLICT);

    let export = h.svc.export("validation").unwrap();
    assert_eq!(export.lines().count(), 1);
}

#[tokio::test]
async fn completed_session_reports_done_and_rejects_more() {
    let h = harness(peel_pill_config);
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let served = run_to_completion(&h.app, &sid).await;
    assert_eq!(served.len(), 3);
    let (_, next) = call_json(&h.app, "GET", &format!("/sessions/{sid}/next"), None).await;
    assert_eq!(next, json!({"v": 1, "done": true, "n_trials": 3}));
    let body = json!({"v": 1, "trial_id": served[0], "choice": "peel", "mos": {"nMOS": 3}});
    let (s, _) = call(&h.app, "POST", &format!("/sessions/{sid}/responses"), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn completed_session_logs_each_trial_once() {
    let h = harness(validation_config);
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let served = run_to_completion(&h.app, &sid).await;
    let export = h.svc.export("validation").unwrap();
    let rows: Vec<Value> = export.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 220);
    let ids: Vec<&str> = rows.iter().map(|r| r["trial_id"].as_str().unwrap()).collect();
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 220);
    assert_eq!(ids, served.iter().map(String::as_str).collect::<Vec<_>>());
    let configured: BTreeSet<String> =
        h.svc.experiment("validation").unwrap().trial_specs.iter().map(|t| t.trial_id.clone()).collect();
    assert_eq!(served.into_iter().collect::<BTreeSet<_>>(), configured);

    let flagged: Vec<&Value> = rows.iter().filter(|r| r["attention_check"] == true).collect();
    assert_eq!(flagged.len(), 2);
    let cfg = h.svc.experiment("validation").unwrap();
    let expect: BTreeSet<&str> = [17, 140].iter().map(|&i| cfg.trial_specs[i].trial_id.as_str()).collect();
    let got: BTreeSet<&str> = flagged.iter().map(|r| r["trial_id"].as_str().unwrap()).collect();
    assert_eq!(got, expect);

    // field order is fixed
    let keys: Vec<&str> = export.lines().next().unwrap().split("\":").map(|k| k.rsplit('"').next().unwrap()).collect();
    assert_eq!(
        &keys[..keys.len() - 1],
        &[
            "v", "session_id", "participant_id", "experiment_id", "trial_id", "trial_index", "choice", "mos", "nMOS",
            "elapsed_ms", "received_at", "attention_check"
        ]
    );
}

#[tokio::test]
async fn export_is_a_growing_prefix() {
    let h = harness(validation_config);
    let (s, empty) = call(&h.app, "GET", "/experiments/validation/export", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(empty.is_empty());
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let mut last = Vec::new();
    for _ in 0..4 {
        let (_, next) = call_json(&h.app, "GET", &format!("/sessions/{sid}/next"), None).await;
        call(&h.app, "POST", &format!("/sessions/{sid}/responses"), Some(answer(&next))).await;
        let (_, now) = call(&h.app, "GET", "/experiments/validation/export", None).await;
        assert!(now.starts_with(&last) && now.len() > last.len());
        last = now;
    }
}

#[tokio::test]
async fn audio_is_playback_limited() {
    let h = harness(|dir| {
        let cfg = peel_pill_config(dir);
        let tone = AudioBuffer::sine(220.0, 0.3, 0.2, 16000);
        for t in &cfg.trial_specs[..2] {
            write_wav(&tone, dir.join(format!("{}.wav", t.trial_id)), WavFormat::Pcm16).unwrap();
        }
        cfg
    });
    let cfg = h.svc.experiment("validation").unwrap().clone();
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let t0 = &cfg.trial_specs[0].trial_id;

    let (s, _) = call(&h.app, "GET", &format!("/audio/{t0}"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, wav) = call(&h.app, "GET", &format!("/audio/{t0}?session={sid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&wav[..4], b"RIFF");
    let (s, _) = call(&h.app, "GET", &format!("/audio/{t0}?session={sid}"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    // the limit is per session
    let other = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    assert_eq!(call(&h.app, "GET", &format!("/audio/{t0}?session={other}"), None).await.0, StatusCode::OK);

    let t2 = &cfg.trial_specs[2].trial_id;
    assert_eq!(call(&h.app, "GET", &format!("/audio/{t2}?session={sid}"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&h.app, "GET", &format!("/audio/zzz?session={sid}"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&h.app, "GET", &format!("/audio/{t0}?session=zzz"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn restart_resumes_sessions_and_playback_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = peel_pill_config(dir.path());
    let t0 = cfg.trial_specs[0].trial_id.clone();
    write_wav(&AudioBuffer::silence(0.1, 8000), dir.path().join(format!("{t0}.wav")), WavFormat::Pcm16).unwrap();
    let data = dir.path().join("data");
    let (sid, first) = {
        let svc = Arc::new(Service::new(vec![cfg.clone()], &data).unwrap());
        let app = router(svc);
        let s = new_session(&app).await;
        let sid = s["session_id"].as_str().unwrap().to_string();
        let (_, next) = call_json(&app, "GET", &format!("/sessions/{sid}/next"), None).await;
        call(&app, "GET", &format!("/audio/{t0}?session={sid}"), None).await;
        call(&app, "POST", &format!("/sessions/{sid}/responses"), Some(answer(&next))).await;
        (sid, s)
    };
    let svc = Arc::new(Service::new(vec![cfg], &data).unwrap());
    let state = svc.session(&sid).unwrap();
    assert_eq!(state.cursor, 1);
    assert_eq!(serde_json::to_value(&state.order).unwrap(), first["order"]);
    let app = router(svc);
    assert_eq!(call(&app, "GET", &format!("/audio/{t0}?session={sid}"), None).await.0, StatusCode::FORBIDDEN);
    let (_, next) = call_json(&app, "GET", &format!("/sessions/{sid}/next"), None).await;
    assert_eq!(next["trial_index"], 1);
    // a new session after restart still gets a fresh order seed
    let s2 = new_session(&app).await;
    assert_ne!(s2["seed"], first["seed"]);
}

#[tokio::test]
async fn concurrent_sessions_do_not_interfere() {
    let h = harness(peel_pill_config);
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let app = h.app.clone();
        tasks.push(tokio::spawn(async move {
            let sid = new_session(&app).await["session_id"].as_str().unwrap().to_string();
            run_to_completion(&app, &sid).await.len()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), 3);
    }
    let export = h.svc.export("validation").unwrap();
    assert_eq!(export.lines().count(), 24);
    assert!(export.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[tokio::test]
async fn export_feeds_wer_like_the_direct_path() {
    let h = harness(|dir| {
        let mut cfg = peel_pill_config(dir);
        cfg.trial_specs = make_trial_batch(
            &[BaseStimulus { id: "peel-pill".into(), alternatives: ("peel".into(), "pill".into()), audio_path: None }],
            40,
            &RandomizerConfig::word(5),
        )
        .unwrap();
        for (i, t) in cfg.trial_specs.iter().enumerate() {
            let (style, word, class) = match i % 4 {
                0 => ("base", "peel", TargetVowel::Tense),
                1 => ("clarity", "peel", TargetVowel::Tense),
                2 => ("base", "pill", TargetVowel::Lax),
                _ => ("stretch", "pill", TargetVowel::Lax),
            };
            cfg.wer_targets.insert(
                t.trial_id.clone(),
                WerTarget { style: style.into(), target_word: word.into(), vowel_class: class },
            );
        }
        cfg
    });
    let cfg = h.svc.experiment("validation").unwrap().clone();
    let sid = new_session(&h.app).await["session_id"].as_str().unwrap().to_string();
    let mut direct = Vec::new();
    for k in 0.. {
        let (_, next) = call_json(&h.app, "GET", &format!("/sessions/{sid}/next"), None).await;
        if next["done"] == true {
            break;
        }
        let mut body = answer(&next);
        let tid = next["trial"]["trial_id"].as_str().unwrap();
        let target = &cfg.wer_targets[tid];
        let choice = if k % 3 == 0 { if target.target_word == "peel" { "pill" } else { "peel" } } else { &target.target_word };
        body["choice"] = json!(choice);
        direct.push(prosody_core::analysis::WerResponse {
            style: target.style.clone(),
            target_word: target.target_word.clone(),
            chosen_word: choice.to_string(),
            vowel_class: target.vowel_class,
        });
        assert_eq!(call(&h.app, "POST", &format!("/sessions/{sid}/responses"), Some(body)).await.0, StatusCode::OK);
    }
    let (mp, hp) = (bundled_minimal_pairs(), bundled_homophones());
    let (_, export) = call(&h.app, "GET", "/experiments/validation/export", None).await;
    let via_export = prosody_session::wer_responses_from_export(std::str::from_utf8(&export).unwrap(), &cfg).unwrap();
    assert_eq!(wer_report(&via_export, &mp, &hp).unwrap(), wer_report(&direct, &mp, &hp).unwrap());
    assert!(wer_report(&direct, &mp, &hp).unwrap().per_style.values().any(|c| c.errors > 0));
}
