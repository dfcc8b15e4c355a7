use std::time::Duration;

use super::*;
use crate::vlm::mock::default_extraction_fixture;

fn caption_request(image_id: &str) -> VlmRequest {
    VlmRequest {
        system_prompt: "sys".into(),
        user_prompt: "Provide a description based on the following image.".into(),
        images: vec![ImageRef::id_only(image_id)],
        schema: ResponseSchema::Caption,
        questions: Vec::new(),
    }
}

fn boolean_request(image_id: &str, questions: &[&str]) -> VlmRequest {
    VlmRequest {
        system_prompt: "sys".into(),
        user_prompt: format!("Answer: {}", questions.join("; ")),
        images: vec![ImageRef::id_only(image_id)],
        schema: ResponseSchema::BooleanMap(questions.len()),
        questions: questions.iter().map(|q| q.to_string()).collect(),
    }
}

#[test]
fn mock_captions_are_stable_fixtures() {
    let vlm = MockVlm::with_seed(5);
    let r1 = vlm.query(&caption_request("img-001")).unwrap();
    let r2 = vlm.query(&caption_request("img-001")).unwrap();
    assert_eq!(r1.raw_text, r2.raw_text);
    let fresh = MockVlm::with_seed(5);
    let r3 = fresh.query(&caption_request("img-001")).unwrap();
    assert_eq!(r1.raw_text, r3.raw_text);
    match r1.payload {
        ParsedPayload::Caption(text) => assert!(!text.is_empty()),
        other => panic!("expected caption, got {other:?}"),
    }
}

#[test]
fn mock_extraction_returns_configured_list_in_order() {
    let vlm = MockVlm::with_seed(0);
    let request = VlmRequest {
        system_prompt: "sys".into(),
        user_prompt: "Provide conditions based on the following images and their captions.".into(),
        images: vec![ImageRef::id_only("a"), ImageRef::id_only("b")],
        schema: ResponseSchema::ConditionList,
        questions: Vec::new(),
    };
    match vlm.query(&request).unwrap().payload {
        ParsedPayload::ConditionList(qs) => assert_eq!(qs, default_extraction_fixture()),
        other => panic!("expected condition list, got {other:?}"),
    }
}

#[test]
fn boolean_map_schema_is_validated_strictly() {
    // Missing key.
    let err = parse_response(r#"{"1": true, "2": false}"#, &ResponseSchema::BooleanMap(3))
        .unwrap_err();
    assert!(matches!(err, crate::VlmError::SchemaViolation { .. }));
    // Extraneous key.
    let err = parse_response(
        r#"{"1": true, "2": false, "3": true, "4": false}"#,
        &ResponseSchema::BooleanMap(3),
    )
    .unwrap_err();
    assert!(err.to_string().contains("exactly 3"));
    // Accepts quoted True/False as booleans.
    let ok = parse_response(r#"{"1": "True", "2": "false"}"#, &ResponseSchema::BooleanMap(2))
        .unwrap();
    assert_eq!(ok, ParsedPayload::BooleanMap(vec![true, false]));
    // Non-boolean value is rejected.
    assert!(parse_response(r#"{"1": 1}"#, &ResponseSchema::BooleanMap(1)).is_err());
}

#[test]
fn fenced_json_is_accepted() {
    let raw = "```json\n{\"Conditions\": \"a scene\"}\n```";
    assert_eq!(
        parse_response(raw, &ResponseSchema::Caption).unwrap(),
        ParsedPayload::Caption("a scene".into())
    );
}

#[test]
fn mock_boolean_answers_parse_and_repeat() {
    let vlm = MockVlm::with_seed(9);
    let req = boolean_request("img-7", &["Is it dark?", "Is it raining?", "Is it blurry?"]);
    let r = vlm.query(&req).unwrap();
    let ParsedPayload::BooleanMap(bits) = r.payload else { panic!() };
    assert_eq!(bits.len(), 3);
    // Zero flip probability: answers are identical on every repeat.
    for _ in 0..5 {
        let again = vlm.query(&req).unwrap();
        assert_eq!(again.payload, ParsedPayload::BooleanMap(bits.clone()));
    }
}

#[test]
fn noisy_mock_flip_rate_matches_configured_probability() {
    let base = MockVlm::with_seed(11);
    let noisy = MockVlm::new(MockVlmConfig {
        seed: 11,
        uniform_flip: 0.1,
        ..MockVlmConfig::default()
    });
    let req = boolean_request("img-flip", &["Is the scene dark?"]);
    let ParsedPayload::BooleanMap(base_bits) = base.query(&req).unwrap().payload else {
        panic!()
    };
    let mut flips = 0usize;
    let n = 1000;
    for _ in 0..n {
        let ParsedPayload::BooleanMap(bits) = noisy.query(&req).unwrap().payload else {
            panic!()
        };
        if bits[0] != base_bits[0] {
            flips += 1;
        }
    }
    let rate = flips as f64 / n as f64;
    assert!((rate - 0.1).abs() <= 0.02, "flip rate {rate}");
}

#[test]
fn malformed_ids_produce_schema_violations() {
    let vlm = MockVlm::new(MockVlmConfig {
        malformed_ids: vec!["broken".into()],
        ..MockVlmConfig::default()
    });
    assert!(vlm.query(&caption_request("broken")).is_err());
    assert!(vlm.query(&caption_request("fine")).is_ok());
}

#[test]
fn benchmark_measures_injected_delay() {
    let vlm = MockVlm::new(MockVlmConfig {
        delay: Some(Duration::from_millis(10)),
        ..MockVlmConfig::default()
    });
    let images: Vec<ImageRef> = (0..5).map(|i| ImageRef::id_only(format!("img{i}"))).collect();
    let profile = benchmark_backend(&vlm, &images, "sys", "user").unwrap();
    assert!(profile.secs_per_image >= 0.008, "{}", profile.secs_per_image);
    assert!(profile.secs_per_image < 0.1, "{}", profile.secs_per_image);

    let second = benchmark_backend(&vlm, &images, "sys", "user").unwrap();
    let ratio = profile.secs_per_image / second.secs_per_image;
    assert!((0.5..=2.0).contains(&ratio), "profiles diverged: {ratio}");
}

#[test]
fn benchmark_rejects_zero_images() {
    let vlm = MockVlm::with_seed(0);
    assert!(benchmark_backend(&vlm, &[], "sys", "user").is_err());
}

#[test]
fn boolean_map_request_validation() {
    let bad = VlmRequest {
        system_prompt: String::new(),
        user_prompt: String::new(),
        images: vec![],
        schema: ResponseSchema::BooleanMap(0),
        questions: Vec::new(),
    };
    assert!(bad.validate().is_err());
    let mismatched = VlmRequest {
        schema: ResponseSchema::BooleanMap(2),
        questions: vec!["only one".into()],
        ..bad
    };
    assert!(mismatched.validate().is_err());
}
