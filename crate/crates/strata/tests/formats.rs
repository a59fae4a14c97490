use std::io::Write as _;
use std::path::Path;

use strata::checkpoint::{load_encoder, save_encoder};
use strata::config::{parse_override, RunConfig};
use strata::dataset::{ingest_csv, load_dataset, read_records, save_dataset, CsvSchema};
use strata::error::{exit_code, Error};
use strata::kbfile::{load_kb, load_manifest, save_kb};
use strata::tokens::{import_external_tokens, load_tokens, save_tokens, tokens_sha256};
use strata_core::data::{generate_synthetic_city, SyntheticProfile};
use strata_core::encoder::{Encoder, EncoderConfig};
use strata_core::forecast::{enumerate_windows, generate_tokens, SeasonalNaive};
use strata_core::kb::{EmbeddingRetriever, KnowledgeBase, Retriever};

fn write(path: &Path, text: &str) {
    std::fs::File::create(path).unwrap().write_all(text.as_bytes()).unwrap();
}

fn small_encoder() -> Encoder {
    Encoder::new(EncoderConfig {
        embed_dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 16,
        ..EncoderConfig::default()
    })
    .unwrap()
}

const HEADER: &str = "timestamp,node_id,available,capacity\n";

#[test]
fn four_row_csv_ingests_to_length_four() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    write(
        &csv,
        &format!(
            "{HEADER}2022-01-03T00:00:00Z,A,10,50\n2022-01-03T00:15:00Z,A,12,50\n2022-01-03T00:30:00Z,A,11,50\n2022-01-03T00:45:00Z,A,9,50\n"
        ),
    );
    let ds = ingest_csv(&csv, &CsvSchema::default(), "c", 15, 4, &Default::default()).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.nodes[0].values, vec![Some(10), Some(12), Some(11), Some(9)]);
    let out = dir.path().join("c.json");
    save_dataset(&out, &ds).unwrap();
    assert_eq!(load_dataset(&out, "ingest").unwrap(), ds);
}

#[test]
fn capacity_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    write(&csv, &format!("{HEADER}2022-01-03T00:00:00Z,A,10,50\n2022-01-03T00:15:00Z,A,51,50\n"));
    let err = ingest_csv(&csv, &CsvSchema::default(), "c", 15, 4, &Default::default()).unwrap_err();
    assert!(err.to_string().contains("capacity"), "{err}");
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    write(&csv, &format!("{HEADER}2022-01-03T00:00:00Z,A,10,50\nyesterday,A,10,50\n"));
    let err = read_records(&csv, &CsvSchema::default()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    write(&csv, &format!("{HEADER}2022-01-03T00:00:00Z,A,-4,50\n"));
    let err = read_records(&csv, &CsvSchema::default()).unwrap_err();
    assert!(err.to_string().contains("line 2") && err.to_string().contains("available"), "{err}");
    write(&csv, "time,node,free\n");
    assert!(read_records(&csv, &CsvSchema::default()).unwrap_err().to_string().contains("missing column"));
}

#[test]
fn missing_artifact_names_the_producing_command() {
    let err = load_dataset(Path::new("/nonexistent/target.json"), "gen-synth").unwrap_err();
    assert_eq!(err.to_string(), "missing /nonexistent/target.json: run `strata gen-synth` first");
    assert_eq!(exit_code(err.category()), 3);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ckpt");
    let enc = small_encoder();
    save_encoder(&path, &enc).unwrap();
    let back = load_encoder(&path).unwrap();
    assert_eq!(back.fingerprint(), enc.fingerprint());
    let seg: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
    assert_eq!(back.embed_values(&seg).unwrap(), enc.embed_values(&seg).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_encoder(&path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(load_encoder(&path).unwrap_err().to_string().contains("not a strata checkpoint"));
}

#[test]
fn kb_round_trip_preserves_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let city = generate_synthetic_city(2, 3, 2, &SyntheticProfile::default()).unwrap();
    let enc = small_encoder();
    let kb = KnowledgeBase::build(&enc, &city, 4, 0.1).unwrap();
    save_kb(dir.path(), &kb, 4, 0.1, "cfg").unwrap();
    let manifest = load_manifest(dir.path()).unwrap();
    assert_eq!(manifest.encoder_hash, enc.fingerprint());
    assert_eq!(manifest.entries.len(), kb.len());
    let (back, _) = load_kb(dir.path()).unwrap();
    assert_eq!(back.entries(), kb.entries());
    let (a, b) = (EmbeddingRetriever::new(&enc, &kb).unwrap(), EmbeddingRetriever::new(&enc, &back).unwrap());
    for e in kb.entries().iter().step_by(9) {
        let q = kb.segment_values(e);
        assert_eq!(a.retrieve(&q, 4).unwrap(), b.retrieve(&q, 4).unwrap());
    }
    // A KB built by another encoder is refused.
    let other = Encoder::new(EncoderConfig { seed: 99, ..enc.config().clone() }).unwrap();
    assert!(EmbeddingRetriever::new(&other, &back).is_err());
}

#[test]
fn token_files_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let city = generate_synthetic_city(4, 2, 3, &SyntheticProfile::default()).unwrap();
    let windows = enumerate_windows(&city, 96..200, 12, 12);
    let tokens = generate_tokens(&city, &windows, 0, &SeasonalNaive { period: 96 }).unwrap();
    let path = dir.path().join("t.json");
    save_tokens(&path, &tokens, serde_json::json!({"k": 1})).unwrap();
    let (back, m) = load_tokens(&path, "gen-tokens").unwrap();
    assert_eq!(back, tokens);
    assert_eq!(m.stamp["k"], 1);
    let h = tokens_sha256(&path).unwrap();
    assert_eq!(h, tokens_sha256(&path).unwrap());
    assert!(import_external_tokens(&path, &city, &windows).is_ok());

    // L_pred = 6 against a 12-step configuration.
    let short = enumerate_windows(&city, 96..200, 12, 6);
    let six = generate_tokens(&city, &short, 0, &SeasonalNaive { period: 96 }).unwrap();
    let p6 = dir.path().join("six.json");
    save_tokens(&p6, &six, serde_json::Value::Null).unwrap();
    let err = import_external_tokens(&p6, &city, &windows).unwrap_err();
    assert!(err.to_string().contains("L_pred=6"), "{err}");
    assert_eq!(exit_code(err.category()), 5);

    // Window timestamps shifted by one step.
    let mut shifted = tokens.clone();
    for t in &mut shifted.window_starts {
        *t += chrono::TimeDelta::try_minutes(15).unwrap();
    }
    let ps = dir.path().join("shifted.json");
    save_tokens(&ps, &shifted, serde_json::Value::Null).unwrap();
    let err = import_external_tokens(&ps, &city, &windows).unwrap_err();
    assert!(err.to_string().contains("window 0 starts at"), "{err}");

    // Data file with the wrong length.
    std::fs::write(dir.path().join("t.f32"), [0u8; 8]).unwrap();
    assert!(load_tokens(&path, "gen-tokens").is_err());
    assert!(matches!(
        import_external_tokens(&dir.path().join("absent.json"), &city, &windows),
        Err(Error::Config(_))
    ));
}

#[test]
fn config_layers_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    write(&file, "[pipeline]\nk = 3\n[kb]\nstride = 2\n");
    let cfg = RunConfig::resolve(Some(&file), &["pipeline.alpha=0.25".into(), "encoder.epochs=7".into()]).unwrap();
    assert_eq!(cfg.pipeline.k, 3);
    assert_eq!(cfg.kb.stride, 2);
    assert_eq!(cfg.pipeline.alpha, 0.25);
    assert_eq!(cfg.encoder.epochs, 7);
    assert_eq!(cfg.kb.lambda, 0.1);

    write(&file, "[pipeline]\nkay = 3\n");
    let err = RunConfig::resolve(Some(&file), &[]).unwrap_err();
    assert_eq!(exit_code(err.category()), 2);
    assert!(RunConfig::resolve(None, &["pipeline.alpha=2".into()]).is_err());
    assert!(RunConfig::resolve(None, &["windows.input_len=24".into()]).is_err());
    assert!(parse_override("novalue").is_err());
    let (path, v) = parse_override("llm.model=gpt").unwrap();
    assert_eq!(path, ["llm", "model"]);
    assert_eq!(v.as_str(), Some("gpt"));

    // Relocating the artifacts keeps the hash; changing a knob does not.
    let mut a = RunConfig::default();
    let h = a.hash();
    a.paths.artifacts = "elsewhere".into();
    assert_eq!(a.hash(), h);
    a.pipeline.k = 9;
    assert_ne!(a.hash(), h);
    let again: RunConfig = toml::from_str(&RunConfig::default().to_toml()).unwrap();
    assert_eq!(again, RunConfig::default());
}

proptest::proptest! {
    #[test]
    fn f32_codec_round_trips(values in proptest::collection::vec(-1e6f32..1e6, 0..64)) {
        let bytes = strata::fsutil::f32_le_bytes(values.iter().map(|v| *v as f64));
        proptest::prop_assert_eq!(bytes.len(), 4 * values.len());
        let back = strata::fsutil::f32_le_values(Path::new("x"), &bytes, values.len()).unwrap();
        let want: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        proptest::prop_assert_eq!(back, want);
        proptest::prop_assert!(strata::fsutil::f32_le_values(Path::new("x"), &bytes, values.len() + 1).is_err());
    }

    #[test]
    fn integer_overrides_land_where_addressed(k in 1usize..50, stride in 1usize..16) {
        let cfg = RunConfig::resolve(None, &[format!("pipeline.k={k}"), format!("kb.stride={stride}")]).unwrap();
        proptest::prop_assert_eq!(cfg.pipeline.k, k);
        proptest::prop_assert_eq!(cfg.kb.stride, stride);
        let mut expect = RunConfig::default();
        expect.pipeline.k = k;
        expect.kb.stride = stride;
        proptest::prop_assert_eq!(cfg, expect);
    }
}
