//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets run, so the corpus stays exercised without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use mfqe_core::degrader::QpSchedule;
use mfqe_core::detector::{parse_labels_csv, parse_quantized_csv};
use mfqe_core::frame_io::{encode_pgm, parse_pgm, parse_pgm_stream, SequenceMeta};
use mfqe_core::metrics::{parse_features_csv, write_features_csv};
use mfqe_core::pipeline::{parse_report_csv, EnhancementReport, PipelineConfig};
use mfqe_core::tensor::{manifest_text, params_from_bytes, params_to_bytes, parse_manifest};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

/// Runs `check` on every seed and returns how many parsed successfully.
fn replay(target: &str, check: impl Fn(&[u8]) -> bool) -> usize {
    seeds(target).iter().filter(|(_, data)| check(data)).count()
}

#[test]
fn pgm() {
    let ok = replay("pgm", |data| {
        let _ = parse_pgm_stream(data);
        match parse_pgm(data) {
            Ok((img, _)) => {
                let again = encode_pgm(img.width, img.height, &img.samples);
                let (back, rest) = parse_pgm(&again).unwrap();
                assert!(rest.is_empty());
                assert_eq!(back, img);
                true
            }
            Err(_) => false,
        }
    });
    assert!(ok >= 3);
}

#[test]
fn features_csv() {
    let ok = replay("features_csv", |data| match parse_features_csv(data) {
        Ok(rows) => {
            let mut out = Vec::new();
            write_features_csv(&rows, &mut out).unwrap();
            assert_eq!(parse_features_csv(&out).unwrap(), rows);
            true
        }
        Err(_) => false,
    });
    assert!(ok >= 1);
}

#[test]
fn quantized_csv() {
    let ok = replay("quantized_csv", |data| match parse_quantized_csv(data) {
        Ok(q) => {
            assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
            true
        }
        Err(_) => false,
    });
    assert!(ok >= 1);
}

#[test]
fn labels_csv() {
    let ok = replay("labels_csv", |data| match parse_labels_csv(data) {
        Ok((p, l)) => {
            assert_eq!(p.len(), l.len());
            true
        }
        Err(_) => false,
    });
    assert!(ok >= 1);
}

#[test]
fn qp_schedule() {
    let ok = replay("qp_schedule", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return false };
        match QpSchedule::parse(text) {
            Ok(s) => {
                assert_eq!(QpSchedule::parse(&s.to_text()).unwrap(), s);
                true
            }
            Err(_) => false,
        }
    });
    assert!(ok >= 1);
}

#[test]
fn config() {
    let ok = replay("config", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return false };
        match PipelineConfig::parse(text) {
            Ok(cfg) => {
                assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
                true
            }
            Err(_) => false,
        }
    });
    assert!(ok >= 1);
}

#[test]
fn manifest() {
    let ok = replay("manifest", |data| {
        let (head, blob) = match data.iter().position(|&b| b == 0) {
            Some(i) => (&data[..i], &data[i + 1..]),
            None => (data, &[][..]),
        };
        let Ok(text) = std::str::from_utf8(head) else { return false };
        let Ok((seed, entries)) = parse_manifest(text) else { return false };
        match params_from_bytes(seed, &entries, blob) {
            Ok(params) => {
                let (s2, e2) = parse_manifest(&manifest_text(&params)).unwrap();
                assert_eq!(s2, seed);
                assert_eq!(e2.len(), entries.len());
                assert_eq!(params_from_bytes(s2, &e2, &params_to_bytes(&params)).unwrap(), params);
                true
            }
            Err(_) => false,
        }
    });
    assert!(ok >= 1);
}

#[test]
fn meta() {
    let ok = replay("meta", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return false };
        match SequenceMeta::parse(text) {
            Ok(meta) => {
                assert_eq!(SequenceMeta::parse(&meta.to_text()).unwrap(), meta);
                true
            }
            Err(_) => false,
        }
    });
    assert!(ok >= 1);
}

#[test]
fn report_csv() {
    let ok = replay("report_csv", |data| match parse_report_csv(data) {
        Ok(rows) => {
            let report = EnhancementReport::new(rows.clone());
            let text = report.to_checked_csv().unwrap();
            assert_eq!(parse_report_csv(text.as_bytes()).unwrap(), rows);
            true
        }
        Err(_) => false,
    });
    assert_eq!(ok, 2);
}
