use super::*;
use crate::postprocess::extract_events;

fn sine_record(f: f64, fs: f64, n: usize) -> SignalRecord {
    SignalRecord {
        samples: (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect(),
        fs,
        labels: Some(vec![0; n]),
        record_id: "sine".into(),
    }
}

// ── resample ────────────────────────────────────────────────────────────

#[test]
fn resample_360_to_256_gives_2560_samples() {
    let rec = sine_record(5.0, 360.0, 3600);
    let out = resample(&rec, 256.0).unwrap();
    assert_eq!(out.samples.len(), 2560);
    assert_eq!(out.fs, 256.0);
    assert_eq!(out.labels.as_ref().unwrap().len(), 2560);
}

#[test]
fn resample_same_rate_is_identity() {
    let rec = sine_record(5.0, 256.0, 1000);
    let out = resample(&rec, 256.0).unwrap();
    assert_eq!(out, rec);
}

#[test]
fn resample_sine_tracks_analytic_curve() {
    let rec = sine_record(5.0, 360.0, 3600);
    let out = resample(&rec, 256.0).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in out.samples.iter().enumerate() {
        let t = i as f64 / 256.0;
        let want = (2.0 * std::f64::consts::PI * 5.0 * t).sin();
        worst = worst.max((v - want).abs());
    }
    assert!(worst < 1e-2, "max deviation {worst}");
}

#[test]
fn resample_nearest_neighbor_labels() {
    let rec = SignalRecord {
        samples: vec![0.0; 100],
        fs: 100.0,
        labels: Some((0..100).map(|i| if i < 50 { 0 } else { 1 }).collect()),
        record_id: "r".into(),
    };
    let out = resample(&rec, 50.0).unwrap();
    let labels = out.labels.unwrap();
    assert_eq!(labels.len(), 50);
    assert!(labels[..25].iter().all(|&l| l == 0));
    assert!(labels[25..].iter().all(|&l| l == 1));
}

#[test]
fn resample_empty_record_is_an_error() {
    let rec = SignalRecord { samples: vec![], fs: 100.0, labels: None, record_id: "e".into() };
    assert!(resample(&rec, 50.0).is_err());
}

// ── baseline filter plumbing ────────────────────────────────────────────

#[test]
fn baseline_filter_flags_short_records() {
    let rec = sine_record(5.0, 256.0, 256); // one second, under the 3 s warm-up
    let (out, short) = baseline_filter(&rec, 0.5).unwrap();
    assert!(short);
    assert_eq!(out.samples.len(), 256);

    let rec = sine_record(5.0, 256.0, 2560);
    let (_, short) = baseline_filter(&rec, 0.5).unwrap();
    assert!(!short);
}

// ── zscore ──────────────────────────────────────────────────────────────

#[test]
fn zscore_three_point_example() {
    let z = zscore(&[1.0, 2.0, 3.0]);
    let want = (1.5f64).sqrt(); // 1/√(2/3)
    assert!((z[0] + want).abs() < 1e-4);
    assert!(z[1].abs() < 1e-12);
    assert!((z[2] - want).abs() < 1e-4);
    assert!((z[0] + 1.2247).abs() < 1e-4);
}

#[test]
fn zscore_is_idempotent() {
    let z = zscore(&[0.4, -1.0, 2.2, 0.9, -0.3]);
    let zz = zscore(&z);
    for (a, b) in z.iter().zip(&zz) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zscore_constant_guard() {
    assert_eq!(zscore(&[5.0; 10]), vec![0.0; 10]);
}

// ── window ──────────────────────────────────────────────────────────────

#[test]
fn window_count_for_thirty_minutes() {
    let n = 460_800; // 30 min at 256 Hz
    let rec = SignalRecord {
        samples: vec![1.0; n],
        fs: 256.0,
        labels: Some(vec![0; n]),
        record_id: "long".into(),
    };
    let wins = window(&rec, 2560, 2560).unwrap();
    assert_eq!(wins.len(), 180);
}

#[test]
fn window_half_stride_doubles_count_minus_one() {
    let n = 2560 * 6;
    let rec = SignalRecord {
        samples: (0..n).map(|i| i as f64).collect(),
        fs: 256.0,
        labels: Some(vec![0; n]),
        record_id: "r".into(),
    };
    let full = window(&rec, 2560, 2560).unwrap();
    let half = window(&rec, 2560, 1280).unwrap();
    assert_eq!(half.len(), 2 * full.len() - 1);
}

#[test]
fn window_preserves_labels_and_normalizes() {
    let n = 512;
    let labels: Vec<u16> = (0..n).map(|i| (i / 128) as u16 % 3).collect();
    let rec = SignalRecord {
        samples: (0..n).map(|i| (i as f64 * 0.1).sin() + 3.0).collect(),
        fs: 256.0,
        labels: Some(labels.clone()),
        record_id: "r".into(),
    };
    let wins = window(&rec, 256, 256).unwrap();
    assert_eq!(wins.len(), 2);
    let mut concat: Vec<u16> = Vec::new();
    for w in &wins {
        concat.extend_from_slice(&w.labels);
        let mean: f64 = w.x.iter().sum::<f64>() / w.x.len() as f64;
        let var: f64 = w.x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.x.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }
    assert_eq!(concat, labels);
}

#[test]
fn window_short_record_yields_empty() {
    let rec = SignalRecord {
        samples: vec![1.0; 100],
        fs: 256.0,
        labels: Some(vec![0; 100]),
        record_id: "tiny".into(),
    };
    assert!(window(&rec, 2560, 2560).unwrap().is_empty());
}

// ── kfold ───────────────────────────────────────────────────────────────

#[test]
fn kfold_partitions_evenly() {
    let plan = kfold(10, 5, 3).unwrap();
    for f in 0..5 {
        assert_eq!(plan.fold_indices(f).len(), 2);
    }
    let mut seen = [false; 10];
    for f in 0..5 {
        for i in plan.fold_indices(f) {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn kfold_same_seed_same_assignment() {
    assert_eq!(kfold(37, 5, 9).unwrap(), kfold(37, 5, 9).unwrap());
    assert_ne!(kfold(37, 5, 9).unwrap(), kfold(37, 5, 10).unwrap());
}

#[test]
fn kfold_sizes_differ_by_at_most_one() {
    let plan = kfold(23, 5, 1).unwrap();
    let sizes: Vec<usize> = (0..5).map(|f| plan.fold_indices(f).len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 23);
    let min = sizes.iter().min().unwrap();
    let max = sizes.iter().max().unwrap();
    assert!(max - min <= 1);
}

#[test]
fn kfold_train_split_is_complement() {
    let plan = kfold(20, 5, 2).unwrap();
    let train = plan.train_indices(0);
    assert_eq!(train.len(), 16); // 80% when K = 5
    for i in plan.fold_indices(0) {
        assert!(!train.contains(&i));
    }
}

#[test]
fn kfold_rejects_degenerate_requests() {
    assert!(kfold(10, 1, 0).is_err());
    assert!(kfold(3, 5, 0).is_err());
}

// ── synth ───────────────────────────────────────────────────────────────

#[test]
fn synth_seeded_is_byte_identical() {
    let cfg = SynthConfig { num_records: 4, ..Default::default() };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a, b);
    let c = synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_label_histogram_tracks_uniform_mix() {
    let cfg = SynthConfig { num_records: 64, ..Default::default() };
    let records = synth_generate(&cfg).unwrap();
    let mut counts = vec![0u64; cfg.num_classes];
    let mut total = 0u64;
    for r in &records {
        for &l in r.labels.as_ref().unwrap() {
            counts[l as usize] += 1;
            total += 1;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let share = n as f64 / total as f64;
        let want = 1.0 / cfg.num_classes as f64;
        assert!(
            (share - want).abs() < 0.02,
            "class {c} share {share:.4} vs {want:.4}"
        );
    }
}

#[test]
fn synth_events_respect_min_length() {
    let cfg = SynthConfig { num_records: 8, ..Default::default() };
    for rec in synth_generate(&cfg).unwrap() {
        for e in extract_events(rec.labels.as_ref().unwrap()) {
            assert!(e.len() >= cfg.min_event_len, "event of {} samples", e.len());
        }
    }
}

#[test]
fn synth_injects_short_events_when_asked() {
    let cfg = SynthConfig {
        num_records: 8,
        short_event_fraction: 0.3,
        seed: 5,
        ..Default::default()
    };
    let short_count: usize = synth_generate(&cfg)
        .unwrap()
        .iter()
        .map(|rec| {
            extract_events(rec.labels.as_ref().unwrap())
                .iter()
                .filter(|e| e.len() < cfg.min_event_len)
                .count()
        })
        .sum();
    assert!(short_count > 0);
}

#[test]
fn synth_records_create_multi_event_windows() {
    let cfg = SynthConfig { num_records: 4, ..Default::default() };
    for rec in synth_generate(&cfg).unwrap() {
        let events = extract_events(rec.labels.as_ref().unwrap());
        assert!(events.len() >= 2, "record should hold multiple events");
    }
}

// ── preprocessing composition ───────────────────────────────────────────

#[test]
fn preprocess_chain_runs_in_fixed_order() {
    // a drifting 360 Hz record: after the chain the windows are clean,
    // unit-variance, and the label stream survives untouched
    let n = 7200;
    let labels: Vec<u16> = (0..n).map(|i| if i < n / 2 { 0 } else { 1 }).collect();
    let rec = SignalRecord {
        samples: (0..n)
            .map(|i| {
                let t = i as f64 / 360.0;
                (2.0 * std::f64::consts::PI * 8.0 * t).sin() + 4.0 + 0.5 * t
            })
            .collect(),
        fs: 360.0,
        labels: Some(labels),
        record_id: "drifty".into(),
    };
    let wins = preprocess_record(&rec, 256.0, Some(0.5), 2560, 2560).unwrap();
    assert_eq!(wins.len(), 2); // 7200 samples @360 → 5120 @256 → two windows
    for w in &wins {
        let mean: f64 = w.x.iter().sum::<f64>() / w.x.len() as f64;
        assert!(mean.abs() < 1e-9);
    }
    let concat: Vec<u16> = wins.iter().flat_map(|w| w.labels.iter().copied()).collect();
    assert!(concat[..2560].iter().all(|&l| l == 0));
    assert!(concat[2560..].iter().all(|&l| l == 1));
}

// ── file formats ────────────────────────────────────────────────────────

#[test]
fn signal_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sig.csv");
    let rec = SignalRecord {
        samples: vec![0.25, -1.5, 3.0e-7, 42.0],
        fs: 256.0,
        labels: None,
        record_id: "rec-01".into(),
    };
    io::write_signal_csv(&rec, &path).unwrap();
    let back = io::read_signal_csv(&path).unwrap();
    assert_eq!(back.fs, 256.0);
    assert_eq!(back.record_id, "rec-01");
    assert_eq!(back.samples, rec.samples);
}

#[test]
fn events_csv_round_trip_and_validation() {
    use crate::postprocess::Event;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.csv");
    let events = vec![Event::new(0, 100, 2), Event::new(100, 300, 0), Event::new(300, 400, 1)];
    io::write_events_csv(&events, &path).unwrap();
    let back = io::read_events_csv(&path, true).unwrap();
    assert_eq!(back, events);

    let labels = io::labels_from_annotations(&events, 400).unwrap();
    assert_eq!(labels.len(), 400);
    assert_eq!(extract_events(&labels), events);
    assert!(io::labels_from_annotations(&events, 500).is_err());

    std::fs::write(&path, "10,5,0\n").unwrap();
    assert!(io::read_events_csv(&path, true).is_err());
}

#[test]
fn dataset_cache_round_trip_is_bit_exact() {
    let cfg = SynthConfig { num_records: 3, record_len: 1024, ..Default::default() };
    let records = synth_generate(&cfg).unwrap();
    let mut examples = Vec::new();
    for rec in &records {
        examples.extend(window(rec, 256, 256).unwrap());
    }
    let ds = Dataset { window_len: 256, num_classes: cfg.num_classes, examples };

    let mut bytes = Vec::new();
    io::write_dataset_to(&ds, &mut bytes).unwrap();
    let back = io::read_dataset_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, ds);

    let mut bytes2 = Vec::new();
    io::write_dataset_to(&back, &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
}
