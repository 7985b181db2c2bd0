use affectcae::data::{
    export_fer_csv, export_recola_layout, load_fer_csv, load_recola_layout,
    substitute_missing_frames, synth_blob_classes, synth_dataset, Partition, PIXELS, SIDE,
};
use affectcae::metrics::pearson;
use proptest::prelude::*;

/// Brightness-weighted horizontal centroid above the background level.
fn centroid_x(px: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &p) in px.iter().enumerate() {
        let w = (p as f64 / 255.0 - 0.15).max(0.0);
        num += w * (i % SIDE) as f64;
        den += w;
    }
    num / den
}

fn mean_brightness(px: &[u8]) -> f64 {
    px.iter().map(|&p| p as f64).sum::<f64>() / PIXELS as f64
}

#[test]
fn synthetic_labels_track_the_image() {
    for (seq, track) in synth_dataset(7, 4, 500).unwrap() {
        let frames: Vec<&Vec<u8>> = seq.frames.iter().map(|f| f.as_ref().unwrap()).collect();
        let xs: Vec<f64> = frames.iter().map(|f| centroid_x(f)).collect();
        let bs: Vec<f64> = frames.iter().map(|f| mean_brightness(f)).collect();
        let rv = pearson(&xs, &track.valence).unwrap();
        let ra = pearson(&bs, &track.arousal).unwrap();
        assert!(rv > 0.99, "{}: valence rho {rv}", seq.subject);
        assert!(ra > 0.95, "{}: arousal rho {ra}", seq.subject);
    }
}

#[test]
fn synthetic_layout_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_recola_layout(a.path(), &synth_dataset(5, 2, 30).unwrap()).unwrap();
    export_recola_layout(b.path(), &synth_dataset(5, 2, 30).unwrap()).unwrap();
    for sub in ["synth_00", "synth_01"] {
        for f in ["valence.csv", "arousal.csv", "frames/00000400.pgm"] {
            let p = format!("train/{sub}/{f}");
            assert_eq!(
                std::fs::read(a.path().join(&p)).unwrap(),
                std::fs::read(b.path().join(&p)).unwrap()
            );
        }
    }
}

#[test]
fn fer_round_trip_of_synthetic_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut val = synth_blob_classes::<f64>(2, 2).unwrap();
    val.partition = Partition::Val;
    let sets = vec![synth_blob_classes::<f64>(1, 3).unwrap(), val];
    let p = dir.path().join("fer.csv");
    export_fer_csv(&p, &sets).unwrap();
    let loaded = load_fer_csv::<f64>(&p).unwrap();
    assert_eq!(loaded, sets);
    assert_eq!(loaded[0].len(), 21);
    assert_eq!(loaded[1].len(), 14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn layout_round_trip_with_gaps(seed in 0u64..1000, gaps in prop::collection::vec(0usize..12, 0..6)) {
        let mut d = synth_dataset(seed, 1, 12).unwrap();
        for g in &gaps {
            d[0].0.frames[*g] = None;
        }
        prop_assume!(d[0].0.missing() < 12);
        let dir = tempfile::tempdir().unwrap();
        export_recola_layout(dir.path(), &d).unwrap();
        let loaded = load_recola_layout(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &d);
        let fixed = substitute_missing_frames(&loaded[0].0).unwrap();
        prop_assert_eq!(fixed.missing(), 0);
        prop_assert_eq!(fixed.len(), 12);
        prop_assert_eq!(&fixed.timestamps_ms, &d[0].0.timestamps_ms);
        for (i, f) in d[0].0.frames.iter().enumerate() {
            if let Some(f) = f {
                prop_assert_eq!(fixed.frames[i].as_ref().unwrap(), f);
            }
        }
    }
}
