//! Directory layout `<root>/<partition>/<subject>/` holding `frames/<ms>.pgm`
//! (or `<ms>.raw` with a `frames/shape.txt` sidecar) and
//! `{valence,arousal}.csv` with `timestamp,value` rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::pgm::{read_pgm, write_pgm};
use super::{check_timestamps, AnnotationTrack, FrameSequence, Partition, PIXELS, SIDE};
use crate::error::{Error, Result};

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn name_of(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn seconds_to_ms(s: &str) -> Option<u64> {
    let t: f64 = s.trim().parse().ok()?;
    let ms = t * 1000.0;
    (t >= 0.0 && (ms - ms.round()).abs() < 1e-6).then(|| ms.round() as u64)
}

fn ms_to_seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn read_track(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["timestamp", "value"] {
        return Err(Error::Parse(format!(
            "{}: header must be `timestamp,value`",
            path.display()
        )));
    }
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let bad = |what: &str| Error::Parse(format!("{}: row {}: {what}", path.display(), r + 1));
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        ts.push(seconds_to_ms(&rec[0]).ok_or_else(|| {
            bad(&format!(
                "timestamp `{}` is not a whole millisecond",
                &rec[0]
            ))
        })?);
        vs.push(
            rec[1]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("bad value `{}`", &rec[1])))?,
        );
    }
    Ok((ts, vs))
}

fn read_frames(dir: &Path) -> Result<BTreeMap<u64, Vec<u8>>> {
    let mut frames = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(frames);
    }
    let shape_file = dir.join("shape.txt");
    let raw_shape = if shape_file.exists() {
        let s = fs::read_to_string(&shape_file).map_err(|e| Error::io(&shape_file, e))?;
        let dims: Vec<usize> = s
            .split_whitespace()
            .filter_map(|v| v.parse().ok())
            .collect();
        if dims.len() != 2 {
            return Err(Error::Parse(format!(
                "{}: expected `<height> <width>`",
                shape_file.display()
            )));
        }
        Some((dims[0], dims[1]))
    } else {
        None
    };
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        let (h, w, px) = match ext {
            "pgm" => {
                let (w, h, px) = read_pgm(&path)?;
                (h, w, px)
            }
            "raw" => {
                let (h, w) = raw_shape.ok_or_else(|| {
                    Error::Data(format!("{}: raw frame without shape.txt", path.display()))
                })?;
                let px = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if px.len() != h * w {
                    return Err(Error::Data(format!(
                        "{}: expected {} bytes, got {}",
                        path.display(),
                        h * w,
                        px.len()
                    )));
                }
                (h, w, px)
            }
            _ => continue,
        };
        if (h, w) != (SIDE, SIDE) {
            return Err(Error::Data(format!(
                "{}: frame is {h}x{w}, expected {SIDE}x{SIDE}",
                path.display()
            )));
        }
        let ms: u64 = stem.parse().map_err(|_| {
            Error::Parse(format!(
                "{}: file name is not a millisecond timestamp",
                path.display()
            ))
        })?;
        if frames.insert(ms, px).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate frame at {ms} ms",
                dir.display()
            )));
        }
    }
    Ok(frames)
}

fn load_subject(dir: &Path, partition: Partition) -> Result<(FrameSequence, AnnotationTrack)> {
    let subject = name_of(dir);
    let (tv, valence) = read_track(&dir.join("valence.csv"))?;
    let (ta, arousal) = read_track(&dir.join("arousal.csv"))?;
    if tv != ta {
        return Err(Error::Data(format!(
            "subject {subject}: valence and arousal timestamps differ"
        )));
    }
    check_timestamps(&subject, &tv)?;
    let mut frames = read_frames(&dir.join("frames"))?;
    let matched: Vec<Option<Vec<u8>>> = tv.iter().map(|ms| frames.remove(ms)).collect();
    if let Some((&first, _)) = frames.iter().next() {
        return Err(Error::Data(format!(
            "subject {subject}: {} frame(s) have no annotation row after matching {} rows (first at {first} ms)",
            frames.len(),
            tv.len()
        )));
    }
    let missing = matched.iter().filter(|f| f.is_none()).count();
    if missing > 0 {
        log::warn!("subject {subject}: {missing} missing frame(s)");
    }
    let seq = FrameSequence::new(&subject, partition, tv, matched)?;
    let track = AnnotationTrack::new(&subject, valence, arousal)?;
    Ok((seq, track))
}

/// Loads every subject under the known partition directories, ordered by
/// partition then subject name.
pub fn load_recola_layout(root: &Path) -> Result<Vec<(FrameSequence, AnnotationTrack)>> {
    let mut jobs = Vec::new();
    for pdir in sorted_dirs(root)? {
        let Ok(partition) = name_of(&pdir).parse::<Partition>() else {
            log::warn!("skipping unknown partition directory {}", pdir.display());
            continue;
        };
        for sdir in sorted_dirs(&pdir)? {
            jobs.push((partition, sdir));
        }
    }
    if jobs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no subjects found",
            root.display()
        )));
    }
    jobs.sort_by(|a, b| (a.0, name_of(&a.1)).cmp(&(b.0, name_of(&b.1))));
    jobs.par_iter()
        .map(|(p, dir)| load_subject(dir, *p))
        .collect()
}

pub fn export_recola_layout(
    root: &Path,
    subjects: &[(FrameSequence, AnnotationTrack)],
) -> Result<()> {
    for (seq, track) in subjects {
        if seq.len() != track.len() {
            return Err(Error::Data(format!(
                "subject {}: {} frames vs {} annotation rows",
                seq.subject,
                seq.len(),
                track.len()
            )));
        }
        let dir = root.join(seq.partition.to_string()).join(&seq.subject);
        let fdir = dir.join("frames");
        fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        for (ms, f) in seq.timestamps_ms.iter().zip(&seq.frames) {
            if let Some(px) = f {
                debug_assert_eq!(px.len(), PIXELS);
                write_pgm(&fdir.join(format!("{ms:08}.pgm")), SIDE, SIDE, px)?;
            }
        }
        for (name, values) in [("valence", &track.valence), ("arousal", &track.arousal)] {
            let mut out = String::from("timestamp,value\n");
            for (ms, v) in seq.timestamps_ms.iter().zip(values) {
                out.push_str(&format!("{},{v}\n", ms_to_seconds(*ms)));
            }
            let p = dir.join(format!("{name}.csv"));
            fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn fixture(root: &Path) -> Vec<(FrameSequence, AnnotationTrack)> {
        let mut d = synth_dataset(3, 2, 100).unwrap();
        d[1].0.partition = Partition::Val;
        export_recola_layout(root, &d).unwrap();
        d
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        let loaded = load_recola_layout(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(loaded.iter().all(|(s, a)| s.len() == 100 && a.len() == 100));
        assert_eq!(loaded, d);
    }

    #[test]
    fn deleted_frame_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        let ms = d[0].0.timestamps_ms[7];
        fs::remove_file(
            dir.path()
                .join(format!("train/{}/frames/{ms:08}.pgm", d[0].0.subject)),
        )
        .unwrap();
        let loaded = load_recola_layout(dir.path()).unwrap();
        assert_eq!(loaded[0].0.missing(), 1);
        assert!(loaded[0].0.frames[7].is_none());
    }

    #[test]
    fn out_of_range_annotation() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        let p = dir
            .path()
            .join(format!("train/{}/valence.csv", d[0].0.subject));
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = format!("{},1.5", lines[3].split(',').next().unwrap());
        fs::write(&p, lines.join("\n") + "\n").unwrap();
        assert!(load_recola_layout(dir.path())
            .unwrap_err()
            .to_string()
            .contains("outside [-1, 1]"));
    }

    #[test]
    fn non_monotone_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        for name in ["valence", "arousal"] {
            let p = dir
                .path()
                .join(format!("train/{}/{name}.csv", d[0].0.subject));
            let text = fs::read_to_string(&p).unwrap();
            let mut lines: Vec<&str> = text.lines().collect();
            lines.swap(2, 3);
            fs::write(&p, lines.join("\n") + "\n").unwrap();
        }
        assert!(load_recola_layout(dir.path())
            .unwrap_err()
            .to_string()
            .contains("non-monotone"));
    }

    #[test]
    fn unmatched_frame_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        let fdir = dir.path().join(format!("train/{}/frames", d[0].0.subject));
        write_pgm(&fdir.join("99999999.pgm"), SIDE, SIDE, &[0; PIXELS]).unwrap();
        assert!(load_recola_layout(dir.path())
            .unwrap_err()
            .to_string()
            .contains("no annotation row"));
    }

    #[test]
    fn raw_frames_with_shape_file() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture(dir.path());
        let fdir = dir.path().join(format!("train/{}/frames", d[0].0.subject));
        let ms = d[0].0.timestamps_ms[0];
        fs::remove_file(fdir.join(format!("{ms:08}.pgm"))).unwrap();
        fs::write(
            fdir.join(format!("{ms:08}.raw")),
            d[0].0.frames[0].as_ref().unwrap(),
        )
        .unwrap();
        assert!(load_recola_layout(dir.path()).is_err());
        fs::write(fdir.join("shape.txt"), "48 48\n").unwrap();
        assert_eq!(load_recola_layout(dir.path()).unwrap(), d);
    }

    #[test]
    fn timestamp_parsing() {
        assert_eq!(seconds_to_ms("0.04"), Some(40));
        assert_eq!(seconds_to_ms("12.360"), Some(12360));
        assert_eq!(seconds_to_ms("0.0405"), None);
        assert_eq!(ms_to_seconds(12360), "12.360");
    }
}
