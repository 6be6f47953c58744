//! On-disk record triple: `<id>.meta.json`, `<id>.f32`, `<id>.ann`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Annotation, SignalRecord, Task};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    task: Task,
    fs_hz: f64,
    n_samples: usize,
    annotation_kind: String,
}

/// Resolves `<dir>/<id>`, `<dir>/<id>.meta.json` or `<dir>/<id>.f32` to the stem.
fn stem_of(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [".meta.json", ".f32", ".ann"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            return PathBuf::from(stripped);
        }
    }
    path.to_path_buf()
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the three record files into `dir`, creating it if needed.
pub fn save_record(record: &SignalRecord, dir: impl AsRef<Path>) -> Result<()> {
    record.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = dir.join(&record.id);

    let meta = RecordMeta {
        id: record.id.clone(),
        task: record.task,
        fs_hz: record.fs_hz,
        n_samples: record.samples.len(),
        annotation_kind: record.task.annotation_kind().to_string(),
    };
    let meta_path = with_suffix(&stem, ".meta.json");
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    let mut bytes = Vec::with_capacity(record.samples.len() * 4);
    for v in &record.samples {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = with_suffix(&stem, ".f32");
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;

    let mut ann = String::new();
    for a in &record.annotations {
        ann.push_str(&format!("{}\t{}\n", a.sample_index, a.label));
    }
    let ann_path = with_suffix(&stem, ".ann");
    fs::write(&ann_path, ann).map_err(|e| Error::io(&ann_path, e))?;
    Ok(())
}

/// Loads a record given its stem or any of its three file paths.
pub fn load_record(path: impl AsRef<Path>) -> Result<SignalRecord> {
    let stem = stem_of(path.as_ref());

    let meta_path = with_suffix(&stem, ".meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RecordMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: "metadata",
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    if meta.annotation_kind != meta.task.annotation_kind() {
        return Err(Error::InvalidRecord {
            field: "annotation_kind",
            detail: format!(
                "`{}` does not match task {}",
                meta.annotation_kind, meta.task
            ),
        });
    }

    let bin_path = with_suffix(&stem, ".f32");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::LengthMismatch(format!(
            "{} holds {} bytes, not a whole number of f32 values",
            bin_path.display(),
            bytes.len()
        )));
    }
    if bytes.len() / 4 != meta.n_samples {
        return Err(Error::LengthMismatch(format!(
            "n_samples={} in metadata but {} values in {}",
            meta.n_samples,
            bytes.len() / 4,
            bin_path.display()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let ann_path = with_suffix(&stem, ".ann");
    let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut annotations = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            what: "annotation",
            path: ann_path.clone(),
            detail: format!("line {}: expected `index<TAB>label`", lineno + 1),
        })?;
        let idx: i64 = idx.trim().parse().map_err(|_| Error::Parse {
            what: "annotation",
            path: ann_path.clone(),
            detail: format!("line {}: bad sample index `{idx}`", lineno + 1),
        })?;
        if idx < 0 || idx as u64 >= meta.n_samples as u64 {
            return Err(Error::AnnotationOutOfRange(format!(
                "line {} of {}: index {idx} not in [0, {})",
                lineno + 1,
                ann_path.display(),
                meta.n_samples
            )));
        }
        annotations.push(Annotation::new(idx as usize, label.trim()));
    }

    let record = SignalRecord {
        id: meta.id,
        task: meta.task,
        fs_hz: meta.fs_hz,
        samples,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

/// Stems of every record in `dir`, sorted by file name.
pub fn list_records(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.to_string_lossy().ends_with(".meta.json"))
        .map(|p| stem_of(&p))
        .collect();
    stems.sort();
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> SignalRecord {
        SignalRecord {
            id: "rec1".into(),
            task: Task::Qrs,
            fs_hz: 250.0,
            samples: (0..100).map(|i| (i as f32 * 0.1).sin()).collect(),
            annotations: vec![Annotation::new(10, "beat"), Annotation::new(60, "beat")],
        }
    }

    #[test]
    fn round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let r = record();
        save_record(&r, dir.path()).unwrap();
        let first = fs::read(dir.path().join("rec1.f32")).unwrap();
        save_record(&r, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("rec1.f32")).unwrap());
        assert_eq!(load_record(dir.path().join("rec1")).unwrap(), r);
        assert_eq!(load_record(dir.path().join("rec1.meta.json")).unwrap(), r);
    }

    #[test]
    fn empty_annotations_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record();
        r.annotations.clear();
        save_record(&r, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("rec1.ann")).unwrap().len(), 0);
        assert_eq!(load_record(dir.path().join("rec1")).unwrap(), r);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_record(&record(), dir.path()).unwrap();
        let p = dir.path().join("rec1.f32");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(99 * 4);
        fs::write(&p, bytes).unwrap();
        let err = load_record(dir.path().join("rec1")).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
    }

    #[test]
    fn negative_annotation_is_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        save_record(&record(), dir.path()).unwrap();
        fs::write(dir.path().join("rec1.ann"), "-5\tbeat\n").unwrap();
        let err = load_record(dir.path().join("rec1")).unwrap_err();
        assert!(err.to_string().contains("annotation out of range"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_record(dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("nope.meta.json"), "{err}");
    }

    #[test]
    fn listing_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["b", "a", "c"] {
            let mut r = record();
            r.id = id.into();
            save_record(&r, dir.path()).unwrap();
        }
        let names: Vec<String> = list_records(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a", "b", "c"]);
    }
}
