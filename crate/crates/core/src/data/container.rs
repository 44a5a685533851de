//! Canonical on-disk container: a UTF-8 `key = value` header next to a raw
//! payload of little-endian `f32` values.
//!
//! Epoched payloads are trial-major `[trial][channel][sample]`; raw payloads are
//! channel-major `[channel][sample]`. The payload file shares the header's stem
//! with a `.bin` extension.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, EpochedDataset, RawRecording, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Raw(RawRecording),
    Epoched(EpochedDataset),
}

impl Container {
    pub fn into_epoched(self) -> Result<EpochedDataset> {
        match self {
            Container::Epoched(d) => Ok(d),
            Container::Raw(_) => Err(DataError::Header {
                field: "kind".into(),
                reason: "expected an epoched container, found raw".into(),
            }),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "bin") {
        path.with_extension("hdr")
    } else {
        path.to_path_buf()
    }
}

fn join(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().collect::<Vec<_>>().join(",")
}

/// Writes `c` to `path` (the header) plus its sibling `.bin` payload.
pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let header = header_path(path);
    let payload = header.with_extension("bin");
    let payload_name = payload
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if let Some(dir) = header.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let mut lines = vec![format!("format_version = {FORMAT_VERSION}")];
    let values: &[f32] = match c {
        Container::Epoched(d) => {
            lines.push("kind = epoched".into());
            lines.push(format!("subject_id = {}", d.subject_id()));
            lines.push(format!("session_id = {}", d.session_id()));
            lines.push(format!("fs = {}", d.fs()));
            lines.push(format!("channel_names = {}", d.channel_names().join(",")));
            lines.push(format!("n_trials = {}", d.n_trials()));
            lines.push(format!("n_samples = {}", d.n_samples()));
            lines.push(format!("n_classes = {}", d.n_classes()));
            lines.push(format!("labels = {}", join(d.labels().iter().map(|l| l.to_string()))));
            d.data()
        }
        Container::Raw(r) => {
            lines.push("kind = raw".into());
            lines.push(format!("subject_id = {}", r.subject_id()));
            lines.push(format!("session_id = {}", r.session_id()));
            lines.push(format!("fs = {}", r.fs()));
            lines.push(format!("channel_names = {}", r.channel_names().join(",")));
            lines.push(format!("n_samples = {}", r.n_samples()));
            lines.push(format!(
                "events = {}",
                join(r.events().iter().map(|(o, c)| format!("{o}:{c}")))
            ));
            r.signal()
        }
    };
    lines.push(format!("payload = {payload_name}"));
    let mut text = lines.join("\n");
    text.push('\n');

    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&payload, bytes).map_err(io_err(&payload))?;
    fs::write(&header, text).map_err(io_err(&header))?;
    Ok(())
}

struct Header {
    fields: BTreeMap<String, String>,
}

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DataError::Header {
                field: format!("line {}", lineno + 1),
                reason: "expected `key = value`".into(),
            })?;
            let key = k.trim().to_string();
            if fields.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(DataError::Header { field: key, reason: "repeated key".into() });
            }
        }
        Ok(Self { fields })
    }

    fn get(&self, field: &str) -> Result<&str> {
        self.fields.get(field).map(String::as_str).ok_or_else(|| DataError::Header {
            field: field.into(),
            reason: "missing".into(),
        })
    }

    fn parse_num<T: std::str::FromStr>(&self, field: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(field)?;
        raw.parse().map_err(|e: T::Err| DataError::Header {
            field: field.into(),
            reason: format!("cannot parse {raw:?}: {e}"),
        })
    }

    fn list(&self, field: &str) -> Result<Vec<String>> {
        let raw = self.get(field)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        Ok(raw.split(',').map(|s| s.trim().to_string()).collect())
    }
}

/// Reads and validates a container; `path` may name the header or the payload.
pub fn load_container(path: &Path) -> Result<Container> {
    let header_file = header_path(path);
    let text = fs::read_to_string(&header_file).map_err(io_err(&header_file))?;
    let h = Header::parse(&text)?;

    let version = h.get("format_version")?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(DataError::FormatVersion(version.to_string()));
    }
    let kind = h.get("kind")?.to_string();
    let subject = h.get("subject_id")?.to_string();
    let session = h.get("session_id")?.to_string();
    let fs: f64 = h.parse_num("fs")?;
    let channel_names = h.list("channel_names")?;
    for (i, n) in channel_names.iter().enumerate() {
        if channel_names[..i].contains(n) {
            return Err(DataError::Header {
                field: "channel_names".into(),
                reason: format!("duplicate channel name {n}"),
            });
        }
    }
    let n_samples: usize = h.parse_num("n_samples")?;

    let payload_name = h.get("payload")?;
    let payload_path = header_file
        .parent()
        .map(|d| d.join(payload_name))
        .unwrap_or_else(|| PathBuf::from(payload_name));

    let expected_values = match kind.as_str() {
        "epoched" => h.parse_num::<usize>("n_trials")? * channel_names.len() * n_samples,
        "raw" => channel_names.len() * n_samples,
        other => {
            return Err(DataError::Header { field: "kind".into(), reason: format!("unknown kind {other:?}") })
        }
    };
    let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;
    let expected_bytes = expected_values as u64 * 4;
    if bytes.len() as u64 != expected_bytes {
        return Err(DataError::PayloadSize { expected: expected_bytes, found: bytes.len() as u64 });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    match kind.as_str() {
        "epoched" => {
            let n_trials: usize = h.parse_num("n_trials")?;
            let n_classes: usize = h.parse_num("n_classes")?;
            let labels = h
                .list("labels")?
                .iter()
                .map(|l| {
                    l.parse::<usize>().map_err(|e| DataError::Header {
                        field: "labels".into(),
                        reason: format!("cannot parse {l:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != n_trials {
                return Err(DataError::Header {
                    field: "labels".into(),
                    reason: format!("{} labels for n_trials = {n_trials}", labels.len()),
                });
            }
            EpochedDataset::new(values, labels, n_samples, n_classes, fs, channel_names, subject, session)
                .map(Container::Epoched)
        }
        _ => {
            let events = h
                .list("events")?
                .iter()
                .map(|e| {
                    let bad = || DataError::Header {
                        field: "events".into(),
                        reason: format!("expected onset:code, got {e:?}"),
                    };
                    let (o, c) = e.split_once(':').ok_or_else(bad)?;
                    Ok((o.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
                })
                .collect::<Result<Vec<_>>>()?;
            RawRecording::new(values, fs, channel_names, events, subject, session).map(Container::Raw)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> EpochedDataset {
        let names = ["Fz", "C3", "Cz"].iter().map(|s| s.to_string()).collect();
        let trials: Vec<f32> = (0..4 * 3 * 5).map(|i| (i as f32).sin() * 17.25 + 1e-7).collect();
        EpochedDataset::new(trials, vec![0, 1, 2, 1], 5, 3, 128.0, names, "S01", "T").unwrap()
    }

    #[test]
    fn epoched_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s01.hdr");
        let d = dataset();
        write_container(&path, &Container::Epoched(d.clone())).unwrap();
        let back = load_container(&path).unwrap();
        assert_eq!(back, Container::Epoched(d.clone()));
        // the payload path resolves to the same container
        let via_bin = load_container(&dir.path().join("s01.bin")).unwrap();
        assert_eq!(via_bin, Container::Epoched(d));
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.hdr");
        let r = RawRecording::new(
            vec![0.5, -1.25, 3.0, 4.0, 1e-9, f32::MAX],
            250.0,
            vec!["C3".into(), "C4".into()],
            vec![(0, 768), (0, 1023), (2, 769)],
            "S02",
            "E",
        )
        .unwrap();
        write_container(&path, &Container::Raw(r.clone())).unwrap();
        assert_eq!(load_container(&path).unwrap(), Container::Raw(r));
    }

    #[test]
    fn payload_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.hdr");
        write_container(&path, &Container::Epoched(dataset())).unwrap();
        let bin = dir.path().join("d.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&bin, bytes).unwrap();
        match load_container(&path) {
            Err(DataError::PayloadSize { expected, found }) => {
                assert_eq!(expected, 4 * 3 * 5 * 4);
                assert_eq!(found, expected - 4);
            }
            other => panic!("expected payload-size error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_channel_in_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.hdr");
        write_container(&path, &Container::Epoched(dataset())).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("Fz,C3,Cz", "Fz,C3,C3");
        fs::write(&path, text).unwrap();
        let err = load_container(&path).unwrap_err();
        assert!(err.to_string().contains("channel_names"), "{err}");
    }

    #[test]
    fn unknown_version_and_bad_fields_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.hdr");
        write_container(&path, &Container::Epoched(dataset())).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, text.replace("format_version = 1", "format_version = 9")).unwrap();
        assert!(matches!(load_container(&path), Err(DataError::FormatVersion(v)) if v == "9"));

        fs::write(&path, text.replace("fs = 128", "fs = fast")).unwrap();
        let err = load_container(&path).unwrap_err();
        assert!(matches!(&err, DataError::Header { field, .. } if field == "fs"), "{err}");
    }
}
