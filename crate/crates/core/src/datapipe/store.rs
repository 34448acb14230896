//! Text dataset layout:
//!
//! ```text
//! <root>/manifest              one `id,label` line per subject
//! <root>/<id>/<stream>.csv     `name,rate_hz,start_ms` line, then one sample per line
//! <root>/<id>/demographics     one value per line
//! <root>/<id>/label            class index
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::schema::signal_channels;
use super::stream::{Stream, Subject};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, text: &str) -> Result<T> {
    text.trim().parse().map_err(|_| {
        Error::Data(format!(
            "{}:{}: cannot parse {:?}",
            path.display(),
            line + 1,
            text
        ))
    })
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!("invalid subject id {id:?}")))
    }
}

fn stream_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.csv"))
}

/// Writes one subject's directory.
pub fn write_subject(root: &Path, subject: &Subject) -> Result<()> {
    check_id(&subject.id)?;
    subject.validate()?;
    let dir = root.join(&subject.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for s in &subject.streams {
        let mut text = String::with_capacity(s.samples.len() * 20);
        let _ = writeln!(text, "{},{},{}", s.name, s.rate_hz, s.start_ms);
        for v in &s.samples {
            let _ = writeln!(text, "{v}");
        }
        write(&stream_path(&dir, &s.name), &text)?;
    }
    let mut demo = String::new();
    for v in &subject.demographics {
        let _ = writeln!(demo, "{v}");
    }
    write(&dir.join("demographics"), &demo)?;
    write(&dir.join("label"), &format!("{}\n", subject.label))
}

/// Writes the manifest listing `(id, label)` pairs.
pub fn write_manifest(root: &Path, entries: &[(String, usize)]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut text = String::new();
    for (id, label) in entries {
        check_id(id)?;
        let _ = writeln!(text, "{id},{label}");
    }
    write(&root.join(MANIFEST), &text)
}

/// Writes a complete dataset.
pub fn write_dataset(root: &Path, subjects: &[Subject]) -> Result<()> {
    for s in subjects {
        write_subject(root, s)?;
    }
    let entries: Vec<(String, usize)> = subjects.iter().map(|s| (s.id.clone(), s.label)).collect();
    write_manifest(root, &entries)
}

/// Reads the manifest.
pub fn read_manifest(root: &Path) -> Result<Vec<(String, usize)>> {
    let path = root.join(MANIFEST);
    let text = read(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("{}:{}: expected `id,label`", path.display(), i + 1))
        })?;
        check_id(id.trim())?;
        out.push((id.trim().to_string(), parse(&path, i, label)?));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} lists no subjects", path.display())));
    }
    Ok(out)
}

fn read_stream(path: &Path, expected_name: &str) -> Result<Stream> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 3 {
        return Err(Error::Data(format!(
            "{}:1: header must be `name,rate_hz,start_ms`",
            path.display()
        )));
    }
    let name = fields[0].trim().to_string();
    if name != expected_name {
        return Err(Error::Data(format!(
            "{}: stream is named {name:?}, expected {expected_name:?}",
            path.display()
        )));
    }
    let rate_hz: f64 = parse(path, 0, fields[1])?;
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(Error::Data(format!(
            "{}: rate must be positive",
            path.display()
        )));
    }
    let start_ms = parse(path, 0, fields[2])?;
    let samples = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse(path, i, l))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Stream {
        name,
        rate_hz,
        start_ms,
        samples,
    })
}

/// Reads one subject's directory; streams are loaded in canonical order.
pub fn read_subject(root: &Path, id: &str) -> Result<Subject> {
    check_id(id)?;
    let dir = root.join(id);
    let streams = signal_channels()
        .map(|c| read_stream(&stream_path(&dir, c.name), c.name))
        .collect::<Result<Vec<_>>>()?;
    let demo_path = dir.join("demographics");
    let demographics = read(&demo_path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse(&demo_path, i, l))
        .collect::<Result<Vec<f64>>>()?;
    let label_path = dir.join("label");
    let label = parse(&label_path, 0, &read(&label_path)?)?;
    let subject = Subject {
        id: id.to_string(),
        streams,
        demographics,
        label,
    };
    subject.validate()?;
    Ok(subject)
}

/// Reads every subject listed in the manifest, checking labels agree.
pub fn read_dataset(root: &Path) -> Result<Vec<Subject>> {
    read_manifest(root)?
        .into_iter()
        .map(|(id, label)| {
            let s = read_subject(root, &id)?;
            if s.label != label {
                return Err(Error::Data(format!(
                    "subject {id}: manifest label {label} disagrees with label file {}",
                    s.label
                )));
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synth::{synth_generate, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dataset_round_trip() {
        let cfg = SynthConfig {
            class_counts: vec![1, 2],
            min_hours: 0.005,
            max_hours: 0.01,
            ..SynthConfig::default()
        };
        let subjects = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &subjects).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), subjects);
    }

    #[test]
    fn malformed_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
        fs::write(dir.path().join(MANIFEST), "a;b\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Data(_))));
        fs::write(dir.path().join(MANIFEST), "../x,0\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Data(_))));
    }
}
