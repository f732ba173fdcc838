//! On-disk dataset layout.
//!
//! One directory per split:
//!
//! - `data.csv` with header `seq_id,t,x0,...,x{D-1}`, rows sorted by
//!   `(seq_id, t)`;
//! - `labels.csv` (`seq_id,theta`, where `theta` is an integer or `inf`)
//!   or `labels_multi.csv` (`seq_id,theta_list`, semicolon-separated);
//! - `meta.json` with the generator spec and seed.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every observation bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::types::{
    ChangeLabel, CoreError, Dataset, DatasetMeta, LabeledSequence, MultiChangeLabel, Observations,
};

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    Missing(String),
    Format { file: String, line: usize, msg: String },
    Inconsistent(String),
    Core(CoreError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::Missing(path) => write!(f, "missing file or directory: {path}"),
            Self::Format { file, line, msg } => write!(f, "{file}:{line}: {msg}"),
            Self::Inconsistent(msg) => write!(f, "inconsistent dataset: {msg}"),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<CoreError> for DataError {
    fn from(e: CoreError) -> Self {
        Self::Core(e)
    }
}

/// Write one split directory. Multi-change datasets get
/// `labels_multi.csv` instead of `labels.csv`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let dim = dataset.dim().unwrap_or(0);

    let mut data = BufWriter::new(File::create(dir.join("data.csv"))?);
    write!(data, "seq_id,t")?;
    for d in 0..dim {
        write!(data, ",x{d}")?;
    }
    writeln!(data)?;
    for seq in &dataset.sequences {
        for t in 0..seq.len() {
            write!(data, "{},{t}", seq.id)?;
            for v in seq.observations.row(t) {
                write!(data, ",{v}")?;
            }
            writeln!(data)?;
        }
    }
    data.flush()?;

    match &dataset.multi_labels {
        Some(multi) => {
            let mut labels = BufWriter::new(File::create(dir.join("labels_multi.csv"))?);
            writeln!(labels, "seq_id,theta_list")?;
            for (seq, ml) in dataset.sequences.iter().zip(multi) {
                let joined = ml
                    .change_points()
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                writeln!(labels, "{},{joined}", seq.id)?;
            }
            labels.flush()?;
        }
        None => {
            let mut labels = BufWriter::new(File::create(dir.join("labels.csv"))?);
            writeln!(labels, "seq_id,theta")?;
            for seq in &dataset.sequences {
                match seq.label {
                    ChangeLabel::Change(theta) => writeln!(labels, "{},{theta}", seq.id)?,
                    ChangeLabel::NoChange => writeln!(labels, "{},inf", seq.id)?,
                }
            }
            labels.flush()?;
        }
    }

    if let Some(meta) = &dataset.meta {
        let json = serde_json::to_string_pretty(meta)
            .map_err(|e| DataError::Inconsistent(format!("meta serialization: {e}")))?;
        fs::write(dir.join("meta.json"), json)?;
    }
    Ok(())
}

fn parse_value<T: std::str::FromStr>(
    raw: &str,
    file: &str,
    line: usize,
    what: &str,
) -> Result<T, DataError> {
    raw.parse().map_err(|_| DataError::Format {
        file: file.to_string(),
        line,
        msg: format!("cannot parse {what} from `{raw}`"),
    })
}

/// Read one split directory back into memory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    if !dir.is_dir() {
        return Err(DataError::Missing(dir.display().to_string()));
    }
    let data_path = dir.join("data.csv");
    if !data_path.is_file() {
        return Err(DataError::Missing(data_path.display().to_string()));
    }

    // data.csv: consecutive rows per sequence, t starting at 0.
    let file_name = "data.csv";
    let reader = BufReader::new(File::open(&data_path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::Format {
        file: file_name.into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = header?;
    let dim = header.split(',').count().checked_sub(2).filter(|&d| d > 0).ok_or_else(|| {
        DataError::Format {
            file: file_name.into(),
            line: 1,
            msg: format!("bad header `{header}`"),
        }
    })?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default().to_string();
        let t: usize = parse_value(parts.next().unwrap_or_default(), file_name, lineno, "t")?;
        let values: Vec<f64> = parts
            .map(|raw| parse_value(raw, file_name, lineno, "observation"))
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(DataError::Format {
                file: file_name.into(),
                line: lineno,
                msg: format!("expected {dim} observation columns, found {}", values.len()),
            });
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if t != entry.len() {
            return Err(DataError::Format {
                file: file_name.into(),
                line: lineno,
                msg: format!("expected t={} for `{id}`, found t={t}", entry.len()),
            });
        }
        entry.push(values);
    }

    // Labels: single-change or multi-change file.
    let single_path = dir.join("labels.csv");
    let multi_path = dir.join("labels_multi.csv");
    let mut single_labels: BTreeMap<String, ChangeLabel> = BTreeMap::new();
    let mut multi_labels: BTreeMap<String, MultiChangeLabel> = BTreeMap::new();
    let is_multi = multi_path.is_file();
    if is_multi {
        let file_name = "labels_multi.csv";
        let reader = BufReader::new(File::open(&multi_path)?);
        for (idx, line) in reader.lines().enumerate().skip(1) {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (id, list) = line.split_once(',').ok_or_else(|| DataError::Format {
                file: file_name.into(),
                line: lineno,
                msg: "expected `seq_id,theta_list`".into(),
            })?;
            let cps: Vec<usize> = if list.is_empty() {
                Vec::new()
            } else {
                list.split(';')
                    .map(|raw| parse_value(raw, file_name, lineno, "change index"))
                    .collect::<Result<_, _>>()?
            };
            let ml = MultiChangeLabel::new(cps)?;
            multi_labels.insert(id.to_string(), ml);
        }
    } else if single_path.is_file() {
        let file_name = "labels.csv";
        let reader = BufReader::new(File::open(&single_path)?);
        for (idx, line) in reader.lines().enumerate().skip(1) {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (id, theta) = line.split_once(',').ok_or_else(|| DataError::Format {
                file: file_name.into(),
                line: lineno,
                msg: "expected `seq_id,theta`".into(),
            })?;
            let label = if theta == "inf" {
                ChangeLabel::NoChange
            } else {
                ChangeLabel::Change(parse_value(theta, file_name, lineno, "theta")?)
            };
            single_labels.insert(id.to_string(), label);
        }
    } else {
        return Err(DataError::Missing(single_path.display().to_string()));
    }

    let mut sequences = Vec::with_capacity(order.len());
    let mut multi_out = Vec::new();
    for id in &order {
        let obs = Observations::from_rows(rows.remove(id).expect("collected above"))?;
        let label = if is_multi {
            let ml = multi_labels.remove(id).ok_or_else(|| {
                DataError::Inconsistent(format!("no multi-change label for `{id}`"))
            })?;
            ml.validate_for_len(obs.len())?;
            let label = ml.first_as_label();
            multi_out.push(ml);
            label
        } else {
            single_labels
                .remove(id)
                .ok_or_else(|| DataError::Inconsistent(format!("no label for `{id}`")))?
        };
        sequences.push(LabeledSequence::new(id.clone(), obs, label)?);
    }

    let mut dataset = if is_multi {
        Dataset::with_multi_labels(sequences, multi_out)?
    } else {
        Dataset::new(sequences)?
    };

    let meta_path = dir.join("meta.json");
    if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path)?;
        let meta: DatasetMeta = serde_json::from_str(&text)
            .map_err(|e| DataError::Inconsistent(format!("meta.json: {e}")))?;
        dataset.meta = Some(meta);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{self, GeneratorSpec, Split};
    use proptest::prelude::*;

    #[test]
    fn roundtrip_generated_split_is_bit_identical() {
        let spec = GeneratorSpec {
            dim: 3,
            length: 16,
            n_train: 12,
            n_test: 5,
            seed: 21,
            ..GeneratorSpec::default()
        };
        let ds = datagen::generate_single_change(&spec, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn roundtrip_multi_change_split() {
        let spec = GeneratorSpec {
            length: 48,
            n_train: 15,
            seed: 22,
            ..GeneratorSpec::default()
        };
        let ds = datagen::generate_multi_change(&spec, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn missing_labels_file_is_reported() {
        let spec = GeneratorSpec {
            length: 8,
            n_train: 2,
            ..GeneratorSpec::default()
        };
        let ds = datagen::generate_single_change(&spec, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("labels.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Missing(_))));
    }

    #[test]
    fn malformed_rows_are_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data.csv"), "seq_id,t,x0\ns0,0,1.5\ns0,2,2.5\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "seq_id,theta\ns0,inf\n").unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn roundtrip_arbitrary_finite_observations(
            raw in proptest::collection::vec(
                proptest::collection::vec(-1e15f64..1e15, 2), 1..12),
            theta in proptest::option::of(0usize..12),
        ) {
            let len = raw.len();
            let obs = Observations::from_rows(raw).unwrap();
            let label = match theta {
                Some(t) if t < len => ChangeLabel::Change(t),
                _ => ChangeLabel::NoChange,
            };
            let seq = LabeledSequence::new("s0", obs, label).unwrap();
            let ds = Dataset::new(vec![seq]).unwrap();
            let dir = tempfile::tempdir().unwrap();
            save_dataset(&ds, dir.path()).unwrap();
            let loaded = load_dataset(dir.path()).unwrap();
            prop_assert_eq!(ds, loaded);
        }
    }
}
