use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hsic::ClassPartition;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub audio_path: Option<PathBuf>,
    pub class_label: String,
}

/// Validated manifest rows plus the class partition they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub partition: ClassPartition,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.sample_id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.class_label.clone()).collect()
    }

    /// Fails listing every entry whose audio file is absent or unreadable.
    pub fn check_audio(&self) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| match &e.audio_path {
                None => Some(format!("{} (no path)", e.sample_id)),
                Some(p) if !p.is_file() => Some(p.display().to_string()),
                Some(_) => None,
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingAudio(missing))
        }
    }
}

/// Reads an `id,audio_path,label` CSV. Relative audio paths resolve against
/// the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_reader(file, path.parent())
}

pub fn parse_manifest_reader<R: Read>(reader: R, base_dir: Option<&Path>) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed(format!("manifest header lacks '{name}' column")))
    };
    let (id_col, path_col, label_col) = (col("id")?, col("audio_path")?, col("label")?);

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let sample_id = field(id_col);
        if sample_id.is_empty() {
            return Err(Error::Malformed(format!("empty sample id at line {line}")));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::DuplicateId { id: sample_id, line });
        }
        let class_label = field(label_col);
        if class_label.is_empty() {
            return Err(Error::EmptyLabel(line));
        }
        let raw_path = field(path_col);
        let audio_path = (!raw_path.is_empty()).then(|| {
            let p = PathBuf::from(&raw_path);
            match base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            }
        });
        entries.push(ManifestEntry {
            sample_id,
            audio_path,
            class_label,
        });
    }
    if entries.is_empty() {
        return Err(Error::Malformed("manifest has no rows".into()));
    }
    let labels: Vec<&str> = entries.iter().map(|e| e.class_label.as_str()).collect();
    let partition = ClassPartition::from_labels(&labels);
    Ok(Manifest { entries, partition })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest_reader(text.as_bytes(), None)
    }

    #[test]
    fn builds_partition() {
        let m = parse("id,audio_path,label\ns1,a.wav,spk2\ns2,b.wav,spk1\ns3,c.wav,spk2\n").unwrap();
        assert_eq!(m.partition.len(), 2);
        assert_eq!(m.partition.classes()[0].label, "spk1");
        let total: usize = m.partition.classes().iter().map(|c| c.indices.len()).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn duplicate_id_reports_line() {
        let err = parse("id,audio_path,label\ns1,a.wav,x\ns2,b.wav,x\ns1,c.wav,y\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 4, .. }), "{err}");
    }

    #[test]
    fn empty_label_rejected() {
        assert!(matches!(
            parse("id,audio_path,label\ns1,a.wav,\n").unwrap_err(),
            Error::EmptyLabel(2)
        ));
    }

    #[test]
    fn labels_are_opaque_strings() {
        let m = parse("id,audio_path,label\na,,01\nb,,1\n").unwrap();
        assert_eq!(m.partition.len(), 2);
    }

    #[test]
    fn audio_paths_optional_until_extraction() {
        let m = parse("id,audio_path,label\ns1,,x\ns2,,y\n").unwrap();
        assert!(m.entries.iter().all(|e| e.audio_path.is_none()));
        match m.check_audio().unwrap_err() {
            Error::MissingAudio(list) => assert_eq!(list.len(), 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let m = parse_manifest_reader(
            "id,audio_path,label\ns1,sub/a.wav,x\n".as_bytes(),
            Some(Path::new("/data")),
        )
        .unwrap();
        assert_eq!(m.entries[0].audio_path.as_deref(), Some(Path::new("/data/sub/a.wav")));
    }

    #[test]
    fn missing_column_rejected() {
        assert!(parse("id,label\ns1,x\n").is_err());
    }
}
