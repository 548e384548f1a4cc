//! Labelled image manifests.
//!
//! On disk a manifest is UTF-8 CSV with the header
//! `image_ref,class_label,split,augment`, where `split` is one of
//! `train`/`val`/`test` and `augment` is `0` or `1`. Relative image refs are
//! resolved against the manifest file's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["image_ref", "class_label", "split", "augment"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub image_ref: String,
    pub class_label: String,
    pub split: Split,
    /// Set on resampled duplicates; the loader augments flagged records.
    pub augment: bool,
}

impl Record {
    pub fn new(image_ref: impl Into<String>, class_label: impl Into<String>, split: Split) -> Self {
        Self { image_ref: image_ref.into(), class_label: class_label.into(), split, augment: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<Record>,
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    /// Validates labels and uniqueness. A repeated `(image_ref, split)` pair
    /// is accepted only when the repeat carries the augment flag, which is
    /// how resampled duplicates are marked.
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.class_label.is_empty() {
                return Err(Error::Data(format!("record {i} has an empty class label")));
            }
            if r.image_ref.is_empty() {
                return Err(Error::Data(format!("record {i} has an empty image ref")));
            }
            if !seen.insert((r.image_ref.as_str(), r.split)) && !r.augment {
                return Err(Error::Data(format!(
                    "duplicate record for {:?} in split {}",
                    r.image_ref, r.split
                )));
            }
        }
        Ok(Self { records, base_dir: None })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with the given split, keeping the base directory.
    pub fn split(&self, split: Split) -> DatasetManifest {
        self.derive(self.records.iter().filter(|r| r.split == split).cloned().collect())
    }

    /// A manifest sharing this one's base directory.
    pub(crate) fn derive(&self, records: Vec<Record>) -> DatasetManifest {
        DatasetManifest { records, base_dir: self.base_dir.clone() }
    }

    /// Record indices per class label, labels sorted.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.class_label.as_str()).or_default().push(i);
        }
        map
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.by_class().keys().map(|k| k.to_string()).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.by_class().into_iter().map(|(k, v)| (k.to_string(), v.len())).collect()
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        let p = Path::new(&record.image_ref);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse_csv(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m.with_base_dir(base))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Data(format!("manifest header: {e}")))?;
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Data(format!(
                "manifest header must be `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Data(format!("manifest: {e}")))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let augment = match &row[3] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data(format!("line {line}: augment must be 0 or 1, got {other:?}")));
                }
            };
            let split = row[2]
                .parse::<Split>()
                .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            records.push(Record {
                image_ref: row[0].to_string(),
                class_label: row[1].to_string(),
                split,
                augment,
            });
        }
        Self::new(records)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(MANIFEST_HEADER).expect("in-memory write");
        for r in &self.records {
            let split = r.split.to_string();
            writer
                .write_record([r.image_ref.as_str(), r.class_label.as_str(), split.as_str(), if r.augment { "1" } else { "0" }])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let m = DatasetManifest::new(vec![
            Record::new("a.png", "cola", Split::Train),
            Record { augment: true, ..Record::new("a.png", "cola", Split::Train) },
            Record::new("dir/b, c.png", "chips \"salt\"", Split::Test),
        ])
        .unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("image_ref,class_label,split,augment\n"));
        assert!(!text.contains('\r'));
        assert_eq!(DatasetManifest::parse_csv(&text).unwrap(), m);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(DatasetManifest::parse_csv("image_ref,class_label,split\na,b,train\n").is_err());
        assert!(DatasetManifest::parse_csv("image_ref,class_label,split,augment\na,b,dev,0\n").is_err());
        assert!(DatasetManifest::parse_csv("image_ref,class_label,split,augment\na,b,train,2\n").is_err());
        assert!(DatasetManifest::parse_csv("image_ref,class_label,split,augment\na,,train,0\n").is_err());
        assert!(DatasetManifest::parse_csv("image_ref,class_label,split,augment\na,b,train,0\na,b,train,0\n").is_err());
    }

    #[test]
    fn relative_refs_resolve_against_base() {
        let m = DatasetManifest::new(vec![Record::new("x/a.png", "c", Split::Train), Record::new("/abs.png", "c", Split::Train)])
            .unwrap()
            .with_base_dir("/data");
        assert_eq!(m.resolve(&m.records()[0]), PathBuf::from("/data/x/a.png"));
        assert_eq!(m.resolve(&m.records()[1]), PathBuf::from("/abs.png"));
    }
}
