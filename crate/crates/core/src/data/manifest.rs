//! Dataset manifest CSV: one row per image, attribute flags and a shape
//! class. Row order is the canonical index order.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::labels::{LabelVector, ShapeClass, ATTRIBUTE_KEYS, N_ATTRIBUTES};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub labels: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub features: Option<PathBuf>,
}

pub fn header() -> Vec<&'static str> {
    let mut h = vec!["path"];
    h.extend_from_slice(&ATTRIBUTE_KEYS);
    h.push("shape");
    h
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record(header()).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.path.clone()];
            row.extend(r.labels.attributes.iter().map(|&b| (b as u8).to_string()));
            row.push(r.labels.shape.key().to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let at = |line: usize, msg: String| Error::Data(format!("{}:{line}: {msg}", path.display()));
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| at(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header() {
        return Err(at(1, format!("header must be '{}'", header().join(","))));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| at(line, e.to_string()))?;
        if row.len() != N_ATTRIBUTES + 2 {
            return Err(at(line, format!("expected {} fields, got {}", N_ATTRIBUTES + 2, row.len())));
        }
        let path_field = row[0].to_string();
        if path_field.is_empty() {
            return Err(at(line, "empty image path".into()));
        }
        let mut attributes = [false; N_ATTRIBUTES];
        for (a, flag) in attributes.iter_mut().enumerate() {
            *flag = match &row[a + 1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(at(
                        line,
                        format!("{} must be 0 or 1, got '{other}'", ATTRIBUTE_KEYS[a]),
                    ))
                }
            };
        }
        let shape: ShapeClass = row[N_ATTRIBUTES + 1]
            .parse()
            .map_err(|e: Error| at(line, e.to_string()))?;
        let labels = LabelVector { attributes, shape };
        labels.validate().map_err(|e| at(line, e.to_string()))?;
        if !seen.insert(path_field.clone()) {
            return Err(at(line, format!("duplicate path '{path_field}'")));
        }
        records.push(ManifestRecord {
            path: path_field,
            labels,
        });
    }
    Ok(DatasetManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
        features: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "path,halo,gemistocyte,nucleoli,grooved,hyperchromasia,overlapping,multinucleation,mitosis,apoptosis,no_nucleus,shape\n";

    #[test]
    fn shared_label_record_is_valid() {
        let f = write(&format!("{HEADER}img/0001.ppm,0,0,0,0,0,0,0,0,0,1,no_nucleus\n"));
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.records[0].labels, LabelVector::no_nucleus());
    }

    #[test]
    fn breach_is_reported_with_line() {
        let f = write(&format!(
            "{HEADER}a.ppm,0,0,0,0,0,0,0,0,0,0,oval\nb.ppm,0,0,0,0,0,0,0,0,0,1,round\n"
        ));
        let err = load_manifest(f.path()).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
        assert!(err.contains("no_nucleus"), "{err}");
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let f = write(&format!("{HEADER}a.ppm,0,0,0,0,2,0,0,0,0,0,oval\n"));
        assert!(load_manifest(f.path()).is_err());
        let f = write(&format!("{HEADER}a.ppm,0,0,0,0,0,0,0,0,0,0,square\n"));
        assert!(load_manifest(f.path()).unwrap_err().to_string().contains("square"));
        let f = write(&format!(
            "{HEADER}a.ppm,0,0,0,0,0,0,0,0,0,0,oval\na.ppm,0,0,0,0,0,0,0,0,0,0,oval\n"
        ));
        assert!(load_manifest(f.path()).unwrap_err().to_string().contains("duplicate"));
        let f = write("path,shape\n");
        assert!(load_manifest(f.path()).is_err());
        assert!(load_manifest(Path::new("/nonexistent/manifest.csv")).is_err());
    }
}
