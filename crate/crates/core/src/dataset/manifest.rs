use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{Label, PatchRecord, Provenance};
use crate::error::{ensure, Error, Result};
use crate::imageio;

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "label", "domain", "provenance", "origin_fold"];

/// Ordered, id-unique list of patch records with cached class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<PatchRecord>,
    /// `counts[label][provenance]`, provenance 0 = real, 1 = synthetic.
    counts: [[usize; 2]; 2],
}

impl Manifest {
    /// Builds a manifest from in-memory records. No image IO.
    pub fn from_records(records: Vec<PatchRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut counts = [[0usize; 2]; 2];
        for r in &records {
            r.validate()?;
            ensure!(seen.insert(r.id.as_str()), "duplicate id {:?}", r.id);
            counts[r.label.index()][prov_index(r.provenance)] += 1;
        }
        Ok(Self { records, counts })
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label, provenance: Provenance) -> usize {
        self.counts[label.index()][prov_index(provenance)]
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.counts[label.index()].iter().sum()
    }

    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.counts[0][prov_index(provenance)] + self.counts[1][prov_index(provenance)]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// Serializes in the manifest CSV format. Image paths under `base` are
    /// written relative to it.
    pub fn to_csv(&self, base: Option<&Path>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let path = base
                .and_then(|b| r.image_ref.strip_prefix(b).ok())
                .unwrap_or(&r.image_ref);
            let fold = r.origin_fold.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([
                r.id.as_str(),
                &path.to_string_lossy(),
                r.label.as_str(),
                r.domain.as_str(),
                r.provenance.as_str(),
                fold.as_str(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::runtime(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent();
        crate::fsutil::write_atomic(path, self.to_csv(base)?.as_bytes())
    }

    pub fn concat(&self, other: &Manifest) -> Result<Manifest> {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Manifest::from_records(records)
    }
}

fn prov_index(p: Provenance) -> usize {
    match p {
        Provenance::Real => 0,
        Provenance::Synthetic => 1,
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("manifest csv: {e}"))
}

/// Reads and validates a manifest, including a header check of every image.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let manifest = load_manifest_unchecked(path)?;
    for r in manifest.records() {
        imageio::check_patch(&r.image_ref)
            .map_err(|e| Error::invalid(format!("record {}: {e}", r.id)))?;
    }
    Ok(manifest)
}

/// Parses and validates rows without touching the image files.
pub fn load_manifest_unchecked(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

pub(crate) fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    ensure!(
        header.iter().eq(MANIFEST_HEADER.iter().copied()),
        "manifest header must be `{}`, found `{}`",
        MANIFEST_HEADER.join(","),
        header.iter().collect::<Vec<_>>().join(",")
    );
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::invalid(format!("manifest line {line}: {e}")))?;
        ensure!(row.len() == 6, "manifest line {line}: expected 6 fields, got {}", row.len());
        let ctx = |e: Error| Error::invalid(format!("manifest line {line}: {e}"));
        let raw_path = PathBuf::from(&row[1]);
        ensure!(!row[1].is_empty(), "manifest line {line}: empty path");
        let image_ref = if raw_path.is_absolute() {
            raw_path
        } else {
            base.join(raw_path)
        };
        let origin_fold = match &row[5] {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| {
                Error::invalid(format!("manifest line {line}: bad origin_fold {s:?}"))
            })?),
        };
        let record = PatchRecord {
            id: row[0].to_string(),
            image_ref,
            label: Label::parse(&row[2]).map_err(ctx)?,
            domain: row[3].to_string(),
            provenance: Provenance::parse(&row[4]).map_err(ctx)?,
            origin_fold,
        };
        record.validate().map_err(ctx)?;
        records.push(record);
    }
    ensure!(!records.is_empty(), "manifest has no records");
    Manifest::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,path,label,domain,provenance,origin_fold\n";

    fn parse(body: &str) -> Result<Manifest> {
        parse_manifest(&format!("{HEADER}{body}"), Path::new("/data"))
    }

    #[test]
    fn two_rows() {
        let m = parse("a,a.png,normal,canine_lymphoma,real,\nb,b.png,atypical,human_breast,real,\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.count(Label::Normal, Provenance::Real), 1);
        assert_eq!(m.count(Label::Atypical, Provenance::Real), 1);
        assert_eq!(m.records()[0].image_ref, PathBuf::from("/data/a.png"));
        assert_eq!(m.records()[1].id, "b");
    }

    #[test]
    fn error_cases() {
        assert!(parse("").unwrap_err().to_string().contains("no records"));
        assert!(parse("a,a.png,normal,d,real,\na,b.png,normal,d,real,\n")
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        assert!(parse("a,a.png,mitotic,d,real,\n").is_err());
        assert!(parse("a,a.png,atypical,d,synthetic,\n")
            .unwrap_err()
            .to_string()
            .contains("origin_fold"));
        assert!(parse("a,a.png,atypical,d,real\n").is_err());
        assert!(parse_manifest("id,path,label\n", Path::new("")).is_err());
        assert!(load_manifest_unchecked(Path::new("/nonexistent/manifest.csv")).is_err());
    }

    #[test]
    fn synthetic_rows_keep_fold() {
        let m = parse("s0,s.png,atypical,synthetic,synthetic,3\n").unwrap();
        assert_eq!(m.records()[0].origin_fold, Some(3));
        assert_eq!(m.count_provenance(Provenance::Synthetic), 1);
    }

    #[test]
    fn csv_round_trip_relative_paths() {
        let m = parse("a,imgs/a.png,normal,d1,real,\ns,syn/s.png,atypical,synthetic,synthetic,0\n").unwrap();
        let text = m.to_csv(Some(Path::new("/data"))).unwrap();
        assert!(text.contains("a,imgs/a.png,normal,d1,real,\n"));
        assert_eq!(parse_manifest(&text, Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn ingestion_rejects_bad_images() {
        let dir = tempfile::tempdir().unwrap();
        imageio::write_png(&dir.path().join("ok.png"), &image::RgbImage::new(128, 128)).unwrap();
        imageio::write_png(&dir.path().join("bad.png"), &image::RgbImage::new(64, 64)).unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, format!("{HEADER}a,ok.png,normal,d,real,\n")).unwrap();
        assert_eq!(load_manifest(&path).unwrap().len(), 1);
        std::fs::write(&path, format!("{HEADER}a,ok.png,normal,d,real,\nb,bad.png,normal,d,real,\n")).unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
