use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Recording, SynthConfig, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "dataset v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub subject: String,
    pub file: String,
    pub sha256: String,
}

/// Describes a directory of per-subject CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SynthConfig>,
    pub class_names: Vec<String>,
    pub files: Vec<ManifestFile>,
}

/// Writes `subject,timestamp,ax0..axK,label` rows.
pub fn write_csv(rec: &Recording, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["subject".to_string(), "timestamp".to_string()];
    header.extend((0..rec.num_axes()).map(|a| format!("ax{a}")));
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let axes = rec.num_axes();
    let mut row = Vec::with_capacity(axes + 3);
    for (i, chunk) in rec.samples.data().chunks(axes).enumerate() {
        row.clear();
        row.push(rec.subject_id.clone());
        row.push(format!("{}", i as f64 / rec.sample_rate_hz));
        row.extend(chunk.iter().map(|v| format!("{v}")));
        row.push(rec.class_names[rec.labels[i]].clone());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

/// Reads one subject's recording. With `classes` given, labels must be
/// among them; otherwise the sorted set of labels found becomes the class
/// list. Rows are sorted by timestamp and the sample rate is inferred from
/// the timestamp span.
pub fn load_csv(path: &Path, classes: Option<&[String]>) -> Result<Recording> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4
        || cols[0] != "subject"
        || cols[1] != "timestamp"
        || cols[cols.len() - 1] != "label"
    {
        return Err(Error::parse(
            path,
            1,
            "header must be `subject,timestamp,ax0..axK,label`",
        ));
    }
    let axes = cols.len() - 3;
    for (a, c) in cols[2..2 + axes].iter().enumerate() {
        if *c != format!("ax{a}") {
            return Err(Error::parse(
                path,
                1,
                format!("expected column `ax{a}`, found `{c}`"),
            ));
        }
    }

    struct Row {
        line: usize,
        t: f64,
        values: Vec<f64>,
        label: String,
    }
    let mut subject: Option<String> = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let sid = rec[0].trim();
        match &subject {
            None => subject = Some(sid.to_string()),
            Some(s) if s != sid => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("second subject `{sid}` in a file for `{s}`"),
                ))
            }
            _ => {}
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad {what} `{}`", &rec[i])))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let t = num(1, "timestamp")?;
        let values = (0..axes)
            .map(|a| num(2 + a, "sample"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            line,
            t,
            values,
            label: rec[cols.len() - 1].trim().to_string(),
        });
    }
    let subject = subject.ok_or_else(|| Error::parse(path, 1, "no data rows"))?;

    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    for pair in rows.windows(2) {
        if pair[1].t <= pair[0].t {
            return Err(Error::parse(
                path,
                pair[1].line,
                format!("timestamp {} repeats an earlier row", pair[1].t),
            ));
        }
    }

    let class_names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut names: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
            names.sort();
            names.dedup();
            names
        }
    };
    let mut labels = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * axes);
    for r in &rows {
        let l = class_names
            .iter()
            .position(|c| *c == r.label)
            .ok_or_else(|| Error::parse(path, r.line, format!("unknown label `{}`", r.label)))?;
        labels.push(l);
        data.extend_from_slice(&r.values);
    }
    let rate = if rows.len() >= 2 {
        let span = rows[rows.len() - 1].t - rows[0].t;
        ((rows.len() - 1) as f64 / span * 1e6).round() / 1e6
    } else {
        DEFAULT_SAMPLE_RATE_HZ
    };
    Recording::new(
        subject,
        rate,
        Tensor::new(vec![rows.len(), axes], data)?,
        labels,
        class_names,
    )
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name_for(subject: &str) -> String {
    let clean: String = subject
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}.csv")
}

/// Writes one CSV per recording plus a checksummed manifest.
pub fn write_dataset(
    dir: &Path,
    recs: &[Recording],
    config: Option<&SynthConfig>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let class_names = recs
        .first()
        .map(|r| r.class_names.clone())
        .unwrap_or_default();
    let mut files = Vec::with_capacity(recs.len());
    for rec in recs {
        let file = file_name_for(&rec.subject_id);
        let path = dir.join(&file);
        write_csv(rec, &path)?;
        files.push(ManifestFile {
            subject: rec.subject_id.clone(),
            sha256: sha256_file(&path)?,
            file,
        });
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        config: config.cloned(),
        class_names,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset directory. A manifest, when present, fixes the file list
/// and class order and its checksums are verified; otherwise every `*.csv`
/// is read in name order and classes are the sorted union of labels.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<Recording>> {
    let mpath = dir.join(MANIFEST_FILE);
    if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "{}: unsupported manifest format `{}`",
                mpath.display(),
                manifest.format
            )));
        }
        return manifest
            .files
            .iter()
            .map(|f| {
                let path = dir.join(&f.file);
                let sum = sha256_file(&path)?;
                if sum != f.sha256 {
                    return Err(Error::Data(format!(
                        "{}: checksum mismatch (manifest {}, file {sum})",
                        path.display(),
                        f.sha256
                    )));
                }
                load_csv(&path, Some(&manifest.class_names))
            })
            .collect();
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no CSV files", dir.display())));
    }
    let mut recs = paths
        .iter()
        .map(|p| load_csv(p, None))
        .collect::<Result<Vec<_>>>()?;
    let mut union: Vec<String> = recs.iter().flat_map(|r| r.class_names.clone()).collect();
    union.sort();
    union.dedup();
    for r in &mut recs {
        r.remap_classes(&union)?;
    }
    Ok(recs)
}
