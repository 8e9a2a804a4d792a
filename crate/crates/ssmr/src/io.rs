//! Reading and writing the on-disk formats: numeric TSV tables, dataset manifests,
//! region definitions and JSON documents.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{SsmrData, SubgroupData};
use crate::error::{Error, Result};
use crate::search::Region;

/// A numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a tab-separated table whose first line names the columns.
pub fn parse_table(text: &str, origin: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::Validation(format!("{origin}: empty table")))?;
    let header: Vec<String> = head.split('\t').map(|s| s.trim().to_string()).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (no, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(Error::Validation(format!(
                "{origin}: line {} has {} fields, header has {}",
                no + 1,
                fields.len(),
                header.len()
            )));
        }
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Validation(format!("{origin}: line {}, column '{}': '{}' is not a number", no + 1, header[col], f))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Table { values: DMatrix::from_row_slice(rows, header.len(), &data), header })
}

pub fn read_table(path: &Path) -> Result<Table> {
    parse_table(&read_text(path)?, &path.display().to_string())
}

/// Renders a table with shortest round-trip float formatting.
pub fn format_table(header: &[String], values: &DMatrix<f64>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for i in 0..values.nrows() {
        let row: Vec<String> = values.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_table(path: &Path, header: &[String], values: &DMatrix<f64>) -> Result<()> {
    write_text(path, &format_table(header, values))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// File names of one subgroup, relative to the manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SubgroupFiles {
    #[serde(default)]
    pub name: Option<String>,
    pub genotypes: PathBuf,
    pub phenotypes: PathBuf,
    /// Controls including the leading `intercept` column; intercept-only when absent.
    #[serde(default)]
    pub controls: Option<PathBuf>,
}

/// Dataset manifest listing the subgroups in order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub subgroups: Vec<SubgroupFiles>,
}

/// Loads every subgroup listed in a manifest file.
pub fn load_dataset(manifest: &Path) -> Result<SsmrData> {
    let m: DatasetManifest = read_json(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut subgroups = Vec::new();
    let mut ids: Option<(Vec<String>, Vec<String>)> = None;
    for (i, files) in m.subgroups.iter().enumerate() {
        let geno = read_table(&base.join(&files.genotypes))?;
        let pheno = read_table(&base.join(&files.phenotypes))?;
        let xc = match &files.controls {
            Some(path) => {
                let t = read_table(&base.join(path))?;
                if t.header.first().map(|h| h.as_str()) != Some("intercept") {
                    return Err(Error::Validation(format!(
                        "{}: the first controls column must be 'intercept'",
                        path.display()
                    )));
                }
                t.values
            }
            None => DMatrix::from_element(pheno.values.nrows(), 1, 1.0),
        };
        match &ids {
            None => ids = Some((geno.header.clone(), pheno.header.clone())),
            Some((g, p)) => {
                if *g != geno.header || *p != pheno.header {
                    return Err(Error::Dimension(format!(
                        "subgroup {i}: covariate or response names differ from the first subgroup"
                    )));
                }
            }
        }
        subgroups.push(SubgroupData::new(pheno.values, xc, geno.values)?);
    }
    let (g, p) = ids.ok_or_else(|| Error::Validation("manifest lists no subgroups".into()))?;
    SsmrData::new(subgroups)?.with_ids(g, p)
}

/// Writes one genotype, phenotype and (when nontrivial) controls table per subgroup plus
/// the manifest tying them together. Returns the manifest path.
pub fn save_dataset(data: &SsmrData, dir: &Path) -> Result<PathBuf> {
    let mut files = Vec::new();
    for (i, sub) in data.subgroups.iter().enumerate() {
        let gname = PathBuf::from(format!("genotypes_{i}.tsv"));
        let pname = PathBuf::from(format!("phenotypes_{i}.tsv"));
        write_table(&dir.join(&gname), &data.covariate_ids, &sub.xg)?;
        write_table(&dir.join(&pname), &data.response_ids, &sub.y)?;
        let controls = if sub.q() > 1 {
            let cname = PathBuf::from(format!("controls_{i}.tsv"));
            let mut header = vec!["intercept".to_string()];
            header.extend((1..sub.q()).map(|c| format!("c{c}")));
            write_table(&dir.join(&cname), &header, &sub.xc)?;
            Some(cname)
        } else {
            None
        };
        files.push(SubgroupFiles { name: Some(format!("subgroup_{i}")), genotypes: gname, phenotypes: pname, controls });
    }
    let path = dir.join("dataset.json");
    write_json(&path, &DatasetManifest { subgroups: files })?;
    Ok(path)
}

/// Reads region definitions (`{"name": ["covariate id", ...]}`) and resolves the IDs.
pub fn load_regions(path: &Path, covariate_ids: &[String]) -> Result<Vec<Region>> {
    let raw: BTreeMap<String, Vec<String>> = read_json(path)?;
    let lookup: BTreeMap<&str, usize> = covariate_ids.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();
    raw.into_iter()
        .map(|(name, ids)| {
            let members = ids
                .iter()
                .map(|id| {
                    lookup.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Validation(format!("region '{name}' names unknown covariate '{id}'"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Region::new(name, members)
        })
        .collect()
}

/// Reads a JSON list of square matrices given as rows.
pub fn load_matrices(path: &Path, dim: usize) -> Result<Vec<DMatrix<f64>>> {
    let raw: Vec<Vec<Vec<f64>>> = read_json(path)?;
    raw.iter().map(|rows| crate::prior::matrix_from_rows(rows, dim)).collect()
}
