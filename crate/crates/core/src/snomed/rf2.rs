//! Readers for the RF2 map and description files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::normalize_icd_code;
use crate::error::{Result, Warning};
use crate::tsv::{self, Header};

pub const FULLY_SPECIFIED_NAME: &str = "900000000000003001";

/// `(conceptId, ICD-10-CM code)` pairs from an active extended-map refset.
#[derive(Debug, Clone, Default)]
pub struct MapRows {
    pub rows: Vec<(u64, String)>,
    pub warnings: Vec<Warning>,
}

fn active(cells: &[String], col: usize) -> bool {
    cells.get(col).map(|s| s.trim()) == Some("1")
}

fn cell(cells: &[String], col: usize) -> &str {
    cells.get(col).map(|s| s.trim()).unwrap_or("")
}

pub fn parse_rf2_map(path: &Path) -> Result<MapRows> {
    let mut rows = tsv::rows(path)?;
    let mut out = MapRows::default();
    let Some(first) = rows.next().transpose()? else {
        return Ok(out);
    };
    let header = Header::new(&first.cells);
    let active_col = header.require(path, "active")?;
    let concept_col = header.require(path, "referencedComponentId")?;
    let target_col = header.require(path, "mapTarget")?;
    for row in rows {
        let row = row?;
        if !active(&row.cells, active_col) {
            continue;
        }
        let target = cell(&row.cells, target_col);
        if target.is_empty() {
            continue;
        }
        let Ok(concept) = cell(&row.cells, concept_col).parse::<u64>() else {
            out.warnings.push(Warning::at(
                row.line,
                format!("unparseable concept id {:?}", cell(&row.cells, concept_col)),
            ));
            continue;
        };
        match normalize_icd_code(target) {
            Some(code) => out.rows.push((concept, code)),
            None => out.warnings.push(Warning::at(
                row.line,
                format!("invalid ICD-10-CM target {target:?}"),
            )),
        }
    }
    Ok(out)
}

/// Picks one label per concept from the active description rows: the first
/// fully specified name if there is one, otherwise the first other term.
pub fn parse_descriptions(path: &Path) -> Result<BTreeMap<u64, String>> {
    let mut rows = tsv::rows(path)?;
    let mut picked: BTreeMap<u64, (String, bool)> = BTreeMap::new();
    let Some(first) = rows.next().transpose()? else {
        return Ok(BTreeMap::new());
    };
    let header = Header::new(&first.cells);
    let active_col = header.require(path, "active")?;
    let concept_col = header.require(path, "conceptId")?;
    let type_col = header.require(path, "typeId")?;
    let term_col = header.require(path, "term")?;
    for row in rows {
        let row = row?;
        if !active(&row.cells, active_col) {
            continue;
        }
        let Ok(concept) = cell(&row.cells, concept_col).parse::<u64>() else {
            Warning::at(row.line, "unparseable conceptId");
            continue;
        };
        let term = cell(&row.cells, term_col);
        if term.is_empty() {
            continue;
        }
        let fsn = cell(&row.cells, type_col) == FULLY_SPECIFIED_NAME;
        match picked.get(&concept) {
            Some((_, true)) => {}
            Some((_, false)) if !fsn => {}
            _ => {
                picked.insert(concept, (term.to_owned(), fsn));
            }
        }
    }
    Ok(picked.into_iter().map(|(k, (t, _))| (k, t)).collect())
}
