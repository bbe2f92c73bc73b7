//! Ingestion of a CodiEsp-style corpus: one note file per case plus TSV
//! sidecars for code annotations and demographics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::tsv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unspecified,
}

impl Gender {
    /// Lenient parse of common spellings; anything else is `None`.
    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" | "woman" => Some(Gender::Female),
            "male" | "m" | "man" => Some(Gender::Male),
            "" | "unspecified" | "unknown" => Some(Gender::Unspecified),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unspecified => "unspecified",
        })
    }
}

/// Uppercases and trims an ICD-10 code, returning `None` if the result is not
/// a letter, two alphanumerics, and an optional dot with 1-4 alphanumerics.
pub fn normalize_icd_code(raw: &str) -> Option<String> {
    let code = raw.trim().to_ascii_uppercase();
    let (stem, ext) = match code.split_once('.') {
        Some((stem, ext)) => (stem, Some(ext)),
        None => (code.as_str(), None),
    };
    let mut chars = stem.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
    let stem_ok = head_ok && stem.len() == 3 && chars.all(|c| c.is_ascii_alphanumeric());
    let ext_ok = match ext {
        None => true,
        Some(e) => (1..=4).contains(&e.len()) && e.chars().all(|c| c.is_ascii_alphanumeric()),
    };
    (stem_ok && ext_ok).then_some(code)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalCase {
    pub case_id: String,
    pub note_text: String,
    pub icd_codes: Vec<String>,
    pub text_references: Vec<String>,
    pub age: Option<u32>,
    pub gender: Gender,
    pub word_count: usize,
}

impl ClinicalCase {
    pub fn new(case_id: impl Into<String>, note_text: impl Into<String>) -> Self {
        let note_text = note_text.into();
        ClinicalCase {
            case_id: case_id.into(),
            word_count: word_count(&note_text),
            note_text,
            icd_codes: Vec::new(),
            text_references: Vec::new(),
            age: None,
            gender: Gender::Unspecified,
        }
    }

    /// Adds a code if it is valid and not already present.
    pub fn push_code(&mut self, raw: &str) -> bool {
        match normalize_icd_code(raw) {
            Some(code) if !self.icd_codes.contains(&code) => {
                self.icd_codes.push(code);
                true
            }
            _ => false,
        }
    }

    pub fn push_reference(&mut self, raw: &str) {
        let reference = raw.trim();
        if !reference.is_empty() && !self.text_references.iter().any(|r| r == reference) {
            self.text_references.push(reference.to_owned());
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Cases read from disk, sorted by case id, plus any skipped-row warnings.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub cases: Vec<ClinicalCase>,
    pub warnings: Vec<Warning>,
}

fn is_header(row: &tsv::Row) -> bool {
    row.cells.first().is_some_and(|c| c.trim() == "case_id")
}

/// Reads every `<case_id>.txt` in `notes_dir` and aggregates the
/// `case_id, code_kind, icd_code, text_reference` rows of `annotations_file`.
pub fn ingest_corpus(notes_dir: &Path, annotations_file: &Path) -> Result<Ingested> {
    if !notes_dir.is_dir() {
        return Err(Error::MissingNotesDir(notes_dir.to_path_buf()));
    }
    let mut cases = BTreeMap::new();
    for entry in fs::read_dir(notes_dir).map_err(|e| Error::io(notes_dir, e))? {
        let path = entry.map_err(|e| Error::io(notes_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(case_id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if case_id.is_empty() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        cases.insert(case_id.to_owned(), ClinicalCase::new(case_id, text));
    }

    let mut warnings = Vec::new();
    for row in tsv::rows(annotations_file)? {
        let row = row?;
        if is_header(&row) {
            continue;
        }
        if row.cells.len() < 4 {
            warnings.push(Warning::at(
                row.line,
                format!("expected 4 columns, found {}", row.cells.len()),
            ));
            continue;
        }
        let case_id = row.cells[0].trim();
        let Some(case) = cases.get_mut(case_id) else {
            warnings.push(Warning::at(row.line, format!("unknown case id {case_id:?}")));
            continue;
        };
        if normalize_icd_code(&row.cells[2]).is_none() {
            warnings.push(Warning::at(
                row.line,
                format!("invalid ICD code {:?}", row.cells[2]),
            ));
            continue;
        }
        case.push_code(&row.cells[2]);
        case.push_reference(&row.cells[3]);
    }

    Ok(Ingested {
        cases: cases.into_values().collect(),
        warnings,
    })
}

/// Fills age and gender from a `case_id, age, gender` TSV. Rows for unknown
/// cases and unparseable fields produce warnings and are otherwise ignored.
pub fn attach_demographics(
    mut cases: Vec<ClinicalCase>,
    demographics_file: &Path,
) -> Result<(Vec<ClinicalCase>, Vec<Warning>)> {
    let positions: HashMap<String, usize> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| (c.case_id.clone(), i))
        .collect();
    let mut warnings = Vec::new();
    for row in tsv::rows(demographics_file)? {
        let row = row?;
        if is_header(&row) {
            continue;
        }
        if row.cells.len() < 3 {
            warnings.push(Warning::at(
                row.line,
                format!("expected 3 columns, found {}", row.cells.len()),
            ));
            continue;
        }
        let case_id = row.cells[0].trim();
        let Some(&i) = positions.get(case_id) else {
            warnings.push(Warning::at(row.line, format!("unknown case id {case_id:?}")));
            continue;
        };
        let case = &mut cases[i];
        match row.cells[1].trim().parse::<u32>() {
            Ok(age) => case.age = Some(age),
            Err(_) => warnings.push(Warning::at(
                row.line,
                format!("non-integer age {:?}", row.cells[1]),
            )),
        }
        match Gender::parse(&row.cells[2]) {
            Some(g) => case.gender = g,
            None => warnings.push(Warning::at(
                row.line,
                format!("unrecognized gender {:?}", row.cells[2]),
            )),
        }
    }
    Ok((cases, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub index_pool: Vec<String>,
    pub test_pool: Vec<String>,
}

/// Partitions cases into a retrieval pool and a held-out test pool.
pub fn split_corpus(cases: &[ClinicalCase], test_ids: &[String]) -> Result<CorpusSplit> {
    let known: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    let mut test = BTreeSet::new();
    let mut test_pool = Vec::new();
    for id in test_ids {
        if !known.contains(id.as_str()) {
            return Err(Error::UnknownTestId(id.clone()));
        }
        if test.insert(id.as_str()) {
            test_pool.push(id.clone());
        }
    }
    let index_pool = cases
        .iter()
        .filter(|c| !test.contains(c.case_id.as_str()))
        .map(|c| c.case_id.clone())
        .collect();
    Ok(CorpusSplit {
        index_pool,
        test_pool,
    })
}

/// Reads a test-id list: one id per line, `#` comments allowed.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

/// Ingested cases and their split, as cached between pipeline stages.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub cases: Vec<ClinicalCase>,
    pub split: CorpusSplit,
}

impl Corpus {
    pub fn get(&self, case_id: &str) -> Option<&ClinicalCase> {
        self.cases
            .binary_search_by(|c| c.case_id.as_str().cmp(case_id))
            .ok()
            .map(|i| &self.cases[i])
    }

    pub fn by_id(&self) -> BTreeMap<String, ClinicalCase> {
        self.cases
            .iter()
            .map(|c| (c.case_id.clone(), c.clone()))
            .collect()
    }

    pub fn index_cases(&self) -> Vec<&ClinicalCase> {
        self.split
            .index_pool
            .iter()
            .filter_map(|id| self.get(id))
            .collect()
    }

    pub fn test_cases(&self) -> Vec<&ClinicalCase> {
        self.split
            .test_pool
            .iter()
            .filter_map(|id| self.get(id))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut corpus: Corpus = serde_json::from_str(&text)?;
        corpus.cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    fn layout(annotations: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let notes = dir.path().join("notes");
        fs::create_dir(&notes).unwrap();
        write(&notes, "S1130-05582017000100031-1.txt", "a b c d");
        write(&notes, "other.txt", "one two");
        write(&notes, "ignored.ann", "not a note");
        let ann = write(dir.path(), "ann.tsv", annotations);
        (dir, notes, ann)
    }

    #[test]
    fn aggregates_codes_and_references() {
        let (_dir, notes, ann) = layout(
            "case_id\tcode_kind\ticd_code\ttext_reference\n\
             S1130-05582017000100031-1\tDIAGNOSTICO\tK08.109\tedentulism\n\
             S1130-05582017000100031-1\tDIAGNOSTICO\tk08.109 \tedentulism\textra\n",
        );
        let got = ingest_corpus(&notes, &ann).unwrap();
        assert_eq!(got.cases.len(), 2);
        let b = got
            .cases
            .iter()
            .find(|c| c.case_id == "S1130-05582017000100031-1")
            .unwrap();
        assert_eq!(b.icd_codes, ["K08.109"]);
        assert_eq!(b.text_references, ["edentulism"]);
        assert_eq!(b.word_count, 4);
        assert!(got.warnings.is_empty());
    }

    #[test]
    fn empty_annotations_give_empty_codes() {
        let (_dir, notes, ann) = layout("");
        let got = ingest_corpus(&notes, &ann).unwrap();
        assert!(got.cases.iter().all(|c| c.icd_codes.is_empty()));
    }

    #[test]
    fn bad_rows_warn_with_line_numbers() {
        let (_dir, notes, ann) = layout(
            "other\tDIAGNOSTICO\tR52\n\
             nobody\tDIAGNOSTICO\tR52\tpain\n\
             other\tPROCEDIMIENTO\t0DTJ4ZZ\tremoval\n\
             other\tDIAGNOSTICO\tR52\tpain\n",
        );
        let got = ingest_corpus(&notes, &ann).unwrap();
        let lines: Vec<_> = got.warnings.iter().map(|w| w.line).collect();
        assert_eq!(lines, [Some(1), Some(2), Some(3)]);
        let other = got.cases.iter().find(|c| c.case_id == "other").unwrap();
        assert_eq!(other.icd_codes, ["R52"]);
    }

    #[test]
    fn missing_notes_dir_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "a.tsv", "");
        let err = ingest_corpus(&dir.path().join("nope"), &ann).unwrap_err();
        assert!(matches!(err, Error::MissingNotesDir(_)));
    }

    #[test]
    fn icd_code_pattern() {
        assert_eq!(normalize_icd_code(" k08.109 ").as_deref(), Some("K08.109"));
        assert_eq!(normalize_icd_code("R52").as_deref(), Some("R52"));
        assert_eq!(normalize_icd_code("F17.210").as_deref(), Some("F17.210"));
        assert_eq!(normalize_icd_code("C4A.1234").as_deref(), Some("C4A.1234"));
        assert!(normalize_icd_code("R5").is_none());
        assert!(normalize_icd_code("R52.").is_none());
        assert!(normalize_icd_code("R52.12345").is_none());
        assert!(normalize_icd_code("052").is_none());
        assert!(normalize_icd_code("").is_none());
    }

    #[test]
    fn demographics() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write(
            dir.path(),
            "demo.tsv",
            "case_id\tage\tgender\nA\t56\tfemale\nB\tsixteen\tmale\n",
        );
        let cases = vec![
            ClinicalCase::new("A", "x"),
            ClinicalCase::new("B", "y"),
            ClinicalCase::new("C", "z"),
        ];
        let (cases, warnings) = attach_demographics(cases, &demo).unwrap();
        assert_eq!((cases[0].age, cases[0].gender), (Some(56), Gender::Female));
        assert_eq!((cases[1].age, cases[1].gender), (None, Gender::Male));
        assert_eq!((cases[2].age, cases[2].gender), (None, Gender::Unspecified));
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].line, Some(3));
    }

    fn numbered(n: usize) -> Vec<ClinicalCase> {
        (0..n)
            .map(|i| ClinicalCase::new(format!("case-{i:04}"), "text"))
            .collect()
    }

    #[test]
    fn split_sizes() {
        let cases = numbered(1000);
        let test: Vec<String> = cases.iter().step_by(4).map(|c| c.case_id.clone()).collect();
        assert_eq!(test.len(), 250);
        let split = split_corpus(&cases, &test).unwrap();
        assert_eq!(split.index_pool.len(), 750);
        assert_eq!(split.test_pool.len(), 250);

        let all = split_corpus(&cases, &[]).unwrap();
        assert_eq!(all.index_pool.len(), 1000);

        let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
        assert!(split_corpus(&cases, &ids).unwrap().index_pool.is_empty());
    }

    #[test]
    fn split_rejects_unknown_id() {
        let err = split_corpus(&numbered(3), &["zzz".to_owned()]).unwrap_err();
        assert!(matches!(err, Error::UnknownTestId(id) if id == "zzz"));
    }

    proptest::proptest! {
        #[test]
        fn split_partitions(n in 0usize..60, mask in proptest::collection::vec(proptest::bool::ANY, 60)) {
            let cases = numbered(n);
            let test: Vec<String> = cases
                .iter()
                .zip(&mask)
                .filter(|(_, m)| **m)
                .map(|(c, _)| c.case_id.clone())
                .collect();
            let split = split_corpus(&cases, &test).unwrap();
            proptest::prop_assert_eq!(split.index_pool.len() + split.test_pool.len(), n);
            proptest::prop_assert!(split.index_pool.iter().all(|id| !split.test_pool.contains(id)));
        }

        #[test]
        fn word_count_matches_whitespace_tokens(words in proptest::collection::vec("[a-z]{1,6}", 0..20), sep in "[ \t\n]{1,3}") {
            let text = words.join(&sep);
            proptest::prop_assert_eq!(word_count(&text), words.len());
        }
    }
}
