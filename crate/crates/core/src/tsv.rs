//! Line-oriented tab-separated reading shared by the corpus and RF2 parsers.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// One data line: 1-based line number plus its cells.
pub(crate) struct Row {
    pub line: usize,
    pub cells: Vec<String>,
}

/// Streams non-empty lines of a UTF-8 TSV file, stripping `\r`.
pub(crate) fn rows(path: &Path) -> Result<impl Iterator<Item = Result<Row>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let path = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(&path, e))),
            Ok(line) => {
                let line = line.strip_suffix('\r').unwrap_or(&line);
                if line.trim().is_empty() {
                    None
                } else {
                    Some(Ok(Row {
                        line: i + 1,
                        cells: line.split('\t').map(str::to_owned).collect(),
                    }))
                }
            }
        }))
}

/// Column positions resolved from an RF2 header line.
pub(crate) struct Header {
    names: Vec<String>,
}

impl Header {
    pub fn new(cells: &[String]) -> Self {
        Header {
            names: cells.iter().map(|c| c.trim().to_owned()).collect(),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, file: &Path, name: &str) -> Result<usize> {
        self.position(name).ok_or_else(|| Error::MissingColumn {
            file: file.display().to_string(),
            column: name.to_owned(),
        })
    }
}
