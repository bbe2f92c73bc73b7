use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::owl::{AxiomKind, ClassExpr, OwlAxiom, ROLE_GROUP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgConcept {
    pub concept_id: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdMapping {
    pub icd_code: String,
    /// Ascending, no duplicates.
    pub concept_ids: Vec<u64>,
}

/// SNOMED concepts, their OWL definitions and the ICD-10-CM codes mapped
/// onto them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgGraph {
    pub concepts: BTreeMap<u64, KgConcept>,
    pub axioms: Vec<OwlAxiom>,
    pub icd_index: BTreeMap<String, IcdMapping>,
}

pub fn build_graph(
    map_rows: &[(u64, String)],
    axioms: Vec<OwlAxiom>,
    labels: &BTreeMap<u64, String>,
) -> KgGraph {
    let mut grouped: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    for (concept, code) in map_rows {
        grouped.entry(code.clone()).or_default().insert(*concept);
    }

    let mut ids: BTreeSet<u64> = grouped.values().flatten().copied().collect();
    let mut scratch = Vec::new();
    for axiom in &axioms {
        ids.insert(axiom.subject_id);
        scratch.clear();
        axiom.expression.concept_ids(&mut scratch);
        ids.extend(&scratch);
    }
    let concepts = ids
        .into_iter()
        .map(|id| {
            let label = labels.get(&id).cloned().unwrap_or_else(|| id.to_string());
            (id, KgConcept { concept_id: id, label })
        })
        .collect();

    let icd_index = grouped
        .into_iter()
        .map(|(code, ids)| {
            let mapping = IcdMapping {
                icd_code: code.clone(),
                concept_ids: ids.into_iter().collect(),
            };
            (code, mapping)
        })
        .collect();

    KgGraph {
        concepts,
        axioms,
        icd_index,
    }
}

impl KgGraph {
    pub fn label(&self, id: u64) -> String {
        self.concepts
            .get(&id)
            .map(|c| c.label.clone())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn axioms_for(&self, id: u64) -> impl Iterator<Item = &OwlAxiom> {
        self.axioms.iter().filter(move |a| a.subject_id == id)
    }

    fn named(&self, id: u64) -> String {
        format!("{} [{id}]", self.label(id))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<KgGraph> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn render_expr(&self, expr: &ClassExpr, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match expr {
            ClassExpr::NamedClass(id) => {
                let _ = writeln!(out, "{pad}{}", self.named(*id));
            }
            ClassExpr::Intersection(items) => {
                for item in items {
                    self.render_expr(item, depth, out);
                }
            }
            ClassExpr::SomeValuesFrom { property, filler } => match filler.as_ref() {
                ClassExpr::NamedClass(id) => {
                    let _ = writeln!(out, "{pad}{} -> {}", self.named(*property), self.named(*id));
                }
                nested => {
                    let _ = writeln!(out, "{pad}{} ->", self.named(*property));
                    self.render_expr(nested, depth + 1, out);
                }
            },
            ClassExpr::RoleGroup(members) => {
                let _ = writeln!(out, "{pad}{}", self.named(ROLE_GROUP));
                for m in members {
                    self.render_expr(m, depth + 1, out);
                }
            }
        }
    }

    /// Plain-text knowledge fragment for `icd_codes`, one block per code in
    /// input order.
    pub fn render_kg_fragment(&self, icd_codes: &[String]) -> String {
        let mut blocks = Vec::with_capacity(icd_codes.len());
        for code in icd_codes {
            let mut out = String::new();
            let Some(mapping) = self.icd_index.get(code) else {
                let _ = writeln!(out, "ICD {code}: no mapped SNOMED concept");
                blocks.push(out);
                continue;
            };
            let _ = writeln!(out, "ICD {code}");
            for &id in &mapping.concept_ids {
                let _ = writeln!(out, "  Concept: {}", self.named(id));
                let mut any = false;
                for axiom in self.axioms_for(id) {
                    any = true;
                    let head = match axiom.kind {
                        AxiomKind::SubClassOf => "Subclass of:",
                        AxiomKind::EquivalentClasses => "Equivalent to:",
                    };
                    let _ = writeln!(out, "    {head}");
                    self.render_expr(&axiom.expression, 3, &mut out);
                }
                if !any {
                    let _ = writeln!(out, "    (no OWL definition)");
                }
            }
            blocks.push(out);
        }
        blocks.join("\n")
    }
}
