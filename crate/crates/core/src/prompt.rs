//! Assembly of the four prompt variants.
//!
//! Every variant starts from the same task instruction, patient line and ICD
//! code list. Semantic-search variants add the retrieved cases as numbered
//! examples, knowledge-graph variants add the rendered SNOMED fragment, and
//! the baseline carries a single example.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalCase, Gender};
use crate::error::{Error, Result};
use crate::hashing;
use crate::index::{hit_order, SearchHit, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BaselineOneShot,
    CotSs,
    CotKg,
    CotSsKg,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::BaselineOneShot,
        Strategy::CotSs,
        Strategy::CotKg,
        Strategy::CotSsKg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BaselineOneShot => "baseline_one_shot",
            Strategy::CotSs => "cot_ss",
            Strategy::CotKg => "cot_kg",
            Strategy::CotSsKg => "cot_ss_kg",
        }
    }

    pub fn uses_search(self) -> bool {
        matches!(self, Strategy::CotSs | Strategy::CotSsKg)
    }

    pub fn uses_kg(self) -> bool {
        matches!(self, Strategy::CotKg | Strategy::CotSsKg)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline_one_shot" | "baseline" => Ok(Strategy::BaselineOneShot),
            "cot_ss" => Ok(Strategy::CotSs),
            "cot_kg" => Ok(Strategy::CotKg),
            "cot_ss_kg" => Ok(Strategy::CotSsKg),
            other => Err(Error::UnknownStrategy(other.to_owned())),
        }
    }
}

pub const DEFAULT_INSTRUCTION: &str = "Write the History of Present Illness (HPI) section of a \
clinical note for the patient described below. Base it on the ICD-10 diagnosis and procedure \
codes and the patient's age and gender. Write fluent clinical prose as a physician would, and do \
not list the ICD codes verbatim.";

pub fn default_instruction() -> &'static str {
    DEFAULT_INSTRUCTION
}

/// Id used for the bundled example when no retrieved case is available.
pub const GENERIC_EXAMPLE_ID: &str = "generic-example";

pub const GENERIC_EXAMPLE: &str = "A 45-year-old man presented to the emergency department with \
a three-day history of progressive epigastric pain radiating to the back, accompanied by nausea \
and two episodes of non-bloody vomiting. He reported no fever, no change in bowel habits and no \
similar previous episodes. His history included arterial hypertension treated with enalapril. On \
examination he was afebrile, with tenderness in the epigastrium and no signs of peritoneal \
irritation. Laboratory tests showed elevated serum lipase.";

/// Every string that shapes the prompt text. `{n}` in `example_header` is
/// replaced by the 1-based example number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub system: String,
    pub instruction: String,
    pub codes_header: String,
    pub one_shot_intro: String,
    pub cot_intro: String,
    pub example_header: String,
    pub kg_header: String,
    pub cot_reasoning: String,
    pub directive: String,
    pub include_example_codes: bool,
    /// Fixed case used as the baseline's single example.
    pub baseline_example_id: Option<String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: "You are an experienced physician writing clinical documentation.".into(),
            instruction: DEFAULT_INSTRUCTION.into(),
            codes_header: "ICD codes:".into(),
            one_shot_intro: "Here is an example of a History of Present Illness note:".into(),
            cot_intro: "The following clinical cases were retrieved because they resemble this \
                        patient's codes. Use them as worked examples of how codes become a note:"
                .into(),
            example_header: "Example {n}:".into(),
            kg_header: "Clinical knowledge:".into(),
            cot_reasoning: "Think step by step about how each code, the patient details and the \
                            material above fit together before writing."
                .into(),
            directive: "Output only the History of Present Illness note.".into(),
            include_example_codes: false,
            baseline_example_id: None,
        }
    }
}

impl PromptTemplates {
    pub fn with_instruction(mut self, instruction: &str) -> Result<Self> {
        if instruction.trim().is_empty() {
            return Err(Error::EmptyInstruction);
        }
        self.instruction = instruction.to_owned();
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub system_text: String,
    pub user_text: String,
    pub example_case_ids: Vec<String>,
    pub kg_codes: Vec<String>,
    pub target_case_id: String,
}

impl PromptBundle {
    /// SHA-256 over strategy, system and user text.
    pub fn prompt_hash(&self) -> String {
        hashing::digest_hex(&[
            self.strategy.name().as_bytes(),
            self.system_text.as_bytes(),
            self.user_text.as_bytes(),
        ])
    }
}

/// Strategy-specific material for one prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub case: &'a ClinicalCase,
    pub hits: Option<&'a [SearchHit]>,
    /// Note text source for example cases.
    pub examples: &'a BTreeMap<String, ClinicalCase>,
    pub kg_fragment: Option<&'a str>,
    pub icd_titles: Option<&'a BTreeMap<String, String>>,
}

impl<'a> PromptInputs<'a> {
    pub fn new(case: &'a ClinicalCase, examples: &'a BTreeMap<String, ClinicalCase>) -> Self {
        PromptInputs {
            case,
            hits: None,
            examples,
            kg_fragment: None,
            icd_titles: None,
        }
    }

    pub fn hits(mut self, hits: &'a [SearchHit]) -> Self {
        self.hits = Some(hits);
        self
    }

    pub fn kg_fragment(mut self, fragment: &'a str) -> Self {
        self.kg_fragment = Some(fragment);
        self
    }

    pub fn icd_titles(mut self, titles: &'a BTreeMap<String, String>) -> Self {
        self.icd_titles = Some(titles);
        self
    }
}

pub fn patient_line(case: &ClinicalCase) -> Option<String> {
    let desc = match (case.age, case.gender) {
        (Some(age), Gender::Unspecified) => format!("{age}-year-old"),
        (Some(age), g) => format!("{age}-year-old {g}"),
        (None, Gender::Unspecified) => return None,
        (None, g) => g.to_string(),
    };
    Some(format!("Patient: {desc}"))
}

struct Example<'a> {
    id: &'a str,
    text: &'a str,
    codes: &'a [String],
}

fn usable<'a>(target: &ClinicalCase, candidate: &'a ClinicalCase) -> Option<Example<'a>> {
    (candidate.case_id != target.case_id && candidate.note_text.trim() != target.note_text.trim())
        .then_some(Example {
            id: &candidate.case_id,
            text: &candidate.note_text,
            codes: &candidate.icd_codes,
        })
}

fn sorted_hits(hits: &[SearchHit]) -> Vec<&SearchHit> {
    let mut sorted: Vec<&SearchHit> = hits.iter().collect();
    sorted.sort_by(|a, b| hit_order(a, b));
    sorted
}

fn missing(strategy: Strategy, input: &str) -> Error {
    Error::MissingPromptInput {
        strategy: strategy.name().to_owned(),
        input: input.to_owned(),
    }
}

fn pick_examples<'a>(
    strategy: Strategy,
    inputs: &PromptInputs<'a>,
    templates: &'a PromptTemplates,
) -> Result<Vec<Example<'a>>> {
    let target = inputs.case;
    match strategy {
        Strategy::CotSs | Strategy::CotSsKg => {
            let hits = inputs.hits.ok_or_else(|| missing(strategy, "search hits"))?;
            let mut out = Vec::new();
            for hit in sorted_hits(hits) {
                if out.len() == DEFAULT_TOP_K {
                    break;
                }
                let case = inputs
                    .examples
                    .get(&hit.case_id)
                    .ok_or_else(|| missing(strategy, &format!("note text for case {}", hit.case_id)))?;
                out.extend(usable(target, case));
            }
            Ok(out)
        }
        Strategy::BaselineOneShot => {
            let fixed = templates
                .baseline_example_id
                .as_deref()
                .and_then(|id| inputs.examples.get(id))
                .and_then(|c| usable(target, c));
            let top_hit = || {
                sorted_hits(inputs.hits.unwrap_or_default())
                    .into_iter()
                    .filter_map(|h| inputs.examples.get(&h.case_id))
                    .find_map(|c| usable(target, c))
            };
            Ok(vec![fixed.or_else(top_hit).unwrap_or(Example {
                id: GENERIC_EXAMPLE_ID,
                text: GENERIC_EXAMPLE,
                codes: &[],
            })])
        }
        Strategy::CotKg => Ok(Vec::new()),
    }
}

pub fn build_prompt(
    strategy: Strategy,
    inputs: PromptInputs<'_>,
    templates: &PromptTemplates,
) -> Result<PromptBundle> {
    if templates.instruction.trim().is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let kg_fragment = if strategy.uses_kg() {
        Some(inputs.kg_fragment.ok_or_else(|| missing(strategy, "a knowledge-graph fragment"))?)
    } else {
        None
    };
    let examples = pick_examples(strategy, &inputs, templates)?;
    let case = inputs.case;

    let mut sections = vec![templates.instruction.trim().to_owned()];

    let mut facts = Vec::new();
    facts.extend(patient_line(case));
    let codes: Vec<String> = case
        .icd_codes
        .iter()
        .map(|c| match inputs.icd_titles.and_then(|t| t.get(c)) {
            Some(title) => format!("{c} ({title})"),
            None => c.clone(),
        })
        .collect();
    facts.push(format!("{} {}", templates.codes_header, codes.join(", ")));
    sections.push(facts.join("\n"));

    if !examples.is_empty() {
        let intro = if strategy.uses_search() {
            &templates.cot_intro
        } else {
            &templates.one_shot_intro
        };
        sections.push(intro.clone());
        for (i, ex) in examples.iter().enumerate() {
            let mut block = format!(
                "{}\n{}",
                templates.example_header.replace("{n}", &(i + 1).to_string()),
                ex.text.trim()
            );
            if templates.include_example_codes && !ex.codes.is_empty() {
                block.push_str(&format!("\n{} {}", templates.codes_header, ex.codes.join(", ")));
            }
            sections.push(block);
        }
    }

    if let Some(fragment) = kg_fragment {
        sections.push(format!("{}\n{}", templates.kg_header, fragment.trim_end()));
    }

    if strategy != Strategy::BaselineOneShot {
        sections.push(templates.cot_reasoning.clone());
    }
    sections.push(templates.directive.clone());

    Ok(PromptBundle {
        strategy,
        system_text: templates.system.clone(),
        user_text: sections.join("\n\n") + "\n",
        example_case_ids: examples.iter().map(|e| e.id.to_owned()).collect(),
        kg_codes: if strategy.uses_kg() {
            case.icd_codes.clone()
        } else {
            Vec::new()
        },
        target_case_id: case.case_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case_b() -> ClinicalCase {
        let mut c = ClinicalCase::new(
            "S1130-05582017000100031-1",
            "A 54-year-old woman attended the clinic for complete loss of teeth.",
        );
        c.push_code("K08.109");
        c.push_reference("edentulism");
        c.age = Some(54);
        c.gender = Gender::Female;
        c
    }

    fn library(n: usize) -> (BTreeMap<String, ClinicalCase>, Vec<SearchHit>) {
        let mut lib = BTreeMap::new();
        let mut hits = Vec::new();
        for i in 0..n {
            let id = format!("ex-{i:02}");
            lib.insert(
                id.clone(),
                ClinicalCase::new(&id, format!("Prior note number {i} about dentures.")),
            );
            hits.push(SearchHit {
                case_id: id,
                relatedness: 0.9 - i as f64 * 0.01,
            });
        }
        (lib, hits)
    }

    #[test]
    fn cot_ss_has_ten_examples_and_patient_line() {
        let case = case_b();
        let (lib, hits) = library(12);
        let b = build_prompt(
            Strategy::CotSs,
            PromptInputs::new(&case, &lib).hits(&hits),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert!(b.user_text.contains("K08.109"));
        assert!(b.user_text.contains("54-year-old female"));
        assert_eq!(b.user_text.matches("Example ").count(), 10);
        assert_eq!(b.example_case_ids.len(), 10);
        assert_eq!(b.example_case_ids[0], "ex-00");
        assert!(!b.user_text.contains("Clinical knowledge:"));
        assert!(b.kg_codes.is_empty());
    }

    #[test]
    fn examples_follow_relatedness_order() {
        let case = case_b();
        let (lib, mut hits) = library(4);
        hits.reverse();
        hits[0].relatedness = 0.5;
        hits[1].relatedness = 0.5;
        let b = build_prompt(
            Strategy::CotSs,
            PromptInputs::new(&case, &lib).hits(&hits),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(b.example_case_ids, ["ex-00", "ex-01", "ex-02", "ex-03"]);
    }

    #[test]
    fn baseline_has_single_example_and_no_kg() {
        let case = case_b();
        let (lib, hits) = library(3);
        let b = build_prompt(
            Strategy::BaselineOneShot,
            PromptInputs::new(&case, &lib).hits(&hits),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(b.user_text.matches("Example 1:").count(), 1);
        assert!(!b.user_text.contains("Example 2:"));
        assert!(!b.user_text.contains("Clinical knowledge:"));
        assert_eq!(b.example_case_ids, ["ex-00"]);

        let empty = BTreeMap::new();
        let generic = build_prompt(
            Strategy::BaselineOneShot,
            PromptInputs::new(&case, &empty),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(generic.example_case_ids, [GENERIC_EXAMPLE_ID]);
        assert!(generic.user_text.contains(GENERIC_EXAMPLE));

        let fixed = PromptTemplates {
            baseline_example_id: Some("ex-02".into()),
            ..Default::default()
        };
        let b = build_prompt(
            Strategy::BaselineOneShot,
            PromptInputs::new(&case, &lib).hits(&hits),
            &fixed,
        )
        .unwrap();
        assert_eq!(b.example_case_ids, ["ex-02"]);
    }

    #[test]
    fn kg_section_present_for_kg_strategies() {
        let case = case_b();
        let (lib, hits) = library(10);
        let frag = "ICD K08.109\n  Concept: Edentulous (finding) [278650002]\n";
        let kg = build_prompt(
            Strategy::CotKg,
            PromptInputs::new(&case, &lib).kg_fragment(frag),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert!(kg.user_text.contains("Clinical knowledge:\nICD K08.109"));
        assert!(kg.user_text.contains("Edentulous (finding) [278650002]"));
        assert!(kg.example_case_ids.is_empty());
        assert_eq!(kg.kg_codes, ["K08.109"]);

        let both = build_prompt(
            Strategy::CotSsKg,
            PromptInputs::new(&case, &lib).hits(&hits).kg_fragment(frag),
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(both.example_case_ids.len(), 10);
        assert!(both.user_text.contains("Clinical knowledge:"));
    }

    #[test]
    fn missing_inputs_name_strategy() {
        let case = case_b();
        let lib = BTreeMap::new();
        let err = build_prompt(
            Strategy::CotSs,
            PromptInputs::new(&case, &lib),
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("cot_ss"));
        assert!(err.to_string().contains("search hits"));
        let err = build_prompt(
            Strategy::CotKg,
            PromptInputs::new(&case, &lib),
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("knowledge-graph"));
    }

    #[test]
    fn target_note_never_leaks() {
        let case = case_b();
        let (mut lib, mut hits) = library(10);
        lib.insert(case.case_id.clone(), case.clone());
        let mut twin = case.clone();
        twin.case_id = "twin".into();
        lib.insert("twin".into(), twin);
        hits.insert(0, SearchHit { case_id: case.case_id.clone(), relatedness: 1.0 });
        hits.insert(1, SearchHit { case_id: "twin".into(), relatedness: 0.99 });
        for s in Strategy::ALL {
            let b = build_prompt(
                s,
                PromptInputs::new(&case, &lib).hits(&hits).kg_fragment(""),
                &PromptTemplates::default(),
            )
            .unwrap();
            assert!(!b.user_text.contains(&case.note_text), "{s}");
        }
    }

    #[test]
    fn instruction_override() {
        let t = PromptTemplates::default().with_instruction("Write a note.").unwrap();
        assert_eq!(t.instruction, "Write a note.");
        assert!(matches!(
            PromptTemplates::default().with_instruction("  "),
            Err(Error::EmptyInstruction)
        ));
        assert!(default_instruction().contains("History of Present Illness"));
    }

    #[test]
    fn patient_line_elides_missing_fields() {
        let mut c = ClinicalCase::new("x", "y");
        assert_eq!(patient_line(&c), None);
        c.gender = Gender::Male;
        assert_eq!(patient_line(&c).unwrap(), "Patient: male");
        c.age = Some(16);
        assert_eq!(patient_line(&c).unwrap(), "Patient: 16-year-old male");
        c.gender = Gender::Unspecified;
        assert_eq!(patient_line(&c).unwrap(), "Patient: 16-year-old");
    }

    #[test]
    fn titles_hook_and_example_codes() {
        let case = case_b();
        let (mut lib, hits) = library(1);
        lib.get_mut("ex-00").unwrap().push_code("K08.89");
        let titles: BTreeMap<String, String> =
            [("K08.109".to_owned(), "Complete loss of teeth".to_owned())].into();
        let t = PromptTemplates {
            include_example_codes: true,
            ..Default::default()
        };
        let b = build_prompt(
            Strategy::CotSs,
            PromptInputs::new(&case, &lib).hits(&hits).icd_titles(&titles),
            &t,
        )
        .unwrap();
        assert!(b.user_text.contains("ICD codes: K08.109 (Complete loss of teeth)"));
        assert!(b.user_text.contains("ICD codes: K08.89"));
    }

    #[test]
    fn deterministic_text_and_hash() {
        let case = case_b();
        let (lib, hits) = library(10);
        let make = || {
            build_prompt(
                Strategy::CotSsKg,
                PromptInputs::new(&case, &lib).hits(&hits).kg_fragment("frag"),
                &PromptTemplates::default(),
            )
            .unwrap()
        };
        let (a, b) = (make(), make());
        assert_eq!(a.user_text, b.user_text);
        assert_eq!(a.prompt_hash(), b.prompt_hash());
        assert_eq!(a.prompt_hash().len(), 64);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("zero_shot".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }
}
