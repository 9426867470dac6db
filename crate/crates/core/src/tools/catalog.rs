//! The full tool inventory, per-domain toolkits, behavioral policies and
//! world builders.

use std::sync::{Arc, OnceLock};

use md5::{Digest, Md5};

use super::handlers::{clinical_tool, generic_kit, knowledge_kit, micro_kit, mqa_tool, stub};
use super::world::MicroCase;
use super::{merge, ToolError, ToolKit, ToolType, WorldState};
use crate::knowledge::KnowledgeIndex;
use crate::tasks::Task;

pub struct DomainSpec {
    pub name: &'static str,
    pub reads: &'static [&'static str],
    pub writes: &'static [&'static str],
    pub policy: &'static str,
}

/// Reasoning scaffolds; every other non-write tool is READ.
pub const THINK_TOOLS: &[&str] = &["generate_ddx", "rank_differentials", "analyze_answer_options", "compare_treatments"];

pub const KNOWLEDGE_TOOLS: &[&str] = &[
    "search_knowledge_base",
    "search_pubmed",
    "search_medical_wiki",
    "search_guidelines",
    "retrieve_evidence",
    "get_passage",
];

pub const GENERIC_TOOLS: &[&str] = &["think", "submit_answer"];

pub const CROSS_DOMAIN: &str = "cross_domain";
pub const MICRO_CLINIC: &str = crate::tasks::micro::DOMAIN;

const SHARED_RULES: &str = "Call exactly one tool per turn as a JSON object {\"name\": ..., \"arguments\": {...}}. \
Gather evidence before concluding, cite retrieved passages as [doc:ID], check allergies and interactions before \
prescribing, and finish with submit_answer.";

pub const DOMAINS: &[DomainSpec] = &[
    DomainSpec {
        name: "clinical_diagnosis",
        reads: &[
            "get_patient_info", "get_vital_signs", "get_lab_results", "get_medications", "get_allergies",
            "get_medical_history", "get_family_history", "get_social_history", "get_clinical_notes",
            "get_imaging_results", "check_drug_interaction", "get_clinical_guideline", "calculate_bmi",
            "calculate_egfr", "calculate_wells_score", "calculate_curb65", "calculate_chads2vasc",
            "calculate_heart_score", "calculate_qsofa", "interpret_ecg", "interpret_lab_trend",
            "get_reference_range", "check_contraindications", "get_drug_info", "generate_ddx",
            "rank_differentials", "assess_pretest_probability", "review_symptoms",
        ],
        writes: &["order_lab", "prescribe"],
        policy: "You are a diagnostic physician. Review the history, vitals and labs, order confirmatory tests \
before committing to a diagnosis, consider a differential, and state a follow-up plan.",
    },
    DomainSpec {
        name: "medical_qa",
        reads: &[
            "analyze_answer_options", "compare_treatments", "search_drug_label", "get_mechanism_of_action",
            "explain_pathophysiology", "find_clinical_trials", "summarize_evidence", "grade_evidence_quality",
            "check_guideline_recommendation", "lookup_anatomy", "lookup_lab_reference", "calculate_nnt",
        ],
        writes: &[],
        policy: "You answer medical examination questions. Reason about the mechanism, verify it against \
retrieved evidence, compare every option, and submit the letter of the best option.",
    },
    DomainSpec {
        name: "visual_diagnosis",
        reads: &[
            "analyze_medical_image", "search_similar_cases", "get_image_metadata", "describe_lesion_morphology",
            "compare_prior_images", "classify_skin_lesion",
        ],
        writes: &[],
        policy: "You interpret medical images. Describe the findings systematically before naming a diagnosis.",
    },
    DomainSpec {
        name: "drug_interaction",
        reads: &[
            "check_interaction", "check_cyp450_metabolism", "get_drug_alternatives", "check_renal_dosing",
            "check_hepatic_dosing", "check_qt_prolongation", "check_serotonin_syndrome_risk",
            "check_duplicate_therapy", "get_interaction_mechanism", "check_pregnancy_category",
            "check_pediatric_dosing", "check_geriatric_beers_criteria", "calculate_anticoagulant_dose",
            "get_monitoring_parameters",
        ],
        writes: &[],
        policy: "You are a clinical pharmacist. Check every pair of drugs for interactions and recommend safer \
alternatives with monitoring.",
    },
    DomainSpec {
        name: "ehr_management",
        reads: &[
            "get_patient_summary", "get_admission_history", "get_icu_stays", "get_lab_trend", "get_vital_trend",
            "get_medication_orders", "calculate_sofa", "calculate_apache2", "calculate_saps2", "calculate_news2",
            "get_discharge_summary", "get_procedures", "get_diagnoses_icd", "get_fluid_balance",
        ],
        writes: &["write_clinical_note", "place_order", "update_problem_list"],
        policy: "You work in the electronic health record. Summarize trends accurately and document every \
order you place.",
    },
    DomainSpec {
        name: "triage_emergency",
        reads: &[
            "calculate_gcs", "screen_sepsis", "calculate_esi_level", "assess_airway", "assess_breathing",
            "assess_circulation", "calculate_revised_trauma_score", "calculate_nihss",
            "calculate_pediatric_assessment", "check_stroke_window", "calculate_burn_area", "assess_cspine_rule",
            "calculate_timi_score",
        ],
        writes: &["assign_triage_level", "activate_code_team", "request_consult"],
        policy: "You triage emergency patients. Assess airway, breathing and circulation first and escalate \
time-critical conditions immediately.",
    },
    DomainSpec {
        name: "radiology_report",
        reads: &[
            "analyze_findings", "get_report_template", "classify_birads", "classify_tirads",
            "apply_fleischner_criteria",
        ],
        writes: &["finalize_report"],
        policy: "You write structured radiology reports with standardized classification and recommendations.",
    },
    DomainSpec {
        name: "psychiatry",
        reads: &[
            "administer_phq9", "administer_gad7", "assess_suicide_risk", "perform_mental_status_exam",
            "administer_columbia_scale", "screen_bipolar_mdq", "administer_audit_c", "screen_ptsd_pcl5",
            "assess_capacity", "get_psychiatric_history", "recommend_psychotherapy",
        ],
        writes: &[],
        policy: "You are a psychiatrist. Use validated instruments and always assess suicide risk when mood \
symptoms are present.",
    },
    DomainSpec {
        name: "obstetrics",
        reads: &[
            "assess_fetal_status", "interpret_ctg", "calculate_bishop_score", "calculate_gestational_age",
            "assess_preeclampsia_risk", "screen_gestational_diabetes", "assess_postpartum_hemorrhage_risk",
            "get_prenatal_labs", "calculate_apgar", "assess_labor_progress", "check_rh_status",
            "evaluate_fetal_biometry", "assess_placental_position", "get_obstetric_history",
        ],
        writes: &["record_delivery_plan"],
        policy: "You practice maternal-fetal medicine. Consider both maternal and fetal safety in every plan.",
    },
];

const MICRO_POLICY: &str = "Micro-clinic: look up the case fact, assess the case, then submit the option letter.";
const CROSS_POLICY: &str = "You follow a multi-phase clinical pathway across specialties. Complete each phase \
before moving to the next.";

pub fn domain_names() -> Vec<&'static str> {
    let mut v: Vec<&str> = DOMAINS.iter().map(|d| d.name).collect();
    v.push(CROSS_DOMAIN);
    v.push(MICRO_CLINIC);
    v
}

fn spec(domain: &str) -> Option<&'static DomainSpec> {
    DOMAINS.iter().find(|d| d.name == domain)
}

pub fn tool_type_of(name: &str, writes: &[&str]) -> ToolType {
    if GENERIC_TOOLS.contains(&name) {
        ToolType::Generic
    } else if writes.contains(&name) {
        ToolType::Write
    } else if THINK_TOOLS.contains(&name) {
        ToolType::Think
    } else {
        ToolType::Read
    }
}

/// Domain-specific tools only (no knowledge or generic tools).
pub fn domain_specific_kit(domain: &str) -> Result<ToolKit, ToolError> {
    let spec = spec(domain).ok_or_else(|| ToolError::UnknownDomain(domain.into()))?;
    let mut kit = ToolKit::new(domain);
    for &name in spec.reads.iter().chain(spec.writes) {
        let (def, handler) = clinical_tool(name)
            .or_else(|| mqa_tool(name))
            .unwrap_or_else(|| stub(name, tool_type_of(name, spec.writes), domain));
        kit.register(def, handler)?;
    }
    Ok(kit)
}

/// The agent-facing toolkit of a domain: its own tools, then the shared
/// knowledge tools, then the generic pair, merged first-wins.
pub fn domain_toolkit(domain: &str) -> Result<ToolKit, ToolError> {
    match domain {
        MICRO_CLINIC => merge(&[micro_kit(), generic_kit()]),
        CROSS_DOMAIN => {
            let mut kits = Vec::new();
            for d in DOMAINS {
                kits.push(domain_specific_kit(d.name)?);
            }
            kits.push(knowledge_kit());
            kits.push(generic_kit());
            let mut kit = merge(&kits)?;
            kit.domain = CROSS_DOMAIN.into();
            Ok(kit)
        }
        d => merge(&[domain_specific_kit(d)?, knowledge_kit(), generic_kit()]),
    }
}

/// Union of every registered tool.
pub fn full_catalog() -> ToolKit {
    let mut kit = domain_toolkit(CROSS_DOMAIN).expect("static catalog is consistent");
    kit.domain = "all".into();
    kit
}

/// Behavioral policy injected as the system prompt.
pub fn domain_policy(domain: &str) -> Option<String> {
    let body = match domain {
        MICRO_CLINIC => MICRO_POLICY,
        CROSS_DOMAIN => CROSS_POLICY,
        d => spec(d)?.policy,
    };
    Some(format!("{body}\n{SHARED_RULES}"))
}

const CORPUS: &str = include_str!("../../fixtures/corpus.jsonl");

/// The bundled desk-scale medical corpus, built once.
pub fn default_knowledge() -> Arc<KnowledgeIndex> {
    static INDEX: OnceLock<Arc<KnowledgeIndex>> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            let mut idx = KnowledgeIndex::new();
            idx.ingest_jsonl(CORPUS.as_bytes()).expect("bundled corpus is valid");
            Arc::new(idx)
        })
        .clone()
}

/// Fresh episode state for `task`.
pub fn world_for(task: &Task, knowledge: Option<Arc<KnowledgeIndex>>) -> WorldState {
    let mut world = if task.domain == MICRO_CLINIC {
        let digest: String = Md5::digest(task.id.as_bytes()).iter().take(4).map(|b| format!("{b:02x}")).collect();
        WorldState {
            case: Some(MicroCase {
                finding: format!("finding code F-{digest}"),
                answer: task.gold_answer.clone().unwrap_or_default(),
            }),
            ..Default::default()
        }
    } else {
        WorldState::clinical()
    };
    world.knowledge = knowledge;
    world
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn inventory_has_135_unique_tools() {
        let mut names = BTreeSet::new();
        let mut total = 0;
        for d in DOMAINS {
            for n in d.reads.iter().chain(d.writes) {
                names.insert(*n);
                total += 1;
            }
        }
        names.extend(KNOWLEDGE_TOOLS);
        names.extend(GENERIC_TOOLS);
        assert_eq!(total, 127);
        assert_eq!(names.len(), 135);
        assert_eq!(full_catalog().len(), 135);
    }

    #[test]
    fn per_domain_counts() {
        let counts: Vec<(usize, usize)> = DOMAINS.iter().map(|d| (d.reads.len(), d.writes.len())).collect();
        assert_eq!(counts, vec![(28, 2), (12, 0), (6, 0), (14, 0), (14, 3), (13, 3), (5, 1), (11, 0), (14, 1)]);
        assert_eq!(domain_specific_kit("clinical_diagnosis").unwrap().len(), 30);
    }

    #[test]
    fn implemented_types_agree_with_catalog() {
        for d in DOMAINS {
            let kit = domain_specific_kit(d.name).unwrap();
            for def in kit.definitions() {
                assert_eq!(def.tool_type, tool_type_of(&def.name, d.writes), "{}", def.name);
            }
        }
    }

    #[test]
    fn every_toolkit_has_generic_pair() {
        for d in domain_names() {
            let kit = domain_toolkit(d).unwrap();
            for g in GENERIC_TOOLS {
                assert_eq!(kit.definition(g).unwrap().tool_type, ToolType::Generic);
            }
            assert!(domain_policy(d).is_some());
        }
        assert!(domain_toolkit("nope").is_err());
        assert_eq!(domain_toolkit(MICRO_CLINIC).unwrap().len(), 4);
    }

    #[test]
    fn bundled_corpus_loads() {
        let k = default_knowledge();
        assert!(k.len() >= 20);
        assert!(!k.search("bradykinin", 3).unwrap().is_empty());
    }
}
