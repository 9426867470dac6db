//! Concrete tool behavior: knowledge retrieval, the generic tools, the
//! implemented clinical and QA tools, the micro-clinic pair, and stubs.

use regex::Regex;
use serde_json::{json, Map, Value};

use super::world::{LabResult, Prescription};
use super::{Handler, HandlerResult, ParamKind, ToolContext, ToolDefinition, ToolKit, ToolType, WorldState};
use crate::knowledge::{KnowledgeIndex, Passage};

fn arg<'a>(args: &'a Map<String, Value>, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or("")
}

fn knowledge(world: &WorldState) -> Result<&KnowledgeIndex, String> {
    world.knowledge.as_deref().ok_or_else(|| "knowledge base unavailable".to_string())
}

fn top_k(args: &Map<String, Value>) -> usize {
    args.get("k").and_then(Value::as_u64).map_or(5, |k| k.clamp(1, 20) as usize)
}

/// Words of `text` joined with OR, dropping operator keywords.
fn relaxed_query(text: &str) -> String {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !matches!(*w, "AND" | "OR" | "NOT"))
        .collect::<Vec<_>>()
        .join(" OR ")
}

/// Boolean search; a query with no conjunctive match is retried with its
/// words OR-ed together.
fn search(world: &WorldState, query: &str, k: usize, filter: impl Fn(&Passage) -> bool) -> HandlerResult {
    let idx = knowledge(world)?;
    let mut hits = idx.search_where(query, k, &filter).map_err(|e| e.to_string())?;
    let mut relaxed = false;
    if hits.is_empty() {
        let q = relaxed_query(query);
        if !q.is_empty() {
            hits = idx.search_where(&q, k, &filter).map_err(|e| e.to_string())?;
            relaxed = true;
        }
    }
    let rows: Vec<Value> = hits
        .iter()
        .map(|h| {
            let title = idx.get(&h.doc_id).map_or("", |p| p.title.as_str());
            json!({"doc_id": h.doc_id, "title": title, "score": h.score, "snippet": h.snippet})
        })
        .collect();
    Ok(json!({"query": query, "relaxed": relaxed, "hits": rows}))
}

fn search_def(name: &str, description: &str) -> ToolDefinition {
    ToolDefinition::new(name, ToolType::Read, description)
        .param("query", ParamKind::String, true, "search expression; AND, OR, NOT and parentheses are supported")
        .param("k", ParamKind::Integer, false, "maximum number of hits (default 5)")
}

/// The shared retrieval tools available in every clinical domain.
pub fn knowledge_kit() -> ToolKit {
    let mut kit = ToolKit::new("knowledge");
    let mut add = |def: ToolDefinition, h: Handler| kit.register(def, h).expect("unique knowledge tool");
    add(
        search_def("search_knowledge_base", "Search all indexed medical passages."),
        Handler::pure(|w, _, a| search(w, arg(a, "query"), top_k(a), |_| true)),
    );
    add(
        search_def("search_pubmed", "Search indexed PubMed abstracts."),
        Handler::pure(|w, _, a| search(w, arg(a, "query"), top_k(a), |p| p.source == "pubmed")),
    );
    add(
        search_def("search_medical_wiki", "Search indexed encyclopedia articles."),
        Handler::pure(|w, _, a| search(w, arg(a, "query"), top_k(a), |p| p.source == "wiki")),
    );
    add(
        search_def("search_guidelines", "Search indexed clinical guidelines."),
        Handler::pure(|w, _, a| search(w, arg(a, "query"), top_k(a), |p| p.category == "guideline")),
    );
    add(
        search_def("retrieve_evidence", "Retrieve full evidence passages with citation tags of the form [doc:ID]."),
        Handler::pure(|w, _, a| {
            let mut out = search(w, arg(a, "query"), top_k(a), |_| true)?;
            let idx = knowledge(w)?;
            if let Some(hits) = out["hits"].as_array_mut() {
                for h in hits {
                    let id = h["doc_id"].as_str().unwrap_or_default().to_string();
                    if let Some(p) = idx.get(&id) {
                        h["content"] = json!(p.content);
                        h["citation"] = json!(format!("[doc:{id}]"));
                    }
                }
            }
            Ok(out)
        }),
    );
    add(
        ToolDefinition::new("get_passage", ToolType::Read, "Fetch one passage by id.")
            .param("doc_id", ParamKind::String, true, "passage id"),
        Handler::pure(|w, _, a| {
            let id = arg(a, "doc_id");
            let p = knowledge(w)?.get(id).ok_or_else(|| format!("no passage {id}"))?;
            serde_json::to_value(p).map_err(|e| e.to_string())
        }),
    );
    kit
}

/// `think` and `submit_answer`, present in every toolkit.
pub fn generic_kit() -> ToolKit {
    let mut kit = ToolKit::new("generic");
    kit.register(
        ToolDefinition::new("think", ToolType::Generic, "Record internal reasoning; no side effects.")
            .param("thought", ParamKind::String, false, "reasoning text"),
        Handler::pure(|_, _, _| Ok(json!({}))),
    )
    .expect("fresh kit");
    kit.register(
        ToolDefinition::new("submit_answer", ToolType::Generic, "Submit the final answer and end the episode.")
            .param("answer", ParamKind::String, true, "final answer")
            .param("reasoning", ParamKind::String, false, "justification"),
        Handler::pure(|_, _, a| Ok(json!({"submitted": arg(a, "answer")}))),
    )
    .expect("fresh kit");
    kit
}

/// The two tools of the synthetic micro-clinic domain.
pub fn micro_kit() -> ToolKit {
    let mut kit = ToolKit::new("micro_clinic");
    kit.register(
        ToolDefinition::new("lookup_fact", ToolType::Read, "Look up the key finding of the current case.")
            .param("reasoning", ParamKind::String, false, "free-text rationale"),
        Handler::pure(|w, _, _| {
            let case = w.case.as_ref().ok_or("no case loaded")?;
            Ok(json!({"finding": case.finding}))
        }),
    )
    .expect("fresh kit");
    kit.register(
        ToolDefinition::new("assess_case", ToolType::Read, "Assess which option the looked-up finding supports.")
            .param("reasoning", ParamKind::String, false, "free-text rationale"),
        Handler::pure(|w, ctx, _| {
            let case = w.case.as_ref().ok_or("no case loaded")?;
            if ctx.called("lookup_fact") {
                Ok(json!({"supported_option": case.answer}))
            } else {
                Ok(json!({"status": "insufficient data: look up the case facts first"}))
            }
        }),
    )
    .expect("fresh kit");
    kit
}

fn patient<'a>(w: &'a WorldState, a: &Map<String, Value>) -> Result<&'a super::world::Patient, String> {
    let id = arg(a, "patient_id");
    w.patients.get(id).ok_or_else(|| format!("unknown patient {id}"))
}

fn pid(def: ToolDefinition) -> ToolDefinition {
    def.param("patient_id", ParamKind::String, true, "patient identifier")
}

fn lab_json(l: &LabResult) -> Value {
    json!({"name": l.name, "value": l.value, "unit": l.unit, "flag": l.flag()})
}

/// Symptom keyword to candidate conditions, for `generate_ddx`.
const DDX: &[(&str, &[&str])] = &[
    ("fever", &["sepsis", "pneumonia", "pyelonephritis"]),
    ("hypotens", &["sepsis", "septic shock", "hemorrhage"]),
    ("cough", &["pneumonia", "bronchitis"]),
    ("chest pain", &["acute myocardial infarction", "pulmonary embolism", "aortic dissection"]),
    ("dyspnea", &["pulmonary embolism", "heart failure", "pneumonia"]),
    ("flank", &["pyelonephritis", "nephrolithiasis"]),
    ("dysuria", &["cystitis", "pyelonephritis"]),
    ("calf", &["deep vein thrombosis", "pulmonary embolism"]),
    ("knee", &["osteoarthritis", "gout"]),
    ("confus", &["sepsis", "stroke", "hypoglycemia"]),
];

/// Implemented clinical-diagnosis tools, by name.
pub fn clinical_tool(name: &str) -> Option<(ToolDefinition, Handler)> {
    let read = |d: &str| pid(ToolDefinition::new(name, ToolType::Read, d));
    Some(match name {
        "get_patient_info" => (
            read("Demographics, allergies, medications, conditions and notes of a patient."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                let mut v = serde_json::to_value(p).map_err(|e| e.to_string())?;
                if let Some(m) = v.as_object_mut() {
                    m.remove("orderable_labs");
                }
                Ok(v)
            }),
        ),
        "get_vital_signs" => (
            read("Current vital signs of a patient."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                Ok(json!({"patient_id": p.id, "vitals": p.vitals}))
            }),
        ),
        "get_lab_results" => (
            read("Laboratory results on record, including any ordered this episode."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                let mut rows: Vec<Value> = p.labs.iter().map(lab_json).collect();
                for (who, lab) in &w.labs_ordered {
                    if *who == p.id {
                        if let Some(l) = p.orderable_labs.get(lab) {
                            rows.push(lab_json(l));
                        }
                    }
                }
                Ok(json!({"patient_id": p.id, "labs": rows}))
            }),
        ),
        "get_medications" => (
            read("Current medication list of a patient."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                Ok(json!({"patient_id": p.id, "medications": p.medications}))
            }),
        ),
        "get_allergies" => (
            read("Recorded allergies of a patient."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                Ok(json!({"patient_id": p.id, "allergies": p.allergies}))
            }),
        ),
        "check_drug_interaction" => (
            ToolDefinition::new(name, ToolType::Read, "Check two drugs for a known interaction.")
                .param("drug_a", ParamKind::String, true, "first drug")
                .param("drug_b", ParamKind::String, true, "second drug"),
            Handler::pure(|w, _, a| {
                let hit = w.interaction(arg(a, "drug_a"), arg(a, "drug_b"));
                Ok(json!({
                    "interaction": hit.is_some(),
                    "description": hit.map(|i| i.description.as_str()),
                }))
            }),
        ),
        "get_drug_info" => (
            ToolDefinition::new(name, ToolType::Read, "Drug class and usual single dose.")
                .param("drug", ParamKind::String, true, "drug name"),
            Handler::pure(|w, _, a| {
                let d = arg(a, "drug").to_lowercase();
                let info = w.drugs.get(&d).ok_or_else(|| format!("unknown drug {d}"))?;
                Ok(json!({"drug": d, "class": info.class, "reference_dose_mg": info.reference_dose_mg}))
            }),
        ),
        "calculate_qsofa" => (
            read("Quick SOFA score from vitals and mental status."),
            Handler::pure(|w, _, a| {
                let p = patient(w, a)?;
                let rr = p.vitals.get("respiratory_rate").is_some_and(|&v| v >= 22.0);
                let sbp = p.vitals.get("systolic_bp").is_some_and(|&v| v <= 100.0);
                let mental = p.notes.to_lowercase().contains("confus");
                let score = [rr, sbp, mental].iter().filter(|&&b| b).count();
                Ok(json!({"patient_id": p.id, "qsofa": score, "high_risk": score >= 2}))
            }),
        ),
        "generate_ddx" => (
            ToolDefinition::new(name, ToolType::Think, "Generate a ranked differential diagnosis from symptoms.")
                .param("symptoms", ParamKind::String, true, "presenting symptoms"),
            Handler::pure(|_, _, a| {
                let s = arg(a, "symptoms").to_lowercase();
                let mut ddx: Vec<&str> = Vec::new();
                for (key, conds) in DDX {
                    if s.contains(key) {
                        for c in *conds {
                            if !ddx.contains(c) {
                                ddx.push(c);
                            }
                        }
                    }
                }
                Ok(json!({"differential": ddx}))
            }),
        ),
        "order_lab" => (
            pid(ToolDefinition::new(name, ToolType::Write, "Order a laboratory or diagnostic test; returns the result."))
                .param("lab_name", ParamKind::String, true, "test name"),
            Handler::write(|w, _, a| {
                let p = patient(w, a)?;
                let lab = arg(a, "lab_name").trim().to_lowercase().replace([' ', '-'], "_");
                let result = p
                    .orderable_labs
                    .get(&lab)
                    .map(lab_json)
                    .ok_or_else(|| format!("{lab} is not available for {}", p.id))?;
                let id = p.id.clone();
                w.labs_ordered.push((id.clone(), lab));
                Ok(json!({"patient_id": id, "status": "resulted", "result": result}))
            }),
        ),
        "prescribe" => (
            pid(ToolDefinition::new(name, ToolType::Write, "Prescribe a drug at a single dose in mg."))
                .param("drug", ParamKind::String, true, "drug name")
                .param("dose_mg", ParamKind::Number, true, "single dose in mg")
                .param("frequency", ParamKind::String, false, "dosing frequency"),
            Handler::write(|w, _, a| {
                let id = patient(w, a)?.id.clone();
                let drug = arg(a, "drug").trim().to_lowercase();
                let dose = a.get("dose_mg").and_then(Value::as_f64).unwrap_or(0.0);
                if drug.is_empty() || dose <= 0.0 {
                    return Err("drug and a positive dose_mg are required".into());
                }
                w.prescriptions.push(Prescription { patient_id: id.clone(), drug: drug.clone(), dose_mg: dose });
                Ok(json!({"patient_id": id, "status": "prescribed", "drug": drug, "dose_mg": dose}))
            }),
        ),
        _ => return None,
    })
}

/// Lettered options `(A) text` found in `text`.
pub fn parse_options(text: &str) -> Vec<(char, String)> {
    let re = Regex::new(r"\(([A-E])\)\s*([^\n(]+)").expect("static regex");
    let mut out: Vec<(char, String)> = Vec::new();
    for c in re.captures_iter(text) {
        let letter = c[1].chars().next().unwrap_or('A');
        if out.iter().all(|(l, _)| *l != letter) {
            out.push((letter, c[2].trim().trim_end_matches(',').trim().to_string()));
        }
    }
    out
}

/// Implemented medical-QA tools, by name.
pub fn mqa_tool(name: &str) -> Option<(ToolDefinition, Handler)> {
    Some(match name {
        "analyze_answer_options" => (
            ToolDefinition::new(name, ToolType::Think, "Score each lettered option by retrieved evidence support.")
                .param("question", ParamKind::String, false, "question text; defaults to the ticket"),
            Handler::pure(|w, ctx: &ToolContext, a| {
                let q = match arg(a, "question") {
                    "" => ctx.ticket,
                    q => q,
                };
                let idx = knowledge(w)?;
                let mut rows = Vec::new();
                for (letter, text) in parse_options(q) {
                    let query = relaxed_query(&text);
                    let best = if query.is_empty() {
                        None
                    } else {
                        idx.search(&query, 1).map_err(|e| e.to_string())?.into_iter().next()
                    };
                    rows.push(json!({
                        "letter": letter.to_string(),
                        "option": text,
                        "support": best.as_ref().map_or(0.0, |h| h.score),
                        "evidence": best.map(|h| h.doc_id),
                    }));
                }
                if rows.is_empty() {
                    return Err("no lettered options found".into());
                }
                Ok(json!({"options": rows}))
            }),
        ),
        "compare_treatments" => (
            ToolDefinition::new(name, ToolType::Think, "Compare the evidence for two treatments.")
                .param("treatment_a", ParamKind::String, true, "first treatment")
                .param("treatment_b", ParamKind::String, true, "second treatment")
                .param("condition", ParamKind::String, false, "condition being treated"),
            Handler::pure(|w, _, a| {
                let cond = arg(a, "condition");
                let mut out = Map::new();
                for key in ["treatment_a", "treatment_b"] {
                    let q = format!("{} {cond}", arg(a, key));
                    let r = search(w, &q, 2, |_| true)?;
                    out.insert(key.into(), json!({"name": arg(a, key), "evidence": r["hits"]}));
                }
                Ok(Value::Object(out))
            }),
        ),
        _ => return None,
    })
}

/// Registry entry without clinical logic: echoes a simulated status.
pub fn stub(name: &str, tool_type: ToolType, domain: &str) -> (ToolDefinition, Handler) {
    let label = name.replace('_', " ");
    let def = ToolDefinition::new(name, tool_type, &format!("{label} ({domain}; simulated)"))
        .param("patient_id", ParamKind::String, false, "patient identifier")
        .param("details", ParamKind::String, false, "free-text input");
    let (tool, dom) = (name.to_string(), domain.to_string());
    let handler = if tool_type.is_pure() {
        Handler::pure(move |_, _, _| Ok(json!({"tool": tool, "domain": dom, "status": "simulated"})))
    } else {
        Handler::write(move |_, _, _| Ok(json!({"tool": tool, "domain": dom, "status": "simulated"})))
    };
    (def, handler)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::tools::world::MicroCase;

    fn ctx<'a>(ticket: &'a str, history: &'a [super::super::CallRecord]) -> ToolContext<'a> {
        ToolContext { ticket, history }
    }

    fn corpus_world() -> WorldState {
        let idx = KnowledgeIndex::build(vec![
            Passage {
                doc_id: "d1".into(),
                source: "pubmed".into(),
                title: "ACE".into(),
                content: "ACE inhibitors raise bradykinin".into(),
                category: "pharmacology".into(),
                dataset_name: String::new(),
            },
            Passage {
                doc_id: "d2".into(),
                source: "wiki".into(),
                title: "Sepsis".into(),
                content: "sepsis needs lactate".into(),
                category: "guideline".into(),
                dataset_name: String::new(),
            },
        ])
        .unwrap();
        WorldState::clinical().with_knowledge(Arc::new(idx))
    }

    #[test]
    fn search_filters_by_source() {
        let kit = knowledge_kit();
        let mut w = corpus_world();
        let r = kit.dispatch("search_pubmed", &json!({"query": "sepsis"}), &mut w, &ctx("", &[]));
        assert!(r.ok);
        assert_eq!(r.payload["hits"].as_array().unwrap().len(), 0);
        let r = kit.dispatch("search_medical_wiki", &json!({"query": "sepsis"}), &mut w, &ctx("", &[]));
        assert_eq!(r.payload["hits"][0]["doc_id"], "d2");
    }

    #[test]
    fn relaxes_conjunctions() {
        let kit = knowledge_kit();
        let mut w = corpus_world();
        let r = kit.dispatch("retrieve_evidence", &json!({"query": "bradykinin lactate"}), &mut w, &ctx("", &[]));
        assert_eq!(r.payload["relaxed"], true);
        assert_eq!(r.payload["hits"].as_array().unwrap().len(), 2);
        assert_eq!(r.payload["hits"][0]["citation"].as_str().unwrap().len(), "[doc:d1]".len());
    }

    #[test]
    fn syntax_errors_are_soft() {
        let kit = knowledge_kit();
        let mut w = corpus_world();
        let r = kit.dispatch("search_knowledge_base", &json!({"query": "(sepsis"}), &mut w, &ctx("", &[]));
        assert!(!r.ok);
    }

    #[test]
    fn assess_needs_lookup_first() {
        let kit = micro_kit();
        let mut w = WorldState { case: Some(MicroCase { finding: "F-1".into(), answer: "C".into() }), ..Default::default() };
        let r = kit.dispatch("assess_case", &json!({}), &mut w, &ctx("", &[]));
        assert!(r.payload.get("supported_option").is_none());
        let hist = [super::super::CallRecord { name: "lookup_fact".into(), arguments: Map::new(), ok: true }];
        let r = kit.dispatch("assess_case", &json!({}), &mut w, &ctx("", &hist));
        assert_eq!(r.payload["supported_option"], "C");
    }

    #[test]
    fn order_and_prescribe_mutate() {
        let mut kit = ToolKit::new("cd");
        for n in ["order_lab", "prescribe", "get_lab_results"] {
            let (d, h) = clinical_tool(n).unwrap();
            kit.register(d, h).unwrap();
        }
        let mut w = WorldState::clinical();
        let r = kit.dispatch("order_lab", &json!({"patient_id": "P001", "lab_name": "Lactate"}), &mut w, &ctx("", &[]));
        assert!(r.ok, "{r:?}");
        assert_eq!(r.payload["result"]["flag"], "high");
        let r = kit.dispatch("order_lab", &json!({"patient_id": "P001", "lab_name": "xyz"}), &mut w, &ctx("", &[]));
        assert!(!r.ok);
        assert_eq!(w.mutation_log.len(), 1);
        let r = kit.dispatch("get_lab_results", &json!({"patient_id": "P001"}), &mut w, &ctx("", &[]));
        assert_eq!(r.payload["labs"].as_array().unwrap().len(), 2);
        let r = kit.dispatch(
            "prescribe",
            &json!({"patient_id": "P001", "drug": "Amoxicillin", "dose_mg": 500}),
            &mut w,
            &ctx("", &[]),
        );
        assert!(r.ok);
        assert_eq!(w.prescriptions[0].drug, "amoxicillin");
    }

    #[test]
    fn ddx_and_options() {
        let (_, h) = clinical_tool("generate_ddx").unwrap();
        let Handler::Pure(f) = h else { panic!() };
        let mut a = Map::new();
        a.insert("symptoms".into(), json!("Fever and hypotension"));
        let out = f(&WorldState::default(), &ctx("", &[]), &a).unwrap();
        assert_eq!(out["differential"][0], "sepsis");
        let opts = parse_options("Q?\n(A) Bradykinin increase, (B) Renin decrease\n(C) x");
        assert_eq!(opts.len(), 3);
        assert_eq!(opts[0], ('A', "Bradykinin increase".into()));
        assert_eq!(opts[1].1, "Renin decrease");
    }
}
