//! Episode-local domain state that tools read and write.

use std::collections::BTreeMap;
use std::sync::Arc;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::knowledge::KnowledgeIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allergy {
    pub substance: String,
    #[serde(default)]
    pub severity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub ref_low: Option<f64>,
    #[serde(default)]
    pub ref_high: Option<f64>,
}

impl LabResult {
    pub fn flag(&self) -> &'static str {
        match (self.ref_low, self.ref_high) {
            (Some(lo), _) if self.value < lo => "low",
            (_, Some(hi)) if self.value > hi => "high",
            _ => "normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub age: u32,
    pub sex: String,
    #[serde(default)]
    pub allergies: Vec<Allergy>,
    #[serde(default)]
    pub medications: Vec<String>,
    #[serde(default)]
    pub conditions: Vec<String>,
    #[serde(default)]
    pub vitals: BTreeMap<String, f64>,
    /// Results available on record without ordering.
    #[serde(default)]
    pub labs: Vec<LabResult>,
    /// Results returned when the named test is ordered.
    #[serde(default)]
    pub orderable_labs: BTreeMap<String, LabResult>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugInfo {
    pub class: String,
    /// Usual single adult dose.
    pub reference_dose_mg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Drug name or drug class.
    pub a: String,
    pub b: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroCase {
    pub finding: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub tool: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub patient_id: String,
    pub drug: String,
    pub dose_mg: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WorldState {
    #[serde(default)]
    pub patients: BTreeMap<String, Patient>,
    #[serde(default)]
    pub drugs: BTreeMap<String, DrugInfo>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub case: Option<MicroCase>,
    #[serde(default)]
    pub labs_ordered: Vec<(String, String)>,
    #[serde(default)]
    pub prescriptions: Vec<Prescription>,
    #[serde(default)]
    pub mutation_log: Vec<Mutation>,
    /// Shared read-only passage store; not part of the hashed state.
    #[serde(skip)]
    pub knowledge: Option<Arc<KnowledgeIndex>>,
}

const CLINICAL_DB: &str = include_str!("../../fixtures/clinical_db.json");

impl WorldState {
    /// The seeded clinical database shared by the patient-facing domains.
    pub fn clinical() -> Self {
        serde_json::from_str(CLINICAL_DB).expect("embedded clinical db parses")
    }

    pub fn with_knowledge(mut self, index: Arc<KnowledgeIndex>) -> Self {
        self.knowledge = Some(index);
        self
    }

    /// MD5 over the serialized state (knowledge handle excluded).
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world serializes");
        Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn drug_class(&self, drug: &str) -> Option<&str> {
        self.drugs.get(&drug.to_lowercase()).map(|d| d.class.as_str())
    }

    /// Allergy entry of `patient` that `drug` (by name or class) hits.
    pub fn allergy_conflict(&self, patient: &str, drug: &str) -> Option<&Allergy> {
        let p = self.patients.get(patient)?;
        let drug = drug.to_lowercase();
        let class = self.drug_class(&drug).map(str::to_lowercase);
        p.allergies.iter().find(|a| {
            let s = a.substance.to_lowercase();
            s == drug || class.as_deref() == Some(s.as_str())
        })
    }

    /// Known interaction between two drugs, matching names or classes.
    pub fn interaction(&self, x: &str, y: &str) -> Option<&Interaction> {
        let keys = |d: &str| {
            let d = d.to_lowercase();
            let mut k = vec![d.clone()];
            if let Some(c) = self.drug_class(&d) {
                k.push(c.to_lowercase());
            }
            k
        };
        let (kx, ky) = (keys(x), keys(y));
        self.interactions.iter().find(|i| {
            let (a, b) = (i.a.to_lowercase(), i.b.to_lowercase());
            (kx.contains(&a) && ky.contains(&b)) || (kx.contains(&b) && ky.contains(&a))
        })
    }
}
