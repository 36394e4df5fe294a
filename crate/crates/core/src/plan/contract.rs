//! Output contracts and the rule vocabulary used to check node outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A node output document: field name to value.
pub type Payload = Map<String, Value>;

/// How a contract is checked. Recorded for audit only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMethod {
    Syntactic,
    CodeSemantic,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Number,
    Integer,
    Bool,
    Object,
    Array,
    Null,
}

impl FieldType {
    pub fn matches(self, value: &Value) -> bool {
        match self {
            FieldType::String => value.is_string(),
            FieldType::Number => value.is_number(),
            FieldType::Integer => value.is_i64() || value.is_u64(),
            FieldType::Bool => value.is_boolean(),
            FieldType::Object => value.is_object(),
            FieldType::Array => value.is_array(),
            FieldType::Null => value.is_null(),
        }
    }

    /// A value of this type, used to synthesize conforming payloads.
    pub fn sample(self) -> Value {
        match self {
            FieldType::String => Value::String(String::new()),
            FieldType::Number | FieldType::Integer => Value::from(0),
            FieldType::Bool => Value::Bool(true),
            FieldType::Object => Value::Object(Map::new()),
            FieldType::Array => Value::Array(Vec::new()),
            FieldType::Null => Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValidationRule {
    FieldPresent {
        field: String,
    },
    FieldType {
        field: String,
        #[serde(rename = "type")]
        ty: FieldType,
    },
    OneOf {
        field: String,
        values: Vec<Value>,
    },
    Predicate {
        name: String,
    },
}

impl fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationRule::FieldPresent { field } => write!(f, "field exists: {field}"),
            ValidationRule::FieldType { field, ty } => write!(f, "field {field} is {ty:?}"),
            ValidationRule::OneOf { field, values } => {
                write!(f, "field {field} in {}", Value::Array(values.clone()))
            }
            ValidationRule::Predicate { name } => write!(f, "predicate {name}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputContract {
    pub method: ValidationMethod,
    pub rules: Vec<ValidationRule>,
}

impl OutputContract {
    pub fn new(method: ValidationMethod, rules: Vec<ValidationRule>) -> Self {
        Self { method, rules }
    }

    /// Syntactic contract requiring each named field to be present.
    pub fn fields(names: &[&str]) -> Self {
        Self::new(
            ValidationMethod::Syntactic,
            names.iter().map(|f| ValidationRule::FieldPresent { field: f.to_string() }).collect(),
        )
    }

    /// Best-effort payload satisfying every field rule of this contract.
    /// Predicate rules contribute nothing.
    pub fn conforming_payload(&self) -> Payload {
        let mut payload = Payload::new();
        for rule in &self.rules {
            match rule {
                ValidationRule::FieldPresent { field } => {
                    payload.entry(field.clone()).or_insert(Value::Bool(true));
                }
                ValidationRule::FieldType { field, ty } => {
                    payload.insert(field.clone(), ty.sample());
                }
                ValidationRule::OneOf { field, values } => {
                    if let Some(v) = values.first() {
                        payload.insert(field.clone(), v.clone());
                    }
                }
                ValidationRule::Predicate { .. } => {}
            }
        }
        payload
    }
}

pub type PredicateFn = dyn Fn(&Payload) -> bool + Send + Sync;

/// Named predicates that contract rules may reference.
#[derive(Clone, Default)]
pub struct PredicateRegistry {
    predicates: BTreeMap<String, Arc<PredicateFn>>,
}

impl PredicateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&Payload) -> bool + Send + Sync + 'static,
    {
        self.predicates.insert(name.into(), Arc::new(f));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.predicates.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Arc<PredicateFn>> {
        self.predicates.get(name)
    }
}

impl fmt::Debug for PredicateRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.predicates.keys()).finish()
    }
}

/// Result of one rule against one payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: ValidationRule,
    pub passed: bool,
}

/// Evaluates one rule. `None` means the rule names an unknown predicate.
pub fn check_rule(rule: &ValidationRule, payload: &Payload, predicates: &PredicateRegistry) -> Option<bool> {
    Some(match rule {
        ValidationRule::FieldPresent { field } => payload.contains_key(field),
        ValidationRule::FieldType { field, ty } => payload.get(field).is_some_and(|v| ty.matches(v)),
        ValidationRule::OneOf { field, values } => payload.get(field).is_some_and(|v| values.contains(v)),
        ValidationRule::Predicate { name } => (predicates.get(name)?)(payload),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rules_round_trip_through_json() {
        let rules: Vec<ValidationRule> = serde_json::from_value(json!([
            {"rule": "field_present", "field": "patch"},
            {"rule": "field_type", "field": "n", "type": "integer"},
            {"rule": "one_of", "field": "status", "values": ["ok", "warn"]},
            {"rule": "predicate", "name": "non_empty"}
        ]))
        .unwrap();
        assert_eq!(rules.len(), 4);
        assert!(serde_json::from_value::<ValidationRule>(json!({"rule": "field_present"})).is_err());
    }

    #[test]
    fn conforming_payload_passes_field_rules() {
        let contract = OutputContract::new(
            ValidationMethod::Syntactic,
            vec![
                ValidationRule::FieldPresent { field: "a".into() },
                ValidationRule::FieldType { field: "b".into(), ty: FieldType::Integer },
                ValidationRule::OneOf { field: "c".into(), values: vec![json!("x"), json!("y")] },
            ],
        );
        let payload = contract.conforming_payload();
        let preds = PredicateRegistry::new();
        for rule in &contract.rules {
            assert_eq!(check_rule(rule, &payload, &preds), Some(true), "{rule}");
        }
    }

    #[test]
    fn unknown_predicate_is_none() {
        let rule = ValidationRule::Predicate { name: "nope".into() };
        assert_eq!(check_rule(&rule, &Payload::new(), &PredicateRegistry::new()), None);
    }
}
