//! Scenario reports: observations, expectations and JSONL serialization.

use std::fmt;

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

/// An observed quantity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Word(u32),
    Count(u64),
    Flag(bool),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Word(w) => write!(f, "0x{w:08x}"),
            Value::Count(c) => write!(f, "{c}"),
            Value::Flag(b) => write!(f, "{b}"),
            Value::Text(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Word(_) | Value::Text(_) => s.serialize_str(&self.to_string()),
            Value::Count(c) => s.serialize_u64(*c),
            Value::Flag(b) => s.serialize_bool(*b),
        }
    }
}

impl Value {
    fn numeric(&self) -> Option<u64> {
        match self {
            Value::Word(w) => Some(u64::from(*w)),
            Value::Count(c) => Some(*c),
            _ => None,
        }
    }
}

/// What an observation is required to be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Eq(Value),
    Ne(Value),
    AtLeast(u64),
    AtMost(u64),
}

impl Expect {
    pub fn holds(&self, value: &Value) -> bool {
        match self {
            Expect::Eq(v) => v == value,
            Expect::Ne(v) => v != value,
            Expect::AtLeast(n) => value.numeric().is_some_and(|x| x >= *n),
            Expect::AtMost(n) => value.numeric().is_some_and(|x| x <= *n),
        }
    }
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expect::Eq(v) => write!(f, "== {v}"),
            Expect::Ne(v) => write!(f, "!= {v}"),
            Expect::AtLeast(n) => write!(f, ">= {n}"),
            Expect::AtMost(n) => write!(f, "<= {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub label: String,
    pub value: Value,
    pub expect: Option<Expect>,
}

impl Observation {
    pub fn ok(&self) -> Option<bool> {
        self.expect.as_ref().map(|e| e.holds(&self.value))
    }
}

impl Serialize for Observation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Observation", 4)?;
        st.serialize_field("label", &self.label)?;
        st.serialize_field("value", &self.value)?;
        st.serialize_field("expect", &self.expect.as_ref().map(|e| e.to_string()))?;
        st.serialize_field("ok", &self.ok())?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub steps: u64,
    pub observations: Vec<Observation>,
    pub notes: Vec<String>,
}

impl ScenarioReport {
    pub fn new(name: &str) -> ScenarioReport {
        ScenarioReport { name: name.to_string(), passed: false, steps: 0, observations: Vec::new(), notes: Vec::new() }
    }

    /// Records a value without a requirement.
    pub fn record(&mut self, label: &str, value: Value) {
        self.observations.push(Observation { label: label.to_string(), value, expect: None });
        self.refresh();
    }

    pub fn expect(&mut self, label: &str, value: Value, expect: Expect) {
        self.observations.push(Observation { label: label.to_string(), value, expect: Some(expect) });
        self.refresh();
    }

    pub fn expect_eq(&mut self, label: &str, value: Value, expected: Value) {
        self.expect(label, value, Expect::Eq(expected));
    }

    /// Requires the attack and control observations to disagree.
    pub fn expect_differs(&mut self, attack: &str, control: &str) {
        let differs = match (self.get(attack), self.get(control)) {
            (Some(a), Some(c)) => a != c,
            _ => false,
        };
        self.expect_eq(&format!("{attack} != {control}"), Value::Flag(differs), Value::Flag(true));
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn get(&self, label: &str) -> Option<&Value> {
        self.observations.iter().find(|o| o.label == label).map(|o| &o.value)
    }

    /// Passed iff there is at least one expectation and every one holds.
    fn refresh(&mut self) {
        let mut any = false;
        let mut all = true;
        for o in &self.observations {
            if let Some(ok) = o.ok() {
                any = true;
                all &= ok;
            }
        }
        self.passed = any && all;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }
}

/// Serializes reports one per line.
pub fn to_jsonl(reports: &[ScenarioReport]) -> String {
    reports.iter().map(|r| r.to_json() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passed_needs_an_expectation() {
        let mut r = ScenarioReport::new("x");
        r.record("info", Value::Count(3));
        assert!(!r.passed);
        r.expect_eq("a", Value::Word(1), Value::Word(1));
        assert!(r.passed);
        r.expect("b", Value::Count(2), Expect::AtLeast(3));
        assert!(!r.passed);
    }

    #[test]
    fn expectations() {
        assert!(Expect::AtMost(16).holds(&Value::Count(16)));
        assert!(!Expect::AtMost(16).holds(&Value::Flag(true)));
        assert!(Expect::Ne(Value::Word(0)).holds(&Value::Word(1)));
    }

    #[test]
    fn json_shape() {
        let mut r = ScenarioReport::new("demo");
        r.steps = 12;
        r.expect_eq("leak", Value::Word(0xCAFE_0001), Value::Word(0xCAFE_0001));
        r.record("mode", Value::Text("Handler".into()));
        assert_eq!(
            r.to_json(),
            r#"{"name":"demo","passed":true,"steps":12,"observations":[{"label":"leak","value":"0xcafe0001","expect":"== 0xcafe0001","ok":true},{"label":"mode","value":"Handler","expect":null,"ok":null}],"notes":[]}"#
        );
    }

    use proptest::prelude::*;

    #[derive(Debug, Clone)]
    enum Op {
        Record(u64),
        AtLeast(u64, u64),
        Eq(u32, u32),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            any::<u64>().prop_map(Op::Record),
            (0..10u64, 0..10u64).prop_map(|(a, b)| Op::AtLeast(a, b)),
            (0..3u32, 0..3u32).prop_map(|(a, b)| Op::Eq(a, b)),
        ]
    }

    proptest! {
        #[test]
        fn passed_iff_some_expectation_and_all_hold(ops in proptest::collection::vec(op(), 0..12)) {
            let mut r = ScenarioReport::new("p");
            let mut verdicts = Vec::new();
            for (i, o) in ops.iter().enumerate() {
                let label = format!("o{i}");
                match *o {
                    Op::Record(v) => r.record(&label, Value::Count(v)),
                    Op::AtLeast(v, n) => {
                        r.expect(&label, Value::Count(v), Expect::AtLeast(n));
                        verdicts.push(v >= n);
                    }
                    Op::Eq(a, b) => {
                        r.expect_eq(&label, Value::Word(a), Value::Word(b));
                        verdicts.push(a == b);
                    }
                }
            }
            prop_assert_eq!(r.passed, !verdicts.is_empty() && verdicts.iter().all(|&v| v));
            let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
            prop_assert_eq!(json["observations"].as_array().unwrap().len(), ops.len());
        }
    }
}
