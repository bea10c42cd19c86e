//! Topic-level publish/subscribe authorization.
//!
//! ```yaml
//! topics:
//!   /command:  {publish: [ground_station], subscribe: [ground_station, agent]}
//! ```
//!
//! Anything not listed is denied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// The demonstration policy: the ground station / monitor / attacker matrix,
/// plus rows for the mobile agent, the relay and the broker's event feed.
pub const DEMO_POLICY: &str = "\
topics:
  /command:  {publish: [ground_station, relay], subscribe: [ground_station, agent]}
  /command_in: {publish: [ground_station], subscribe: [relay]}
  /e-stop:   {publish: [ground_station, monitor], subscribe: [ground_station, agent]}
  /status:   {publish: [ground_station, monitor, agent], subscribe: [ground_station, monitor]}
  /security-events: {subscribe: [ground_station, monitor]}
";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthzError {
    #[error("policy parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("topic {0} is listed more than once")]
    DuplicateTopic(String),
    #[error("cannot read policy {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Publish,
    Subscribe,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Publish => "publish",
            Action::Subscribe => "subscribe",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicRule {
    #[serde(default)]
    pub publish: BTreeSet<String>,
    #[serde(default)]
    pub subscribe: BTreeSet<String>,
}

impl TopicRule {
    fn set(&self, action: Action) -> &BTreeSet<String> {
        match action {
            Action::Publish => &self.publish,
            Action::Subscribe => &self.subscribe,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuthzPolicy {
    topics: BTreeMap<String, TopicRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub allow: bool,
    pub reason: String,
}

pub fn normalize_topic(topic: &str) -> String {
    if topic.starts_with('/') {
        topic.to_string()
    } else {
        format!("/{topic}")
    }
}

/// Keeps duplicate keys visible, which a map type would silently merge.
struct TopicEntries(Vec<(String, TopicRule)>);

impl<'de> Deserialize<'de> for TopicEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = TopicEntries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a mapping of topic names to rules")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<TopicEntries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Option<TopicRule>>()? {
                    out.push((k, v.unwrap_or_default()));
                }
                Ok(TopicEntries(out))
            }
            fn visit_unit<E>(self) -> Result<TopicEntries, E> {
                Ok(TopicEntries(Vec::new()))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    topics: Option<TopicEntries>,
}

fn duplicate_key(message: &str) -> Option<String> {
    // The YAML parser rejects repeated keys in a single mapping itself.
    let rest = message.split("duplicate entry with key \"").nth(1)?;
    Some(rest.split('"').next()?.to_string())
}

impl AuthzPolicy {
    pub fn from_rules(rules: impl IntoIterator<Item = (String, TopicRule)>) -> Result<Self, AuthzError> {
        let mut topics = BTreeMap::new();
        for (topic, rule) in rules {
            let topic = normalize_topic(&topic);
            if topics.contains_key(&topic) {
                return Err(AuthzError::DuplicateTopic(topic));
            }
            topics.insert(topic, rule);
        }
        Ok(Self { topics })
    }

    pub fn load(path: &Path) -> Result<Self, AuthzError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AuthzError::Io { path: path.display().to_string(), message: e.to_string() })?;
        policy_load(&text)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &TopicRule)> {
        self.topics.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn rule(&self, topic: &str) -> Option<&TopicRule> {
        self.topics.get(&normalize_topic(topic))
    }

    pub fn check(&self, principal: &str, topic: &str, action: Action) -> Decision {
        let topic = normalize_topic(topic);
        match self.topics.get(&topic) {
            Some(rule) if rule.set(action).contains(principal) => {
                Decision { allow: true, reason: format!("{action} rule for {topic}") }
            }
            _ => Decision { allow: false, reason: "default-deny".into() },
        }
    }

    /// Removes `principal` from one action set. Used to probe monotonicity.
    pub fn without(&self, principal: &str, topic: &str, action: Action) -> Self {
        let mut out = self.clone();
        if let Some(rule) = out.topics.get_mut(&normalize_topic(topic)) {
            match action {
                Action::Publish => rule.publish.remove(principal),
                Action::Subscribe => rule.subscribe.remove(principal),
            };
        }
        out
    }
}

pub fn policy_load(text: &str) -> Result<AuthzPolicy, AuthzError> {
    if text.trim().is_empty() {
        return Ok(AuthzPolicy::default());
    }
    let file: Option<PolicyFile> = serde_yaml::from_str(text).map_err(|e| {
        let message = e.to_string();
        if let Some(key) = duplicate_key(&message) {
            return AuthzError::DuplicateTopic(normalize_topic(&key));
        }
        let line = e.location().map(|l| l.line()).unwrap_or(0);
        AuthzError::ParseError { line, message }
    })?;
    let entries = file.and_then(|f| f.topics).map(|t| t.0).unwrap_or_default();
    AuthzPolicy::from_rules(entries)
}

pub fn check(policy: &AuthzPolicy, principal: &str, topic: &str, action: Action) -> Decision {
    policy.check(principal, topic, action)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> AuthzPolicy {
        policy_load(DEMO_POLICY).unwrap()
    }

    #[test]
    fn demo_command_publishers() {
        let p = demo();
        let publishers: Vec<_> = p.rule("/command").unwrap().publish.iter().cloned().collect();
        assert_eq!(publishers, ["ground_station", "relay"]);
    }

    #[test]
    fn table_rows() {
        let p = demo();
        assert!(p.check("ground_station", "/command", Action::Publish).allow);
        assert!(!p.check("monitor", "/command", Action::Publish).allow);
        assert!(!p.check("attacker", "/command", Action::Publish).allow);
        assert!(p.check("monitor", "/e-stop", Action::Publish).allow);
        assert!(!p.check("monitor", "/e-stop", Action::Subscribe).allow);
        let d = p.check("anyone", "/unlisted", Action::Subscribe);
        assert_eq!(d, Decision { allow: false, reason: "default-deny".into() });
    }

    #[test]
    fn empty_document_denies_everything() {
        for text in ["", "topics:", "topics: {}", "---\n"] {
            let p = policy_load(text).unwrap();
            assert!(!p.check("ground_station", "/command", Action::Publish).allow, "{text:?}");
        }
    }

    #[test]
    fn duplicate_topics() {
        let text = "topics:\n  /command: {publish: [a]}\n  /command: {publish: [b]}\n";
        assert_eq!(policy_load(text), Err(AuthzError::DuplicateTopic("/command".into())));
        let text = "topics:\n  command: {publish: [a]}\n  /command: {publish: [b]}\n";
        assert_eq!(policy_load(text), Err(AuthzError::DuplicateTopic("/command".into())));
    }

    #[test]
    fn missing_sections_are_empty() {
        let p = policy_load("topics:\n  /status: {publish: [agent]}\n  /x:\n").unwrap();
        assert!(p.rule("/status").unwrap().subscribe.is_empty());
        assert_eq!(p.rule("/x"), Some(&TopicRule::default()));
        assert!(p.check("agent", "status", Action::Publish).allow, "names are normalized");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = policy_load("topics:\n  /a: {publish: [x]}\n  /b: {publish: [y}\n").unwrap_err();
        assert!(matches!(err, AuthzError::ParseError { line: 3, .. }), "{err:?}");
        assert!(matches!(policy_load("topics:\n  /a: {pub: [x]}\n"), Err(AuthzError::ParseError { .. })));
    }
}
