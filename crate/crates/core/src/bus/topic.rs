//! Topic names and subscription patterns.
//!
//! Topics are slash-separated UTF-8 levels, 1 to 16 of them, none empty.
//! Concrete topics carry no wildcards. Subscription patterns may use `+`
//! (exactly one level) and a trailing `#` (the remainder, zero or more
//! levels, so `home/#` also matches `home`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_LEVELS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopicError {
    #[error("topic has no levels")]
    Empty,
    #[error("topic has {0} levels, max {MAX_LEVELS}")]
    TooManyLevels(usize),
    #[error("empty level at position {0}")]
    EmptyLevel(usize),
    #[error("wildcard '{0}' not allowed in a concrete topic")]
    WildcardInTopic(char),
    #[error("wildcard must occupy a whole level, got {0:?}")]
    PartialWildcard(String),
    #[error("'#' is only allowed as the final level")]
    HashNotLast,
}

/// A concrete topic, e.g. `home/bob/vitals/spo2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic {
    levels: Vec<String>,
}

impl Topic {
    pub fn parse(path: &str) -> Result<Topic, TopicError> {
        let levels = split_levels(path)?;
        for level in &levels {
            if level.contains('+') {
                return Err(TopicError::WildcardInTopic('+'));
            }
            if level.contains('#') {
                return Err(TopicError::WildcardInTopic('#'));
            }
        }
        Ok(Topic { levels })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn path(&self) -> String {
        self.levels.join("/")
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

impl TryFrom<String> for Topic {
    type Error = TopicError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Topic::parse(&s)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.path()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PatternLevel {
    Literal(String),
    /// `+`: exactly one level.
    OneLevel,
    /// `#`: everything that remains, including nothing.
    Rest,
}

/// A subscription pattern, possibly containing wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicPattern {
    levels: Vec<PatternLevel>,
}

impl TopicPattern {
    pub fn parse(path: &str) -> Result<TopicPattern, TopicError> {
        let raw = split_levels(path)?;
        let mut levels = Vec::with_capacity(raw.len());
        let last = raw.len() - 1;
        for (i, level) in raw.into_iter().enumerate() {
            let parsed = match level.as_str() {
                "+" => PatternLevel::OneLevel,
                "#" => {
                    if i != last {
                        return Err(TopicError::HashNotLast);
                    }
                    PatternLevel::Rest
                }
                other => {
                    if other.contains('+') || other.contains('#') {
                        return Err(TopicError::PartialWildcard(other.to_string()));
                    }
                    PatternLevel::Literal(level)
                }
            };
            levels.push(parsed);
        }
        Ok(TopicPattern { levels })
    }

    /// True iff the concrete topic matches this pattern: literal levels must
    /// be equal, `+` consumes exactly one level, and a trailing `#` consumes
    /// whatever is left (possibly nothing).
    pub fn matches(&self, topic: &Topic) -> bool {
        let mut levels = topic.levels().iter();
        for pattern_level in &self.levels {
            match pattern_level {
                PatternLevel::Rest => return true,
                PatternLevel::OneLevel => {
                    if levels.next().is_none() {
                        return false;
                    }
                }
                PatternLevel::Literal(want) => match levels.next() {
                    Some(have) if have == want => {}
                    _ => return false,
                },
            }
        }
        levels.next().is_none()
    }

    pub fn path(&self) -> String {
        self.levels
            .iter()
            .map(|l| match l {
                PatternLevel::Literal(s) => s.as_str(),
                PatternLevel::OneLevel => "+",
                PatternLevel::Rest => "#",
            })
            .collect::<Vec<_>>()
            .join("/")
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

impl TryFrom<String> for TopicPattern {
    type Error = TopicError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        TopicPattern::parse(&s)
    }
}

impl From<TopicPattern> for String {
    fn from(p: TopicPattern) -> String {
        p.path()
    }
}

/// Convenience wrapper over [`TopicPattern::matches`] for string inputs.
/// Returns an error if either side fails to parse.
pub fn match_strs(pattern: &str, topic: &str) -> Result<bool, TopicError> {
    let p = TopicPattern::parse(pattern)?;
    let t = Topic::parse(topic)?;
    Ok(p.matches(&t))
}

fn split_levels(path: &str) -> Result<Vec<String>, TopicError> {
    if path.is_empty() {
        return Err(TopicError::Empty);
    }
    let levels: Vec<String> = path.split('/').map(str::to_string).collect();
    if levels.len() > MAX_LEVELS {
        return Err(TopicError::TooManyLevels(levels.len()));
    }
    for (i, level) in levels.iter().enumerate() {
        if level.is_empty() {
            return Err(TopicError::EmptyLevel(i));
        }
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wildcard_plus_and_hash_match() {
        assert!(match_strs("home/+/vitals/#", "home/bob/vitals/spo2").unwrap());
        assert!(match_strs("home/#", "home/bob/door").unwrap());
        assert!(!match_strs("home/+", "home/bob/door").unwrap());
        assert!(match_strs("home/+", "home/bob").unwrap());
    }

    #[test]
    fn hash_matches_parent_level() {
        assert!(match_strs("home/#", "home").unwrap());
        assert!(match_strs("#", "a/b/c").unwrap());
    }

    #[test]
    fn literal_only_matches_exactly() {
        assert!(match_strs("a/b", "a/b").unwrap());
        assert!(!match_strs("a/b", "a/b/c").unwrap());
        assert!(!match_strs("a/b/c", "a/b").unwrap());
    }

    #[test]
    fn wildcards_rejected_in_concrete_topics() {
        assert!(matches!(
            Topic::parse("a/+/b"),
            Err(TopicError::WildcardInTopic('+'))
        ));
        assert!(matches!(
            Topic::parse("a/#"),
            Err(TopicError::WildcardInTopic('#'))
        ));
    }

    #[test]
    fn malformed_patterns_rejected() {
        assert!(matches!(TopicPattern::parse(""), Err(TopicError::Empty)));
        assert!(matches!(
            TopicPattern::parse("a//b"),
            Err(TopicError::EmptyLevel(1))
        ));
        assert!(matches!(
            TopicPattern::parse("a/#/b"),
            Err(TopicError::HashNotLast)
        ));
        assert!(matches!(
            TopicPattern::parse("a/b+c"),
            Err(TopicError::PartialWildcard(_))
        ));
        let long = vec!["x"; 17].join("/");
        assert!(matches!(
            TopicPattern::parse(&long),
            Err(TopicError::TooManyLevels(17))
        ));
    }

    #[test]
    fn sixteen_levels_accepted() {
        let path = vec!["x"; 16].join("/");
        assert!(Topic::parse(&path).is_ok());
    }

    /// Level-by-level reference matcher, written as a direct recursion over
    /// string slices so it shares nothing with the implementation.
    fn oracle_match(pattern: &[&str], topic: &[&str]) -> bool {
        match (pattern.first(), topic.first()) {
            (None, None) => true,
            (Some(&"#"), _) => true,
            (None, Some(_)) => false,
            (Some(_), None) => false,
            (Some(&p), Some(&t)) => {
                (p == "+" || p == t) && oracle_match(&pattern[1..], &topic[1..])
            }
        }
    }

    fn topic_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "bob", "vitals", "x9"]), 1..6)
            .prop_map(|lv| lv.join("/"))
    }

    fn pattern_strategy() -> impl Strategy<Value = String> {
        (
            prop::collection::vec(
                prop::sample::select(vec!["a", "b", "bob", "vitals", "x9", "+"]),
                1..6,
            ),
            prop::bool::ANY,
        )
            .prop_map(|(mut lv, hash)| {
                if hash {
                    lv.push("#");
                }
                lv.join("/")
            })
    }

    proptest! {
        #[test]
        fn matches_agree_with_oracle(pattern in pattern_strategy(), topic in topic_strategy()) {
            let got = match_strs(&pattern, &topic).unwrap();
            let p: Vec<&str> = pattern.split('/').collect();
            let t: Vec<&str> = topic.split('/').collect();
            prop_assert_eq!(got, oracle_match(&p, &t));
        }

        #[test]
        fn topic_matches_itself_as_pattern(topic in topic_strategy()) {
            prop_assert!(match_strs(&topic, &topic).unwrap());
        }
    }
}
