//! Story and abductive-instance records and their line-delimited JSON files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::vocab::split_words;
use crate::error::{Error, Result};

/// Counterfactual branch: an alternative second sentence and rewritten ending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub initial: String,
    pub ending: [String; 3],
}

/// Five-sentence narrative with an optional counterfactual branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub premise: String,
    pub initial: String,
    pub ending: [String; 3],
    pub counterfactual: Option<Branch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Factual,
    Counterfactual,
}

/// One branch of a story viewed as a standalone five-sentence instance.
#[derive(Debug, Clone, Copy)]
pub struct StoryBranch<'a> {
    pub kind: BranchKind,
    pub sentences: [&'a str; 5],
}

impl Story {
    pub fn sentences(&self) -> [&str; 5] {
        [
            &self.premise,
            &self.initial,
            &self.ending[0],
            &self.ending[1],
            &self.ending[2],
        ]
    }

    /// The factual story and, when present, the counterfactual one sharing
    /// the same premise; each is trained on as a separate instance.
    pub fn branches(&self) -> Vec<StoryBranch<'_>> {
        let mut out = vec![StoryBranch {
            kind: BranchKind::Factual,
            sentences: self.sentences(),
        }];
        if let Some(cf) = &self.counterfactual {
            out.push(StoryBranch {
                kind: BranchKind::Counterfactual,
                sentences: [
                    &self.premise,
                    &cf.initial,
                    &cf.ending[0],
                    &cf.ending[1],
                    &cf.ending[2],
                ],
            });
        }
        out
    }

    pub fn texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.sentences().to_vec();
        if let Some(cf) = &self.counterfactual {
            out.push(&cf.initial);
            out.extend(cf.ending.iter().map(String::as_str));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("premise".into(), self.premise.clone().into());
        m.insert("initial".into(), self.initial.clone().into());
        m.insert("original_ending".into(), self.ending.to_vec().into());
        if let Some(cf) = &self.counterfactual {
            m.insert("counterfactual".into(), cf.initial.clone().into());
            m.insert("edited_ending".into(), cf.ending.to_vec().into());
        }
        Value::Object(m)
    }
}

/// An abductive NLI item: observations O₁ and O₂, hypotheses H₁ and H₂.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbductiveInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub obs1: String,
    pub obs2: String,
    pub hyp1: String,
    pub hyp2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    /// Reasoning-type tag used for breakdown reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Generated next events for H₁ and H₂.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<[String; 2]>,
}

impl AbductiveInstance {
    pub fn new(
        obs1: impl Into<String>,
        obs2: impl Into<String>,
        hyp1: impl Into<String>,
        hyp2: impl Into<String>,
        label: Option<u8>,
    ) -> Self {
        AbductiveInstance {
            id: None,
            obs1: obs1.into(),
            obs2: obs2.into(),
            hyp1: hyp1.into(),
            hyp2: hyp2.into(),
            label,
            category: None,
            generated: None,
        }
    }

    pub fn hypothesis(&self, j: usize) -> &str {
        if j == 0 {
            &self.hyp1
        } else {
            &self.hyp2
        }
    }

    /// Identifier used in reports: the record id or the position.
    pub fn key(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| index.to_string())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("obs1", &self.obs1),
            ("obs2", &self.obs2),
            ("hyp1", &self.hyp1),
            ("hyp2", &self.hyp2),
        ] {
            if split_words(v).is_empty() {
                return Err(format!("field {name} is empty"));
            }
        }
        if let Some(l) = self.label {
            if l != 1 && l != 2 {
                return Err(format!("label must be 1 or 2, got {l}"));
            }
        }
        Ok(())
    }

    /// Swaps H₁ and H₂ together with their generations and the label.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.hyp1, &mut s.hyp2);
        if let Some(g) = &mut s.generated {
            g.swap(0, 1);
        }
        s.label = s.label.map(|l| 3 - l);
        s
    }

    pub fn texts(&self) -> Vec<&str> {
        let mut out = vec![
            self.obs1.as_str(),
            self.obs2.as_str(),
            self.hyp1.as_str(),
            self.hyp2.as_str(),
        ];
        if let Some(g) = &self.generated {
            out.extend(g.iter().map(String::as_str));
        }
        out
    }
}

/// Splits a paragraph into sentences at `.`, `!` or `?` followed by
/// whitespace (closing quotes stay with their sentence).
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            while i + 1 < chars.len() && matches!(chars[i + 1], '"' | '\'' | '\u{201d}' | '.' | '!' | '?')
            {
                i += 1;
                cur.push(chars[i]);
            }
            if i + 1 >= chars.len() || chars[i + 1].is_whitespace() {
                let s = cur.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                cur.clear();
            }
        }
        i += 1;
    }
    let rest = cur.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

fn for_each_record(
    path: &Path,
    mut f: impl FnMut(usize, Map<String, Value>) -> std::result::Result<(), String>,
) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        f(line_no, obj).map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;
    }
    Ok(())
}

fn str_field(obj: &Map<String, Value>, name: &str) -> std::result::Result<String, String> {
    match obj.get(name) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(format!("field {name} is empty")),
        Some(_) => Err(format!("field {name} must be a string")),
        None => Err(format!("missing field {name}")),
    }
}

fn ending_field(obj: &Map<String, Value>, name: &str) -> std::result::Result<[String; 3], String> {
    let sentences: Vec<String> = match obj.get(name) {
        Some(Value::String(s)) => split_sentences(s),
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::String(s) => out.extend(split_sentences(s)),
                    _ => return Err(format!("field {name} must hold strings")),
                }
            }
            out
        }
        Some(_) => return Err(format!("field {name} must be a string or array of strings")),
        None => return Err(format!("missing field {name}")),
    };
    let n = sentences.len();
    sentences
        .try_into()
        .map_err(|_| format!("field {name} must hold exactly 3 sentences, found {n}"))
}

/// Reads a TIMETRAVEL-style file (`premise`, `initial`, `original_ending`,
/// `counterfactual`, `edited_ending`).
pub fn load_timetravel(path: &Path) -> Result<Vec<Story>> {
    let mut out = Vec::new();
    for_each_record(path, |_, obj| {
        out.push(Story {
            premise: str_field(&obj, "premise")?,
            initial: str_field(&obj, "initial")?,
            ending: ending_field(&obj, "original_ending")?,
            counterfactual: Some(Branch {
                initial: str_field(&obj, "counterfactual")?,
                ending: ending_field(&obj, "edited_ending")?,
            }),
        });
        Ok(())
    })?;
    Ok(out)
}

fn parse_label(v: Option<&Value>) -> std::result::Result<Option<u8>, String> {
    let n = match v {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Number(n)) => n.as_i64(),
        Some(Value::String(s)) => s.trim().parse::<i64>().ok(),
        Some(_) => None,
    };
    match n {
        Some(1) => Ok(Some(1)),
        Some(2) => Ok(Some(2)),
        _ => Err(format!("label must be 1 or 2, got {}", v.unwrap_or(&Value::Null))),
    }
}

/// Reads an αNLI-style file (`obs1`, `obs2`, `hyp1`, `hyp2`, optional
/// `label`, `id`/`story_id`, `category`, `generated`).
pub fn load_anli(path: &Path) -> Result<Vec<AbductiveInstance>> {
    let mut out = Vec::new();
    for_each_record(path, |_, obj| {
        let id = match obj.get("id").or_else(|| obj.get("story_id")) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(v) => Some(v.to_string()),
        };
        let category = match obj.get("category") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err("field category must be a string".into()),
        };
        let generated = match obj.get("generated") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value::<[String; 2]>(v.clone())
                    .map_err(|_| "field generated must be two strings".to_string())?,
            ),
        };
        let inst = AbductiveInstance {
            id,
            obs1: str_field(&obj, "obs1")?,
            obs2: str_field(&obj, "obs2")?,
            hyp1: str_field(&obj, "hyp1")?,
            hyp2: str_field(&obj, "hyp2")?,
            label: parse_label(obj.get("label"))?,
            category,
            generated,
        };
        inst.validate()?;
        out.push(inst);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Contract(e.to_string()))?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn write_stories(path: &Path, stories: &[Story]) -> Result<()> {
    let values: Vec<Value> = stories.iter().map(Story::to_json).collect();
    write_jsonl(path, &values)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const TT_LINE: &str = r#"{"premise": "Ann went out.", "initial": "She saw a dog.", "original_ending": "The dog barked. Ann ran. She got home.", "counterfactual": "She saw a cat.", "edited_ending": ["The cat purred.", "Ann smiled.", "She got home."]}"#;

    #[test]
    fn splits_sentences() {
        assert_eq!(
            split_sentences("The dog barked. Ann ran! She got \"home.\" Done"),
            vec!["The dog barked.", "Ann ran!", "She got \"home.\"", "Done"]
        );
    }

    #[test]
    fn loads_timetravel_record() {
        let f = tmp(&format!("{TT_LINE}\n{TT_LINE}\n"));
        let stories = load_timetravel(f.path()).unwrap();
        assert_eq!(stories.len(), 2);
        assert_eq!(stories[0].ending[1], "Ann ran.");
        assert_eq!(stories[0].counterfactual.as_ref().unwrap().ending[0], "The cat purred.");
        assert_eq!(stories[0].branches().len(), 2);
    }

    #[test]
    fn empty_timetravel_file_gives_no_stories() {
        let f = tmp("");
        assert!(load_timetravel(f.path()).unwrap().is_empty());
    }

    #[test]
    fn four_sentence_ending_is_schema_error() {
        let bad = TT_LINE.replace("She got home.\", \"counter", "She got home. Extra.\", \"counter");
        let f = tmp(&format!("{TT_LINE}\n{bad}\n"));
        match load_timetravel(f.path()) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("exactly 3"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_malformed_line_are_located() {
        let f = tmp(r#"{"premise": "a.", "initial": "b."}"#);
        assert!(matches!(load_timetravel(f.path()), Err(Error::Schema { line: 1, .. })));
        let f = tmp(&format!("{TT_LINE}\n{{\"premise\": \n"));
        assert!(matches!(load_timetravel(f.path()), Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn loads_anli_with_and_without_label() {
        let f = tmp(concat!(
            r#"{"obs1": "a.", "obs2": "b.", "hyp1": "c.", "hyp2": "d.", "label": 2}"#,
            "\n",
            r#"{"obs1": "a.", "obs2": "b.", "hyp1": "c.", "hyp2": "d.", "label": "1", "story_id": "x"}"#,
            "\n",
            r#"{"obs1": "a.", "obs2": "b.", "hyp1": "c.", "hyp2": "d."}"#,
            "\n"
        ));
        let items = load_anli(f.path()).unwrap();
        assert_eq!(items[0].label, Some(2));
        assert_eq!(items[1].label, Some(1));
        assert_eq!(items[1].id.as_deref(), Some("x"));
        assert_eq!(items[2].label, None);
    }

    #[test]
    fn label_three_is_schema_error() {
        let f = tmp(r#"{"obs1": "a.", "obs2": "b.", "hyp1": "c.", "hyp2": "d.", "label": 3}"#);
        assert!(matches!(load_anli(f.path()), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn anli_round_trips_through_jsonl() {
        let mut inst = AbductiveInstance::new("a.", "b.", "c.", "d.", Some(1));
        inst.generated = Some(["e.".into(), "f.".into()]);
        inst.category = Some("Emotional".into());
        let f = tempfile::NamedTempFile::new().unwrap();
        write_jsonl(f.path(), std::slice::from_ref(&inst)).unwrap();
        assert_eq!(load_anli(f.path()).unwrap(), vec![inst]);
    }

    #[test]
    fn swap_moves_label_and_generations() {
        let mut inst = AbductiveInstance::new("a", "b", "c", "d", Some(1));
        inst.generated = Some(["g1".into(), "g2".into()]);
        let s = inst.swapped();
        assert_eq!(s.hyp1, "d");
        assert_eq!(s.label, Some(2));
        assert_eq!(s.generated.unwrap()[0], "g2");
    }
}
