use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::DecodingParams;
use crate::prompt::{HistoryTurn, TaskId};

fn default_language() -> String {
    "fr".to_string()
}

/// One FSB demonstration dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub persona: Vec<String>,
    pub dialogue: Vec<HistoryTurn>,
}

/// Everything needed to run one agent: task (which also selects the prompt
/// variant), persona or image, backend and decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub task: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_description: Option<String>,
    pub backend_id: String,
    #[serde(default = "default_language")]
    pub target_language: String,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<Demonstration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldViolation {
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigViolations(pub Vec<FieldViolation>);

impl fmt::Display for ConfigViolations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigViolations {}

impl SessionConfig {
    pub fn persona(task: TaskId, traits: Vec<String>, backend_id: &str) -> Self {
        Self {
            task,
            persona: Some(traits),
            image_description: None,
            backend_id: backend_id.to_string(),
            target_language: default_language(),
            decoding: DecodingParams::default(),
            demonstrations: Vec::new(),
        }
    }

    pub fn int(image_description: &str, backend_id: &str) -> Self {
        Self {
            task: TaskId::Int,
            persona: None,
            image_description: Some(image_description.to_string()),
            backend_id: backend_id.to_string(),
            target_language: default_language(),
            decoding: DecodingParams::default(),
            demonstrations: Vec::new(),
        }
    }

    /// Lists every violated field.
    pub fn validate(&self) -> Result<(), ConfigViolations> {
        let mut v = Vec::new();
        let mut bad = |field, message: &str| {
            v.push(FieldViolation {
                field,
                message: message.to_string(),
            })
        };
        let persona_family = self.task.is_persona_family();
        match &self.persona {
            Some(_) if !persona_family => bad("persona", "only persona tasks take a persona"),
            Some(p) if p.is_empty() || p.iter().any(|t| t.trim().is_empty()) => {
                bad("persona", "traits must be non-empty")
            }
            None if persona_family => bad("persona", "required for persona tasks"),
            _ => {}
        }
        match &self.image_description {
            Some(_) if self.task != TaskId::Int => {
                bad("image_description", "only the int task takes an image")
            }
            Some(d) if d.trim().is_empty() => bad("image_description", "must be non-empty"),
            None if self.task == TaskId::Int => {
                bad("image_description", "required for the int task")
            }
            _ => {}
        }
        if self.backend_id.trim().is_empty() {
            bad("backend_id", "must be non-empty");
        }
        if self.target_language.trim().is_empty() {
            bad("target_language", "must be non-empty");
        }
        let d = &self.decoding;
        if d.max_new_tokens == 0 {
            bad("decoding.max_new_tokens", "must be > 0");
        }
        if !(d.temperature >= 0.0 && d.temperature.is_finite()) {
            bad("decoding.temperature", "must be finite and >= 0");
        }
        if !(d.top_p > 0.0 && d.top_p <= 1.0) {
            bad("decoding.top_p", "must be in (0, 1]");
        }
        if self.task == TaskId::Fsb && self.demonstrations.is_empty() {
            bad(
                "demonstrations",
                "the fsb task needs at least one demonstration",
            );
        }
        if self.task != TaskId::Fsb && !self.demonstrations.is_empty() {
            bad("demonstrations", "only the fsb task takes demonstrations");
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigViolations(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persona_and_image_exclusivity() {
        let ok = SessionConfig::persona(TaskId::PersonaAdvanced, vec!["I like cats.".into()], "m");
        assert!(ok.validate().is_ok());
        assert!(SessionConfig::int("a pear", "m").validate().is_ok());

        let mut no_image = SessionConfig::int("a pear", "m");
        no_image.image_description = None;
        let err = no_image.validate().unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].field, "image_description");

        let mut both = ok.clone();
        both.image_description = Some("x".into());
        both.backend_id.clear();
        let fields: Vec<_> = both
            .validate()
            .unwrap_err()
            .0
            .iter()
            .map(|v| v.field)
            .collect();
        assert_eq!(fields, ["image_description", "backend_id"]);
    }

    #[test]
    fn basis_task_has_no_persona() {
        let mut c = SessionConfig::persona(TaskId::VicunaBasis, vec!["x".into()], "m");
        assert!(c.validate().is_err());
        c.persona = None;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_shape() {
        let c: SessionConfig = serde_json::from_str(
            r#"{"task":"persona_shallow","persona":["I am a nurse."],"backend_id":"vicuna"}"#,
        )
        .unwrap();
        assert_eq!(c.target_language, "fr");
        assert_eq!(c.decoding, DecodingParams::default());
        assert!(serde_json::from_str::<SessionConfig>(r#"{"task":"int","backend":"x"}"#).is_err());
    }
}
