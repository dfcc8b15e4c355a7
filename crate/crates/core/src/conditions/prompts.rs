//! Prompt templates for the three mining stages. The shipped defaults are
//! embedded from `assets/prompts/`; a directory of the same six files can
//! override them at runtime.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub caption_system: String,
    pub caption_user: String,
    pub extract_system: String,
    pub extract_user: String,
    pub generate_system: String,
    pub generate_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            caption_system: include_str!("../../assets/prompts/captioning_system.txt").into(),
            caption_user: include_str!("../../assets/prompts/captioning_user.txt").into(),
            extract_system: include_str!("../../assets/prompts/extraction_system.txt").into(),
            extract_user: include_str!("../../assets/prompts/extraction_user.txt").into(),
            generate_system: include_str!("../../assets/prompts/generation_system.txt").into(),
            generate_user: include_str!("../../assets/prompts/generation_user.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Load all six templates from a directory using the shipped file names.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| Error::io(dir.join(name), e))
        };
        Ok(PromptTemplates {
            caption_system: read("captioning_system.txt")?,
            caption_user: read("captioning_user.txt")?,
            extract_system: read("extraction_system.txt")?,
            extract_user: read("extraction_user.txt")?,
            generate_system: read("generation_system.txt")?,
            generate_user: read("generation_user.txt")?,
        })
    }

    /// User prompt for the generation stage: the template followed by the
    /// numbered question list.
    pub fn render_generation_user(&self, questions: &[String]) -> String {
        let mut out = self.generate_user.trim_end().to_string();
        out.push('\n');
        for (i, q) in questions.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, q));
        }
        out
    }

    /// User prompt for the extraction stage: the template followed by the
    /// numbered captions.
    pub fn render_extraction_user(&self, captions: &[String]) -> String {
        let mut out = self.extract_user.trim_end().to_string();
        out.push('\n');
        for (i, c) in captions.iter().enumerate() {
            out.push_str(&format!("Caption {}: {}\n", i + 1, c));
        }
        out
    }
}
