//! Prompt templates, bundled at build time and overridable from a directory.

use std::collections::BTreeMap;
use std::path::Path;

const BUILTIN: [(&str, &str); 22] = [
    ("alfred_state_tracker", include_str!("../prompts/alfred_state_tracker.txt")),
    ("code_retry", include_str!("../prompts/code_retry.txt")),
    ("diff_retry", include_str!("../prompts/diff_retry.txt")),
    ("diff_verifier", include_str!("../prompts/diff_verifier.txt")),
    ("direct", include_str!("../prompts/direct.txt")),
    ("direct_cot_sc", include_str!("../prompts/direct_cot_sc.txt")),
    ("forward_chain", include_str!("../prompts/forward_chain.txt")),
    ("hw_extract", include_str!("../prompts/hw_extract.txt")),
    ("hw_inspect", include_str!("../prompts/hw_inspect.txt")),
    ("hw_resolve", include_str!("../prompts/hw_resolve.txt")),
    ("hw_step", include_str!("../prompts/hw_step.txt")),
    ("hw_summarize", include_str!("../prompts/hw_summarize.txt")),
    ("minimal_checklist", include_str!("../prompts/minimal_checklist.txt")),
    ("plan_retry", include_str!("../prompts/plan_retry.txt")),
    ("python_symbolic", include_str!("../prompts/python_symbolic.txt")),
    ("python_tabular", include_str!("../prompts/python_tabular.txt")),
    ("react", include_str!("../prompts/react.txt")),
    ("reflexion", include_str!("../prompts/reflexion.txt")),
    ("reflexion_reflect", include_str!("../prompts/reflexion_reflect.txt")),
    ("retrieval_grounded", include_str!("../prompts/retrieval_grounded.txt")),
    ("self_refine_critique", include_str!("../prompts/self_refine_critique.txt")),
    ("self_refine_revise", include_str!("../prompts/self_refine_revise.txt")),
];

#[derive(Debug, Clone)]
pub struct Prompts {
    templates: BTreeMap<String, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Prompts {
    /// Builtin templates with any `<name>.txt` in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut p = Self::default();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    p.templates
                        .insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(p)
    }

    pub fn get(&self, name: &str) -> &str {
        self.templates
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("no prompt template named {name:?}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Substitutes each `{key}` placeholder. Unknown placeholders are left as is.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        fill(self.get(name), vars)
    }
}

pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
