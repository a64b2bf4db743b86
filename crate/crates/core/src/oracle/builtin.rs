use super::grammar::{GrammarError, TaskGrammar};

/// Grammars shipped with the crate, by name.
pub const BUILTIN_GRAMMARS: &[(&str, &str)] = &[
    (
        "concat-last-letter",
        include_str!("../../grammars/concat-last-letter.toml"),
    ),
    ("concat-alt", include_str!("../../grammars/concat-alt.toml")),
    (
        "chicken-rabbit",
        include_str!("../../grammars/chicken-rabbit.toml"),
    ),
    (
        "toy-3-level",
        include_str!("../../grammars/toy-3-level.toml"),
    ),
];

pub fn builtin_grammar(name: &str) -> Result<TaskGrammar, GrammarError> {
    let (_, src) = BUILTIN_GRAMMARS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| GrammarError::Invalid(format!("no built-in grammar named `{name}`")))?;
    TaskGrammar::from_toml_str(src, None)
}
