//! Scenario files and the scenarios bundled with the acceptance suite.

use std::path::Path;

use rbsde_core::Scenario;

use crate::error::{CliError, Result};

/// Parses scenario JSON and runs every model validator on it. Parse errors
/// report `origin:line:column` and the path of the offending field.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let field = e.path().to_string();
        let field = if field == "." { String::new() } else { format!(" (field `{field}`)") };
        CliError::Parse(format!("{origin}:{}:{}: {inner}{field}", inner.line(), inner.column()))
    })?;
    scenario.ensure_valid()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text, &path.display().to_string())
}

pub const BUNDLED: &[(&str, &str)] = &[
    ("unreflected", include_str!("../scenarios/unreflected.json")),
    ("quadratic", include_str!("../scenarios/quadratic.json")),
    ("reflected_quadratic", include_str!("../scenarios/reflected_quadratic.json")),
    ("reflected_zero_driver", include_str!("../scenarios/reflected_zero_driver.json")),
    ("coupled", include_str!("../scenarios/coupled.json")),
];

/// One of the scenarios shipped in `scenarios/`.
pub fn bundled(name: &str) -> Result<Scenario> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::Config(format!("no bundled scenario named `{name}`")))?;
    parse_scenario(text, &format!("scenarios/{name}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            bundled(name).unwrap();
        }
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let text = "{\n  \"n\": 1,\n  \"d\": \"one\"\n}";
        let err = parse_scenario(text, "x.json").unwrap_err().to_string();
        assert!(err.starts_with("x.json:3:"), "{err}");
        assert!(err.contains("`d`"), "{err}");
    }

    #[test]
    fn missing_field_is_reported() {
        let err = parse_scenario("{\"n\": 1, \"d\": 1, \"T\": 1.0}", "x.json").unwrap_err().to_string();
        assert!(err.contains("missing field"), "{err}");
    }

    #[test]
    fn negative_coupling_is_rejected_with_witness() {
        let text = BUNDLED[4].1.replace("[[0.0, 0.5], [0.5, 0.0]]", "[[0.0, -0.5], [0.5, 0.0]]");
        let err = parse_scenario(&text, "x.json").unwrap_err();
        assert!(matches!(err, CliError::Core(rbsde_core::Error::AssumptionViolated { .. })), "{err}");
    }

    #[test]
    fn terminal_below_barrier_is_rejected() {
        let text = BUNDLED[0].1.replace("\"alpha\": [-10.0], \"cap\": [-10.0]", "\"alpha\": [2.0], \"cap\": [2.0]");
        let text = text.replace("\"s_plus_max\": 0.0", "\"s_plus_max\": 2.0");
        let err = parse_scenario(&text, "x.json").unwrap_err().to_string();
        assert!(err.contains("terminal >= barrier"), "{err}");
    }
}
