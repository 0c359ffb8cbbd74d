use serde_json::{json, Value};

use super::{Backend, CompletionRequest, ProviderError, RawCompletion, TaskTag};
use crate::alignment::MappingKind;
use crate::catalog::SignalDef;

/// Deterministic backend that derives every artifact from the request
/// materials. It plays the part of a model that always follows the
/// instructions correctly.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend;

impl RuleBackend {
    pub fn new() -> Self {
        RuleBackend
    }
}

/// A refinement directive understood by the rule backend.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    PreferSignal(String),
    MappingKind(MappingKind),
    UnitFactor(f64),
}

/// Parse refinement constraints into directives.
///
/// Clauses are separated by newlines or `;`. Recognized forms are
/// `prefer-signal <name>`, `mapping-kind <kind>` and `unit-factor <x>`; a
/// clause that mentions exactly one of `direct`, `transformed`, `composed`
/// is read as a mapping-kind directive. Anything else is ignored.
pub fn parse_directives(constraints: &[String]) -> Vec<Directive> {
    let mut out = Vec::new();
    for clause in constraints.iter().flat_map(|c| c.split(['\n', ';'])) {
        let words: Vec<&str> = clause.split_whitespace().collect();
        match words.as_slice() {
            ["prefer-signal", name] => out.push(Directive::PreferSignal(name.to_string())),
            ["mapping-kind", kind] => {
                if let Ok(k) = kind.parse() {
                    out.push(Directive::MappingKind(k));
                }
            }
            ["unit-factor", x] => {
                if let Ok(f) = x.parse::<f64>() {
                    if f.is_finite() && f != 0.0 {
                        out.push(Directive::UnitFactor(f));
                    }
                }
            }
            _ => {
                let lower = clause.to_lowercase();
                let kinds: Vec<MappingKind> = MappingKind::ALL
                    .into_iter()
                    .filter(|k| lower.contains(k.as_str()))
                    .collect();
                if let [k] = kinds.as_slice() {
                    out.push(Directive::MappingKind(*k));
                }
            }
        }
    }
    out
}

fn codec_payload(materials: &Value) -> Result<Value, ProviderError> {
    let bad = |m: String| ProviderError::InvalidRequest(m);
    let signal: SignalDef =
        serde_json::from_value(materials["signal"].clone()).map_err(|e| bad(e.to_string()))?;
    let components: Vec<SignalDef> = match materials.get("components") {
        Some(v) if !v.is_null() => serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?,
        _ => Vec::new(),
    };
    let lookup = |name: &str| components.iter().find(|c| c.name == name);
    let expr = crate::codec::rule_codec(&signal, &lookup).map_err(bad)?;
    Ok(json!({
        "codec": expr,
        "notes": format!("{} codec derived from catalog metadata", signal.kind),
    }))
}

impl Backend for RuleBackend {
    fn id(&self) -> String {
        "rule".into()
    }

    fn call(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let payload = match request.task {
            TaskTag::CodecSynthesis => codec_payload(&request.materials)?,
            TaskTag::DescriptionRewrite => {
                let signal: SignalDef = serde_json::from_value(request.materials["signal"].clone())
                    .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
                json!({ "description": crate::catalog::template_description(&signal) })
            }
            TaskTag::Alignment => crate::alignment::rule_alignment(
                &request.materials,
                &parse_directives(&request.instructions),
            )
            .map_err(ProviderError::InvalidRequest)?,
            TaskTag::EndpointFill => crate::endpoint::rule_endpoint_fill(&request.materials)
                .map_err(ProviderError::InvalidRequest)?,
        };
        Ok(RawCompletion {
            raw_text: serde_json::to_string(&payload).expect("payload serializes"),
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directive_grammar() {
        let d = parse_directives(&[
            "prefer-signal VehSpd; unit-factor 3.6".to_string(),
            "mapping-kind transformed".to_string(),
            "use the composed minute+second mapping".to_string(),
            "be careful".to_string(),
            "unit-factor 0".to_string(),
        ]);
        assert_eq!(
            d,
            [
                Directive::PreferSignal("VehSpd".into()),
                Directive::UnitFactor(3.6),
                Directive::MappingKind(MappingKind::Transformed),
                Directive::MappingKind(MappingKind::Composed),
            ]
        );
    }

    #[test]
    fn ambiguous_free_text_is_ignored() {
        assert!(parse_directives(&["direct or composed".to_string()]).is_empty());
    }
}
