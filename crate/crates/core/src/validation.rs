//! Detection of out-of-range and invalid-enum values in user-provided
//! specification documents, plus the matching error-injection tool.
//!
//! A document is any YAML tree. Every mapping entry whose key names an API
//! property (or, failing that, a catalog signal) and whose value is a
//! scalar is checked against that name's declared domain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_yaml::Value as Yaml;

use crate::catalog::{SignalCatalog, SignalKind};
use crate::endpoint::ApiSpec;
use crate::units::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    OutOfRange,
    InvalidEnum,
}

impl ErrorType {
    pub const ALL: [ErrorType; 2] = [ErrorType::OutOfRange, ErrorType::InvalidEnum];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::OutOfRange => "out_of_range",
            ErrorType::InvalidEnum => "invalid_enum",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Allowed values for one named quantity.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Range { min: f64, max: f64 },
    Enum(Vec<String>),
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Range { min, max } => write!(f, "[{}, {}]", format_number(*min), format_number(*max)),
            Domain::Enum(values) => write!(f, "{{{}}}", values.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub location: String,
    pub error_type: ErrorType,
    pub found: String,
    pub expected: String,
    pub severity: Severity,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}: found {}, expected {}",
            self.location, self.error_type, self.found, self.expected
        )
    }
}

/// Domains of every property in `spec` and every signal in `catalog`.
/// Property names shadow signal names.
pub fn governing_domains(spec: &ApiSpec, catalog: &SignalCatalog) -> BTreeMap<String, Domain> {
    let mut out = BTreeMap::new();
    for def in catalog.iter() {
        let domain = match def.kind {
            SignalKind::Enum => Some(Domain::Enum(def.enum_map.values().cloned().collect())),
            SignalKind::Numerical | SignalKind::Object => def.range().map(|(min, max)| Domain::Range { min, max }),
            SignalKind::Bool => None,
        };
        if let Some(d) = domain {
            out.insert(def.name.clone(), d);
        }
    }
    for e in &spec.endpoints {
        for p in e.properties() {
            if !p.allowed_values.is_empty() {
                out.insert(p.name.clone(), Domain::Enum(p.allowed_values.clone()));
            } else if let Some(r) = e.constraints.ranges.get(&p.name) {
                out.insert(p.name.clone(), Domain::Range { min: r.min, max: r.max });
            } else if let (Some(min), Some(max)) = (p.range_min, p.range_max) {
                out.insert(p.name.clone(), Domain::Range { min, max });
            }
        }
    }
    out
}

fn scalar_text(v: &Yaml) -> Option<String> {
    match v {
        Yaml::String(s) => Some(s.clone()),
        Yaml::Number(n) => Some(n.to_string()),
        Yaml::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn violation(domain: &Domain, v: &Yaml) -> Option<ErrorType> {
    match domain {
        Domain::Range { min, max } => match v.as_f64() {
            Some(x) if x >= *min && x <= *max => None,
            _ => Some(ErrorType::OutOfRange),
        },
        Domain::Enum(values) => match scalar_text(v) {
            Some(s) if values.contains(&s) => None,
            _ => Some(ErrorType::InvalidEnum),
        },
    }
}

/// Checkable positions in `doc`: (location path, name, value).
fn checkable<'a>(doc: &'a Yaml, domains: &BTreeMap<String, Domain>) -> Vec<(String, String, &'a Yaml)> {
    fn walk<'a>(
        v: &'a Yaml,
        path: String,
        domains: &BTreeMap<String, Domain>,
        out: &mut Vec<(String, String, &'a Yaml)>,
    ) {
        match v {
            Yaml::Mapping(m) => {
                for (k, child) in m {
                    let Some(key) = scalar_text(k) else { continue };
                    let here = format!("{path}.{key}");
                    if domains.contains_key(&key) && scalar_text(child).is_some() {
                        out.push((here, key, child));
                    } else {
                        walk(child, here, domains, out);
                    }
                }
            }
            Yaml::Sequence(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(child, format!("{path}[{i}]"), domains, out);
                }
            }
            Yaml::Tagged(t) => walk(&t.value, path, domains, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(doc, "$".into(), domains, &mut out);
    out
}

/// One diagnostic per violating value, in document order.
pub fn detect_errors(doc: &Yaml, domains: &BTreeMap<String, Domain>) -> Vec<Diagnostic> {
    checkable(doc, domains)
        .into_iter()
        .filter_map(|(location, name, value)| {
            let domain = &domains[&name];
            violation(domain, value).map(|error_type| Diagnostic {
                location,
                error_type,
                found: scalar_text(value).unwrap_or_default(),
                expected: format!("{domain} ({name})"),
                severity: Severity::Error,
            })
        })
        .collect()
}

/// Parse `text` and run [`detect_errors`].
pub fn check_document(text: &str, spec: &ApiSpec, catalog: &SignalCatalog) -> Result<Vec<Diagnostic>, String> {
    let doc: Yaml = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    Ok(detect_errors(&doc, &governing_domains(spec, catalog)))
}

/// Ground-truth label attached to one injected fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionMarker {
    pub location: String,
    pub error_type: ErrorType,
    pub original: String,
    pub injected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub out_of_range: usize,
    pub invalid_enum: usize,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InjectionError {
    #[error("document has {available} clean {error_type} site(s), {requested} requested")]
    NotEnoughSites {
        error_type: ErrorType,
        available: usize,
        requested: usize,
    },
}

fn set_at(doc: &mut Yaml, location: &str, value: Yaml) {
    let mut cur = doc;
    let rest = location.strip_prefix('$').unwrap_or(location);
    let mut segs = Vec::new();
    for part in rest.split('.').filter(|p| !p.is_empty()) {
        let (key, idx) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if !key.is_empty() {
            segs.push(Err(key.to_string()));
        }
        for n in idx.split(['[', ']']).filter(|s| !s.is_empty()) {
            segs.push(Ok(n.parse::<usize>().expect("index segment")));
        }
    }
    for seg in segs {
        cur = match seg {
            Ok(i) => &mut cur.as_sequence_mut().expect("sequence on path")[i],
            Err(k) => {
                let m = cur.as_mapping_mut().expect("mapping on path");
                let key = m
                    .keys()
                    .find(|kk| scalar_text(kk).as_deref() == Some(k.as_str()))
                    .cloned()
                    .expect("key on path");
                m.get_mut(&key).expect("key present")
            }
        };
    }
    *cur = value;
}

fn wrong_label(allowed: &[String], rng: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &["AUTO", "UNKNOWN", "STANDBY", "MAX", "PARTIAL", "ERROR", "INTERMITTENT", "TURBO"];
    let mut options: Vec<String> = POOL
        .iter()
        .map(|s| s.to_string())
        .chain(allowed.iter().map(|a| a.to_lowercase()))
        .filter(|s| !allowed.contains(s))
        .collect();
    options.sort();
    options.dedup();
    options.choose(rng).cloned().unwrap_or_else(|| "INVALID".into())
}

/// Mutate a clean document with labelled faults at distinct sites chosen
/// deterministically from `plan.seed`.
pub fn inject_errors(
    doc: &Yaml,
    domains: &BTreeMap<String, Domain>,
    plan: &InjectionPlan,
) -> Result<(Yaml, Vec<InjectionMarker>), InjectionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let clean: Vec<(String, String, Yaml)> = checkable(doc, domains)
        .into_iter()
        .filter(|(_, name, v)| violation(&domains[name], v).is_none())
        .map(|(l, n, v)| (l, n, v.clone()))
        .collect();
    let mut out = doc.clone();
    let mut markers = Vec::new();
    for (error_type, requested) in [
        (ErrorType::OutOfRange, plan.out_of_range),
        (ErrorType::InvalidEnum, plan.invalid_enum),
    ] {
        let mut sites: Vec<&(String, String, Yaml)> = clean
            .iter()
            .filter(|(_, name, _)| match domains[name] {
                Domain::Range { .. } => error_type == ErrorType::OutOfRange,
                Domain::Enum(_) => error_type == ErrorType::InvalidEnum,
            })
            .collect();
        if sites.len() < requested {
            return Err(InjectionError::NotEnoughSites {
                error_type,
                available: sites.len(),
                requested,
            });
        }
        sites.shuffle(&mut rng);
        for (location, name, original) in sites.into_iter().take(requested) {
            let injected = match &domains[name] {
                Domain::Range { min, max } => {
                    let span = (max - min).abs().max(1.0);
                    let delta = (rng.gen_range(1..=20) as f64) * span / 10.0;
                    let v = if rng.gen_bool(0.5) { max + delta } else { min - delta };
                    Yaml::Number(serde_yaml::Number::from((v * 100.0).round() / 100.0))
                }
                Domain::Enum(allowed) => Yaml::String(wrong_label(allowed, &mut rng)),
            };
            markers.push(InjectionMarker {
                location: location.clone(),
                error_type,
                original: scalar_text(original).unwrap_or_default(),
                injected: scalar_text(&injected).unwrap_or_default(),
            });
            set_at(&mut out, location, injected);
        }
    }
    markers.sort_by(|a, b| a.location.cmp(&b.location));
    Ok((out, markers))
}

/// Per-class detection scores against injection markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub error_type: ErrorType,
    pub prf: crate::eval::Prf,
}

pub fn score_detection(diagnostics: &[Diagnostic], markers: &[InjectionMarker]) -> Vec<DetectionScore> {
    ErrorType::ALL
        .into_iter()
        .map(|t| {
            let found: BTreeSet<&str> = diagnostics
                .iter()
                .filter(|d| d.error_type == t)
                .map(|d| d.location.as_str())
                .collect();
            let truth: BTreeSet<&str> = markers
                .iter()
                .filter(|m| m.error_type == t)
                .map(|m| m.location.as_str())
                .collect();
            let correct = found.intersection(&truth).count() as u64;
            DetectionScore {
                error_type: t,
                prf: crate::eval::compute_prf_counts(correct, found.len() as u64, truth.len() as u64),
            }
        })
        .collect()
}

pub fn load_markers(path: &Path) -> Result<Vec<InjectionMarker>, crate::Error> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domains() -> BTreeMap<String, Domain> {
        BTreeMap::from([
            ("speed".to_string(), Domain::Range { min: 0.0, max: 255.0 }),
            ("wiperActive".to_string(), Domain::Enum(vec!["ON".into(), "OFF".into()])),
        ])
    }

    #[test]
    fn out_of_range_and_invalid_enum() {
        let doc: Yaml = serde_yaml::from_str(
            "requests:\n  - {speed: 260, wiperActive: AUTO}\n  - {speed: 255, wiperActive: OFF, other: 9}\n",
        )
        .unwrap();
        let d = detect_errors(&doc, &domains());
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].to_string(), "$.requests[0].speed: out_of_range: found 260, expected [0, 255] (speed)");
        assert_eq!(d[1].error_type, ErrorType::InvalidEnum);
        assert_eq!(d[1].expected, "{ON, OFF} (wiperActive)");
    }

    #[test]
    fn clean_document_is_quiet() {
        let doc: Yaml = serde_yaml::from_str("a: {speed: 0}\nb: [{wiperActive: ON}]\n").unwrap();
        assert!(detect_errors(&doc, &domains()).is_empty());
    }

    #[test]
    fn injected_faults_are_all_found() {
        let mut text = String::from("requests:\n");
        for i in 0..12 {
            text.push_str(&format!("  - {{speed: {}, wiperActive: {}}}\n", i * 20, if i % 2 == 0 { "ON" } else { "OFF" }));
        }
        let doc: Yaml = serde_yaml::from_str(&text).unwrap();
        let plan = InjectionPlan { out_of_range: 5, invalid_enum: 5, seed: 7 };
        let (bad, markers) = inject_errors(&doc, &domains(), &plan).unwrap();
        assert_eq!(markers.len(), 10);
        let scores = score_detection(&detect_errors(&bad, &domains()), &markers);
        for s in scores {
            assert_eq!(s.prf.recall, Some(1.0));
            assert_eq!(s.prf.precision, Some(1.0));
        }
        let again = inject_errors(&doc, &domains(), &plan).unwrap();
        assert_eq!(again.1, markers);
    }

    #[test]
    fn too_few_sites() {
        let doc: Yaml = serde_yaml::from_str("speed: 3\n").unwrap();
        let plan = InjectionPlan { out_of_range: 2, invalid_enum: 0, seed: 1 };
        assert!(matches!(inject_errors(&doc, &domains(), &plan), Err(InjectionError::NotEnoughSites { .. })));
    }
}
