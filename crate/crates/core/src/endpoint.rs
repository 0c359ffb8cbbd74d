//! Contract-first endpoint assembly.
//!
//! An API document (an OpenAPI 3 subset) is parsed into [`EndpointSpec`]s.
//! Each endpoint is rendered from a fixed boilerplate template whose only
//! provider-filled slots are the per-field conversion calls and the handler
//! body. The manifest is parsed back out of the rendered text, so
//! [`check_contract`] compares what was actually generated with the spec.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use serde_yaml::Value as Yaml;
use thiserror::Error;

use crate::alignment::{composite_codec, ApiProperty, MappingKind, PropertyAlignment, PropertyType};
use crate::catalog::{SignalCatalog, SignalKind};
use crate::codec::{synthesize_codec, CodecError, SignalCodec};
use crate::provider::{CompletionProvider, CompletionRequest, FieldType, OutputSchema, ProviderError, TaskTag};
use crate::units::{self, Conversion};

/// Extension key carrying vehicle constraints on an operation.
pub const CONSTRAINTS_KEY: &str = "x-vehicle-constraints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Put,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Put => "PUT",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    Body,
}

impl ParamLocation {
    fn as_str(self) -> &'static str {
        match self {
            ParamLocation::Path => "path",
            ParamLocation::Query => "query",
            ParamLocation::Header => "header",
            ParamLocation::Body => "body",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub required: bool,
    pub location: ParamLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permission: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<String, Range>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub enums: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub path: String,
    pub method: HttpMethod,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub parameters: Vec<ParamSpec>,
    /// Response fields; each names an API property.
    pub response: Vec<ApiProperty>,
    /// Request-body properties of PUT endpoints, written to the vehicle.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub body: Vec<ApiProperty>,
    pub constraints: Constraints,
}

impl EndpointSpec {
    pub fn key(&self) -> String {
        format!("{}_{}", self.method.as_str().to_lowercase(), slug(&self.path))
    }

    /// Properties the endpoint reads or writes.
    pub fn properties(&self) -> impl Iterator<Item = &ApiProperty> {
        self.response.iter().chain(&self.body)
    }
}

/// `/vehicles/{vin}/wipers` → `vehicles_vin_wipers`.
pub fn slug(path: &str) -> String {
    let s: String = path
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub version: String,
    pub endpoints: Vec<EndpointSpec>,
}

impl ApiSpec {
    pub fn load(path: &Path) -> Result<ApiSpec, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        parse_api_spec(&text).map_err(|e| crate::Error::format(path, e.to_string()))
    }

    /// Every property, by name.
    pub fn properties(&self) -> BTreeMap<String, ApiProperty> {
        self.endpoints
            .iter()
            .flat_map(|e| e.properties())
            .map(|p| (p.name.clone(), p.clone()))
            .collect()
    }

    /// Domain tag of each property (from its first endpoint).
    pub fn property_domains(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for e in &self.endpoints {
            for p in e.properties() {
                out.entry(p.name.clone())
                    .or_insert_with(|| e.domain.clone().unwrap_or_else(|| "default".into()));
            }
        }
        out
    }

    pub fn endpoint(&self, method: HttpMethod, path: &str) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| e.method == method && e.path == path)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error("{location}: unsupported construct `{construct}`")]
    UnsupportedConstruct { location: String, construct: String },
}

fn schema_err(location: &str, message: impl Into<String>) -> SpecError {
    SpecError::Schema {
        location: location.to_string(),
        message: message.into(),
    }
}

fn unsupported(location: &str, construct: &str) -> SpecError {
    SpecError::UnsupportedConstruct {
        location: location.to_string(),
        construct: construct.to_string(),
    }
}

fn as_map<'a>(v: &'a Yaml, loc: &str) -> Result<&'a serde_yaml::Mapping, SpecError> {
    v.as_mapping().ok_or_else(|| schema_err(loc, "expected a mapping"))
}

fn entries<'a>(
    v: &'a Yaml,
    loc: &str,
    allowed: &[&str],
) -> Result<Vec<(String, &'a Yaml)>, SpecError> {
    let mut out = Vec::new();
    for (k, val) in as_map(v, loc)? {
        let key = match k {
            Yaml::String(s) => s.clone(),
            Yaml::Number(n) => n.to_string(),
            _ => return Err(schema_err(loc, "mapping keys must be strings")),
        };
        if !allowed.contains(&key.as_str()) {
            return Err(unsupported(&format!("{loc}.{key}"), &key));
        }
        out.push((key, val));
    }
    Ok(out)
}

fn get<'a>(fields: &[(String, &'a Yaml)], key: &str) -> Option<&'a Yaml> {
    fields.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

fn string_at(v: &Yaml, loc: &str) -> Result<String, SpecError> {
    match v {
        Yaml::String(s) => Ok(s.clone()),
        Yaml::Number(n) => Ok(n.to_string()),
        Yaml::Bool(b) => Ok(b.to_string()),
        _ => Err(schema_err(loc, "expected a string")),
    }
}

fn number_at(v: &Yaml, loc: &str) -> Result<f64, SpecError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema_err(loc, "expected a finite number"))
}

const SCHEMA_KEYS: &[&str] = &[
    "type", "enum", "minimum", "maximum", "description", "x-unit", "format", "$ref", "properties",
];

struct FieldSchema {
    ty: String,
    enumeration: Vec<String>,
    range: (Option<f64>, Option<f64>),
    unit: Option<String>,
    description: String,
}

fn field_schema(v: &Yaml, loc: &str) -> Result<FieldSchema, SpecError> {
    let fields = entries(v, loc, SCHEMA_KEYS)?;
    if get(&fields, "$ref").is_some() {
        return Err(unsupported(&format!("{loc}.$ref"), "$ref"));
    }
    if get(&fields, "properties").is_some() {
        return Err(unsupported(&format!("{loc}.properties"), "nested object schema"));
    }
    let ty = get(&fields, "type")
        .map(|t| string_at(t, &format!("{loc}.type")))
        .transpose()?
        .ok_or_else(|| schema_err(loc, "missing `type`"))?;
    if !["boolean", "number", "integer", "string", "object"].contains(&ty.as_str()) {
        return Err(unsupported(&format!("{loc}.type"), &ty));
    }
    let enumeration = match get(&fields, "enum") {
        None => Vec::new(),
        Some(Yaml::Sequence(items)) => items
            .iter()
            .enumerate()
            .map(|(i, x)| string_at(x, &format!("{loc}.enum[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(schema_err(&format!("{loc}.enum"), "expected a list")),
    };
    if get(&fields, "enum").is_some() && enumeration.is_empty() {
        return Err(schema_err(&format!("{loc}.enum"), "enum must not be empty"));
    }
    let num = |k: &str| get(&fields, k).map(|x| number_at(x, &format!("{loc}.{k}"))).transpose();
    let range = (num("minimum")?, num("maximum")?);
    if let (Some(lo), Some(hi)) = range {
        if lo > hi {
            return Err(schema_err(loc, format!("minimum {lo} exceeds maximum {hi}")));
        }
    }
    Ok(FieldSchema {
        ty,
        enumeration,
        range,
        unit: get(&fields, "x-unit").map(|u| string_at(u, &format!("{loc}.x-unit"))).transpose()?,
        description: get(&fields, "description")
            .map(|d| string_at(d, &format!("{loc}.description")))
            .transpose()?
            .unwrap_or_default(),
    })
}

fn to_property(name: &str, f: &FieldSchema, loc: &str) -> Result<ApiProperty, SpecError> {
    let semantic_type = match f.ty.as_str() {
        "boolean" => PropertyType::Boolean,
        "number" | "integer" => PropertyType::Number,
        "string" if !f.enumeration.is_empty() => PropertyType::StringEnum,
        "object" => PropertyType::Composite,
        other => {
            return Err(schema_err(
                loc,
                format!("property type `{other}` needs an enum to map onto vehicle signals"),
            ))
        }
    };
    Ok(ApiProperty {
        name: name.to_string(),
        semantic_type,
        unit: f.unit.clone(),
        allowed_values: f.enumeration.clone(),
        range_min: f.range.0,
        range_max: f.range.1,
        description: f.description.clone(),
    })
}

fn object_properties(v: &Yaml, loc: &str) -> Result<Vec<(String, FieldSchema)>, SpecError> {
    let fields = entries(v, loc, &["type", "properties", "required", "description"])?;
    if let Some(t) = get(&fields, "type") {
        if string_at(t, &format!("{loc}.type"))? != "object" {
            return Err(schema_err(&format!("{loc}.type"), "body schema must be an object"));
        }
    }
    let Some(props) = get(&fields, "properties") else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (name, schema) in as_map(props, &format!("{loc}.properties"))? {
        let name = string_at(name, &format!("{loc}.properties"))?;
        let ploc = format!("{loc}.properties.{name}");
        out.push((name, field_schema(schema, &ploc)?));
    }
    Ok(out)
}

fn json_schema<'a>(v: &'a Yaml, loc: &str) -> Result<&'a Yaml, SpecError> {
    let content = entries(v, loc, &["content", "description", "required"])?;
    let Some(content) = get(&content, "content") else {
        return Err(schema_err(loc, "missing `content`"));
    };
    let media = entries(content, &format!("{loc}.content"), &["application/json"])?;
    let media = get(&media, "application/json")
        .ok_or_else(|| schema_err(&format!("{loc}.content"), "missing application/json"))?;
    let m = entries(media, &format!("{loc}.content.application/json"), &["schema"])?;
    get(&m, "schema").ok_or_else(|| schema_err(&format!("{loc}.content.application/json"), "missing `schema`"))
}

fn parse_operation(path: &str, method: HttpMethod, v: &Yaml, loc: &str) -> Result<EndpointSpec, SpecError> {
    let fields = entries(
        v,
        loc,
        &[
            "operationId", "summary", "description", "tags", "parameters", "requestBody",
            "responses", CONSTRAINTS_KEY,
        ],
    )?;
    let operation = match get(&fields, "operationId") {
        Some(o) => string_at(o, &format!("{loc}.operationId"))?,
        None => format!("{}_{}", method.as_str().to_lowercase(), slug(path)),
    };
    let domain = match get(&fields, "tags") {
        Some(Yaml::Sequence(tags)) => tags.first().map(|t| string_at(t, &format!("{loc}.tags[0]"))).transpose()?,
        Some(_) => return Err(schema_err(&format!("{loc}.tags"), "expected a list")),
        None => None,
    };

    let mut constraints = Constraints::default();
    let mut parameters = Vec::new();
    if let Some(params) = get(&fields, "parameters") {
        let Yaml::Sequence(items) = params else {
            return Err(schema_err(&format!("{loc}.parameters"), "expected a list"));
        };
        for (i, p) in items.iter().enumerate() {
            let ploc = format!("{loc}.parameters[{i}]");
            let pf = entries(p, &ploc, &["name", "in", "required", "schema", "description", "$ref"])?;
            if get(&pf, "$ref").is_some() {
                return Err(unsupported(&format!("{ploc}.$ref"), "$ref"));
            }
            let name = string_at(get(&pf, "name").ok_or_else(|| schema_err(&ploc, "missing `name`"))?, &ploc)?;
            let location = match get(&pf, "in").map(|x| string_at(x, &ploc)).transpose()?.as_deref() {
                Some("path") => ParamLocation::Path,
                Some("query") => ParamLocation::Query,
                Some("header") => ParamLocation::Header,
                Some(other) => return Err(unsupported(&format!("{ploc}.in"), other)),
                None => return Err(schema_err(&ploc, "missing `in`")),
            };
            let required = match get(&pf, "required") {
                Some(Yaml::Bool(b)) => *b,
                Some(_) => return Err(schema_err(&format!("{ploc}.required"), "expected a boolean")),
                None => location == ParamLocation::Path,
            };
            let schema = match get(&pf, "schema") {
                Some(s) => field_schema(s, &format!("{ploc}.schema"))?,
                None => return Err(schema_err(&ploc, "missing `schema`")),
            };
            collect_constraints(&name, &schema, &mut constraints);
            parameters.push(ParamSpec {
                name,
                ty: schema.ty,
                required,
                location,
            });
        }
    }

    let mut body = Vec::new();
    if let Some(rb) = get(&fields, "requestBody") {
        let rloc = format!("{loc}.requestBody");
        if method != HttpMethod::Put {
            return Err(unsupported(&rloc, "requestBody on GET"));
        }
        let schema = json_schema(rb, &rloc)?;
        for (name, f) in object_properties(schema, &format!("{rloc}.content.application/json.schema"))? {
            collect_constraints(&name, &f, &mut constraints);
            body.push(to_property(&name, &f, &rloc)?);
            parameters.push(ParamSpec {
                name,
                ty: f.ty,
                required: true,
                location: ParamLocation::Body,
            });
        }
    }

    let mut response = Vec::new();
    let responses = get(&fields, "responses").ok_or_else(|| schema_err(loc, "missing `responses`"))?;
    for (code, r) in as_map(responses, &format!("{loc}.responses"))? {
        let code = string_at(code, &format!("{loc}.responses"))?;
        let rloc = format!("{loc}.responses.{code}");
        if !code.starts_with('2') {
            continue;
        }
        let rf = entries(r, &rloc, &["description", "content"])?;
        if get(&rf, "content").is_none() {
            continue;
        }
        let schema = json_schema(r, &rloc)?;
        for (name, f) in object_properties(schema, &format!("{rloc}.content.application/json.schema"))? {
            collect_constraints(&name, &f, &mut constraints);
            response.push(to_property(&name, &f, &rloc)?);
        }
    }

    if let Some(c) = get(&fields, CONSTRAINTS_KEY) {
        let cloc = format!("{loc}.{CONSTRAINTS_KEY}");
        let cf = entries(c, &cloc, &["permission", "ranges"])?;
        if let Some(p) = get(&cf, "permission") {
            constraints.permission = Some(string_at(p, &format!("{cloc}.permission"))?);
        }
        if let Some(r) = get(&cf, "ranges") {
            for (field, range) in as_map(r, &format!("{cloc}.ranges"))? {
                let field = string_at(field, &format!("{cloc}.ranges"))?;
                let floc = format!("{cloc}.ranges.{field}");
                let rf = entries(range, &floc, &["min", "max"])?;
                let min = number_at(get(&rf, "min").ok_or_else(|| schema_err(&floc, "missing `min`"))?, &floc)?;
                let max = number_at(get(&rf, "max").ok_or_else(|| schema_err(&floc, "missing `max`"))?, &floc)?;
                if min > max {
                    return Err(schema_err(&floc, format!("min {min} exceeds max {max}")));
                }
                let known = response.iter().chain(&body).any(|p| p.name == field)
                    || parameters.iter().any(|p| p.name == field);
                if !known {
                    return Err(schema_err(&floc, format!("`{field}` is not a field of this operation")));
                }
                constraints.ranges.insert(field, Range { min, max });
            }
        }
    }

    Ok(EndpointSpec {
        path: path.to_string(),
        method,
        operation,
        domain,
        parameters,
        response,
        body,
        constraints,
    })
}

fn collect_constraints(name: &str, f: &FieldSchema, c: &mut Constraints) {
    if let (Some(min), Some(max)) = f.range {
        c.ranges.insert(name.to_string(), Range { min, max });
    }
    if !f.enumeration.is_empty() {
        c.enums.insert(name.to_string(), f.enumeration.clone());
    }
}

/// Parse the supported OpenAPI subset.
pub fn parse_api_spec(document: &str) -> Result<ApiSpec, SpecError> {
    let root: Yaml = serde_yaml::from_str(document).map_err(|e| schema_err("$", e.to_string()))?;
    let top = entries(&root, "$", &["openapi", "info", "paths", "tags", "servers"])?;
    let version = match get(&top, "info") {
        Some(info) => {
            let f = entries(info, "$.info", &["title", "version", "description"])?;
            get(&f, "version")
                .map(|v| string_at(v, "$.info.version"))
                .transpose()?
                .unwrap_or_default()
        }
        None => String::new(),
    };
    let paths = get(&top, "paths").ok_or_else(|| schema_err("$", "missing `paths`"))?;
    let mut endpoints = Vec::new();
    let mut seen = BTreeSet::new();
    for (path, item) in as_map(paths, "$.paths")? {
        let path = string_at(path, "$.paths")?;
        let ploc = format!("$.paths.{path}");
        if !path.starts_with('/') {
            return Err(schema_err(&ploc, "paths must start with `/`"));
        }
        let ops = entries(
            item,
            &ploc,
            &["get", "put", "post", "delete", "patch", "head", "options", "trace", "summary", "description"],
        )?;
        for (method, op) in ops {
            let m = match method.as_str() {
                "get" => HttpMethod::Get,
                "put" => HttpMethod::Put,
                "summary" | "description" => continue,
                other => return Err(unsupported(&format!("{ploc}.{other}"), &format!("method {other}"))),
            };
            if !seen.insert((path.clone(), m)) {
                return Err(schema_err(&ploc, format!("duplicate endpoint {m} {path}")));
            }
            endpoints.push(parse_operation(&path, m, op, &format!("{ploc}.{method}"))?);
        }
    }
    let mut props: BTreeMap<&str, &ApiProperty> = BTreeMap::new();
    for e in &endpoints {
        for p in e.properties() {
            if let Some(prev) = props.insert(&p.name, p) {
                if prev != p {
                    return Err(schema_err(
                        &format!("$.paths.{}", e.path),
                        format!("property `{}` is declared differently by two operations", p.name),
                    ));
                }
            }
        }
    }
    Ok(ApiSpec { version, endpoints })
}

/// One validation rule derived from a contract constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ValidationRule {
    Permission { tag: String },
    Range { field: String, min: f64, max: f64 },
    Enum { field: String, values: Vec<String> },
}

impl fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationRule::Permission { tag } => write!(f, "validate permission {tag}"),
            ValidationRule::Range { field, min, max } => write!(
                f,
                "validate range {field} {} {}",
                units::format_number(*min),
                units::format_number(*max)
            ),
            ValidationRule::Enum { field, values } => {
                write!(f, "validate enum {field} {}", values.join("|"))
            }
        }
    }
}

/// Rules every faithful generation of `spec` must contain.
pub fn validation_rules(spec: &EndpointSpec) -> Vec<ValidationRule> {
    let mut rules = Vec::new();
    if let Some(tag) = &spec.constraints.permission {
        rules.push(ValidationRule::Permission { tag: tag.clone() });
    }
    for (field, r) in &spec.constraints.ranges {
        rules.push(ValidationRule::Range {
            field: field.clone(),
            min: r.min,
            max: r.max,
        });
    }
    for (field, values) in &spec.constraints.enums {
        rules.push(ValidationRule::Enum {
            field: field.clone(),
            values: values.clone(),
        });
    }
    rules
}

fn property_type_name(t: PropertyType) -> &'static str {
    match t {
        PropertyType::Boolean => "boolean",
        PropertyType::Number => "number",
        PropertyType::StringEnum => "string",
        PropertyType::Composite => "object",
    }
}

/// Render the boilerplate template. Everything except `conversions` and
/// `handler_body` is fixed text or derived mechanically from the spec.
pub fn render_endpoint(spec: &EndpointSpec, conversions: &BTreeMap<String, String>, handler_body: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# endpoint {} (boilerplate template v1)\n", spec.operation));
    out.push_str(&format!("route {} {}\n", spec.method, spec.path));
    out.push_str(&format!("operation {}\n", spec.operation));
    for p in &spec.parameters {
        out.push_str(&format!(
            "param {} {} {} {}\n",
            p.name,
            p.ty,
            if p.required { "required" } else { "optional" },
            p.location.as_str()
        ));
    }
    for f in &spec.response {
        out.push_str(&format!("field {} {}\n", f.name, property_type_name(f.semantic_type)));
    }
    out.push_str("validators:\n");
    for r in validation_rules(spec) {
        out.push_str(&format!("  {r}\n"));
    }
    out.push_str("handler:\n");
    out.push_str("  frame = read_frame()\n");
    for p in &spec.body {
        if let Some(c) = conversions.get(&p.name) {
            out.push_str(&format!("  frame = {c}\n"));
        }
    }
    if !spec.body.is_empty() {
        out.push_str("  write_frame(frame)\n");
    }
    for f in &spec.response {
        if let Some(c) = conversions.get(&f.name) {
            out.push_str(&format!("  {} = {c}\n", f.name));
        }
    }
    for line in handler_body.lines() {
        out.push_str(&format!("  {}\n", line.trim()));
    }
    out.push_str("errors:\n");
    out.push_str("  on_error validation_error -> 400\n");
    out.push_str("  on_error permission_denied -> 403\n");
    out.push_str("  on_error domain_error -> 422\n");
    out.push_str("  on_error signal_unavailable -> 503\n");
    out
}

/// What the rendered endpoint declares, recovered from its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub path: String,
    pub method: String,
    pub parameters: Vec<String>,
    pub response_fields: Vec<String>,
    pub validation_rules: Vec<String>,
    pub slot_provenance: BTreeMap<String, String>,
}

/// Parse a manifest out of rendered endpoint text.
pub fn parse_manifest(source: &str, slot_provenance: BTreeMap<String, String>) -> Manifest {
    let mut m = Manifest {
        path: String::new(),
        method: String::new(),
        parameters: Vec::new(),
        response_fields: Vec::new(),
        validation_rules: Vec::new(),
        slot_provenance,
    };
    for line in source.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["route", method, path] if !line.starts_with(' ') => {
                m.method = method.to_string();
                m.path = path.to_string();
            }
            ["param", name, ..] if !line.starts_with(' ') => m.parameters.push(name.to_string()),
            ["field", name, ..] if !line.starts_with(' ') => m.response_fields.push(name.to_string()),
            ["validate", ..] => m.validation_rules.push(words.join(" ")),
            _ => {}
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecOrigin {
    /// Reused pass-validated codec.
    Validated,
    /// Synthesized inline for this endpoint without validation.
    Inline,
}

/// How one property is computed by the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBinding {
    pub property: String,
    pub mapping_kind: MappingKind,
    pub signals: Vec<String>,
    pub codec: SignalCodec,
    pub origin: CodecOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEndpoint {
    pub key: String,
    pub source: String,
    pub manifest: Manifest,
    pub bindings: Vec<FieldBinding>,
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("no alignment for property `{0}`")]
    MissingAlignment(String),
    #[error("alignment for property `{property}` is {status}; generation refused")]
    FlaggedAlignment {
        property: String,
        status: crate::alignment::AlignmentStatus,
    },
    #[error("no validated codec for `{signal}` (property `{property}`)")]
    MissingCodec { property: String, signal: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("endpoint fill payload malformed: {0}")]
    Payload(String),
}

/// Ablation switches that affect endpoint assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Render fixed parts from the template; off means the provider emits
    /// the whole scaffold.
    pub templates: bool,
    /// Reuse validated codecs; off means codecs are re-synthesized inline.
    pub composition: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            templates: true,
            composition: true,
        }
    }
}

fn conversion_expr(binding: &FieldBinding, alignment: &PropertyAlignment, write: bool) -> String {
    let name = &binding.codec.signal;
    if write {
        let value = format!("body.{}", binding.property);
        let arg = if let Some(corr) = &alignment.enum_correspondence {
            format!("map_value({value}, {})", dict(corr.iter()))
        } else if let Some(c) = &alignment.unit_conversion {
            format!(
                "({value} - {}) / {}",
                units::format_number(c.offset),
                units::format_number(c.factor)
            )
        } else {
            value
        };
        return format!("write_{name}(frame, {arg})");
    }
    let read = format!("read_{name}(frame)");
    if let Some(corr) = &alignment.enum_correspondence {
        format!("map_value({read}, {})", dict(corr.iter().map(|(p, s)| (s, p))))
    } else if let Some(c) = &alignment.unit_conversion {
        format!(
            "{} * {read} + {}",
            units::format_number(c.factor),
            units::format_number(c.offset)
        )
    } else {
        read
    }
}

fn dict<'a>(pairs: impl Iterator<Item = (&'a String, &'a String)>) -> String {
    let mut items: Vec<String> = pairs.map(|(k, v)| format!("{k:?}: {v:?}")).collect();
    items.sort();
    format!("{{{}}}", items.join(", "))
}

/// The rule backend's endpoint fill.
pub(crate) fn rule_endpoint_fill(materials: &Value) -> Result<Value, String> {
    let spec: EndpointSpec = serde_json::from_value(materials["endpoint"].clone()).map_err(|e| e.to_string())?;
    let bindings: Vec<FieldBinding> =
        serde_json::from_value(materials["bindings"].clone()).map_err(|e| e.to_string())?;
    let alignments: BTreeMap<String, PropertyAlignment> =
        serde_json::from_value(materials["alignments"].clone()).map_err(|e| e.to_string())?;
    let mut conversions = BTreeMap::new();
    for b in &bindings {
        let a = alignments.get(&b.property).ok_or(format!("no alignment for {}", b.property))?;
        let write = spec.body.iter().any(|p| p.name == b.property);
        conversions.insert(b.property.clone(), conversion_expr(b, a, write));
    }
    let fields: Vec<&str> = spec.response.iter().map(|p| p.name.as_str()).collect();
    let handler_body = format!("return {{{}}}", fields.join(", "));
    let mut out = json!({ "conversions": conversions, "handler_body": handler_body });
    if materials["template"] == false {
        out["scaffold"] = json!(render_endpoint(&spec, &conversions, &handler_body));
    }
    Ok(out)
}

/// Resolve the codec an endpoint uses for one property.
fn bind_field(
    property: &ApiProperty,
    alignment: &PropertyAlignment,
    codecs: &BTreeMap<String, SignalCodec>,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    options: &AssemblyOptions,
) -> Result<FieldBinding, EndpointError> {
    let codec_signal = if alignment.mapping_kind == MappingKind::Composed {
        let want: BTreeSet<&str> = alignment.signals.iter().map(String::as_str).collect();
        catalog
            .iter()
            .find(|d| {
                d.kind == SignalKind::Object
                    && d.components.iter().map(|c| c.signal.as_str()).collect::<BTreeSet<_>>() == want
            })
            .map(|d| d.name.clone())
            .or_else(|| composite_codec(&alignment.signals, codecs).map(|c| c.signal.clone()))
    } else {
        alignment.signals.first().cloned()
    };
    let missing = |signal: String| EndpointError::MissingCodec {
        property: property.name.clone(),
        signal,
    };
    let codec_signal = codec_signal.ok_or_else(|| missing(alignment.signals.join("+")))?;
    let (codec, origin) = if options.composition {
        let c = codecs.get(&codec_signal).ok_or_else(|| missing(codec_signal.clone()))?;
        (c.clone(), CodecOrigin::Validated)
    } else {
        let def = catalog.get(&codec_signal).ok_or_else(|| missing(codec_signal.clone()))?;
        (synthesize_codec(def, catalog, provider, 1, None)?, CodecOrigin::Inline)
    };
    Ok(FieldBinding {
        property: property.name.clone(),
        mapping_kind: alignment.mapping_kind,
        signals: alignment.signals.clone(),
        codec,
        origin,
    })
}

/// Instantiate the template for one endpoint.
pub fn instantiate_template(
    spec: &EndpointSpec,
    alignments: &BTreeMap<String, PropertyAlignment>,
    codecs: &BTreeMap<String, SignalCodec>,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    options: &AssemblyOptions,
) -> Result<GeneratedEndpoint, EndpointError> {
    let mut bindings = Vec::new();
    let mut used = BTreeMap::new();
    for p in spec.properties() {
        let a = alignments
            .get(&p.name)
            .ok_or_else(|| EndpointError::MissingAlignment(p.name.clone()))?;
        if !a.status.is_usable() {
            return Err(EndpointError::FlaggedAlignment {
                property: p.name.clone(),
                status: a.status,
            });
        }
        bindings.push(bind_field(p, a, codecs, catalog, provider, options)?);
        used.insert(p.name.clone(), a.clone());
    }

    let mut schema = OutputSchema::new()
        .field("conversions", FieldType::Object, "field name to conversion call")
        .field("handler_body", FieldType::Text, "handler statements after the conversions");
    if !options.templates {
        schema = schema.field("scaffold", FieldType::Text, "complete endpoint source");
    }
    let codec_sources: BTreeMap<&str, String> = bindings
        .iter()
        .map(|b| (b.codec.signal.as_str(), crate::codec::render_source(&b.codec)))
        .collect();
    let materials = json!({
        "endpoint": spec,
        "bindings": bindings,
        "alignments": used,
        "template": options.templates,
    });
    let mut request = CompletionRequest::new(TaskTag::EndpointFill, schema, materials)
        .section("endpoint contract", &serde_json::to_string_pretty(spec).unwrap_or_default())
        .section("alignments", &serde_json::to_string_pretty(&used).unwrap_or_default())
        .section(
            "codec functions",
            &codec_sources.values().cloned().collect::<Vec<_>>().join("\n"),
        );
    request = if options.templates {
        request.section(
            "template slots",
            "Fill only {{conversions}} (one call per field using the read_/write_ codec functions) \
             and {{handler_body}}. Routing, validators and error handling are fixed by the template.",
        )
    } else {
        request.section(
            "scaffold",
            "Emit the complete endpoint: route, operation, params, fields, validators, handler, errors.",
        )
    };
    let result = provider.complete_structured(&request)?;
    let conversions: BTreeMap<String, String> = serde_json::from_value(result.payload["conversions"].clone())
        .map_err(|e| EndpointError::Payload(e.to_string()))?;
    let handler_body = result.payload["handler_body"].as_str().unwrap_or_default().to_string();

    let (source, scaffold_origin) = if options.templates {
        (render_endpoint(spec, &conversions, &handler_body), "template".to_string())
    } else {
        (
            result.payload["scaffold"].as_str().unwrap_or_default().to_string(),
            result.provider_id.clone(),
        )
    };
    let provenance = BTreeMap::from([
        ("conversions".to_string(), result.provider_id.clone()),
        ("handler_body".to_string(), result.provider_id.clone()),
        ("route".to_string(), scaffold_origin.clone()),
        ("validators".to_string(), scaffold_origin),
    ]);
    Ok(GeneratedEndpoint {
        key: spec.key(),
        manifest: parse_manifest(&source, provenance),
        source,
        bindings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn set_check(name: &str, got: &[String], want: &[String]) -> Check {
    let got: BTreeSet<&String> = got.iter().collect();
    let want: BTreeSet<&String> = want.iter().collect();
    let missing: Vec<&str> = want.difference(&got).map(|s| s.as_str()).collect();
    let extra: Vec<&str> = got.difference(&want).map(|s| s.as_str()).collect();
    let mut detail = Vec::new();
    if !missing.is_empty() {
        detail.push(format!("missing {}", missing.join(", ")));
    }
    if !extra.is_empty() {
        detail.push(format!("unexpected {}", extra.join(", ")));
    }
    Check {
        name: name.to_string(),
        passed: detail.is_empty(),
        detail: detail.join("; "),
    }
}

/// Compare a generated endpoint's manifest with its contract.
pub fn check_contract(manifest: &Manifest, spec: &EndpointSpec) -> ContractReport {
    let mut checks = vec![
        Check {
            name: "path".into(),
            passed: manifest.path == spec.path,
            detail: if manifest.path == spec.path {
                String::new()
            } else {
                format!("expected {}, found {}", spec.path, manifest.path)
            },
        },
        Check {
            name: "method".into(),
            passed: manifest.method == spec.method.as_str(),
            detail: if manifest.method == spec.method.as_str() {
                String::new()
            } else {
                format!("expected {}, found {}", spec.method, manifest.method)
            },
        },
    ];
    let params: Vec<String> = spec.parameters.iter().map(|p| p.name.clone()).collect();
    checks.push(set_check("parameters", &manifest.parameters, &params));
    let fields: Vec<String> = spec.response.iter().map(|p| p.name.clone()).collect();
    checks.push(set_check("response_fields", &manifest.response_fields, &fields));
    for rule in validation_rules(spec) {
        let text = rule.to_string();
        let present = manifest.validation_rules.contains(&text);
        checks.push(Check {
            name: format!("rule: {text}"),
            passed: present,
            detail: if present { String::new() } else { "rule missing".into() },
        });
    }
    ContractReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Result of assembling every endpoint of an API.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointBatch {
    pub generated: Vec<GeneratedEndpoint>,
    /// Endpoint key → reason it was not written.
    pub skipped: BTreeMap<String, String>,
}

/// Assemble all endpoints; those whose alignment gating, codecs or contract
/// check fail are skipped with a reason.
pub fn generate_endpoints(
    spec: &ApiSpec,
    alignments: &BTreeMap<String, PropertyAlignment>,
    codecs: &BTreeMap<String, SignalCodec>,
    catalog: &SignalCatalog,
    provider: &dyn CompletionProvider,
    options: &AssemblyOptions,
) -> Result<EndpointBatch, EndpointError> {
    let mut batch = EndpointBatch::default();
    for e in &spec.endpoints {
        match instantiate_template(e, alignments, codecs, catalog, provider, options) {
            Ok(g) => {
                let report = check_contract(&g.manifest, e);
                if report.passed {
                    batch.generated.push(g);
                } else {
                    let failed: Vec<String> = report
                        .checks
                        .iter()
                        .filter(|c| !c.passed)
                        .map(|c| format!("{} ({})", c.name, c.detail))
                        .collect();
                    batch.skipped.insert(e.key(), format!("contract check failed: {}", failed.join("; ")));
                }
            }
            Err(err @ (EndpointError::Provider(_) | EndpointError::Codec(CodecError::Provider(_)))) => {
                return Err(err)
            }
            Err(err) => {
                batch.skipped.insert(e.key(), err.to_string());
            }
        }
    }
    batch.generated.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(batch)
}

/// Write `<key>.txt` and `<key>.manifest.json` for every generated endpoint.
pub fn write_endpoints(dir: &Path, batch: &EndpointBatch) -> Result<(), crate::Error> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for g in &batch.generated {
        let src = dir.join(format!("{}.txt", g.key));
        std::fs::write(&src, &g.source).map_err(|e| crate::Error::io(&src, e))?;
        let man = dir.join(format!("{}.manifest.json", g.key));
        let text = serde_json::to_string_pretty(&json!({
            "manifest": g.manifest,
            "bindings": g.bindings,
        }))
        .expect("manifest serializes");
        std::fs::write(&man, text + "\n").map_err(|e| crate::Error::io(&man, e))?;
    }
    Ok(())
}

/// Unit conversion helper exposed for handlers and tests.
pub fn convert(c: &Conversion, v: f64) -> f64 {
    c.factor * v + c.offset
}
