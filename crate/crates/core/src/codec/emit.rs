//! Human-readable source rendering of codecs.

use super::{CodecExpr, LookupAccess, SignalCodec};
use crate::units::format_number;

fn table_literal(table: &std::collections::BTreeMap<i64, String>) -> String {
    let entries: Vec<String> = table.iter().map(|(k, v)| format!("{k}: {v:?}")).collect();
    format!("{{{}}}", entries.join(", "))
}

fn inverse_table_literal(table: &std::collections::BTreeMap<i64, String>) -> String {
    let entries: Vec<String> = table.iter().map(|(k, v)| format!("{v:?}: {k}")).collect();
    format!("{{{}}}", entries.join(", "))
}

fn field_args(l: &super::FieldLayout) -> String {
    format!(
        "start={}, length={}, order=\"{}\", signed={}",
        l.bit_start,
        l.bit_length,
        l.byte_order.as_str(),
        if l.signed { "True" } else { "False" }
    )
}

fn decode_expr(e: &CodecExpr) -> String {
    match e {
        CodecExpr::RawField(l) => format!("get_field(frame, {})", field_args(l)),
        CodecExpr::Affine { scale, offset, input } => format!(
            "{} * {} + {}",
            format_number(*scale),
            decode_expr(input),
            format_number(*offset)
        ),
        CodecExpr::EnumLookup { table, access, input } => match access {
            LookupAccess::Index => format!("{}[{}]", table_literal(table), decode_expr(input)),
            LookupAccess::Call => format!("{}({})", table_literal(table), decode_expr(input)),
        },
        CodecExpr::BoolMap { input } => format!("bool({})", decode_expr(input)),
        CodecExpr::Combine { terms, .. } => terms
            .iter()
            .map(|t| format!("{} * ({})", format_number(t.weight), decode_expr(&t.expr)))
            .collect::<Vec<_>>()
            .join(" + "),
        CodecExpr::Clamp { input, .. } => decode_expr(input),
    }
}

fn encode_lines(e: &CodecExpr, var: &str, counter: &mut usize, out: &mut Vec<String>) {
    match e {
        CodecExpr::RawField(l) => {
            out.push(format!("frame = set_field(frame, round({var}), {})", field_args(l)));
        }
        CodecExpr::Affine { scale, offset, input } => {
            out.push(format!(
                "{var} = ({var} - {}) / {}",
                format_number(*offset),
                format_number(*scale)
            ));
            encode_lines(input, var, counter, out);
        }
        CodecExpr::EnumLookup { table, access, input } => {
            let lit = inverse_table_literal(table);
            match access {
                LookupAccess::Index => out.push(format!("{var} = {lit}[{var}]")),
                LookupAccess::Call => out.push(format!("{var} = {lit}({var})")),
            }
            encode_lines(input, var, counter, out);
        }
        CodecExpr::BoolMap { input } => {
            out.push(format!("{var} = 1 if {var} else 0"));
            encode_lines(input, var, counter, out);
        }
        CodecExpr::Combine { terms, .. } => {
            let mut order: Vec<_> = terms.iter().collect();
            order.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
            let last = order.len().saturating_sub(1);
            for (i, t) in order.into_iter().enumerate() {
                *counter += 1;
                let part = format!("part{counter}");
                let w = format_number(t.weight);
                if i == last {
                    out.push(format!("{part} = {var} / {w}  # {}", t.signal));
                } else {
                    out.push(format!("{part} = floor({var} / {w})  # {}", t.signal));
                    out.push(format!("{var} = {var} - {part} * {w}"));
                }
                encode_lines(&t.expr, &part, counter, out);
            }
        }
        CodecExpr::Clamp { min, max, input } => {
            out.push(format!(
                "{var} = min(max({var}, {}), {})",
                format_number(*min),
                format_number(*max)
            ));
            encode_lines(input, var, counter, out);
        }
    }
}

/// Render a codec as Python-style read/write functions. Function names keep
/// the signal name verbatim.
pub fn render_source(codec: &SignalCodec) -> String {
    let name = &codec.signal;
    let mut out = String::new();
    out.push_str(&format!("# {} signal codec ({})\n\n", name, codec.kind));
    out.push_str(&format!("def read_{name}(frame):\n"));
    out.push_str(&format!("    return {}\n\n\n", decode_expr(&codec.expr)));
    out.push_str(&format!("def write_{name}(frame, value):\n"));
    let mut lines = Vec::new();
    encode_lines(&codec.expr, "value", &mut 0, &mut lines);
    for line in lines {
        out.push_str(&format!("    {line}\n"));
    }
    out.push_str("    return frame\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ByteOrder, SignalKind};
    use crate::codec::FieldLayout;

    fn layout() -> FieldLayout {
        FieldLayout { bit_start: 0, bit_length: 2, byte_order: ByteOrder::LittleEndian, signed: false }
    }

    #[test]
    fn index_and_call_lookups_render_differently() {
        let table = [(0, "OFF".to_string()), (1, "ON".to_string())].into_iter().collect();
        let mut expr = CodecExpr::enum_lookup(table, CodecExpr::raw(layout()));
        let codec = SignalCodec { signal: "WiprFrntSts".into(), kind: SignalKind::Enum, expr: expr.clone() };
        let src = render_source(&codec);
        assert!(src.contains("def read_WiprFrntSts(frame):"));
        assert!(src.contains("{0: \"OFF\", 1: \"ON\"}[get_field("));
        if let CodecExpr::EnumLookup { access, .. } = &mut expr {
            *access = LookupAccess::Call;
        }
        let src = render_source(&SignalCodec { expr, ..codec });
        assert!(src.contains("{0: \"OFF\", 1: \"ON\"}(get_field("));
    }

    #[test]
    fn rendering_is_deterministic() {
        let codec = SignalCodec {
            signal: "VehSpd".into(),
            kind: SignalKind::Numerical,
            expr: CodecExpr::clamp(0.0, 655.35, CodecExpr::affine(0.01, 0.0, CodecExpr::raw(layout()))),
        };
        assert_eq!(render_source(&codec), render_source(&codec));
        assert!(render_source(&codec).contains("value = min(max(value, 0), 655.35)"));
    }
}
