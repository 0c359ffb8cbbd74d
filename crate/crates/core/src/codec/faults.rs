//! Deliberate corruptions of codec trees, applied by the fault-injecting
//! provider.

use super::{CodecExpr, LookupAccess};

/// Turn the first enum lookup into call syntax.
pub(crate) fn bracket_misuse(expr: &mut CodecExpr) -> bool {
    expr.visit_mut(&mut |e| match e {
        CodecExpr::EnumLookup { access, .. } => {
            *access = LookupAccess::Call;
            true
        }
        _ => false,
    })
}

/// Multiply the first affine scale by ten; without one, the first combine
/// weight.
pub(crate) fn off_by_one_scale(expr: &mut CodecExpr) -> bool {
    let scaled = expr.visit_mut(&mut |e| match e {
        CodecExpr::Affine { scale, .. } => {
            *scale *= 10.0;
            true
        }
        _ => false,
    });
    scaled
        || expr.visit_mut(&mut |e| match e {
            CodecExpr::Combine { terms, .. } => match terms.first_mut() {
                Some(t) => {
                    t.weight *= 10.0;
                    true
                }
                None => false,
            },
            _ => false,
        })
}

/// Remove the entry with the highest raw key from the first enum table.
pub(crate) fn dropped_enum_entry(expr: &mut CodecExpr) -> bool {
    expr.visit_mut(&mut |e| match e {
        CodecExpr::EnumLookup { table, .. } => table.pop_last().is_some(),
        _ => false,
    })
}

/// Flip the byte order of every field.
pub(crate) fn swapped_byte_order(expr: &mut CodecExpr) -> bool {
    let mut changed = false;
    expr.visit_mut(&mut |e| {
        if let CodecExpr::RawField(l) = e {
            l.byte_order = l.byte_order.swapped();
            changed = true;
        }
        false
    });
    changed
}
