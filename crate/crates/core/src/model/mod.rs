//! Data models shared by every engine: relations of records, collections of
//! documents, and the metadata describing tiled arrays of cells.

mod array_meta;
mod document;
pub mod io;
mod relation;
mod value;

use std::cmp::Ordering;

pub use array_meta::{ArrayMeta, AttrType, CellSchema, Scalar};
pub use document::{split_path, Collection, Document};
pub use relation::{validate_relation, Attribute, Record, Relation, RowViolation, Schema, Violation};
pub use value::{KeyValue, Value, ValueType};

/// Lexicographic comparison of two records under the total value order.
pub fn cmp_records(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}
