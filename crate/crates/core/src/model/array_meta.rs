use std::collections::HashSet;

use super::value::{Value, ValueType};
use crate::{Error, Result};

/// Numeric attribute type of an array cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrType {
    Int,
    UInt,
    Float,
}

impl AttrType {
    pub fn from_value_type(ty: &ValueType) -> Option<AttrType> {
        match ty {
            ValueType::Int => Some(AttrType::Int),
            ValueType::UInt => Some(AttrType::UInt),
            ValueType::Float => Some(AttrType::Float),
            _ => None,
        }
    }

    pub fn value_type(self) -> ValueType {
        match self {
            AttrType::Int => ValueType::Int,
            AttrType::UInt => ValueType::UInt,
            AttrType::Float => ValueType::Float,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            AttrType::Int => 0,
            AttrType::UInt => 1,
            AttrType::Float => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<AttrType> {
        match tag {
            0 => Some(AttrType::Int),
            1 => Some(AttrType::UInt),
            2 => Some(AttrType::Float),
            _ => None,
        }
    }
}

/// A single cell attribute value.
#[derive(Debug, Clone, Copy)]
pub enum Scalar {
    Int(i64),
    UInt(u64),
    Float(f64),
}

impl Scalar {
    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(i) => i as f64,
            Scalar::UInt(u) => u as f64,
            Scalar::Float(f) => f,
        }
    }

    pub fn attr_type(self) -> AttrType {
        match self {
            Scalar::Int(_) => AttrType::Int,
            Scalar::UInt(_) => AttrType::UInt,
            Scalar::Float(_) => AttrType::Float,
        }
    }

    pub fn to_value(self) -> Value {
        match self {
            Scalar::Int(i) => Value::Int(i),
            Scalar::UInt(u) => Value::UInt(u),
            Scalar::Float(f) => Value::Float(f),
        }
    }

    /// Converts `v` to a scalar of type `ty`, without lossy conversions
    /// except int/uint to float.
    pub fn from_value(v: &Value, ty: AttrType) -> Result<Scalar> {
        let bad = || Error::Type(format!("cannot store {} value in a {ty:?} cell attribute", v.type_name()));
        Ok(match (ty, v) {
            (AttrType::Int, Value::Int(i)) => Scalar::Int(*i),
            (AttrType::Int, Value::UInt(u)) => Scalar::Int(i64::try_from(*u).map_err(|_| bad())?),
            (AttrType::UInt, Value::UInt(u)) => Scalar::UInt(*u),
            (AttrType::UInt, Value::Int(i)) => Scalar::UInt(u64::try_from(*i).map_err(|_| bad())?),
            (AttrType::Float, v) => Scalar::Float(v.as_f64().ok_or_else(bad)?),
            _ => return Err(bad()),
        })
    }

    /// Bit pattern used for exact comparisons and checksums.
    pub fn bits(self) -> u64 {
        match self {
            Scalar::Int(i) => i as u64,
            Scalar::UInt(u) => u,
            Scalar::Float(f) => f.to_bits(),
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.attr_type() == other.attr_type() && self.bits() == other.bits()
    }
}

impl Eq for Scalar {}

/// Names of the dimension attributes and the typed non-dimension attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSchema {
    dims: Vec<String>,
    attrs: Vec<(String, AttrType)>,
}

impl CellSchema {
    pub fn new(dims: Vec<String>, attrs: Vec<(String, AttrType)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Schema("an array needs at least one dimension".into()));
        }
        let mut seen = HashSet::new();
        for name in dims.iter().chain(attrs.iter().map(|(n, _)| n)) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate cell attribute name '{name}'")));
            }
        }
        Ok(CellSchema { dims, attrs })
    }

    pub fn dims(&self) -> &[String] {
        &self.dims
    }

    pub fn attrs(&self) -> &[(String, AttrType)] {
        &self.attrs
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn nattrs(&self) -> usize {
        self.attrs.len()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d == name)
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|(a, _)| a == name)
    }

    pub fn attr_types(&self) -> Vec<AttrType> {
        self.attrs.iter().map(|(_, t)| *t).collect()
    }
}

/// Shape metadata of an array: explicit per-dimension size and tile size.
/// Coordinates are 0-based and strictly below the size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayMeta {
    pub schema: CellSchema,
    size: Vec<u64>,
    tile: Vec<u64>,
}

impl ArrayMeta {
    pub fn new(schema: CellSchema, size: Vec<u64>, tile: Vec<u64>) -> Result<Self> {
        let d = schema.ndim();
        if size.len() != d || tile.len() != d {
            return Err(Error::Shape(format!(
                "{d}-d schema with {} sizes and {} tile sizes",
                size.len(),
                tile.len()
            )));
        }
        if size.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("zero-length dimension in {size:?}")));
        }
        if tile.iter().any(|&t| t == 0 || t > u32::MAX as u64) {
            return Err(Error::Shape(format!("tile sizes must be in 1..=2^32-1, got {tile:?}")));
        }
        Ok(ArrayMeta { schema, size, tile })
    }

    /// Tile extent clipped to the array: `min(extent, size)` per dimension.
    pub fn with_default_tiles(schema: CellSchema, size: Vec<u64>, extent: u64) -> Result<Self> {
        let tile = size.iter().map(|&s| s.min(extent.max(1))).collect();
        ArrayMeta::new(schema, size, tile)
    }

    pub fn ndim(&self) -> usize {
        self.size.len()
    }

    pub fn size(&self) -> &[u64] {
        &self.size
    }

    pub fn tile_size(&self) -> &[u64] {
        &self.tile
    }

    /// Number of tiles along each dimension, `ceil(size / tile)`.
    pub fn grid(&self) -> Vec<u64> {
        self.size.iter().zip(&self.tile).map(|(s, t)| s.div_ceil(*t)).collect()
    }

    pub fn tile_count(&self) -> usize {
        self.grid().iter().product::<u64>() as usize
    }

    /// Cells per (full) tile.
    pub fn tile_cells(&self) -> usize {
        self.tile.iter().product::<u64>() as usize
    }

    pub fn contains(&self, coord: &[u64]) -> bool {
        coord.len() == self.size.len() && coord.iter().zip(&self.size).all(|(c, s)| c < s)
    }

    /// Row-major linear index of a tile coordinate (last dimension fastest).
    pub fn tile_index(&self, tc: &[u64]) -> Result<usize> {
        let grid = self.grid();
        if tc.len() != grid.len() || tc.iter().zip(&grid).any(|(c, g)| c >= g) {
            return Err(Error::Bounds(format!("tile {tc:?} outside grid {grid:?}")));
        }
        Ok(tc.iter().zip(&grid).fold(0u64, |acc, (c, g)| acc * g + c) as usize)
    }

    pub fn tile_coord(&self, index: usize) -> Vec<u64> {
        let grid = self.grid();
        let mut rest = index as u64;
        let mut tc = vec![0; grid.len()];
        for (i, g) in grid.iter().enumerate().rev() {
            tc[i] = rest % g;
            rest /= g;
        }
        tc
    }

    /// Splits a global coordinate into (tile coordinate, in-tile coordinate).
    pub fn split(&self, coord: &[u64]) -> (Vec<u64>, Vec<u64>) {
        let tc = coord.iter().zip(&self.tile).map(|(c, t)| c / t).collect();
        let cc = coord.iter().zip(&self.tile).map(|(c, t)| c % t).collect();
        (tc, cc)
    }

    /// Global coordinate of in-tile coordinate `cc` of tile `tc`.
    pub fn join(&self, tc: &[u64], cc: &[u64]) -> Vec<u64> {
        tc.iter().zip(cc).zip(&self.tile).map(|((t, c), ts)| t * ts + c).collect()
    }

    /// Same dimensions and attribute schema with a different shape.
    pub fn reshaped(&self, size: Vec<u64>, tile: Vec<u64>) -> Result<ArrayMeta> {
        ArrayMeta::new(self.schema.clone(), size, tile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta_30x10() -> ArrayMeta {
        let schema = CellSchema::new(vec!["v0".into(), "v1".into()], vec![("val".into(), AttrType::Float)]).unwrap();
        ArrayMeta::new(schema, vec![30, 10], vec![10, 5]).unwrap()
    }

    #[test]
    fn grid_is_ceiling_of_size_over_tile() {
        let m = meta_30x10();
        assert_eq!(m.grid(), vec![3, 2]);
        let schema = CellSchema::new(vec!["x".into()], vec![]).unwrap();
        let edge = ArrayMeta::new(schema, vec![11], vec![5]).unwrap();
        assert_eq!(edge.grid(), vec![3]);
    }

    #[test]
    fn split_and_join_coordinates() {
        let m = meta_30x10();
        let (tc, cc) = m.split(&[23, 8]);
        assert_eq!(tc, vec![2, 1]);
        assert_eq!(cc, vec![3, 3]);
        assert_eq!(m.join(&tc, &cc), vec![23, 8]);
        assert!(m.contains(&[29, 9]));
        assert!(!m.contains(&[30, 0]));
    }

    #[test]
    fn tile_index_roundtrip() {
        let m = meta_30x10();
        for i in 0..m.tile_count() {
            assert_eq!(m.tile_index(&m.tile_coord(i)).unwrap(), i);
        }
        assert!(m.tile_index(&[3, 0]).is_err());
    }

    #[test]
    fn schema_rejects_duplicates_and_zero_dims() {
        assert!(CellSchema::new(vec![], vec![]).is_err());
        assert!(CellSchema::new(vec!["x".into()], vec![("x".into(), AttrType::Int)]).is_err());
    }

    #[test]
    fn scalar_conversion() {
        assert_eq!(Scalar::from_value(&Value::Int(3), AttrType::UInt).unwrap(), Scalar::UInt(3));
        assert!(Scalar::from_value(&Value::Int(-3), AttrType::UInt).is_err());
        assert_eq!(Scalar::from_value(&Value::Int(3), AttrType::Float).unwrap(), Scalar::Float(3.0));
        assert!(Scalar::from_value(&Value::from("x"), AttrType::Float).is_err());
    }
}
