//! Named parameter slots over a canonical flat vector.
//!
//! Every sampler works on plain `Vec<f64>`; [`Layout`] records how that vector
//! splits into named arrays so results can be reported per variable.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl Slot {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Empty shape means a scalar.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Flattened column names, `name[i0,i1,...]` with zero-based row-major indices.
    /// Scalars are reported under the bare name.
    pub fn column_names(&self) -> Vec<String> {
        if self.shape.is_empty() {
            return vec![self.name.clone()];
        }
        let mut names = Vec::with_capacity(self.len);
        let mut index = vec![0usize; self.shape.len()];
        for _ in 0..self.len {
            let joined = index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
            names.push(format!("{}[{}]", self.name, joined));
            for axis in (0..self.shape.len()).rev() {
                index[axis] += 1;
                if index[axis] < self.shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        names
    }
}

/// Ordered list of `(name, shape)` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slots: Vec<Slot>,
    size: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(slots: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Arc<Self>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, shape) in slots {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::Layout("slot names must be non-empty".into()));
            }
            if out.iter().any(|s: &Slot| s.name == name) {
                return Err(Error::Layout(format!("duplicate slot `{name}`")));
            }
            let len = shape.iter().product::<usize>();
            if len == 0 {
                return Err(Error::Layout(format!("slot `{name}` has zero size")));
            }
            out.push(Slot {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        }
        if out.is_empty() {
            return Err(Error::Layout("layout must contain at least one slot".into()));
        }
        Ok(Arc::new(Layout {
            slots: out,
            size: offset,
        }))
    }

    /// Total flat length.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.slots.iter().flat_map(Slot::column_names).collect()
    }
}

/// A point in parameter space: a [`Layout`] plus its flat values.
#[derive(Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl fmt::Debug for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for slot in self.layout.slots() {
            map.entry(&slot.name, &&self.values[slot.range()]);
        }
        map.finish()
    }
}

impl ParameterVector {
    /// Inverse of [`ParameterVector::flatten`].
    pub fn structure(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.size() {
            return Err(Error::Layout(format!(
                "expected {} values for layout, found {}",
                layout.size(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.size()];
        Self { layout, values }
    }

    /// Build from `(name, shape, values)` triples in declaration order.
    pub fn from_named<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut slots = Vec::new();
        let mut values = Vec::new();
        for (name, shape, vals) in entries {
            let name = name.into();
            let expected: usize = shape.iter().product();
            if vals.len() != expected {
                return Err(Error::Layout(format!(
                    "slot `{name}` expects {expected} values, found {}",
                    vals.len()
                )));
            }
            slots.push((name, shape));
            values.extend(vals);
        }
        let layout = Layout::new(slots)?;
        Self::structure(layout, values)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.slot(name).map(|s| &self.values[s.range()])
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout("parameter layouts differ".into()))
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self {
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            layout: Arc::clone(&self.layout),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check(other)?;
        Ok(dot(&self.values, &other.values))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
