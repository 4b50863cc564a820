use std::fmt;
use std::sync::Arc;

use fixedbitset::FixedBitSet;

/// Set of input-byte variable indices.
///
/// Cheap to clone: the bitset is shared, and unions that do not add anything
/// reuse the larger operand.
#[derive(Clone, Default)]
pub struct VarSet(Option<Arc<FixedBitSet>>);

impl VarSet {
    pub fn new() -> Self {
        VarSet(None)
    }

    pub fn singleton(var: u32) -> Self {
        let mut bits = FixedBitSet::with_capacity(var as usize + 1);
        bits.insert(var as usize);
        VarSet(Some(Arc::new(bits)))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn len(&self) -> usize {
        self.0.as_ref().map_or(0, |b| b.count_ones(..))
    }

    pub fn contains(&self, var: u32) -> bool {
        self.0.as_ref().is_some_and(|b| b.contains(var as usize))
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().flat_map(|b| b.ones().map(|i| i as u32))
    }

    pub fn intersects(&self, other: &VarSet) -> bool {
        match (&self.0, &other.0) {
            (Some(a), Some(b)) => !a.is_disjoint(b),
            _ => false,
        }
    }

    pub fn is_subset(&self, other: &VarSet) -> bool {
        match (&self.0, &other.0) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a.is_subset(b),
        }
    }

    pub fn union(&self, other: &VarSet) -> VarSet {
        if other.is_subset(self) {
            return self.clone();
        }
        if self.is_subset(other) {
            return other.clone();
        }
        let (a, b) = (self.0.as_ref().unwrap(), other.0.as_ref().unwrap());
        let mut bits = (**a).clone();
        bits.union_with(b);
        VarSet(Some(Arc::new(bits)))
    }

    /// In-place union; returns true when the set grew.
    pub fn union_with(&mut self, other: &VarSet) -> bool {
        if other.is_subset(self) {
            return false;
        }
        *self = self.union(other);
        true
    }

    /// Largest contained index, if any.
    pub fn max(&self) -> Option<u32> {
        self.0.as_ref().and_then(|b| b.ones().next_back()).map(|i| i as u32)
    }
}

impl PartialEq for VarSet {
    fn eq(&self, other: &Self) -> bool {
        self.is_subset(other) && other.is_subset(self)
    }
}

impl Eq for VarSet {}

impl FromIterator<u32> for VarSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut bits = FixedBitSet::new();
        let mut any = false;
        for v in iter {
            bits.grow(v as usize + 1);
            bits.insert(v as usize);
            any = true;
        }
        if any {
            VarSet(Some(Arc::new(bits)))
        } else {
            VarSet(None)
        }
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
