use super::{EnvError, ItemId};

/// Largest number of category tags an item may carry.
pub const MAX_TAGS_PER_ITEM: usize = 4;

/// Item side information used for distances and the exit rule.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemCatalog {
    /// Each item carries 1 to 4 tag ids out of a shared vocabulary.
    Categorical { vocab: usize, tags: Vec<Vec<u32>> },
    /// Each item is a point in R^dim.
    Continuous { dim: usize, vectors: Vec<Vec<f64>> },
}

impl ItemCatalog {
    /// Validates tag counts and ids; tag lists are sorted and deduplicated.
    pub fn categorical(vocab: usize, tags: Vec<Vec<u32>>) -> Result<Self, EnvError> {
        if vocab == 0 {
            return Err(EnvError::Invalid("tag vocabulary must be non-empty".into()));
        }
        let mut clean = Vec::with_capacity(tags.len());
        for (item, mut t) in tags.into_iter().enumerate() {
            t.sort_unstable();
            t.dedup();
            if t.is_empty() || t.len() > MAX_TAGS_PER_ITEM {
                return Err(EnvError::Invalid(format!(
                    "item {item} has {} distinct tags; expected 1..={MAX_TAGS_PER_ITEM}",
                    t.len()
                )));
            }
            if let Some(&bad) = t.iter().find(|&&x| x as usize >= vocab) {
                return Err(EnvError::Invalid(format!(
                    "item {item} uses tag {bad} outside vocabulary of {vocab}"
                )));
            }
            clean.push(t);
        }
        if clean.is_empty() {
            return Err(EnvError::Invalid("catalog has no items".into()));
        }
        Ok(Self::Categorical { vocab, tags: clean })
    }

    pub fn continuous(vectors: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let Some(first) = vectors.first() else {
            return Err(EnvError::Invalid("catalog has no items".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(EnvError::Invalid("item vectors must be non-empty".into()));
        }
        for (item, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EnvError::Invalid(format!(
                    "item {item} has dimension {} but item 0 has {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EnvError::Invalid(format!(
                    "item {item} has a non-finite coordinate"
                )));
            }
        }
        Ok(Self::Continuous { dim, vectors })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Categorical { tags, .. } => tags.len(),
            Self::Continuous { vectors, .. } => vectors.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Self::Categorical { .. })
    }

    fn check(&self, item: ItemId) -> Result<(), EnvError> {
        if item < self.len() {
            Ok(())
        } else {
            Err(EnvError::UnknownItem(item))
        }
    }

    pub fn tags(&self, item: ItemId) -> Option<&[u32]> {
        match self {
            Self::Categorical { tags, .. } => tags.get(item).map(Vec::as_slice),
            Self::Continuous { .. } => None,
        }
    }

    pub fn vector(&self, item: ItemId) -> Option<&[f64]> {
        match self {
            Self::Continuous { vectors, .. } => vectors.get(item).map(Vec::as_slice),
            Self::Categorical { .. } => None,
        }
    }

    /// Normalized Hamming distance between multi-hot tag vectors for
    /// categorical catalogs, Euclidean distance for continuous ones.
    pub fn distance(&self, i: ItemId, j: ItemId) -> Result<f64, EnvError> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    pub(crate) fn distance_unchecked(&self, i: ItemId, j: ItemId) -> f64 {
        match self {
            Self::Categorical { vocab, tags } => {
                let shared = shared_count(&tags[i], &tags[j]);
                let differing = tags[i].len() + tags[j].len() - 2 * shared;
                differing as f64 / *vocab as f64
            }
            Self::Continuous { vectors, .. } => vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Whether two categorical items share at least one tag.
    pub(crate) fn shares_tag(&self, i: ItemId, j: ItemId) -> bool {
        match self {
            Self::Categorical { tags, .. } => shared_count(&tags[i], &tags[j]) > 0,
            Self::Continuous { .. } => false,
        }
    }
}

/// Intersection size of two sorted tag lists.
fn shared_count(a: &[u32], b: &[u32]) -> usize {
    let (mut x, mut y, mut n) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                x += 1;
                y += 1;
            }
        }
    }
    n
}

/// Distance between two catalog items.
pub fn item_distance(i: ItemId, j: ItemId, catalog: &ItemCatalog) -> Result<f64, EnvError> {
    catalog.distance(i, j)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Multi-hot Hamming distance computed the long way.
    fn hamming_oracle(a: &[u32], b: &[u32], vocab: usize) -> f64 {
        let hot = |t: &[u32]| {
            let mut v = vec![0u8; vocab];
            t.iter().for_each(|&x| v[x as usize] = 1);
            v
        };
        let (ha, hb) = (hot(a), hot(b));
        ha.iter().zip(&hb).filter(|(x, y)| x != y).count() as f64 / vocab as f64
    }

    #[test]
    fn identical_tags_are_at_distance_zero() {
        let c = ItemCatalog::categorical(31, vec![vec![3, 7], vec![7, 3]]).unwrap();
        assert_eq!(c.distance(0, 1).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_singletons_differ_in_two_positions() {
        let c = ItemCatalog::categorical(31, vec![vec![0], vec![5]]).unwrap();
        assert_eq!(c.distance(0, 1).unwrap(), 2.0 / 31.0);
    }

    #[test]
    fn three_four_five() {
        let mut a = vec![0.0; 27];
        let mut b = vec![0.0; 27];
        a[0] = 0.0;
        b[0] = 3.0;
        b[1] = 4.0;
        let c = ItemCatalog::continuous(vec![a, b]).unwrap();
        assert_eq!(c.distance(0, 1).unwrap(), 5.0);
    }

    #[test]
    fn unknown_item_is_an_error() {
        let c = ItemCatalog::categorical(4, vec![vec![0]]).unwrap();
        assert!(matches!(c.distance(0, 1), Err(EnvError::UnknownItem(1))));
    }

    #[test]
    fn rejects_bad_tag_sets() {
        assert!(ItemCatalog::categorical(10, vec![vec![0, 1, 2, 3, 4]]).is_err());
        assert!(ItemCatalog::categorical(10, vec![vec![]]).is_err());
        assert!(ItemCatalog::categorical(10, vec![vec![10]]).is_err());
        assert!(ItemCatalog::continuous(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn hamming_matches_multi_hot_oracle(
            a in proptest::collection::btree_set(0u32..12, 1..=4),
            b in proptest::collection::btree_set(0u32..12, 1..=4),
        ) {
            let (a, b): (Vec<u32>, Vec<u32>) = (a.into_iter().collect(), b.into_iter().collect());
            let c = ItemCatalog::categorical(12, vec![a.clone(), b.clone()]).unwrap();
            proptest::prop_assert_eq!(c.distance(0, 1).unwrap(), hamming_oracle(&a, &b, 12));
            proptest::prop_assert_eq!(c.shares_tag(0, 1), a.iter().any(|x| b.contains(x)));
        }
    }
}
