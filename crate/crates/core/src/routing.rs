//! k-buckets and routing tables built from global knowledge of a static
//! population.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::id::{bucket_index, xor_distance, AsId, Distance, Id256, NodeId, ID_BITS};

/// The set of node ids of one network, sorted ascending and free of duplicates.
///
/// The position of an id in the sorted order is used as its dense node index
/// by the simulator.
#[derive(Clone, Debug)]
pub struct Population {
    ids: Vec<NodeId>,
}

impl Population {
    pub fn new(mut ids: Vec<NodeId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(Population { ids })
    }

    /// Draw `n` distinct uniformly random ids; collisions are resampled.
    pub fn generate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut seen = HashSet::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        while ids.len() < n {
            let id = NodeId::random(rng);
            if seen.insert(id) {
                ids.push(id);
            }
        }
        Population::new(ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn get(&self, index: usize) -> NodeId {
        self.ids[index]
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.ids.binary_search(id).ok()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index_of(id).is_some()
    }

    /// The `n` members globally closest to `key`, ascending by distance, as
    /// indices into the sorted id list.
    pub fn closest_indices(&self, key: &impl AsId, n: usize) -> Vec<usize> {
        let key = key.as_id();
        let mut best = 0..self.ids.len();
        for len in 1..=ID_BITS {
            let r = self.prefix_range(key, len);
            if r.len() < n {
                break;
            }
            best = r;
        }
        let mut picked: Vec<usize> = best.collect();
        select_closest(&mut picked, n, |&i| xor_distance(&self.ids[i], &key));
        picked
    }

    pub fn closest(&self, key: &impl AsId, n: usize) -> Vec<NodeId> {
        self.closest_indices(key, n)
            .into_iter()
            .map(|i| self.ids[i])
            .collect()
    }

    /// Index range of all ids sharing the first `len` bits with `point`.
    fn prefix_range(&self, point: Id256, len: usize) -> std::ops::Range<usize> {
        let lo = NodeId(point.prefix_mask(len));
        let hi = NodeId(point.prefix_fill(len));
        let start = self.ids.partition_point(|id| *id < lo);
        let end = self.ids.partition_point(|id| *id <= hi);
        start..end
    }
}

/// One k-bucket: the entries sharing exactly `index` leading bits with the
/// local id, ordered closest-first to the local id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KBucket {
    index: usize,
    entries: Vec<NodeId>,
}

impl KBucket {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn entries(&self) -> &[NodeId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How a bucket whose subtree holds more than k nodes picks its members.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BucketFill {
    /// The k members closest to the local id.
    Closest,
    /// A uniform sample of k members, seeded per local id. Models buckets
    /// filled in discovery order.
    #[default]
    Random,
}

impl BucketFill {
    pub fn as_str(&self) -> &'static str {
        match self {
            BucketFill::Closest => "closest",
            BucketFill::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTable {
    local_id: NodeId,
    k: usize,
    buckets: Vec<KBucket>,
}

impl RoutingTable {
    /// Build the table of `local` from a population that contains it. Each
    /// bucket keeps the `k` members of its subtree that are closest to `local`.
    pub fn from_population(local: NodeId, population: &Population, k: usize) -> Result<Self> {
        Self::build(local, population, k, BucketFill::Closest, 0)
    }

    /// Build with an explicit bucket policy. `seed` only matters for
    /// [`BucketFill::Random`].
    pub fn build(
        local: NodeId,
        population: &Population,
        k: usize,
        fill: BucketFill,
        seed: u64,
    ) -> Result<Self> {
        if !population.contains(&local) {
            return Err(Error::UnknownNode(local.to_string()));
        }
        let k = k.max(1);
        let mut rng = match fill {
            BucketFill::Random => {
                let mut bytes = local.0.to_bytes();
                for (b, s) in bytes.iter_mut().zip(seed.to_be_bytes()) {
                    *b ^= s;
                }
                Some(ChaCha8Rng::from_seed(bytes))
            }
            BucketFill::Closest => None,
        };
        let mut buckets = Vec::with_capacity(ID_BITS);
        for index in 0..ID_BITS {
            // Sibling subtree of `local` at depth `index`: the candidates of this bucket.
            let pivot = local.0.flip_bit(index);
            let range = population.prefix_range(pivot, index + 1);
            let entries = if range.len() <= k {
                population.ids[range].to_vec()
            } else if let Some(rng) = rng.as_mut() {
                rand::seq::index::sample(rng, range.len(), k)
                    .into_iter()
                    .map(|i| population.ids[range.start + i])
                    .collect()
            } else {
                // Narrow to the deepest subtree around `pivot` that still holds k members;
                // everything inside it is closer to `local` than anything outside.
                let mut best = range;
                for len in index + 2..=ID_BITS {
                    let r = population.prefix_range(pivot, len);
                    if r.len() < k {
                        break;
                    }
                    best = r;
                }
                let mut picked = population.ids[best].to_vec();
                picked.sort_unstable_by_key(|id| xor_distance(id, &local));
                picked.truncate(k);
                picked
            };
            let mut entries = entries;
            entries.sort_unstable_by_key(|id| xor_distance(id, &local));
            buckets.push(KBucket { index, entries });
        }
        Ok(RoutingTable {
            local_id: local,
            k,
            buckets,
        })
    }

    pub fn local_id(&self) -> NodeId {
        self.local_id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn buckets(&self) -> &[KBucket] {
        &self.buckets
    }

    pub fn bucket(&self, index: usize) -> &KBucket {
        &self.buckets[index]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(KBucket::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.buckets.iter().flat_map(|b| b.entries.iter().copied())
    }

    /// Up to `n` entries sorted ascending by XOR distance to `key`.
    pub fn closest(&self, key: &impl AsId, n: usize) -> Vec<NodeId> {
        let key = key.as_id();
        let mut all: Vec<NodeId> = self.entries().collect();
        select_closest(&mut all, n, |id| xor_distance(id, &key));
        all
    }

    /// Bucket the given id would fall into.
    pub fn bucket_for(&self, id: &NodeId) -> Result<usize> {
        bucket_index(xor_distance(&self.local_id, id))
    }
}

/// Build a routing table from an unsorted population list, keeping the k
/// closest members per bucket.
pub fn table_init(local: NodeId, population: &[NodeId], k: usize) -> Result<RoutingTable> {
    let population = Population::new(population.to_vec())?;
    RoutingTable::from_population(local, &population, k)
}

/// Reorder `items` so that it holds its `n` smallest elements by `key`,
/// ascending, and truncate the rest.
pub(crate) fn select_closest<T, F>(items: &mut Vec<T>, n: usize, mut key: F)
where
    F: FnMut(&T) -> Distance,
{
    if n == 0 {
        items.clear();
        return;
    }
    if items.len() > n {
        items.select_nth_unstable_by_key(n - 1, &mut key);
        items.truncate(n);
    }
    items.sort_unstable_by_key(key);
}
