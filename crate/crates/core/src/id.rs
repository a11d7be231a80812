//! 256-bit identifiers and the XOR metric shared by nodes and sample keys.

use std::fmt;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of bits in every identifier, and therefore the number of k-buckets.
pub const ID_BITS: usize = 256;

/// A 256-bit value stored as four big-endian limbs (most significant first),
/// so the derived `Ord` is numeric order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Id256(pub [u64; 4]);

impl Id256 {
    pub const ZERO: Id256 = Id256([0; 4]);

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            let mut chunk = [0u8; 8];
            chunk.copy_from_slice(&bytes[i * 8..i * 8 + 8]);
            *limb = u64::from_be_bytes(chunk);
        }
        Id256(limbs)
    }

    pub fn to_bytes(self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, limb) in self.0.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&limb.to_be_bytes());
        }
        out
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Id256([rng.gen(), rng.gen(), rng.gen(), rng.gen()])
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 4]
    }

    /// Bit `i` counted from the most significant bit (bit 0 is the MSB).
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < ID_BITS);
        (self.0[i / 64] >> (63 - (i % 64))) & 1 == 1
    }

    /// Number of leading zero bits; 256 for zero.
    pub fn leading_zeros(&self) -> u32 {
        let mut total = 0;
        for limb in self.0 {
            if limb == 0 {
                total += 64;
            } else {
                return total + limb.leading_zeros();
            }
        }
        total
    }

    /// Keep the first `len` bits and clear the rest.
    pub fn prefix_mask(&self, len: usize) -> Self {
        let mut out = *self;
        for (i, limb) in out.0.iter_mut().enumerate() {
            let start = i * 64;
            if len <= start {
                *limb = 0;
            } else if len < start + 64 {
                *limb &= !(u64::MAX >> (len - start));
            }
        }
        out
    }

    /// Set every bit after the first `len` bits.
    pub fn prefix_fill(&self, len: usize) -> Self {
        let mut out = *self;
        for (i, limb) in out.0.iter_mut().enumerate() {
            let start = i * 64;
            if len <= start {
                *limb = u64::MAX;
            } else if len < start + 64 {
                *limb |= u64::MAX >> (len - start);
            }
        }
        out
    }

    /// Flip bit `i` (MSB is bit 0).
    pub fn flip_bit(&self, i: usize) -> Self {
        let mut out = *self;
        out.0[i / 64] ^= 1 << (63 - (i % 64));
        out
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for limb in self.0 {
            s.push_str(&format!("{limb:016x}"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return Err(Error::Parse(format!("expected 64 hex digits, got {s:?}")));
        }
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            *limb = u64::from_str_radix(&s[i * 16..i * 16 + 16], 16)
                .map_err(|e| Error::Parse(format!("invalid hex id {s:?}: {e}")))?;
        }
        Ok(Id256(limbs))
    }
}

impl std::ops::BitXor for Id256 {
    type Output = Id256;

    fn bitxor(self, rhs: Id256) -> Id256 {
        Id256([
            self.0[0] ^ rhs.0[0],
            self.0[1] ^ rhs.0[1],
            self.0[2] ^ rhs.0[2],
            self.0[3] ^ rhs.0[3],
        ])
    }
}

impl fmt::Debug for Id256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..", &self.to_hex()[..12])
    }
}

impl fmt::Display for Id256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Identifier of a DHT participant.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct NodeId(pub Id256);

/// XOR distance between two points of the identifier space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Distance(pub Id256);

impl NodeId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        NodeId(Id256::random(rng))
    }

    pub fn id(&self) -> Id256 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<Id256> for NodeId {
    fn from(id: Id256) -> Self {
        NodeId(id)
    }
}

/// Position of a sample in a block's extended grid.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SampleOrigin {
    pub block_id: u64,
    pub row: u32,
    pub col: u32,
}

/// DHT key of one block sample, `SHA-256(block_id || row || col)` over the
/// big-endian encodings (8, 4 and 4 bytes).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SampleKey {
    pub bits: Id256,
    pub origin: SampleOrigin,
}

impl SampleKey {
    pub fn derive(block_id: u64, row: u32, col: u32) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(block_id.to_be_bytes());
        hasher.update(row.to_be_bytes());
        hasher.update(col.to_be_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        SampleKey {
            bits: Id256::from_bytes(bytes),
            origin: SampleOrigin { block_id, row, col },
        }
    }
}

/// Anything that occupies a point in the identifier space.
pub trait AsId {
    fn as_id(&self) -> Id256;
}

impl AsId for Id256 {
    fn as_id(&self) -> Id256 {
        *self
    }
}

impl AsId for NodeId {
    fn as_id(&self) -> Id256 {
        self.0
    }
}

impl AsId for SampleKey {
    fn as_id(&self) -> Id256 {
        self.bits
    }
}

pub fn xor_distance(a: &impl AsId, b: &impl AsId) -> Distance {
    Distance(a.as_id() ^ b.as_id())
}

/// Shared-prefix length of two ids whose distance is `distance`, i.e.
/// `255 - msb(distance)`.
pub fn bucket_index(distance: Distance) -> Result<usize> {
    if distance.0.is_zero() {
        return Err(Error::SelfReference);
    }
    Ok(distance.0.leading_zeros() as usize)
}
