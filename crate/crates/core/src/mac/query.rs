//! AP query message codec.
//!
//! Layout, most significant bit first:
//! `[8b group_id][1b has_assoc][8b network_id][8b slot]?[1b has_reassign][permutation]?[zero padding]`.
//! Messages without a reassignment are padded to 32 bits. A reassignment is
//! the Lehmer rank of a permutation of the 256 slots (1684 bits), and the
//! whole message is padded to 1760 bits.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DOWNLINK_BPS: f64 = 160e3;
pub const MIN_QUERY_BITS: usize = 32;
pub const REASSIGN_QUERY_BITS: usize = 1760;
pub const PERMUTATION_SLOTS: usize = 256;
/// `ceil(log2(256!))`.
pub const PERMUTATION_BITS: usize = 1684;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssocPayload {
    pub network_id: u8,
    /// Slot index; the cyclic shift is `slot·skip`.
    pub slot: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMessage {
    pub group_id: u8,
    pub assoc: Option<AssocPayload>,
    /// New slot for every current slot: `permutation[old] = new`.
    pub reassignment: Option<Vec<u16>>,
}

impl QueryMessage {
    pub fn minimal(group_id: u8) -> Self {
        Self {
            group_id,
            assoc: None,
            reassignment: None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        if self.reassignment.is_some() {
            REASSIGN_QUERY_BITS
        } else {
            MIN_QUERY_BITS
        }
    }

    /// Downlink airtime in seconds.
    pub fn airtime(&self) -> f64 {
        airtime(self.encoded_len())
    }
}

pub fn airtime(bits: usize) -> f64 {
    bits as f64 / DOWNLINK_BPS
}

fn push_bits(out: &mut Vec<bool>, value: u64, width: usize) {
    for i in (0..width).rev() {
        out.push((value >> i) & 1 == 1);
    }
}

struct Reader<'a> {
    bits: &'a [bool],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, width: usize) -> Result<u64> {
        if self.pos + width > self.bits.len() {
            return Err(Error::QueryDecode("message ends inside a field".into()));
        }
        let v = self.bits[self.pos..self.pos + width]
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | b as u64);
        self.pos += width;
        Ok(v)
    }
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::from(1u32), |acc, k| acc * k)
}

/// Lehmer rank of a permutation of `0..len`.
pub fn permutation_rank(perm: &[u16]) -> Result<BigUint> {
    let n = perm.len();
    let mut seen = vec![false; n];
    for &p in perm {
        let p = p as usize;
        if p >= n || seen[p] {
            return Err(Error::QueryDecode("not a permutation".into()));
        }
        seen[p] = true;
    }
    let mut rank = BigUint::zero();
    for i in 0..n {
        let smaller_after = perm[i + 1..].iter().filter(|&&q| q < perm[i]).count();
        rank = rank * (n - i) as u64 + smaller_after as u64;
    }
    Ok(rank)
}

pub fn permutation_unrank(mut rank: BigUint, n: usize) -> Result<Vec<u16>> {
    if rank >= factorial(n) {
        return Err(Error::QueryDecode("permutation rank out of range".into()));
    }
    let mut digits = vec![0usize; n];
    for i in (0..n).rev() {
        let radix = (n - i) as u64;
        digits[i] = (&rank % radix).to_usize().expect("digit < radix");
        rank /= radix;
    }
    let mut pool: Vec<u16> = (0..n as u16).collect();
    Ok(digits.into_iter().map(|d| pool.remove(d)).collect())
}

pub fn encode_query(msg: &QueryMessage) -> Result<Vec<bool>> {
    let mut bits = Vec::with_capacity(msg.encoded_len());
    push_bits(&mut bits, msg.group_id as u64, 8);
    bits.push(msg.assoc.is_some());
    if let Some(a) = msg.assoc {
        push_bits(&mut bits, a.network_id as u64, 8);
        push_bits(&mut bits, a.slot as u64, 8);
    }
    bits.push(msg.reassignment.is_some());
    if let Some(perm) = &msg.reassignment {
        if perm.len() != PERMUTATION_SLOTS {
            return Err(Error::QueryDecode(format!(
                "reassignment must cover {PERMUTATION_SLOTS} slots"
            )));
        }
        let rank = permutation_rank(perm)?;
        let width = PERMUTATION_BITS;
        for i in (0..width).rev() {
            bits.push(rank.bit(i as u64));
        }
    }
    bits.resize(msg.encoded_len(), false);
    Ok(bits)
}

pub fn decode_query(bits: &[bool]) -> Result<QueryMessage> {
    if bits.len() != MIN_QUERY_BITS && bits.len() != REASSIGN_QUERY_BITS {
        return Err(Error::QueryDecode(format!("unexpected length {}", bits.len())));
    }
    let mut r = Reader { bits, pos: 0 };
    let group_id = r.take(8)? as u8;
    let assoc = if r.take(1)? == 1 {
        Some(AssocPayload {
            network_id: r.take(8)? as u8,
            slot: r.take(8)? as u8,
        })
    } else {
        None
    };
    let reassignment = if r.take(1)? == 1 {
        if bits.len() != REASSIGN_QUERY_BITS {
            return Err(Error::QueryDecode("reassignment flag in a short message".into()));
        }
        let mut rank = BigUint::zero();
        for _ in 0..PERMUTATION_BITS {
            rank = (rank << 1u32) + r.take(1)?;
        }
        Some(permutation_unrank(rank, PERMUTATION_SLOTS)?)
    } else {
        if bits.len() != MIN_QUERY_BITS {
            return Err(Error::QueryDecode("long message without reassignment".into()));
        }
        None
    };
    if bits[r.pos..].iter().any(|&b| b) {
        return Err(Error::QueryDecode("non-zero padding".into()));
    }
    Ok(QueryMessage {
        group_id,
        assoc,
        reassignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn permutation_field_width() {
        let max_rank = factorial(256) - 1u32;
        assert_eq!(max_rank.bits() as usize, PERMUTATION_BITS);
        assert!(PERMUTATION_BITS + 10 + 16 <= REASSIGN_QUERY_BITS);
    }

    #[test]
    fn minimal_query_size_and_airtime() {
        let m = QueryMessage::minimal(3);
        let bits = encode_query(&m).unwrap();
        assert_eq!(bits.len(), 32);
        assert!((m.airtime() - 0.2e-3).abs() < 1e-12);
        assert_eq!(decode_query(&bits).unwrap(), m);
    }

    #[test]
    fn full_reassignment_size_and_airtime() {
        let perm: Vec<u16> = (0..256u16).rev().collect();
        let m = QueryMessage {
            group_id: 1,
            assoc: Some(AssocPayload { network_id: 9, slot: 200 }),
            reassignment: Some(perm),
        };
        let bits = encode_query(&m).unwrap();
        assert_eq!(bits.len(), 1760);
        assert!((m.airtime() - 11e-3).abs() < 1e-12);
        assert_eq!(decode_query(&bits).unwrap(), m);
    }

    #[test]
    fn decode_rejects_bad_lengths() {
        assert!(decode_query(&[false; 31]).is_err());
        assert!(decode_query(&[false; 40]).is_err());
        let mut bits = encode_query(&QueryMessage::minimal(0)).unwrap();
        bits[31] = true;
        assert!(decode_query(&bits).is_err());
    }

    #[test]
    fn rejects_non_permutation() {
        let mut perm: Vec<u16> = (0..256).collect();
        perm[3] = 4;
        let m = QueryMessage {
            group_id: 0,
            assoc: None,
            reassignment: Some(perm),
        };
        assert!(encode_query(&m).is_err());
    }

    #[test]
    fn rank_extremes() {
        let id: Vec<u16> = (0..8).collect();
        assert_eq!(permutation_rank(&id).unwrap(), BigUint::zero());
        let rev: Vec<u16> = (0..8).rev().collect();
        assert_eq!(permutation_rank(&rev).unwrap(), factorial(8) - 1u32);
        assert_eq!(permutation_unrank(BigUint::from(5u32), 3).unwrap(), vec![2, 1, 0]);
    }

    fn arb_message() -> impl Strategy<Value = QueryMessage> {
        (
            any::<u8>(),
            prop::option::of((any::<u8>(), any::<u8>())),
            prop::option::of(Just((0..256u16).collect::<Vec<_>>()).prop_shuffle()),
        )
            .prop_map(|(group_id, assoc, reassignment)| QueryMessage {
                group_id,
                assoc: assoc.map(|(network_id, slot)| AssocPayload { network_id, slot }),
                reassignment,
            })
    }

    proptest! {
        #[test]
        fn query_roundtrip(m in arb_message()) {
            let bits = encode_query(&m).unwrap();
            prop_assert_eq!(bits.len(), m.encoded_len());
            prop_assert_eq!(decode_query(&bits).unwrap(), m);
        }
    }
}
