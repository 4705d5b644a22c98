use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DeviceId = u32;

/// Power-aware mapping of devices to cyclic shifts.
///
/// Slots are `skip` bins apart. The low-SNR association reservations sit
/// below the weakest device, the high-SNR ones above the strongest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub skip: usize,
    /// Number of cyclic shifts in the symbol (`2^sf`, or `m·2^sf` aggregated).
    pub shifts: usize,
    pub shift_of_device: BTreeMap<DeviceId, usize>,
    /// Signal strength (dB) recorded when each device was assigned.
    pub strength_db: BTreeMap<DeviceId, f64>,
    pub assoc_low: Vec<usize>,
    pub assoc_high: Vec<usize>,
}

impl AssignmentTable {
    /// A table with explicit shifts and no recorded strengths.
    pub fn manual(
        skip: usize,
        shifts: usize,
        shift_of_device: BTreeMap<DeviceId, usize>,
    ) -> Result<Self> {
        let table = Self {
            skip,
            shifts,
            shift_of_device,
            strength_db: BTreeMap::new(),
            assoc_low: Vec::new(),
            assoc_high: Vec::new(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn slots(&self) -> usize {
        self.shifts / self.skip.max(1)
    }

    pub fn assoc_shifts(&self) -> BTreeSet<usize> {
        self.assoc_low.iter().chain(&self.assoc_high).copied().collect()
    }

    pub fn comm_shifts(&self) -> BTreeSet<usize> {
        self.shift_of_device.values().copied().collect()
    }

    /// Every shift a receiver should watch.
    pub fn all_shifts(&self) -> BTreeSet<usize> {
        let mut s = self.comm_shifts();
        s.extend(self.assoc_shifts());
        s
    }

    pub fn device_at(&self, shift: usize) -> Option<DeviceId> {
        self.shift_of_device
            .iter()
            .find(|(_, &s)| s == shift)
            .map(|(&d, _)| d)
    }

    /// Checks distinctness, SKIP alignment, range, reservation disjointness
    /// and (where strengths are recorded) monotone ordering.
    pub fn validate(&self) -> Result<()> {
        if self.skip == 0 {
            return Err(Error::InvalidConfig("skip must be >= 1".into()));
        }
        let mut seen = BTreeSet::new();
        for &s in self.shift_of_device.values().chain(&self.assoc_low).chain(&self.assoc_high) {
            if s >= self.shifts {
                return Err(Error::ShiftOutOfRange {
                    shift: s,
                    len: self.shifts,
                });
            }
            if s % self.skip != 0 {
                return Err(Error::InvalidConfig(format!(
                    "shift {s} not a multiple of skip {}",
                    self.skip
                )));
            }
            if !seen.insert(s) {
                return Err(Error::InvalidConfig(format!("shift {s} assigned twice")));
            }
        }
        let mut ranked: Vec<(f64, usize)> = self
            .strength_db
            .iter()
            .filter_map(|(d, &snr)| self.shift_of_device.get(d).map(|&s| (snr, s)))
            .collect();
        ranked.sort_by(|a, b| a.1.cmp(&b.1));
        if ranked.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::InvalidConfig(
                "shift order not monotone in signal strength".into(),
            ));
        }
        Ok(())
    }
}

/// Sorts devices by strength (weakest first, ties by id) and packs them onto
/// consecutive SKIP-aligned slots, with `ceil(n_assoc/2)` reservations below
/// and `floor(n_assoc/2)` above.
pub fn assign_cyclic_shift(
    strengths: &BTreeMap<DeviceId, f64>,
    skip: usize,
    sf: u32,
    n_assoc: usize,
) -> Result<AssignmentTable> {
    assign_with_shifts(strengths, skip, 1 << sf, n_assoc)
}

pub fn assign_with_shifts(
    strengths: &BTreeMap<DeviceId, f64>,
    skip: usize,
    shifts: usize,
    n_assoc: usize,
) -> Result<AssignmentTable> {
    if skip == 0 {
        return Err(Error::InvalidConfig("skip must be >= 1".into()));
    }
    let requested = (strengths.len() + n_assoc) * skip;
    if requested > shifts {
        return Err(Error::Capacity {
            requested,
            available: shifts,
        });
    }
    if strengths.values().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("non-finite signal strength".into()));
    }
    let mut order: Vec<(DeviceId, f64)> = strengths.iter().map(|(&d, &s)| (d, s)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let n_low = n_assoc.div_ceil(2);
    let assoc_low = (0..n_low).map(|i| i * skip).collect();
    let shift_of_device = order
        .iter()
        .enumerate()
        .map(|(i, (d, _))| (*d, (n_low + i) * skip))
        .collect();
    let first_high = n_low + order.len();
    let assoc_high = (first_high..first_high + n_assoc / 2).map(|i| i * skip).collect();

    let table = AssignmentTable {
        skip,
        shifts,
        shift_of_device,
        strength_db: strengths.clone(),
        assoc_low,
        assoc_high,
    };
    debug_assert!(table.validate().is_ok());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_network_at_skip_two() {
        let s: BTreeMap<DeviceId, f64> = (0..256).map(|i| (i, ((i * 37) % 101) as f64)).collect();
        let t = assign_cyclic_shift(&s, 2, 9, 0).unwrap();
        let shifts: Vec<usize> = t.comm_shifts().into_iter().collect();
        assert_eq!(shifts, (0..256).map(|i| 2 * i).collect::<Vec<_>>());
        t.validate().unwrap();
        assert!(matches!(
            assign_cyclic_shift(&s, 2, 9, 2),
            Err(Error::Capacity { requested: 516, available: 512 })
        ));
    }

    #[test]
    fn single_device_at_zero() {
        let s = BTreeMap::from([(7, 12.0)]);
        let t = assign_cyclic_shift(&s, 2, 9, 0).unwrap();
        assert_eq!(t.shift_of_device[&7], 0);
    }

    #[test]
    fn weak_device_far_from_strong() {
        let s = BTreeMap::from([(1, 30.0), (2, 10.0), (3, 29.0)]);
        let t = assign_cyclic_shift(&s, 2, 9, 0).unwrap();
        assert_eq!(t.shift_of_device[&2], 0);
        assert_eq!(t.shift_of_device[&3], 2);
        assert_eq!(t.shift_of_device[&1], 4);
    }

    #[test]
    fn association_regions_at_extremes() {
        let s = BTreeMap::from([(1, 5.0), (2, 20.0)]);
        let t = assign_cyclic_shift(&s, 2, 9, 2).unwrap();
        assert_eq!(t.assoc_low, vec![0]);
        assert_eq!(t.assoc_high, vec![6]);
        assert_eq!(t.shift_of_device[&1], 2);
        assert!(t.assoc_shifts().is_disjoint(&t.comm_shifts()));
    }

    #[test]
    fn manual_table_rejects_misaligned() {
        assert!(AssignmentTable::manual(2, 512, BTreeMap::from([(0, 3)])).is_err());
        assert!(AssignmentTable::manual(2, 512, BTreeMap::from([(0, 2), (1, 2)])).is_err());
        assert!(AssignmentTable::manual(2, 512, BTreeMap::from([(0, 2), (1, 258)])).is_ok());
    }

    proptest! {
        #[test]
        fn assignment_invariants(snrs in prop::collection::vec(-20.0f64..40.0, 1..120), skip in 1usize..4, n_assoc in 0usize..4) {
            let s: BTreeMap<DeviceId, f64> = snrs.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
            match assign_cyclic_shift(&s, skip, 9, n_assoc) {
                Ok(t) => {
                    prop_assert!(t.validate().is_ok());
                    prop_assert_eq!(t.shift_of_device.len(), s.len());
                    prop_assert_eq!(t.assoc_shifts().len(), n_assoc);
                    prop_assert!(t.assoc_shifts().is_disjoint(&t.comm_shifts()));
                }
                Err(Error::Capacity { .. }) => prop_assert!((s.len() + n_assoc) * skip > 512),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
