//! Query-driven association: request on a reserved shift, assignment
//! piggybacked on the next query, ACK on the assigned shift.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::assignment::{assign_with_shifts, AssignmentTable, DeviceId};
use super::query::{AssocPayload, QueryMessage, PERMUTATION_SLOTS};
use crate::error::{Error, Result};

/// Reserved shifts per table, one per region.
pub const N_ASSOC: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssocRegion {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub network_id: u8,
    pub group_id: u8,
    pub table: AssignmentTable,
    /// Assignment sent but not yet acknowledged: device → shift.
    pub pending: BTreeMap<DeviceId, usize>,
    /// Requests heard last round, to be answered in the next query.
    requests: Vec<(DeviceId, f64)>,
    pub round: u64,
}

impl AccessPoint {
    pub fn new(network_id: u8, skip: usize, shifts: usize) -> Result<Self> {
        Ok(Self {
            network_id,
            group_id: 0,
            table: assign_with_shifts(&BTreeMap::new(), skip, shifts, N_ASSOC)?,
            pending: BTreeMap::new(),
            requests: Vec::new(),
            round: 0,
        })
    }

    pub fn associated(&self) -> BTreeSet<DeviceId> {
        self.table
            .shift_of_device
            .keys()
            .filter(|d| !self.pending.contains_key(d))
            .copied()
            .collect()
    }

    /// Region boundary for joiners: the median recorded network strength.
    pub fn region_threshold_db(&self) -> Option<f64> {
        median(self.table.strength_db.values().copied())
    }

    fn region_shift(&self, region: AssocRegion) -> usize {
        let (low, high) = (&self.table.assoc_low, &self.table.assoc_high);
        match region {
            AssocRegion::Low => low.first().or(high.first()),
            AssocRegion::High => high.first().or(low.first()),
        }
        .copied()
        .expect("tables always carry reservations")
    }
}

pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MacState {
    Idle,
    /// Sent a request in the last round.
    Requested,
    /// Holds an assignment; ACKs on it until the AP stops repeating it.
    Assigned { shift: usize },
    Associated { shift: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMac {
    pub id: DeviceId,
    /// Downlink query strength as seen by the device.
    pub query_rssi_db: f64,
    /// Uplink strength as the AP would measure it.
    pub uplink_snr_db: f64,
    /// Region boundary the device compares its query RSSI against.
    pub region_threshold_db: f64,
    pub state: MacState,
    /// Slotted-Aloha backoff on request collisions.
    pub backoff: bool,
    backoff_rounds: u32,
    attempts: u32,
}

impl DeviceMac {
    pub fn new(id: DeviceId, query_rssi_db: f64, uplink_snr_db: f64) -> Self {
        Self {
            id,
            query_rssi_db,
            uplink_snr_db,
            region_threshold_db: 0.0,
            state: MacState::Idle,
            backoff: false,
            backoff_rounds: 0,
            attempts: 0,
        }
    }

    pub fn region(&self) -> AssocRegion {
        if self.query_rssi_db < self.region_threshold_db {
            AssocRegion::Low
        } else {
            AssocRegion::High
        }
    }

    pub fn shift(&self) -> Option<usize> {
        match self.state {
            MacState::Assigned { shift } | MacState::Associated { shift } => Some(shift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UplinkKind {
    Data,
    AssocRequest,
    AssocAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uplink {
    pub device: DeviceId,
    pub kind: UplinkKind,
    pub shift: usize,
}

/// Losses injected into one round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundEvents {
    pub query_lost: BTreeSet<DeviceId>,
    pub uplink_lost: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub query: QueryMessage,
    pub uplinks: Vec<Uplink>,
    pub committed: Vec<DeviceId>,
}

/// Old slot → new slot for every slot of the table, completed to a
/// permutation by giving unmoved slots the remaining targets in order.
fn slot_permutation(old: &AssignmentTable, new: &AssignmentTable) -> Vec<u16> {
    let slots = old.slots();
    let mut perm = vec![u16::MAX; slots];
    let mut taken = vec![false; slots];
    for (d, &s_old) in &old.shift_of_device {
        if let Some(&s_new) = new.shift_of_device.get(d) {
            perm[s_old / old.skip] = (s_new / new.skip) as u16;
            taken[s_new / new.skip] = true;
        }
    }
    let mut free = (0..slots).filter(|&s| !taken[s]);
    for p in perm.iter_mut().filter(|p| **p == u16::MAX) {
        *p = free.next().expect("as many free targets as free sources") as u16;
    }
    perm
}

/// Advances the network by one query round.
///
/// The AP answers at most one request per query (the message carries a
/// single association field); the rest are answered in later rounds.
pub fn association_step<R: Rng + ?Sized>(
    ap: &mut AccessPoint,
    devices: &mut [DeviceMac],
    events: &RoundEvents,
    rng: &mut R,
) -> Result<RoundOutcome> {
    ap.round += 1;
    let mut query = QueryMessage::minimal(ap.group_id);

    // Repeat an unacknowledged assignment, else answer the next request.
    if let Some(&shift) = ap.pending.values().next() {
        query.assoc = Some(AssocPayload {
            network_id: ap.network_id,
            slot: slot_field(shift, ap.table.skip)?,
        });
    } else if !ap.requests.is_empty() {
        let (d, snr) = ap.requests.remove(0);
        let mut strengths = ap.table.strength_db.clone();
        strengths.insert(d, snr);
        let next = assign_with_shifts(&strengths, ap.table.skip, ap.table.shifts, N_ASSOC)?;
        let moved = ap
            .table
            .shift_of_device
            .iter()
            .any(|(id, s)| next.shift_of_device.get(id) != Some(s));
        if moved && ap.table.slots() == PERMUTATION_SLOTS {
            query.reassignment = Some(slot_permutation(&ap.table, &next));
        }
        let shift = next.shift_of_device[&d];
        ap.table = next;
        ap.pending.insert(d, shift);
        query.assoc = Some(AssocPayload {
            network_id: ap.network_id,
            slot: slot_field(shift, ap.table.skip)?,
        });
    }
    let answered: Option<DeviceId> = ap.pending.keys().next().copied();
    let threshold = ap.region_threshold_db();

    let mut uplinks = Vec::new();
    for dev in devices.iter_mut() {
        if events.query_lost.contains(&dev.id) {
            continue;
        }
        if let Some(t) = threshold {
            dev.region_threshold_db = t;
        }
        match dev.state {
            MacState::Associated { shift } => {
                let skip = ap.table.skip;
                let shift = match &query.reassignment {
                    Some(perm) => perm[shift / skip] as usize * skip,
                    None => shift,
                };
                dev.state = MacState::Associated { shift };
                uplinks.push(Uplink { device: dev.id, kind: UplinkKind::Data, shift });
            }
            MacState::Requested | MacState::Assigned { .. } if answered == Some(dev.id) => {
                let shift = ap.pending[&dev.id];
                dev.state = MacState::Assigned { shift };
                uplinks.push(Uplink { device: dev.id, kind: UplinkKind::AssocAck, shift });
            }
            MacState::Requested if ap.requests.iter().any(|(d, _)| *d == dev.id) => {
                // heard, waiting its turn
            }
            MacState::Idle | MacState::Requested => {
                if dev.backoff_rounds > 0 {
                    dev.backoff_rounds -= 1;
                    continue;
                }
                dev.state = MacState::Requested;
                let shift = ap.region_shift(dev.region());
                uplinks.push(Uplink { device: dev.id, kind: UplinkKind::AssocRequest, shift });
            }
            MacState::Assigned { .. } => {}
        }
    }

    // AP side: requests collide when two land on the same reserved shift.
    let mut per_shift: BTreeMap<usize, Vec<DeviceId>> = BTreeMap::new();
    for u in uplinks.iter().filter(|u| u.kind == UplinkKind::AssocRequest) {
        if !events.uplink_lost.contains(&u.device) {
            per_shift.entry(u.shift).or_default().push(u.device);
        }
    }
    for u in uplinks.iter().filter(|u| u.kind == UplinkKind::AssocRequest) {
        let heard = per_shift.get(&u.shift).is_some_and(|v| v.len() == 1);
        let dev = devices
            .iter_mut()
            .find(|d| d.id == u.device)
            .expect("uplink from a listed device");
        if heard {
            dev.attempts = 0;
            ap.requests.push((dev.id, dev.uplink_snr_db));
        } else {
            dev.state = MacState::Idle;
            if dev.backoff {
                dev.attempts += 1;
                let window = 1u32 << dev.attempts.min(10);
                dev.backoff_rounds = rng.random_range(0..window);
            }
        }
    }

    let mut committed = Vec::new();
    for u in uplinks.iter().filter(|u| u.kind == UplinkKind::AssocAck) {
        if events.uplink_lost.contains(&u.device) {
            continue;
        }
        ap.pending.remove(&u.device);
        if let Some(dev) = devices.iter_mut().find(|d| d.id == u.device) {
            dev.state = MacState::Associated { shift: u.shift };
        }
        committed.push(u.device);
    }

    Ok(RoundOutcome {
        query,
        uplinks,
        committed,
    })
}

fn slot_field(shift: usize, skip: usize) -> Result<u8> {
    u8::try_from(shift / skip).map_err(|_| Error::Capacity {
        requested: shift / skip + 1,
        available: 256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_until_associated(
        ap: &mut AccessPoint,
        devs: &mut [DeviceMac],
        target: DeviceId,
        mut events: impl FnMut(u64) -> RoundEvents,
    ) -> (u64, Vec<RoundOutcome>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut log = Vec::new();
        for _ in 0..1000 {
            let ev = events(ap.round + 1);
            let out = association_step(ap, devs, &ev, &mut rng).unwrap();
            let done = out.committed.contains(&target);
            log.push(out);
            if done {
                return (ap.round, log);
            }
        }
        panic!("never associated");
    }

    #[test]
    fn lone_joiner_associates_in_two_rounds() {
        let mut ap = AccessPoint::new(7, 2, 512).unwrap();
        let mut devs = vec![DeviceMac::new(1, 5.0, 12.0)];
        let (rounds, log) = run_until_associated(&mut ap, &mut devs, 1, |_| RoundEvents::default());
        assert_eq!(rounds, 2);
        assert_eq!(log[0].uplinks[0].kind, UplinkKind::AssocRequest);
        assert_eq!(log[1].query.assoc.unwrap().network_id, 7);
        assert_eq!(log[1].uplinks[0].kind, UplinkKind::AssocAck);
        assert_eq!(devs[0].state, MacState::Associated { shift: 2 });
        assert!(ap.table.validate().is_ok());
    }

    #[test]
    fn region_follows_query_rssi() {
        let mut ap = AccessPoint::new(0, 2, 512).unwrap();
        let mut devs = vec![DeviceMac::new(1, -1.0, 0.0), DeviceMac::new(2, 20.0, 20.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..6 {
            association_step(&mut ap, &mut devs, &RoundEvents::default(), &mut rng).unwrap();
        }
        assert_eq!(ap.associated().len(), 2);
        assert_eq!(ap.region_threshold_db(), Some(10.0));
        let mut joiner = vec![DeviceMac::new(3, 25.0, 25.0), DeviceMac::new(4, -5.0, -5.0)];
        joiner.iter_mut().for_each(|d| d.region_threshold_db = 10.0);
        let out = association_step(&mut ap, &mut joiner, &RoundEvents::default(), &mut rng).unwrap();
        let shift_of = |id| out.uplinks.iter().find(|u| u.device == id).unwrap().shift;
        assert_eq!(shift_of(3), ap.table.assoc_high[0]);
        assert_eq!(shift_of(4), ap.table.assoc_low[0]);
    }

    #[test]
    fn lost_ack_repeats_assignment() {
        let mut ap = AccessPoint::new(1, 2, 512).unwrap();
        let mut devs = vec![DeviceMac::new(9, 5.0, 5.0)];
        let (rounds, log) = run_until_associated(&mut ap, &mut devs, 9, |r| RoundEvents {
            uplink_lost: if r == 2 { BTreeSet::from([9]) } else { BTreeSet::new() },
            ..Default::default()
        });
        assert_eq!(rounds, 3);
        assert_eq!(log[1].query.assoc, log[2].query.assoc);
        assert!(log[2].query.assoc.is_some());
    }

    #[test]
    fn new_weak_device_triggers_reassignment() {
        let mut ap = AccessPoint::new(1, 2, 512).unwrap();
        let mut devs = vec![DeviceMac::new(1, 20.0, 20.0)];
        run_until_associated(&mut ap, &mut devs, 1, |_| RoundEvents::default());
        let before = ap.table.shift_of_device[&1];
        devs.push(DeviceMac::new(2, 0.0, 0.0));
        let (_, log) = run_until_associated(&mut ap, &mut devs, 2, |_| RoundEvents::default());
        let reassign = log.iter().find_map(|o| o.query.reassignment.clone()).expect("permutation sent");
        let after = ap.table.shift_of_device[&1];
        assert_ne!(before, after);
        assert_eq!(reassign[before / 2] as usize, after / 2);
        assert!(ap.table.shift_of_device[&2] < after);
        assert_eq!(devs[0].shift(), Some(after));
    }

    #[test]
    fn colliding_requests_resolve_with_backoff() {
        let mut ap = AccessPoint::new(1, 2, 512).unwrap();
        let mut devs: Vec<DeviceMac> = (0..4).map(|i| DeviceMac::new(i, 5.0, 5.0)).collect();
        devs.iter_mut().for_each(|d| d.backoff = true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            association_step(&mut ap, &mut devs, &RoundEvents::default(), &mut rng).unwrap();
        }
        assert_eq!(ap.associated().len(), 4);
        ap.table.validate().unwrap();
    }

    #[test]
    fn expected_rounds_under_query_loss() {
        use rand::Rng;
        let p = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 4000;
        let mut total = 0u64;
        for _ in 0..trials {
            let mut ap = AccessPoint::new(1, 2, 512).unwrap();
            let mut devs = vec![DeviceMac::new(5, 5.0, 5.0)];
            loop {
                let lost = rng.random_bool(p);
                let ev = RoundEvents {
                    query_lost: if lost { BTreeSet::from([5]) } else { BTreeSet::new() },
                    ..Default::default()
                };
                let out = association_step(&mut ap, &mut devs, &ev, &mut rng).unwrap();
                if out.committed.contains(&5) {
                    break;
                }
            }
            total += ap.round;
        }
        let mean = total as f64 / trials as f64;
        let expected = 2.0 / (1.0 - p);
        assert!((mean - expected).abs() < 0.1 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn median_helper() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0]), Some(2.5));
        assert_eq!(median(std::iter::empty()), None);
    }
}
