//! Atomic snapshot layered on store-collect.
//!
//! Each node's register lives in one store-collect cell. A scan announces
//! itself by re-storing the cell with a bumped scan sequence number, then
//! repeats collects until either two consecutive collects agree on every
//! node's update count (direct scan) or some concurrent update is seen to
//! have observed this scan in progress, in which case that update's embedded
//! snapshot view is borrowed (borrowed scan).
//!
//! An update collects once to learn which scans are in progress, runs an
//! embedded scan, and then stores value, bumped update count, the embedded
//! view, and the observed scan numbers in one final store. The fresh scan
//! numbers reach the shared cell only in that final store: the scan's
//! opening store re-stores the previous cell contents (only ssqno changes),
//! so a cell whose scounts names a scanner always carries the matching
//! embedded view next to it. Publishing fresh scounts in the opening store
//! would pair them with the previous update's stale view, and a borrower
//! adopting that view could miss updates that completed before it started.

use crate::store_collect::SubDone;
use crate::value::{AsVal, SnapshotCell, Val};
use crate::view::{NodeId, View};
use std::collections::BTreeMap;

/// Persistent snapshot-layer state of one node: the mirror of the cell this
/// node last stored.
#[derive(Debug, Clone, Default)]
pub struct SnapshotState {
    pub stored_cell: SnapshotCell,
}

/// How a scan terminated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanMode {
    Direct,
    Borrowed { source: NodeId, source_ssqno: u64 },
}

/// A completed scan, with the metadata trace checkers consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOutcome {
    pub ssqno: u64,
    pub embedded: bool,
    pub mode: ScanMode,
    pub rounds_unsuccessful: u64,
    pub view: BTreeMap<NodeId, AsVal>,
    /// Update counts backing each returned entry; empty for borrowed scans
    /// (the borrowed view carries values only).
    pub usqnos: BTreeMap<NodeId, u64>,
}

/// Why the layer is issuing a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorePurpose {
    /// Scan announcement: previous cell with only ssqno bumped.
    Opening,
    /// Update's single visible write of (val, usqno, sview, scounts).
    Final,
}

/// Why the layer is issuing a collect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectPurpose {
    /// Update's initial collect of in-progress scan numbers.
    Scounts,
    /// One round of a scan's collect loop.
    ScanLoop,
}

/// Next store-collect operation the layer needs, or a completed result.
#[derive(Debug)]
pub enum SnapAction {
    Store {
        val: Val,
        purpose: StorePurpose,
        /// Present on the final store: the embedded scan completed when its
        /// last collect returned, which is this same step.
        completed_scan: Option<ScanOutcome>,
    },
    Collect {
        purpose: CollectPurpose,
    },
    ScanDone(ScanOutcome),
    UpdateDone,
}

#[derive(Debug, Clone)]
enum ScanStage {
    OpeningStore,
    FirstCollect,
    Looping {
        prev_usqnos: BTreeMap<NodeId, u64>,
        rounds_unsuccessful: u64,
    },
}

/// In-flight scan.
#[derive(Debug, Clone)]
pub struct ScanState {
    ssqno: u64,
    embedded: bool,
    stage: ScanStage,
}

/// In-flight update.
#[derive(Debug, Clone)]
pub struct UpdateState {
    arg: AsVal,
    stage: UpdateStage,
}

#[derive(Debug, Clone)]
enum UpdateStage {
    CollectScounts,
    EmbeddedScan {
        scounts: BTreeMap<NodeId, u64>,
        scan: ScanState,
    },
    FinalStore,
}

/// Restriction of a collected view to real snapshot entries: cells whose
/// value is set. Non-cell values (from mixed workloads) are ignored.
pub fn r_filter(view: &View) -> impl Iterator<Item = (NodeId, &SnapshotCell)> + '_ {
    cells(view).filter(|(_, c)| c.val.is_some())
}

/// All snapshot cells in a collected view, including valueless ones.
pub fn cells(view: &View) -> impl Iterator<Item = (NodeId, &SnapshotCell)> + '_ {
    view.iter().filter_map(|(p, e)| e.val.as_cell().map(|c| (p, c)))
}

fn r_usqnos(view: &View) -> BTreeMap<NodeId, u64> {
    r_filter(view).map(|(p, c)| (p, c.usqno)).collect()
}

fn r_vals(view: &View) -> BTreeMap<NodeId, AsVal> {
    r_filter(view)
        .map(|(p, c)| (p, c.val.clone().expect("r_filter keeps set values")))
        .collect()
}

/// Starts a scan: bump the scan sequence number and re-store the cell
/// otherwise unchanged. Returns the state and the opening-store value.
pub fn scan_begin(snap: &mut SnapshotState, embedded: bool) -> (ScanState, Val) {
    snap.stored_cell.ssqno += 1;
    let scan = ScanState {
        ssqno: snap.stored_cell.ssqno,
        embedded,
        stage: ScanStage::OpeningStore,
    };
    (scan, Val::Cell(snap.stored_cell.clone()))
}

/// Advances a scan on completion of its current store-collect operation.
pub fn scan_on_sub(scan: &mut ScanState, me: NodeId, done: SubDone) -> SnapAction {
    match (&scan.stage, done) {
        (ScanStage::OpeningStore, SubDone::Ack) => {
            scan.stage = ScanStage::FirstCollect;
            SnapAction::Collect { purpose: CollectPurpose::ScanLoop }
        }
        (ScanStage::FirstCollect, SubDone::View(v)) => {
            scan.stage = ScanStage::Looping {
                prev_usqnos: r_usqnos(&v),
                rounds_unsuccessful: 0,
            };
            SnapAction::Collect { purpose: CollectPurpose::ScanLoop }
        }
        (ScanStage::Looping { prev_usqnos, rounds_unsuccessful }, SubDone::View(v)) => {
            let cur = r_usqnos(&v);
            if cur == *prev_usqnos {
                return SnapAction::ScanDone(ScanOutcome {
                    ssqno: scan.ssqno,
                    embedded: scan.embedded,
                    mode: ScanMode::Direct,
                    rounds_unsuccessful: *rounds_unsuccessful,
                    view: r_vals(&v),
                    usqnos: cur,
                });
            }
            if let Some((q, cell)) = cells(&v)
                .find(|(_, c)| c.scounts.get(&me) == Some(&scan.ssqno))
            {
                return SnapAction::ScanDone(ScanOutcome {
                    ssqno: scan.ssqno,
                    embedded: scan.embedded,
                    mode: ScanMode::Borrowed {
                        source: q,
                        source_ssqno: cell.ssqno,
                    },
                    rounds_unsuccessful: *rounds_unsuccessful,
                    view: cell.sview.clone(),
                    usqnos: BTreeMap::new(),
                });
            }
            scan.stage = ScanStage::Looping {
                prev_usqnos: cur,
                rounds_unsuccessful: rounds_unsuccessful + 1,
            };
            SnapAction::Collect { purpose: CollectPurpose::ScanLoop }
        }
        (stage, done) => unreachable!(
            "scan stage {stage:?} cannot receive completion {done:?}"
        ),
    }
}

/// Starts an update: first collect the in-progress scan numbers.
pub fn update_begin(arg: AsVal) -> (UpdateState, SnapAction) {
    (
        UpdateState {
            arg,
            stage: UpdateStage::CollectScounts,
        },
        SnapAction::Collect { purpose: CollectPurpose::Scounts },
    )
}

/// Advances an update on completion of its current store-collect operation.
pub fn update_on_sub(
    upd: &mut UpdateState,
    snap: &mut SnapshotState,
    me: NodeId,
    done: SubDone,
) -> SnapAction {
    match (&mut upd.stage, done) {
        (UpdateStage::CollectScounts, SubDone::View(v)) => {
            // Scan numbers of every cell, valueless ones included: a scanner
            // that never updates still announces its ssqno in its cell.
            let scounts: BTreeMap<NodeId, u64> =
                cells(&v).map(|(p, c)| (p, c.ssqno)).collect();
            let (scan, opening) = scan_begin(snap, true);
            upd.stage = UpdateStage::EmbeddedScan { scounts, scan };
            SnapAction::Store {
                val: opening,
                purpose: StorePurpose::Opening,
                completed_scan: None,
            }
        }
        (UpdateStage::EmbeddedScan { scounts, scan }, done) => {
            match scan_on_sub(scan, me, done) {
                SnapAction::ScanDone(outcome) => {
                    snap.stored_cell = SnapshotCell {
                        val: Some(upd.arg.clone()),
                        usqno: snap.stored_cell.usqno + 1,
                        ssqno: snap.stored_cell.ssqno,
                        sview: outcome.view.clone(),
                        scounts: std::mem::take(scounts),
                    };
                    let store = Val::Cell(snap.stored_cell.clone());
                    upd.stage = UpdateStage::FinalStore;
                    SnapAction::Store {
                        val: store,
                        purpose: StorePurpose::Final,
                        completed_scan: Some(outcome),
                    }
                }
                action => action,
            }
        }
        (UpdateStage::FinalStore, SubDone::Ack) => SnapAction::UpdateDone,
        (stage, done) => unreachable!(
            "update stage {stage:?} cannot receive completion {done:?}"
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn view_of_cells(cells: &[(u32, SnapshotCell)]) -> View {
        let mut v = View::new();
        for (i, (p, c)) in cells.iter().enumerate() {
            v.insert_triple(n(*p), Arc::new(Val::Cell(c.clone())), (i + 1) as u64);
        }
        v
    }

    fn cell_with_val(val: u64, usqno: u64) -> SnapshotCell {
        SnapshotCell {
            val: Some(AsVal::Int(val)),
            usqno,
            ..SnapshotCell::bottom()
        }
    }

    #[test]
    fn r_filter_drops_bottom_cells() {
        let v = view_of_cells(&[(1, cell_with_val(5, 1)), (2, SnapshotCell::bottom())]);
        let kept: Vec<_> = r_filter(&v).map(|(p, _)| p).collect();
        assert_eq!(kept, vec![n(1)]);
        // All-bottom view filters to nothing.
        let v = view_of_cells(&[(2, SnapshotCell::bottom())]);
        assert_eq!(r_filter(&v).count(), 0);
    }

    #[test]
    fn opening_store_changes_only_ssqno() {
        let mut snap = SnapshotState::default();
        snap.stored_cell = SnapshotCell {
            val: Some(AsVal::Int(9)),
            usqno: 3,
            ssqno: 7,
            sview: BTreeMap::from([(n(2), AsVal::Int(1))]),
            scounts: BTreeMap::from([(n(4), 2)]),
        };
        let before = snap.stored_cell.clone();
        let (scan, opening) = scan_begin(&mut snap, false);
        let Val::Cell(cell) = opening else { panic!() };
        assert_eq!(cell.ssqno, before.ssqno + 1);
        assert_eq!(cell.val, before.val);
        assert_eq!(cell.usqno, before.usqno);
        assert_eq!(cell.sview, before.sview);
        assert_eq!(cell.scounts, before.scounts);
        assert_eq!(scan.ssqno, 8);
    }

    #[test]
    fn direct_scan_on_stable_double_collect() {
        let mut snap = SnapshotState::default();
        let (mut scan, _) = scan_begin(&mut snap, false);
        let me = n(0);

        assert!(matches!(
            scan_on_sub(&mut scan, me, SubDone::Ack),
            SnapAction::Collect { purpose: CollectPurpose::ScanLoop }
        ));
        let stable = view_of_cells(&[(1, cell_with_val(5, 1))]);
        assert!(matches!(
            scan_on_sub(&mut scan, me, SubDone::View(stable.clone())),
            SnapAction::Collect { .. }
        ));
        match scan_on_sub(&mut scan, me, SubDone::View(stable)) {
            SnapAction::ScanDone(out) => {
                assert_eq!(out.mode, ScanMode::Direct);
                assert_eq!(out.rounds_unsuccessful, 0);
                assert_eq!(out.view, BTreeMap::from([(n(1), AsVal::Int(5))]));
                assert_eq!(out.usqnos, BTreeMap::from([(n(1), 1)]));
            }
            other => panic!("expected direct completion, got {other:?}"),
        }
    }

    #[test]
    fn changing_usqnos_count_unsuccessful_rounds() {
        let mut snap = SnapshotState::default();
        let (mut scan, _) = scan_begin(&mut snap, false);
        let me = n(0);
        scan_on_sub(&mut scan, me, SubDone::Ack);
        scan_on_sub(&mut scan, me, SubDone::View(view_of_cells(&[(1, cell_with_val(5, 1))])));
        // Two unsuccessful rounds, then stability.
        let v2 = view_of_cells(&[(1, cell_with_val(6, 2))]);
        assert!(matches!(
            scan_on_sub(&mut scan, me, SubDone::View(v2)),
            SnapAction::Collect { .. }
        ));
        let v3 = view_of_cells(&[(1, cell_with_val(7, 3))]);
        assert!(matches!(
            scan_on_sub(&mut scan, me, SubDone::View(v3.clone())),
            SnapAction::Collect { .. }
        ));
        match scan_on_sub(&mut scan, me, SubDone::View(v3)) {
            SnapAction::ScanDone(out) => {
                assert_eq!(out.rounds_unsuccessful, 2);
                assert_eq!(out.mode, ScanMode::Direct);
            }
            other => panic!("expected completion, got {other:?}"),
        }
    }

    #[test]
    fn borrow_requires_unstable_usqnos_and_matching_scount() {
        let me = n(0);
        let mut snap = SnapshotState::default();
        let (mut scan, _) = scan_begin(&mut snap, false);
        assert_eq!(scan.ssqno, 1);
        scan_on_sub(&mut scan, me, SubDone::Ack);
        scan_on_sub(&mut scan, me, SubDone::View(view_of_cells(&[(1, cell_with_val(5, 1))])));

        // q's update stored a cell naming this scan in its scounts, and some
        // third node's update count moved so the direct check fails.
        let borrowable = SnapshotCell {
            val: Some(AsVal::Int(42)),
            usqno: 9,
            ssqno: 4,
            sview: BTreeMap::from([(n(2), AsVal::Int(42))]),
            scounts: BTreeMap::from([(me, 1)]),
        };
        let v = view_of_cells(&[(1, cell_with_val(6, 2)), (2, borrowable)]);
        match scan_on_sub(&mut scan, me, SubDone::View(v)) {
            SnapAction::ScanDone(out) => {
                assert_eq!(
                    out.mode,
                    ScanMode::Borrowed { source: n(2), source_ssqno: 4 }
                );
                assert_eq!(out.view, BTreeMap::from([(n(2), AsVal::Int(42))]));
            }
            other => panic!("expected borrowed completion, got {other:?}"),
        }
    }

    #[test]
    fn stale_scount_does_not_trigger_borrow() {
        let me = n(0);
        let mut snap = SnapshotState::default();
        snap.stored_cell.ssqno = 5; // this node has scanned before
        let (mut scan, _) = scan_begin(&mut snap, false);
        assert_eq!(scan.ssqno, 6);
        scan_on_sub(&mut scan, me, SubDone::Ack);
        scan_on_sub(&mut scan, me, SubDone::View(view_of_cells(&[(1, cell_with_val(5, 1))])));

        // A cell naming an OLD ssqno of ours must not be borrowed from.
        let stale = SnapshotCell {
            val: Some(AsVal::Int(1)),
            usqno: 2,
            ssqno: 3,
            sview: BTreeMap::new(),
            scounts: BTreeMap::from([(me, 5)]),
        };
        let v = view_of_cells(&[(1, cell_with_val(6, 2)), (2, stale)]);
        assert!(matches!(
            scan_on_sub(&mut scan, me, SubDone::View(v)),
            SnapAction::Collect { .. }
        ));
    }

    #[test]
    fn update_collects_scounts_from_valueless_cells_too() {
        let me = n(0);
        let mut snap = SnapshotState::default();
        let (mut upd, first) = update_begin(AsVal::Int(5));
        assert!(matches!(
            first,
            SnapAction::Collect { purpose: CollectPurpose::Scounts }
        ));

        // The scounts collect sees a valueless cell of a pure scanner.
        let mut scanner_cell = SnapshotCell::bottom();
        scanner_cell.ssqno = 3;
        let v = view_of_cells(&[(2, scanner_cell), (3, cell_with_val(8, 2))]);
        let action = update_on_sub(&mut upd, &mut snap, me, SubDone::View(v));
        let Val::Cell(opening) = (match action {
            SnapAction::Store { val, purpose: StorePurpose::Opening, completed_scan: None } => val,
            other => panic!("expected opening store, got {other:?}"),
        }) else {
            panic!()
        };
        // Opening store of the embedded scan: fresh scounts NOT yet visible.
        assert_eq!(opening.ssqno, 1);
        assert!(opening.scounts.is_empty());
        assert_eq!(opening.val, None);

        // Drive the embedded scan to a direct completion.
        update_on_sub(&mut upd, &mut snap, me, SubDone::Ack);
        let stable = view_of_cells(&[(3, cell_with_val(8, 2))]);
        update_on_sub(&mut upd, &mut snap, me, SubDone::View(stable.clone()));
        let action = update_on_sub(&mut upd, &mut snap, me, SubDone::View(stable));
        let (Val::Cell(fin), embedded_scan) = (match action {
            SnapAction::Store { val, purpose: StorePurpose::Final, completed_scan: Some(sc) } => (val, sc),
            other => panic!("expected final store, got {other:?}"),
        }) else {
            panic!()
        };
        assert!(embedded_scan.embedded);
        assert_eq!(embedded_scan.mode, ScanMode::Direct);
        // Final store carries value, bumped usqno, embedded view, and the
        // scounts observed at the start, all together.
        assert_eq!(fin.val, Some(AsVal::Int(5)));
        assert_eq!(fin.usqno, 1);
        assert_eq!(fin.ssqno, 1);
        assert_eq!(fin.sview, BTreeMap::from([(n(3), AsVal::Int(8))]));
        assert_eq!(fin.scounts, BTreeMap::from([(n(2), 3), (n(3), 0)]));

        assert!(matches!(
            update_on_sub(&mut upd, &mut snap, me, SubDone::Ack),
            SnapAction::UpdateDone
        ));
    }
}
