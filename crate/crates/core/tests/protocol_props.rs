use std::collections::HashSet;

use eunomia::eunomia::EunomiaReplica;
use eunomia::partition::{BatchMessage, MetaEntry, PartitionState};
use eunomia::receiver::ReceiverState;
use eunomia::{HybridTimestamp, Key, UpdateId, UpdateRecord, Value, VectorTimestamp};
use proptest::prelude::*;

const DELTA: u64 = 5_000;

#[derive(Clone, Debug)]
enum PartOp {
    Update { advance: u64, remote: u64, local_bump: u64 },
    Heartbeat { advance: u64 },
}

fn part_op() -> impl Strategy<Value = PartOp> {
    prop_oneof![
        (0u64..3_000, 0u64..50_000, 0u64..20_000)
            .prop_map(|(advance, remote, local_bump)| PartOp::Update { advance, remote, local_bump }),
        (0u64..10_000).prop_map(|advance| PartOp::Heartbeat { advance }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Updates and heartbeats leave a partition with strictly increasing
    /// timestamps, and every update exceeds its client's dependencies.
    #[test]
    fn partition_stream_is_strictly_increasing(ops in proptest::collection::vec(part_op(), 1..150)) {
        let mut p = PartitionState::new(0, 0, 2, 1, DELTA);
        p.populate(Key(0), Value::new(vec![1]));
        let mut now = 1_000_000u64;
        let mut last = HybridTimestamp::ZERO;
        for op in ops {
            match op {
                PartOp::Update { advance, remote, local_bump } => {
                    now += advance;
                    let vclock = VectorTimestamp::from_entries([
                        HybridTimestamp(p.max_ts().0 + local_bump),
                        HybridTimestamp(remote),
                    ]);
                    let out = p.handle_update(Key(0), Value::new(vec![2]), &vclock, HybridTimestamp(now)).unwrap();
                    let ts = out.vts.get(0);
                    prop_assert!(ts > last);
                    prop_assert!(ts > vclock.get(0) && ts >= HybridTimestamp(now));
                    prop_assert_eq!(out.vts.get(1), vclock.get(1));
                    last = ts;
                }
                PartOp::Heartbeat { advance } => {
                    now += advance;
                    if let Some(hb) = p.maybe_heartbeat(HybridTimestamp(now)) {
                        prop_assert!(hb > last);
                        last = hb;
                    }
                }
            }
        }
        prop_assert_eq!(p.stream_violations(), 0);
    }
}

fn entry(partition: usize, ts: u64) -> MetaEntry {
    MetaEntry {
        uid: UpdateId {
            local_ts: HybridTimestamp(ts),
            origin_partition: partition,
            key: Key(ts % 7),
        },
        vts: VectorTimestamp::from_entries([HybridTimestamp(ts), HybridTimestamp::ZERO]),
    }
}

/// Per partition, strictly increasing timestamps ending in a heartbeat.
fn streams(parts: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    proptest::collection::vec(proptest::collection::vec(1u64..40, 0..25), parts).prop_map(|gaps| {
        gaps.into_iter()
            .map(|g| {
                g.into_iter()
                    .scan(0u64, |t, gap| {
                        *t += gap;
                        Some(*t)
                    })
                    .collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Whatever the interleaving, chunking and duplication of batches, the
    /// stabilizer emits every update once, in timestamp order, and never
    /// above the stable time it announces.
    #[test]
    fn stabilizer_emits_a_total_order_independent_of_interleaving(
        stream in streams(3),
        schedule in proptest::collection::vec((0usize..3, 1usize..5, any::<bool>(), any::<bool>()), 0..200),
    ) {
        let parts = stream.len();
        let mut e = EunomiaReplica::standalone(parts);
        let mut cursor = vec![0usize; parts];
        let mut emitted: Vec<MetaEntry> = Vec::new();
        let mut last_stable = HybridTimestamp::ZERO;
        let mut round = |e: &mut EunomiaReplica, emitted: &mut Vec<MetaEntry>| -> Result<(), TestCaseError> {
            let em = e.process_stable().unwrap();
            prop_assert!(em.stable >= last_stable);
            last_stable = em.stable;
            for op in &em.ops {
                prop_assert!(op.ts() <= em.stable);
            }
            emitted.extend(em.ops);
            Ok(())
        };
        for (p, chunk, dup, stabilize) in schedule {
            let from = cursor[p];
            let to = (from + chunk).min(stream[p].len());
            let batch = BatchMessage {
                partition: p,
                entries: stream[p][..to].iter().map(|&t| entry(p, t)).collect(),
                heartbeat: None,
            };
            cursor[p] = to;
            let ack = e.ingest_batch(&batch).unwrap();
            if dup {
                prop_assert_eq!(e.ingest_batch(&batch).unwrap(), ack);
            }
            if stabilize {
                round(&mut e, &mut emitted)?;
            }
        }
        for p in 0..parts {
            let batch = BatchMessage {
                partition: p,
                entries: stream[p].iter().map(|&t| entry(p, t)).collect(),
                heartbeat: Some(HybridTimestamp(10_000)),
            };
            e.ingest_batch(&batch).unwrap();
        }
        round(&mut e, &mut emitted)?;

        let mut expected: Vec<UpdateId> = stream
            .iter()
            .enumerate()
            .flat_map(|(p, ts)| ts.iter().map(move |&t| entry(p, t).uid))
            .collect();
        expected.sort();
        let got: Vec<UpdateId> = emitted.iter().map(|m| m.uid).collect();
        prop_assert_eq!(got, expected);
        prop_assert_eq!(e.safety_violations(), 0);
        prop_assert_eq!(e.pending_len(), 0);
    }
}

/// Two origins with FIFO timestamp streams; each update depends on a prefix
/// of the other origin's stream.
#[derive(Clone, Debug)]
struct History {
    records: [Vec<UpdateRecord>; 2],
}

fn history() -> impl Strategy<Value = History> {
    proptest::collection::vec((0usize..2, 0usize..2, 0u8..4), 1..60).prop_map(|steps| {
        let mut records: [Vec<UpdateRecord>; 2] = [Vec::new(), Vec::new()];
        let mut clock = [0u64; 2];
        for (i, (origin, partition, dep)) in steps.into_iter().enumerate() {
            let other = 1 - origin;
            // Depend on the newest update of the other origin, an older one,
            // or nothing.
            let dep_ts = match (dep, records[other].len()) {
                (_, 0) | (0, _) => 0,
                (1, n) => records[other][n / 2].uid.local_ts.0,
                (_, n) => records[other][n - 1].uid.local_ts.0,
            };
            clock[origin] = clock[origin].max(dep_ts) + 1 + i as u64;
            let ts = HybridTimestamp(clock[origin]);
            let mut vts = VectorTimestamp::zero(3);
            vts.set(origin, ts);
            vts.set(other, HybridTimestamp(dep_ts));
            let uid = UpdateId {
                local_ts: ts,
                origin_partition: partition,
                key: Key(i as u64),
            };
            records[origin].push(UpdateRecord {
                key: uid.key,
                value: Value::new(vec![0]),
                vts,
                origin_dc: origin,
                origin_partition: partition,
                uid,
            });
        }
        History { records }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Under any interleaving of metadata queues and payload arrivals, the
    /// receiver releases each update once, after its dependencies, in
    /// per-origin order.
    #[test]
    fn receiver_releases_in_causal_order(
        h in history(),
        order in proptest::collection::vec(0u8..4, 0..400),
    ) {
        let mut r = ReceiverState::new(2, 3);
        let mut meta_cursor = [0usize; 2];
        let mut payloads: Vec<UpdateRecord> = h.records.iter().flatten().cloned().collect();
        payloads.reverse();
        let mut released: Vec<UpdateRecord> = Vec::new();
        let mut step = |choice: u8, r: &mut ReceiverState, released: &mut Vec<UpdateRecord>, payloads: &mut Vec<UpdateRecord>| {
            match choice {
                0 | 1 => {
                    let o = choice as usize;
                    if let Some(rec) = h.records[o].get(meta_cursor[o]) {
                        let meta = MetaEntry { uid: rec.uid, vts: rec.vts.clone() };
                        r.enqueue_remote(meta.clone(), o).unwrap();
                        // Re-emission after failover is absorbed.
                        prop_assert!(!r.enqueue_remote(meta, o).unwrap());
                        meta_cursor[o] += 1;
                    }
                }
                2 => {
                    if let Some(p) = payloads.pop() {
                        r.buffer_payload(p);
                    }
                }
                _ => released.extend(r.check_pending()),
            }
            Ok(())
        };
        for c in order {
            step(c, &mut r, &mut released, &mut payloads)?;
        }
        for c in [0u8, 1, 2].into_iter().cycle().take(600) {
            step(c, &mut r, &mut released, &mut payloads)?;
        }
        released.extend(r.check_pending());

        let total: usize = h.records.iter().map(Vec::len).sum();
        prop_assert_eq!(released.len(), total);
        let mut seen: HashSet<(usize, HybridTimestamp)> = HashSet::new();
        let mut latest = [HybridTimestamp::ZERO; 2];
        for rec in &released {
            let o = rec.origin_dc;
            prop_assert!(rec.uid.local_ts > latest[o], "origin order broken");
            latest[o] = rec.uid.local_ts;
            let dep = rec.vts.get(1 - o);
            prop_assert!(latest[1 - o] >= dep, "released before a dependency");
            prop_assert!(seen.insert((o, rec.uid.local_ts)));
        }
    }
}
