//! One simulated deployment: every node of the chosen protocol wired to the
//! simulator, driven by closed-loop clients.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::gstab::{visibility_order, GStabPartition, StabMode, Stabilizer};
use crate::baselines::sequencer::{SeqMode, SeqPartition, SeqReceiver, SequencerReplica, Token};
use crate::client::ClientState;
use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::Result;
use crate::eunomia::EunomiaReplica;
use crate::harness::config::{ExperimentConfig, FaultSpec, Protocol};
use crate::harness::metrics::{EmittedOp, MetricsReport, OpKindTag, OpSample, VisSample};
use crate::harness::oracle::{CausalChecker, OracleEvent, SessionId};
use crate::harness::trace::TraceWriter;
use crate::harness::workload::{ClientWorkload, OpKind};
use crate::partition::{BatchMessage, MetaEntry, PartitionState, ReadResult};
use crate::receiver::ReceiverState;
use crate::simnet::{ClockSpec, NodeId, Payload, Sim, SimEvent, Topology};
use crate::types::{DcIndex, Key, Micros, PartitionIndex, ReplicaId, UpdateRecord, UpdateRef, Value, MILLIS};

const CLOCK_STREAM: u64 = 0xC10C_C10C_C10C_C10C;
const PHASE_STREAM: u64 = 0x9A5E_9A5E_9A5E_9A5E;

fn node_code(node: NodeId) -> u64 {
    let (kind, dc, idx) = match node {
        NodeId::Client { dc, idx } => (0, dc, idx),
        NodeId::Partition { dc, idx } => (1, dc, idx),
        NodeId::Eunomia { dc, replica } => (2, dc, replica),
        NodeId::Receiver { dc } => (3, dc, 0),
        NodeId::Sequencer { dc, idx } => (4, dc, idx),
        NodeId::Stabilizer { dc } => (5, dc, 0),
        NodeId::Control => (6, 0, 0),
    };
    (kind << 56) | ((dc as u64) << 28) | idx as u64
}

#[derive(Clone, Debug)]
pub enum Msg {
    Read { key: Key },
    ReadReply { vts: VectorTimestamp },
    Update { key: Key, vclock: VectorTimestamp },
    UpdateReply { vts: VectorTimestamp, hops: u32 },
    Batch(BatchMessage),
    Ack(HybridTimestamp),
    Stable(HybridTimestamp),
    NewLeader(ReplicaId),
    Emit(Arc<Vec<MetaEntry>>),
    Payload { record: UpdateRecord, installed_at: Micros },
    SeqRequest { tokens: Vec<Token>, hops: u32 },
    SeqForward { grants: Vec<(Token, u64)>, origin: PartitionIndex, hops: u32 },
    SeqGrant { grants: Vec<(Token, u64)>, hops: u32 },
    SiblingHeartbeat(HybridTimestamp),
    VvReport(Vec<HybridTimestamp>),
}

impl Msg {
    fn is_metadata(&self) -> bool {
        !matches!(
            self,
            Msg::Read { .. }
                | Msg::ReadReply { .. }
                | Msg::Update { .. }
                | Msg::UpdateReply { .. }
                | Msg::Payload { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    ClientNext,
    BatchFlush(u64),
    Heartbeat(u64),
    Stabilize,
    ReceiverCheck,
    SeqFlush(u64),
    SiblingHeartbeat,
    VvReport(u64),
    GlobalTick,
    Fault(usize),
    StraggleEnd(usize),
    Detect(DcIndex),
}

enum Part {
    Eunomia(PartitionState),
    Seq(SeqPartition),
    GStab(GStabPartition),
}

impl Part {
    fn read(&self, key: Key) -> Result<ReadResult> {
        match self {
            Part::Eunomia(p) => p.handle_read(key),
            Part::Seq(p) => p.handle_read(key),
            Part::GStab(p) => p.handle_read(key),
        }
    }

    fn apply_remote(&mut self, r: &UpdateRecord) {
        match self {
            Part::Eunomia(p) => p.apply_remote(r),
            Part::Seq(p) => p.apply_remote(r),
            Part::GStab(p) => p.apply_remote(r),
        };
    }

    fn populate(&mut self, key: Key, value: Value) {
        match self {
            Part::Eunomia(p) => p.populate(key, value),
            Part::Seq(p) => p.populate(key, value),
            Part::GStab(p) => p.populate(key, value),
        }
    }
}

struct Outstanding {
    kind: OpKind,
    key: Key,
    partition: PartitionIndex,
    issued_at: Micros,
}

struct Client {
    dc: DcIndex,
    state: ClientState,
    workload: ClientWorkload,
    outstanding: Option<Outstanding>,
}

#[derive(Clone, Copy, Default)]
struct Comms {
    straggle: Option<Micros>,
    generation: u64,
}

struct SeqWaiter {
    client: NodeId,
    installed_at: Micros,
}

pub struct World {
    cfg: ExperimentConfig,
    sim: Sim<Msg, Timer>,
    m: usize,
    n: usize,
    clients: Vec<Client>,
    parts: Vec<Part>,
    comms: Vec<Comms>,
    replicas: Vec<Vec<EunomiaReplica>>,
    live: Vec<Vec<bool>>,
    receivers: Vec<ReceiverState>,
    seq_receivers: Vec<SeqReceiver>,
    sequencers: Vec<Vec<SequencerReplica>>,
    seq_waiting: HashMap<(DcIndex, PartitionIndex, u64), SeqWaiter>,
    stabilizers: Vec<Stabilizer>,
    arrivals: HashMap<(UpdateRef, DcIndex), (Micros, Micros)>,
    value: Value,
    checker: CausalChecker,
    trace: Option<TraceWriter>,
    report: MetricsReport,
}

impl World {
    pub fn new(cfg: &ExperimentConfig, with_trace: bool) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let m = cfg.deployment.num_dcs;
        let n = cfg.deployment.partitions_per_dc;
        let topology = Topology {
            inter_dc: cfg
                .network
                .inter_dc_ms
                .iter()
                .map(|row| row.iter().map(|&ms| ms * MILLIS).collect())
                .collect(),
            intra_dc: cfg.network.intra_dc_us,
        };
        let mut sim = Sim::new(topology, cfg.seed);
        let mut clock_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CLOCK_STREAM);
        let value = Value::new(vec![0xAB; cfg.workload.value_size]);
        let replicas_per_dc = cfg.eunomia.replicas;

        let mut parts = Vec::with_capacity(m * n);
        for dc in 0..m {
            for p in 0..n {
                let node = NodeId::Partition { dc, idx: p };
                let off = cfg.clocks.max_offset_us as i64;
                let ppm = cfg.clocks.max_drift_ppm;
                let spec = ClockSpec {
                    offset: if off > 0 { clock_rng.random_range(-off..=off) } else { 0 },
                    drift: 1.0 + if ppm > 0.0 { clock_rng.random_range(-ppm..=ppm) * 1e-6 } else { 0.0 },
                };
                sim.set_clock(node, spec);
                let mut part = match cfg.protocol {
                    Protocol::Eunomia => Part::Eunomia(PartitionState::new(
                        dc,
                        p,
                        m,
                        replicas_per_dc,
                        cfg.deployment.heartbeat_interval,
                    )),
                    Protocol::SSeq | Protocol::SeqChain => Part::Seq(SeqPartition::new(dc, p, m, SeqMode::Sync)),
                    Protocol::ASeq => Part::Seq(SeqPartition::new(dc, p, m, SeqMode::Async)),
                    Protocol::GstabScalar => Part::GStab(GStabPartition::new(dc, p, m, StabMode::Scalar)),
                    Protocol::GstabVector | Protocol::Eventual => {
                        Part::GStab(GStabPartition::new(dc, p, m, StabMode::Vector))
                    }
                };
                for k in (p as u64..cfg.workload.key_count).step_by(n) {
                    part.populate(Key(k), value.clone());
                }
                parts.push(part);
            }
        }

        let replicas = (0..m)
            .map(|_| {
                if cfg.protocol != Protocol::Eunomia {
                    Vec::new()
                } else if replicas_per_dc == 1 {
                    vec![EunomiaReplica::standalone(n)]
                } else {
                    let ids: Vec<ReplicaId> = (0..replicas_per_dc).collect();
                    ids.iter()
                        .map(|&f| EunomiaReplica::replicated(f, ids.clone(), n))
                        .collect()
                }
            })
            .collect();
        let chain_len = match cfg.protocol {
            Protocol::SeqChain => cfg.sequencer.chain_length,
            Protocol::SSeq | Protocol::ASeq => 1,
            _ => 0,
        };
        let sequencers = (0..m)
            .map(|_| (0..chain_len).map(|i| SequencerReplica::new(i == 0)).collect())
            .collect();
        let stab_mode = match cfg.protocol {
            Protocol::GstabScalar => Some(StabMode::Scalar),
            Protocol::GstabVector => Some(StabMode::Vector),
            _ => None,
        };
        let stabilizers = match stab_mode {
            Some(mode) => (0..m).map(|dc| Stabilizer::new(dc, n, mode)).collect(),
            None => Vec::new(),
        };

        let cpd = cfg.workload.clients_per_dc;
        let clients = (0..m * cpd)
            .map(|session| Client {
                dc: session / cpd,
                state: ClientState::new(session / cpd, m).without_log(),
                workload: ClientWorkload::new(&cfg.workload, cfg.seed, session),
                outstanding: None,
            })
            .collect();

        let report = MetricsReport {
            protocol: cfg.protocol.name().to_string(),
            seed: cfg.seed,
            window: cfg.window(),
            emissions: vec![Vec::new(); m],
            ..MetricsReport::default()
        };

        let mut world = World {
            sim,
            m,
            n,
            clients,
            parts,
            comms: vec![Comms::default(); m * n],
            replicas,
            live: vec![vec![true; replicas_per_dc]; m],
            receivers: (0..m).map(|dc| ReceiverState::new(dc, m)).collect(),
            seq_receivers: (0..m).map(|dc| SeqReceiver::new(dc, m)).collect(),
            sequencers,
            seq_waiting: HashMap::new(),
            stabilizers,
            arrivals: HashMap::new(),
            value,
            checker: CausalChecker::new(),
            trace: with_trace.then(TraceWriter::new),
            report,
            cfg,
        };
        world.install_timers();
        Ok(world)
    }

    fn pidx(&self, dc: DcIndex, p: PartitionIndex) -> usize {
        dc * self.n + p
    }

    fn install_timers(&mut self) {
        let d = self.cfg.deployment.clone();
        let g = self.cfg.gstab.clone();
        let seed = self.cfg.seed;
        // One stream per timer, so adding a node never shifts another's phase.
        let phase = |node: NodeId, slot: u64, period: Micros| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PHASE_STREAM);
            rng.set_stream(node_code(node) << 2 | slot);
            rng.random_range(1..=period.max(1))
        };
        for dc in 0..self.m {
            for p in 0..self.n {
                let node = NodeId::Partition { dc, idx: p };
                match self.cfg.protocol {
                    Protocol::Eunomia => {
                        self.sim.set_timer(node, phase(node, 0, d.batch_interval), Timer::BatchFlush(0));
                        self.sim.set_timer(node, phase(node, 1, d.heartbeat_interval), Timer::Heartbeat(0));
                    }
                    Protocol::GstabScalar | Protocol::GstabVector => {
                        self.sim.set_timer(node, phase(node, 0, g.heartbeat_interval_us), Timer::SiblingHeartbeat);
                        self.sim.set_timer(node, phase(node, 1, g.stabilization_interval_us), Timer::VvReport(0));
                    }
                    _ => {}
                }
            }
            match self.cfg.protocol {
                Protocol::Eunomia => {
                    for f in 0..self.replicas[dc].len() {
                        let node = NodeId::Eunomia { dc, replica: f };
                        self.sim.set_timer(node, phase(node, 0, d.stabilization_interval), Timer::Stabilize);
                    }
                    self.sim
                        .set_timer(NodeId::Receiver { dc }, phase(NodeId::Receiver { dc }, 0, d.receiver_interval), Timer::ReceiverCheck);
                }
                Protocol::GstabScalar | Protocol::GstabVector => {
                    self.sim.set_timer(
                        NodeId::Stabilizer { dc },
                        phase(NodeId::Stabilizer { dc }, 0, g.stabilization_interval_us),
                        Timer::GlobalTick,
                    );
                }
                _ => {}
            }
        }
        let cpd = self.cfg.workload.clients_per_dc;
        for session in 0..self.clients.len() {
            let node = NodeId::Client {
                dc: session / cpd,
                idx: session % cpd,
            };
            let first = self.clients[session].workload.think_time() + 1;
            self.sim.set_timer(node, first, Timer::ClientNext);
        }
        let faults = self.cfg.faults.clone();
        for (i, f) in faults.iter().enumerate() {
            match *f {
                FaultSpec::CrashReplica { at_ms, .. } => self.at(at_ms * MILLIS, Timer::Fault(i)),
                FaultSpec::StragglePartition { from_ms, to_ms, .. } => {
                    self.at(from_ms * MILLIS, Timer::Fault(i));
                    self.at(to_ms * MILLIS, Timer::StraggleEnd(i));
                }
                FaultSpec::SlowLink { from_ms, .. } => self.at(from_ms * MILLIS, Timer::Fault(i)),
                FaultSpec::LoseAcks { dc, replica, rate } => {
                    for p in 0..self.n {
                        self.sim.set_link_faults(
                            NodeId::Eunomia { dc, replica },
                            NodeId::Partition { dc, idx: p },
                            rate,
                            0.0,
                        );
                    }
                }
            }
        }
        if self.cfg.protocol == Protocol::Eunomia {
            let (loss, dup) = (self.cfg.network.batch_loss_rate, self.cfg.network.batch_dup_rate);
            if loss > 0.0 || dup > 0.0 {
                for dc in 0..self.m {
                    for p in 0..self.n {
                        for f in 0..self.replicas[dc].len() {
                            self.sim.set_link_faults(
                                NodeId::Partition { dc, idx: p },
                                NodeId::Eunomia { dc, replica: f },
                                loss,
                                dup,
                            );
                        }
                    }
                }
            }
        }
    }

    fn at(&mut self, t: Micros, timer: Timer) {
        self.sim
            .schedule(t, NodeId::Control, Payload::Timer(timer))
            .expect("faults are scheduled before the run starts");
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Msg) {
        if msg.is_metadata() {
            self.report.counters.metadata_messages += 1;
        }
        self.sim.send(from, to, msg);
    }

    fn oracle(&mut self, node: NodeId, event: OracleEvent) -> Result<()> {
        self.checker.observe(&event)?;
        if let Some(t) = self.trace.as_mut() {
            t.oracle(self.sim.now(), &node.to_string(), &event);
        }
        Ok(())
    }

    fn note(&mut self, node: NodeId, kind: &str, payload: impl FnOnce() -> String) {
        if let Some(t) = self.trace.as_mut() {
            t.note(self.sim.now(), &node.to_string(), kind, &payload());
        }
    }

    fn session(&self, client: NodeId) -> SessionId {
        match client {
            NodeId::Client { dc, idx } => dc * self.cfg.workload.clients_per_dc + idx,
            other => unreachable!("{other} is not a client"),
        }
    }

    pub fn run(mut self) -> Result<(MetricsReport, Option<String>)> {
        let end = self.cfg.end_time();
        while let Some(ev) = self.sim.next_event(end) {
            self.step(ev)?;
        }
        self.finish()
    }

    fn step(&mut self, ev: SimEvent<Msg, Timer>) -> Result<()> {
        match ev.payload {
            Payload::Timer(t) => self.on_timer(ev.target, t),
            Payload::Message { from, msg } => self.on_message(from, ev.target, msg),
        }
    }

    fn on_timer(&mut self, node: NodeId, timer: Timer) -> Result<()> {
        let d = self.cfg.deployment.clone();
        match (node, timer) {
            (NodeId::Client { .. }, Timer::ClientNext) => self.client_next(node),
            (NodeId::Partition { dc, idx }, Timer::BatchFlush(g)) => {
                let i = self.pidx(dc, idx);
                if self.comms[i].generation != g {
                    return Ok(());
                }
                if let Part::Eunomia(p) = &self.parts[i] {
                    for (f, b) in p.flush_batch() {
                        self.send(node, NodeId::Eunomia { dc, replica: f }, Msg::Batch(b));
                    }
                }
                let period = self.comms[i].straggle.unwrap_or(d.batch_interval);
                self.sim.set_timer(node, period, Timer::BatchFlush(g));
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Timer::Heartbeat(g)) => {
                let i = self.pidx(dc, idx);
                if self.comms[i].generation != g {
                    return Ok(());
                }
                let now = self.sim.clock(node);
                if let Part::Eunomia(p) = &mut self.parts[i] {
                    for (f, b) in p.heartbeat_messages(now) {
                        self.send(node, NodeId::Eunomia { dc, replica: f }, Msg::Batch(b));
                    }
                }
                let period = self.comms[i].straggle.unwrap_or(d.heartbeat_interval);
                self.sim.set_timer(node, period, Timer::Heartbeat(g));
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Timer::SeqFlush(g)) => {
                let i = self.pidx(dc, idx);
                if self.comms[i].generation != g {
                    return Ok(());
                }
                self.flush_seq_requests(dc, idx);
                if let Some(period) = self.comms[i].straggle {
                    self.sim.set_timer(node, period, Timer::SeqFlush(g));
                }
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Timer::SiblingHeartbeat) => {
                let i = self.pidx(dc, idx);
                let now = self.sim.clock(node);
                if let Part::GStab(p) = &mut self.parts[i] {
                    let ts = p.heartbeat(now);
                    for k in (0..self.m).filter(|&k| k != dc) {
                        self.send(node, NodeId::Partition { dc: k, idx }, Msg::SiblingHeartbeat(ts));
                    }
                }
                self.sim
                    .set_timer(node, self.cfg.gstab.heartbeat_interval_us, Timer::SiblingHeartbeat);
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Timer::VvReport(g)) => {
                let i = self.pidx(dc, idx);
                if self.comms[i].generation != g {
                    return Ok(());
                }
                if let Part::GStab(p) = &self.parts[i] {
                    let vv = p.version_vector().to_vec();
                    self.send(node, NodeId::Stabilizer { dc }, Msg::VvReport(vv));
                }
                let period = self.comms[i]
                    .straggle
                    .unwrap_or(self.cfg.gstab.stabilization_interval_us);
                self.sim.set_timer(node, period, Timer::VvReport(g));
                Ok(())
            }
            (NodeId::Eunomia { dc, replica }, Timer::Stabilize) => {
                self.stabilize(dc, replica);
                self.sim.set_timer(node, d.stabilization_interval, Timer::Stabilize);
                Ok(())
            }
            (NodeId::Receiver { dc }, Timer::ReceiverCheck) => {
                let released = self.receivers[dc].check_pending();
                for r in released {
                    self.make_visible(dc, r)?;
                }
                self.sim.set_timer(node, d.receiver_interval, Timer::ReceiverCheck);
                Ok(())
            }
            (NodeId::Stabilizer { dc }, Timer::GlobalTick) => {
                self.global_tick(dc)?;
                self.sim
                    .set_timer(node, self.cfg.gstab.stabilization_interval_us, Timer::GlobalTick);
                Ok(())
            }
            (NodeId::Control, Timer::Fault(i)) => {
                self.start_fault(i);
                Ok(())
            }
            (NodeId::Control, Timer::StraggleEnd(i)) => {
                if let FaultSpec::StragglePartition { dc, partition, .. } = self.cfg.faults[i] {
                    self.set_straggle(dc, partition, None);
                }
                Ok(())
            }
            (NodeId::Control, Timer::Detect(dc)) => {
                self.detect(dc);
                Ok(())
            }
            (node, timer) => unreachable!("timer {timer:?} at {node}"),
        }
    }

    fn client_next(&mut self, node: NodeId) -> Result<()> {
        if self.sim.now() >= self.cfg.duration() {
            return Ok(());
        }
        let s = self.session(node);
        let c = &mut self.clients[s];
        let key = c.workload.next_key();
        let kind = c.workload.next_kind();
        let partition = key.partition(self.n);
        let dc = c.dc;
        let msg = match kind {
            OpKind::Read => Msg::Read { key },
            OpKind::Update => Msg::Update {
                key,
                vclock: c.state.vclock().clone(),
            },
        };
        c.outstanding = Some(Outstanding {
            kind,
            key,
            partition,
            issued_at: self.sim.now(),
        });
        self.send(node, NodeId::Partition { dc, idx: partition }, msg);
        Ok(())
    }

    fn client_done(&mut self, node: NodeId, vts: &VectorTimestamp, hops: u32) -> Result<()> {
        let s = self.session(node);
        let now = self.sim.now();
        let c = &mut self.clients[s];
        let out = c.outstanding.take().expect("reply to an outstanding operation");
        let kind = match out.kind {
            OpKind::Read => {
                c.state.complete_read(out.key, vts)?;
                self.report.counters.reads += 1;
                OpKindTag::Read
            }
            OpKind::Update => {
                c.state.complete_update(out.key, vts.clone());
                self.report.counters.updates += 1;
                OpKindTag::Update
            }
        };
        self.report.ops.push(OpSample {
            dc: c.dc,
            partition: out.partition,
            kind,
            issued_at: out.issued_at,
            latency: now - out.issued_at,
            sync_hops: hops,
        });
        let think = c.workload.think_time();
        self.sim.set_timer(node, think, Timer::ClientNext);
        Ok(())
    }

    fn on_message(&mut self, from: NodeId, to: NodeId, msg: Msg) -> Result<()> {
        match (to, msg) {
            (NodeId::Client { .. }, Msg::ReadReply { vts }) => self.client_done(to, &vts, 0),
            (NodeId::Client { .. }, Msg::UpdateReply { vts, hops }) => self.client_done(to, &vts, hops),
            (NodeId::Partition { dc, idx }, Msg::Read { key }) => {
                let r = self.parts[self.pidx(dc, idx)].read(key)?;
                let session = self.session(from);
                self.oracle(to, OracleEvent::Read { session, observed: r.writer })?;
                self.send(to, from, Msg::ReadReply { vts: r.vts });
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Msg::Update { key, vclock }) => {
                self.partition_update(dc, idx, from, key, vclock)
            }
            (NodeId::Partition { dc, idx }, Msg::Ack(ts)) => {
                if let (NodeId::Eunomia { replica, .. }, Part::Eunomia(p)) =
                    (from, &mut self.parts[dc * self.n + idx])
                {
                    p.handle_ack(replica, ts);
                }
                Ok(())
            }
            (NodeId::Partition { dc, idx }, Msg::Payload { record, installed_at }) => {
                self.payload_arrived(dc, idx, record, installed_at)
            }
            (NodeId::Partition { dc, idx }, Msg::SeqGrant { grants, hops }) => {
                self.seq_granted(dc, idx, grants, hops)
            }
            (NodeId::Partition { dc, idx }, Msg::SiblingHeartbeat(ts)) => {
                let i = self.pidx(dc, idx);
                if let (Some(k), Part::GStab(p)) = (from.dc(), &mut self.parts[i]) {
                    p.receive_heartbeat(k, ts);
                }
                Ok(())
            }
            (NodeId::Eunomia { dc, replica }, Msg::Batch(b)) => {
                let ack = self.replicas[dc][replica].ingest_batch(&b)?;
                self.send(to, from, Msg::Ack(ack));
                Ok(())
            }
            (NodeId::Eunomia { dc, replica }, Msg::Stable(ts)) => {
                self.replicas[dc][replica].handle_stable(ts);
                Ok(())
            }
            (NodeId::Eunomia { dc, replica }, Msg::NewLeader(l)) => {
                self.replicas[dc][replica].handle_new_leader(l);
                Ok(())
            }
            (NodeId::Receiver { dc }, Msg::Emit(ops)) => {
                let origin = from.dc().expect("emissions come from a datacenter");
                for op in ops.iter() {
                    self.receivers[dc].enqueue_remote(op.clone(), origin)?;
                }
                Ok(())
            }
            (NodeId::Sequencer { dc, idx }, Msg::SeqRequest { tokens, hops }) => {
                let origin = match from {
                    NodeId::Partition { idx, .. } => idx,
                    other => unreachable!("sequencer request from {other}"),
                };
                let grants = self.sequencers[dc][idx].grant(&tokens);
                self.forward_grants(dc, idx, grants, origin, hops + 1)
            }
            (NodeId::Sequencer { dc, idx }, Msg::SeqForward { grants, origin, hops }) => {
                self.sequencers[dc][idx].adopt(&grants)?;
                self.forward_grants(dc, idx, grants, origin, hops + 1)
            }
            (NodeId::Stabilizer { dc }, Msg::VvReport(vv)) => {
                if let NodeId::Partition { idx, .. } = from {
                    self.stabilizers[dc].report(idx, vv)?;
                }
                Ok(())
            }
            (to, msg) => unreachable!("{msg:?} delivered to {to}"),
        }
    }

    fn partition_update(
        &mut self,
        dc: DcIndex,
        idx: PartitionIndex,
        client: NodeId,
        key: Key,
        vclock: VectorTimestamp,
    ) -> Result<()> {
        let node = NodeId::Partition { dc, idx };
        let i = self.pidx(dc, idx);
        let session = self.session(client);
        let now = self.sim.now();
        let value = self.value.clone();
        let record = match &mut self.parts[i] {
            Part::Eunomia(p) => {
                let clock = self.sim.clock(node);
                p.handle_update(key, value, &vclock, clock)?.record
            }
            Part::GStab(p) => {
                let clock = self.sim.clock(node);
                p.handle_update(key, value, &vclock, clock)?
            }
            Part::Seq(p) => {
                let (token, installed) = p.begin_update(key, value, &vclock)?;
                self.seq_waiting.insert(
                    (dc, idx, token.1),
                    SeqWaiter {
                        client,
                        installed_at: now,
                    },
                );
                if let Some(r) = installed {
                    self.oracle(node, OracleEvent::Write { session, update: r.update_ref() })?;
                    self.send(node, client, Msg::UpdateReply { vts: r.vts, hops: 0 });
                }
                if self.comms[i].straggle.is_none() {
                    self.flush_seq_requests(dc, idx);
                }
                return Ok(());
            }
        };
        self.oracle(node, OracleEvent::Write { session, update: record.update_ref() })?;
        self.send(node, client, Msg::UpdateReply { vts: record.vts.clone(), hops: 0 });
        self.ship(dc, idx, record, now);
        Ok(())
    }

    fn ship(&mut self, dc: DcIndex, idx: PartitionIndex, record: UpdateRecord, installed_at: Micros) {
        let from = NodeId::Partition { dc, idx };
        for k in (0..self.m).filter(|&k| k != dc) {
            self.send(
                from,
                NodeId::Partition { dc: k, idx },
                Msg::Payload {
                    record: record.clone(),
                    installed_at,
                },
            );
        }
    }

    fn flush_seq_requests(&mut self, dc: DcIndex, idx: PartitionIndex) {
        let i = self.pidx(dc, idx);
        if let Part::Seq(p) = &mut self.parts[i] {
            let tokens = p.take_requests();
            if !tokens.is_empty() {
                self.send(
                    NodeId::Partition { dc, idx },
                    NodeId::Sequencer { dc, idx: 0 },
                    Msg::SeqRequest { tokens, hops: 1 },
                );
            }
        }
    }

    fn forward_grants(
        &mut self,
        dc: DcIndex,
        idx: usize,
        grants: Vec<(Token, u64)>,
        origin: PartitionIndex,
        hops: u32,
    ) -> Result<()> {
        let from = NodeId::Sequencer { dc, idx };
        if idx + 1 == self.sequencers[dc].len() {
            self.send(from, NodeId::Partition { dc, idx: origin }, Msg::SeqGrant { grants, hops });
        } else {
            self.send(
                from,
                NodeId::Sequencer { dc, idx: idx + 1 },
                Msg::SeqForward { grants, origin, hops },
            );
        }
        Ok(())
    }

    fn seq_granted(&mut self, dc: DcIndex, idx: PartitionIndex, grants: Vec<(Token, u64)>, hops: u32) -> Result<()> {
        let node = NodeId::Partition { dc, idx };
        let i = self.pidx(dc, idx);
        let sync = self.cfg.protocol != Protocol::ASeq;
        for (token, seq) in grants {
            let record = match &mut self.parts[i] {
                Part::Seq(p) => p.complete(token, seq),
                _ => None,
            };
            let Some(record) = record else { continue };
            let waiter = self
                .seq_waiting
                .remove(&(dc, idx, token.1))
                .expect("grant for a pending request");
            if sync {
                let session = self.session(waiter.client);
                self.oracle(node, OracleEvent::Write { session, update: record.update_ref() })?;
                self.send(node, waiter.client, Msg::UpdateReply { vts: record.vts.clone(), hops });
            }
            self.ship(dc, idx, record, waiter.installed_at);
        }
        Ok(())
    }

    fn payload_arrived(&mut self, dc: DcIndex, idx: PartitionIndex, record: UpdateRecord, installed_at: Micros) -> Result<()> {
        let now = self.sim.now();
        let key = (record.update_ref(), dc);
        if self.arrivals.contains_key(&key) {
            self.report.counters.duplicate_deliveries += 1;
            return Ok(());
        }
        self.arrivals.insert(key, (installed_at, now));
        match self.cfg.protocol {
            Protocol::Eunomia => {
                self.receivers[dc].buffer_payload(record);
            }
            Protocol::SSeq | Protocol::ASeq | Protocol::SeqChain => {
                self.seq_receivers[dc].receive(record)?;
                for r in self.seq_receivers[dc].drain() {
                    self.make_visible(dc, r)?;
                }
            }
            Protocol::GstabScalar | Protocol::GstabVector => {
                let i = self.pidx(dc, idx);
                if let Part::GStab(p) = &mut self.parts[i] {
                    p.receive_remote(record);
                }
            }
            Protocol::Eventual => self.make_visible(dc, record)?,
        }
        Ok(())
    }

    fn make_visible(&mut self, dc: DcIndex, record: UpdateRecord) -> Result<()> {
        let idx = record.origin_partition;
        let i = self.pidx(dc, idx);
        self.parts[i].apply_remote(&record);
        let update = record.update_ref();
        self.oracle(NodeId::Partition { dc, idx }, OracleEvent::Apply { dc, update })?;
        self.report.counters.remote_applies += 1;
        if let Some((installed_at, arrived_at)) = self.arrivals.remove(&(update, dc)) {
            self.report.visibility.push(VisSample {
                origin: record.origin_dc,
                dest: dc,
                origin_partition: record.origin_partition,
                installed_at,
                arrived_at,
                visible_at: self.sim.now(),
            });
        }
        Ok(())
    }

    fn stabilize(&mut self, dc: DcIndex, replica: ReplicaId) {
        let node = NodeId::Eunomia { dc, replica };
        let Some(em) = self.replicas[dc][replica].process_stable() else {
            return;
        };
        if !em.ops.is_empty() {
            let now = self.sim.now();
            self.report.emissions[dc].extend(em.ops.iter().map(|o| EmittedOp { at: now, uid: o.uid }));
            self.note(node, "emit", || {
                em.ops.iter().map(|o| o.uid.to_string()).collect::<Vec<_>>().join(",")
            });
            let ops = Arc::new(em.ops);
            for k in (0..self.m).filter(|&k| k != dc) {
                self.send(node, NodeId::Receiver { dc: k }, Msg::Emit(ops.clone()));
            }
        }
        for f in em.notify {
            self.send(node, NodeId::Eunomia { dc, replica: f }, Msg::Stable(em.stable));
        }
    }

    fn global_tick(&mut self, dc: DcIndex) -> Result<()> {
        let Some(stable) = self.stabilizers[dc].stable() else {
            return Ok(());
        };
        let mode = match self.cfg.protocol {
            Protocol::GstabScalar => StabMode::Scalar,
            _ => StabMode::Vector,
        };
        let mut ready = Vec::new();
        for p in 0..self.n {
            let i = self.pidx(dc, p);
            if let Part::GStab(part) = &mut self.parts[i] {
                ready.extend(part.take_visible(&stable));
            }
        }
        ready.sort_by_key(|r| visibility_order(mode, r));
        for r in ready {
            self.make_visible(dc, r)?;
        }
        Ok(())
    }

    fn start_fault(&mut self, i: usize) {
        match self.cfg.faults[i].clone() {
            FaultSpec::CrashReplica { dc, replica, .. } => {
                let node = NodeId::Eunomia { dc, replica };
                self.sim.crash(node);
                self.live[dc][replica] = false;
                self.note(node, "crash", String::new);
                let delay = self.cfg.eunomia.detection_delay_ms * MILLIS;
                self.at(self.sim.now() + delay, Timer::Detect(dc));
            }
            FaultSpec::StragglePartition { dc, partition, interval_ms, .. } => {
                self.set_straggle(dc, partition, Some(interval_ms * MILLIS));
            }
            FaultSpec::SlowLink { src, dst, extra_us, .. } => {
                let (src, dst) = (src.parse().expect("validated"), dst.parse().expect("validated"));
                self.sim.set_link_extra_delay(src, dst, extra_us);
            }
            FaultSpec::LoseAcks { .. } => {}
        }
    }

    fn detect(&mut self, dc: DcIndex) {
        let live: Vec<ReplicaId> = (0..self.live[dc].len()).filter(|&f| self.live[dc][f]).collect();
        let Some(&leader) = live.first() else {
            return;
        };
        self.note(NodeId::Control, "leader", || format!("dc{dc}:{leader}"));
        for &f in &live {
            self.send(NodeId::Control, NodeId::Eunomia { dc, replica: f }, Msg::NewLeader(leader));
        }
        let dead: Vec<ReplicaId> = (0..self.live[dc].len()).filter(|&f| !self.live[dc][f]).collect();
        for p in 0..self.n {
            let i = self.pidx(dc, p);
            if let Part::Eunomia(part) = &mut self.parts[i] {
                for &f in &dead {
                    part.retire_replica(f);
                }
            }
        }
    }

    fn set_straggle(&mut self, dc: DcIndex, p: PartitionIndex, interval: Option<Micros>) {
        let i = self.pidx(dc, p);
        let node = NodeId::Partition { dc, idx: p };
        self.comms[i].straggle = interval;
        self.comms[i].generation += 1;
        let g = self.comms[i].generation;
        let d = self.cfg.deployment.clone();
        match self.cfg.protocol {
            Protocol::Eunomia => {
                self.sim.set_timer(node, interval.unwrap_or(d.batch_interval), Timer::BatchFlush(g));
                self.sim.set_timer(node, interval.unwrap_or(d.heartbeat_interval), Timer::Heartbeat(g));
            }
            Protocol::SSeq | Protocol::ASeq | Protocol::SeqChain => match interval {
                Some(period) => self.sim.set_timer(node, period, Timer::SeqFlush(g)),
                None => self.flush_seq_requests(dc, p),
            },
            Protocol::GstabScalar | Protocol::GstabVector => {
                let period = interval.unwrap_or(self.cfg.gstab.stabilization_interval_us);
                self.sim.set_timer(node, period, Timer::VvReport(g));
            }
            Protocol::Eventual => {}
        }
    }

    fn finish(mut self) -> Result<(MetricsReport, Option<String>)> {
        let mut c = std::mem::take(&mut self.report.counters);
        c.still_pending = self.arrivals.len() as u64;
        for part in &self.parts {
            if let Part::Eunomia(p) = part {
                c.stream_violations += p.stream_violations();
            }
        }
        for dc_replicas in &self.replicas {
            for r in dc_replicas {
                c.stability_violations += r.safety_violations();
            }
        }
        for r in &self.receivers {
            c.duplicate_deliveries += r.duplicates();
        }
        for r in &self.seq_receivers {
            c.duplicate_deliveries += r.duplicates();
        }
        c.sim = self.sim.stats();
        self.report.counters = c;
        self.report.verdict = self.checker.finish();
        self.report.trace_digest = self.sim.trace_digest();
        Ok((self.report, self.trace.map(TraceWriter::into_text)))
    }
}
