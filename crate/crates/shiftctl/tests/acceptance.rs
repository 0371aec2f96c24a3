//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every expected value comes from an oracle written here, independent of
//! the code under test.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teleshift_core::{
    embed_assembly, embed_assembly_ordered, joint_offset, merge_arm, ActorId, ArmId, ArmState, ArmUpdate,
    AssemblyTopology, EmbedError, Endpoint, Joint, Point3, Role, SessionMode, SubstructureId, VersionStamp, BODY_MM,
    EPS_GEOM_MM, E_MAX_MM,
};
use teleshift_hub::envelope::Updates;
use teleshift_hub::{Kind, HUB_SENDER};
use teleshift_sim::scenario::{DeviceSpec, Event};
use teleshift_sim::{Action, ActuationParams, DeviceState, NetProfile, Scenario, World};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    }};
}

fn sid(s: &str) -> SubstructureId {
    s.parse().unwrap()
}

fn actor(s: &str) -> ActorId {
    s.parse().unwrap()
}

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap()
}

fn event(at_ms: u64, device: &str, action: Action) -> Event {
    Event {
        at_ms,
        device: actor(device),
        action,
    }
}

fn peer(id: &str) -> DeviceSpec {
    DeviceSpec {
        id: actor(id),
        substructure: sid("S1"),
        role: Some(Role::Peer),
        offline: false,
    }
}

fn collab(name: &str, devices: &[&str], net: NetProfile, events: Vec<Event>) -> Scenario {
    Scenario {
        name: name.into(),
        session: name.parse().unwrap(),
        mode: SessionMode::Collaboration,
        limit_ms: 600_000,
        net,
        actuation: ActuationParams::default(),
        devices: devices.iter().map(|d| peer(d)).collect(),
        events,
    }
}

fn clamp(mm: f64) -> f64 {
    mm.clamp(0.0, E_MAX_MM)
}

// 1 ------------------------------------------------------------------------

fn lww_permutations() -> Outcome {
    let started = Instant::now();
    let stamps: Vec<(u64, &str)> = (1..=3).flat_map(|l| ["a", "b"].map(|a| (l, a))).collect();
    let mut permutations_checked = 0;
    for k in 1..=4 {
        for chosen in combinations(stamps.len(), k) {
            let updates: Vec<ArmUpdate<f64>> = chosen
                .iter()
                .enumerate()
                .map(|(n, &i)| ArmUpdate {
                    substructure: sid("S1"),
                    arm: ArmId::PosX,
                    target: 7.0 + 11.0 * n as f64,
                    jointed: n % 2 == 1,
                    mate: (n % 2 == 1).then(|| sid("S2")),
                    stamp: VersionStamp::new(stamps[i].0, actor(stamps[i].1)),
                })
                .collect();
            // The winner is the update with the greatest (lamport, actor).
            let winner = updates
                .iter()
                .max_by(|x, y| {
                    (x.stamp.lamport, x.stamp.actor.as_str()).cmp(&(y.stamp.lamport, y.stamp.actor.as_str()))
                })
                .unwrap();
            for order in permutations(updates.len()) {
                let merged = order
                    .iter()
                    .fold(ArmState::<f64>::default(), |state, &i| merge_arm(&state, &updates[i]));
                ensure!(
                    merged.target == winner.target
                        && merged.jointed == winner.jointed
                        && merged.mate == winner.mate
                        && merged.stamp == winner.stamp,
                    "order {order:?} of {k} updates ended at {merged:?}"
                );
                permutations_checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{permutations_checked} delivery orders in {elapsed:.2?}"))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    (0..n)
        .flat_map(|first| {
            combinations(n - first - 1, k - 1)
                .into_iter()
                .map(move |rest| std::iter::once(first).chain(rest.into_iter().map(|r| r + first + 1)).collect())
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    permutations(n - 1)
        .into_iter()
        .flat_map(|p| {
            (0..n).map(move |slot| {
                let mut q = p.clone();
                q.insert(slot, n - 1);
                q
            })
        })
        .collect()
}

// 2 ------------------------------------------------------------------------

fn chaos_convergence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let devices = ["c0", "c1", "c2"];
    let events = (0..200)
        .map(|_| {
            let at = rng.gen_range(100..30_000);
            let device = devices[rng.gen_range(0..3)];
            let arm = ArmId::ALL[rng.gen_range(0..6)];
            let mm = (rng.gen_range(0.0..=E_MAX_MM) * 10.0_f64).round() / 10.0;
            event(at, device, Action::Override { arm, mm })
        })
        .collect();
    let net = NetProfile::new(50.0, 20.0, 0.1, 2).unwrap();
    let mut world = World::new(collab("chaos", &devices, net, events));
    let report = world.run().map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let hub_hash = &report.final_state_hash["hub/S1"];
    for d in devices {
        ensure!(&report.final_state_hash[d] == hub_hash, "{d} hash differs from the hub");
    }
    ensure!(report.converged, "divergences {:?}", report.divergences);
    ensure!(report.network.dropped > 0, "the network dropped nothing");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "4 replicas identical after {} dropped envelopes, settled at {} ms virtual, {elapsed:.2?} wall",
        report.network.dropped, report.settle_ms
    ))
}

// 3 ------------------------------------------------------------------------

fn presentation_isolation() -> Outcome {
    let scenario = bundled("classroom.json");
    let roles: BTreeMap<String, Role> = scenario
        .devices
        .iter()
        .map(|d| (d.id.to_string(), d.role.unwrap()))
        .collect();
    let followers: Vec<String> = roles.iter().filter(|(_, r)| **r == Role::Follower).map(|(d, _)| d.clone()).collect();
    let presenter = roles.iter().find(|(_, r)| **r == Role::Presenter).map(|(d, _)| d.clone()).unwrap();

    // Oracle: per device, the last value scripted for each arm before any restore.
    let mut timeline = scenario.events.clone();
    timeline.sort_by_key(|e| e.at_ms);
    let mut scripted: BTreeMap<String, BTreeMap<ArmId, f64>> = BTreeMap::new();
    let mut edit_counts: BTreeMap<Role, usize> = BTreeMap::new();
    for e in &timeline {
        if let Action::Override { arm, mm } = e.action {
            scripted.entry(e.device.to_string()).or_default().insert(arm, clamp(mm));
            *edit_counts.entry(roles[e.device.as_str()]).or_default() += 1;
        }
    }
    ensure!(
        edit_counts.get(&Role::Follower) == Some(&50) && edit_counts.get(&Role::Presenter) == Some(&20),
        "scenario has {edit_counts:?} edits"
    );

    let mut world = World::new(scenario);
    let report = world.run().map_err(|e| e.to_string())?;
    ensure!(report.converged, "divergences {:?}", report.divergences);

    // Wire level: nothing a follower sent reaches anyone else.
    let leaks: Vec<_> = world
        .trace()
        .iter()
        .filter(|d| d.to != HUB_SENDER && d.envelope.sender != d.to && followers.contains(&d.envelope.sender))
        .collect();
    ensure!(leaks.is_empty(), "{} follower envelopes delivered to others, first {:?}", leaks.len(), leaks[0]);

    // Every presenter update reaches every follower.
    let stamps_in = |from: &str, to: &str| -> BTreeSet<VersionStamp> {
        world
            .trace()
            .iter()
            .filter(|d| d.from == from && d.to == to && d.envelope.kind == Kind::Update)
            .filter(|d| to == HUB_SENDER || d.envelope.sender == presenter)
            .flat_map(|d| d.envelope.payload_as::<Updates>().unwrap().updates)
            .map(|u| u.stamp)
            .collect()
    };
    let sent = stamps_in(&presenter, HUB_SENDER);
    ensure!(sent.len() == 20, "presenter sent {} updates", sent.len());
    for f in &followers {
        let got = stamps_in(HUB_SENDER, f);
        ensure!(sent.is_subset(&got), "{f} missed {} presenter updates", sent.difference(&got).count());
    }

    // The presenter's shape is exactly its own edits.
    let record = world.session().unwrap();
    let authoritative = record.topology.get("S1").unwrap();
    for (arm, mm) in &scripted[&presenter] {
        ensure!(authoritative.arm(*arm).target == *mm, "presenter {arm} is {}", authoritative.arm(*arm).target);
    }

    // Before restoring, each follower's divergence is exactly its own edits.
    for r in &report.restores {
        let own = &scripted[r.device.as_str()];
        let expected: BTreeSet<(ArmId, u64, u64)> = own
            .iter()
            .filter(|(arm, mm)| **mm != scripted[&presenter][arm])
            .map(|(arm, mm)| (*arm, mm.to_bits(), scripted[&presenter][arm].to_bits()))
            .collect();
        let listed: BTreeSet<(ArmId, u64, u64)> = r
            .local_diffs_before
            .iter()
            .map(|d| (d.arm, d.actual.target.to_bits(), d.expected.target.to_bits()))
            .collect();
        ensure!(listed == expected, "{}: listed {listed:?}, expected {expected:?}", r.device);
    }
    ensure!(report.restores.len() == followers.len(), "{} restores", report.restores.len());
    ensure!(report.local_diffs.is_empty(), "diffs remain after restore: {:?}", report.local_diffs);
    Ok(format!(
        "0 follower envelopes leaked, {} presenter updates reached {} followers, divergences matched before restore",
        sent.len(),
        followers.len()
    ))
}

// 4 ------------------------------------------------------------------------

fn snapshot_undo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut events = Vec::new();
    let mut saved = BTreeMap::new();
    for (i, arm) in ArmId::ALL.into_iter().enumerate() {
        let mm = rng.gen_range(0.0..=E_MAX_MM);
        saved.insert(arm, mm);
        events.push(event(100 + 100 * i as u64, "u0", Action::Override { arm, mm }));
    }
    events.push(event(5_000, "u0", Action::SnapshotSave { label: "v1".into() }));
    for k in 0..50 {
        let device = ["u0", "u1"][rng.gen_range(0..2)];
        let arm = ArmId::ALL[rng.gen_range(0..6)];
        events.push(event(6_000 + 200 * k, device, Action::Override { arm, mm: rng.gen_range(0.0..=E_MAX_MM) }));
    }
    events.push(event(20_000, "u1", Action::SnapshotRestore { id: "v1".into() }));

    let net = NetProfile::new(30.0, 10.0, 0.0, 4).unwrap();
    let mut world = World::new(collab("undo", &["u0", "u1"], net, events));
    let report = world.run().map_err(|e| e.to_string())?;
    ensure!(report.converged, "divergences {:?}", report.divergences);
    let mut worst: f64 = 0.0;
    for device in world.devices() {
        for (arm, mm) in &saved {
            let ext = device.state.substructure.arm(*arm).extension;
            worst = worst.max((ext - mm).abs());
        }
    }
    ensure!(worst <= 0.1, "an arm ended {worst} mm from its saved extension");
    Ok(format!("all arms on both devices within {worst:.2e} mm of the saved shape"))
}

// 5 ------------------------------------------------------------------------

fn body(i: usize) -> SubstructureId {
    sid(&format!("S{i}"))
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> AssemblyTopology<f64> {
    let mut t = AssemblyTopology::new();
    t.insert_substructure(body(0)).unwrap();
    for i in 1..n {
        t.insert_substructure(body(i)).unwrap();
        loop {
            let parent = rng.gen_range(0..i);
            let arm = ArmId::ALL[rng.gen_range(0..6)];
            if !t.get(&body(parent)).unwrap().arm(arm).jointed {
                t.add_joint(Endpoint::new(body(parent), arm), Endpoint::new(body(i), arm.opposite())).unwrap();
                break;
            }
        }
    }
    for sub in t.substructures_mut() {
        for arm in ArmId::ALL {
            let s = sub.arm_mut(arm);
            s.extension = rng.gen_range(0.0..=E_MAX_MM);
            s.target = s.extension;
        }
    }
    t
}

fn free_arms(t: &AssemblyTopology<f64>, id: &SubstructureId) -> Vec<ArmId> {
    ArmId::ALL.into_iter().filter(|&a| !t.get(id).unwrap().arm(a).jointed).collect()
}

fn set_ext(t: &mut AssemblyTopology<f64>, id: &SubstructureId, arm: ArmId, mm: f64) {
    let s = t.get_mut(id).unwrap().arm_mut(arm);
    s.extension = mm;
    s.target = mm;
}

fn link(t: &mut AssemblyTopology<f64>, a: &SubstructureId, arm: ArmId, b: &SubstructureId) {
    t.add_joint(Endpoint::new(a.clone(), arm), Endpoint::new(b.clone(), arm.opposite())).unwrap();
}

/// Positions by walking joints from the anchor with the center-to-center
/// law (body plus both arm extensions along the arm's axis), and the worst
/// mismatch on any joint not used by the walk.
fn oracle_positions(t: &AssemblyTopology<f64>, anchor: &SubstructureId) -> (BTreeMap<SubstructureId, Point3<f64>>, f64) {
    let joints: Vec<Joint> = t.joints().into_iter().collect();
    let step = |from: &Endpoint, to: &Endpoint| -> Point3<f64> {
        let span = BODY_MM + t.arm(from).unwrap().extension + t.arm(to).unwrap().extension;
        let mut d = [0.0; 3];
        d[from.arm.axis()] = span * f64::from(from.arm.sign());
        d
    };
    let mut pos = BTreeMap::from([(anchor.clone(), [0.0; 3])]);
    let mut queue = VecDeque::from([anchor.clone()]);
    while let Some(here) = queue.pop_front() {
        for j in &joints {
            for (near, far) in [(j.a(), j.b()), (j.b(), j.a())] {
                if near.id == here && !pos.contains_key(&far.id) {
                    let d = step(near, far);
                    let p = pos[&here];
                    pos.insert(far.id.clone(), [p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
                    queue.push_back(far.id.clone());
                }
            }
        }
    }
    let mut mismatch: f64 = 0.0;
    for j in &joints {
        let d = step(j.a(), j.b());
        let (pa, pb) = (pos[&j.a().id], pos[&j.b().id]);
        for k in 0..3 {
            mismatch = mismatch.max((pa[k] + d[k] - pb[k]).abs());
        }
    }
    (pos, mismatch)
}

fn oracle_overlap(pos: &BTreeMap<SubstructureId, Point3<f64>>) -> bool {
    let all: Vec<_> = pos.values().collect();
    all.iter().enumerate().any(|(i, p)| {
        all[i + 1..]
            .iter()
            .any(|q| (0..3).all(|k| (p[k] - q[k]).abs() < BODY_MM - EPS_GEOM_MM))
    })
}

fn check_tree(t: &AssemblyTopology<f64>, rng: &mut ChaCha8Rng) -> Result<bool, String> {
    let anchor = body(0);
    let (expected, mismatch) = oracle_positions(t, &anchor);
    ensure!(mismatch <= 1e-9, "tree has a cycle mismatch {mismatch}");
    let overlap = oracle_overlap(&expected);
    let mut orders = Vec::new();
    for _ in 0..5 {
        let mut order: Vec<Joint> = t.joints().into_iter().collect();
        order.shuffle(rng);
        orders.push(order);
    }
    for order in &orders {
        match embed_assembly_ordered(t, &anchor, [0.0; 3], order) {
            Ok(e) => {
                ensure!(!overlap, "overlap not flagged");
                ensure!(e.positions.len() == expected.len(), "placed {} of {}", e.positions.len(), expected.len());
                for (id, p) in &expected {
                    let q = e.positions[id];
                    ensure!((0..3).all(|k| (p[k] - q[k]).abs() <= EPS_GEOM_MM), "{id} at {q:?}, expected {p:?}");
                }
                for j in t.joints() {
                    let (a, b) = (j.a(), j.b());
                    let (ea, eb) = (t.arm(a).unwrap().extension, t.arm(b).unwrap().extension);
                    let offset = joint_offset(a.arm, ea, eb);
                    ensure!(
                        offset[a.arm.axis()] == f64::from(a.arm.sign()) * (BODY_MM + ea + eb),
                        "offset law broken at {j:?}"
                    );
                    let (pa, pb) = (e.positions[&a.id], e.positions[&b.id]);
                    ensure!((0..3).all(|k| (pa[k] + offset[k] - pb[k]).abs() <= 1e-9), "joint {j:?} misplaced");
                }
            }
            Err(EmbedError::BodyCollision(..)) => ensure!(overlap, "spurious overlap"),
            Err(other) => return Err(format!("unexpected {other}")),
        }
    }
    Ok(overlap)
}

fn embedding_laws() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cycles, mut overlaps) = (0, 0);
    for _ in 0..500 {
        let n = rng.gen_range(1..=10);
        let tree = random_tree(&mut rng, n);
        check_tree(&tree, &mut rng)?;

        // Inject an overlap: two bodies reached by different paths meet.
        if let Some(t) = inject_overlap(&tree, &mut rng) {
            ensure!(check_tree(&t, &mut rng)?, "injected overlap not seen by the oracle");
            overlaps += 1;
        }

        // Inject a cycle that cannot close.
        if n >= 2 {
            if let Some(t) = inject_cycle(&tree, &mut rng) {
                let (_, mismatch) = oracle_positions(&t, &body(0));
                ensure!(mismatch > EPS_GEOM_MM, "injected cycle closes");
                match embed_assembly(&t, &body(0), [0.0; 3]) {
                    Err(EmbedError::InconsistentCycle { .. }) => cycles += 1,
                    other => return Err(format!("cycle off by {mismatch} mm not detected: {other:?}")),
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(cycles >= 400 && overlaps >= 400, "only {cycles} cycles and {overlaps} overlaps injected");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("500 trees x 5 orders, {cycles} bad cycles and {overlaps} overlaps caught in {elapsed:.2?}"))
}

fn inject_overlap(tree: &AssemblyTopology<f64>, rng: &mut ChaCha8Rng) -> Option<AssemblyTopology<f64>> {
    let mut t = tree.clone();
    let ids: Vec<SubstructureId> = t.ids().cloned().collect();
    let x = ids.iter().find(|id| {
        let free = free_arms(&t, id);
        free.iter().any(|p| free.iter().any(|q| q.axis() != p.axis()))
    })?;
    let free = free_arms(&t, x);
    let p = *free.choose(rng)?;
    let q = **free.iter().filter(|q| q.axis() != p.axis()).collect::<Vec<_>>().choose(rng)?;
    let [a, b, c, d] = ["GA", "GB", "GC", "GD"].map(sid);
    for id in [&a, &b, &c, &d] {
        t.insert_substructure(id.clone()).unwrap();
    }
    // x -p-> a -q-> b -(-p)-> c, and x -q-> d: equal spans put c onto d.
    let (e1, e2, f1, f2) = (rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0));
    set_ext(&mut t, x, p, e1);
    set_ext(&mut t, &a, p.opposite(), e2);
    set_ext(&mut t, &b, p.opposite(), e1);
    set_ext(&mut t, &c, p, e2);
    set_ext(&mut t, &a, q, f1);
    set_ext(&mut t, &b, q.opposite(), f2);
    set_ext(&mut t, x, q, f1);
    set_ext(&mut t, &d, q.opposite(), f2);
    link(&mut t, x, p, &a);
    link(&mut t, &a, q, &b);
    link(&mut t, &b, p.opposite(), &c);
    link(&mut t, x, q, &d);
    Some(t)
}

fn inject_cycle(tree: &AssemblyTopology<f64>, rng: &mut ChaCha8Rng) -> Option<AssemblyTopology<f64>> {
    let ids: Vec<SubstructureId> = tree.ids().cloned().collect();
    for _ in 0..50 {
        let mut t = tree.clone();
        let x = ids.choose(rng)?;
        let z = ids.choose(rng)?;
        if x == z {
            continue;
        }
        let Some(&p) = free_arms(&t, x).choose(rng) else { continue };
        let options: Vec<ArmId> = free_arms(&t, z)
            .into_iter()
            .filter(|r| r.axis() != p.axis())
            .map(ArmId::opposite)
            .collect();
        let Some(&r) = options.choose(rng) else { continue };
        let y = sid("GY");
        t.insert_substructure(y.clone()).unwrap();
        set_ext(&mut t, &y, p.opposite(), rng.gen_range(0.0..=E_MAX_MM));
        set_ext(&mut t, &y, r, rng.gen_range(0.0..=E_MAX_MM));
        link(&mut t, x, p, &y);
        link(&mut t, &y, r, z);
        if oracle_positions(&t, &body(0)).1 > EPS_GEOM_MM {
            return Some(t);
        }
    }
    None
}

// 6 ------------------------------------------------------------------------

fn actuation_fuzz() -> Outcome {
    let params = ActuationParams::default();
    let step = params.v_max * params.tick_ms as f64 / 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ticks = 0u64;
    for round in 0..10_000 {
        let mut dev = DeviceState::<f64>::new(sid("S1"), actor("dev"));
        dev.connected = rng.gen_bool(0.5);
        for _ in 0..rng.gen_range(1..60) {
            match rng.gen_range(0..4) {
                0 => {
                    dev.apply_manual_override(ArmId::ALL[rng.gen_range(0..6)], rng.gen_range(-40.0..120.0));
                }
                1 => {
                    let state = ArmState {
                        target: rng.gen_range(0.0..=E_MAX_MM),
                        stamp: VersionStamp::new(rng.gen_range(0..80), actor("peer")),
                        ..ArmState::default()
                    };
                    dev.on_remote_update(&ArmUpdate::from_state(sid("S1"), ArmId::ALL[rng.gen_range(0..6)], &state))
                        .unwrap();
                }
                _ => {
                    let before: Vec<f64> = ArmId::ALL.iter().map(|&a| dev.substructure.arm(a).extension).collect();
                    dev.tick(&params);
                    ticks += 1;
                    for (i, &a) in ArmId::ALL.iter().enumerate() {
                        let moved = (dev.substructure.arm(a).extension - before[i]).abs();
                        ensure!(moved <= step + 1e-9, "round {round}: {a} moved {moved} mm in one tick");
                    }
                }
            }
            for a in ArmId::ALL {
                let s = dev.substructure.arm(a);
                ensure!((0.0..=E_MAX_MM).contains(&s.extension), "round {round}: {a} at {}", s.extension);
            }
        }
        // Freeze targets and let the arms settle.
        let budget = ArmId::ALL
            .iter()
            .map(|&a| {
                let s = dev.substructure.arm(a);
                ((s.target - s.extension).abs() / step).ceil() as u64
            })
            .max()
            .unwrap();
        for _ in 0..budget {
            dev.tick(&params);
        }
        let frozen = dev.substructure.clone();
        ensure!(frozen.is_settled(0.0), "round {round}: not settled after {budget} ticks");
        dev.tick(&params);
        ensure!(dev.substructure == frozen, "round {round}: settled state moved");
    }
    Ok(format!("10000 interleavings, {ticks} fuzzed ticks"))
}

// 7 ------------------------------------------------------------------------

fn recovery_run(offline_edit: Option<(ArmId, f64)>) -> Result<World, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut events = vec![event(500, "r1", Action::Disconnect)];
    for k in 0..20 {
        let arm = ArmId::ALL[rng.gen_range(0..6)];
        events.push(event(1_000 + 250 * k, "r0", Action::Override { arm, mm: rng.gen_range(0.0..=E_MAX_MM) }));
    }
    if let Some((arm, mm)) = offline_edit {
        events.push(event(3_000, "r1", Action::Override { arm, mm }));
    }
    events.push(event(8_000, "r1", Action::Reconnect));
    let net = NetProfile::new(40.0, 15.0, 0.0, 7).unwrap();
    let mut world = World::new(collab("recovery", &["r0", "r1"], net, events));
    let report = world.run().map_err(|e| e.to_string())?;
    ensure!(report.converged, "divergences {:?}", report.divergences);
    Ok(world)
}

fn shape_recovery() -> Outcome {
    let world = recovery_run(None)?;
    let hub = world.session().unwrap().topology.get("S1").unwrap().clone();
    let back = &world.device("r1").unwrap().state.substructure;
    ensure!(back == &hub, "recovered device differs from the hub");

    let edit = (ArmId::NegZ, 42.5);
    let world = recovery_run(Some(edit))?;
    let hub = world.session().unwrap().topology.get("S1").unwrap().clone();
    let arm = hub.arm(edit.0);
    ensure!(arm.target == edit.1 && arm.stamp.actor.as_str() == "r1", "hub kept {arm:?}");
    for d in world.devices() {
        ensure!(d.state.substructure == hub, "{} differs after recovery", d.id());
    }
    Ok("recovered state equals the hub; offline override adopted by every replica".into())
}

// 8 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/collab_mouse.json");
    let run = || Command::new(env!("CARGO_BIN_EXE_shiftctl")).arg("run").arg(&path).output().unwrap();
    let (first, second) = (run(), run());
    ensure!(first.status.success() && second.status.success(), "run failed: {}", String::from_utf8_lossy(&first.stderr));
    ensure!(first.stdout == second.stdout, "reports differ");
    ensure!(!first.stdout.is_empty(), "empty report");
    Ok(format!("two runs produced the same {} bytes", first.stdout.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("lww oracle equivalence", lww_permutations),
        ("convergence under chaos", chaos_convergence),
        ("presentation isolation", presentation_isolation),
        ("snapshot undo", snapshot_undo),
        ("embedding laws", embedding_laws),
        ("actuation bounds", actuation_fuzz),
        ("shape recovery", shape_recovery),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
