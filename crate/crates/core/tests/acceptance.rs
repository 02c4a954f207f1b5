//! One pass/fail line per acceptance criterion.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use epistate::cluster::{Cluster, ClusterConfig};
use epistate::engine::{Agent, AgentConfig, Role};
use epistate::event::{EventFilter, EventKind, Payload};
use epistate::fixtures::{layercake_lite, power_set, synthetic};
use epistate::graph::{build_graph, find_chain, graph_equiv, StateGraph};
use epistate::mutation::{oracle_chain, satisfies, MutationSet};
use epistate::netsim::LinkFault;
use epistate::refmods::IdealActuator;
use epistate::scenario::load_scenario;
use epistate::schema::StateMap;
use epistate::store::{NodeRecord, Side};
use epistate::sync::{PeerStatus, SyncConfig, MAX_DATAGRAM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

const EQUIV_INSTANCES: usize = 200;
const EQUIV_BUDGET: Duration = Duration::from_secs(60);
const LEMMA_QUERIES: usize = 1000;
const SHORTEST_QUERIES: usize = 100;
const A4_CHILDREN: u128 = 100;
const A4_SEEDS: u64 = 50;
const A4_DROP: f64 = 0.2;
const A4_WINDOW: u64 = 10;
const A4_BUDGET: Duration = Duration::from_secs(30);
const DEAD_TOLERANCE: u64 = 1;
const HEAL_BOUND: u64 = 8;
const BUILD_BUDGET: Duration = Duration::from_secs(5);
const QUERY_BUDGET: Duration = Duration::from_millis(50);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn record(discovered: StateMap, configured: StateMap) -> NodeRecord {
    let mut n = NodeRecord::new(Uuid::from_u128(1));
    n.discovered = discovered;
    n.configured = configured;
    n
}

fn random_query(rng: &mut ChaCha8Rng, g: &StateGraph) -> Option<(StateMap, StateMap, StateMap)> {
    let schema = g.mutation_set().schema();
    let ctx = random_context(rng);
    let mut start = g.vertex_state(rng.gen_range(0..g.vertex_count()));
    start.extend(ctx.clone());
    let goal = random_goal(rng, schema);
    let reachable = (0..g.vertex_count()).any(|v| satisfies(&g.vertex_state(v), &goal, schema));
    reachable.then_some((start, goal, ctx))
}

fn state_bound(set: &MutationSet) -> usize {
    set.schema()
        .mutation_variables()
        .map(|v| v.values().unwrap().len())
        .product()
}

fn equivalence() -> Verdict {
    let began = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mismatches = (0..EQUIV_INSTANCES)
        .filter(|_| {
            let set = random_instance(&mut rng);
            !graph_equiv(&build_graph(&set), &construction_graph(&set))
        })
        .count();
    let took = began.elapsed();
    verdict(
        mismatches == 0 && took < EQUIV_BUDGET,
        format!("{mismatches}/{EQUIV_INSTANCES} mismatches in {took:.2?}"),
    )
}

fn worked_examples() -> Verdict {
    let g = build_graph(&power_set());
    let on = find_chain(
        &g,
        &record(map(&[("power", "off"), ("platform", "redfish")]), map(&[("power", "on")])),
    );
    let off = find_chain(
        &g,
        &record(map(&[("power", "on"), ("platform", "ipmi")]), map(&[("power", "off")])),
    );
    let names = |c: Result<Option<epistate::mutation::MutationChain>, _>| {
        c.ok().flatten().map(|c| c.names().join(",")).unwrap_or_default()
    };
    let (on, off) = (names(on), names(off));
    verdict(on == "redfish_power_on" && off == "ipmi_power_off", format!("[{on}] [{off}]"))
}

fn stripping_structure() -> Verdict {
    let g = build_graph(&layercake_lite());
    let bad = g
        .vertex_states()
        .into_iter()
        .filter(|s| s.get("power").map(String::as_str) != Some("on") && s.contains_key("runstate"))
        .count();
    let would_be = map(&[("power", "off"), ("runstate", "synced")]);
    let merged = g.vertex_of(&would_be).is_none() && g.strip(&would_be) == map(&[("power", "off")]);
    verdict(
        bad == 0 && merged,
        format!("{bad} vertices know runstate without power=on; power=off,runstate=synced merged: {merged}"),
    )
}

fn lemmas() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut queries, mut chains, mut repeats, mut too_long) = (0, 0, 0, 0);
    while queries < LEMMA_QUERIES {
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        let Some((start, goal, ctx)) = random_query(&mut rng, &g) else {
            continue;
        };
        queries += 1;
        let mut configured = goal.clone();
        configured.extend(ctx);
        let found = find_chain(&g, &record(start.clone(), configured)).unwrap();
        for chain in found.into_iter().chain(oracle_chain(&start, &goal, &set)) {
            chains += 1;
            repeats += usize::from(!chain.has_unique_states(set.schema()));
            too_long += usize::from(chain.len() > state_bound(&set));
        }
    }
    verdict(
        repeats == 0 && too_long == 0,
        format!("{chains} chains over {queries} queries: {repeats} repeat a state, {too_long} exceed the bound"),
    )
}

fn shortest() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut solved, mut longer, mut bfs_off, mut compared) = (0, 0, 0, 0);
    while solved < SHORTEST_QUERIES {
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        let Some((start, goal, ctx)) = random_query(&mut rng, &g) else {
            continue;
        };
        let Some(steps) = g.shortest_steps(&start, &goal, &ctx).unwrap() else {
            continue;
        };
        solved += 1;
        bfs_off += usize::from(bfs_length(&g, &start, &goal, &ctx) != Some(steps.len()));
        if let Some(o) = oracle_chain(&start, &goal, &set) {
            compared += 1;
            longer += usize::from(steps.len() > o.len());
        }
    }
    verdict(
        longer == 0 && bfs_off == 0,
        format!("{solved} solved: {longer}/{compared} longer than oracle, {bfs_off} differ from BFS"),
    )
}

fn child_id(i: u128) -> Uuid {
    Uuid::from_u128(0x1000 + i)
}

const PARENT: Uuid = Uuid::from_u128(0xa);

fn fleet(n: u128, seed: u64, link: LinkFault, powered: bool) -> Cluster {
    let children = (0..n)
        .map(|i| {
            let mut r = NodeRecord::new(child_id(i));
            let platform = if i % 2 == 0 { "ipmi" } else { "redfish" };
            r.configured = map(&[("power", "on"), ("runstate", "running"), ("platform", platform), ("image", "v1")]);
            r
        })
        .collect();
    let mut config = ClusterConfig::new(seed, PARENT, children);
    config.link = link;
    config.powered = powered;
    config.sync = SyncConfig {
        hello_ticks: 1,
        dead_ticks: 4,
        ..SyncConfig::default()
    };
    Cluster::new(&layercake_lite(), config).unwrap()
}

fn all_consistent(c: &Cluster) -> bool {
    c.child_ids().all(|id| c.consistent(id))
}

fn all_converged(c: &Cluster) -> bool {
    c.child_ids().all(|id| c.consistent(id) && c.converged(id))
}

/// One seeded run: warm up, apply ten ticks of operator writes, then time
/// how long after the last configured write all views agree.
fn a4_run(seed: u64, max_datagram: &mut usize) -> (Option<u64>, bool) {
    let link = LinkFault {
        drop: A4_DROP,
        delay: 1,
    };
    let mut c = fleet(A4_CHILDREN, seed, link, true);
    c.run_until(300, all_converged).unwrap();
    let writes = c
        .parent()
        .bus()
        .subscribe(EventKind::StateChange, EventFilter::any());
    let configured_write = |events: Vec<epistate::event::Event>| {
        events
            .iter()
            .any(|e| matches!(&e.payload, Payload::StateChange(d) if d.side == Side::Configured))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut last_write = c.now();
    for _ in 0..10 {
        for _ in 0..5 {
            let id = child_id(rng.gen_range(0..A4_CHILDREN));
            let write = if rng.gen_bool(0.5) {
                map(&[("image", &format!("v{}", rng.gen_range(2..9)))])
            } else {
                map(&[("platform", if rng.gen_bool(0.5) { "ipmi" } else { "redfish" })])
            };
            c.configure(id, &write).unwrap();
        }
        c.tick().unwrap();
        if configured_write(writes.drain()) {
            last_write = c.now();
        }
    }
    // Automation may keep rewriting configured state (rolling updates); the
    // window opens at the last such write.
    let mut agreed = None;
    let mut at_deadline = false;
    while c.now() < last_write + A4_WINDOW && c.now() < last_write + 200 {
        c.tick().unwrap();
        if configured_write(writes.drain()) {
            last_write = c.now();
            agreed = None;
            continue;
        }
        if agreed.is_none() && all_consistent(&c) {
            agreed = Some(c.now() - last_write);
        }
        if c.now() == last_write + A4_WINDOW {
            at_deadline = all_consistent(&c);
        }
    }
    *max_datagram = (*max_datagram).max(c.max_datagram());
    (agreed, at_deadline)
}

fn eventual_consistency(max_datagram: &mut usize) -> Verdict {
    let began = Instant::now();
    let mut worst = 0;
    let mut failed = Vec::new();
    let mut held_at_deadline = 0;
    for seed in 0..A4_SEEDS {
        let (agreed, at_deadline) = a4_run(seed, max_datagram);
        held_at_deadline += usize::from(at_deadline);
        match agreed {
            Some(t) => worst = worst.max(t),
            None => failed.push(seed),
        }
    }
    let took = began.elapsed();
    let ok = A4_SEEDS as usize - failed.len();
    verdict(
        failed.is_empty() && took < A4_BUDGET,
        format!(
            "{ok}/{A4_SEEDS} runs agree within {A4_WINDOW} ticks (worst {worst}, failing seeds {failed:?}; \
             {held_at_deadline}/{A4_SEEDS} still agree at the deadline) in {took:.2?}"
        ),
    )
}

fn dead_detection(max_datagram: &mut usize) -> Verdict {
    let mut c = fleet(3, 4, LinkFault::default(), false);
    c.run_until(60, all_converged).unwrap();
    let id = child_id(1);
    c.net_mut().silence(id).unwrap();
    let dead = c
        .run_until(30, |c| c.peer_status(id) == Some(PeerStatus::Dead))
        .unwrap();
    *max_datagram = (*max_datagram).max(c.max_datagram());
    let heard = c.parent().sync().neighbor(id).map(|n| n.last_heard);
    match (dead, heard) {
        (Some(dead), Some(heard)) => {
            let gap = dead - heard;
            verdict(
                gap.abs_diff(4) <= DEAD_TOLERANCE,
                format!("last hello at {heard}, dead at {dead}: {gap} ticks for dead interval 4"),
            )
        }
        _ => verdict(false, "child never marked dead"),
    }
}

fn self_healing(max_datagram: &mut usize) -> Verdict {
    let mut c = fleet(3, 2, LinkFault::default(), false);
    c.run_until(60, all_converged).unwrap();
    let id = child_id(1);
    let crashed = c.now();
    c.crash(id);
    let healed = c
        .run_until(30, |c| {
            c.child_view(id)
                .is_some_and(|r| r.discovered.get("runstate").map(String::as_str) == Some("running"))
                && c.log().iter().any(|l| l.contains("runstate=error"))
        })
        .unwrap();
    *max_datagram = (*max_datagram).max(c.max_datagram());
    match healed {
        Some(t) => verdict(t - crashed <= HEAL_BOUND, format!("running again {} ticks after the crash", t - crashed)),
        None => verdict(false, "never recovered"),
    }
}

fn enforcement(max_datagram: &mut usize) -> Verdict {
    let mut c = fleet(2, 3, LinkFault::default(), false);
    c.run_until(60, all_converged).unwrap();
    let id = child_id(0);
    let before = c.now();
    c.configure(id, &map(&[("image", "v2")])).unwrap();
    c.run_until(30, |c| {
        all_converged(c) && c.child_view(id).is_some_and(|r| r.discovered.get("image").map(String::as_str) == Some("v2"))
    })
    .unwrap();
    *max_datagram = (*max_datagram).max(c.max_datagram());
    let roll: Vec<String> = c
        .mutations()
        .iter()
        .filter(|m| m.node == id && m.tick >= before)
        .map(|m| m.mutation.clone())
        .collect();

    let set = layercake_lite();
    let node = Uuid::from_u128(0x10);
    let mut rec = NodeRecord::new(node);
    rec.discovered = map(&[("power", "off")]);
    rec.configured = map(&[("power", "on"), ("runstate", "running"), ("platform", "ipmi")]);
    let mut agent = Agent::new(
        AgentConfig::new(Uuid::from_u128(1), Role::Standalone),
        Arc::new(build_graph(&set)),
        vec![rec],
        vec![("ideal".into(), Box::new(IdealActuator::all(&set).with_latency(2)))],
    )
    .unwrap();
    let sub = agent.bus().subscribe(EventKind::StateMutation, EventFilter::any());
    let issued = |agent: &mut Agent, from: u64, to: u64| {
        for t in from..=to {
            agent.tick(t, &[]).unwrap();
        }
        sub.drain()
            .into_iter()
            .filter_map(|e| match e.payload {
                Payload::StateMutation(r) => Some(r.mutation),
                _ => None,
            })
            .collect::<Vec<_>>()
    };
    let first = issued(&mut agent, 1, 4);
    agent
        .set(node, Side::Configured, &map(&[("runstate", "unknown"), ("power", "off")]))
        .unwrap();
    let replaced = issued(&mut agent, 5, 20);
    let pass = roll == ["run_stop", "run_start"]
        && first == ["ipmi_power_on", "sync_discover"]
        && replaced == ["ipmi_power_off"];
    verdict(pass, format!("roll {roll:?}; chain {first:?} replaced by {replaced:?}"))
}

fn scenario_paths() -> Vec<std::path::PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "yaml"))
        .collect();
    paths.sort();
    paths
}

fn datagram_bound(max_datagram: &mut usize) -> Verdict {
    for path in scenario_paths() {
        let s = load_scenario(&path).unwrap();
        let report = s.run(&s.mutation_set().unwrap()).unwrap();
        *max_datagram = (*max_datagram).max(report.max_datagram);
    }
    verdict(
        *max_datagram <= MAX_DATAGRAM,
        format!("largest datagram {max_datagram} bytes, limit {MAX_DATAGRAM}"),
    )
}

fn determinism() -> Verdict {
    let paths = scenario_paths();
    let differing: Vec<String> = paths
        .iter()
        .filter_map(|path| {
            let s = load_scenario(path).unwrap();
            let set = s.mutation_set().unwrap();
            let a = s.run(&set).unwrap().log.join("\n");
            let b = s.run(&set).unwrap().log.join("\n");
            (a != b).then_some(s.name)
        })
        .collect();
    verdict(
        differing.is_empty(),
        format!("{} scenarios, differing logs: {differing:?}", paths.len()),
    )
}

fn scale() -> Verdict {
    let set = synthetic(6, 3);
    let began = Instant::now();
    let g = build_graph(&set);
    let build = began.elapsed();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut slowest = Duration::ZERO;
    for _ in 0..20 {
        let start = g.vertex_state(rng.gen_range(0..g.vertex_count()));
        let goal = g.vertex_state(rng.gen_range(0..g.vertex_count()));
        let began = Instant::now();
        find_chain(&g, &record(start, goal)).unwrap();
        slowest = slowest.max(began.elapsed());
    }
    verdict(
        build < BUILD_BUDGET && slowest < QUERY_BUDGET,
        format!("{} vertices built in {build:.2?}; slowest query {slowest:.2?}", g.vertex_count()),
    )
}

fn main() -> ExitCode {
    let mut max_datagram = 0;
    let verdicts = vec![
        ("graph matches the oracle construction", equivalence()),
        ("worked power examples", worked_examples()),
        ("stripping merges unreal states", stripping_structure()),
        ("chains repeat no state and respect the bound", lemmas()),
        ("chains are shortest", shortest()),
        ("eventual consistency under 20% loss", eventual_consistency(&mut max_datagram)),
        ("silent child marked dead", dead_detection(&mut max_datagram)),
        ("crashed workload heals", self_healing(&mut max_datagram)),
        ("continuous enforcement", enforcement(&mut max_datagram)),
        ("datagrams fit the size limit", datagram_bound(&mut max_datagram)),
        ("scenario runs are deterministic", determinism()),
        ("graph build and search scale", scale()),
    ];
    let mut failures = 0;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        failures += usize::from(!v.pass);
        let mark = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {mark} {name}: {}", i + 1, v.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
