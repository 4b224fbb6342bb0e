//! Synthetic benchmark graphs.
//!
//! The generators build small host-behavior graphs with known role
//! structure so that ensemble behavior (submodel counts, coverage, false
//! positive and false negative rates) can be checked exactly.
//!
//! The two-role construction plants feature collisions across node types:
//! the same feature point carries a 3:1 label majority, so the first
//! submodel confidently learns the majority side and a later submodel picks
//! up the minority role. Anomalies are processes whose edge histogram mimics
//! no process role seen in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::LabeledGraph;
use crate::graph::{MemGraph, NodeId};

pub const T_ACCESS: &str = "access";
pub const T_CONNECT: &str = "connect";
pub const TY_PROCESS: &str = "process";
pub const TY_FILE: &str = "file";
pub const TY_SOCKET: &str = "socket";

/// One behavioral role only: hubs touching files. A single submodel covers
/// this graph.
pub fn single_role_graph(seed: u64, units: usize) -> MemGraph {
    let mut g = MemGraph::new();
    let mut ts = 0i64;
    let _ = seed;
    for i in 0..units {
        let hub = g.intern_node(&format!("hub{i}"), TY_PROCESS).unwrap();
        for j in 0..3 {
            let f = g.intern_node(&format!("f{i}_{j}"), TY_FILE).unwrap();
            g.append_internal(hub, f, T_ACCESS, ts);
            ts += 1;
        }
    }
    g
}

/// Two hidden roles per passive type plus planted cross-type feature
/// collisions.
///
/// Per unit: a hub process fans out via `access` to 3 files and 1 role-B
/// socket (collision at the file-majority point) and via double `connect`
/// to 3 cache sockets and 1 odd file (collision at the socket-majority
/// point), plus one single-`connect` socket. Processes are exclusively
/// out-heavy, so any in-heavy process is role-less by construction.
pub fn two_role_graph(seed: u64, units: usize) -> MemGraph {
    let mut g = MemGraph::new();
    let mut ts = (seed as i64) << 20;
    for i in 0..units {
        let hub = g.intern_node(&format!("hub{i}"), TY_PROCESS).unwrap();
        for j in 0..3 {
            let f = g.intern_node(&format!("f{i}_{j}"), TY_FILE).unwrap();
            g.append_internal(hub, f, T_ACCESS, ts);
            ts += 1;
        }
        let b = g.intern_node(&format!("b{i}"), TY_SOCKET).unwrap();
        g.append_internal(hub, b, T_ACCESS, ts);
        ts += 1;
        for j in 0..3 {
            let d = g.intern_node(&format!("d{i}_{j}"), TY_SOCKET).unwrap();
            g.append_internal(hub, d, T_CONNECT, ts);
            g.append_internal(hub, d, T_CONNECT, ts + 1);
            ts += 2;
        }
        let o = g.intern_node(&format!("o{i}"), TY_FILE).unwrap();
        g.append_internal(hub, o, T_CONNECT, ts);
        g.append_internal(hub, o, T_CONNECT, ts + 1);
        ts += 2;
        let s = g.intern_node(&format!("s{i}"), TY_SOCKET).unwrap();
        g.append_internal(hub, s, T_CONNECT, ts);
        ts += 1;
    }
    g
}

/// Plants `count` anomalous processes, each hammered by `connect` edges
/// from fresh remote sockets, an edge histogram no benign process role
/// exhibits. Returns the anomalous process ids; the remote peers stay
/// unlabeled (they sit 1 hop away, within tracing reach).
pub fn inject_anomalies(g: &mut MemGraph, count: usize, seed: u64) -> Vec<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut injected = Vec::new();
    let mut ts = 1 << 40;
    for i in 0..count {
        let a = g
            .intern_node(&format!("mal{seed}_{i}"), TY_PROCESS)
            .unwrap();
        injected.push(a);
        let n_remotes = 4;
        for r in 0..n_remotes {
            let remote = g
                .intern_node(&format!("rem{seed}_{i}_{r}"), TY_SOCKET)
                .unwrap();
            let burst = 4 + rng.gen_range(0..3);
            for _ in 0..burst {
                g.append_internal(remote, a, T_CONNECT, ts);
                ts += 1;
            }
        }
    }
    injected
}

/// Scene-styled benign graph: unit counts and fan-outs vary per scene and
/// per graph, drawn from small scene-specific ranges so a modest training
/// sample covers the feature space.
fn scene_graph(scene: usize, seed: u64, units: usize) -> MemGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = MemGraph::new();
    let mut ts = 0i64;
    for i in 0..units {
        let hub = g.intern_node(&format!("hub{i}"), TY_PROCESS).unwrap();
        let files = 2 + (scene % 3) + rng.gen_range(0..2);
        for j in 0..files {
            let f = g.intern_node(&format!("f{i}_{j}"), TY_FILE).unwrap();
            g.append_internal(hub, f, T_ACCESS, ts);
            ts += 1;
        }
        let daemons = 1 + (scene % 2) + rng.gen_range(0..2);
        for j in 0..daemons {
            let d = g.intern_node(&format!("d{i}_{j}"), TY_SOCKET).unwrap();
            let pulls = 2 + rng.gen_range(0..2);
            for _ in 0..pulls {
                g.append_internal(hub, d, T_CONNECT, ts);
                ts += 1;
            }
        }
        let sockets = 1 + rng.gen_range(0..2);
        for j in 0..sockets {
            let s = g.intern_node(&format!("s{i}_{j}"), TY_SOCKET).unwrap();
            g.append_internal(hub, s, T_CONNECT, ts);
            ts += 1;
        }
    }
    g
}

/// A six-scene corpus in the spirit of multi-scene information-flow
/// datasets: scenes 0..4 are benign behavioral mixes; scene 5 reuses the
/// scene-0 mix with injected anomalies.
pub fn six_scene_dataset(seed: u64, graphs_per_scene: usize, units: usize) -> Vec<LabeledGraph> {
    let mut out = Vec::new();
    for scene in 0..6usize {
        for gi in 0..graphs_per_scene {
            let gseed = seed
                .wrapping_mul(6007)
                .wrapping_add((scene * 1009 + gi) as u64);
            let base_scene = if scene == 5 { 0 } else { scene };
            let mut graph = scene_graph(base_scene, gseed, units);
            let mut anomalous = Vec::new();
            if scene == 5 {
                let ids = inject_anomalies(&mut graph, 5, gseed ^ 0xA11CE);
                anomalous = ids
                    .into_iter()
                    .map(|v| graph.node_name(v).to_string())
                    .collect();
            }
            out.push(LabeledGraph {
                id: format!("{}", scene * 100 + gi),
                scene,
                attack: scene == 5,
                anomalous_nodes: anomalous,
                graph,
            });
        }
    }
    out
}
