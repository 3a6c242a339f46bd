use std::collections::BTreeSet;

use dfl_core::schedule::{pair_connectivity, validate, Assignment, RoundPlan};
use dfl_core::{Graph, NodeId, Schedule, SchedulerName};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reachability by transitive closure of the adjacency matrix.
fn closure_connected(n: usize, edges: &[(u32, u32)]) -> bool {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        let (a, b) = (a as usize - 1, b as usize - 1);
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach[0].iter().all(|&r| r)
}

#[test]
fn connectivity_matches_transitive_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for n in 1..=6usize {
        let pairs: Vec<(u32, u32)> =
            (1..=n as u32).flat_map(|i| (i + 1..=n as u32).map(move |j| (i, j))).collect();
        for _ in 0..250 {
            let density: f64 = rng.random();
            let edges: Vec<(u32, u32)> = pairs.iter().copied().filter(|_| rng.random::<f64>() < density).collect();
            let g = Graph::new(n, edges.clone()).unwrap();
            assert_eq!(g.is_connected(), closure_connected(n, &edges), "n={n} edges={edges:?}");
            checked += 1;
        }
    }
    assert!(checked >= 1000);
}

fn edge_list() -> impl Strategy<Value = (usize, Vec<(u32, u32)>)> {
    (2usize..8).prop_flat_map(|n| {
        let n32 = n as u32;
        // Offset in 1..n from `a` never lands back on `a`.
        let edge = (1..=n32, 1..n32).prop_map(move |(a, off)| (a, (a - 1 + off) % n32 + 1));
        (Just(n), prop::collection::vec(edge, 0..20))
    })
}

proptest! {
    #[test]
    fn neighbors_are_symmetric((n, edges) in edge_list()) {
        let g = Graph::new(n, edges).unwrap();
        for i in g.nodes() {
            for &j in g.neighbors(i).unwrap() {
                prop_assert!(g.neighbors(j).unwrap().contains(&i));
                prop_assert_ne!(i, j);
            }
        }
    }

    #[test]
    fn build_ignores_order_and_duplicates((n, edges) in edge_list(), seed in any::<u64>()) {
        let g = Graph::new(n, edges.clone()).unwrap();
        let mut shuffled: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (b, a)).collect();
        shuffled.extend(edges.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(Graph::new(n, shuffled).unwrap(), g.clone());
        prop_assert_eq!(Graph::parse(&g.to_string()).unwrap(), g);
    }
}

/// Random schedule over nodes 1..=n whose plans satisfy role uniqueness.
fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    let plan = || {
        any::<u64>().prop_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 12u32;
            let mut ids: Vec<u32> = (1..=n).collect();
            use rand::seq::SliceRandom;
            ids.shuffle(&mut rng);
            let mut assignments = Vec::new();
            let mut rest = &ids[..rng.random_range(2..=n as usize)];
            while rest.len() >= 2 {
                let take = rng.random_range(2..=rest.len().min(5));
                let (group, tail) = rest.split_at(take);
                let clients = group[1..].iter().copied().map(NodeId).collect();
                assignments.push(Assignment::new(NodeId(group[0]), clients).unwrap());
                rest = tail;
            }
            RoundPlan::new(assignments)
        })
    };
    (plan(), plan()).prop_map(|(odd, even)| Schedule::new(odd, even).unwrap())
}

proptest! {
    #[test]
    fn schedule_text_roundtrip(s in schedule_strategy()) {
        prop_assert_eq!(Schedule::parse(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn message_count_is_client_total(s in schedule_strategy(), t in 1u32..50) {
        let expected: usize = s.plan_for_round(t).unwrap().assignments().iter().map(|a| a.clients().len()).sum();
        prop_assert_eq!(s.message_count(t, false).unwrap(), expected);
        prop_assert_eq!(s.message_count(t, true).unwrap(), 2 * expected);
    }

    #[test]
    fn plans_have_period_two(s in schedule_strategy(), t in 1u32..1000) {
        prop_assert_eq!(s.plan_for_round(t).unwrap(), s.plan_for_round(t + 2).unwrap());
    }
}

#[test]
fn builtins_fit_reference_graph() {
    let g = Graph::reference();
    for name in SchedulerName::ALL {
        let s = Schedule::builtin(name);
        assert_eq!(validate(&s, &g).violations, vec![], "scheduler {name}");
        assert!(pair_connectivity(&s, &g), "scheduler {name}");
        let covered: BTreeSet<NodeId> = s.nodes();
        assert_eq!(covered.len(), 10);
    }
}

#[test]
fn reference_graph_is_exactly_the_scheduled_links() {
    let mut links = BTreeSet::new();
    for name in SchedulerName::ALL {
        let s = Schedule::builtin(name);
        for plan in [s.odd_plan(), s.even_plan()] {
            for a in plan.assignments() {
                for c in a.clients() {
                    let (x, y) = (c.get().min(a.aggregator().get()), c.get().max(a.aggregator().get()));
                    links.insert((NodeId(x), NodeId(y)));
                }
            }
        }
    }
    let g = Graph::reference();
    assert_eq!(g.edges().collect::<BTreeSet<_>>(), links);
}
