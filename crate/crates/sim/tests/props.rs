mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vns_core::behavior::MorphologyTemplate;
use vns_core::protocol::Directive;
use vns_core::{NodeId, Pose2, SimTime};
use vns_sim::check::check_records;
use vns_sim::cli::run_scenario;
use vns_sim::scenario::{RobotSpec, ScriptItem};
use vns_sim::{parse_scenario, serialize_scenario, Action, Params, Scenario, World};

use common::random_body;

fn arb_action(robots: u32) -> impl Strategy<Value = Action> {
    let id = (0..robots).prop_map(NodeId);
    let name = prop_oneof![Just("chain".to_string()), Just("star".to_string())];
    prop_oneof![
        (name.clone(), id.clone()).prop_map(|(template, recruiter)| Action::Form { template, recruiter }),
        (name.clone(), name).prop_map(|(template_a, template_b)| Action::Split { template_a, template_b }),
        (0..robots, 1..robots).prop_map(move |(a, d)| Action::MergeBodies { a: NodeId(a), b: NodeId((a + d) % robots) }),
        id.prop_map(|node| Action::InjectFault { node }),
        prop::collection::vec((0.0..50.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..5).prop_map(|mut w| {
            w.sort_by(|a, b| a.0.total_cmp(&b.0));
            Action::StimulusPath { waypoints: w.into_iter().map(|(t, x, y)| [t, x, y]).collect() }
        }),
    ]
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (2u32..8).prop_flat_map(|n| {
        (
            any::<u64>(),
            prop::option::of(0.0..100.0f64),
            0.0..0.5f64,
            prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64), n as usize),
            2usize..6,
            prop::collection::vec((0.0..10.0f64, arb_action(n)), 0..8),
        )
            .prop_map(move |(seed, until, drop, poses, size, items)| {
                let robots = poses.into_iter().enumerate().map(|(i, (x, y, t))| RobotSpec { id: NodeId(i as u32), pose: [x, y, t], caps: None }).collect();
                let mut at = 0.0;
                let script = items
                    .into_iter()
                    .map(|(dt, action)| {
                        at += dt;
                        ScriptItem { at, action }
                    })
                    .collect();
                let templates: BTreeMap<String, MorphologyTemplate> = [
                    ("chain".to_string(), MorphologyTemplate::chain("chain", size)),
                    ("star".to_string(), MorphologyTemplate::star("star", size - 1)),
                ]
                .into();
                Scenario {
                    name: "generated".into(),
                    seed,
                    until,
                    params: Params { drop_probability: drop, ..Params::default() },
                    robots,
                    templates,
                    script,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_text_round_trips(s in arb_scenario()) {
        let text = serialize_scenario(&s);
        prop_assert_eq!(parse_scenario(&text).unwrap(), s);
    }
}

fn formation(n: u32, seed: u64, drop: f64) -> Scenario {
    let text = format!(
        "name = \"p\"\nseed = {seed}\nuntil = 12.0\n[params]\ndrop_probability = {drop}\n[templates.c]\nshape = \"chain\"\nsize = {n}\n{}[[script]]\nat = 0.0\naction = \"form\"\ntemplate = \"c\"\nrecruiter = 0\n[[script]]\nat = 1.0\naction = \"stimulus_path\"\nwaypoints = [[1.0, 1.0, 0.5], [8.0, 0.0, 0.4]]\n",
        (0..n).map(|i| format!("[[robots]]\nid = {i}\npose = [{}, {}, 0.0]\n", 0.4 * i as f64, if i % 2 == 0 { 0.3 } else { -0.3 })).collect::<String>()
    );
    parse_scenario(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_a_function_of_scenario_and_seed(n in 2u32..5, seed in any::<u64>(), drop in 0.0..0.2f64) {
        let s = formation(n, seed, drop);
        let a = run_scenario(&s, seed, 12.0).to_jsonl();
        let b = run_scenario(&s, seed, 12.0).to_jsonl();
        prop_assert!(a == b);
    }

    #[test]
    fn recorded_runs_pass_the_offline_check(n in 2u32..5, seed in any::<u64>()) {
        let s = formation(n, seed, 0.0);
        let t = run_scenario(&s, seed, 12.0);
        let rep = check_records(t.records());
        prop_assert!(rep.passed(), "{:?}", rep.failures);
        prop_assert!(rep.merges >= (n - 1) as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splits_leave_every_part_consistent(seed in any::<u64>(), n in 2u32..12, cuts in prop::collection::vec(any::<prop::sample::Index>(), 1..5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = random_body(&mut rng, &(0..n).map(NodeId).collect::<Vec<_>>());
        let mut w = World::new(Params::default(), seed);
        w.spawn_body(body.tree.clone(), Pose2::new(0.0, 0.0, 0.0)).unwrap();
        for cut in cuts {
            let multi: Vec<NodeId> = w.nodes().keys().copied().filter(|id| w.body_map(*id).unwrap().root() == *id && w.body_map(*id).unwrap().len() > 1).collect();
            if multi.is_empty() {
                break;
            }
            let root = *cut.get(&multi);
            let members = w.body_map(root).unwrap().tree.node_ids();
            let s = members[1 + cut.index(members.len() - 1)];
            w.directive(root, Directive::Detach(s)).unwrap();
            prop_assert!(w.run_until_quiescent(SimTime::from_secs(5.0)));
            let problems = w.check_consistency();
            prop_assert!(problems.is_empty(), "{:?}", problems);
        }
        let total: usize = w.nodes().keys().filter(|id| w.body_map(**id).unwrap().root() == **id).map(|id| w.body_map(*id).unwrap().len()).sum();
        prop_assert_eq!(total, n as usize);
    }
}
