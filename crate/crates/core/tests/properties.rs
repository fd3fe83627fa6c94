mod common;

use common::{enumerate_best, random_problem};
use lemma_core::alloc::{solve_exact_problem, solve_greedy_problem, validate_allocation, AllocationProblem};
use lemma_core::dataset::generate_instances;
use lemma_core::harness::{run_episode, EvalConfig, OraclePolicy};
use lemma_core::lang::{lexicalize_high, parse_high};
use lemma_core::oracle::{generate_demonstration, run_oracle};
use lemma_core::scene::{Color, GoalAtom, GoalCondition, ObjectKind};
use lemma_core::taskgen::{sample_task, validate_instance, TaskType};
use lemma_core::world::World;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, m: usize) -> AllocationProblem {
    random_problem(&mut ChaCha8Rng::seed_from_u64(seed), m)
}

fn gamma(p: &AllocationProblem, a: &lemma_core::alloc::Allocation) -> Vec<Option<usize>> {
    p.ids.iter().map(|id| a.gamma.get(id).map(|r| r.index())).collect()
}

fn arb_type() -> impl Strategy<Value = TaskType> {
    (0..8usize).prop_map(|i| TaskType::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_is_optimal_and_greedy_bounded(seed in any::<u64>(), m in 1usize..=8, t_max in 20.0f64..150.0) {
        let p = problem(seed, m);
        let exact = solve_exact_problem(&p, t_max).unwrap();
        let greedy = solve_greedy_problem(&p, t_max).unwrap();
        let (u, t, a) = enumerate_best(&p, t_max);
        prop_assert_eq!(exact.total_utility, u);
        prop_assert_eq!(exact.total_time, t);
        prop_assert_eq!(gamma(&p, &exact), a);
        prop_assert!(greedy.total_utility <= exact.total_utility);
        prop_assert_eq!(validate_allocation(&p, &exact, t_max), Ok(()));
        prop_assert_eq!(validate_allocation(&p, &greedy, t_max), Ok(()));
    }

    #[test]
    fn scaling_keeps_the_optimal_assignment(seed in any::<u64>(), m in 1usize..=7, e in -3i32..=3) {
        // powers of two scale without rounding, so ties stay ties
        let k = 2f64.powi(e);
        let p = problem(seed, m);
        let base = solve_exact_problem(&p, 100.0).unwrap();
        let scaled = solve_exact_problem(&p.scaled(k), 100.0).unwrap();
        prop_assert_eq!(base.gamma, scaled.gamma);
    }

    #[test]
    fn sampled_instances_respect_the_catalogue(t in arb_type(), seed in any::<u64>()) {
        let w = World::default();
        let inst = sample_task(&w, t, seed).unwrap();
        prop_assert!(validate_instance(&w, &inst));
        let (lo, hi) = t.object_range();
        let n = inst.scene0.objects.len();
        prop_assert!(n >= lo && n <= hi);
        prop_assert!(n >= t.essential_count());
        for o in &inst.scene0.objects {
            prop_assert_eq!(o.spec.kind == ObjectKind::Tool, o.spec.color == Color::Yellow);
        }
        prop_assert_ne!(inst, sample_task(&w, t, seed.wrapping_add(1)).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_runs_keep_the_scene_consistent(t in arb_type(), seed in any::<u64>()) {
        let w = World::default();
        let inst = sample_task(&w, t, seed).unwrap();
        let run = run_oracle(&w, &inst).unwrap();
        prop_assert_eq!(run.dag.len(), t.subtask_count());
        for s in &run.states {
            prop_assert_eq!(s.check_invariants(&w), Ok(()));
        }
        let total: f64 = run.steps.iter().map(|s| s.receipt.duration).sum();
        prop_assert!((run.final_state().clock - total).abs() < 1e-9);
        prop_assert!(run.final_state().clock <= w.t_max);
        prop_assert!(run.states.windows(2).all(|p| p[0].clock <= p[1].clock));
    }

    #[test]
    fn oracle_policy_matches_the_demonstration(t in arb_type(), seed in any::<u64>()) {
        let w = World::default();
        let inst = sample_task(&w, t, seed).unwrap();
        let demo = generate_demonstration(&w, &inst, "x").unwrap();
        let out = run_episode(&w, &OraclePolicy, &inst, &demo.high, &EvalConfig::default(), 0);
        prop_assert!(out.success);
        prop_assert_eq!(out.final_state, demo.final_state);
    }
}

fn colors() -> Vec<Color> {
    [Color::Red, Color::Green, Color::Blue, Color::Pink, Color::White].to_vec()
}

/// Every goal shape a task type can carry, over all color assignments.
fn all_goals(t: TaskType) -> Vec<GoalCondition> {
    let atom = |top, bottom| if t.goal_on_pad() { GoalAtom::on_pad(top, bottom) } else { GoalAtom::on_cube(top, bottom) };
    let mut out = Vec::new();
    for a in colors() {
        for b in colors() {
            if !t.goal_on_pad() && a == b {
                continue;
            }
            if t.atom_count() == 1 {
                out.push(GoalCondition { atoms: vec![atom(a, b)] });
                continue;
            }
            for c in colors() {
                for d in colors() {
                    let g = GoalCondition { atoms: vec![atom(a, b), atom(c, d)] };
                    if g.is_well_formed() {
                        out.push(g);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn high_level_round_trip_over_every_color_assignment() {
    let mut cases = 0;
    for t in TaskType::ALL {
        for goal in all_goals(t) {
            let text = lexicalize_high(&goal, t).text;
            let (parsed, types) = parse_high(&text).unwrap();
            assert_eq!(parsed, goal, "{text}");
            assert!(types.contains(&t), "{text}");
            cases += 1;
        }
    }
    assert!(cases > 8 * 20);
}

#[test]
fn stack_and_poke_stack_read_the_same() {
    for goal in all_goals(TaskType::Stack) {
        assert_eq!(
            lexicalize_high(&goal, TaskType::Stack).text,
            lexicalize_high(&goal, TaskType::PokeStack).text
        );
    }
}

#[test]
fn generation_is_parallel_safe() {
    let w = World::default();
    for t in TaskType::ALL {
        let a = generate_instances(&w, 9, t, 16).unwrap();
        let b: Vec<_> = (0..16)
            .map(|i| sample_task(&w, t, lemma_core::taskgen::instance_seed(9, t, i)).unwrap())
            .collect();
        assert_eq!(a, b);
    }
}
