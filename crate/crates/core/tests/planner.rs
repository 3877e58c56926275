mod support;

use mmdb::planner::{self, LogicalPlan, Model, Op};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn partitions_are_maximal_and_acyclic(seed in any::<u64>(), size in 1usize..40) {
        let plan = support::random_dag(seed, size);
        let pd = planner::partition(&plan).unwrap();
        if let Err(e) = support::check_partition(&plan, &pd) {
            return Err(TestCaseError::fail(e));
        }
        let order = planner::topo_order(&pd).unwrap();
        if let Err(e) = support::check_order(&pd, &order) {
            return Err(TestCaseError::fail(e));
        }
    }

    #[test]
    fn decomposed_trees_match_direct_evaluation(seed in any::<u64>(), size in 1usize..16) {
        let plan = support::random_relational_dag(seed, size);
        let tables = support::relational_tables(seed ^ 0x9e37);
        let direct = support::reference_eval(&plan, &tables);
        let split = support::decomposed_eval(&plan, &tables);
        for (id, v) in &split {
            prop_assert_eq!(v, &direct[*id], "node {}", id);
        }
        let last = plan.len() - 1;
        prop_assert!(split.contains_key(&last));
    }

    #[test]
    fn plan_json_round_trips(seed in any::<u64>(), size in 1usize..20) {
        let plan = support::random_relational_dag(seed, size);
        let back = LogicalPlan::from_json(&plan.to_json()).unwrap();
        prop_assert_eq!(back, plan);
    }
}

#[test]
fn inter_model_node_stands_alone() {
    let mut p = LogicalPlan::new();
    let t = p.add(Op::OpenTable { name: "t".into() }, Model::Relational, vec![]);
    let f = p.add(Op::Filter { pred: "a > 1".into() }, Model::Relational, vec![t]);
    let a = p.add(Op::OpenArray { name: "m".into() }, Model::Array, vec![]);
    let j = p.add(
        Op::InterJoin { pred: "r.a = m.i".into(), left_alias: "r".into(), right_alias: "m".into(), output: Model::Relational },
        Model::InterModel,
        vec![f, a],
    );
    let s = p.add(Op::Sort { keys: vec!["a".into()] }, Model::Relational, vec![j]);
    let pd = planner::partition(&p).unwrap();
    assert_eq!(pd.partitions.len(), 4);
    let pj = pd.node_partition[j];
    assert_eq!(pd.partitions[pj].nodes, vec![j]);
    assert_ne!(pd.node_partition[s], pd.node_partition[f]);
    assert_eq!(pd.node_partition[t], pd.node_partition[f]);
    let order = planner::topo_order(&pd).unwrap();
    assert_eq!(order.last(), Some(&pd.node_partition[s]));
}
