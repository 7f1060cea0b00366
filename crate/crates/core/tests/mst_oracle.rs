mod common;

use bdseg_core::contour::{mst_kruskal, tree_max_path};
use proptest::prelude::*;

fn distinct_points(max: usize) -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::btree_set((0i64..12, 0i64..12), 1..=max).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kruskal_weight_is_minimal(points in distinct_points(6)) {
        let tree = mst_kruskal(&points).unwrap();
        prop_assert_eq!(tree.edges.len(), points.len() - 1);
        let brute = common::brute_force_mst_weight(&points);
        prop_assert!((tree.total_weight() - brute).abs() < 1e-9);
    }

    #[test]
    fn max_path_is_heaviest(points in distinct_points(7)) {
        let tree = mst_kruskal(&points).unwrap();
        let path = tree_max_path(&tree).unwrap();
        let brute = common::brute_force_max_path(tree.nodes.len(), &tree.edges);
        prop_assert!((path.length() - brute).abs() < 1e-9);
    }

    #[test]
    fn kruskal_ignores_input_order(mut points in distinct_points(20), rot in 0usize..20) {
        let a = mst_kruskal(&points).unwrap();
        let k = rot % points.len();
        points.rotate_left(k);
        points.reverse();
        prop_assert_eq!(mst_kruskal(&points).unwrap(), a);
    }
}
