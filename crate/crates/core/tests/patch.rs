mod common;

use common::{lshape_patch_mesh, patch_test, square_patch_mesh};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_field_is_exact_on_graded_squares(rounds in 0usize..4, seed in any::<u64>()) {
        let d = patch_test(square_patch_mesh(rounds, seed), &["s1", "s2"], &["s0", "s3"], &[0]);
        prop_assert!(d.max() <= 1e-10, "{d:?}");
    }

    #[test]
    fn linear_field_is_exact_on_graded_l_shapes(rounds in 0usize..4, seed in any::<u64>()) {
        let d = patch_test(lshape_patch_mesh(rounds, seed), &["s0", "s1", "s2"], &["s3", "s4", "s5"], &[0]);
        prop_assert!(d.max() <= 1e-10, "{d:?}");
    }
}
