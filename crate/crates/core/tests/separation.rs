mod common;

use common::separation_check;

#[test]
fn noise_free_branches_are_exact() {
    for (l, seed) in [(0, 11), (1, 12), (3, 13)] {
        let c = separation_check(l, seed);
        for (name, leak) in ["D", "O", "N"].iter().zip(c.leakage) {
            assert!(leak < 1e-20, "L = {l}, branch {name}: leakage {leak:e}");
        }
        assert!(c.combiner_error < 1e-10, "combiner error {:e}", c.combiner_error);
        assert!(c.null_error < 1e-10, "precoder null error {:e}", c.null_error);
    }
}
