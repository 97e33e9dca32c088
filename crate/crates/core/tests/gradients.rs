mod common;

#[test]
fn primitives_match_central_differences() {
    let (first, second) = common::primitive_errors(11);
    for (name, err) in &first {
        assert!(*err < 1e-4, "{name}: first-order relative error {err:e}");
    }
    for (name, err) in &second {
        assert!(*err < 1e-3, "{name}: second-order relative error {err:e}");
    }
}

#[test]
fn losses_match_central_differences() {
    let (plain, penalty) = common::loss_errors(12);
    for (name, err) in &plain {
        assert!(*err < 1e-4, "{name}: relative error {err:e}");
    }
    for (name, err) in &penalty {
        assert!(*err < 1e-3, "{name}: relative error {err:e}");
    }
}
