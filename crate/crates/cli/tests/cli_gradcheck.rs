mod common;

use common::{code, segse};

#[test]
fn layer_scope_passes() {
    let out = segse(&["gradcheck", "--scope", "layer"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("all units passed"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn injected_fault_is_named_and_exits_numerical() {
    let out = segse(&["gradcheck", "--scope", "layer", "--inject-fault", "sigmoid"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let failing: Vec<&str> = stdout.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{stdout}");
    assert!(failing[0].split_whitespace().nth(1) == Some("sigmoid"), "{}", failing[0]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmoid"));
}

#[test]
fn block_fault_is_caught() {
    let out = segse(&["gradcheck", "--scope", "block", "--inject-fault", "rr_var1"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let failing: Vec<&str> = stdout.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{stdout}");
    assert!(failing[0].contains("rr_var1"));
}

#[test]
fn unknown_scope_or_unit_is_a_usage_error() {
    assert_eq!(code(&["gradcheck", "--scope", "planet"]), 1);
    assert_eq!(code(&["gradcheck", "--scope", "layer", "--inject-fault", "rr_segse"]), 1);
}
