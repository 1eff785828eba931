//! End-to-end acceptance battery: runs every verification criterion at its
//! stated tolerance and prints one pass/fail line per criterion.

use salem_core::verify;

#[test]
fn acceptance() {
    let (measure, artifacts) = verify::criterion_measure_with_build();
    let dims = verify::criterion_dimension(artifacts.as_ref());
    let results = vec![
        verify::criterion_structural(),
        verify::criterion_oracle(),
        verify::criterion_divisors(),
        verify::criterion_wigert(),
        verify::criterion_envelope(),
        measure,
        dims,
        verify::criterion_properties(),
    ];
    let mut all_pass = true;
    for r in &results {
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
        if !r.pass {
            all_pass = false;
        }
        for d in &r.details {
            println!("    {d}");
        }
    }
    assert!(all_pass, "acceptance battery failed");
}
