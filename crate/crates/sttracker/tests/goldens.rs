//! Regression guard: recompute every golden and compare against the
//! checked-in hashes.

use sttracker::golden::{compute_goldens, parse_goldens};

#[test]
fn committed_goldens_match() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("goldens/goldens.txt");
    let text = std::fs::read_to_string(&path).expect("goldens file present");
    let want = parse_goldens(&text);
    let got = compute_goldens().unwrap();
    assert_eq!(want.len(), got.len(), "golden count drifted");
    for ((wl, wh), (gl, gh)) in want.iter().zip(&got) {
        assert_eq!(wl, gl, "golden label order drifted");
        assert_eq!(wh, gh, "golden {wl} drifted");
    }
}
