//! The frozen coder vectors. Set `NVC_REGEN_VECTORS=1` to rewrite the file
//! after an intentional format change (and bump the format version).

use std::path::PathBuf;

use nvc_core::coder::vectors::{generate_suite, verify_backend, VectorSuite, SUITE_FILE};
use nvc_core::coder::{ideal_bits, CoderBackend, ReferenceCoder, FORMAT_VERSION};

fn suite_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("vectors").join(SUITE_FILE)
}

#[test]
fn reference_coder_matches_frozen_vectors() {
    let path = suite_path();
    if std::env::var_os("NVC_REGEN_VECTORS").is_some() {
        generate_suite().unwrap().save(&path).unwrap();
    }
    let frozen = VectorSuite::load(&path).unwrap();
    assert_eq!(frozen.format_version, FORMAT_VERSION);
    let passed = verify_backend(&ReferenceCoder, &frozen).unwrap();
    assert_eq!(passed.len(), frozen.vectors.len());
    assert!(passed.len() >= 6);

    // Inputs are rebuilt deterministically; only the bytes are frozen.
    let fresh = generate_suite().unwrap();
    assert_eq!(fresh, frozen);
}

#[test]
fn frozen_bytes_are_close_to_the_ideal_length() {
    let frozen = VectorSuite::load(&suite_path()).unwrap();
    for v in &frozen.vectors {
        let ideal = ideal_bits(&v.symbols, &v.table_index, &v.tables).unwrap();
        let actual = 8.0 * v.bytes.len() as f64;
        assert!(actual <= ideal * 1.01 + 64.0, "{}: {actual} bits vs ideal {ideal}", v.name);
        assert_eq!(ReferenceCoder.format_version(), frozen.format_version);
    }
}

#[test]
fn a_flipped_byte_is_detected() {
    let mut frozen = VectorSuite::load(&suite_path()).unwrap();
    let v = frozen.vectors.iter_mut().find(|v| v.name == "laplace_mixture").unwrap();
    v.bytes[10] ^= 0x40;
    assert!(verify_backend(&ReferenceCoder, &frozen).is_err());
}
