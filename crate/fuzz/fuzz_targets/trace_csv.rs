#![no_main]

use libfuzzer_sys::fuzz_target;
use metadyn::analysis::csvio::{read_inner, read_learner, write_inner, write_learner};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_learner(data) {
        let mut out = Vec::new();
        if write_learner(&mut out, &t.payload_columns, &t.rows).is_ok() {
            assert_eq!(read_learner(out.as_slice()).expect("written trace rereads"), t);
        }
    }
    if let Ok(t) = read_inner(data) {
        let mut out = Vec::new();
        if write_inner(&mut out, &t.payload_columns, &t.rows).is_ok() {
            assert_eq!(read_inner(out.as_slice()).expect("written trace rereads"), t);
        }
    }
});
