#![no_main]

use libfuzzer_sys::fuzz_target;
use metadyn::nets::archive::decode;

// Input: manifest JSON, a NUL byte, then the raw tensor bytes.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else { return };
    let bytes = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(archive) = decode(manifest, bytes) {
        for t in &archive.tensors {
            assert_eq!(t.data.len(), t.shape.iter().product::<usize>());
        }
    }
});
