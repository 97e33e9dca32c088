//! Manifest and blob decoding. The input is split at the first NUL byte:
//! text manifest before it, raw blob after.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rehearsal::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(c) = Checkpoint::from_parts(manifest, blob) {
        let m = c.manifest().expect("decoded checkpoint re-encodes");
        let again = Checkpoint::from_parts(&m, &c.blob()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.manifest().unwrap(), m);
        assert_eq!(again.blob(), c.blob());
    }
});
