#![no_main]

use libfuzzer_sys::fuzz_target;
use rehearsal::checkpoint::Checkpoint;
use rehearsal::short_term::ReplayBuffer;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    let Ok(c) = Checkpoint::from_parts(manifest, blob) else {
        return;
    };
    let Ok(replay) = ReplayBuffer::from_checkpoint(&c, 0) else {
        return;
    };
    assert!(replay.len() <= replay.capacity());
    if let Ok(first) = replay.to_checkpoint() {
        let again = ReplayBuffer::from_checkpoint(&first, 0).expect("encoded replay decodes");
        assert_eq!(again.to_checkpoint().unwrap().blob(), first.blob());
    }
});
