#![no_main]

use libfuzzer_sys::fuzz_target;
use rehearsal::harness::metrics::{parse, render};

fuzz_target!(|text: &str| {
    let Ok(rows) = parse(text) else {
        return;
    };
    // NaN fields defeat row equality, so compare the text.
    let out = render(&rows).expect("parsed rows render");
    let again = parse(&out).expect("rendered metrics parse");
    assert_eq!(render(&again).unwrap(), out);
});
