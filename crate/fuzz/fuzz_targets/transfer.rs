#![no_main]

use libfuzzer_sys::fuzz_target;
use seqstack::data::parse_transfer;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for max_len in [1, 4] {
        if let Ok(d) = parse_transfer(text, max_len) {
            assert_eq!(parse_transfer(&d.to_text(), max_len).unwrap().targets(), d.targets());
        }
    }
});
