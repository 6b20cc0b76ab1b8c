#![no_main]

use libfuzzer_sys::fuzz_target;
use seqstack::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode(data) {
        assert_eq!(encode(&params), data);
    }
});
