#![no_main]

use libfuzzer_sys::fuzz_target;
use seqstack::data::{parse_raw_sessions, parse_sessions, ChunkOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_raw_sessions(text);
    for overlap in [false, true] {
        if let Ok(d) = parse_sessions(text, 6, ChunkOptions { overlap }) {
            // whatever parses must survive a write/read cycle
            let again = parse_sessions(&d.to_session_text(), 6, ChunkOptions { overlap: false }).unwrap();
            assert_eq!(again.sequences(), d.sequences());
        }
    }
});
