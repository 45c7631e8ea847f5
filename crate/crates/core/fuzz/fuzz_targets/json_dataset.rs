#![no_main]

use libfuzzer_sys::fuzz_target;
use peergrade::data::json_io;

fuzz_target!(|data: &[u8]| {
    let Ok(d) = json_io::parse_slice(data) else { return };
    let text = json_io::render(&d);
    let again = json_io::parse_slice(&text).expect("rendered dataset parses");
    assert_eq!(again, d);
    assert_eq!(json_io::render(&again), text);
});
