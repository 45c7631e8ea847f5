#![no_main]

use libfuzzer_sys::fuzz_target;
use peergrade::fitfile::FitFile;

fuzz_target!(|data: &[u8]| {
    let Ok(f) = FitFile::parse_slice(data) else { return };
    let text = f.to_json();
    let again = FitFile::parse_slice(text.as_bytes()).expect("rendered fit parses");
    assert_eq!(again.to_json(), text);
});
