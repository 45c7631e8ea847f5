#![no_main]

use libfuzzer_sys::fuzz_target;
use peergrade::data::csv_io;
use peergrade::TruthSource;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = csv_io::parse_truth(data, TruthSource::Ta) else { return };
    let mut out = Vec::new();
    csv_io::write_truth(&t, &mut out).expect("in-memory write");
    let again = csv_io::parse_truth(&out, TruthSource::Ta).expect("rendered truth parses");
    assert_eq!(again, t);
});
