#![no_main]

use libfuzzer_sys::fuzz_target;
use peergrade::experiments::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<ExperimentSpec>(data) else { return };
    if spec.validate().is_err() {
        return;
    }
    for k in spec.k_values.iter().take(3) {
        let _ = spec.generator_config(*k, 0);
    }
    let text = serde_json::to_string(&spec).expect("spec serializes");
    let again: ExperimentSpec = serde_json::from_str(&text).expect("rendered spec parses");
    assert_eq!(serde_json::to_string(&again).unwrap(), text);
});
