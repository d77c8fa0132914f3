#![no_main]

use libfuzzer_sys::fuzz_target;

// The experiment config parser is the only surface that consumes
// untrusted bytes: arbitrary input must produce a structured error,
// never a panic, and accepted configs must re-validate after a
// serialization round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = npf::parse_config(text) {
        let echoed = serde_json::to_string(&config).expect("accepted configs serialize");
        let reparsed = npf::parse_config(&echoed).expect("echoed configs reparse");
        assert_eq!(config.mc.seed, reparsed.mc.seed);
        assert_eq!(config.grid.steps, reparsed.grid.steps);
    }
});
