#![no_main]

use libfuzzer_sys::fuzz_target;
use sccor::config::KeyValues;
use sccor::synth::ToyConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(kv) = KeyValues::parse(text) {
        let again = KeyValues::parse(&kv.to_text()).expect("serialized config parses");
        assert_eq!(again, kv);
        if let Ok(cfg) = ToyConfig::from_kv(&kv) {
            assert_eq!(
                ToyConfig::from_kv(&cfg.to_kv()).expect("round trip").to_kv(),
                cfg.to_kv()
            );
        }
    }
});
