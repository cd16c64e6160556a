#![no_main]

use libfuzzer_sys::fuzz_target;
use sccor::featbin::{decode_feature_map, encode_feature_map};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_feature_map(data) {
        assert_eq!(encode_feature_map(&map), data);
    }
});
