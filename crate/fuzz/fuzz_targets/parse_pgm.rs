#![no_main]

use libfuzzer_sys::fuzz_target;
use sccor::image_io::{encode_pgm, parse_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pgm(data) {
        assert_eq!(img.data.len(), img.height * img.width);
        let mask = img.to_mask();
        let back = parse_pgm(encode_pgm(&mask).as_bytes()).expect("encoded mask parses");
        assert_eq!(back.to_mask(), mask);
    }
});
