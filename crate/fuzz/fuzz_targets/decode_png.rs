#![no_main]

use libfuzzer_sys::fuzz_target;
use sccor::image_io::{decode_frame_png, decode_png_gray};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png_gray(data) {
        assert_eq!(img.data.len(), img.height * img.width);
    }
    let _ = decode_frame_png(data);
});
