#![no_main]

use libfuzzer_sys::fuzz_target;
use sccor::flo::{read_flo, write_flo};

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = read_flo(data) {
        let again = write_flo(&flow).expect("decoded flow is finite");
        assert_eq!(again, data);
    }
});
