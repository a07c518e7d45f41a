#![no_main]

use std::path::Path;

use cctune::netsim::LinkSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(l) = cctune::json::from_str::<LinkSpec>(text, Path::new("fuzz.json")) {
            let _ = l.validate();
        }
    }
});
