#![no_main]

use std::path::Path;

use cctune::harness::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = cctune::json::from_str::<Scenario>(text, Path::new("fuzz.json")) {
            let _ = s.validate();
        }
    }
});
