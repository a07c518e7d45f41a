#![no_main]

use std::path::Path;

use cctune::rewards::RewardSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = cctune::json::from_str::<RewardSpec>(text, Path::new("fuzz.json")) {
            let _ = r.validate();
        }
    }
});
