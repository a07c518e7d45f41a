#![no_main]

use std::path::Path;

use cctune::customizer::CustomizerConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = cctune::json::from_str::<CustomizerConfig>(text, Path::new("fuzz.json")) {
            if c.validate().is_ok() {
                let _ = c.safe();
            }
        }
    }
});
