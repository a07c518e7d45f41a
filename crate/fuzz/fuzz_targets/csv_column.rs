#![no_main]

use libfuzzer_sys::fuzz_target;

// first line picks the column, the rest is the CSV
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == b'\n').unwrap_or(data.len());
    let Ok(metric) = std::str::from_utf8(&data[..split]) else { return };
    let body = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(values) = cctune::stats::read_column(body, metric) {
        let _ = cctune::harness::cdf_points(&values);
    }
});
