#![no_main]
use libfuzzer_sys::fuzz_target;

use dearsim::export::{read_reports_csv, write_reports_csv};

// Whatever parses must survive a write/read cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(reports) = read_reports_csv(data) else {
        return;
    };
    let mut first = Vec::new();
    write_reports_csv(&mut first, &reports).unwrap();
    let again = read_reports_csv(first.as_slice()).unwrap();
    let mut second = Vec::new();
    write_reports_csv(&mut second, &again).unwrap();
    assert_eq!(first, second);
});
