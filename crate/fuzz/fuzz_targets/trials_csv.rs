#![no_main]
use libfuzzer_sys::fuzz_target;

use dearsim::export::{read_trials_csv, write_trials_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = read_trials_csv(data) else {
        return;
    };
    let mut first = Vec::new();
    write_trials_csv(&mut first, &trace).unwrap();
    let again = read_trials_csv(first.as_slice()).unwrap();
    let mut second = Vec::new();
    write_trials_csv(&mut second, &again).unwrap();
    assert_eq!(first, second);
});
