#![no_main]
use libfuzzer_sys::fuzz_target;

use dearsim::cost::calibrate_alpha_beta;
use dearsim::export::read_measurements_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = read_measurements_csv(data) {
        if let Ok(cal) = calibrate_alpha_beta(&points, 64) {
            assert!(cal.alpha >= 0.0 && cal.beta >= 0.0);
        }
    }
});
