#![no_main]

use libfuzzer_sys::fuzz_target;
use ssm_lfi::transition::TransitionModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = TransitionModel::from_record(text) {
            // accepted records re-encode and decode to the same model
            let again = TransitionModel::from_record(&model.to_record().unwrap()).unwrap();
            assert_eq!(again.kind(), model.kind());
            assert_eq!(again.dim(), model.dim());
        }
    }
});
