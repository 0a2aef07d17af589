#![no_main]

use libfuzzer_sys::fuzz_target;
use locatednear::svm::SvmModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = SvmModel::read_text(data) {
        let text = model.to_text();
        let again = SvmModel::read_text(text.as_bytes()).expect("model re-reads");
        assert_eq!(again.to_text(), text);
    }
});
