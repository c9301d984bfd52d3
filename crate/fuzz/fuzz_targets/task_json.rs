#![no_main]

use libfuzzer_sys::fuzz_target;
use metadyn::tasks::{BanditTask, FourierTask, LinearTask};

fn round_trip<T>(data: &[u8], valid: impl Fn(&T) -> bool)
where
    T: serde::de::DeserializeOwned + serde::Serialize + PartialEq + std::fmt::Debug,
{
    if let Ok(t) = serde_json::from_slice::<T>(data) {
        if valid(&t) {
            let back: T = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
            assert_eq!(back, t);
        }
    }
}

fuzz_target!(|data: &[u8]| {
    round_trip::<LinearTask>(data, |t| t.validate().is_ok());
    round_trip::<FourierTask>(data, |t| t.validate().is_ok());
    round_trip::<BanditTask>(data, |t| t.validate().is_ok());
});
