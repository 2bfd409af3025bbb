//! Recording input and log-mel filterbank features.

mod cache;
mod fbank;
mod wav;

pub use cache::{read_fbank_cache, write_fbank_cache};
pub use fbank::{compute_fbank, hz_to_mel, mel_to_hz, FbankConfig, FbankMatrix, MelFilterbank, Window};
pub use wav::{read_wav, write_wav, Waveform};
