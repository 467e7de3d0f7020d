use echosyn_nn::{Param, Tensor};
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

pub fn params_hash(params: &[Param<f32>]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        hash_tensor_into(&mut h, &p.value);
    }
    hex::encode(&h.finalize()[..8])
}

pub fn tensors_hash<'a>(tensors: impl IntoIterator<Item = &'a Tensor<f32>>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        hash_tensor_into(&mut h, t);
    }
    hex::encode(&h.finalize()[..8])
}

fn hash_tensor_into(h: &mut Sha256, t: &Tensor<f32>) {
    for &e in t.shape() {
        h.update((e as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
}
