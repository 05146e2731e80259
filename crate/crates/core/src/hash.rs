//! Stable 64-bit FNV-1a content hashes for ids and manifests.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(OFFSET)
    }
}

impl Fnv64 {
    pub fn update(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(PRIME);
        }
        self
    }

    pub fn update_f64s(&mut self, xs: &[f64]) -> &mut Self {
        for x in xs {
            self.update(&x.to_le_bytes());
        }
        self
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

pub fn fnv_hex(bytes: &[u8]) -> String {
    Fnv64::default().update(bytes).hex()
}
