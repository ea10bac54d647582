use serde::{Deserialize, Serialize};

pub const WEI_PER_ETH: u128 = 1_000_000_000_000_000_000;

/// Intrinsic-gas cost model: a flat base plus a per-byte charge that is
/// cheaper for zero bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub base_gas: u64,
    pub gas_per_nonzero_payload_byte: u64,
    pub gas_per_zero_payload_byte: u64,
    pub gas_price_wei: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        // 0.115 gwei puts a ~150-byte post at about 0.0000036 ETH.
        Self {
            base_gas: 21_000,
            gas_per_nonzero_payload_byte: 68,
            gas_per_zero_payload_byte: 4,
            gas_price_wei: 115_000_000,
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_gas == 0
            || self.gas_per_nonzero_payload_byte == 0
            || self.gas_per_zero_payload_byte == 0
            || self.gas_price_wei == 0
        {
            return Err("gas schedule fields must all be positive".into());
        }
        Ok(())
    }

    pub fn gas_used(&self, payload: &[u8]) -> u64 {
        let zeros = payload.iter().filter(|&&b| b == 0).count() as u64;
        let nonzeros = payload.len() as u64 - zeros;
        self.base_gas
            + nonzeros * self.gas_per_nonzero_payload_byte
            + zeros * self.gas_per_zero_payload_byte
    }

    pub fn cost_wei(&self, gas_used: u64) -> u128 {
        gas_used as u128 * self.gas_price_wei as u128
    }
}

/// Formats wei as a decimal ETH string without floating point rounding.
pub fn format_eth(wei: u128) -> String {
    let whole = wei / WEI_PER_ETH;
    let frac = wei % WEI_PER_ETH;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:018}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}
