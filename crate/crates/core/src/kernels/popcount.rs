/// Population count strategy used by the binary kernels.
pub trait Popcount {
    fn count(word: u32) -> u32;
}

/// `u32::count_ones`; lowers to the hardware instruction when the calling
/// function is compiled with it enabled.
pub struct NativePopcount;

impl Popcount for NativePopcount {
    #[inline(always)]
    fn count(word: u32) -> u32 {
        word.count_ones()
    }
}

/// Branch-free SWAR bit count, for targets without a popcount instruction.
pub struct PortablePopcount;

impl Popcount for PortablePopcount {
    #[inline(always)]
    fn count(word: u32) -> u32 {
        let mut v = word;
        v -= (v >> 1) & 0x5555_5555;
        v = (v & 0x3333_3333) + ((v >> 2) & 0x3333_3333);
        v = (v + (v >> 4)) & 0x0f0f_0f0f;
        v.wrapping_mul(0x0101_0101) >> 24
    }
}

/// Runtime choice of popcount path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopcountImpl {
    #[default]
    Native,
    Portable,
}

impl PopcountImpl {
    /// Whether the native path uses a dedicated instruction on this host.
    pub fn hardware_available() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("popcnt")
        }
        #[cfg(target_arch = "aarch64")]
        {
            true
        }
        #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
        {
            false
        }
    }
}
