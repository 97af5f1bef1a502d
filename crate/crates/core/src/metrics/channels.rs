use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Contextual,
    Motion,
}

/// Share of a sequence's latent bits carried by each channel, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBitrateReport {
    pub kind: ChannelKind,
    /// `(channel, ratio)` sorted by descending ratio, ties by channel index.
    pub ratios: Vec<(usize, f64)>,
}

impl ChannelBitrateReport {
    pub fn top(&self, n: usize) -> &[(usize, f64)] {
        &self.ratios[..n.min(self.ratios.len())]
    }

    /// Ratios in channel order.
    pub fn by_channel(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ratios.len()];
        for &(c, r) in &self.ratios {
            out[c] = r;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,channel,ratio\n");
        for (i, (c, r)) in self.ratios.iter().enumerate() {
            s.push_str(&format!("{},{},{:.9}\n", i + 1, c, r));
        }
        s
    }
}

/// `bits[t][c]` holds the bits spent on channel `c` of frame `t`.
pub fn channel_bitrate_ratio(bits: &[Vec<f64>], kind: ChannelKind) -> Result<ChannelBitrateReport> {
    let channels = bits.first().map_or(0, |f| f.len());
    if bits.iter().any(|f| f.len() != channels) {
        return Err(NvcError::ShapeMismatch("frames disagree on channel count".into()));
    }
    let mut per_channel = vec![0.0f64; channels];
    for frame in bits {
        for (acc, &b) in per_channel.iter_mut().zip(frame) {
            *acc += b;
        }
    }
    let total: f64 = per_channel.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(NvcError::ZeroTotalBits);
    }
    let mut ratios: Vec<(usize, f64)> = per_channel.iter().map(|&b| b / total).enumerate().collect();
    ratios.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ChannelBitrateReport { kind, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_channels() {
        let r = channel_bitrate_ratio(&[vec![1.0, 0.5], vec![2.0, 0.5]], ChannelKind::Contextual).unwrap();
        assert_eq!(r.ratios, vec![(0, 0.75), (1, 0.25)]);
        let r = channel_bitrate_ratio(&[vec![0.25, 3.0]], ChannelKind::Motion).unwrap();
        assert_eq!(r.ratios, vec![(1, 12.0 / 13.0), (0, 1.0 / 13.0)]);
        assert_eq!(r.by_channel(), vec![1.0 / 13.0, 12.0 / 13.0]);
    }

    #[test]
    fn single_channel_and_zero_bits() {
        let r = channel_bitrate_ratio(&[vec![4.0], vec![1.0]], ChannelKind::Motion).unwrap();
        assert_eq!(r.ratios, vec![(0, 1.0)]);
        assert!(matches!(channel_bitrate_ratio(&[vec![0.0, 0.0]], ChannelKind::Motion), Err(NvcError::ZeroTotalBits)));
        assert!(matches!(channel_bitrate_ratio(&[], ChannelKind::Motion), Err(NvcError::ZeroTotalBits)));
    }
}
