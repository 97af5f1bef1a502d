//! Quality and rate metrics, BD-rate, per-channel bitrate analysis and the
//! CSV/SVG reports built on them.

mod bdrate;
mod channels;
mod psnr;
mod report;

pub use bdrate::{bd_rate, Pchip, RdCurve, RdPoint};
pub use channels::{channel_bitrate_ratio, ChannelBitrateReport, ChannelKind};
pub use psnr::{compound_psnr, mse, psnr_from_mse, psnr_rgb, psnr_yuv_compound, psnr_yuv_planes, Psnr, PSNR_CAP};
pub use report::{
    averaged_curve, bd_rate_by_sequence, channel_plot_svg, curves_by_sequence, rd_plot_svg, read_rd_csv, write_rd_csv,
    BdRateSummary, QualityMetric, RdRow,
};
