//! Network configuration and its flat `key=value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::blocks::XFUSE_GROUPS;
use crate::error::{Error, Result};

pub const STAGES: usize = 4;
pub const DECODER_SCALES: usize = 3;

/// Topology of the encoder-decoder. Fully determines the parameter table,
/// the parameter count and the MAC count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Channels of encoder stage 1; stage `i` has `base_width · 2^i`.
    pub base_width: usize,
    pub encoder_depths: [usize; STAGES],
    pub decoder_scales: usize,
    /// Channels produced by the multi-level aggregation.
    pub fused_dim: usize,
    pub sn_enabled: bool,
    pub sppf_enabled: bool,
}

impl Default for NetworkConfig {
    /// The calibrated configuration; see [`calibrate`](super::calibrate).
    fn default() -> Self {
        Self::calibrated()
    }
}

impl NetworkConfig {
    /// Result of `calibrate(5.85e6, 15.76e9, 0.15)`, frozen so loading it needs no search.
    pub fn calibrated() -> Self {
        Self::with_width(40, [2, 2, 4, 4])
    }

    /// `fused_dim = 4 · base_width`, every block toggle on.
    pub fn with_width(base_width: usize, encoder_depths: [usize; STAGES]) -> Self {
        NetworkConfig {
            base_width,
            encoder_depths,
            decoder_scales: DECODER_SCALES,
            fused_dim: 4 * base_width,
            sn_enabled: true,
            sppf_enabled: true,
        }
    }

    /// One LD block per stage.
    pub fn tiny(base_width: usize) -> Self {
        Self::with_width(base_width, [1; STAGES])
    }

    pub fn stage_widths(&self) -> [usize; STAGES] {
        std::array::from_fn(|i| self.base_width << i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::InvalidConfig("base_width must be positive".into()));
        }
        if !self.base_width.is_multiple_of(XFUSE_GROUPS) {
            return Err(Error::InvalidConfig(format!(
                "base_width {} must be divisible by {XFUSE_GROUPS} (decoder group convolution)",
                self.base_width
            )));
        }
        if let Some(i) = self.encoder_depths.iter().position(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("encoder_depths[{i}] must be at least 1")));
        }
        if self.decoder_scales != DECODER_SCALES {
            return Err(Error::InvalidConfig(format!(
                "decoder_scales must be {DECODER_SCALES}, got {}",
                self.decoder_scales
            )));
        }
        if self.fused_dim == 0 {
            return Err(Error::InvalidConfig("fused_dim must be positive".into()));
        }
        Ok(())
    }

    /// Input sizes must halve cleanly down to the deepest stage.
    pub fn check_input_hw(&self, h: usize, w: usize) -> Result<()> {
        let factor = 1 << (STAGES - 1);
        if h == 0 || w == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
            return Err(Error::invalid(
                "forward",
                format!("input size {h}x{w} must be a positive multiple of {factor}"),
            ));
        }
        Ok(())
    }

    pub fn to_document(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "base_width={}", self.base_width);
        let _ = writeln!(out, "stage_widths={}", join(&self.stage_widths()));
        let _ = writeln!(out, "encoder_depths={}", join(&self.encoder_depths));
        let _ = writeln!(out, "decoder_scales={}", self.decoder_scales);
        let _ = writeln!(out, "fused_dim={}", self.fused_dim);
        let _ = writeln!(out, "sn_enabled={}", self.sn_enabled);
        let _ = writeln!(out, "sppf_enabled={}", self.sppf_enabled);
        out
    }

    /// Parse a document holding only network keys.
    pub fn from_document(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let cfg = Self::take_from(&mut doc)?;
        doc.finish()?;
        Ok(cfg)
    }

    /// Consume the network keys of `doc`, leaving any others in place.
    pub fn take_from(doc: &mut KvDoc) -> Result<Self> {
        let base_width: usize = doc.require("base_width")?;
        let depths: Vec<usize> = doc.require_list("encoder_depths")?;
        let encoder_depths: [usize; STAGES] = depths.as_slice().try_into().map_err(|_| {
            Error::InvalidConfig(format!("encoder_depths needs {STAGES} entries, got {}", depths.len()))
        })?;
        let mut cfg = Self::with_width(base_width, encoder_depths);
        if let Some(v) = doc.take("decoder_scales")? {
            cfg.decoder_scales = v;
        }
        if let Some(v) = doc.take("fused_dim")? {
            cfg.fused_dim = v;
        }
        if let Some(v) = doc.take("sn_enabled")? {
            cfg.sn_enabled = v;
        }
        if let Some(v) = doc.take("sppf_enabled")? {
            cfg.sppf_enabled = v;
        }
        if let Some(widths) = doc.take_list::<usize>("stage_widths")? {
            if widths != cfg.stage_widths() {
                return Err(Error::InvalidConfig(format!(
                    "stage_widths {widths:?} disagree with base_width {base_width} (expected {:?})",
                    cfg.stage_widths()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A flat `key=value` document: one pair per line, `#` starts a comment.
#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(KvDoc { entries })
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.entries
            .remove(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.entries
            .remove(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse()
                            .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {item:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn require_list<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        self.take_list(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::InvalidConfig(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trip() {
        let mut cfg = NetworkConfig::with_width(12, [2, 1, 3, 1]);
        cfg.sn_enabled = false;
        cfg.fused_dim = 20;
        let text = cfg.to_document();
        assert!(text.contains("stage_widths=12,24,48,96\n"));
        assert_eq!(NetworkConfig::from_document(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = NetworkConfig::from_document("# tiny\nbase_width = 8\nencoder_depths=1,1,1,1\n").unwrap();
        assert_eq!(cfg, NetworkConfig::tiny(8));
    }

    #[test]
    fn violations_are_named() {
        let cases = [
            ("base_width=8\nencoder_depths=1,0,1,1", "encoder_depths[1]"),
            ("base_width=6\nencoder_depths=1,1,1,1", "divisible by 4"),
            ("base_width=8\nencoder_depths=1,1,1", "4 entries"),
            ("base_width=8\nencoder_depths=1,1,1,1\nwidth=3", "unknown key width"),
            (
                "base_width=8\nencoder_depths=1,1,1,1\nstage_widths=8,16,32,32",
                "stage_widths",
            ),
            ("encoder_depths=1,1,1,1", "missing key base_width"),
            ("base_width=8\nbase_width=8", "duplicate key"),
            (
                "base_width=8\nencoder_depths=1,1,1,1\ndecoder_scales=2",
                "decoder_scales",
            ),
        ];
        for (text, needle) in cases {
            let err = NetworkConfig::from_document(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
        }
    }

    #[test]
    fn input_size_must_divide_by_eight() {
        let cfg = NetworkConfig::tiny(4);
        assert!(cfg.check_input_hw(64, 24).is_ok());
        assert!(cfg.check_input_hw(60, 64).is_err());
        assert!(cfg.check_input_hw(0, 64).is_err());
    }
}
