//! Reader adapters that turn vendor recordings into [`RawRecording`]s.
//!
//! The rest of the pipeline only consumes containers; adapters live here so a
//! new dataset only needs a new [`RecordingReader`].

use std::fs;
use std::path::Path;

use super::{DataError, RawRecording, Result, BCIC_IV_2A_CHANNELS};

pub trait RecordingReader {
    fn read(&self, path: &Path, subject_id: &str, session_id: &str) -> Result<RawRecording>;
}

/// Event code marking a cue of unknown class (evaluation sessions).
pub const UNKNOWN_CUE: u32 = 783;
/// Offset such that class `k` (1-based) has cue code `768 + k`.
pub const CUE_BASE: u32 = 768;

/// GDF 1.x / 2.x reader.
#[derive(Debug, Clone, Default)]
pub struct GdfReader {
    /// Output names assigned positionally to the channels whose label starts
    /// with `channel_prefix`; `None` keeps the file labels.
    pub rename: Option<Vec<String>>,
    /// Only channels whose label starts with this prefix are kept.
    pub channel_prefix: Option<String>,
    /// True classes (1-based) for unknown-cue events, in event order.
    pub cue_labels: Option<Vec<u32>>,
}

impl GdfReader {
    /// BCIC-IV-2a layout: 22 `EEG*` channels renamed to 10-20 labels, EOG dropped.
    pub fn bcic_iv_2a() -> Self {
        Self {
            rename: Some(BCIC_IV_2A_CHANNELS.iter().map(|s| s.to_string()).collect()),
            channel_prefix: Some("EEG".into()),
            cue_labels: None,
        }
    }

    pub fn with_cue_labels(mut self, labels: Vec<u32>) -> Self {
        self.cue_labels = Some(labels);
        self
    }
}

/// Parses a true-label file: one class per line (1-based), `#` comments.
pub fn parse_cue_labels(text: &str) -> Result<Vec<u32>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 1.0)
                .map(|v| v as u32)
                .ok_or_else(|| DataError::Reader(format!("bad class label {l:?}")))
        })
        .collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn slice(&self, at: usize, len: usize) -> Result<&'a [u8]> {
        self.bytes.get(at..at + len).ok_or_else(|| {
            DataError::Reader(format!("file truncated: need bytes {at}..{}", at + len))
        })
    }
    fn u16(&self, at: usize) -> Result<u16> {
        Ok(u16::from_le_bytes(self.slice(at, 2)?.try_into().unwrap()))
    }
    fn u32(&self, at: usize) -> Result<u32> {
        Ok(u32::from_le_bytes(self.slice(at, 4)?.try_into().unwrap()))
    }
    fn i64(&self, at: usize) -> Result<i64> {
        Ok(i64::from_le_bytes(self.slice(at, 8)?.try_into().unwrap()))
    }
    fn f64(&self, at: usize) -> Result<f64> {
        Ok(f64::from_le_bytes(self.slice(at, 8)?.try_into().unwrap()))
    }
    fn text(&self, at: usize, len: usize) -> Result<String> {
        let raw = self.slice(at, len)?;
        let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
        Ok(String::from_utf8_lossy(&raw[..end]).trim().to_string())
    }
}

struct ChannelHeader {
    label: String,
    to_microvolts: f64,
    phys_min: f64,
    phys_max: f64,
    dig_min: f64,
    dig_max: f64,
    samples_per_record: usize,
    gdf_type: u32,
}

impl ChannelHeader {
    fn scale(&self, digital: f64) -> f64 {
        let span = self.dig_max - self.dig_min;
        let phys = if span == 0.0 {
            digital
        } else {
            (digital - self.dig_min) * (self.phys_max - self.phys_min) / span + self.phys_min
        };
        phys * self.to_microvolts
    }
}

fn type_size(gdf_type: u32) -> Result<usize> {
    Ok(match gdf_type {
        1 | 2 => 1,
        3 | 4 => 2,
        5 | 6 | 16 => 4,
        7 | 8 | 17 => 8,
        t => return Err(DataError::Reader(format!("unsupported GDF sample type {t}"))),
    })
}

fn decode(gdf_type: u32, b: &[u8]) -> f64 {
    match gdf_type {
        1 => b[0] as i8 as f64,
        2 => b[0] as f64,
        3 => i16::from_le_bytes([b[0], b[1]]) as f64,
        4 => u16::from_le_bytes([b[0], b[1]]) as f64,
        5 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        6 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        7 => i64::from_le_bytes(b[..8].try_into().unwrap()) as f64,
        8 => u64::from_le_bytes(b[..8].try_into().unwrap()) as f64,
        16 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        _ => f64::from_le_bytes(b[..8].try_into().unwrap()),
    }
}

fn unit_factor_code(code: u16) -> f64 {
    match code {
        4256 => 1e6,
        4274 => 1e3,
        _ => 1.0,
    }
}

fn unit_factor_text(unit: &str) -> f64 {
    match unit {
        "V" => 1e6,
        "mV" => 1e3,
        _ => 1.0,
    }
}

impl RecordingReader for GdfReader {
    fn read(&self, path: &Path, subject_id: &str, session_id: &str) -> Result<RawRecording> {
        let bytes = fs::read(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        let c = Cursor { bytes: &bytes };
        let magic = c.text(0, 8)?;
        let version: f64 = magic
            .strip_prefix("GDF")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| DataError::Reader(format!("not a GDF file (magic {magic:?})")))?;
        let v2 = version >= 1.9;

        let (header_bytes, n_records, dur_num, dur_den, ns) = if v2 {
            (
                c.u16(184)? as usize * 256,
                c.i64(236)?,
                c.u32(244)?,
                c.u32(248)?,
                c.u16(252)? as usize,
            )
        } else {
            (c.i64(184)? as usize, c.i64(236)?, c.u32(244)?, c.u32(248)?, c.u32(252)? as usize)
        };
        if ns == 0 || n_records < 0 || dur_num == 0 || dur_den == 0 {
            return Err(DataError::Reader(format!(
                "invalid GDF header: {ns} channels, {n_records} records, duration {dur_num}/{dur_den}"
            )));
        }
        let record_secs = dur_num as f64 / dur_den as f64;

        // Variable header: field-major blocks, each `ns` entries wide.
        let mut off = 256;
        let mut field = |width: usize| {
            let at = off;
            off += width * ns;
            move |ch: usize| at + ch * width
        };
        let labels = field(16);
        let _transducer = field(80);
        let (physdim_text, physdim_code) = if v2 { (field(6), Some(field(2))) } else { (field(8), None) };
        let phys_min = field(8);
        let phys_max = field(8);
        let dig_min = field(8);
        let dig_max = field(8);
        let _prefilter = field(if v2 { 68 } else { 80 });
        if v2 {
            let _lowpass = field(4);
            let _highpass = field(4);
            let _notch = field(4);
        }
        let spr = field(4);
        let gdf_type = field(4);

        let mut channels = Vec::with_capacity(ns);
        for ch in 0..ns {
            let to_microvolts = match physdim_code {
                Some(code_at) => unit_factor_code(c.u16(code_at(ch))?),
                None => unit_factor_text(&c.text(physdim_text(ch), 8)?),
            };
            let (dmin, dmax) = if v2 {
                (c.f64(dig_min(ch))?, c.f64(dig_max(ch))?)
            } else {
                (c.i64(dig_min(ch))? as f64, c.i64(dig_max(ch))? as f64)
            };
            channels.push(ChannelHeader {
                label: c.text(labels(ch), 16)?,
                to_microvolts,
                phys_min: c.f64(phys_min(ch))?,
                phys_max: c.f64(phys_max(ch))?,
                dig_min: dmin,
                dig_max: dmax,
                samples_per_record: c.u32(spr(ch))? as usize,
                gdf_type: c.u32(gdf_type(ch))?,
            });
        }

        let keep: Vec<usize> = (0..ns)
            .filter(|&ch| {
                self.channel_prefix
                    .as_ref()
                    .is_none_or(|p| channels[ch].label.starts_with(p.as_str()))
            })
            .collect();
        if keep.is_empty() {
            return Err(DataError::Reader("no channels match the requested prefix".into()));
        }
        let spr0 = channels[keep[0]].samples_per_record;
        if keep.iter().any(|&ch| channels[ch].samples_per_record != spr0) {
            return Err(DataError::Reader("kept channels have different sampling rates".into()));
        }
        let fs = spr0 as f64 / record_secs;

        let mut record_len = 0;
        let mut chan_offset = Vec::with_capacity(ns);
        for ch in &channels {
            chan_offset.push(record_len);
            record_len += ch.samples_per_record * type_size(ch.gdf_type)?;
        }
        let n_records = n_records as usize;
        let n_samples = n_records * spr0;
        let data_start = header_bytes;
        c.slice(data_start, n_records * record_len)?;

        let mut signal = Vec::with_capacity(keep.len() * n_samples);
        let mut non_finite = 0usize;
        for &ch in &keep {
            let h = &channels[ch];
            let width = type_size(h.gdf_type)?;
            for rec in 0..n_records {
                let base = data_start + rec * record_len + chan_offset[ch];
                for s in 0..h.samples_per_record {
                    let at = base + s * width;
                    let v = h.scale(decode(h.gdf_type, &bytes[at..at + width]));
                    if v.is_finite() {
                        signal.push(v as f32);
                    } else {
                        non_finite += 1;
                        signal.push(0.0);
                    }
                }
            }
        }
        if non_finite > 0 {
            log::warn!("{}: replaced {non_finite} non-finite samples with 0", path.display());
        }

        let events = self.read_events(&c, data_start + n_records * record_len, v2, n_samples)?;

        let names = match &self.rename {
            Some(rename) => {
                if rename.len() != keep.len() {
                    return Err(DataError::Reader(format!(
                        "rename table has {} names for {} channels",
                        rename.len(),
                        keep.len()
                    )));
                }
                rename.clone()
            }
            None => keep.iter().map(|&ch| channels[ch].label.clone()).collect(),
        };
        RawRecording::new(signal, fs, names, events, subject_id, session_id)
    }
}

impl GdfReader {
    fn read_events(&self, c: &Cursor, at: usize, v2: bool, n_samples: usize) -> Result<Vec<(usize, u32)>> {
        if at >= c.bytes.len() {
            return Ok(Vec::new());
        }
        let mode = c.slice(at, 1)?[0];
        let count = if v2 {
            let b = c.slice(at + 1, 3)?;
            u32::from_le_bytes([b[0], b[1], b[2], 0]) as usize
        } else {
            c.u32(at + 4)? as usize
        };
        if mode != 1 && mode != 3 {
            return Err(DataError::Reader(format!("unknown GDF event table mode {mode}")));
        }
        let pos_at = at + 8;
        let typ_at = pos_at + 4 * count;
        let mut events = Vec::with_capacity(count);
        for i in 0..count {
            // GDF positions are 1-based.
            let pos = (c.u32(pos_at + 4 * i)? as usize).saturating_sub(1).min(n_samples.saturating_sub(1));
            events.push((pos, c.u16(typ_at + 2 * i)? as u32));
        }
        events.sort_by_key(|e| e.0);

        if let Some(labels) = &self.cue_labels {
            let unknown = events.iter().filter(|e| e.1 == UNKNOWN_CUE).count();
            if unknown != labels.len() {
                return Err(DataError::Reader(format!(
                    "{} cue labels supplied for {unknown} unknown-cue events",
                    labels.len()
                )));
            }
            let mut it = labels.iter();
            for e in events.iter_mut().filter(|e| e.1 == UNKNOWN_CUE) {
                e.1 = CUE_BASE + it.next().copied().unwrap_or(0);
            }
        }
        Ok(events)
    }
}
