use std::fs;
use std::path::Path;

use super::{DataError, EpochedDataset, Result};

/// Electrode order of the 22-channel BCIC-IV-2a montage.
pub const BCIC_IV_2A_CHANNELS: [&str; 22] = [
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3",
    "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2", "POz",
];

/// Named, ordered electrode list, optionally a subset of a parent montage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Montage {
    name: String,
    channels: Vec<String>,
    parent_indices: Option<Vec<usize>>,
}

impl Montage {
    /// A root montage (no parent).
    pub fn root(name: impl Into<String>, channels: Vec<String>) -> Result<Self> {
        check_unique(&channels)?;
        Ok(Self { name: name.into(), channels, parent_indices: None })
    }

    /// The 22-channel high-density layout.
    pub fn bcic_22() -> Self {
        Self::root("22", BCIC_IV_2A_CHANNELS.iter().map(|s| s.to_string()).collect())
            .expect("builtin channel names are unique")
    }

    /// Subset of `self` keeping the named channels, which must appear in parent order.
    pub fn subset(&self, name: impl Into<String>, channels: &[&str]) -> Result<Self> {
        let channels: Vec<String> = channels.iter().map(|s| s.to_string()).collect();
        self.subset_owned(name, channels)
    }

    fn subset_owned(&self, name: impl Into<String>, channels: Vec<String>) -> Result<Self> {
        check_unique(&channels)?;
        let indices = channels
            .iter()
            .map(|c| {
                self.channels
                    .iter()
                    .position(|p| p == c)
                    .ok_or_else(|| DataError::UnknownChannel(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::Montage(format!(
                "channels of {} must follow the order of parent montage {}",
                channels.join(","),
                self.name
            )));
        }
        Ok(Self { name: name.into(), channels, parent_indices: Some(indices) })
    }

    /// Headphone-like 4-electrode layout: lateral channels next to the ears.
    pub fn headphone_4p() -> Self {
        Self::bcic_22().subset("4p", &["C5", "C6", "CP3", "CP4"]).expect("builtin montage")
    }

    /// Headband-like 4-electrode layout: frontal row including Fz.
    pub fn headband_4b() -> Self {
        Self::bcic_22().subset("4b", &["Fz", "FC3", "FCz", "FC4"]).expect("builtin montage")
    }

    /// Builtin montage by name (`22`, `4p`, `4b`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "22" => Some(Self::bcic_22()),
            "4p" => Some(Self::headphone_4p()),
            "4b" => Some(Self::headband_4b()),
            _ => None,
        }
    }

    /// Parses a montage file (one channel per line, `#` comments) as a subset of `parent`.
    pub fn parse(name: impl Into<String>, text: &str, parent: &Montage) -> Result<Self> {
        let channels: Vec<String> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if channels.is_empty() {
            return Err(DataError::Montage("montage file lists no channels".into()));
        }
        parent.subset_owned(name, channels)
    }

    /// Loads a montage file; the montage is named after the file stem.
    pub fn load(path: &Path, parent: &Montage) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "montage".into());
        Self::parse(name, &text, parent)
    }

    /// Plain-text rendering accepted by [`Montage::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("# montage {}\n", self.name);
        for c in &self.channels {
            s.push_str(c);
            s.push('\n');
        }
        s
    }

    /// Re-expresses `child` (a subset of `self`) relative to `self`'s parent.
    pub fn compose(&self, child: &Montage) -> Result<Montage> {
        let child_idx = child.parent_indices.as_ref().ok_or_else(|| {
            DataError::Montage(format!("{} has no parent to compose with", child.name))
        })?;
        let indices = match &self.parent_indices {
            Some(own) => child_idx
                .iter()
                .map(|&i| {
                    own.get(i).copied().ok_or_else(|| {
                        DataError::Montage(format!("{} is not a subset of {}", child.name, self.name))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => child_idx.clone(),
        };
        Ok(Montage {
            name: format!("{}/{}", self.name, child.name),
            channels: child.channels.clone(),
            parent_indices: Some(indices),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn channels(&self) -> &[String] {
        &self.channels
    }
    pub fn parent_indices(&self) -> Option<&[usize]> {
        self.parent_indices.as_deref()
    }
    pub fn len(&self) -> usize {
        self.channels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Montage with one channel removed; used by backward elimination.
    pub fn without(&self, channel: &str) -> Result<Montage> {
        let keep: Vec<String> = self.channels.iter().filter(|c| *c != channel).cloned().collect();
        if keep.len() == self.channels.len() {
            return Err(DataError::UnknownChannel(channel.to_string()));
        }
        let parent_indices = self.parent_indices.as_ref().map(|idx| {
            self.channels
                .iter()
                .zip(idx)
                .filter(|(c, _)| *c != channel)
                .map(|(_, &i)| i)
                .collect()
        });
        Ok(Montage { name: format!("{}-{channel}", self.name), channels: keep, parent_indices })
    }
}

fn check_unique(channels: &[String]) -> Result<()> {
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(DataError::Montage(format!("duplicate channel {c}")));
        }
    }
    Ok(())
}

/// Restricts `d` to the channels of `m`, in montage order.
pub fn select_montage(d: &EpochedDataset, m: &Montage) -> Result<EpochedDataset> {
    let indices = d.channel_indices(m.channels())?;
    Ok(d.select_channel_indices(&indices))
}
