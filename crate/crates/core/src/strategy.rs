//! Multiple-access schemes as decode structures.
//!
//! Users and streams are 0-based. Stream `k < K` is user `k`'s private
//! stream; stream `K` is the common stream when one is present.
//!
//! A NOMA group's *decoding sequence* lists its users in the order their
//! streams are decoded by SIC: the first user's stream is decoded by everyone
//! in the group, the last user decodes every stream of the group. Sequences
//! are ascending in channel strength, so the strongest user performs `g - 1`
//! SIC steps.

use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Noma,
    Mulp,
    Rs1,
    Oma,
}

/// Partition of the users into equally sized groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn new(groups: Vec<Vec<usize>>, num_users: usize) -> Result<Self> {
        let mut seen = vec![false; num_users];
        for g in &groups {
            for &u in g {
                if u >= num_users || seen[u] {
                    return Err(Error::Config(format!("grouping is not a partition of 0..{num_users}")));
                }
                seen[u] = true;
            }
        }
        if seen.iter().any(|s| !s) || groups.iter().any(|g| g.is_empty()) {
            return Err(Error::Config(format!("grouping is not a partition of 0..{num_users}")));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_users(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Contiguous grouping: group `i` holds users `i*g .. (i+1)*g`.
pub fn build_grouping(num_users: usize, num_groups: usize) -> Result<Grouping> {
    if num_groups == 0 || num_groups >= num_users || num_users % num_groups != 0 {
        return Err(Error::Config(format!(
            "NOMA needs 1 <= G < K with G dividing K, got K={num_users}, G={num_groups}"
        )));
    }
    let g = num_users / num_groups;
    Grouping::new(
        (0..num_groups).map(|i| (i * g..(i + 1) * g).collect()).collect(),
        num_users,
    )
}

/// Per-group decoding sequences sorted by ascending channel norm (weakest
/// first), ties broken by user index.
pub fn decoding_order(cs: &ChannelSet, grouping: &Grouping, use_estimates: bool) -> Vec<Vec<usize>> {
    let chans = if use_estimates {
        cs.estimates()
    } else {
        cs.true_channels()
    };
    grouping
        .groups()
        .iter()
        .map(|g| {
            let mut seq = g.clone();
            seq.sort_by(|&a, &b| {
                chans[a]
                    .norm_squared()
                    .total_cmp(&chans[b].norm_squared())
                    .then(a.cmp(&b))
            });
            seq
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    kind: StrategyKind,
    num_users: usize,
    grouping: Option<Grouping>,
    decoding_orders: Option<Vec<Vec<usize>>>,
}

impl StrategyConfig {
    /// NOMA with contiguous groups and the default order in which the
    /// lowest-indexed user of each group is the strongest.
    pub fn noma(num_users: usize, num_groups: usize) -> Result<Self> {
        let grouping = build_grouping(num_users, num_groups)?;
        let orders = grouping
            .groups()
            .iter()
            .map(|g| g.iter().rev().copied().collect())
            .collect();
        Ok(Self {
            kind: StrategyKind::Noma,
            num_users,
            grouping: Some(grouping),
            decoding_orders: Some(orders),
        })
    }

    pub fn mulp(num_users: usize) -> Result<Self> {
        Self::plain(StrategyKind::Mulp, num_users)
    }

    pub fn rs1(num_users: usize) -> Result<Self> {
        Self::plain(StrategyKind::Rs1, num_users)
    }

    pub fn oma(num_users: usize) -> Result<Self> {
        Self::plain(StrategyKind::Oma, num_users)
    }

    fn plain(kind: StrategyKind, num_users: usize) -> Result<Self> {
        if num_users == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        Ok(Self {
            kind,
            num_users,
            grouping: None,
            decoding_orders: None,
        })
    }

    /// Replaces the NOMA decoding sequences. Each must be a permutation of
    /// its group.
    pub fn with_decoding_orders(mut self, orders: Vec<Vec<usize>>) -> Result<Self> {
        let grouping = self
            .grouping
            .as_ref()
            .ok_or_else(|| Error::Usage("decoding orders only apply to NOMA".into()))?;
        if orders.len() != grouping.num_groups() {
            return Err(Error::Config("one decoding order per group is required".into()));
        }
        for (seq, g) in orders.iter().zip(grouping.groups()) {
            let mut a = seq.clone();
            let mut b = g.clone();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Err(Error::Config(format!("{seq:?} is not a permutation of group {g:?}")));
            }
        }
        self.decoding_orders = Some(orders);
        Ok(self)
    }

    /// Sets NOMA decoding sequences from channel strength; other kinds are
    /// returned unchanged.
    pub fn ordered_by(self, cs: &ChannelSet, use_estimates: bool) -> Result<Self> {
        match &self.grouping {
            Some(g) => {
                let orders = decoding_order(cs, g, use_estimates);
                self.with_decoding_orders(orders)
            }
            None => Ok(self),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_groups(&self) -> Option<usize> {
        self.grouping.as_ref().map(Grouping::num_groups)
    }

    pub fn grouping(&self) -> Option<&Grouping> {
        self.grouping.as_ref()
    }

    pub fn decoding_orders(&self) -> Option<&[Vec<usize>]> {
        self.decoding_orders.as_deref()
    }

    pub fn common_stream_present(&self) -> bool {
        self.kind == StrategyKind::Rs1
    }

    /// Short label used in CSV output, e.g. `NOMA-G3`.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Noma => format!("NOMA-G{}", self.num_groups().unwrap_or(0)),
            StrategyKind::Mulp => "MULP".into(),
            StrategyKind::Rs1 => "RS1".into(),
            StrategyKind::Oma => "OMA".into(),
        }
    }
}

/// Strategy selector independent of `K`, as written in config files and on
/// the command line: `noma:G`, `mulp`, `rs1`, `oma`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub groups: usize,
}

impl StrategySpec {
    pub fn build(&self, num_users: usize) -> Result<StrategyConfig> {
        match self.kind {
            StrategyKind::Noma => StrategyConfig::noma(num_users, self.groups),
            StrategyKind::Mulp => StrategyConfig::mulp(num_users),
            StrategyKind::Rs1 => StrategyConfig::rs1(num_users),
            StrategyKind::Oma => StrategyConfig::oma(num_users),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = match lower.split_once([':', '-']) {
            Some((a, b)) => (a.to_string(), Some(b.trim_start_matches('g').to_string())),
            None => (lower.clone(), None),
        };
        let plain = |kind| match &arg {
            None => Ok(StrategySpec { kind, groups: 0 }),
            Some(_) => Err(Error::Config(format!("strategy {s:?} takes no argument"))),
        };
        match name.as_str() {
            "noma" => {
                let groups = arg
                    .ok_or_else(|| Error::Config("NOMA needs a group count, e.g. noma:3".into()))?
                    .parse()
                    .map_err(|_| Error::Config(format!("bad group count in {s:?}")))?;
                Ok(StrategySpec {
                    kind: StrategyKind::Noma,
                    groups,
                })
            }
            "mulp" | "mu-lp" => plain(StrategyKind::Mulp),
            "rs1" | "rs" => plain(StrategyKind::Rs1),
            "oma" => plain(StrategyKind::Oma),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StrategyKind::Noma => write!(f, "noma:{}", self.groups),
            StrategyKind::Mulp => write!(f, "mulp"),
            StrategyKind::Rs1 => write!(f, "rs1"),
            StrategyKind::Oma => write!(f, "oma"),
        }
    }
}

impl serde::Serialize for StrategySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for StrategySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A stream and the users that must decode it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    /// Owning user, `None` for the common stream.
    pub owner: Option<usize>,
    pub decoders: Vec<usize>,
}

/// A (decoder, stream) pair whose rate constrains the stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub decoder: usize,
    pub stream: usize,
}

/// Who decodes what, and in which order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamLayout {
    num_users: usize,
    streams: Vec<Stream>,
    sequences: Vec<Vec<usize>>,
}

impl StreamLayout {
    /// Builds a layout from per-user decode sequences over `num_streams`
    /// streams. Stream `k < num_users` belongs to user `k`.
    pub fn from_sequences(num_users: usize, num_streams: usize, sequences: Vec<Vec<usize>>) -> Result<Self> {
        if sequences.len() != num_users || num_streams < num_users {
            return Err(Error::Config("one decode sequence per user is required".into()));
        }
        let mut streams: Vec<Stream> = (0..num_streams)
            .map(|s| Stream {
                owner: (s < num_users).then_some(s),
                decoders: Vec::new(),
            })
            .collect();
        for (j, seq) in sequences.iter().enumerate() {
            for &s in seq {
                if s >= num_streams || streams[s].decoders.contains(&j) {
                    return Err(Error::Config(format!("bad decode sequence {seq:?} for user {j}")));
                }
                streams[s].decoders.push(j);
            }
        }
        for s in &mut streams {
            s.decoders.sort_unstable();
        }
        Ok(Self {
            num_users,
            streams,
            sequences,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn common_stream(&self) -> Option<usize> {
        (self.streams.len() > self.num_users).then_some(self.num_users)
    }

    /// Streams user `j` decodes, in SIC order; its own stream is last.
    pub fn sequence(&self, j: usize) -> &[usize] {
        &self.sequences[j]
    }

    pub fn sic_count(&self, j: usize) -> usize {
        self.sequences[j].len().saturating_sub(1)
    }

    pub fn decoders(&self, stream: usize) -> &[usize] {
        &self.streams[stream].decoders
    }

    /// Users that receive `stream` only as interference.
    pub fn noise_treaters(&self, stream: usize) -> Vec<usize> {
        (0..self.num_users)
            .filter(|j| !self.streams[stream].decoders.contains(j))
            .collect()
    }

    /// Every (decoder, stream) link, ordered by stream then decoder.
    pub fn links(&self) -> Vec<Link> {
        self.streams
            .iter()
            .enumerate()
            .flat_map(|(s, st)| st.decoders.iter().map(move |&j| Link { decoder: j, stream: s }))
            .collect()
    }

    /// Streams still interfering when user `link.decoder` decodes
    /// `link.stream`: everything not yet removed by SIC, excluding the
    /// stream itself.
    pub fn interferers(&self, link: Link) -> Result<Vec<usize>> {
        let seq = self
            .sequences
            .get(link.decoder)
            .ok_or_else(|| Error::Usage(format!("user {} out of range", link.decoder)))?;
        let pos = seq.iter().position(|&s| s == link.stream).ok_or_else(|| {
            Error::Usage(format!(
                "user {} does not decode stream {}",
                link.decoder, link.stream
            ))
        })?;
        let removed = &seq[..=pos];
        Ok((0..self.streams.len()).filter(|s| !removed.contains(s)).collect())
    }
}

/// Decode structure of a strategy. OMA uses the MU-LP layout; its precoders
/// put all power on one user.
pub fn stream_layout(config: &StrategyConfig) -> StreamLayout {
    let k = config.num_users;
    let (num_streams, sequences) = match config.kind {
        StrategyKind::Mulp | StrategyKind::Oma => (k, (0..k).map(|j| vec![j]).collect()),
        StrategyKind::Rs1 => (k + 1, (0..k).map(|j| vec![k, j]).collect()),
        StrategyKind::Noma => {
            let mut seqs = vec![Vec::new(); k];
            for order in config.decoding_orders.as_deref().unwrap_or(&[]) {
                for (pos, &user) in order.iter().enumerate() {
                    seqs[user] = order[..=pos].to_vec();
                }
            }
            (k, seqs)
        }
    };
    StreamLayout::from_sequences(k, num_streams, sequences).expect("strategy configs produce valid layouts")
}
