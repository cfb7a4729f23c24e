//! Pipeline inputs and their CSV representation.
//!
//! A dataset directory holds three files:
//!
//! * `users.csv`: `user,pretrusted` with `pretrusted ∈ {0,1}`
//! * `vouches.csv`: `voucher,vouchee`
//! * `comparisons.csv`: `user,entity_a,entity_b,comparison,privacy`
//!
//! A negative comparison means the user prefers `entity_a`. A comparison
//! `(a, b, r)` is equivalent to `(b, a, -r)`; rows are normalized so that
//! `entity_a < entity_b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privacy {
    Public,
    Private,
}

/// One judgment `r ∈ [-R_max, R_max]` of `entity_a` against `entity_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub user: UserId,
    pub entity_a: EntityId,
    pub entity_b: EntityId,
    pub value: f64,
    pub privacy: Privacy,
}

impl Comparison {
    /// Orders the pair so that `entity_a < entity_b`, negating the value if needed.
    pub fn normalized(self) -> Self {
        if self.entity_a > self.entity_b {
            Comparison {
                entity_a: self.entity_b,
                entity_b: self.entity_a,
                value: -self.value,
                ..self
            }
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub users: BTreeSet<UserId>,
    pub pretrusted: BTreeSet<UserId>,
    pub vouches: BTreeSet<(UserId, UserId)>,
    pub comparisons: Vec<Comparison>,
}

impl Dataset {
    /// Builds a dataset, checking ids and comparison ranges.
    ///
    /// Users appearing only in vouches or comparisons are added to `users`.
    pub fn new(
        users: impl IntoIterator<Item = UserId>,
        pretrusted: impl IntoIterator<Item = UserId>,
        vouches: impl IntoIterator<Item = (UserId, UserId)>,
        comparisons: impl IntoIterator<Item = Comparison>,
        comparison_max: f64,
    ) -> Result<Self> {
        let mut users: BTreeSet<UserId> = users.into_iter().collect();
        let pretrusted: BTreeSet<UserId> = pretrusted.into_iter().collect();
        users.extend(pretrusted.iter().copied());

        let mut vouch_set = BTreeSet::new();
        for (voucher, vouchee) in vouches {
            if voucher == vouchee {
                return Err(Error::data(format!("user {voucher} vouches for themselves")));
            }
            users.insert(voucher);
            users.insert(vouchee);
            vouch_set.insert((voucher, vouchee));
        }

        let mut normalized = Vec::new();
        for c in comparisons {
            if c.entity_a == c.entity_b {
                return Err(Error::data(format!(
                    "user {} compared entity {} with itself",
                    c.user, c.entity_a
                )));
            }
            if !c.value.is_finite() || c.value.abs() > comparison_max {
                return Err(Error::data(format!(
                    "comparison {} by user {} outside [-{comparison_max}, {comparison_max}]",
                    c.value, c.user
                )));
            }
            users.insert(c.user);
            normalized.push(c.normalized());
        }

        Ok(Dataset {
            users,
            pretrusted,
            vouches: vouch_set,
            comparisons: normalized,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.comparisons.is_empty()
    }

    pub fn comparisons_by_user(&self) -> BTreeMap<UserId, Vec<Comparison>> {
        let mut out: BTreeMap<UserId, Vec<Comparison>> = BTreeMap::new();
        for c in &self.comparisons {
            out.entry(c.user).or_default().push(*c);
        }
        out
    }

    /// Privacy of every rated `(user, entity)`; an entity is private for a
    /// user as soon as one of their comparisons involving it is private.
    pub fn privacy_flags(&self) -> BTreeMap<(UserId, EntityId), Privacy> {
        let mut flags = BTreeMap::new();
        for c in &self.comparisons {
            for e in [c.entity_a, c.entity_b] {
                let slot = flags.entry((c.user, e)).or_insert(Privacy::Public);
                if c.privacy == Privacy::Private {
                    *slot = Privacy::Private;
                }
            }
        }
        flags
    }

    pub fn entities(&self) -> BTreeSet<EntityId> {
        self.comparisons
            .iter()
            .flat_map(|c| [c.entity_a, c.entity_b])
            .collect()
    }

    pub fn read_dir(dir: &Path, comparison_max: f64) -> Result<Self> {
        let users: Vec<UserRow> = read_csv(&dir.join("users.csv"))?;
        let vouches: Vec<VouchRow> = read_csv(&dir.join("vouches.csv"))?;
        let comparisons: Vec<ComparisonRow> = read_csv(&dir.join("comparisons.csv"))?;

        let mut pretrusted = Vec::new();
        for row in &users {
            match row.pretrusted {
                0 => {}
                1 => pretrusted.push(row.user),
                other => {
                    return Err(Error::data(format!(
                        "users.csv: pretrusted must be 0 or 1, got {other}"
                    )))
                }
            }
        }
        Dataset::new(
            users.iter().map(|r| r.user),
            pretrusted,
            vouches.iter().map(|r| (r.voucher, r.vouchee)),
            comparisons.iter().map(|r| Comparison {
                user: r.user,
                entity_a: r.entity_a,
                entity_b: r.entity_b,
                value: r.comparison,
                privacy: r.privacy,
            }),
            comparison_max,
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_csv(
            &dir.join("users.csv"),
            &["user", "pretrusted"],
            self.users.iter().map(|&user| UserRow {
                user,
                pretrusted: u8::from(self.pretrusted.contains(&user)),
            }),
        )?;
        write_csv(
            &dir.join("vouches.csv"),
            &["voucher", "vouchee"],
            self.vouches
                .iter()
                .map(|&(voucher, vouchee)| VouchRow { voucher, vouchee }),
        )?;
        write_csv(
            &dir.join("comparisons.csv"),
            &["user", "entity_a", "entity_b", "comparison", "privacy"],
            self.comparisons.iter().map(|c| ComparisonRow {
                user: c.user,
                entity_a: c.entity_a,
                entity_b: c.entity_b,
                comparison: c.value,
                privacy: c.privacy,
            }),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UserRow {
    user: UserId,
    pretrusted: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct VouchRow {
    voucher: UserId,
    vouchee: UserId,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonRow {
    user: UserId,
    entity_a: EntityId,
    entity_b: EntityId,
    comparison: f64,
    privacy: Privacy,
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// Writes `header` then `rows`; the header is present even without rows.
pub(crate) fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
