//! Interaction logs and bipartite snapshots.
//!
//! An [`InteractionLog`] holds timestamped user–item edges. External ids are
//! interned to dense integers on ingestion (numeric ids keep numeric order,
//! otherwise lexicographic order) and the original strings are kept in a side
//! table. A [`Snapshot`] is the bipartite graph restricted to edges with
//! timestamp `<= t`, stored twice: user-major (`I_u`) and item-major (`U_i`),
//! both as compressed sparse rows with sorted adjacency lists.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_SCHEMA: &str = "# offeval interaction-log v1";
pub const SNAPSHOT_SCHEMA: &str = "# offeval snapshot-edges v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("line {line}: negative timestamp {value}")]
    NegativeTimestamp { line: u64, value: f64 },

    #[error("line {line}: unknown source tag `{tag}`")]
    UnknownSource { line: u64, tag: String },

    #[error("missing or invalid header row (expected `user_id,item_id,timestamp,source[,campaign_id]`)")]
    MissingHeader,

    #[error("item {item} is not in the profile of user {user}")]
    NotInProfile { user: UserId, item: ItemId },

    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),

    #[error("user {0} is outside the log's user universe")]
    UnknownUser(UserId),

    #[error("item {0} is outside the log's item universe")]
    UnknownItem(ItemId),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct UserId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where an interaction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Organic,
    Campaign(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    /// Days since epoch.
    pub timestamp: f64,
    pub source: Source,
}

/// Timestamp-ordered interactions over fixed user and item universes.
///
/// Each `(user, item)` pair occurs at most once.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_names: Vec<String>,
    item_names: Vec<String>,
    edges: HashSet<(UserId, ItemId)>,
}

impl InteractionLog {
    /// Empty log whose external ids are the decimal dense ids.
    pub fn with_universe(n_users: usize, n_items: usize) -> Self {
        Self::with_names(
            (0..n_users).map(|u| u.to_string()).collect(),
            (0..n_items).map(|i| i.to_string()).collect(),
        )
    }

    pub fn with_names(user_names: Vec<String>, item_names: Vec<String>) -> Self {
        Self {
            interactions: Vec::new(),
            user_names,
            item_names,
            edges: HashSet::new(),
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_user_universe(&self) -> usize {
        self.user_names.len()
    }

    pub fn n_item_universe(&self) -> usize {
        self.item_names.len()
    }

    pub fn user_name(&self, user: UserId) -> &str {
        &self.user_names[user.index()]
    }

    pub fn item_name(&self, item: ItemId) -> &str {
        &self.item_names[item.index()]
    }

    /// Dense id of an external item name.
    pub fn item_by_name(&self, name: &str) -> Option<ItemId> {
        self.item_names
            .iter()
            .position(|n| n == name)
            .map(|i| ItemId(i as u32))
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.edges.contains(&(user, item))
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.interactions.last().map(|e| e.timestamp)
    }

    fn check(&self, e: &Interaction) -> Result<(), DatasetError> {
        if !e.timestamp.is_finite() {
            return Err(DatasetError::InvalidTimestamp(e.timestamp));
        }
        if e.timestamp < 0.0 {
            return Err(DatasetError::NegativeTimestamp {
                line: 0,
                value: e.timestamp,
            });
        }
        if e.user.index() >= self.user_names.len() {
            return Err(DatasetError::UnknownUser(e.user));
        }
        if e.item.index() >= self.item_names.len() {
            return Err(DatasetError::UnknownItem(e.item));
        }
        Ok(())
    }

    /// Inserts one interaction, keeping timestamp order (ties after existing
    /// entries). Returns `false` when the pair already exists with an earlier
    /// or equal timestamp; a strictly earlier duplicate replaces the stored one.
    pub fn insert(&mut self, e: Interaction) -> Result<bool, DatasetError> {
        self.check(&e)?;
        if self.edges.contains(&(e.user, e.item)) {
            let pos = self
                .interactions
                .iter()
                .position(|x| x.user == e.user && x.item == e.item)
                .expect("edge set and interaction list out of sync");
            if self.interactions[pos].timestamp <= e.timestamp {
                return Ok(false);
            }
            self.interactions.remove(pos);
        }
        let at = self
            .interactions
            .partition_point(|x| x.timestamp <= e.timestamp);
        self.interactions.insert(at, e);
        self.edges.insert((e.user, e.item));
        Ok(true)
    }

    /// Appends a batch of new interactions and restores timestamp order with a
    /// stable sort. Pairs already present (in the log or earlier in the batch)
    /// are dropped, keeping the earliest timestamp.
    pub fn extend(&mut self, batch: Vec<Interaction>) -> Result<usize, DatasetError> {
        let mut batch = batch;
        for e in &batch {
            self.check(e)?;
        }
        batch.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut added = 0;
        let mut late_duplicates = Vec::new();
        for e in batch {
            if self.edges.insert((e.user, e.item)) {
                self.interactions.push(e);
                added += 1;
            } else {
                late_duplicates.push(e);
            }
        }
        self.interactions
            .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        for e in late_duplicates {
            self.insert(e)?;
        }
        Ok(added)
    }

    /// Writes the log as CSV with a schema comment line and a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut out = out;
        writeln!(out, "{LOG_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "item_id", "timestamp", "source", "campaign_id"])?;
        for e in &self.interactions {
            let (tag, campaign) = match e.source {
                Source::Organic => ("organic", String::new()),
                Source::Campaign(c) => ("campaign", c.to_string()),
            };
            w.write_record([
                self.user_name(e.user),
                self.item_name(e.item),
                &e.timestamp.to_string(),
                tag,
                &campaign,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RawRow {
    user: String,
    item: String,
    timestamp: f64,
    source: Source,
}

fn intern(names: impl Iterator<Item = String>) -> (Vec<String>, HashMap<String, u32>) {
    let mut unique: Vec<String> = names.collect::<HashSet<_>>().into_iter().collect();
    let numeric: Option<Vec<u64>> = unique.iter().map(|s| s.parse::<u64>().ok()).collect();
    match numeric {
        Some(_) => unique.sort_by_key(|s| s.parse::<u64>().unwrap()),
        None => unique.sort(),
    }
    let index = unique
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    (unique, index)
}

/// Parses a CSV interaction log: `user_id,item_id,timestamp,source[,campaign_id]`
/// with a header row. Lines starting with `#` are comments.
///
/// The result is sorted by timestamp (stable with respect to file order) and
/// duplicate `(user, item)` pairs keep their earliest timestamp.
pub fn load_log<R: Read>(source: R) -> Result<InteractionLog, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let expected = ["user_id", "item_id", "timestamp", "source"];
    if headers.len() < 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(DatasetError::MissingHeader);
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| DatasetError::Malformed { line, message };
        if record.len() < 4 || record.len() > 5 {
            return Err(malformed(format!(
                "expected 4 or 5 fields, found {}",
                record.len()
            )));
        }
        let user = record[0].to_string();
        let item = record[1].to_string();
        if user.is_empty() || item.is_empty() {
            return Err(malformed("empty user or item id".into()));
        }
        let timestamp: f64 = record[2]
            .parse()
            .map_err(|_| malformed(format!("invalid timestamp `{}`", &record[2])))?;
        if !timestamp.is_finite() {
            return Err(malformed(format!("invalid timestamp `{}`", &record[2])));
        }
        if timestamp < 0.0 {
            return Err(DatasetError::NegativeTimestamp {
                line,
                value: timestamp,
            });
        }
        let campaign_field = record.get(4).unwrap_or("");
        let source = match &record[3] {
            "organic" => Source::Organic,
            "campaign" => {
                let id = campaign_field
                    .parse::<u32>()
                    .map_err(|_| malformed(format!("invalid campaign id `{campaign_field}`")))?;
                Source::Campaign(id)
            }
            other => {
                return Err(DatasetError::UnknownSource {
                    line,
                    tag: other.to_string(),
                })
            }
        };
        rows.push(RawRow {
            user,
            item,
            timestamp,
            source,
        });
    }

    let (user_names, user_index) = intern(rows.iter().map(|r| r.user.clone()));
    let (item_names, item_index) = intern(rows.iter().map(|r| r.item.clone()));

    rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut log = InteractionLog::with_names(user_names, item_names);
    for r in rows {
        let user = UserId(user_index[&r.user]);
        let item = ItemId(item_index[&r.item]);
        if log.edges.insert((user, item)) {
            log.interactions.push(Interaction {
                user,
                item,
                timestamp: r.timestamp,
                source: r.source,
            });
        }
    }
    Ok(log)
}

/// Immutable bipartite graph of the edges present at `time`.
///
/// Adjacency arrays cover the full universes of the originating log; users and
/// items without edges simply have empty lists. `n_users` / `n_items` count
/// only vertices with at least one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    time: f64,
    user_offsets: Vec<usize>,
    user_items: Vec<ItemId>,
    item_offsets: Vec<usize>,
    item_users: Vec<UserId>,
    active_users: Vec<UserId>,
    n_items: usize,
}

impl Snapshot {
    /// Builds both indexes from an edge list. Duplicate edges are collapsed.
    pub fn from_edges(
        time: f64,
        n_user_universe: usize,
        n_item_universe: usize,
        edges: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Self {
        let mut edges: Vec<(UserId, ItemId)> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();

        let mut user_offsets = vec![0usize; n_user_universe + 1];
        let mut item_offsets = vec![0usize; n_item_universe + 1];
        for &(u, i) in &edges {
            user_offsets[u.index() + 1] += 1;
            item_offsets[i.index() + 1] += 1;
        }
        for k in 0..n_user_universe {
            user_offsets[k + 1] += user_offsets[k];
        }
        for k in 0..n_item_universe {
            item_offsets[k + 1] += item_offsets[k];
        }

        let user_items = edges.iter().map(|&(_, i)| i).collect();
        // Edges are user-major sorted, so each item's user list fills in ascending order.
        let mut item_users = vec![UserId(0); edges.len()];
        let mut cursor = item_offsets.clone();
        for &(u, i) in &edges {
            item_users[cursor[i.index()]] = u;
            cursor[i.index()] += 1;
        }

        let active_users = (0..n_user_universe)
            .filter(|&u| user_offsets[u + 1] > user_offsets[u])
            .map(|u| UserId(u as u32))
            .collect();
        let n_items = (0..n_item_universe)
            .filter(|&i| item_offsets[i + 1] > item_offsets[i])
            .count();

        Self {
            time,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
            active_users,
            n_items,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n_user_universe(&self) -> usize {
        self.user_offsets.len() - 1
    }

    pub fn n_item_universe(&self) -> usize {
        self.item_offsets.len() - 1
    }

    /// Users with at least one item (`n_U`).
    pub fn n_users(&self) -> usize {
        self.active_users.len()
    }

    /// Items with at least one user (`n_I`).
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of edges (`n_{U×I}`).
    pub fn n_edges(&self) -> usize {
        self.user_items.len()
    }

    /// Users with a non-empty profile, ascending.
    pub fn active_users(&self) -> &[UserId] {
        &self.active_users
    }

    /// `I_u`, sorted ascending.
    #[inline]
    pub fn items_of(&self, user: UserId) -> &[ItemId] {
        let u = user.index();
        if u >= self.n_user_universe() {
            return &[];
        }
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// `U_i`, sorted ascending.
    #[inline]
    pub fn users_of(&self, item: ItemId) -> &[UserId] {
        let i = item.index();
        if i >= self.n_item_universe() {
            return &[];
        }
        &self.item_users[self.item_offsets[i]..self.item_offsets[i + 1]]
    }

    #[inline]
    pub fn user_degree(&self, user: UserId) -> usize {
        self.items_of(user).len()
    }

    #[inline]
    pub fn item_degree(&self, item: ItemId) -> usize {
        self.users_of(item).len()
    }

    /// `b_{i,u}`, answered by binary search over the shorter adjacency list.
    pub fn holds(&self, user: UserId, item: ItemId) -> bool {
        let items = self.items_of(user);
        let users = self.users_of(item);
        if items.len() <= users.len() {
            items.binary_search(&item).is_ok()
        } else {
            users.binary_search(&user).is_ok()
        }
    }

    /// All edges in user-major order.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        (0..self.n_user_universe()).flat_map(move |u| {
            let user = UserId(u as u32);
            self.items_of(user).iter().map(move |&i| (user, i))
        })
    }

    /// A rebuilt copy of this snapshot with one edge physically deleted.
    pub fn without_edge(&self, user: UserId, item: ItemId) -> Snapshot {
        Snapshot::from_edges(
            self.time,
            self.n_user_universe(),
            self.n_item_universe(),
            self.edges().filter(|&e| e != (user, item)),
        )
    }

    /// Hash of the full index contents.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.time.to_bits().hash(&mut h);
        self.user_offsets.hash(&mut h);
        self.user_items.hash(&mut h);
        self.item_offsets.hash(&mut h);
        self.item_users.hash(&mut h);
        h.finish()
    }

    /// Writes the snapshot as a versioned CSV edge list of dense ids.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut out = out;
        writeln!(out, "{SNAPSHOT_SCHEMA}")?;
        writeln!(
            out,
            "# time={} users={} items={}",
            self.time,
            self.n_user_universe(),
            self.n_item_universe()
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "item"])?;
        for (u, i) in self.edges() {
            w.write_record([u.0.to_string(), i.0.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Snapshot::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Snapshot, DatasetError> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let mut lines = text.lines();
        let bad = |line: u64, message: &str| DatasetError::Malformed {
            line,
            message: message.to_string(),
        };
        if lines.next() != Some(SNAPSHOT_SCHEMA) {
            return Err(bad(1, "missing snapshot schema tag"));
        }
        let meta = lines.next().ok_or_else(|| bad(2, "missing metadata line"))?;
        let mut time = None;
        let mut users = None;
        let mut items = None;
        for field in meta.trim_start_matches('#').split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(2, "malformed metadata"))?;
            match k {
                "time" => time = v.parse::<f64>().ok(),
                "users" => users = v.parse::<usize>().ok(),
                "items" => items = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (time, users, items) = match (time, users, items) {
            (Some(t), Some(u), Some(i)) => (t, u, i),
            _ => return Err(bad(2, "incomplete metadata")),
        };
        if lines.next() != Some("user,item") {
            return Err(bad(3, "missing header row"));
        }
        let mut edges = Vec::new();
        for (n, line) in lines.enumerate() {
            let line_no = n as u64 + 4;
            let (u, i) = line
                .split_once(',')
                .ok_or_else(|| bad(line_no, "expected `user,item`"))?;
            let u: u32 = u.parse().map_err(|_| bad(line_no, "invalid user id"))?;
            let i: u32 = i.parse().map_err(|_| bad(line_no, "invalid item id"))?;
            if u as usize >= users || i as usize >= items {
                return Err(bad(line_no, "id outside declared universe"));
            }
            edges.push((UserId(u), ItemId(i)));
        }
        Ok(Snapshot::from_edges(time, users, items, edges))
    }
}

/// The graph `D_t`: every interaction with timestamp `<= t`.
pub fn snapshot_at(log: &InteractionLog, t: f64) -> Snapshot {
    let end = log.interactions.partition_point(|e| e.timestamp <= t);
    Snapshot::from_edges(
        t,
        log.n_user_universe(),
        log.n_item_universe(),
        log.interactions[..end].iter().map(|e| (e.user, e.item)),
    )
}

/// A user's profile, optionally with one item hidden (`u_{-i}`).
#[derive(Debug, Clone, Copy)]
pub struct ProfileView<'a> {
    snapshot: &'a Snapshot,
    user: UserId,
    excluded: Option<ItemId>,
}

impl<'a> ProfileView<'a> {
    /// The full profile `I_u`.
    pub fn full(snapshot: &'a Snapshot, user: UserId) -> Self {
        Self {
            snapshot,
            user,
            excluded: None,
        }
    }

    pub fn snapshot(&self) -> &'a Snapshot {
        self.snapshot
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn excluded_item(&self) -> Option<ItemId> {
        self.excluded
    }

    pub fn iter(&self) -> impl Iterator<Item = ItemId> + 'a {
        let excluded = self.excluded;
        self.snapshot
            .items_of(self.user)
            .iter()
            .copied()
            .filter(move |&i| Some(i) != excluded)
    }

    pub fn len(&self) -> usize {
        let n = self.snapshot.user_degree(self.user);
        if self.excluded.is_some() {
            n - 1
        } else {
            n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, item: ItemId) -> bool {
        Some(item) != self.excluded && self.snapshot.items_of(self.user).binary_search(&item).is_ok()
    }
}

/// `u_{-i}`: the profile of `user` without `item`.
pub fn remove_item_view(
    snapshot: &Snapshot,
    user: UserId,
    item: ItemId,
) -> Result<ProfileView<'_>, DatasetError> {
    if snapshot.items_of(user).binary_search(&item).is_err() {
        return Err(DatasetError::NotInProfile { user, item });
    }
    Ok(ProfileView {
        snapshot,
        user,
        excluded: Some(item),
    })
}

/// Profile size → number of users with that many items (users with at least
/// one item).
pub fn degree_histogram(snapshot: &Snapshot) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for &u in snapshot.active_users() {
        *hist.entry(snapshot.user_degree(u)).or_insert(0) += 1;
    }
    hist
}
