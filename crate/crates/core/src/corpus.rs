//! Interaction logs, k-core filtering and leave-one-out sequence splits.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RclError, Result};

/// Dense id reserved for padding. Real users and items start at 1.
pub const PADDING: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
    Csv,
    /// `user::item::rating::timestamp`
    MovielensDat,
}

impl FromStr for InputFormat {
    type Err = RclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            "movielens-dat" | "dat" | "ml" => Ok(InputFormat::MovielensDat),
            other => Err(RclError::InvalidConfig(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Raw events plus the external-to-dense id vocabularies.
///
/// `users[i - 1]` is the external name of dense user `i`, likewise for items.
#[derive(Debug, Clone, Default)]
pub struct InteractionCorpus {
    pub events: Vec<Interaction>,
    pub users: Vec<String>,
    pub items: Vec<String>,
}

#[derive(Default)]
struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        self.names.push(name.to_string());
        let id = self.names.len() as u32;
        self.ids.insert(name.to_string(), id);
        id
    }
}

impl InteractionCorpus {
    /// Builds a corpus from external `(user, item, timestamp)` triples, assigning
    /// dense ids in first-appearance order.
    pub fn from_triples<U, I>(rows: impl IntoIterator<Item = (U, I, i64)>) -> Self
    where
        U: AsRef<str>,
        I: AsRef<str>,
    {
        let mut users = Vocab::default();
        let mut items = Vocab::default();
        let events = rows
            .into_iter()
            .map(|(u, i, timestamp)| Interaction {
                user: users.intern(u.as_ref()),
                item: items.intern(i.as_ref()),
                timestamp,
            })
            .collect();
        InteractionCorpus {
            events,
            users: users.names,
            items: items.names,
        }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn split_row(line: &str, format: InputFormat) -> Vec<&str> {
    match format {
        InputFormat::Tsv => line.split('\t').map(str::trim).collect(),
        InputFormat::Csv => line.split(',').map(str::trim).collect(),
        InputFormat::MovielensDat => line.split("::").map(str::trim).collect(),
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() >= 3
        && fields[0].eq_ignore_ascii_case("user")
        && fields[1].eq_ignore_ascii_case("item")
}

/// Parses interaction rows from any reader. Blank lines are skipped and a
/// leading `user,item,timestamp` header is tolerated.
pub fn parse_interactions<R: BufRead>(reader: R, format: InputFormat) -> Result<InteractionCorpus> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| RclError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_row(line, format);
        if line_no == 1 && is_header(&fields) {
            continue;
        }
        let (user, item, ts) = match (format, fields.as_slice()) {
            (InputFormat::MovielensDat, [u, i, _rating, ts]) => (*u, *i, *ts),
            (InputFormat::Tsv | InputFormat::Csv, [u, i, ts]) => (*u, *i, *ts),
            _ => {
                return Err(RclError::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, got {}", expected_fields(format), fields.len()),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(RclError::Parse {
                line: line_no,
                msg: "empty user or item field".into(),
            });
        }
        let timestamp: i64 = ts.parse().map_err(|_| RclError::Parse {
            line: line_no,
            msg: format!("non-numeric timestamp `{ts}`"),
        })?;
        rows.push((user.to_string(), item.to_string(), timestamp));
    }
    if rows.is_empty() {
        return Err(RclError::EmptyCorpus);
    }
    Ok(InteractionCorpus::from_triples(rows))
}

fn expected_fields(format: InputFormat) -> usize {
    match format {
        InputFormat::MovielensDat => 4,
        _ => 3,
    }
}

pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<InteractionCorpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| RclError::io(path, e))?;
    parse_interactions(BufReader::new(file), format)
}

/// Iteratively drops users and items with fewer than `k` events until nothing
/// changes, then re-densifies ids in first-appearance order.
pub fn k_core_filter(corpus: &InteractionCorpus, k: usize) -> Result<InteractionCorpus> {
    if k == 0 {
        return Err(RclError::InvalidConfig("k must be at least 1".into()));
    }
    let mut alive: Vec<bool> = vec![true; corpus.events.len()];
    loop {
        let mut user_deg = vec![0usize; corpus.users.len() + 1];
        let mut item_deg = vec![0usize; corpus.items.len() + 1];
        for (e, _) in corpus.events.iter().zip(&alive).filter(|(_, a)| **a) {
            user_deg[e.user as usize] += 1;
            item_deg[e.item as usize] += 1;
        }
        let mut removed = 0usize;
        for (e, a) in corpus.events.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[e.user as usize] < k || item_deg[e.item as usize] < k) {
                *a = false;
                removed += 1;
            }
        }
        if removed == 0 {
            break;
        }
    }

    let rows = corpus
        .events
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(e, _)| {
            (
                corpus.users[e.user as usize - 1].as_str(),
                corpus.items[e.item as usize - 1].as_str(),
                e.timestamp,
            )
        });
    let out = InteractionCorpus::from_triples(rows);
    if out.is_empty() {
        return Err(RclError::EmptyCorpus);
    }
    Ok(out)
}

/// One chronological item sequence and the item that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub user: u32,
    pub items: Vec<u32>,
    pub target: u32,
}

impl SequenceRecord {
    pub fn new(user: u32, items: Vec<u32>, target: u32) -> Self {
        SequenceRecord { user, items, target }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items with padding ids removed.
    pub fn real_items(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().copied().filter(|&i| i != PADDING)
    }
}

/// Leave-one-out splits over all users.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceSet {
    pub train: Vec<SequenceRecord>,
    pub valid: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
    /// Number of real items; item ids run over `1..=item_count`.
    pub item_count: usize,
    pub max_len: usize,
    pub user_count: usize,
    /// Interactions before truncation.
    pub action_count: usize,
}

fn truncated(prefix: &[u32], max_len: usize) -> Vec<u32> {
    let start = prefix.len().saturating_sub(max_len);
    prefix[start..].to_vec()
}

/// Groups events per user in timestamp order (ties keep input order) and splits
/// each history `h` of length `n`:
///
/// * test  = `h[..n-1] -> h[n-1]`
/// * valid = `h[..n-2] -> h[n-2]`
/// * train = `h[..n-3] -> h[n-3]`
///
/// Users with fewer than three interactions get a train record only.
pub fn build_sequences(corpus: &InteractionCorpus, max_len: usize) -> Result<SequenceSet> {
    if max_len < 2 {
        return Err(RclError::InvalidConfig("max_len must be at least 2".into()));
    }
    let mut per_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); corpus.users.len() + 1];
    for e in &corpus.events {
        per_user[e.user as usize].push((e.timestamp, e.item));
    }

    let mut set = SequenceSet {
        item_count: corpus.items.len(),
        max_len,
        ..Default::default()
    };
    let mut short_users = 0usize;
    for (user, events) in per_user.iter_mut().enumerate().skip(1) {
        if events.is_empty() {
            continue;
        }
        // stable: equal timestamps keep input order
        events.sort_by_key(|&(ts, _)| ts);
        let h: Vec<u32> = events.iter().map(|&(_, item)| item).collect();
        let n = h.len();
        let user = user as u32;
        set.user_count += 1;
        set.action_count += n;
        match n {
            1 => short_users += 1,
            2 => {
                short_users += 1;
                set.train.push(SequenceRecord::new(user, truncated(&h[..1], max_len), h[1]));
            }
            _ => {
                if n >= 4 {
                    set.train
                        .push(SequenceRecord::new(user, truncated(&h[..n - 3], max_len), h[n - 3]));
                }
                set.valid
                    .push(SequenceRecord::new(user, truncated(&h[..n - 2], max_len), h[n - 2]));
                set.test
                    .push(SequenceRecord::new(user, truncated(&h[..n - 1], max_len), h[n - 1]));
            }
        }
    }
    if short_users > 0 {
        log::info!("{short_users} users with fewer than 3 interactions excluded from valid/test");
    }
    Ok(set)
}

/// Dataset statistics in the usual users / items / actions layout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
    pub avg_len: f64,
    pub sparsity: f64,
}

impl StatsReport {
    pub fn new(users: usize, items: usize, actions: usize) -> Self {
        if users == 0 || items == 0 {
            return StatsReport::default();
        }
        StatsReport {
            users,
            items,
            actions,
            avg_len: actions as f64 / users as f64,
            sparsity: 1.0 - actions as f64 / (users as f64 * items as f64),
        }
    }

    pub fn from_corpus(corpus: &InteractionCorpus) -> Self {
        StatsReport::new(corpus.user_count(), corpus.item_count(), corpus.events.len())
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "users={}\nitems={}\nactions={}\navg_len={:.4}\nsparsity={:.6}\n",
            self.users, self.items, self.actions, self.avg_len, self.sparsity
        )
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} items={} actions={} avg_len={:.1} sparsity={:.2}%",
            self.users,
            self.items,
            self.actions,
            self.avg_len,
            self.sparsity * 100.0
        )
    }
}

pub fn corpus_stats(set: &SequenceSet) -> StatsReport {
    StatsReport::new(set.user_count, set.item_count, set.action_count)
}

/// Writes records as `user<TAB>space-joined items<TAB>target` lines.
pub fn write_records<W: Write>(mut w: W, records: &[SequenceRecord]) -> std::io::Result<()> {
    for r in records {
        let items: Vec<String> = r.items.iter().map(u32::to_string).collect();
        writeln!(w, "{}\t{}\t{}", r.user, items.join(" "), r.target)?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| RclError::Parse { line: line_no, msg };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(u), Some(items), Some(t), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err("expected 3 tab-separated fields".into()));
        };
        let user = u.trim().parse().map_err(|_| err(format!("bad user id `{u}`")))?;
        let target = t.trim().parse().map_err(|_| err(format!("bad target `{t}`")))?;
        let items = items
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| err(format!("bad item `{s}`"))))
            .collect::<Result<Vec<u32>>>()?;
        if items.is_empty() {
            return Err(err("empty item list".into()));
        }
        out.push(SequenceRecord::new(user, items, target));
    }
    Ok(out)
}

impl SequenceSet {
    /// Writes `train.txt`, `valid.txt`, `test.txt`, `meta.txt` and `stats.txt`
    /// under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| RclError::io(dir, e))?;
        for (name, records) in [("train.txt", &self.train), ("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| RclError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            write_records(&mut w, records)
                .and_then(|_| w.flush())
                .map_err(|e| RclError::io(&path, e))?;
        }
        let meta = format!(
            "item_count={}\nmax_len={}\nuser_count={}\naction_count={}\n",
            self.item_count, self.max_len, self.user_count, self.action_count
        );
        let path = dir.join("meta.txt");
        fs::write(&path, meta).map_err(|e| RclError::io(&path, e))?;
        let path = dir.join("stats.txt");
        fs::write(&path, corpus_stats(self).to_kv()).map_err(|e| RclError::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<SequenceSet> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<SequenceRecord>> {
            let path = dir.join(name);
            let file = fs::File::open(&path).map_err(|e| RclError::io(&path, e))?;
            read_records(BufReader::new(file))
        };
        let path = dir.join("meta.txt");
        let meta = fs::read_to_string(&path).map_err(|e| RclError::io(&path, e))?;
        let kv = crate::config::parse_kv(&meta)?;
        let get = |k: &str| -> Result<usize> {
            kv.get(k)
                .ok_or_else(|| RclError::Format(format!("meta.txt missing `{k}`")))?
                .parse()
                .map_err(|_| RclError::Format(format!("meta.txt: bad `{k}`")))
        };
        Ok(SequenceSet {
            train: read("train.txt")?,
            valid: read("valid.txt")?,
            test: read("test.txt")?,
            item_count: get("item_count")?,
            max_len: get("max_len")?,
            user_count: get("user_count")?,
            action_count: get("action_count")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_of(rows: &[(&str, &str, i64)]) -> InteractionCorpus {
        InteractionCorpus::from_triples(rows.iter().map(|&(u, i, t)| (u, i, t)))
    }

    #[test]
    fn three_row_tsv() {
        let data = "a\tx\t1\nb\ty\t2\na\ty\t3\n";
        let c = parse_interactions(data.as_bytes(), InputFormat::Tsv).unwrap();
        assert_eq!(c.user_count(), 2);
        assert_eq!(c.item_count(), 2);
        assert_eq!(c.events.len(), 3);
        assert_eq!(c.events[2], Interaction { user: 1, item: 2, timestamp: 3 });
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let data = "user,item,timestamp\na,x,1\nb,y,soon\n";
        match parse_interactions(data.as_bytes(), InputFormat::Csv) {
            Err(RclError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse_interactions("\n\n".as_bytes(), InputFormat::Tsv),
            Err(RclError::EmptyCorpus)
        ));
    }

    #[test]
    fn movielens_rows() {
        let data = "1::1193::5::978300760\n1::661::3::978302109\n";
        let c = parse_interactions(data.as_bytes(), InputFormat::MovielensDat).unwrap();
        assert_eq!(c.events.len(), 2);
        assert_eq!(c.items, vec!["1193", "661"]);
    }

    #[test]
    fn k_core_identity_when_dense() {
        let mut rows = Vec::new();
        for u in ["a", "b"] {
            for (t, i) in ["x", "y"].iter().enumerate() {
                rows.push((u, *i, t as i64));
            }
        }
        let c = corpus_of(&rows);
        let f = k_core_filter(&c, 2).unwrap();
        assert_eq!(f.events, c.events);
    }

    #[test]
    fn k_core_drops_sparse_user_and_orphan_item() {
        let mut rows = Vec::new();
        for u in ["a", "b", "c", "d", "e"] {
            for (t, i) in ["x", "y", "z", "w", "v"].iter().enumerate() {
                rows.push((u, *i, t as i64));
            }
        }
        rows.push(("lonely", "orphan", 0));
        let c = corpus_of(&rows);
        let f = k_core_filter(&c, 5).unwrap();
        assert_eq!(f.user_count(), 5);
        assert_eq!(f.item_count(), 5);
        assert!(!f.users.iter().any(|u| u == "lonely"));
        assert!(!f.items.iter().any(|i| i == "orphan"));
        // fixed point
        let again = k_core_filter(&f, 5).unwrap();
        assert_eq!(again.events, f.events);
    }

    #[test]
    fn k_core_empty_fixed_point() {
        let c = corpus_of(&[("a", "x", 1), ("b", "y", 2)]);
        assert!(matches!(k_core_filter(&c, 2), Err(RclError::EmptyCorpus)));
    }

    #[test]
    fn leave_one_out_split() {
        let c = corpus_of(&[("u", "1", 1), ("u", "2", 2), ("u", "3", 3), ("u", "4", 4)]);
        let set = build_sequences(&c, 50).unwrap();
        assert_eq!(set.test, vec![SequenceRecord::new(1, vec![1, 2, 3], 4)]);
        assert_eq!(set.valid, vec![SequenceRecord::new(1, vec![1, 2], 3)]);
        assert_eq!(set.train, vec![SequenceRecord::new(1, vec![1], 2)]);
    }

    #[test]
    fn ties_keep_input_order() {
        let c = corpus_of(&[("u", "a", 5), ("u", "b", 5), ("u", "c", 1), ("u", "d", 9)]);
        let set = build_sequences(&c, 10).unwrap();
        // c(1) a(5) b(5) d(9)
        assert_eq!(set.test[0].items, vec![3, 1, 2]);
        assert_eq!(set.test[0].target, 4);
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let rows: Vec<(String, String, i64)> = (0..63).map(|t| ("u".to_string(), format!("i{t}"), t)).collect();
        let c = InteractionCorpus::from_triples(rows);
        let set = build_sequences(&c, 50).unwrap();
        // train prefix has 60 items (ids 1..=60); keep positions 10..59
        let train = &set.train[0];
        assert_eq!(train.items.len(), 50);
        assert_eq!(train.items, (11..=60).collect::<Vec<u32>>());
        assert_eq!(train.target, 61);
    }

    #[test]
    fn short_users_get_train_only() {
        let c = corpus_of(&[("u", "a", 1), ("u", "b", 2), ("v", "a", 1)]);
        let set = build_sequences(&c, 10).unwrap();
        assert_eq!(set.train.len(), 1);
        assert!(set.valid.is_empty() && set.test.is_empty());
    }

    #[test]
    fn sparsity_formula() {
        let r = StatsReport::new(2, 2, 3);
        assert!((r.sparsity - 0.25).abs() < 1e-15);
        assert!((r.avg_len - 1.5).abs() < 1e-15);
        assert_eq!(corpus_stats(&SequenceSet::default()), StatsReport::default());
    }

    #[test]
    fn records_round_trip_text() {
        let recs = vec![SequenceRecord::new(3, vec![1, 5, 9], 2), SequenceRecord::new(4, vec![7], 1)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "3\t1 5 9\t2\n4\t7\t1\n");
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }
}
