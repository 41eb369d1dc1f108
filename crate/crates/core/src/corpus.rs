//! Users, rated preferences, candidates and suggestion requests.
//!
//! Input is three line-delimited JSON files (`users.jsonl`,
//! `candidates.jsonl`, `requests.jsonl`). Loading validates every record and
//! cross-checks references, so a [`Corpus`] in hand is always consistent.
//! Grouping by a user attribute or a trip-context attribute lives here too.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_AGE: u32 = 130;
pub const MIN_RATING: i32 = -1;
pub const MAX_RATING: i32 = 4;

/// Label of the reserved group holding entities with a missing attribute.
pub const UNKNOWN_GROUP: &str = "unknown";

/// Default age bin edges: `<20, 20-30, 30-40, 40-50, >50`.
pub const DEFAULT_AGE_BINS: [u32; 4] = [20, 30, 40, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripType {
    Holiday,
    Business,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripDuration {
    NightOut,
    DayTrip,
    Weekend,
    Longer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Spring,
    Summer,
    Autumn,
    Winter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupType {
    Alone,
    Family,
    Friends,
    Other,
}

/// A place or activity rated by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedDocument {
    pub doc_id: String,
    pub text: String,
    pub rating: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Gender,
    #[serde(default)]
    pub preferences: Vec<RatedDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDocument {
    pub doc_id: String,
    pub text: String,
}

/// A user's request for suggestions within a trip context.
///
/// A `location` field may be present in the input; it is accepted and ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionRequest {
    pub request_id: String,
    pub user_id: String,
    pub trip_type: TripType,
    pub trip_duration: TripDuration,
    pub season: Season,
    pub group_type: GroupType,
    pub candidate_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<BTreeMap<String, i32>>,
}

/// A validated, cross-referenced collection of users, candidates and requests.
///
/// Iteration order is fixed by sorted ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub users: BTreeMap<String, UserRecord>,
    pub candidates: BTreeMap<String, CandidateDocument>,
    pub requests: BTreeMap<String, SuggestionRequest>,
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same validation as
    /// [`load_corpus`]. Line numbers in errors are 1-based record positions.
    pub fn from_records(
        users: Vec<UserRecord>,
        candidates: Vec<CandidateDocument>,
        requests: Vec<SuggestionRequest>,
    ) -> Result<Self> {
        Self::assemble(
            users.into_iter().enumerate().map(|(i, u)| (i + 1, u)),
            candidates.into_iter().enumerate().map(|(i, c)| (i + 1, c)),
            requests.into_iter().enumerate().map(|(i, r)| (i + 1, r)),
            (Path::new("<users>"), Path::new("<candidates>"), Path::new("<requests>")),
        )
    }

    fn assemble(
        users: impl IntoIterator<Item = (usize, UserRecord)>,
        candidates: impl IntoIterator<Item = (usize, CandidateDocument)>,
        requests: impl IntoIterator<Item = (usize, SuggestionRequest)>,
        paths: (&Path, &Path, &Path),
    ) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (line, user) in users {
            validate_user(&user).map_err(|message| invalid(paths.0, line, message))?;
            if corpus.users.contains_key(&user.user_id) {
                return Err(invalid(paths.0, line, format!("duplicate user_id {:?}", user.user_id)));
            }
            corpus.users.insert(user.user_id.clone(), user);
        }
        for (line, cand) in candidates {
            if cand.doc_id.is_empty() {
                return Err(invalid(paths.1, line, "empty doc_id".into()));
            }
            if cand.text.is_empty() {
                return Err(invalid(paths.1, line, format!("candidate {:?} has empty text", cand.doc_id)));
            }
            if corpus.candidates.contains_key(&cand.doc_id) {
                return Err(invalid(paths.1, line, format!("duplicate doc_id {:?}", cand.doc_id)));
            }
            corpus.candidates.insert(cand.doc_id.clone(), cand);
        }
        for (line, req) in requests {
            if req.request_id.is_empty() {
                return Err(invalid(paths.2, line, "empty request_id".into()));
            }
            if req.candidate_ids.is_empty() {
                return Err(invalid(paths.2, line, format!("request {:?} has no candidates", req.request_id)));
            }
            let mut seen = BTreeSet::new();
            for id in &req.candidate_ids {
                if !seen.insert(id) {
                    return Err(invalid(
                        paths.2,
                        line,
                        format!("request {:?} lists candidate {id:?} twice", req.request_id),
                    ));
                }
            }
            if let Some(qrels) = &req.qrels {
                if let Some((doc, r)) = qrels.iter().find(|(_, r)| !(MIN_RATING..=MAX_RATING).contains(*r)) {
                    return Err(invalid(paths.2, line, format!("qrel rating {r} for {doc:?} outside [-1, 4]")));
                }
            }
            if corpus.requests.contains_key(&req.request_id) {
                return Err(invalid(paths.2, line, format!("duplicate request_id {:?}", req.request_id)));
            }
            if !corpus.users.contains_key(&req.user_id) {
                return Err(Error::DanglingReference {
                    kind: "user",
                    id: req.user_id.clone(),
                    referrer: format!("request {:?}", req.request_id),
                });
            }
            if let Some(missing) = req.candidate_ids.iter().find(|id| !corpus.candidates.contains_key(*id)) {
                return Err(Error::DanglingReference {
                    kind: "candidate",
                    id: missing.clone(),
                    referrer: format!("request {:?}", req.request_id),
                });
            }
            corpus.requests.insert(req.request_id.clone(), req);
        }
        Ok(corpus)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.users.len(), self.candidates.len(), self.requests.len())
    }

    /// Requests issued by `user_id`, in request-id order.
    pub fn requests_of<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a SuggestionRequest> + 'a {
        self.requests.values().filter(move |r| r.user_id == user_id)
    }

    /// Serializes the three record files in the `load_corpus` format.
    pub fn to_jsonl(&self) -> Result<(String, String, String)> {
        fn lines<T: Serialize>(items: impl Iterator<Item = T>) -> Result<String> {
            let mut out = String::new();
            for item in items {
                out.push_str(&serde_json::to_string(&item)?);
                out.push('\n');
            }
            Ok(out)
        }
        Ok((
            lines(self.users.values())?,
            lines(self.candidates.values())?,
            lines(self.requests.values())?,
        ))
    }
}

fn invalid(path: &Path, line: usize, message: String) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn validate_user(user: &UserRecord) -> std::result::Result<(), String> {
    if user.user_id.is_empty() {
        return Err("empty user_id".into());
    }
    if let Some(age) = user.age {
        if age > MAX_AGE {
            return Err(format!("age {age} outside [0, {MAX_AGE}]"));
        }
    }
    for doc in &user.preferences {
        if doc.doc_id.is_empty() {
            return Err(format!("user {:?} has a preference with empty doc_id", user.user_id));
        }
        if !(MIN_RATING..=MAX_RATING).contains(&doc.rating) {
            return Err(format!(
                "rating {} for preference {:?} outside [{MIN_RATING}, {MAX_RATING}]",
                doc.rating, doc.doc_id
            ));
        }
    }
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

/// Loads and cross-validates the three corpus files.
pub fn load_corpus(users_path: &Path, candidates_path: &Path, requests_path: &Path) -> Result<Corpus> {
    let users = read_jsonl(users_path)?;
    let candidates = read_jsonl(candidates_path)?;
    let requests = read_jsonl(requests_path)?;
    Corpus::assemble(users, candidates, requests, (users_path, candidates_path, requests_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Age,
    Gender,
    GroupType,
    TripType,
    TripDuration,
    Season,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::Age,
        Criterion::Gender,
        Criterion::GroupType,
        Criterion::TripType,
        Criterion::TripDuration,
        Criterion::Season,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Age => "age",
            Criterion::Gender => "gender",
            Criterion::GroupType => "group_type",
            Criterion::TripType => "trip_type",
            Criterion::TripDuration => "trip_duration",
            Criterion::Season => "season",
        }
    }

    /// Context criteria group (user, request) pairs; the others group users.
    pub fn is_context(self) -> bool {
        !matches!(self, Criterion::Age | Criterion::Gender)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown grouping criterion {s:?}")))
    }
}

fn enum_label<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize as strings"),
    }
}

/// Strictly increasing age bin edges, lower-inclusive and upper-exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBins(Vec<u32>);

impl AgeBins {
    pub fn new(edges: Vec<u32>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidArgument("age bins need at least one edge".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("age bin edges {edges:?} are not strictly increasing")));
        }
        Ok(AgeBins(edges))
    }

    /// Edges `width, 2*width, ...` covering every valid age.
    pub fn uniform(width: u32) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("bin width must be positive".into()));
        }
        let edges = (1..).map(|k| k * width).take_while(|&e| e <= MAX_AGE).collect::<Vec<_>>();
        if edges.is_empty() {
            // Width beyond the age range: a single bin holds everyone.
            return Ok(AgeBins(vec![MAX_AGE + 1]));
        }
        Ok(AgeBins(edges))
    }

    pub fn edges(&self) -> &[u32] {
        &self.0
    }

    pub fn label(&self, age: u32) -> String {
        let edges = &self.0;
        let idx = edges.partition_point(|&e| e <= age);
        if idx == 0 {
            format!("<{}", edges[0])
        } else if idx == edges.len() {
            format!(">{}", edges[idx - 1])
        } else {
            format!("{}-{}", edges[idx - 1], edges[idx])
        }
    }
}

impl Default for AgeBins {
    fn default() -> Self {
        AgeBins(DEFAULT_AGE_BINS.to_vec())
    }
}

/// One group under a grouping criterion.
///
/// `member_request_ids` holds the requests routed to this group: for user
/// criteria every request of a member, for context criteria exactly the
/// requests carrying the group's attribute value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub criterion: Criterion,
    pub group_label: String,
    pub member_user_ids: BTreeSet<String>,
    pub member_request_ids: BTreeSet<String>,
}

impl GroupAssignment {
    pub fn is_unknown(&self) -> bool {
        self.group_label == UNKNOWN_GROUP
    }

    /// Number of grouped entities: users for user criteria, (user, request)
    /// pairs for context criteria.
    pub fn size(&self) -> usize {
        if self.criterion.is_context() {
            self.member_request_ids.len()
        } else {
            self.member_user_ids.len()
        }
    }

    /// A filesystem-safe rendering of the label.
    pub fn file_stem(&self) -> String {
        file_stem(&self.group_label)
    }
}

pub fn file_stem(label: &str) -> String {
    label
        .replace('<', "lt")
        .replace('>', "gt")
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn user_label(user: &UserRecord, criterion: Criterion, bins: &AgeBins) -> Option<String> {
    match criterion {
        Criterion::Age => user.age.map(|a| bins.label(a)),
        Criterion::Gender => match user.gender {
            Gender::Unspecified => None,
            g => Some(enum_label(&g)),
        },
        _ => unreachable!("context criterion"),
    }
}

fn request_label(req: &SuggestionRequest, criterion: Criterion) -> String {
    match criterion {
        Criterion::GroupType => enum_label(&req.group_type),
        Criterion::TripType => enum_label(&req.trip_type),
        Criterion::TripDuration => enum_label(&req.trip_duration),
        Criterion::Season => enum_label(&req.season),
        _ => unreachable!("user criterion"),
    }
}

/// Partitions users (or (user, request) pairs for context criteria) into groups.
///
/// Entities missing the attribute land in the reserved [`UNKNOWN_GROUP`].
/// Groups are returned in label order.
pub fn group_users(corpus: &Corpus, criterion: Criterion, age_bins: Option<&AgeBins>) -> Vec<GroupAssignment> {
    let default_bins = AgeBins::default();
    let bins = age_bins.unwrap_or(&default_bins);
    let mut groups: BTreeMap<String, GroupAssignment> = BTreeMap::new();
    fn entry(groups: &mut BTreeMap<String, GroupAssignment>, criterion: Criterion, label: String) -> &mut GroupAssignment {
        groups.entry(label.clone()).or_insert_with(|| GroupAssignment {
            criterion,
            group_label: label,
            member_user_ids: BTreeSet::new(),
            member_request_ids: BTreeSet::new(),
        })
    }

    if criterion.is_context() {
        for req in corpus.requests.values() {
            let g = entry(&mut groups, criterion, request_label(req, criterion));
            g.member_user_ids.insert(req.user_id.clone());
            g.member_request_ids.insert(req.request_id.clone());
        }
    } else {
        let mut unknown = 0usize;
        for user in corpus.users.values() {
            let label = user_label(user, criterion, bins).unwrap_or_else(|| {
                unknown += 1;
                UNKNOWN_GROUP.to_string()
            });
            let g = entry(&mut groups, criterion, label);
            g.member_user_ids.insert(user.user_id.clone());
            g.member_request_ids
                .extend(corpus.requests_of(&user.user_id).map(|r| r.request_id.clone()));
        }
        if unknown > 0 {
            log::warn!("{unknown} user(s) lack the {criterion} attribute; assigned to group {UNKNOWN_GROUP:?}");
        }
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, age: Option<u32>, gender: Gender) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            age,
            gender,
            preferences: vec![],
        }
    }

    fn request(id: &str, user: &str, season: Season) -> SuggestionRequest {
        SuggestionRequest {
            request_id: id.into(),
            user_id: user.into(),
            trip_type: TripType::Holiday,
            trip_duration: TripDuration::Weekend,
            season,
            group_type: GroupType::Family,
            candidate_ids: vec!["c1".into()],
            qrels: None,
        }
    }

    fn cand() -> CandidateDocument {
        CandidateDocument {
            doc_id: "c1".into(),
            text: "museum".into(),
        }
    }

    #[test]
    fn default_age_bins_assign_edges_lower_inclusive() {
        let corpus = Corpus::from_records(
            vec![
                user("a", Some(19), Gender::Male),
                user("b", Some(20), Gender::Male),
                user("c", Some(45), Gender::Male),
            ],
            vec![],
            vec![],
        )
        .unwrap();
        let groups = group_users(&corpus, Criterion::Age, None);
        let got: Vec<_> = groups
            .iter()
            .map(|g| (g.group_label.as_str(), g.member_user_ids.iter().cloned().collect::<Vec<_>>()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("20-30", vec!["b".to_string()]),
                ("40-50", vec!["c".to_string()]),
                ("<20", vec!["a".to_string()]),
            ]
        );
    }

    #[test]
    fn width_forty_bins() {
        let corpus = Corpus::from_records(
            vec![
                user("a", Some(10), Gender::Male),
                user("b", Some(35), Gender::Male),
                user("c", Some(70), Gender::Male),
            ],
            vec![],
            vec![],
        )
        .unwrap();
        let bins = AgeBins::uniform(40).unwrap();
        let mut sizes: Vec<_> = group_users(&corpus, Criterion::Age, Some(&bins))
            .iter()
            .map(|g| g.size())
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn bin_labels() {
        let bins = AgeBins::default();
        assert_eq!(bins.label(0), "<20");
        assert_eq!(bins.label(29), "20-30");
        assert_eq!(bins.label(50), ">50");
        assert_eq!(bins.label(130), ">50");
        assert!(AgeBins::new(vec![10, 10]).is_err());
        assert!(AgeBins::uniform(0).is_err());
        assert_eq!(AgeBins::uniform(200).unwrap().label(130), "<131");
    }

    #[test]
    fn missing_attributes_go_to_unknown() {
        let corpus = Corpus::from_records(
            vec![user("a", None, Gender::Unspecified), user("b", Some(33), Gender::Female)],
            vec![],
            vec![],
        )
        .unwrap();
        for criterion in [Criterion::Age, Criterion::Gender] {
            let groups = group_users(&corpus, criterion, None);
            let unknown = groups.iter().find(|g| g.is_unknown()).unwrap();
            assert_eq!(unknown.member_user_ids.iter().collect::<Vec<_>>(), vec!["a"]);
            assert_eq!(groups.iter().map(|g| g.size()).sum::<usize>(), 2);
        }
    }

    #[test]
    fn context_groups_hold_request_pairs() {
        let corpus = Corpus::from_records(
            vec![user("a", Some(30), Gender::Male)],
            vec![cand()],
            vec![
                request("r1", "a", Season::Summer),
                request("r2", "a", Season::Winter),
                request("r3", "a", Season::Summer),
            ],
        )
        .unwrap();
        let groups = group_users(&corpus, Criterion::Season, None);
        assert_eq!(groups.len(), 2);
        let summer = groups.iter().find(|g| g.group_label == "summer").unwrap();
        assert_eq!(summer.size(), 2);
        assert_eq!(summer.member_user_ids.len(), 1);
        assert_eq!(groups.iter().map(|g| g.size()).sum::<usize>(), 3);
    }

    #[test]
    fn validation_errors() {
        let mut bad = user("a", Some(131), Gender::Male);
        assert!(Corpus::from_records(vec![bad.clone()], vec![], vec![]).is_err());
        bad.age = Some(40);
        bad.preferences.push(RatedDocument {
            doc_id: "d".into(),
            text: "x".into(),
            rating: 7,
        });
        let err = Corpus::from_records(vec![bad], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 1, .. }), "{err}");

        let dup = Corpus::from_records(
            vec![user("a", None, Gender::Male), user("a", None, Gender::Male)],
            vec![],
            vec![],
        );
        assert!(matches!(dup, Err(Error::Validation { line: 2, .. })));

        let dangling = Corpus::from_records(vec![], vec![cand()], vec![request("r", "u99", Season::Spring)]);
        match dangling {
            Err(Error::DanglingReference { id, .. }) => assert_eq!(id, "u99"),
            other => panic!("{other:?}"),
        }

        let mut req = request("r", "a", Season::Spring);
        req.candidate_ids = vec!["nope".into()];
        let dangling = Corpus::from_records(vec![user("a", None, Gender::Male)], vec![cand()], vec![req]);
        assert!(matches!(dangling, Err(Error::DanglingReference { kind: "candidate", .. })));
    }

    #[test]
    fn criterion_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.as_str().parse::<Criterion>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("location".parse::<Criterion>().is_err());
    }

    #[test]
    fn file_stems() {
        assert_eq!(file_stem("<20"), "lt20");
        assert_eq!(file_stem(">50"), "gt50");
        assert_eq!(file_stem("night_out"), "night_out");
    }
}
