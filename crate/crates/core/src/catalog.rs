//! World model: users, items, attributes and their types, interactions and
//! the knowledge-graph triplets used for embedding pretraining.
//!
//! On disk a catalog is a directory of tab-separated files:
//!
//! | file               | columns                                   |
//! |--------------------|-------------------------------------------|
//! | `items.tsv`        | item id, comma-joined attribute ids       |
//! | `attributes.tsv`   | attribute id, type id                     |
//! | `interactions.tsv` | user id, item id                          |
//! | `triplets.tsv`     | head, relation, tail                      |
//! | `types.tsv`        | type id, name (optional side table)       |
//!
//! Triplet heads and tails use one global entity numbering: users first,
//! then items, then attributes (see [`Catalog::user_entity`] and friends).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AttrId, ItemId, TypeId, UserId};

/// Relation id of `user -> item` interaction triplets.
pub const REL_INTERACT: u32 = 0;
/// Relation id of `item -> attribute` triplets.
pub const REL_HAS_ATTRIBUTE: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid catalog:\n{0}")]
    Invalid(ValidationReport),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

/// One broken catalog invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    ConflictingAttributeType { attr: AttrId, types: Vec<TypeId> },
    DuplicateAttribute { attr: AttrId },
    MissingAttributeId { attr: AttrId },
    UnknownType { attr: AttrId, ty: TypeId },
    DuplicateType { ty: TypeId },
    MissingTypeId { ty: TypeId },
    DuplicateItem { item: ItemId },
    MissingItemId { item: ItemId },
    ItemWithoutAttributes { item: ItemId },
    UnknownAttribute { item: ItemId, attr: AttrId },
    UnknownInteractionItem { user: UserId, item: ItemId },
    DanglingTriplet { index: usize, entity: u32 },
}

impl Violation {
    /// Whether the violation is a reference to an entity that does not exist.
    pub fn is_dangling_reference(&self) -> bool {
        matches!(
            self,
            Violation::UnknownType { .. }
                | Violation::UnknownAttribute { .. }
                | Violation::UnknownInteractionItem { .. }
                | Violation::DanglingTriplet { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ConflictingAttributeType { attr, types } => {
                let types: Vec<String> = types.iter().map(|t| t.to_string()).collect();
                write!(f, "attribute {attr} is mapped to several types: {}", types.join(", "))
            }
            Violation::DuplicateAttribute { attr } => write!(f, "attribute {attr} listed twice"),
            Violation::MissingAttributeId { attr } => {
                write!(f, "attribute ids are not dense: {attr} is missing")
            }
            Violation::UnknownType { attr, ty } => {
                write!(f, "dangling reference: attribute {attr} has unknown type {ty}")
            }
            Violation::DuplicateType { ty } => write!(f, "type {ty} listed twice"),
            Violation::MissingTypeId { ty } => write!(f, "type ids are not dense: {ty} is missing"),
            Violation::DuplicateItem { item } => write!(f, "item {item} listed twice"),
            Violation::MissingItemId { item } => {
                write!(f, "item ids are not dense: {item} is missing")
            }
            Violation::ItemWithoutAttributes { item } => {
                write!(f, "item {item} has no attributes")
            }
            Violation::UnknownAttribute { item, attr } => {
                write!(f, "dangling reference: item {item} has unknown attribute {attr}")
            }
            Violation::UnknownInteractionItem { user, item } => {
                write!(f, "dangling reference: user {user} interacts with unknown item {item}")
            }
            Violation::DanglingTriplet { index, entity } => {
                write!(f, "dangling reference: triplet #{index} names unknown entity {entity}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_dangling_reference(&self) -> bool {
        self.violations.iter().any(Violation::is_dangling_reference)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Catalog records exactly as read, before any invariant is enforced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCatalog {
    pub items: Vec<(ItemId, Vec<AttrId>)>,
    pub attributes: Vec<(AttrId, TypeId)>,
    pub interactions: Vec<(UserId, ItemId)>,
    pub triplets: Vec<Triplet>,
    /// Declared types; `None` when no `types.tsv` exists and types are implied.
    pub types: Option<Vec<(TypeId, String)>>,
}

/// Checks every catalog invariant and lists each violation.
pub fn validate(raw: &RawCatalog) -> ValidationReport {
    let mut violations = Vec::new();

    let declared_types: Option<BTreeSet<TypeId>> = raw.types.as_ref().map(|types| {
        let mut seen = BTreeSet::new();
        for (ty, _) in types {
            if !seen.insert(*ty) {
                violations.push(Violation::DuplicateType { ty: *ty });
            }
        }
        if let Some(max) = seen.iter().next_back() {
            for t in 0..=max.0 {
                if !seen.contains(&TypeId(t)) {
                    violations.push(Violation::MissingTypeId { ty: TypeId(t) });
                }
            }
        }
        seen
    });

    let mut attr_types: BTreeMap<AttrId, Vec<TypeId>> = BTreeMap::new();
    for (attr, ty) in &raw.attributes {
        attr_types.entry(*attr).or_default().push(*ty);
    }
    for (attr, types) in &attr_types {
        let distinct: BTreeSet<TypeId> = types.iter().copied().collect();
        if distinct.len() > 1 {
            violations.push(Violation::ConflictingAttributeType {
                attr: *attr,
                types: distinct.into_iter().collect(),
            });
        } else if types.len() > 1 {
            violations.push(Violation::DuplicateAttribute { attr: *attr });
        }
        if let Some(declared) = &declared_types {
            for ty in types.iter().collect::<BTreeSet<_>>() {
                if !declared.contains(ty) {
                    violations.push(Violation::UnknownType { attr: *attr, ty: *ty });
                }
            }
        }
    }
    if let Some((max, _)) = attr_types.iter().next_back() {
        for a in 0..=max.0 {
            if !attr_types.contains_key(&AttrId(a)) {
                violations.push(Violation::MissingAttributeId { attr: AttrId(a) });
            }
        }
    }

    let mut items_seen = BTreeSet::new();
    for (item, attrs) in &raw.items {
        if !items_seen.insert(*item) {
            violations.push(Violation::DuplicateItem { item: *item });
        }
        if attrs.is_empty() {
            violations.push(Violation::ItemWithoutAttributes { item: *item });
        }
        for attr in attrs.iter().collect::<BTreeSet<_>>() {
            if !attr_types.contains_key(attr) {
                violations.push(Violation::UnknownAttribute { item: *item, attr: *attr });
            }
        }
    }
    if let Some(max) = items_seen.iter().next_back() {
        for i in 0..=max.0 {
            if !items_seen.contains(&ItemId(i)) {
                violations.push(Violation::MissingItemId { item: ItemId(i) });
            }
        }
    }

    for (user, item) in &raw.interactions {
        if !items_seen.contains(item) {
            violations.push(Violation::UnknownInteractionItem { user: *user, item: *item });
        }
    }

    let n_users = raw.interactions.iter().map(|(u, _)| u.0 + 1).max().unwrap_or(0) as u64;
    let n_entities = n_users + items_seen.len() as u64 + attr_types.len() as u64;
    for (index, t) in raw.triplets.iter().enumerate() {
        for entity in [t.head, t.tail] {
            if u64::from(entity) >= n_entities {
                violations.push(Violation::DanglingTriplet { index, entity });
            }
        }
    }

    ValidationReport { violations }
}

/// Immutable, validated world model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    n_users: usize,
    n_types: usize,
    type_names: Option<Vec<String>>,
    attr_type: Vec<TypeId>,
    item_attrs: Vec<Vec<AttrId>>,
    interactions: Vec<(UserId, ItemId)>,
    triplets: Vec<Triplet>,
    // derived indexes
    attr_items: Vec<Vec<ItemId>>,
    type_attrs: Vec<Vec<AttrId>>,
}

impl Catalog {
    /// Builds a catalog from raw records, rejecting any invariant violation.
    pub fn from_raw(raw: RawCatalog) -> Result<Self, CatalogError> {
        let report = validate(&raw);
        if !report.is_empty() {
            return Err(CatalogError::Invalid(report));
        }
        let mut attributes = raw.attributes;
        attributes.sort();
        let attr_type: Vec<TypeId> = attributes.iter().map(|(_, t)| *t).collect();

        let mut items = raw.items;
        items.sort_by_key(|(id, _)| *id);
        let item_attrs: Vec<Vec<AttrId>> = items
            .into_iter()
            .map(|(_, attrs)| {
                let set: BTreeSet<AttrId> = attrs.into_iter().collect();
                set.into_iter().collect()
            })
            .collect();

        let (n_types, type_names) = match raw.types {
            Some(mut types) => {
                types.sort();
                (types.len(), Some(types.into_iter().map(|(_, n)| n).collect()))
            }
            None => (attr_type.iter().map(|t| t.idx() + 1).max().unwrap_or(0), None),
        };
        let n_users = raw.interactions.iter().map(|(u, _)| u.idx() + 1).max().unwrap_or(0);

        let mut attr_items = vec![Vec::new(); attr_type.len()];
        for (i, attrs) in item_attrs.iter().enumerate() {
            for a in attrs {
                attr_items[a.idx()].push(ItemId::from(i));
            }
        }
        let mut type_attrs = vec![Vec::new(); n_types];
        for (a, t) in attr_type.iter().enumerate() {
            type_attrs[t.idx()].push(AttrId::from(a));
        }

        Ok(Catalog {
            n_users,
            n_types,
            type_names,
            attr_type,
            item_attrs,
            interactions: raw.interactions,
            triplets: raw.triplets,
            attr_items,
            type_attrs,
        })
    }

    pub fn to_raw(&self) -> RawCatalog {
        RawCatalog {
            items: self
                .item_attrs
                .iter()
                .enumerate()
                .map(|(i, a)| (ItemId::from(i), a.clone()))
                .collect(),
            attributes: self
                .attr_type
                .iter()
                .enumerate()
                .map(|(a, t)| (AttrId::from(a), *t))
                .collect(),
            interactions: self.interactions.clone(),
            triplets: self.triplets.clone(),
            types: self.type_names.as_ref().map(|names| {
                names
                    .iter()
                    .enumerate()
                    .map(|(t, n)| (TypeId::from(t), n.clone()))
                    .collect()
            }),
        }
    }

    /// Re-runs the invariant checks; always empty for a constructed catalog.
    pub fn validate(&self) -> ValidationReport {
        validate(&self.to_raw())
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }
    pub fn n_items(&self) -> usize {
        self.item_attrs.len()
    }
    pub fn n_attributes(&self) -> usize {
        self.attr_type.len()
    }
    pub fn n_types(&self) -> usize {
        self.n_types
    }
    pub fn n_entities(&self) -> usize {
        self.n_users + self.n_items() + self.n_attributes()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> {
        (0..self.n_users).map(UserId::from)
    }
    pub fn items(&self) -> impl Iterator<Item = ItemId> {
        (0..self.n_items()).map(ItemId::from)
    }
    pub fn attributes(&self) -> impl Iterator<Item = AttrId> {
        (0..self.n_attributes()).map(AttrId::from)
    }

    pub fn has_user(&self, u: UserId) -> bool {
        u.idx() < self.n_users
    }
    pub fn has_item(&self, v: ItemId) -> bool {
        v.idx() < self.n_items()
    }
    pub fn has_attribute(&self, p: AttrId) -> bool {
        p.idx() < self.n_attributes()
    }

    /// Sorted attribute list of an item.
    pub fn item_attrs(&self, v: ItemId) -> &[AttrId] {
        &self.item_attrs[v.idx()]
    }
    pub fn item_has_attr(&self, v: ItemId, p: AttrId) -> bool {
        self.item_attrs[v.idx()].binary_search(&p).is_ok()
    }
    /// Items carrying an attribute, ascending.
    pub fn attr_items(&self, p: AttrId) -> &[ItemId] {
        &self.attr_items[p.idx()]
    }
    pub fn attr_type(&self, p: AttrId) -> TypeId {
        self.attr_type[p.idx()]
    }
    pub fn type_attrs(&self, t: TypeId) -> &[AttrId] {
        &self.type_attrs[t.idx()]
    }
    pub fn type_name(&self, t: TypeId) -> Option<&str> {
        self.type_names.as_ref().and_then(|n| n.get(t.idx())).map(String::as_str)
    }
    pub fn interactions(&self) -> &[(UserId, ItemId)] {
        &self.interactions
    }
    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn user_entity(&self, u: UserId) -> u32 {
        u.0
    }
    pub fn item_entity(&self, v: ItemId) -> u32 {
        (self.n_users + v.idx()) as u32
    }
    pub fn attr_entity(&self, p: AttrId) -> u32 {
        (self.n_users + self.n_items() + p.idx()) as u32
    }

    /// Attributes shared by every item in `items`, ascending.
    pub fn common_attrs(&self, items: &[ItemId]) -> Vec<AttrId> {
        let Some((first, rest)) = items.split_first() else {
            return Vec::new();
        };
        self.item_attrs(*first)
            .iter()
            .copied()
            .filter(|p| rest.iter().all(|v| self.item_has_attr(*v, *p)))
            .collect()
    }

    /// Writes the catalog in the directory format read by [`load_catalog`].
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<(), CatalogError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| CatalogError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let write = |name: &str, body: String| -> Result<(), CatalogError> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|source| CatalogError::Io {
                path: path.clone(),
                source,
            })?;
            f.write_all(body.as_bytes())
                .map_err(|source| CatalogError::Io { path, source })
        };

        let mut items = String::new();
        for (i, attrs) in self.item_attrs.iter().enumerate() {
            let joined: Vec<String> = attrs.iter().map(|a| a.to_string()).collect();
            items.push_str(&format!("{i}\t{}\n", joined.join(",")));
        }
        write("items.tsv", items)?;

        let mut attributes = String::new();
        for (a, t) in self.attr_type.iter().enumerate() {
            attributes.push_str(&format!("{a}\t{t}\n"));
        }
        write("attributes.tsv", attributes)?;

        let mut interactions = String::new();
        for (u, v) in &self.interactions {
            interactions.push_str(&format!("{u}\t{v}\n"));
        }
        write("interactions.tsv", interactions)?;

        let mut triplets = String::new();
        for t in &self.triplets {
            triplets.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
        }
        write("triplets.tsv", triplets)?;

        if let Some(names) = &self.type_names {
            let mut types = String::new();
            for (t, n) in names.iter().enumerate() {
                types.push_str(&format!("{t}\t{n}\n"));
            }
            write("types.tsv", types)?;
        }
        Ok(())
    }
}

fn read_lines(dir: &Path, name: &str) -> Result<Option<String>, CatalogError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(CatalogError::Io { path, source }),
    }
}

fn require(dir: &Path, name: &str) -> Result<String, CatalogError> {
    read_lines(dir, name)?.ok_or_else(|| CatalogError::Io {
        path: dir.join(name),
        source: io::Error::new(io::ErrorKind::NotFound, "missing dataset file"),
    })
}

fn parse_id(file: &str, line: usize, field: &str) -> Result<u32, CatalogError> {
    field.trim().parse::<u32>().map_err(|_| CatalogError::Parse {
        file: file.to_string(),
        line,
        message: format!("expected a non-negative integer id, got {field:?}"),
    })
}

fn fields<'a>(
    file: &str,
    line: usize,
    text: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, CatalogError> {
    let cols: Vec<&str> = text.split('\t').collect();
    if cols.len() != expected {
        return Err(CatalogError::Parse {
            file: file.to_string(),
            line,
            message: format!("expected {expected} tab-separated fields, found {}", cols.len()),
        });
    }
    Ok(cols)
}

/// Iterates non-empty lines with 1-based line numbers.
fn records(body: &str) -> impl Iterator<Item = (usize, &str)> {
    body.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a dataset directory without enforcing invariants.
pub fn read_raw(dir: impl AsRef<Path>) -> Result<RawCatalog, CatalogError> {
    let dir = dir.as_ref();
    let mut raw = RawCatalog::default();

    let body = require(dir, "items.tsv")?;
    for (n, line) in records(&body) {
        let cols = fields("items.tsv", n, line, 2)?;
        let item = ItemId(parse_id("items.tsv", n, cols[0])?);
        let attrs = if cols[1].trim().is_empty() {
            Vec::new()
        } else {
            cols[1]
                .split(',')
                .map(|a| parse_id("items.tsv", n, a).map(AttrId))
                .collect::<Result<Vec<_>, _>>()?
        };
        raw.items.push((item, attrs));
    }

    let body = require(dir, "attributes.tsv")?;
    for (n, line) in records(&body) {
        let cols = fields("attributes.tsv", n, line, 2)?;
        raw.attributes.push((
            AttrId(parse_id("attributes.tsv", n, cols[0])?),
            TypeId(parse_id("attributes.tsv", n, cols[1])?),
        ));
    }

    let body = require(dir, "interactions.tsv")?;
    for (n, line) in records(&body) {
        let cols = fields("interactions.tsv", n, line, 2)?;
        raw.interactions.push((
            UserId(parse_id("interactions.tsv", n, cols[0])?),
            ItemId(parse_id("interactions.tsv", n, cols[1])?),
        ));
    }

    let body = require(dir, "triplets.tsv")?;
    for (n, line) in records(&body) {
        let cols = fields("triplets.tsv", n, line, 3)?;
        raw.triplets.push(Triplet {
            head: parse_id("triplets.tsv", n, cols[0])?,
            relation: parse_id("triplets.tsv", n, cols[1])?,
            tail: parse_id("triplets.tsv", n, cols[2])?,
        });
    }

    if let Some(body) = read_lines(dir, "types.tsv")? {
        let mut types = Vec::new();
        for (n, line) in records(&body) {
            let (id, name) = line.split_once('\t').unwrap_or((line, ""));
            types.push((TypeId(parse_id("types.tsv", n, id)?), name.to_string()));
        }
        raw.types = Some(types);
    }
    Ok(raw)
}

/// Loads and validates a dataset directory.
pub fn load_catalog(dir: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    Catalog::from_raw(read_raw(dir)?)
}

/// Parameters of the synthetic world generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_attributes: usize,
    pub n_types: usize,
    /// Inclusive range of attributes per item.
    pub attrs_per_item: (usize, usize),
    /// Inclusive range of interactions per user.
    pub interactions_per_user: (usize, usize),
    pub seed: u64,
    /// Exponent of the Zipf-like attribute popularity used for noise attributes.
    #[serde(default = "default_skew")]
    pub popularity_skew: f64,
    /// Probability that a non-core item attribute comes from the owner's taste set.
    #[serde(default = "default_taste_share")]
    pub taste_share: f64,
}

fn default_skew() -> f64 {
    1.0
}
fn default_taste_share() -> f64 {
    0.6
}

impl SyntheticSpec {
    pub fn new(n_users: usize, n_items: usize, n_attributes: usize, n_types: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_users,
            n_items,
            n_attributes,
            n_types,
            attrs_per_item: (3.min(n_attributes), 6.min(n_attributes)),
            interactions_per_user: (2.min(n_items), 6.min(n_items)),
            seed,
            popularity_skew: default_skew(),
            taste_share: default_taste_share(),
        }
    }

    fn check(&self) -> Result<(), CatalogError> {
        let bad = |m: String| Err(CatalogError::Infeasible(m));
        if self.n_users == 0 || self.n_items == 0 || self.n_attributes == 0 || self.n_types == 0 {
            return bad("all counts must be at least 1".into());
        }
        if self.n_attributes < self.n_types {
            return bad(format!(
                "n_attributes ({}) must be at least n_types ({})",
                self.n_attributes, self.n_types
            ));
        }
        let (lo, hi) = self.attrs_per_item;
        if lo == 0 || lo > hi {
            return bad(format!("attrs_per_item range ({lo}, {hi}) is empty or starts at 0"));
        }
        if hi > self.n_attributes {
            return bad(format!(
                "attrs_per_item upper bound {hi} exceeds n_attributes {}",
                self.n_attributes
            ));
        }
        let (lo, hi) = self.interactions_per_user;
        if lo == 0 || lo > hi {
            return bad(format!("interactions_per_user range ({lo}, {hi}) is empty or starts at 0"));
        }
        if hi > self.n_items {
            return bad(format!(
                "interactions_per_user upper bound {hi} exceeds n_items {}",
                self.n_items
            ));
        }
        if !(0.0..=1.0).contains(&self.taste_share) || !self.popularity_skew.is_finite() {
            return bad("taste_share must lie in [0, 1] and popularity_skew be finite".into());
        }
        Ok(())
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64], exclude: &BTreeSet<AttrId>) -> Option<AttrId> {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(a, _)| !exclude.contains(&AttrId::from(*a)))
        .map(|(_, w)| w)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    let mut last = None;
    for (a, w) in weights.iter().enumerate() {
        let id = AttrId::from(a);
        if exclude.contains(&id) {
            continue;
        }
        last = Some(id);
        if x < *w {
            return Some(id);
        }
        x -= w;
    }
    last
}

/// Generates a seeded synthetic world.
///
/// Each user gets a core attribute and a taste set; items are built around an
/// owner's taste plus popularity-weighted noise and always carry the owner's
/// core attribute. A user only interacts with items carrying their core
/// attribute, so any group of their items has a common attribute.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Catalog, CatalogError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut attr_type: Vec<TypeId> = (0..spec.n_attributes)
        .map(|a| {
            if a < spec.n_types {
                TypeId::from(a)
            } else {
                TypeId::from(rng.gen_range(0..spec.n_types))
            }
        })
        .collect();
    attr_type.shuffle(&mut rng);

    let mut ranks: Vec<usize> = (0..spec.n_attributes).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks
        .iter()
        .map(|r| 1.0 / ((*r + 1) as f64).powf(spec.popularity_skew))
        .collect();

    let taste_size = spec.attrs_per_item.1.max(2).min(spec.n_attributes);
    let mut cores = Vec::with_capacity(spec.n_users);
    let mut tastes = Vec::with_capacity(spec.n_users);
    for _ in 0..spec.n_users {
        let core = weighted_pick(&mut rng, &popularity, &BTreeSet::new()).expect("attributes exist");
        let mut taste = BTreeSet::from([core]);
        while taste.len() < taste_size {
            let a = AttrId::from(rng.gen_range(0..spec.n_attributes));
            taste.insert(a);
        }
        cores.push(core);
        tastes.push(taste.into_iter().collect::<Vec<_>>());
    }

    let mut owners = Vec::with_capacity(spec.n_items);
    let mut item_attrs = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let owner = if i < spec.n_users { i } else { rng.gen_range(0..spec.n_users) };
        owners.push(owner);
        let k = rng.gen_range(spec.attrs_per_item.0..=spec.attrs_per_item.1);
        let mut attrs = BTreeSet::from([cores[owner]]);
        let mut guard = 0;
        while attrs.len() < k && guard < 64 * k {
            guard += 1;
            let pick = if rng.gen_bool(spec.taste_share) {
                tastes[owner].choose(&mut rng).copied()
            } else {
                weighted_pick(&mut rng, &popularity, &attrs)
            };
            if let Some(a) = pick {
                attrs.insert(a);
            }
        }
        while attrs.len() < k {
            if let Some(a) = weighted_pick(&mut rng, &popularity, &attrs) {
                attrs.insert(a);
            }
        }
        item_attrs.push(attrs.into_iter().collect::<Vec<_>>());
    }

    let mut interactions = Vec::new();
    for (u, &core) in cores.iter().enumerate() {
        let mut own: Vec<usize> = (0..spec.n_items).filter(|&i| owners[i] == u).collect();
        let mut others: Vec<usize> = (0..spec.n_items)
            .filter(|&i| owners[i] != u && item_attrs[i].binary_search(&core).is_ok())
            .collect();
        own.shuffle(&mut rng);
        others.shuffle(&mut rng);
        let m = rng.gen_range(spec.interactions_per_user.0..=spec.interactions_per_user.1);
        for i in own.into_iter().chain(others).take(m) {
            interactions.push((UserId::from(u), ItemId::from(i)));
        }
    }

    let mut triplets = Vec::new();
    let n_users = interactions.iter().map(|(u, _)| u.idx() + 1).max().unwrap_or(0);
    for (u, v) in &interactions {
        triplets.push(Triplet {
            head: u.0,
            relation: REL_INTERACT,
            tail: (n_users + v.idx()) as u32,
        });
    }
    for (i, attrs) in item_attrs.iter().enumerate() {
        for a in attrs {
            triplets.push(Triplet {
                head: (n_users + i) as u32,
                relation: REL_HAS_ATTRIBUTE,
                tail: (n_users + spec.n_items + a.idx()) as u32,
            });
        }
    }

    let raw = RawCatalog {
        items: item_attrs
            .into_iter()
            .enumerate()
            .map(|(i, a)| (ItemId::from(i), a))
            .collect(),
        attributes: attr_type
            .into_iter()
            .enumerate()
            .map(|(a, t)| (AttrId::from(a), t))
            .collect(),
        interactions,
        triplets,
        types: Some((0..spec.n_types).map(|t| (TypeId::from(t), format!("type{t}"))).collect()),
    };
    Catalog::from_raw(raw)
}

/// An observed `(user, items)` group from which one conversation is simulated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationPair {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// Groups each user's interactions, in file order, into chunks of
/// `group_size` items that share at least one attribute.
pub fn simulation_pairs(catalog: &Catalog, group_size: usize) -> Vec<SimulationPair> {
    let group_size = group_size.max(1);
    let mut by_user: BTreeMap<UserId, Vec<ItemId>> = BTreeMap::new();
    for (u, v) in catalog.interactions() {
        let items = by_user.entry(*u).or_default();
        if !items.contains(v) {
            items.push(*v);
        }
    }
    let mut pairs = Vec::new();
    for (user, items) in by_user {
        for chunk in items.chunks_exact(group_size) {
            if !catalog.common_attrs(chunk).is_empty() {
                pairs.push(SimulationPair {
                    user,
                    items: chunk.to_vec(),
                });
            }
        }
    }
    pairs
}

/// Train/validation/test partition of simulation pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSplit {
    pub train: Vec<SimulationPair>,
    pub valid: Vec<SimulationPair>,
    pub test: Vec<SimulationPair>,
}

/// Seeded 70/15/15 split.
pub fn split_pairs(mut pairs: Vec<SimulationPair>, seed: u64) -> PairSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let n = pairs.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_valid = (n as f64 * 0.15).round() as usize;
    let test = pairs.split_off((n_train + n_valid).min(n));
    let valid = pairs.split_off(n_train.min(pairs.len()));
    PairSplit {
        train: pairs,
        valid,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_raw() -> RawCatalog {
        RawCatalog {
            items: vec![(ItemId(0), vec![AttrId(0)])],
            attributes: vec![(AttrId(0), TypeId(0))],
            interactions: vec![(UserId(0), ItemId(0))],
            triplets: vec![Triplet {
                head: 0,
                relation: REL_INTERACT,
                tail: 1,
            }],
            types: None,
        }
    }

    #[test]
    fn valid_fixture_has_empty_report() {
        assert!(validate(&tiny_raw()).is_empty());
        let c = Catalog::from_raw(tiny_raw()).unwrap();
        assert_eq!(c.n_items(), 1);
        assert!(c.validate().is_empty());
    }

    #[test]
    fn item_without_attributes_is_named() {
        let mut raw = tiny_raw();
        raw.items.push((ItemId(1), vec![]));
        let report = validate(&raw);
        assert_eq!(
            report.violations,
            vec![Violation::ItemWithoutAttributes { item: ItemId(1) }]
        );
    }

    #[test]
    fn conflicting_attribute_type_is_reported() {
        let mut raw = tiny_raw();
        raw.attributes.push((AttrId(0), TypeId(1)));
        let report = validate(&raw);
        assert!(report.violations.contains(&Violation::ConflictingAttributeType {
            attr: AttrId(0),
            types: vec![TypeId(0), TypeId(1)],
        }));
    }

    #[test]
    fn unknown_type_is_dangling() {
        let mut raw = tiny_raw();
        raw.types = Some(vec![(TypeId(0), "color".into())]);
        raw.attributes[0].1 = TypeId(3);
        let report = validate(&raw);
        assert!(report.has_dangling_reference());
        assert!(matches!(
            Catalog::from_raw(raw),
            Err(CatalogError::Invalid(r)) if r.has_dangling_reference()
        ));
    }

    #[test]
    fn infeasible_synthetic_spec() {
        let mut spec = SyntheticSpec::new(1, 2, 3, 1, 7);
        spec.attrs_per_item = (5, 5);
        assert!(matches!(generate_synthetic(&spec), Err(CatalogError::Infeasible(_))));
        let spec = SyntheticSpec::new(1, 2, 2, 3, 7);
        assert!(matches!(generate_synthetic(&spec), Err(CatalogError::Infeasible(_))));
    }

    #[test]
    fn pairs_share_an_attribute_and_split_is_exhaustive() {
        let spec = SyntheticSpec::new(30, 80, 20, 4, 3);
        let c = generate_synthetic(&spec).unwrap();
        let pairs = simulation_pairs(&c, 2);
        assert!(!pairs.is_empty());
        let split = split_pairs(pairs.clone(), 1);
        assert_eq!(split.train.len() + split.valid.len() + split.test.len(), pairs.len());
    }
}
