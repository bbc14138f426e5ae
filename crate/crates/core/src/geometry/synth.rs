//! Procedural part-labelled shape families.
//!
//! Every part is a labelled cuboid. Subcategories of a family share the same
//! part structure and differ only in the ranges their generator parameters
//! are drawn from; those ranges are disjoint in at least one parameter.
//!
//! Part labels encode a part category and an instance within it as
//! `category * PART_SLOTS + instance`, so the four legs of a chair are four
//! labels sharing one category.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::mesh::{cuboid, Mesh};
use super::off::quantize_coord;

/// Label slots reserved per part category.
pub const PART_SLOTS: u32 = 8;

pub fn part_label(category: u32, instance: u32) -> u32 {
    assert!(instance < PART_SLOTS);
    category * PART_SLOTS + instance
}

pub fn part_category(label: u32) -> u32 {
    label / PART_SLOTS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Chair,
    Table,
    Plane,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [FamilyKind::Chair, FamilyKind::Table, FamilyKind::Plane];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Chair => "chair",
            FamilyKind::Table => "table",
            FamilyKind::Plane => "plane",
        }
    }

    fn id(self) -> u64 {
        match self {
            FamilyKind::Chair => 1,
            FamilyKind::Table => 2,
            FamilyKind::Plane => 3,
        }
    }

    /// Number of parts, each with its own label.
    pub fn part_count(self) -> usize {
        match self {
            FamilyKind::Chair => 6,
            FamilyKind::Table => 5,
            FamilyKind::Plane => 4,
        }
    }

    pub fn subcategories(self) -> Vec<ShapeFamily> {
        (0..3).map(|i| ShapeFamily::new(self, i).expect("three regimes")).collect()
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape family `{s}` (expected chair, table or plane)")))
    }
}

/// Closed interval a generator parameter is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const fn r(name: &'static str, lo: f64, hi: f64) -> Range {
    Range { name, lo, hi }
}

/// One subcategory of a family: a named regime of parameter ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeFamily {
    pub kind: FamilyKind,
    pub subcategory: usize,
    pub name: &'static str,
    pub ranges: Vec<Range>,
}

impl ShapeFamily {
    pub fn new(kind: FamilyKind, subcategory: usize) -> Result<Self> {
        let (name, ranges) = match (kind, subcategory) {
            (FamilyKind::Chair, 0) => ("chair_highback", chair(r("back_h", 0.95, 1.20), r("leg_h", 0.45, 0.60))),
            (FamilyKind::Chair, 1) => ("chair_lowback", chair(r("back_h", 0.30, 0.45), r("leg_h", 0.45, 0.60))),
            (FamilyKind::Chair, 2) => ("chair_barstool", chair(r("back_h", 0.30, 0.45), r("leg_h", 0.95, 1.20))),
            (FamilyKind::Table, 0) => ("table_dining", table(r("leg_h", 0.75, 0.95), r("top_t", 0.08, 0.12))),
            (FamilyKind::Table, 1) => ("table_coffee", table(r("leg_h", 0.25, 0.40), r("top_t", 0.08, 0.12))),
            (FamilyKind::Table, 2) => ("table_slab", table(r("leg_h", 0.75, 0.95), r("top_t", 0.30, 0.40))),
            (FamilyKind::Plane, 0) => ("plane_airliner", plane(r("span", 2.2, 2.6), r("chord", 0.25, 0.35))),
            (FamilyKind::Plane, 1) => ("plane_fighter", plane(r("span", 1.0, 1.3), r("chord", 0.60, 0.80))),
            (FamilyKind::Plane, 2) => ("plane_glider", plane(r("span", 2.2, 2.6), r("chord", 0.60, 0.80))),
            _ => {
                return Err(Error::Config(format!(
                    "family {kind} has no subcategory {subcategory}"
                )))
            }
        };
        Ok(ShapeFamily {
            kind,
            subcategory,
            name,
            ranges,
        })
    }

    pub fn range(&self, name: &str) -> Option<&Range> {
        self.ranges.iter().find(|r| r.name == name)
    }

    /// Whether two regimes are separated along some parameter.
    pub fn disjoint_from(&self, other: &ShapeFamily) -> bool {
        self.ranges.iter().any(|a| {
            other
                .range(a.name)
                .is_some_and(|b| a.hi < b.lo || b.hi < a.lo)
        })
    }

    fn rng(&self, seed: u64) -> ChaCha8Rng {
        let salt = (self.kind.id() << 56) ^ ((self.subcategory as u64) << 48);
        ChaCha8Rng::seed_from_u64(seed ^ salt)
    }

    /// Draws one value per parameter, in declaration order.
    pub fn sample_params(&self, seed: u64) -> Vec<(&'static str, f64)> {
        let mut rng = self.rng(seed);
        self.ranges
            .iter()
            .map(|r| (r.name, rng.gen_range(r.lo..=r.hi)))
            .collect()
    }
}

fn chair(back_h: Range, leg_h: Range) -> Vec<Range> {
    vec![
        r("seat_w", 0.85, 1.00),
        r("seat_d", 0.85, 1.00),
        r("seat_t", 0.14, 0.18),
        leg_h,
        r("leg_t", 0.16, 0.20),
        back_h,
        r("back_t", 0.14, 0.18),
    ]
}

fn table(leg_h: Range, top_t: Range) -> Vec<Range> {
    vec![
        r("top_w", 1.40, 1.60),
        r("top_d", 0.90, 1.05),
        top_t,
        leg_h,
        r("leg_t", 0.16, 0.20),
    ]
}

fn plane(span: Range, chord: Range) -> Vec<Range> {
    vec![
        r("body_l", 2.0, 2.3),
        r("body_r", 0.28, 0.34),
        span,
        chord,
        r("wing_t", 0.08, 0.10),
        r("tail_h", 0.45, 0.55),
    ]
}

/// Deterministic mesh for `(family, seed)`.
pub fn generate_shape(family: &ShapeFamily, seed: u64) -> Mesh {
    let params = family.sample_params(seed);
    let p = |name: &str| {
        params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .expect("declared parameter")
    };
    let parts = match family.kind {
        FamilyKind::Chair => {
            let (w, d, t, lh, lt, bh, bt) = (p("seat_w"), p("seat_d"), p("seat_t"), p("leg_h"), p("leg_t"), p("back_h"), p("back_t"));
            let seat_y = lh + t / 2.0;
            let mut parts = vec![
                cuboid([0.0, seat_y, 0.0], [w, t, d], part_label(0, 0)),
                cuboid([0.0, lh + t + bh / 2.0, -d / 2.0 + bt / 2.0], [w, bh, bt], part_label(1, 0)),
            ];
            parts.extend(legs(w, d, lh, lt, 2));
            parts
        }
        FamilyKind::Table => {
            let (w, d, t, lh, lt) = (p("top_w"), p("top_d"), p("top_t"), p("leg_h"), p("leg_t"));
            let mut parts = vec![cuboid([0.0, lh + t / 2.0, 0.0], [w, t, d], part_label(0, 0))];
            parts.extend(legs(w, d, lh, lt, 1));
            parts
        }
        FamilyKind::Plane => {
            let (bl, br, span, chord, wt, th) = (p("body_l"), p("body_r"), p("span"), p("chord"), p("wing_t"), p("tail_h"));
            let wing_w = (span - br) / 2.0;
            let wing_x = br / 2.0 + wing_w / 2.0;
            vec![
                cuboid([0.0, 0.0, 0.0], [br, br, bl], part_label(0, 0)),
                cuboid([-wing_x, 0.0, 0.1 * bl], [wing_w, wt, chord], part_label(1, 0)),
                cuboid([wing_x, 0.0, 0.1 * bl], [wing_w, wt, chord], part_label(1, 1)),
                cuboid([0.0, br / 2.0 + th / 2.0, -bl / 2.0 + 0.15], [wt, th, 0.3], part_label(2, 0)),
            ]
        }
    };
    let mut mesh = parts[0].clone();
    for part in &parts[1..] {
        mesh.append(part);
    }
    for v in &mut mesh.vertices {
        for a in v.iter_mut() {
            *a = quantize_coord(*a);
        }
    }
    mesh
}

fn legs(w: f64, d: f64, h: f64, t: f64, category: u32) -> Vec<Mesh> {
    let (x, z) = (w / 2.0 - t / 2.0, d / 2.0 - t / 2.0);
    [(-x, -z), (x, -z), (-x, z), (x, z)]
        .into_iter()
        .enumerate()
        .map(|(i, (cx, cz))| cuboid([cx, h / 2.0, cz], [t, h, t], part_label(category, i as u32)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::normalize_mesh;

    #[test]
    fn same_seed_same_mesh() {
        for kind in FamilyKind::ALL {
            for fam in kind.subcategories() {
                assert_eq!(generate_shape(&fam, 42).vertices, generate_shape(&fam, 42).vertices);
                assert_ne!(generate_shape(&fam, 42).vertices, generate_shape(&fam, 43).vertices);
            }
        }
    }

    #[test]
    fn chair_has_six_labels() {
        let m = generate_shape(&ShapeFamily::new(FamilyKind::Chair, 1).unwrap(), 7);
        assert_eq!(m.labels().len(), 6);
        let cats: Vec<u32> = m.labels().iter().map(|&l| part_category(l)).collect();
        assert_eq!(cats, vec![0, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn every_part_contributes_faces() {
        for kind in FamilyKind::ALL {
            for fam in kind.subcategories() {
                let m = generate_shape(&fam, 3);
                assert_eq!(m.labels().len(), kind.part_count());
                assert!(normalize_mesh(&m).is_ok());
            }
        }
    }

    #[test]
    fn sampled_params_stay_inside_disjoint_regimes() {
        for kind in FamilyKind::ALL {
            let subs = kind.subcategories();
            for (i, a) in subs.iter().enumerate() {
                for b in &subs[i + 1..] {
                    assert!(a.disjoint_from(b), "{} overlaps {}", a.name, b.name);
                }
            }
            // 60 shapes across the 3 subcategories
            for fam in &subs {
                for seed in 0..20u64 {
                    for ((name, v), range) in fam.sample_params(seed * 7919).iter().zip(&fam.ranges) {
                        assert_eq!(*name, range.name);
                        assert!(range.lo <= *v && *v <= range.hi, "{name}={v} outside {range:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_family_is_config_error() {
        assert!(matches!("sofa".parse::<FamilyKind>(), Err(Error::Config(_))));
        assert!(matches!(ShapeFamily::new(FamilyKind::Chair, 3), Err(Error::Config(_))));
    }
}
