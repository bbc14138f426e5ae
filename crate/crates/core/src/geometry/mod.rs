//! Triangle meshes, OFF I/O, procedural shape families and datasets.

pub mod dataset;
mod mesh;
pub mod off;
pub mod synth;

pub use dataset::{generate_dataset, Dataset, ShapeEntry, Split};
pub use mesh::{cuboid, normalize_mesh, Mesh, Point3};
pub use off::{load_off, write_off};
pub use synth::{generate_shape, part_category, part_label, FamilyKind, ShapeFamily, PART_SLOTS};
