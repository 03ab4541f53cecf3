//! Synthetic phase-contrast-like corpus generation.
//!
//! Two "seen" morphologies (adherent blobs and raft clusters) populate the
//! training, validation and in-distribution test splits; small spherical
//! cells are held out for the out-of-distribution split. Polygons are
//! rasterized the same way COCO polygon annotations are.

mod coco;
mod corpus;
mod io;
mod raster;
mod render;
mod shapes;

pub use coco::{read_coco_masks, CocoAnnotation, CocoFile, CocoImage};
pub use corpus::{
    corrupt_mask, load_corpus, make_corpus, write_corpus, Corpus, CorpusConfig, Manifest,
    ManifestEntry, Sample, Split, DEFAULT_PROPORTIONS,
};
pub use io::{
    decode_pgm, encode_pgm, read_field_raw, read_mask_pgm, read_pgm, Pgm, write_field_pgm, write_field_raw, write_mask_pgm,
    write_pgm, FIELD_MAGIC,
};
pub use raster::{point_in_polygon, rasterize_polygon};
pub use render::{gaussian_blur, render, RenderParams};
pub use shapes::{compose_mask, gen_shape, radial_irregularity, Morphology, MorphologyKind, Polygon};
