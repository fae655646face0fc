//! Isosurface extraction, vertex coloring, export and turntable rendering.

mod export;
mod grid;
mod mc;

pub use export::{
    color_and_export, color_mesh, extract_mesh, extraction_box, render_turntable, sample_grid, Turntable,
};
pub use grid::VoxelGrid;
pub use mc::marching_cubes;
