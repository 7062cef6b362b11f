//! File formats: checkpoints, meshes, images and text configs.

mod checkpoint;
mod config;
mod image;
mod mesh;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{
    desk_train_config, format_camera, format_correspondences, format_selection, parse_camera, parse_correspondences,
    parse_key_values, parse_selection, RunConfig,
};
pub use image::{decode_png, decode_ppm, encode_png, encode_ppm, read_image, write_image};
pub use mesh::{format_obj, format_ply, parse_obj, parse_ply, read_mesh, write_mesh};
