pub mod backbone;
pub mod combine;
pub mod gradmap;
pub mod heads;
pub mod itemstats;
pub mod ppm;
