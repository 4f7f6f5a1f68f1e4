pub mod attention;
pub mod classifier;
pub mod ingest;
pub mod mel;
pub mod patchify;
pub mod wav;
