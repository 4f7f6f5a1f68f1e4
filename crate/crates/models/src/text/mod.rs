pub mod encoder;
pub mod tokenize;
pub mod vocab;
