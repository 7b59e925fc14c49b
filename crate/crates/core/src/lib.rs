pub mod archive;
pub mod detect;
pub mod lexicon;
pub mod order;
pub mod preproc;
pub mod recognizer;
pub mod project;
pub mod service;
pub mod cli;
