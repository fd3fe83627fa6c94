pub mod alloc;
pub mod dataset;
pub mod entity;
pub mod harness;
pub mod lang;
pub mod oracle;
pub mod scene;
pub mod sim;
pub mod taskgen;
pub mod world;
