pub mod error;
pub mod fuzzy;
pub mod grounding;
pub mod jsonio;
pub mod model;
pub mod ontology;
pub mod scenegraph;
