pub use quadnet_core as core;
