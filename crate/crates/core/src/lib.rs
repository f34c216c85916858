pub mod energysolver;
pub mod extend;
pub mod hilbert;
pub mod io;
pub mod linalg;
pub mod pdcore;
pub mod surgery;
pub mod transport;
pub mod words;
