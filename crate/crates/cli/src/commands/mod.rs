pub mod identity;
pub mod keygen;
pub mod sim;
pub mod vc;
pub mod wallet;
