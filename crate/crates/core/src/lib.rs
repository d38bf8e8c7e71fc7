pub mod cryptowire;
pub mod devices;
pub mod enclave;
pub mod page;
pub mod script;
pub mod sim;
