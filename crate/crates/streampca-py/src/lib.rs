//! Python bindings (to be wired to the native module interface).
