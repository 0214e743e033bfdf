//! Degenerating wave packets and norm growth for the linearized electron-MHD
//! and Hall-MHD equations in the (2+1/2)-dimensional reduction.
//!
//! Modules:
//! - `spectral`: periodic grids, FFT transforms, multipliers and norms;
//! - `background`: degenerate stationary fields B = f(y) d_x or f(r) d_theta
//!   and the eta-coordinate tables;
//! - `rays`: Hamiltonian bicharacteristics of p(x, xi) = (B . xi)|xi|;
//! - `wavepacket`: degenerating wave packets, residuals and norm scans;
//! - `solver`: pseudo-spectral time integration with energy diagnostics;
//! - `experiments`: configuration, experiment drivers and reports.

pub mod background;
pub mod experiments;
pub mod rays;
pub mod solver;
pub mod spectral;
pub mod wavepacket;
