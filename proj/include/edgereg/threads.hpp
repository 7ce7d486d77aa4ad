#pragma once

namespace edgereg {

// Sets the number of threads used by the BLAS backend. Everything else in the
// library is deliberately serial so results are reproducible.
void set_num_threads(int n);
int get_num_threads();

} // namespace edgereg
