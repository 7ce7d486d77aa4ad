#include "edgereg/threads.hpp"

#include "edgereg/errors.hpp"

extern "C" {
void openblas_set_num_threads(int);
int openblas_get_num_threads(void);
}

namespace edgereg {

static int g_threads = 1;

void set_num_threads(int n) {
    require(n >= 1, "thread count must be >= 1");
    g_threads = n;
    openblas_set_num_threads(n);
}

int get_num_threads() { return g_threads; }

} // namespace edgereg
