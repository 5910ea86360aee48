#pragma once

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prcnn {

// Global worker count. Every parallel region in the library partitions work so
// that each output element is written by exactly one task with a fixed
// accumulation order, so results are bitwise independent of the thread count.
inline int& thread_count_ref() {
    static int n = 0; // 0 = use hardware default
    return n;
}

inline void set_thread_count(int n) {
    thread_count_ref() = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    int n = thread_count_ref();
    return n > 0 ? n : omp_get_max_threads();
#else
    return 1;
#endif
}

template <class F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& body) {
    if (end <= begin) return;
#ifdef _OPENMP
    if (thread_count() > 1 && end - begin > 1) {
#pragma omp parallel for schedule(dynamic, 1)
        for (std::int64_t i = begin; i < end; ++i) body(i);
        return;
    }
#endif
    for (std::int64_t i = begin; i < end; ++i) body(i);
}

} // namespace prcnn
